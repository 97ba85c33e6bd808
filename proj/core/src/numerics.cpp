#include "dvc/numerics.hpp"

#include <cmath>
#include <stdexcept>

namespace dvc {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vector softmax(const Vector& logits) {
  if (logits.size() == 0) {
    throw std::invalid_argument("softmax: empty logit vector");
  }
  const double mx = logits.maxCoeff();
  Vector e = (logits.array() - mx).exp();
  return e / e.sum();
}

Matrix softmax_cols(const Matrix& logits) {
  if (logits.rows() == 0 || logits.cols() == 0) {
    throw std::invalid_argument("softmax_cols: empty logits");
  }
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    out.col(c) = softmax(logits.col(c));
  }
  return out;
}

double cross_entropy(const Vector& probs, int label) {
  if (label < 0 || label >= probs.size()) {
    throw std::out_of_range("cross_entropy: label out of range");
  }
  const double p = std::max(probs[label], 1e-12);
  return -std::log(p);
}

double Rng::uniform(double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  return d(engine_);
}

double Rng::normal(double mean, double sd) {
  std::normal_distribution<double> d(mean, sd);
  return d(engine_);
}

int Rng::uniform_int(int lo, int hi) {
  std::uniform_int_distribution<int> d(lo, hi);
  return d(engine_);
}

namespace {
std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace

std::uint64_t Rng::derive(std::uint64_t seed, std::uint64_t a,
                          std::uint64_t b) {
  return splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b);
}

void AdamState::step(const std::vector<ParamRef>& params,
                     const std::vector<ParamRef>& grads,
                     const AdamConfig& cfg) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
  }
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = Eigen::ArrayXd::Zero(params[i].size);
      v_[i] = Eigen::ArrayXd::Zero(params[i].size);
    }
  }
  if (m_.size() != params.size()) {
    throw std::invalid_argument("adam_step: parameter list changed shape");
  }
  ++step_count_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(step_count_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(step_count_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size != grads[i].size || params[i].size != m_[i].size()) {
      throw std::invalid_argument("adam_step: shape mismatch");
    }
    Eigen::Map<Eigen::ArrayXd> p(params[i].data, params[i].size);
    Eigen::Map<const Eigen::ArrayXd> g(grads[i].data, grads[i].size);
    m_[i] = cfg.beta1 * m_[i] + (1.0 - cfg.beta1) * g;
    v_[i] = cfg.beta2 * v_[i] + (1.0 - cfg.beta2) * g.square();
    p -= cfg.lr * (m_[i] / bc1) / ((v_[i] / bc2).sqrt() + cfg.eps);
  }
}

std::vector<double> finite_diff_grad(const std::function<double()>& f,
                                     const std::vector<ParamRef>& params,
                                     double h) {
  if (h <= 0) {
    throw std::invalid_argument("finite_diff_grad: h must be positive");
  }
  std::vector<double> grad;
  for (const ParamRef& p : params) {
    for (Eigen::Index j = 0; j < p.size; ++j) {
      const double orig = p.data[j];
      p.data[j] = orig + h;
      const double fp = f();
      p.data[j] = orig - h;
      const double fm = f();
      p.data[j] = orig;
      grad.push_back((fp - fm) / (2.0 * h));
    }
  }
  return grad;
}

}  // namespace dvc
