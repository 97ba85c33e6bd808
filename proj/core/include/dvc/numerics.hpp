#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace dvc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

double sigmoid(double x);

/// Numerically stable softmax (max-subtraction). Throws on an empty input.
Vector softmax(const Vector& logits);

/// Column-wise softmax for a batch of logit vectors.
Matrix softmax_cols(const Matrix& logits);

/// -ln(probs[label]) with probs clamped below at 1e-12. Throws if label is
/// out of range.
double cross_entropy(const Vector& probs, int label);

/// Deterministic seeded RNG. Identical seed + identical call sequence gives
/// an identical stream. All randomness in the library flows through this.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi);
  double normal(double mean, double sd);
  /// Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi);

  template <typename It>
  void shuffle(It first, It last) {
    std::shuffle(first, last, engine_);
  }

  std::mt19937_64& engine() { return engine_; }

  /// Stream-splitting hash: derive an independent seed from (seed, a, b).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t a,
                              std::uint64_t b);

 private:
  std::mt19937_64 engine_;
};

/// View of one flat parameter buffer; used for optimizer updates and
/// finite-difference perturbation.
struct ParamRef {
  double* data = nullptr;
  Eigen::Index size = 0;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment accumulators for a fixed list of parameter buffers.
class AdamState {
 public:
  /// Bias-corrected Adam update applied in place. The shapes of params and
  /// grads must agree with each other (and with previous calls). Throws on
  /// mismatch.
  void step(const std::vector<ParamRef>& params,
            const std::vector<ParamRef>& grads, const AdamConfig& cfg);

  std::int64_t step_count() const { return step_count_; }

 private:
  std::vector<Eigen::ArrayXd> m_;
  std::vector<Eigen::ArrayXd> v_;
  std::int64_t step_count_ = 0;
};

/// Central-difference gradient estimate of f with respect to the given
/// parameter buffers. Perturbs in place and restores.
std::vector<double> finite_diff_grad(const std::function<double()>& f,
                                     const std::vector<ParamRef>& params,
                                     double h);

}  // namespace dvc
