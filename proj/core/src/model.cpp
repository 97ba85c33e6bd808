#include "dvc/model.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dvc {

namespace {

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& j) {
  const Eigen::Index r = Eigen::Index(j.size());
  if (r == 0) return Matrix(0, 0);
  const Eigen::Index c = Eigen::Index(j.at(0).size());
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index k = 0; k < c; ++k) {
      m(i, k) = j.at(std::size_t(i)).at(std::size_t(k)).get<double>();
    }
  }
  return m;
}

nlohmann::json vector_to_json(const Vector& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Vector vector_from_json(const nlohmann::json& j) {
  Vector v(Eigen::Index(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    v[i] = j.at(std::size_t(i)).get<double>();
  }
  return v;
}

void fill_uniform(Eigen::Ref<Matrix> m, double s, Rng& rng) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      m(i, j) = rng.uniform(-s, s);
    }
  }
}

Matrix sigmoid_mat(const Matrix& z) {
  return (1.0 / (1.0 + (-z.array()).exp())).matrix();
}

// tanh(x) = 1 - 2 / (e^{2x} + 1); exp vectorizes for doubles where tanh
// does not, and this form is exact at both saturation ends.
Eigen::ArrayXXd tanh_arr(const Eigen::ArrayXXd& x) {
  return 1.0 - 2.0 / ((2.0 * x).exp() + 1.0);
}

Matrix dropout_mask(int q, Eigen::Index B, double rate, Rng& rng) {
  Matrix m(q, B);
  const double keep = 1.0 - rate;
  for (Eigen::Index j = 0; j < B; ++j) {
    for (int i = 0; i < q; ++i) {
      m(i, j) = rng.uniform(0.0, 1.0) < rate ? 0.0 : 1.0 / keep;
    }
  }
  return m;
}

}  // namespace

CellParams CellParams::zeros(int q, int p_t) {
  CellParams c;
  c.W = Matrix::Zero(4 * q, q);
  c.U = Matrix::Zero(4 * q, p_t);
  c.b = Vector::Zero(4 * q);
  return c;
}

std::vector<ParamRef> param_refs(ModelParams& params) {
  std::vector<ParamRef> refs;
  for (CellParams& c : params.cells) {
    refs.push_back({c.W.data(), c.W.size()});
    refs.push_back({c.U.data(), c.U.size()});
    refs.push_back({c.b.data(), c.b.size()});
  }
  refs.push_back({params.head.W.data(), params.head.W.size()});
  refs.push_back({params.head.b.data(), params.head.b.size()});
  return refs;
}

std::vector<int> DvcModel::used_features() const {
  std::vector<int> out;
  for (const auto& feats : block_features) {
    out.insert(out.end(), feats.begin(), feats.end());
  }
  return out;
}

int state_size(const BlockPartition& partition) {
  return std::min(20, partition.min_block_size());
}

DvcModel init_model(const std::vector<int>& chain_prefix,
                    const BlockPartition& partition, int K, Rng& rng) {
  if (chain_prefix.empty()) {
    throw std::invalid_argument("init_model: empty chain prefix");
  }
  if (K < 2) throw std::invalid_argument("init_model: K must be >= 2");

  DvcModel model;
  model.K = K;
  model.q = state_size(partition);
  const int q = model.q;
  for (int id : chain_prefix) {
    if (id < 0 || id >= partition.V()) {
      throw std::invalid_argument("init_model: block id out of range");
    }
    const VariableBlock& block = partition.blocks[std::size_t(id)];
    model.block_ids.push_back(id);
    model.block_features.push_back(block.feature_indices);

    CellParams cell = CellParams::zeros(q, block.size());
    const double sw = std::sqrt(6.0 / double(q + q));
    const double su = std::sqrt(6.0 / double(q + block.size()));
    for (int g = 0; g < 4; ++g) {
      fill_uniform(cell.W.middleRows(g * q, q), sw, rng);
    }
    for (int g = 0; g < 4; ++g) {
      fill_uniform(cell.U.middleRows(g * q, q), su, rng);
    }
    cell.b.segment(q, q).setOnes();  // forget gate opens at init
    model.params.cells.push_back(std::move(cell));
  }

  model.params.head.W = Matrix::Zero(K, q);
  const double sh = std::sqrt(6.0 / double(K + q));
  fill_uniform(model.params.head.W, sh, rng);
  model.params.head.b = Vector::Zero(K);
  return model;
}

CellCache cell_forward(const CellParams& cell, const Vector& x_t,
                       const Vector& h_prev, const Vector& c_prev) {
  const int q = cell.q();
  if (x_t.size() != cell.input_dim() || h_prev.size() != q ||
      c_prev.size() != q) {
    throw std::invalid_argument("cell_forward: shape mismatch");
  }
  Vector z = cell.W * h_prev + cell.U * x_t + cell.b;
  CellCache cache;
  cache.i = (1.0 / (1.0 + (-z.segment(0, q).array()).exp())).matrix();
  cache.f = (1.0 / (1.0 + (-z.segment(q, q).array()).exp())).matrix();
  cache.o = (1.0 / (1.0 + (-z.segment(2 * q, q).array()).exp())).matrix();
  cache.a = z.segment(3 * q, q).array().tanh().matrix();
  cache.c = (c_prev.array() * cache.f.array() +
             cache.i.array() * cache.a.array()).matrix();
  cache.h = (cache.o.array() * cache.c.array().tanh()).matrix();
  return cache;
}

ForwardTrace forward_batch(const DvcModel& model, const Matrix& rows,
                           const DropoutConfig& dropout, Rng* dropout_rng) {
  const Eigen::Index B = rows.rows();
  const int q = model.q;
  const int L = model.chain_length();
  if (B == 0) throw std::invalid_argument("forward: empty batch");
  const bool use_dropout = dropout.rate > 0.0 && dropout_rng != nullptr;
  if (dropout.rate < 0.0 || dropout.rate >= 1.0) {
    if (dropout.rate != 0.0) {
      throw std::invalid_argument("forward: dropout rate must be in [0, 1)");
    }
  }

  ForwardTrace tr;
  tr.X.resize(std::size_t(L));
  tr.I.resize(std::size_t(L));
  tr.F.resize(std::size_t(L));
  tr.O.resize(std::size_t(L));
  tr.A.resize(std::size_t(L));
  tr.C.resize(std::size_t(L));
  tr.H.resize(std::size_t(L));
  if (use_dropout) {
    tr.mask_i.resize(std::size_t(L));
    tr.mask_o.resize(std::size_t(L));
  }

  Matrix h = Matrix::Zero(q, B);
  Matrix c = Matrix::Zero(q, B);
  for (int t = 0; t < L; ++t) {
    const CellParams& cell = model.params.cells[std::size_t(t)];
    const auto& feats = model.block_features[std::size_t(t)];
    Matrix x(Eigen::Index(feats.size()), B);
    for (std::size_t j = 0; j < feats.size(); ++j) {
      if (feats[j] < 0 || feats[j] >= rows.cols()) {
        throw std::out_of_range("forward: feature index out of range");
      }
      x.row(Eigen::Index(j)) = rows.col(feats[j]).transpose();
    }

    Matrix z(4 * q, B);
    z.noalias() = cell.W * h;
    z.noalias() += cell.U * x;
    z.colwise() += cell.b;
    Matrix I = sigmoid_mat(z.middleRows(0, q));
    Matrix F = sigmoid_mat(z.middleRows(q, q));
    Matrix O = sigmoid_mat(z.middleRows(2 * q, q));
    Matrix A = tanh_arr(z.middleRows(3 * q, q).array()).matrix();

    if (use_dropout) {
      tr.mask_i[std::size_t(t)] = dropout_mask(q, B, dropout.rate, *dropout_rng);
      tr.mask_o[std::size_t(t)] = dropout_mask(q, B, dropout.rate, *dropout_rng);
      c = c.cwiseProduct(F) +
          I.cwiseProduct(tr.mask_i[std::size_t(t)]).cwiseProduct(A);
      h = O.cwiseProduct(tr.mask_o[std::size_t(t)])
              .cwiseProduct(tanh_arr(c.array()).matrix());
    } else {
      c = c.cwiseProduct(F) + I.cwiseProduct(A);
      h = O.cwiseProduct(tanh_arr(c.array()).matrix());
    }

    tr.X[std::size_t(t)] = std::move(x);
    tr.I[std::size_t(t)] = std::move(I);
    tr.F[std::size_t(t)] = std::move(F);
    tr.O[std::size_t(t)] = std::move(O);
    tr.A[std::size_t(t)] = std::move(A);
    tr.C[std::size_t(t)] = c;
    tr.H[std::size_t(t)] = h;
  }

  Matrix logits = model.params.head.W * h;
  logits.colwise() += model.params.head.b;
  tr.posteriors = softmax_cols(logits);
  return tr;
}

Vector forward(const DvcModel& model, const Vector& x) {
  ForwardTrace tr = forward_batch(model, x.transpose());
  return tr.posteriors.col(0);
}

int predict_class(const Vector& posteriors) {
  int best = 0;
  for (int k = 1; k < posteriors.size(); ++k) {
    if (posteriors[k] > posteriors[best]) best = k;
  }
  return best;
}

BackwardResult backward(const DvcModel& model, const Matrix& rows,
                        const std::vector<int>& labels, double l2,
                        const DropoutConfig& dropout, Rng* dropout_rng) {
  const Eigen::Index B = rows.rows();
  if (B == 0 || Eigen::Index(labels.size()) != B) {
    throw std::invalid_argument("backward: batch/label size mismatch");
  }
  const int q = model.q;
  const int L = model.chain_length();
  ForwardTrace tr = forward_batch(model, rows, dropout, dropout_rng);
  const bool masked = !tr.mask_i.empty();

  BackwardResult res;
  res.grads.head.W = Matrix::Zero(model.K, q);
  res.grads.head.b = Vector::Zero(model.K);
  res.grads.cells.reserve(std::size_t(L));
  for (int t = 0; t < L; ++t) {
    res.grads.cells.push_back(
        CellParams::zeros(q, model.params.cells[std::size_t(t)].input_dim()));
  }

  double ce = 0.0;
  Matrix dlogits = tr.posteriors;
  for (Eigen::Index j = 0; j < B; ++j) {
    const int y = labels[std::size_t(j)];
    if (y < 0 || y >= model.K) {
      throw std::invalid_argument("backward: label out of range");
    }
    ce += -std::log(std::max(tr.posteriors(y, j), 1e-12));
    dlogits(y, j) -= 1.0;
  }
  dlogits /= double(B);

  const Matrix& h_last = tr.H[std::size_t(L - 1)];
  res.grads.head.W.noalias() = dlogits * h_last.transpose();
  if (l2 > 0) res.grads.head.W += l2 * model.params.head.W;
  res.grads.head.b = dlogits.rowwise().sum();

  Matrix dh = model.params.head.W.transpose() * dlogits;
  Matrix dc = Matrix::Zero(q, B);
  Matrix dz(0, 0);
  for (int t = L - 1; t >= 0; --t) {
    const std::size_t ut = std::size_t(t);
    const CellParams& cell = model.params.cells[ut];
    const Matrix& I = tr.I[ut];
    const Matrix& F = tr.F[ut];
    const Matrix& O = tr.O[ut];
    const Matrix& A = tr.A[ut];
    const Eigen::ArrayXXd T = tanh_arr(tr.C[ut].array());

    dz.resize(4 * q, B);
    if (masked) {
      const auto i_use = I.array() * tr.mask_i[ut].array();
      const auto o_use = O.array() * tr.mask_o[ut].array();
      dc.array() += dh.array() * o_use * (1.0 - T.square());
      dz.middleRows(3 * q, q) =
          (dc.array() * i_use * (1.0 - A.array().square())).matrix();
      dz.middleRows(0, q) = (dc.array() * A.array() * tr.mask_i[ut].array() *
                             I.array() * (1.0 - I.array()))
                                .matrix();
      dz.middleRows(2 * q, q) = (dh.array() * T * tr.mask_o[ut].array() *
                                 O.array() * (1.0 - O.array()))
                                    .matrix();
    } else {
      dc.array() += dh.array() * O.array() * (1.0 - T.square());
      dz.middleRows(3 * q, q) =
          (dc.array() * I.array() * (1.0 - A.array().square())).matrix();
      dz.middleRows(0, q) =
          (dc.array() * A.array() * I.array() * (1.0 - I.array())).matrix();
      dz.middleRows(2 * q, q) =
          (dh.array() * T * O.array() * (1.0 - O.array())).matrix();
    }
    if (t > 0) {
      dz.middleRows(q, q) = (dc.array() * tr.C[ut - 1].array() * F.array() *
                             (1.0 - F.array()))
                                .matrix();
    } else {
      dz.middleRows(q, q).setZero();  // c_prev = 0 at the first cell
    }

    CellParams& g = res.grads.cells[ut];
    if (t > 0) {
      g.W.noalias() = dz * tr.H[ut - 1].transpose();
    } else {
      g.W.setZero();  // h_prev = 0 at the first cell
    }
    g.U.noalias() = dz * tr.X[ut].transpose();
    if (l2 > 0) {
      g.W += l2 * cell.W;
      g.U += l2 * cell.U;
    }
    g.b = dz.rowwise().sum();

    dh.noalias() = cell.W.transpose() * dz;
    dc.array() *= F.array();
  }

  double penalty = model.params.head.W.squaredNorm();
  for (const CellParams& cell : model.params.cells) {
    penalty += cell.W.squaredNorm() + cell.U.squaredNorm();
  }
  res.loss = ce / double(B) + 0.5 * l2 * penalty;
  return res;
}

std::string DvcModel::to_json() const {
  nlohmann::json j;
  j["format"] = "dvc-model";
  j["version"] = 1;
  j["q"] = q;
  j["K"] = K;
  j["block_ids"] = block_ids;
  nlohmann::json cells = nlohmann::json::array();
  for (std::size_t t = 0; t < params.cells.size(); ++t) {
    const CellParams& c = params.cells[t];
    nlohmann::json jc;
    jc["block_id"] = block_ids[t];
    jc["features"] = block_features[t];
    jc["W_i"] = matrix_to_json(c.Wi());
    jc["W_f"] = matrix_to_json(c.Wf());
    jc["W_o"] = matrix_to_json(c.Wo());
    jc["W_a"] = matrix_to_json(c.Wa());
    jc["U_i"] = matrix_to_json(c.Ui());
    jc["U_f"] = matrix_to_json(c.Uf());
    jc["U_o"] = matrix_to_json(c.Uo());
    jc["U_a"] = matrix_to_json(c.Ua());
    const int qq = c.q();
    jc["b_i"] = vector_to_json(c.b.segment(0, qq));
    jc["b_f"] = vector_to_json(c.b.segment(qq, qq));
    jc["b_o"] = vector_to_json(c.b.segment(2 * qq, qq));
    jc["b_a"] = vector_to_json(c.b.segment(3 * qq, qq));
    cells.push_back(std::move(jc));
  }
  j["cells"] = std::move(cells);
  j["head"]["W"] = matrix_to_json(params.head.W);
  j["head"]["b"] = vector_to_json(params.head.b);
  return j.dump(2);
}

DvcModel DvcModel::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (j.at("format") != "dvc-model" || j.at("version").get<int>() != 1) {
    throw std::runtime_error("model: unsupported format/version");
  }
  DvcModel m;
  m.q = j.at("q").get<int>();
  m.K = j.at("K").get<int>();
  const int q = m.q;
  for (const auto& jc : j.at("cells")) {
    m.block_ids.push_back(jc.at("block_id").get<int>());
    m.block_features.push_back(jc.at("features").get<std::vector<int>>());
    Matrix Ui = matrix_from_json(jc.at("U_i"));
    CellParams c = CellParams::zeros(q, int(Ui.cols()));
    c.W.middleRows(0, q) = matrix_from_json(jc.at("W_i"));
    c.W.middleRows(q, q) = matrix_from_json(jc.at("W_f"));
    c.W.middleRows(2 * q, q) = matrix_from_json(jc.at("W_o"));
    c.W.middleRows(3 * q, q) = matrix_from_json(jc.at("W_a"));
    c.U.middleRows(0, q) = Ui;
    c.U.middleRows(q, q) = matrix_from_json(jc.at("U_f"));
    c.U.middleRows(2 * q, q) = matrix_from_json(jc.at("U_o"));
    c.U.middleRows(3 * q, q) = matrix_from_json(jc.at("U_a"));
    c.b.segment(0, q) = vector_from_json(jc.at("b_i"));
    c.b.segment(q, q) = vector_from_json(jc.at("b_f"));
    c.b.segment(2 * q, q) = vector_from_json(jc.at("b_o"));
    c.b.segment(3 * q, q) = vector_from_json(jc.at("b_a"));
    m.params.cells.push_back(std::move(c));
  }
  m.params.head.W = matrix_from_json(j.at("head").at("W"));
  m.params.head.b = vector_from_json(j.at("head").at("b"));
  return m;
}

}  // namespace dvc
