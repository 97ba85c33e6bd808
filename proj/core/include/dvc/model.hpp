#pragma once

#include "dvc/blocks.hpp"
#include "dvc/numerics.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dvc {

/// Parameters of one chain cell. The four gates (input, forget, output,
/// proposal) are stored stacked row-wise so a cell update is two matrix
/// products instead of eight.
struct CellParams {
  Matrix W;  // 4q x q, applied to the previous hidden state
  Matrix U;  // 4q x p_t, applied to the cell's variable block
  Vector b;  // 4q

  int q() const { return int(W.cols()); }
  int input_dim() const { return int(U.cols()); }

  auto Wi() const { return W.middleRows(0 * q(), q()); }
  auto Wf() const { return W.middleRows(1 * q(), q()); }
  auto Wo() const { return W.middleRows(2 * q(), q()); }
  auto Wa() const { return W.middleRows(3 * q(), q()); }
  auto Ui() const { return U.middleRows(0 * q(), q()); }
  auto Uf() const { return U.middleRows(1 * q(), q()); }
  auto Uo() const { return U.middleRows(2 * q(), q()); }
  auto Ua() const { return U.middleRows(3 * q(), q()); }

  static CellParams zeros(int q, int p_t);
};

struct SoftmaxHead {
  Matrix W;  // K x q
  Vector b;  // K
};

struct ModelParams {
  std::vector<CellParams> cells;
  SoftmaxHead head;
};

/// Deterministic flat view of every parameter buffer (cells in chain order,
/// then the head); the order is shared by Adam state and gradient layouts.
std::vector<ParamRef> param_refs(ModelParams& params);

struct DropoutConfig {
  double rate = 0.0;  // inverted dropout on the input and output gates
};

struct DvcModel {
  std::vector<int> block_ids;                   // chain prefix B_1..B_l
  std::vector<std::vector<int>> block_features; // feature indices per cell
  int q = 0;
  int K = 0;
  ModelParams params;

  int chain_length() const { return int(block_ids.size()); }
  /// All features the model reads, in chain order.
  std::vector<int> used_features() const;

  std::string to_json() const;
  static DvcModel from_json(const std::string& text);
};

/// State size rule: q = min(20, smallest block size in the partition).
int state_size(const BlockPartition& partition);

/// Fresh model on the given chain prefix. Weights uniform in [-s, s] with
/// s = sqrt(6 / (fan_in + fan_out)) per gate matrix; biases zero except the
/// forget-gate bias, which starts at 1.
DvcModel init_model(const std::vector<int>& chain_prefix,
                    const BlockPartition& partition, int K, Rng& rng);

struct CellCache {
  Vector i, f, o, a, c, h;
};

CellCache cell_forward(const CellParams& cell, const Vector& x_t,
                       const Vector& h_prev, const Vector& c_prev);

/// Activations cached for reverse mode. Columns are batch samples.
struct ForwardTrace {
  std::vector<Matrix> X;  // p_t x B per cell
  std::vector<Matrix> I, F, O, A, C, H;  // q x B per cell
  std::vector<Matrix> mask_i, mask_o;    // dropout masks (empty when off)
  Matrix posteriors;  // K x B
};

/// Forward pass over a batch of rows from the full feature matrix. Dropout
/// masks are sampled only when rate > 0 and a generator is supplied.
ForwardTrace forward_batch(const DvcModel& model, const Matrix& rows,
                           const DropoutConfig& dropout = {},
                           Rng* dropout_rng = nullptr);

/// Posteriors for a single full feature vector.
Vector forward(const DvcModel& model, const Vector& x);

/// Argmax posterior with ties broken toward the lower class index.
int predict_class(const Vector& posteriors);

/// Mean cross-entropy + (l2/2) * sum of squared weight-matrix entries
/// (biases excluded), with gradients for every parameter via reverse-mode
/// accumulation through the trace.
struct BackwardResult {
  double loss = 0.0;
  ModelParams grads;
};

BackwardResult backward(const DvcModel& model, const Matrix& rows,
                        const std::vector<int>& labels, double l2 = 0.0,
                        const DropoutConfig& dropout = {},
                        Rng* dropout_rng = nullptr);

}  // namespace dvc
