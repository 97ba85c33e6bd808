#pragma once

#include "dvc/data.hpp"
#include "dvc/model.hpp"

#include <string>
#include <vector>

namespace dvc {

/// Margin-confidence bit: 1 iff the true class holds the strict posterior
/// maximum with margin >= eps = 0.2/K over the runner-up. Throws if the
/// posterior sum deviates from 1 by more than 1e-6.
int compute_q(const Vector& posteriors, int true_label, int K);

/// Smallest j such that q_j..q_S are all 1; S+1 when q_S = 0.
int compute_nu(const std::vector<int>& q_bits);

/// Percentile leaf label: smallest l whose cumulative count reaches
/// alpha * total. counts[l-1] holds the number of samples with nu = l.
int leaf_nu(const std::vector<int>& counts, double alpha);

struct NuRecord {
  int sample_index = 0;
  std::vector<Vector> posteriors;  // one K-vector per sub-chain length
  std::vector<int> q_bits;
  int nu = 0;
};

/// S forward passes per sample through the sub-chain models D_1..D_S.
std::vector<NuRecord> compute_nu_dataset(const std::vector<DvcModel>& models,
                                         const Dataset& data);

struct TreeConfig {
  int min_leaf = 5;
  int max_depth = 6;
  int cv_folds = 5;
  double leaf_alpha = 0.9;
};

struct TreeNode {
  int feature = -1;        // original feature index; -1 for leaves
  double threshold = 0.0;  // x[feature] < threshold goes left
  int left = -1;
  int right = -1;
  int count = 0;
  double mean = 0.0;  // mean response over the node's samples
  double sse = 0.0;
  std::vector<int> nu_counts;  // per nu value 1..nu_max (final tree only)
  int leaf_label = 0;          // nu tilde (leaves of the final tree)

  bool is_leaf() const { return left < 0; }
};

/// Fully grown regression tree before pruning. nodes[0] is the root.
struct RawTree {
  std::vector<TreeNode> nodes;
  std::vector<std::vector<int>> node_samples;
};

RawTree grow_regression_tree(const Matrix& X,
                             const std::vector<int>& candidate_features,
                             const std::vector<double>& response,
                             const TreeConfig& cfg);

/// Weakest-link cost-complexity sequence. collapsed[k][i] marks node i as a
/// leaf in the kth subtree; alphas are strictly increasing with alphas[0]=0.
struct PruneSequence {
  std::vector<double> alphas;
  std::vector<std::vector<char>> collapsed;
};

PruneSequence cost_complexity_sequence(const RawTree& tree);

/// Mean response at the leaf reached under a given collapse mask.
double predict_pruned(const RawTree& tree, const std::vector<char>& collapsed,
                      const Eigen::RowVectorXd& x);

struct VsTree {
  std::vector<TreeNode> nodes;  // compacted final tree; nodes[0] = root
  std::vector<int> node_ids;    // heap-style display ids (root = 1)
  int nu_max = 0;               // S+1
  std::vector<double> alpha_sequence;  // pruning metadata

  int n_leaves() const;
  /// Index into nodes of the leaf a sample routes to.
  int route(const Eigen::RowVectorXd& x) const;
  int leaf_label_for(const Eigen::RowVectorXd& x) const;

  std::string to_json() const;
  static VsTree from_json(const std::string& text);
  std::string to_dot(const std::vector<std::string>& feature_names) const;
};

/// Grows a regression tree on the nu-numbers, selects a subtree from the
/// cost-complexity sequence by k-fold CV on squared error with the 1-SE
/// rule, and relabels leaves by the percentile rule.
VsTree fit_vs_tree(const Matrix& X, const std::vector<int>& candidate_features,
                   const std::vector<int>& nu_values, int nu_max,
                   const TreeConfig& cfg, std::uint64_t cv_seed);

struct AvsPrediction {
  int label = 0;
  int nu_tilde = 0;
};

/// Routes x through the tree, then applies D_min(nu_tilde, S).
AvsPrediction predict_avs(const VsTree& tree,
                          const std::vector<DvcModel>& models,
                          const Eigen::RowVectorXd& x);

std::vector<AvsPrediction> predict_avs_dataset(
    const VsTree& tree, const std::vector<DvcModel>& models,
    const Dataset& data);

}  // namespace dvc
