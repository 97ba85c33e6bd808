#include "dvc/avs.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace dvc {

int compute_q(const Vector& posteriors, int true_label, int K) {
  if (posteriors.size() != K || true_label < 0 || true_label >= K) {
    throw std::invalid_argument("compute_q: bad label or posterior length");
  }
  if (std::abs(posteriors.sum() - 1.0) > 1e-6) {
    throw std::invalid_argument("compute_q: posteriors do not sum to 1");
  }
  const double eps = 0.2 / double(K);
  double best_other = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < K; ++k) {
    if (k != true_label) best_other = std::max(best_other, posteriors[k]);
  }
  // b_y - best_other >= eps forces b_y to be the strict maximum.
  return posteriors[true_label] - best_other >= eps ? 1 : 0;
}

int compute_nu(const std::vector<int>& q_bits) {
  const int S = int(q_bits.size());
  if (S < 1) throw std::invalid_argument("compute_nu: need S >= 1");
  if (q_bits[std::size_t(S - 1)] == 0) return S + 1;
  int j = S;
  while (j > 1 && q_bits[std::size_t(j - 2)] == 1) --j;
  return j;
}

int leaf_nu(const std::vector<int>& counts, double alpha) {
  if (alpha <= 0 || alpha > 1) {
    throw std::invalid_argument("leaf_nu: alpha in (0, 1]");
  }
  const long total = std::accumulate(counts.begin(), counts.end(), 0L);
  if (total < 1) throw std::invalid_argument("leaf_nu: empty leaf");
  long cum = 0;
  for (std::size_t l = 0; l < counts.size(); ++l) {
    cum += counts[l];
    if (double(cum) >= double(total) * alpha) return int(l) + 1;
  }
  return int(counts.size());
}

std::vector<NuRecord> compute_nu_dataset(const std::vector<DvcModel>& models,
                                         const Dataset& data) {
  if (models.empty()) throw std::invalid_argument("compute_nu: no models");
  const int S = int(models.size());
  const Eigen::Index n = data.n();
  const int K = models[0].K;

  std::vector<NuRecord> records(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    records[std::size_t(i)].sample_index = int(i);
  }
  for (int l = 0; l < S; ++l) {
    ForwardTrace tr = forward_batch(models[std::size_t(l)], data.X);
    for (Eigen::Index i = 0; i < n; ++i) {
      NuRecord& r = records[std::size_t(i)];
      r.posteriors.push_back(tr.posteriors.col(i));
      r.q_bits.push_back(
          compute_q(tr.posteriors.col(i), data.y[std::size_t(i)], K));
    }
  }
  for (auto& r : records) r.nu = compute_nu(r.q_bits);
  return records;
}

namespace {

double node_sse(const std::vector<double>& y, const std::vector<int>& idx,
                double mean) {
  double s = 0;
  for (int i : idx) s += (y[std::size_t(i)] - mean) * (y[std::size_t(i)] - mean);
  return s;
}

double node_mean(const std::vector<double>& y, const std::vector<int>& idx) {
  double s = 0;
  for (int i : idx) s += y[std::size_t(i)];
  return s / double(idx.size());
}

struct SplitChoice {
  int feature = -1;
  double threshold = 0;
  double child_sse = std::numeric_limits<double>::infinity();
};

SplitChoice best_split(const Matrix& X, const std::vector<int>& features,
                       const std::vector<double>& y,
                       const std::vector<int>& idx, int min_leaf) {
  SplitChoice best;
  const int n = int(idx.size());
  std::vector<std::pair<double, double>> vals(static_cast<std::size_t>(n));  // (x, y)
  for (int f : features) {
    for (int i = 0; i < n; ++i) {
      vals[std::size_t(i)] = {X(idx[std::size_t(i)], f),
                              y[std::size_t(idx[std::size_t(i)])]};
    }
    std::sort(vals.begin(), vals.end());
    // Prefix sums give both children's SSE at every cut point.
    double total = 0, total_sq = 0;
    for (const auto& [x, yy] : vals) {
      total += yy;
      total_sq += yy * yy;
    }
    double left_sum = 0, left_sq = 0;
    for (int i = 0; i < n - 1; ++i) {
      left_sum += vals[std::size_t(i)].second;
      left_sq += vals[std::size_t(i)].second * vals[std::size_t(i)].second;
      if (vals[std::size_t(i)].first == vals[std::size_t(i + 1)].first) {
        continue;  // not a boundary between distinct values
      }
      const int nl = i + 1, nr = n - nl;
      if (nl < min_leaf || nr < min_leaf) continue;
      const double right_sum = total - left_sum;
      const double right_sq = total_sq - left_sq;
      const double sse = (left_sq - left_sum * left_sum / nl) +
                         (right_sq - right_sum * right_sum / nr);
      // Strictly-better keeps the (lower feature, lower threshold) tie rule.
      if (sse < best.child_sse - 1e-12) {
        best.feature = f;
        best.threshold = 0.5 * (vals[std::size_t(i)].first +
                                vals[std::size_t(i + 1)].first);
        best.child_sse = sse;
      }
    }
  }
  return best;
}

}  // namespace

RawTree grow_regression_tree(const Matrix& X,
                             const std::vector<int>& candidate_features,
                             const std::vector<double>& response,
                             const TreeConfig& cfg) {
  if (response.size() < 2 || Eigen::Index(response.size()) != X.rows()) {
    throw std::invalid_argument("grow_tree: need n >= 2 matching rows");
  }
  RawTree tree;

  std::function<int(std::vector<int>, int)> build =
      [&](std::vector<int> idx, int depth) -> int {
    const int node_id = int(tree.nodes.size());
    TreeNode node;
    node.count = int(idx.size());
    node.mean = node_mean(response, idx);
    node.sse = node_sse(response, idx, node.mean);
    tree.nodes.push_back(node);
    tree.node_samples.push_back(idx);

    if (depth >= cfg.max_depth || int(idx.size()) < 2 * cfg.min_leaf ||
        tree.nodes[std::size_t(node_id)].sse <= 1e-12) {
      return node_id;
    }
    SplitChoice split =
        best_split(X, candidate_features, response, idx, cfg.min_leaf);
    if (split.feature < 0 ||
        split.child_sse >= tree.nodes[std::size_t(node_id)].sse - 1e-12) {
      return node_id;
    }
    std::vector<int> left_idx, right_idx;
    for (int i : idx) {
      (X(i, split.feature) < split.threshold ? left_idx : right_idx)
          .push_back(i);
    }
    const int left = build(std::move(left_idx), depth + 1);
    const int right = build(std::move(right_idx), depth + 1);
    tree.nodes[std::size_t(node_id)].feature = split.feature;
    tree.nodes[std::size_t(node_id)].threshold = split.threshold;
    tree.nodes[std::size_t(node_id)].left = left;
    tree.nodes[std::size_t(node_id)].right = right;
    return node_id;
  };

  std::vector<int> all(response.size());
  std::iota(all.begin(), all.end(), 0);
  build(std::move(all), 0);
  return tree;
}

PruneSequence cost_complexity_sequence(const RawTree& tree) {
  const int n = int(tree.nodes.size());
  PruneSequence seq;
  std::vector<char> collapsed(std::size_t(n), 0);
  seq.alphas.push_back(0.0);
  seq.collapsed.push_back(collapsed);

  auto effective_leaf = [&](int i) {
    return tree.nodes[std::size_t(i)].is_leaf() || collapsed[std::size_t(i)];
  };

  while (!effective_leaf(0)) {
    // Leaf count and leaf SSE of every live subtree, bottom-up (children
    // have larger indices than their parent by construction).
    std::vector<int> leaves(std::size_t(n), 0);
    std::vector<double> subtree_sse(std::size_t(n), 0.0);
    for (int i = n - 1; i >= 0; --i) {
      if (effective_leaf(i)) {
        leaves[std::size_t(i)] = 1;
        subtree_sse[std::size_t(i)] = tree.nodes[std::size_t(i)].sse;
      } else {
        const int l = tree.nodes[std::size_t(i)].left;
        const int r = tree.nodes[std::size_t(i)].right;
        leaves[std::size_t(i)] = leaves[std::size_t(l)] + leaves[std::size_t(r)];
        subtree_sse[std::size_t(i)] =
            subtree_sse[std::size_t(l)] + subtree_sse[std::size_t(r)];
      }
    }
    double min_g = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      if (effective_leaf(i)) continue;
      const double g = (tree.nodes[std::size_t(i)].sse - subtree_sse[std::size_t(i)]) /
                       double(leaves[std::size_t(i)] - 1);
      min_g = std::min(min_g, g);
    }
    for (int i = 0; i < n; ++i) {
      if (effective_leaf(i)) continue;
      const double g = (tree.nodes[std::size_t(i)].sse - subtree_sse[std::size_t(i)]) /
                       double(leaves[std::size_t(i)] - 1);
      if (g <= min_g + 1e-12) collapsed[std::size_t(i)] = 1;
    }
    // Keep alphas strictly increasing even when a later weakest link ties an
    // earlier one to rounding.
    const double alpha = std::max(min_g, seq.alphas.back() * (1 + 1e-12) +
                                             std::numeric_limits<double>::min());
    seq.alphas.push_back(alpha);
    seq.collapsed.push_back(collapsed);
  }
  return seq;
}

double predict_pruned(const RawTree& tree, const std::vector<char>& collapsed,
                      const Eigen::RowVectorXd& x) {
  int i = 0;
  while (!tree.nodes[std::size_t(i)].is_leaf() && !collapsed[std::size_t(i)]) {
    const TreeNode& nd = tree.nodes[std::size_t(i)];
    i = x[nd.feature] < nd.threshold ? nd.left : nd.right;
  }
  return tree.nodes[std::size_t(i)].mean;
}

int VsTree::n_leaves() const {
  int c = 0;
  for (const auto& nd : nodes) c += nd.is_leaf() ? 1 : 0;
  return c;
}

int VsTree::route(const Eigen::RowVectorXd& x) const {
  int i = 0;
  while (!nodes[std::size_t(i)].is_leaf()) {
    const TreeNode& nd = nodes[std::size_t(i)];
    if (nd.feature >= x.size()) {
      throw std::out_of_range("vs_tree: feature index beyond sample width");
    }
    i = x[nd.feature] < nd.threshold ? nd.left : nd.right;
  }
  return i;
}

int VsTree::leaf_label_for(const Eigen::RowVectorXd& x) const {
  return nodes[std::size_t(route(x))].leaf_label;
}

VsTree fit_vs_tree(const Matrix& X, const std::vector<int>& candidate_features,
                   const std::vector<int>& nu_values, int nu_max,
                   const TreeConfig& cfg, std::uint64_t cv_seed) {
  const std::size_t n = nu_values.size();
  if (n < 2 || Eigen::Index(n) != X.rows()) {
    throw std::invalid_argument("fit_vs_tree: need n >= 2 matching rows");
  }
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = double(nu_values[i]);

  RawTree full = grow_regression_tree(X, candidate_features, y, cfg);
  PruneSequence seq = cost_complexity_sequence(full);
  const std::size_t m = seq.alphas.size();

  std::size_t chosen = m - 1;  // root-only fallback
  if (m > 1) {
    // Candidate complexities: geometric midpoints of the master sequence.
    std::vector<double> cand(m);
    cand[0] = 0.0;
    for (std::size_t k = 1; k + 1 < m; ++k) {
      cand[k] = std::sqrt(seq.alphas[k] * seq.alphas[k + 1]);
    }
    cand[m - 1] = seq.alphas[m - 1] * 2 + 1;

    // Fold assignment on the nu values themselves (regression CV).
    const int folds = std::min(cfg.cv_folds, int(n));
    Rng rng(Rng::derive(cv_seed, 0x7e, 5));
    std::vector<int> fold_of(n);
    for (std::size_t i = 0; i < n; ++i) fold_of[i] = int(i) % folds;
    rng.shuffle(fold_of.begin(), fold_of.end());

    std::vector<std::vector<double>> sq_err(m);  // per candidate, per sample
    for (auto& v : sq_err) v.reserve(n);
    for (int f = 0; f < folds; ++f) {
      std::vector<int> train_rows, held_rows;
      for (std::size_t i = 0; i < n; ++i) {
        (fold_of[i] == f ? held_rows : train_rows).push_back(int(i));
      }
      if (held_rows.empty() || train_rows.size() < 2) continue;
      Matrix Xf(Eigen::Index(train_rows.size()), X.cols());
      std::vector<double> yf(train_rows.size());
      for (std::size_t i = 0; i < train_rows.size(); ++i) {
        Xf.row(Eigen::Index(i)) = X.row(train_rows[i]);
        yf[i] = y[std::size_t(train_rows[i])];
      }
      RawTree ft = grow_regression_tree(Xf, candidate_features, yf, cfg);
      PruneSequence fseq = cost_complexity_sequence(ft);
      for (std::size_t k = 0; k < m; ++k) {
        // Minimizing subtree of the fold tree at complexity cand[k].
        std::size_t fk = 0;
        while (fk + 1 < fseq.alphas.size() && fseq.alphas[fk + 1] <= cand[k]) {
          ++fk;
        }
        for (int i : held_rows) {
          const double pred = predict_pruned(ft, fseq.collapsed[fk], X.row(i));
          const double e = y[std::size_t(i)] - pred;
          sq_err[k].push_back(e * e);
        }
      }
    }

    std::vector<double> cv(m, std::numeric_limits<double>::infinity());
    for (std::size_t k = 0; k < m; ++k) {
      if (!sq_err[k].empty()) {
        cv[k] = std::accumulate(sq_err[k].begin(), sq_err[k].end(), 0.0) /
                double(sq_err[k].size());
      }
    }
    std::size_t kmin = 0;
    for (std::size_t k = 1; k < m; ++k) {
      if (cv[k] < cv[kmin]) kmin = k;
    }
    double se = 0.0;
    if (!sq_err[kmin].empty()) {
      double var = 0.0;
      for (double e : sq_err[kmin]) var += (e - cv[kmin]) * (e - cv[kmin]);
      var /= double(sq_err[kmin].size());
      se = std::sqrt(var / double(sq_err[kmin].size()));
    }
    chosen = kmin;
    for (std::size_t k = m; k-- > 0;) {  // 1-SE: smallest tree within one SE
      if (cv[k] <= cv[kmin] + se) {
        chosen = k;
        break;
      }
    }
  }

  // Compact the chosen subtree, heap-style display ids, percentile labels.
  VsTree out;
  out.nu_max = nu_max;
  out.alpha_sequence = seq.alphas;
  const std::vector<char>& cut = seq.collapsed[chosen];

  std::function<int(int, int)> compact = [&](int raw, int display_id) -> int {
    const int out_id = int(out.nodes.size());
    TreeNode nd = full.nodes[std::size_t(raw)];
    nd.nu_counts.assign(std::size_t(nu_max), 0);
    for (int i : full.node_samples[std::size_t(raw)]) {
      nd.nu_counts[std::size_t(nu_values[std::size_t(i)] - 1)] += 1;
    }
    const bool leaf = nd.is_leaf() || cut[std::size_t(raw)];
    if (leaf) {
      nd.feature = -1;
      nd.left = nd.right = -1;
      nd.leaf_label = leaf_nu(nd.nu_counts, cfg.leaf_alpha);
    }
    out.nodes.push_back(nd);
    out.node_ids.push_back(display_id);
    if (!leaf) {
      const int l =
          compact(full.nodes[std::size_t(raw)].left, 2 * display_id);
      const int r =
          compact(full.nodes[std::size_t(raw)].right, 2 * display_id + 1);
      out.nodes[std::size_t(out_id)].left = l;
      out.nodes[std::size_t(out_id)].right = r;
    }
    return out_id;
  };
  compact(0, 1);
  return out;
}

AvsPrediction predict_avs(const VsTree& tree,
                          const std::vector<DvcModel>& models,
                          const Eigen::RowVectorXd& x) {
  if (models.empty()) throw std::invalid_argument("predict_avs: no models");
  const int S = int(models.size());
  AvsPrediction pred;
  pred.nu_tilde = tree.leaf_label_for(x);
  const int use = std::min(pred.nu_tilde, S);
  const Vector post = forward(models[std::size_t(use - 1)], x.transpose());
  pred.label = predict_class(post);
  return pred;
}

std::vector<AvsPrediction> predict_avs_dataset(
    const VsTree& tree, const std::vector<DvcModel>& models,
    const Dataset& data) {
  const int S = int(models.size());
  const Eigen::Index n = data.n();
  std::vector<AvsPrediction> out(static_cast<std::size_t>(n));
  std::vector<std::vector<int>> by_model(static_cast<std::size_t>(S));
  for (Eigen::Index i = 0; i < n; ++i) {
    const int nu_tilde = tree.leaf_label_for(data.X.row(i));
    out[std::size_t(i)].nu_tilde = nu_tilde;
    by_model[std::size_t(std::min(nu_tilde, S) - 1)].push_back(int(i));
  }
  for (int l = 0; l < S; ++l) {
    if (by_model[std::size_t(l)].empty()) continue;
    Matrix rows(Eigen::Index(by_model[std::size_t(l)].size()), data.p());
    for (std::size_t j = 0; j < by_model[std::size_t(l)].size(); ++j) {
      rows.row(Eigen::Index(j)) = data.X.row(by_model[std::size_t(l)][j]);
    }
    ForwardTrace tr = forward_batch(models[std::size_t(l)], rows);
    for (std::size_t j = 0; j < by_model[std::size_t(l)].size(); ++j) {
      out[std::size_t(by_model[std::size_t(l)][j])].label =
          predict_class(tr.posteriors.col(Eigen::Index(j)));
    }
  }
  return out;
}

std::string VsTree::to_json() const {
  nlohmann::json j;
  j["format"] = "dvc-vstree";
  j["version"] = 1;
  j["nu_max"] = nu_max;
  j["alpha_sequence"] = alpha_sequence;
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const TreeNode& nd = nodes[i];
    nlohmann::json jn;
    jn["id"] = node_ids[i];
    jn["feature"] = nd.feature;
    jn["threshold"] = nd.threshold;
    jn["left"] = nd.left;
    jn["right"] = nd.right;
    jn["count"] = nd.count;
    jn["mean_nu"] = nd.mean;
    jn["nu_counts"] = nd.nu_counts;
    jn["leaf_label"] = nd.leaf_label;
    arr.push_back(std::move(jn));
  }
  j["nodes"] = std::move(arr);
  return j.dump(2);
}

VsTree VsTree::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (j.at("format") != "dvc-vstree" || j.at("version").get<int>() != 1) {
    throw std::runtime_error("vs_tree: unsupported format/version");
  }
  VsTree t;
  t.nu_max = j.at("nu_max").get<int>();
  t.alpha_sequence = j.at("alpha_sequence").get<std::vector<double>>();
  for (const auto& jn : j.at("nodes")) {
    TreeNode nd;
    nd.feature = jn.at("feature").get<int>();
    nd.threshold = jn.at("threshold").get<double>();
    nd.left = jn.at("left").get<int>();
    nd.right = jn.at("right").get<int>();
    nd.count = jn.at("count").get<int>();
    nd.mean = jn.at("mean_nu").get<double>();
    nd.nu_counts = jn.at("nu_counts").get<std::vector<int>>();
    nd.leaf_label = jn.at("leaf_label").get<int>();
    t.nodes.push_back(std::move(nd));
    t.node_ids.push_back(jn.at("id").get<int>());
  }
  return t;
}

std::string VsTree::to_dot(const std::vector<std::string>& feature_names) const {
  auto fname = [&](int f) {
    if (f >= 0 && f < int(feature_names.size())) return feature_names[std::size_t(f)];
    return "x" + std::to_string(f);
  };
  std::ostringstream dot;
  dot << "digraph vs_tree {\n  node [shape=box];\n";
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const TreeNode& nd = nodes[i];
    dot << "  n" << node_ids[i] << " [label=\"#" << node_ids[i]
        << "\\nmean nu = ";
    dot.precision(3);
    dot << nd.mean << "\\nn = " << nd.count;
    if (nd.is_leaf()) {
      dot << "\\nnu~ = " << nd.leaf_label << "\\ndist = [";
      for (std::size_t l = 0; l < nd.nu_counts.size(); ++l) {
        if (l) dot << " ";
        dot << nd.nu_counts[l];
      }
      dot << "]";
    } else {
      dot << "\\nsplit: " << fname(nd.feature) << " < " << nd.threshold;
    }
    dot << "\"];\n";
    if (!nd.is_leaf()) {
      dot << "  n" << node_ids[i] << " -> n" << node_ids[std::size_t(nd.left)]
          << " [label=\"yes\"];\n";
      dot << "  n" << node_ids[i] << " -> n" << node_ids[std::size_t(nd.right)]
          << " [label=\"no\"];\n";
    }
  }
  dot << "}\n";
  return dot.str();
}

}  // namespace dvc
