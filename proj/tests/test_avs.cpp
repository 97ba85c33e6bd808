#include <doctest.h>

#include "dvc/avs.hpp"
#include "dvc/chain.hpp"

#include <cmath>

using namespace dvc;

namespace {

Vector v2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

// Definition-level reference for the nu-number.
int nu_reference(const std::vector<int>& q_bits) {
  const int S = int(q_bits.size());
  for (int j = 1; j <= S; ++j) {
    bool all_one = true;
    for (int t = j; t <= S; ++t) {
      if (q_bits[std::size_t(t - 1)] != 1) all_one = false;
    }
    if (all_one) return j;
  }
  return S + 1;
}

}  // namespace

TEST_CASE("confidence bit uses a strict margin of 0.2/K") {
  CHECK(compute_q(v2(0.9, 0.1), 0, 2) == 1);    // margin 0.8 >= 0.1
  CHECK(compute_q(v2(0.54, 0.46), 0, 2) == 0);  // margin 0.08 < 0.1
  CHECK(compute_q(v2(0.55, 0.45), 0, 2) == 1);  // margin exactly 0.1
  CHECK(compute_q(v2(0.9, 0.1), 1, 2) == 0);    // true class not the max

  Vector p4(4);
  p4 << 0.4, 0.36, 0.14, 0.1;  // eps = 0.05
  CHECK(compute_q(p4, 0, 4) == 0);
  p4 << 0.4, 0.35, 0.15, 0.1;
  CHECK(compute_q(p4, 0, 4) == 1);

  Vector bad(2);
  bad << 0.7, 0.6;
  CHECK_THROWS(compute_q(bad, 0, 2));
}

TEST_CASE("nu matches its definition for every bit pattern up to S=12") {
  for (int S = 1; S <= 12; ++S) {
    for (unsigned mask = 0; mask < (1u << S); ++mask) {
      std::vector<int> q;
      for (int j = 0; j < S; ++j) q.push_back((mask >> j) & 1u);
      CHECK(compute_nu(q) == nu_reference(q));
    }
  }
  // Spot values.
  CHECK(compute_nu({1, 1, 1}) == 1);
  CHECK(compute_nu({0, 1, 1}) == 2);
  CHECK(compute_nu({1, 0, 1}) == 3);
  CHECK(compute_nu({1, 1, 0}) == 4);
}

TEST_CASE("percentile leaf labels") {
  CHECK(leaf_nu({9, 1}, 0.9) == 1);   // cumulative 9 >= 0.9 * 10
  CHECK(leaf_nu({8, 2}, 0.9) == 2);   // 8 < 9, 10 >= 9
  CHECK(leaf_nu({0, 0, 5}, 0.9) == 3);
  CHECK(leaf_nu({1, 1, 1, 1}, 0.5) == 2);

  // The label is non-decreasing in alpha.
  Rng rng(19);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> counts;
    for (int l = 0; l < 6; ++l) counts.push_back(rng.uniform_int(0, 10));
    counts[0] += 1;  // nonempty
    int prev = 0;
    for (double alpha : {0.1, 0.3, 0.5, 0.7, 0.9, 1.0}) {
      const int lab = leaf_nu(counts, alpha);
      CHECK(lab >= prev);
      CHECK(lab >= 1);
      CHECK(lab <= 6);
      prev = lab;
    }
  }
}

TEST_CASE("regression tree recovers a step function") {
  Rng rng(23);
  const int n = 60;
  Matrix X(n, 2);
  std::vector<double> y;
  for (int i = 0; i < n; ++i) {
    X(i, 0) = rng.uniform(-1, 1);
    X(i, 1) = rng.uniform(-1, 1);  // irrelevant
    y.push_back(X(i, 0) < 0 ? 1.0 : 3.0);
  }
  TreeConfig cfg;
  RawTree tree = grow_regression_tree(X, {0, 1}, y, cfg);
  REQUIRE(!tree.nodes.empty());
  const TreeNode& root = tree.nodes[0];
  CHECK(!root.is_leaf());
  CHECK(root.feature == 0);
  CHECK(root.count == n);
  // Children are pure, so no further splits happen below them.
  CHECK(tree.nodes[std::size_t(root.left)].is_leaf());
  CHECK(tree.nodes[std::size_t(root.right)].is_leaf());
  CHECK(tree.nodes[std::size_t(root.left)].mean ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK(tree.nodes[std::size_t(root.right)].mean ==
        doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("cost-complexity sequence is monotone and ends at the root") {
  Rng rng(29);
  const int n = 120;
  Matrix X(n, 3);
  std::vector<double> y;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 3; ++j) X(i, j) = rng.uniform(-1, 1);
    y.push_back(X(i, 0) + 0.5 * std::abs(X(i, 1)) + rng.normal(0, 0.3));
  }
  TreeConfig cfg;
  RawTree tree = grow_regression_tree(X, {0, 1, 2}, y, cfg);
  PruneSequence seq = cost_complexity_sequence(tree);

  REQUIRE(!seq.alphas.empty());
  CHECK(seq.alphas[0] == 0.0);
  for (std::size_t k = 1; k < seq.alphas.size(); ++k) {
    CHECK(seq.alphas[k] > seq.alphas[k - 1]);
  }
  // Subtrees are nested: once collapsed, always collapsed.
  for (std::size_t k = 1; k < seq.collapsed.size(); ++k) {
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
      if (seq.collapsed[k - 1][i]) CHECK(seq.collapsed[k][i]);
    }
  }
  // The last subtree is the bare root.
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    if (!tree.nodes[i].is_leaf() && i == 0) {
      CHECK(seq.collapsed.back()[i]);
    }
  }
  // Predictions under the full mask equal the root mean.
  double mean = 0;
  for (double v : y) mean += v;
  mean /= n;
  CHECK(predict_pruned(tree, seq.collapsed.back(), X.row(0)) ==
        doctest::Approx(mean).epsilon(1e-10));
}

TEST_CASE("variable selection tree learns a clean routing rule") {
  // nu = 1 on the left half-space, 3 on the right; feature 1 is noise.
  Rng rng(31);
  const int n = 200;
  Matrix X(n, 2);
  std::vector<int> nu;
  for (int i = 0; i < n; ++i) {
    X(i, 0) = rng.uniform(-1, 1);
    X(i, 1) = rng.uniform(-1, 1);
    nu.push_back(X(i, 0) < 0 ? 1 : 3);
  }
  TreeConfig cfg;
  VsTree tree = fit_vs_tree(X, {0, 1}, nu, 3, cfg, 7);
  CHECK(tree.nu_max == 3);
  CHECK(tree.n_leaves() >= 2);
  int correct = 0;
  for (int i = 0; i < n; ++i) {
    if (tree.leaf_label_for(X.row(i)) == nu[std::size_t(i)]) ++correct;
  }
  CHECK(correct >= int(0.95 * n));

  VsTree back = VsTree::from_json(tree.to_json());
  CHECK(back.n_leaves() == tree.n_leaves());
  for (int i = 0; i < n; ++i) {
    CHECK(back.leaf_label_for(X.row(i)) == tree.leaf_label_for(X.row(i)));
  }
  CHECK(tree.to_dot({"a", "b"}).find("digraph") != std::string::npos);
  CHECK(back.node_ids[0] == 1);
}

TEST_CASE("constant nu collapses the tree to a single leaf") {
  Rng rng(37);
  Matrix X(60, 2);
  std::vector<int> nu(60, 2);
  for (int i = 0; i < 60; ++i) {
    X(i, 0) = rng.uniform(-1, 1);
    X(i, 1) = rng.uniform(-1, 1);
  }
  VsTree tree = fit_vs_tree(X, {0, 1}, nu, 4, TreeConfig{}, 3);
  CHECK(tree.n_leaves() == 1);
  CHECK(tree.leaf_label_for(X.row(0)) == 2);
}

namespace {

// Shared fixture: a trained two-block chain on partially informative data.
struct ChainFixture {
  BlockPartition part;
  Dataset data;
  ChainResult chain;

  ChainFixture() {
    Rng rng(41);
    const int n = 60;
    data.X.resize(n, 4);
    data.y.resize(std::size_t(n));
    for (int i = 0; i < n; ++i) {
      const int label = i < n / 2 ? 0 : 1;
      data.y[std::size_t(i)] = label;
      data.X(i, 0) = rng.normal(label == 0 ? -2.0 : 2.0, 0.5);
      data.X(i, 1) = rng.normal(label == 0 ? -2.0 : 2.0, 0.5);
      data.X(i, 2) = rng.normal(0, 1);
      data.X(i, 3) = rng.normal(0, 1);
    }
    data.K = 2;
    data.feature_names = {"x0", "x1", "x2", "x3"};
    data.class_names = {"0", "1"};
    part.blocks = {{0, {0, 1}}, {1, {2, 3}}};
    part.total_features = 4;
    TrainConfig cfg;
    cfg.epochs = 60;
    cfg.lr = 5e-3;
    cfg.seed = 43;
    cfg.cv_folds = 3;
    chain = build_chain(part, data, cfg);
  }
};

}  // namespace

TEST_CASE("nu records cover every sample and respect the bit definitions") {
  ChainFixture fx;
  auto records = compute_nu_dataset(fx.chain.models, fx.data);
  REQUIRE(records.size() == std::size_t(fx.data.n()));
  const int S = int(fx.chain.models.size());
  for (const auto& rec : records) {
    REQUIRE(int(rec.q_bits.size()) == S);
    REQUIRE(int(rec.posteriors.size()) == S);
    CHECK(rec.nu == nu_reference(rec.q_bits));
    CHECK(rec.nu >= 1);
    CHECK(rec.nu <= S + 1);
    for (int l = 0; l < S; ++l) {
      const int y = fx.data.y[std::size_t(rec.sample_index)];
      CHECK(rec.q_bits[std::size_t(l)] ==
            compute_q(rec.posteriors[std::size_t(l)], y, fx.data.K));
      Vector direct =
          forward(fx.chain.models[std::size_t(l)],
                  fx.data.X.row(rec.sample_index).transpose());
      CHECK((rec.posteriors[std::size_t(l)] - direct).cwiseAbs().maxCoeff() <=
            1e-12);
    }
  }
}

TEST_CASE("a single-leaf routing tree reproduces the plain classifier") {
  ChainFixture fx;
  const int S = int(fx.chain.models.size());

  VsTree tree;
  TreeNode leaf;
  leaf.leaf_label = S;
  leaf.count = int(fx.data.n());
  tree.nodes = {leaf};
  tree.node_ids = {1};
  tree.nu_max = S + 1;

  auto preds = predict_avs_dataset(tree, fx.chain.models, fx.data);
  auto plain = predict_labels(fx.chain.models[std::size_t(S - 1)], fx.data);
  REQUIRE(preds.size() == plain.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    CHECK(preds[i].label == plain[i]);
    CHECK(preds[i].nu_tilde == S);
  }
}

TEST_CASE("routing caps the applied depth at the chain length") {
  ChainFixture fx;
  const int S = int(fx.chain.models.size());

  VsTree tree;
  TreeNode leaf;
  leaf.leaf_label = S + 1;  // deeper than any available model
  leaf.count = int(fx.data.n());
  tree.nodes = {leaf};
  tree.node_ids = {1};
  tree.nu_max = S + 1;

  for (Eigen::Index i = 0; i < fx.data.n(); ++i) {
    AvsPrediction pred = predict_avs(tree, fx.chain.models, fx.data.X.row(i));
    CHECK(pred.nu_tilde == S + 1);
    Vector p = forward(fx.chain.models[std::size_t(S - 1)],
                       fx.data.X.row(i).transpose());
    CHECK(pred.label == predict_class(p));
  }

  // Batch and per-sample paths agree.
  auto batch = predict_avs_dataset(tree, fx.chain.models, fx.data);
  for (Eigen::Index i = 0; i < fx.data.n(); ++i) {
    AvsPrediction pred = predict_avs(tree, fx.chain.models, fx.data.X.row(i));
    CHECK(batch[std::size_t(i)].label == pred.label);
    CHECK(batch[std::size_t(i)].nu_tilde == pred.nu_tilde);
  }
}
