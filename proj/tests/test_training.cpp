#include <doctest.h>

#include "dvc/training.hpp"

#include <cmath>

using namespace dvc;

namespace {

BlockPartition single_block(int p) {
  BlockPartition part;
  std::vector<int> f;
  for (int j = 0; j < p; ++j) f.push_back(j);
  part.blocks = {{0, f}};
  part.total_features = p;
  return part;
}

// Two well-separated spherical classes in p dimensions.
Dataset separable(int n_per_class, int p, double gap, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.X.resize(2 * n_per_class, p);
  d.y.resize(std::size_t(2 * n_per_class));
  for (int i = 0; i < 2 * n_per_class; ++i) {
    const int label = i < n_per_class ? 0 : 1;
    d.y[std::size_t(i)] = label;
    for (int j = 0; j < p; ++j) {
      d.X(i, j) = rng.normal(label == 0 ? -gap : gap, 0.5);
    }
  }
  d.K = 2;
  for (int j = 0; j < p; ++j) d.feature_names.push_back("x" + std::to_string(j));
  d.class_names = {"0", "1"};
  return d;
}

}  // namespace

TEST_CASE("config validation and json round trip") {
  TrainConfig cfg;
  cfg.validate();
  TrainConfig back = TrainConfig::from_json(cfg.to_json());
  CHECK(back.lr == cfg.lr);
  CHECK(back.epochs == cfg.epochs);
  CHECK(back.seed == cfg.seed);

  TrainConfig bad = cfg;
  bad.lr = -1;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.batch_size = 0;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.dropout = 1.0;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("zero learning rate leaves the model untouched") {
  BlockPartition part = single_block(4);
  Dataset d = separable(10, 4, 2.0, 1);
  Rng rng(2);
  DvcModel m = init_model({0}, part, 2, rng);
  Matrix w_before = m.params.cells[0].W;
  Vector b_before = m.params.head.b;

  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.epochs = 3;
  train(m, d, cfg);
  CHECK(m.params.cells[0].W == w_before);
  CHECK(m.params.head.b == b_before);
}

TEST_CASE("training is deterministic in the seed") {
  BlockPartition part = single_block(4);
  Dataset d = separable(15, 4, 1.5, 3);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.seed = 99;

  auto run = [&] {
    Rng rng(Rng::derive(cfg.seed, 0x11, 3));
    DvcModel m = init_model({0}, part, 2, rng);
    FitReport rep = train(m, d, cfg);
    return std::make_pair(m.params.head.W, rep.loss_curve);
  };
  auto [w1, curve1] = run();
  auto [w2, curve2] = run();
  CHECK(w1 == w2);
  CHECK(curve1 == curve2);
  REQUIRE(curve1.size() == 10);
}

TEST_CASE("training drives a separable problem to zero error") {
  BlockPartition part = single_block(4);
  Dataset d = separable(30, 4, 2.0, 7);
  Rng rng(Rng::derive(11, 0x11, 3));
  DvcModel m = init_model({0}, part, 2, rng);
  TrainConfig cfg;
  cfg.epochs = 80;
  cfg.lr = 5e-3;
  cfg.seed = 11;
  FitReport rep = train(m, d, cfg);
  CHECK(rep.train_error == 0.0);
  CHECK(rep.loss_curve.back() < rep.loss_curve.front());
  CHECK(evaluate_error(m, d) == 0.0);

  // Fresh draws from the same distribution classify correctly too.
  Dataset holdout = separable(20, 4, 2.0, 8);
  CHECK(evaluate_error(m, holdout) <= 0.05);
}

TEST_CASE("evaluate_error counts argmax mismatches with low-index ties") {
  // Zero cells give uniform posteriors, so every prediction is class 0.
  BlockPartition part = single_block(2);
  Rng rng(1);
  DvcModel m = init_model({0}, part, 2, rng);
  m.params.cells[0].W.setZero();
  m.params.cells[0].U.setZero();
  m.params.cells[0].b.setZero();
  m.params.head.W.setZero();
  m.params.head.b.setZero();

  Dataset d;
  d.X = Matrix::Random(3, 2);
  d.y = {0, 0, 1};
  d.K = 2;
  d.feature_names = {"a", "b"};
  d.class_names = {"0", "1"};
  CHECK(evaluate_error(m, d) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(predict_labels(m, d) == std::vector<int>{0, 0, 0});

  auto scores = positive_scores(m, d);
  REQUIRE(scores.size() == 3);
  for (double s : scores) CHECK(s == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("cross validation reaches zero error on separable data") {
  BlockPartition part = single_block(4);
  Dataset d = separable(30, 4, 2.0, 13);
  TrainConfig cfg;
  cfg.epochs = 80;
  cfg.lr = 5e-3;
  cfg.seed = 13;
  cfg.cv_folds = 3;
  const double err = cross_validate({0}, part, d, cfg);
  CHECK(err <= 0.05);

  // Deterministic given identical inputs.
  CHECK(cross_validate({0}, part, d, cfg) == err);

  // A shared fold assignment is honored.
  auto folds = stratified_folds(d.y, 3, 77);
  const double err_a = cross_validate({0}, part, d, cfg, &folds);
  const double err_b = cross_validate({0}, part, d, cfg, &folds);
  CHECK(err_a == err_b);
}
