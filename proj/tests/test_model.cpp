#include <doctest.h>

#include "dvc/model.hpp"
#include "dvc/training.hpp"

#include <cmath>

using namespace dvc;

namespace {

BlockPartition two_blocks(int size_a, int size_b) {
  BlockPartition part;
  std::vector<int> a, b;
  for (int j = 0; j < size_a; ++j) a.push_back(j);
  for (int j = 0; j < size_b; ++j) b.push_back(size_a + j);
  part.blocks = {{0, a}, {1, b}};
  part.total_features = size_a + size_b;
  return part;
}

Matrix random_rows(int n, int p, std::uint64_t seed) {
  Rng rng(seed);
  Matrix X(n, p);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) X(i, j) = rng.normal(0, 1);
  }
  return X;
}

}  // namespace

TEST_CASE("state size rule") {
  CHECK(state_size(two_blocks(3, 5)) == 3);
  CHECK(state_size(two_blocks(30, 25)) == 20);
}

TEST_CASE("initialization: forget bias 1, other biases 0, bounded weights") {
  BlockPartition part = two_blocks(4, 4);
  Rng rng(3);
  DvcModel m = init_model({0, 1}, part, 3, rng);
  CHECK(m.q == 4);
  CHECK(m.K == 3);
  REQUIRE(m.params.cells.size() == 2);
  for (const auto& cell : m.params.cells) {
    const int q = cell.q();
    for (int r = 0; r < 4 * q; ++r) {
      const double expected = (r >= q && r < 2 * q) ? 1.0 : 0.0;
      CHECK(cell.b[r] == expected);
    }
    const double bound = std::sqrt(6.0 / (q + q));
    CHECK(cell.W.cwiseAbs().maxCoeff() <= bound);
    CHECK(cell.W.cwiseAbs().maxCoeff() > 0.0);
  }
  CHECK_THROWS(init_model({}, part, 3, rng));
  CHECK_THROWS(init_model({0}, part, 1, rng));

  Rng r1(3), r2(3);
  DvcModel a = init_model({0, 1}, part, 3, r1);
  DvcModel b = init_model({0, 1}, part, 3, r2);
  CHECK(a.params.cells[0].U == b.params.cells[0].U);
  CHECK(a.params.head.W == b.params.head.W);
}

TEST_CASE("cell closed forms with hand-set gates") {
  // q = 1, p_t = 1, all weights zero: every gate preactivation is the bias.
  CellParams cell = CellParams::zeros(1, 1);
  Vector x(1), h0(1), c0(1);
  x << 0.7;
  h0.setZero();
  c0.setZero();

  // All-zero biases: i = f = o = 1/2, a = 0, so c = 0 and h = 0.
  CellCache out = cell_forward(cell, x, h0, c0);
  CHECK(out.i[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(out.f[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(out.c[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(out.h[0] == doctest::Approx(0.0).epsilon(1e-12));

  // Saturate the proposal gate: a -> 1, so c = i*a = 1/2 and
  // h = o * tanh(c) = 0.5 * tanh(0.5).
  cell.b[3] = 40.0;
  out = cell_forward(cell, x, h0, c0);
  CHECK(out.c[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(out.h[0] ==
        doctest::Approx(0.5 * std::tanh(0.5)).epsilon(1e-12));

  // Saturated forget gate + closed input gate: the cell state carries over.
  cell.b[0] = -40.0;  // input gate -> 0
  cell.b[1] = 40.0;   // forget gate -> 1
  c0 << 0.31;
  out = cell_forward(cell, x, h0, c0);
  CHECK(out.c[0] == doctest::Approx(0.31).epsilon(1e-10));
}

TEST_CASE("batched forward matches the single-sample path") {
  BlockPartition part = two_blocks(3, 4);
  Rng rng(11);
  DvcModel m = init_model({1, 0}, part, 4, rng);
  Matrix rows = random_rows(6, 7, 21);
  ForwardTrace trace = forward_batch(m, rows);
  REQUIRE(trace.posteriors.cols() == 6);
  for (int i = 0; i < 6; ++i) {
    Vector p = forward(m, rows.row(i).transpose());
    CHECK((trace.posteriors.col(i) - p).cwiseAbs().maxCoeff() <= 1e-13);
    CHECK(std::abs(p.sum() - 1.0) <= 1e-12);
  }
}

TEST_CASE("posteriors ignore features outside the chain prefix") {
  BlockPartition part = two_blocks(3, 4);
  Rng rng(5);
  DvcModel m = init_model({0}, part, 2, rng);  // only block 0 -> features 0..2
  Matrix rows = random_rows(4, 7, 8);
  Matrix perturbed = rows;
  perturbed.rightCols(4).array() += 100.0;  // features 3..6 unused
  ForwardTrace a = forward_batch(m, rows);
  ForwardTrace b = forward_batch(m, perturbed);
  CHECK((a.posteriors - b.posteriors).cwiseAbs().maxCoeff() == 0.0);
  CHECK(m.used_features() == std::vector<int>{0, 1, 2});
}

TEST_CASE("predict_class ties break toward the lowest class") {
  Vector p(3);
  p << 0.4, 0.4, 0.2;
  CHECK(predict_class(p) == 0);
  p << 0.2, 0.3, 0.5;
  CHECK(predict_class(p) == 2);
}

TEST_CASE("backward gradients match central finite differences") {
  BlockPartition part = two_blocks(3, 2);
  Rng rng(17);
  DvcModel m = init_model({0, 1}, part, 3, rng);
  Matrix rows = random_rows(5, 5, 29);
  std::vector<int> labels{0, 2, 1, 1, 0};

  for (double l2 : {0.0, 0.01}) {
    BackwardResult res = backward(m, rows, labels, l2);
    auto numeric = finite_diff_grad(
        [&] { return backward(m, rows, labels, l2).loss; },
        param_refs(m.params), 1e-5);
    std::vector<ParamRef> grefs = param_refs(res.grads);
    std::size_t k = 0;
    double worst = 0.0;
    for (const ParamRef& ref : grefs) {
      for (Eigen::Index i = 0; i < ref.size; ++i, ++k) {
        const double analytic = ref.data[i];
        const double fd = numeric[k];
        const double rel = std::abs(analytic - fd) /
                           std::max(1.0, std::max(std::abs(analytic),
                                                  std::abs(fd)));
        worst = std::max(worst, rel);
      }
    }
    CHECK(k == numeric.size());
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("l2 penalty is additive in the loss and linear in the gradient") {
  BlockPartition part = two_blocks(2, 2);
  Rng rng(23);
  DvcModel m = init_model({0, 1}, part, 2, rng);
  Matrix rows = random_rows(4, 4, 31);
  std::vector<int> labels{0, 1, 1, 0};

  BackwardResult plain = backward(m, rows, labels, 0.0);
  const double l2 = 0.05;
  BackwardResult reg = backward(m, rows, labels, l2);

  double sumsq = m.params.head.W.squaredNorm();
  for (const auto& cell : m.params.cells) {
    sumsq += cell.W.squaredNorm() + cell.U.squaredNorm();
  }
  CHECK(reg.loss ==
        doctest::Approx(plain.loss + 0.5 * l2 * sumsq).epsilon(1e-12));
  // Bias gradients are untouched by the penalty.
  CHECK((reg.grads.head.b - plain.grads.head.b).cwiseAbs().maxCoeff() <=
        1e-14);
  CHECK((reg.grads.cells[0].W -
         (plain.grads.cells[0].W + l2 * m.params.cells[0].W))
            .cwiseAbs()
            .maxCoeff() <= 1e-12);
}

TEST_CASE("duplicating the batch leaves loss and gradients unchanged") {
  BlockPartition part = two_blocks(2, 3);
  Rng rng(41);
  DvcModel m = init_model({1, 0}, part, 2, rng);
  Matrix rows = random_rows(3, 5, 43);
  std::vector<int> labels{1, 0, 1};

  Matrix doubled(6, 5);
  doubled << rows, rows;
  std::vector<int> labels2{1, 0, 1, 1, 0, 1};

  BackwardResult a = backward(m, rows, labels);
  BackwardResult b = backward(m, doubled, labels2);
  CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-12));
  CHECK((a.grads.head.W - b.grads.head.W).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((a.grads.cells[1].U - b.grads.cells[1].U).cwiseAbs().maxCoeff() <=
        1e-12);
}

TEST_CASE("model serialization preserves the forward map exactly") {
  BlockPartition part = two_blocks(3, 3);
  Rng rng(53);
  DvcModel m = init_model({0, 1}, part, 4, rng);
  DvcModel back = DvcModel::from_json(m.to_json());
  CHECK(back.block_ids == m.block_ids);
  CHECK(back.q == m.q);
  CHECK(back.K == m.K);
  Matrix rows = random_rows(5, 6, 59);
  ForwardTrace a = forward_batch(m, rows);
  ForwardTrace b = forward_batch(back, rows);
  CHECK((a.posteriors - b.posteriors).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("dropout: rate 0 is a no-op, masks are sampled otherwise") {
  BlockPartition part = two_blocks(3, 3);
  Rng rng(61);
  DvcModel m = init_model({0, 1}, part, 2, rng);
  Matrix rows = random_rows(8, 6, 67);

  Rng drop_rng(7);
  ForwardTrace off = forward_batch(m, rows, DropoutConfig{0.0}, &drop_rng);
  ForwardTrace plain = forward_batch(m, rows);
  CHECK((off.posteriors - plain.posteriors).cwiseAbs().maxCoeff() == 0.0);
  CHECK(off.mask_i.empty());

  Rng drop_rng2(7);
  ForwardTrace on = forward_batch(m, rows, DropoutConfig{0.5}, &drop_rng2);
  REQUIRE(on.mask_i.size() == 2);
  bool zeroed = false, scaled = false;
  for (Eigen::Index i = 0; i < on.mask_i[0].size(); ++i) {
    const double v = on.mask_i[0].reshaped()[i];
    if (v == 0.0) zeroed = true;
    if (v == 2.0) scaled = true;
    CHECK((v == 0.0 || v == 2.0));
  }
  CHECK(zeroed);
  CHECK(scaled);
}
