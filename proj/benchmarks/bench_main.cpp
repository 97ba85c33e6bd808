#include "dvc/chain.hpp"

#include <benchmark/benchmark.h>

#include <vector>

namespace {

using namespace dvc;

DvcModel make_model(int cells, int q, int batch, Matrix& X,
                    std::vector<int>& labels) {
  BlockPartition part;
  for (int b = 0; b < cells; ++b) {
    VariableBlock blk;
    blk.id = b;
    for (int j = 0; j < q; ++j) blk.feature_indices.push_back(b * q + j);
    part.blocks.push_back(blk);
  }
  part.total_features = cells * q;
  std::vector<int> prefix(static_cast<std::size_t>(cells));
  for (int b = 0; b < cells; ++b) prefix[std::size_t(b)] = b;
  Rng rng(1);
  DvcModel model = init_model(prefix, part, 4, rng);

  Rng data_rng(2);
  X.resize(batch, cells * q);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index j = 0; j < X.cols(); ++j) X(i, j) = data_rng.normal(0, 1);
  }
  labels.clear();
  for (int i = 0; i < batch; ++i) labels.push_back(data_rng.uniform_int(0, 3));
  return model;
}

void BM_forward_batch(benchmark::State& state) {
  Matrix X;
  std::vector<int> labels;
  DvcModel model =
      make_model(int(state.range(0)), 10, int(state.range(1)), X, labels);
  for (auto _ : state) {
    ForwardTrace tr = forward_batch(model, X);
    benchmark::DoNotOptimize(tr.posteriors.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(1));
}
BENCHMARK(BM_forward_batch)
    ->Args({2, 64})
    ->Args({4, 64})
    ->Args({4, 256})
    ->Args({10, 64});

void BM_backward(benchmark::State& state) {
  Matrix X;
  std::vector<int> labels;
  DvcModel model =
      make_model(int(state.range(0)), 10, int(state.range(1)), X, labels);
  for (auto _ : state) {
    BackwardResult res = backward(model, X, labels, 0.0, DropoutConfig{}, nullptr);
    benchmark::DoNotOptimize(res.loss);
  }
  state.SetItemsProcessed(state.iterations() * state.range(1));
}
BENCHMARK(BM_backward)->Args({2, 64})->Args({4, 64})->Args({4, 256});

void BM_adam_step(benchmark::State& state) {
  Matrix X;
  std::vector<int> labels;
  DvcModel model = make_model(4, 10, 8, X, labels);
  BackwardResult res = backward(model, X, labels, 0.0, DropoutConfig{}, nullptr);
  std::vector<ParamRef> params = param_refs(model.params);
  std::vector<ParamRef> grads = param_refs(res.grads);
  AdamState adam;
  AdamConfig cfg;
  for (auto _ : state) {
    adam.step(params, grads, cfg);
  }
}
BENCHMARK(BM_adam_step);

void BM_train_epochs(benchmark::State& state) {
  SimResult sim = simulate_gmm(SimConfig::standard(100, 5));
  Scaler scaler = Scaler::fit(sim.data);
  scaler.apply(sim.data);
  Rng prng(Rng::derive(5, 0xb1, 0));
  BlockPartition part = partition_variables(sim.data, 10, prng);
  TrainConfig cfg;
  cfg.epochs = int(state.range(0));
  cfg.lr = 0.03;
  cfg.batch_size = 64;
  cfg.seed = 5;
  for (auto _ : state) {
    Rng init(Rng::derive(cfg.seed, 0x11, 3));
    DvcModel model = init_model({part.blocks[0].id}, part, sim.data.K, init);
    FitReport report = train(model, sim.data, cfg);
    benchmark::DoNotOptimize(report.train_error);
  }
}
BENCHMARK(BM_train_epochs)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
