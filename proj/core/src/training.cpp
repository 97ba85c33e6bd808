#include "dvc/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dvc {

void TrainConfig::validate() const {
  if (lr < 0) throw std::invalid_argument("config: lr >= 0");
  if (l2 < 0) throw std::invalid_argument("config: l2 >= 0");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size >= 1");
  if (epochs < 1) throw std::invalid_argument("config: epochs >= 1");
  if (cv_folds < 2) throw std::invalid_argument("config: cv_folds >= 2");
  if (dropout < 0 || dropout >= 1) {
    throw std::invalid_argument("config: dropout in [0, 1)");
  }
  if (loss_tol < 0) throw std::invalid_argument("config: loss_tol >= 0");
}

std::string TrainConfig::to_json() const {
  nlohmann::json j;
  j["lr"] = lr;
  j["batch_size"] = batch_size;
  j["epochs"] = epochs;
  j["l2"] = l2;
  j["dropout"] = dropout;
  j["loss_tol"] = loss_tol;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["adam_eps"] = adam_eps;
  j["seed"] = seed;
  j["cv_folds"] = cv_folds;
  j["jobs"] = jobs;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  TrainConfig cfg;
  if (j.contains("lr")) cfg.lr = j["lr"].get<double>();
  if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<int>();
  if (j.contains("epochs")) cfg.epochs = j["epochs"].get<int>();
  if (j.contains("l2")) cfg.l2 = j["l2"].get<double>();
  if (j.contains("dropout")) cfg.dropout = j["dropout"].get<double>();
  if (j.contains("loss_tol")) cfg.loss_tol = j["loss_tol"].get<double>();
  if (j.contains("beta1")) cfg.beta1 = j["beta1"].get<double>();
  if (j.contains("beta2")) cfg.beta2 = j["beta2"].get<double>();
  if (j.contains("adam_eps")) cfg.adam_eps = j["adam_eps"].get<double>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("cv_folds")) cfg.cv_folds = j["cv_folds"].get<int>();
  if (j.contains("jobs")) cfg.jobs = j["jobs"].get<int>();
  cfg.validate();
  return cfg;
}

std::string FitReport::to_json() const {
  nlohmann::json j;
  j["train_error"] = train_error;
  j["loss_curve"] = loss_curve;
  return j.dump(2);
}

FitReport train(DvcModel& model, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  if (data.K > model.K) {
    throw std::invalid_argument("train: dataset has more classes than model");
  }
  const Eigen::Index n = data.n();

  Rng shuffle_rng(Rng::derive(cfg.seed, 0x72, 1));
  Rng dropout_rng(Rng::derive(cfg.seed, 0xd0, 2));
  AdamState adam;
  AdamConfig adam_cfg{cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps};
  DropoutConfig drop{cfg.dropout};
  std::vector<ParamRef> params = param_refs(model.params);

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  FitReport report;
  report.loss_curve.reserve(std::size_t(cfg.epochs));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    int batches = 0;
    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const Eigen::Index stop = std::min(n, start + cfg.batch_size);
      const Eigen::Index bsz = stop - start;
      Matrix rows(bsz, data.p());
      for (Eigen::Index j = 0; j < data.p(); ++j) {  // column-major gather
        for (Eigen::Index i = 0; i < bsz; ++i) {
          rows(i, j) = data.X(order[std::size_t(start + i)], j);
        }
      }
      std::vector<int> labels;
      labels.reserve(std::size_t(bsz));
      for (Eigen::Index i = start; i < stop; ++i) {
        labels.push_back(data.y[std::size_t(order[std::size_t(i)])]);
      }
      BackwardResult back = backward(model, rows, labels, cfg.l2, drop,
                                     cfg.dropout > 0 ? &dropout_rng : nullptr);
      std::vector<ParamRef> grads = param_refs(back.grads);
      adam.step(params, grads, adam_cfg);
      epoch_loss += back.loss;
      ++batches;
    }
    report.loss_curve.push_back(epoch_loss / double(batches));
    if (cfg.loss_tol > 0 && report.loss_curve.back() <= cfg.loss_tol) break;
  }

  for (const ParamRef& p : params) {
    for (Eigen::Index i = 0; i < p.size; ++i) {
      if (!std::isfinite(p.data[i])) {
        throw std::runtime_error("train: parameters diverged to non-finite values");
      }
    }
  }
  report.train_error = evaluate_error(model, data);
  return report;
}

namespace {
constexpr Eigen::Index kEvalChunk = 512;
}

std::vector<int> predict_labels(const DvcModel& model, const Dataset& data) {
  if (data.n() == 0) throw std::invalid_argument("predict: empty dataset");
  std::vector<int> pred;
  pred.reserve(std::size_t(data.n()));
  for (Eigen::Index start = 0; start < data.n(); start += kEvalChunk) {
    const Eigen::Index stop = std::min(data.n(), start + kEvalChunk);
    ForwardTrace tr =
        forward_batch(model, data.X.middleRows(start, stop - start));
    for (Eigen::Index j = 0; j < stop - start; ++j) {
      pred.push_back(predict_class(tr.posteriors.col(j)));
    }
  }
  return pred;
}

std::vector<double> positive_scores(const DvcModel& model,
                                    const Dataset& data) {
  if (model.K != 2) {
    throw std::invalid_argument("positive_scores: binary models only");
  }
  std::vector<double> scores;
  scores.reserve(std::size_t(data.n()));
  for (Eigen::Index start = 0; start < data.n(); start += kEvalChunk) {
    const Eigen::Index stop = std::min(data.n(), start + kEvalChunk);
    ForwardTrace tr =
        forward_batch(model, data.X.middleRows(start, stop - start));
    for (Eigen::Index j = 0; j < stop - start; ++j) {
      scores.push_back(tr.posteriors(1, j));
    }
  }
  return scores;
}

double evaluate_error(const DvcModel& model, const Dataset& data) {
  const std::vector<int> pred = predict_labels(model, data);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] != data.y[i]) ++wrong;
  }
  return double(wrong) / double(pred.size());
}

double cross_validate(const std::vector<int>& chain_prefix,
                      const BlockPartition& partition, const Dataset& data,
                      const TrainConfig& cfg,
                      const std::vector<int>* fold_assignment) {
  cfg.validate();
  if (cfg.cv_folds > int(data.n())) {
    throw std::invalid_argument("cross_validate: more folds than samples");
  }
  std::vector<int> folds;
  if (fold_assignment) {
    folds = *fold_assignment;
  } else {
    folds = stratified_folds(data.y, cfg.cv_folds, cfg.seed);
  }

  double err_sum = 0.0;
  std::size_t total = 0;
  for (int f = 0; f < cfg.cv_folds; ++f) {
    std::vector<int> train_idx, held_idx;
    for (std::size_t i = 0; i < folds.size(); ++i) {
      (folds[i] == f ? held_idx : train_idx).push_back(int(i));
    }
    if (held_idx.empty()) continue;
    Dataset train_fold = data.subset(train_idx);
    train_fold.validate();  // every class must appear in the training folds
    Dataset held_fold = data.subset(held_idx);

    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = Rng::derive(cfg.seed, 0xcf, std::uint64_t(f));
    Rng init_rng(Rng::derive(fold_cfg.seed, 0x11, 3));
    DvcModel model = init_model(chain_prefix, partition, data.K, init_rng);
    train(model, train_fold, fold_cfg);

    const std::vector<int> pred = predict_labels(model, held_fold);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] != held_fold.y[i]) err_sum += 1.0;
    }
    total += pred.size();
  }
  return err_sum / double(total);
}

}  // namespace dvc
