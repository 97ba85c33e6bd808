#pragma once

#include "dvc/data.hpp"
#include "dvc/model.hpp"

#include <string>
#include <vector>

namespace dvc {

struct TrainConfig {
  double lr = 1e-3;
  int batch_size = 32;
  int epochs = 200;
  double l2 = 0.0;
  double dropout = 0.0;
  /// When > 0, stop once the mean epoch loss drops to this level; the loss
  /// curve then ends early. 0 disables early stopping.
  double loss_tol = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  int cv_folds = 5;
  int jobs = 1;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

struct FitReport {
  double train_error = 0.0;
  std::vector<double> loss_curve;  // objective per epoch

  std::string to_json() const;
};

/// Mini-batch Adam over shuffled epochs; shuffling and dropout are driven by
/// cfg.seed. The input dataset is never mutated. Throws if parameters go
/// non-finite.
FitReport train(DvcModel& model, const Dataset& data, const TrainConfig& cfg);

/// Fraction of samples whose argmax posterior differs from the label
/// (argmax ties resolve to the lowest class index).
double evaluate_error(const DvcModel& model, const Dataset& data);

std::vector<int> predict_labels(const DvcModel& model, const Dataset& data);

/// Class-1 posterior per sample; the AUC score for binary problems.
std::vector<double> positive_scores(const DvcModel& model,
                                    const Dataset& data);

/// Stratified k-fold CV error for a chain prefix: each fold trains a fresh
/// model on the remaining folds. Fold assignment comes from cfg.seed unless
/// a precomputed assignment is given.
double cross_validate(const std::vector<int>& chain_prefix,
                      const BlockPartition& partition, const Dataset& data,
                      const TrainConfig& cfg,
                      const std::vector<int>* fold_assignment = nullptr);

}  // namespace dvc
