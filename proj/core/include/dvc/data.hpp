#pragma once

#include "dvc/numerics.hpp"

#include <string>
#include <vector>

namespace dvc {

struct Dataset {
  Matrix X;                               // n x p
  std::vector<int> y;                     // labels in 0..K-1
  int K = 0;                              // class count
  std::vector<std::string> feature_names; // size p
  std::vector<std::string> class_names;   // label -> original string

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index p() const { return X.cols(); }

  Dataset subset(const std::vector<int>& indices) const;
  /// Throws unless labels are in range, sizes agree, and every class in
  /// 0..K-1 occurs at least once.
  void validate() const;
};

/// Header row required; label column selected by name. Labels are mapped to
/// 0..K-1 in order of first appearance. Throws with row/column location on a
/// non-numeric or missing feature cell.
Dataset load_csv(const std::string& path, const std::string& label_column);

void save_csv(const Dataset& data, const std::string& path,
              const std::string& label_column = "label");

/// Per-feature z-score transform fitted on a training set. Zero-variance
/// features map to 0.
struct Scaler {
  Vector mean;
  Vector sd;  // 0 marks a zero-variance feature

  static Scaler fit(const Dataset& train);
  void apply(Dataset& data) const;
};

/// Stratified random train/test split; deterministic by seed. Throws if any
/// class has fewer than 2 samples.
std::pair<Dataset, Dataset> split(const Dataset& data, double test_fraction,
                                  std::uint64_t seed);

/// Stratified fold assignment: returns fold index per sample, folds sized
/// within one sample of each other per class.
std::vector<int> stratified_folds(const std::vector<int>& y, int folds,
                                  std::uint64_t seed);

struct SimConfig {
  int n = 1000;
  std::vector<Vector> component_means;  // one per mixture component
  double variance = 0.25;               // diagonal element
  int noise_dims = 80;
  bool correlated = false;  // second half of base dims mirrors the first
  std::uint64_t seed = 0;

  /// The four-component mixture over 20 base dimensions used throughout the
  /// simulation studies.
  static SimConfig standard(int total_dims, std::uint64_t seed);
  /// Variant where dims 10..19 carry no class signal but satisfy
  /// Cov(X_i, X_{i+10}) = 1 within every component.
  static SimConfig correlated_variant(int total_dims, std::uint64_t seed);
};

struct SimResult {
  Dataset data;
  std::vector<int> relevant_features;  // ground-truth set for F1
};

SimResult simulate_gmm(const SimConfig& cfg);

double metric_accuracy(const std::vector<int>& pred,
                       const std::vector<int>& truth);

/// Rank-statistic AUC with midrank tie handling; scores are posterior
/// probabilities of class 1. Throws if either class is absent.
double metric_auc(const std::vector<double>& scores,
                  const std::vector<int>& truth);

/// F1 of a selected feature set against the relevant set; 0 when precision
/// and recall are both 0.
double metric_f1_selection(const std::vector<int>& selected,
                           const std::vector<int>& relevant);

}  // namespace dvc
