#include "dvc/data.hpp"

#include <algorithm>
#include <cmath>
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace dvc {

Dataset Dataset::subset(const std::vector<int>& indices) const {
  Dataset out;
  out.K = K;
  out.feature_names = feature_names;
  out.class_names = class_names;
  out.X.resize(Eigen::Index(indices.size()), X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {  // column-major gather
    for (std::size_t i = 0; i < indices.size(); ++i) {
      out.X(Eigen::Index(i), j) = X(indices[i], j);
    }
  }
  out.y.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out.y.push_back(y[indices[i]]);
  }
  return out;
}

void Dataset::validate() const {
  if (Eigen::Index(y.size()) != X.rows()) {
    throw std::invalid_argument("dataset: row count and label count differ");
  }
  if (K < 1) throw std::invalid_argument("dataset: K must be >= 1");
  std::vector<int> seen(K, 0);
  for (int label : y) {
    if (label < 0 || label >= K) {
      throw std::invalid_argument("dataset: label out of range");
    }
    seen[label] = 1;
  }
  for (int k = 0; k < K; ++k) {
    if (!seen[k]) {
      throw std::invalid_argument("dataset: class " + std::to_string(k) +
                                  " has no samples");
    }
  }
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    out.push_back(field);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string strip(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_cell(const std::string& raw, std::size_t row, std::size_t col) {
  const std::string s = strip(raw);
  if (s.empty()) {
    throw std::runtime_error("csv: missing value at row " +
                             std::to_string(row) + ", column " +
                             std::to_string(col));
  }
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) {
    throw std::runtime_error("csv: non-numeric value '" + s + "' at row " +
                             std::to_string(row) + ", column " +
                             std::to_string(col));
  }
  return v;
}

}  // namespace

Dataset load_csv(const std::string& path, const std::string& label_column) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("csv: cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("csv: empty file");
  std::vector<std::string> header = split_line(line);
  for (auto& h : header) h = strip(h);

  int label_idx = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == label_column) {
      label_idx = int(i);
      break;
    }
  }
  if (label_idx < 0) {
    throw std::runtime_error("csv: label column '" + label_column +
                             "' not found in header");
  }

  Dataset data;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (int(i) != label_idx) data.feature_names.push_back(header[i]);
  }

  std::vector<std::vector<double>> rows;
  std::vector<std::string> raw_labels;
  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (strip(line).empty()) continue;
    std::vector<std::string> cells = split_line(line);
    if (cells.size() != header.size()) {
      throw std::runtime_error("csv: row " + std::to_string(row_no) + " has " +
                               std::to_string(cells.size()) +
                               " fields, expected " +
                               std::to_string(header.size()));
    }
    std::vector<double> row;
    row.reserve(header.size() - 1);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (int(c) == label_idx) {
        raw_labels.push_back(strip(cells[c]));
      } else {
        row.push_back(parse_cell(cells[c], row_no, c + 1));
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("csv: no data rows in " + path);

  // Labels mapped to 0..K-1 by first appearance.
  std::map<std::string, int> label_map;
  for (const std::string& s : raw_labels) {
    if (!label_map.count(s)) {
      const int next = int(data.class_names.size());
      label_map[s] = next;
      data.class_names.push_back(s);
    }
  }
  data.K = int(data.class_names.size());
  data.y.reserve(raw_labels.size());
  for (const std::string& s : raw_labels) data.y.push_back(label_map[s]);

  data.X.resize(Eigen::Index(rows.size()), Eigen::Index(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      data.X(Eigen::Index(i), Eigen::Index(j)) = rows[i][j];
    }
  }
  data.validate();
  return data;
}

void save_csv(const Dataset& data, const std::string& path,
              const std::string& label_column) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("csv: cannot write " + path);
  out.precision(17);
  for (Eigen::Index j = 0; j < data.p(); ++j) {
    out << data.feature_names[std::size_t(j)] << ',';
  }
  out << label_column << '\n';
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    for (Eigen::Index j = 0; j < data.p(); ++j) {
      out << data.X(i, j) << ',';
    }
    out << data.class_names[std::size_t(data.y[std::size_t(i)])] << '\n';
  }
}

Scaler Scaler::fit(const Dataset& train) {
  Scaler s;
  const Eigen::Index n = train.n();
  s.mean = train.X.colwise().mean();
  s.sd = Vector::Zero(train.p());
  for (Eigen::Index j = 0; j < train.p(); ++j) {
    const double var =
        (train.X.col(j).array() - s.mean[j]).square().sum() / double(n - 1);
    s.sd[j] = var > 0 ? std::sqrt(var) : 0.0;
  }
  return s;
}

void Scaler::apply(Dataset& data) const {
  if (data.p() != mean.size()) {
    throw std::invalid_argument("scaler: feature count mismatch");
  }
  for (Eigen::Index j = 0; j < data.p(); ++j) {
    if (sd[j] > 0) {
      data.X.col(j) = (data.X.col(j).array() - mean[j]) / sd[j];
    } else {
      data.X.col(j).setZero();
    }
  }
}

std::pair<Dataset, Dataset> split(const Dataset& data, double test_fraction,
                                  std::uint64_t seed) {
  data.validate();
  Rng rng(Rng::derive(seed, 0x51, 17));
  std::vector<std::vector<int>> by_class(std::size_t(data.K));
  for (std::size_t i = 0; i < data.y.size(); ++i) {
    by_class[std::size_t(data.y[i])].push_back(int(i));
  }
  std::vector<int> train_idx, test_idx;
  for (auto& idx : by_class) {
    if (idx.size() < 2) {
      throw std::runtime_error("split: a class has fewer than 2 samples");
    }
    rng.shuffle(idx.begin(), idx.end());
    std::size_t n_test =
        std::size_t(std::llround(double(idx.size()) * test_fraction));
    n_test = std::min(n_test, idx.size() - 1);
    if (test_fraction > 0 && n_test == 0) n_test = 1;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      (i < n_test ? test_idx : train_idx).push_back(idx[i]);
    }
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  return {data.subset(train_idx), data.subset(test_idx)};
}

std::vector<int> stratified_folds(const std::vector<int>& y, int folds,
                                  std::uint64_t seed) {
  if (folds < 2) throw std::invalid_argument("folds must be >= 2");
  int K = 0;
  for (int label : y) K = std::max(K, label + 1);
  Rng rng(Rng::derive(seed, 0xf01d5, 23));
  std::vector<int> assignment(y.size(), -1);
  int next_fold = 0;
  for (int k = 0; k < K; ++k) {
    std::vector<int> idx;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y[i] == k) idx.push_back(int(i));
    }
    rng.shuffle(idx.begin(), idx.end());
    // Round-robin continues across classes so fold sizes stay balanced.
    for (int i : idx) {
      assignment[std::size_t(i)] = next_fold;
      next_fold = (next_fold + 1) % folds;
    }
  }
  return assignment;
}

SimConfig SimConfig::standard(int total_dims, std::uint64_t seed) {
  if (total_dims < 20) {
    throw std::invalid_argument("simulate: need at least 20 dimensions");
  }
  SimConfig cfg;
  cfg.seed = seed;
  cfg.noise_dims = total_dims - 20;
  cfg.component_means.resize(4, Vector::Zero(20));
  cfg.component_means[0].head(10).setConstant(5.0);
  cfg.component_means[1].head(10).setConstant(10.0);
  cfg.component_means[2].tail(10).setConstant(5.0);
  cfg.component_means[3].tail(10).setConstant(10.0);
  return cfg;
}

SimConfig SimConfig::correlated_variant(int total_dims, std::uint64_t seed) {
  SimConfig cfg = standard(total_dims, seed);
  cfg.correlated = true;
  cfg.component_means[0].head(10).setConstant(5.0);
  cfg.component_means[1].head(10).setConstant(10.0);
  cfg.component_means[2].setZero();
  cfg.component_means[2].head(10).setConstant(-5.0);
  cfg.component_means[3].setZero();
  cfg.component_means[3].head(10).setConstant(-10.0);
  return cfg;
}

SimResult simulate_gmm(const SimConfig& cfg) {
  if (cfg.component_means.empty() || cfg.variance <= 0) {
    throw std::invalid_argument("simulate: invalid config");
  }
  const int n_comp = int(cfg.component_means.size());
  const int base = int(cfg.component_means[0].size());
  const int p = base + cfg.noise_dims;
  const double sd = std::sqrt(cfg.variance);

  Rng rng(Rng::derive(cfg.seed, 0x9b, 31));
  SimResult result;
  result.data.X.resize(cfg.n, p);
  result.data.y.reserve(std::size_t(cfg.n));
  result.data.K = n_comp;

  for (int i = 0; i < cfg.n; ++i) {
    const int comp = rng.uniform_int(0, n_comp - 1);
    result.data.y.push_back(comp);
    const Vector& mu = cfg.component_means[std::size_t(comp)];
    if (cfg.correlated) {
      // Dims 0..9 carry the class signal; dim i+10 = 4 * (X_i - mu_i), so
      // within every component Cov(X_i, X_{i+10}) = 4 * variance = 1 and the
      // per-half covariance blocks stay diagonal.
      for (int j = 0; j < 10; ++j) {
        const double eps = rng.normal(0.0, sd);
        result.data.X(i, j) = mu[j] + eps;
        result.data.X(i, j + 10) = 4.0 * eps;
      }
    } else {
      for (int j = 0; j < base; ++j) {
        result.data.X(i, j) = mu[j] + rng.normal(0.0, sd);
      }
    }
    for (int j = base; j < p; ++j) {
      result.data.X(i, j) = rng.normal(0.0, 1.0);
    }
  }

  for (int j = 0; j < p; ++j) {
    result.data.feature_names.push_back("x" + std::to_string(j));
  }
  for (int k = 0; k < n_comp; ++k) {
    result.data.class_names.push_back(std::to_string(k));
  }
  const int n_relevant = cfg.correlated ? 10 : base;
  for (int j = 0; j < n_relevant; ++j) result.relevant_features.push_back(j);
  result.data.validate();
  return result;
}

double metric_accuracy(const std::vector<int>& pred,
                       const std::vector<int>& truth) {
  if (pred.empty() || pred.size() != truth.size()) {
    throw std::invalid_argument("accuracy: size mismatch or empty input");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == truth[i]) ++correct;
  }
  return double(correct) / double(pred.size());
}

double metric_auc(const std::vector<double>& scores,
                  const std::vector<int>& truth) {
  if (scores.empty() || scores.size() != truth.size()) {
    throw std::invalid_argument("auc: size mismatch or empty input");
  }
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * (double(i + 1) + double(j + 1));
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = midrank;
    i = j + 1;
  }
  double rank_sum = 0;
  std::size_t n_pos = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (truth[k] == 1) {
      rank_sum += ranks[k];
      ++n_pos;
    } else if (truth[k] != 0) {
      throw std::invalid_argument("auc: labels must be 0/1");
    }
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw std::invalid_argument("auc: both classes must be present");
  }
  return (rank_sum - double(n_pos) * double(n_pos + 1) / 2.0) /
         (double(n_pos) * double(n_neg));
}

double metric_f1_selection(const std::vector<int>& selected,
                           const std::vector<int>& relevant) {
  if (selected.empty() || relevant.empty()) return 0.0;
  std::vector<int> s = selected, r = relevant;
  std::sort(s.begin(), s.end());
  std::sort(r.begin(), r.end());
  std::vector<int> inter;
  std::set_intersection(s.begin(), s.end(), r.begin(), r.end(),
                        std::back_inserter(inter));
  const double prec = double(inter.size()) / double(s.size());
  const double rec = double(inter.size()) / double(r.size());
  if (prec + rec == 0) return 0.0;
  return 2.0 * prec * rec / (prec + rec);
}

}  // namespace dvc
