#include "dvc/blocks.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dvc {

int BlockPartition::min_block_size() const {
  int m = total_features;
  for (const auto& b : blocks) m = std::min(m, b.size());
  return m;
}

void BlockPartition::validate() const {
  std::vector<int> seen(std::size_t(total_features), 0);
  int count = 0;
  for (const auto& b : blocks) {
    if (b.feature_indices.empty()) {
      throw std::invalid_argument("partition: empty block");
    }
    for (int f : b.feature_indices) {
      if (f < 0 || f >= total_features || seen[std::size_t(f)]) {
        throw std::invalid_argument("partition: blocks are not disjoint over 0..p-1");
      }
      seen[std::size_t(f)] = 1;
      ++count;
    }
  }
  if (count != total_features) {
    throw std::invalid_argument("partition: blocks do not cover all features");
  }
}

std::string BlockPartition::to_json() const {
  nlohmann::json j;
  j["blocks"] = nlohmann::json::array();
  for (const auto& b : blocks) j["blocks"].push_back(b.feature_indices);
  return j.dump(2);
}

BlockPartition BlockPartition::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  BlockPartition part;
  int id = 0;
  int max_f = -1;
  for (const auto& arr : j.at("blocks")) {
    VariableBlock b;
    b.id = id++;
    for (const auto& f : arr) {
      b.feature_indices.push_back(f.get<int>());
      max_f = std::max(max_f, b.feature_indices.back());
    }
    part.blocks.push_back(std::move(b));
  }
  part.total_features = max_f + 1;
  part.validate();
  return part;
}

double pearson_correlation(const Vector& col_a, const Vector& col_b) {
  if (col_a.size() != col_b.size() || col_a.size() < 2) {
    throw std::invalid_argument("correlation: need equal lengths >= 2");
  }
  const double ma = col_a.mean();
  const double mb = col_b.mean();
  const Eigen::ArrayXd da = col_a.array() - ma;
  const Eigen::ArrayXd db = col_b.array() - mb;
  const double va = da.square().sum();
  const double vb = db.square().sum();
  if (va == 0 || vb == 0) {
    throw std::invalid_argument("correlation: constant column");
  }
  return (da * db).sum() / std::sqrt(va * vb);
}

BlockPartition partition_variables(const Dataset& data,
                                   const PartitionConfig& cfg, Rng& rng) {
  const int p = int(data.p());
  const Eigen::Index n = data.n();
  if (p < 1 || cfg.block_size < 1) {
    throw std::invalid_argument("partition: need p >= 1 and block_size >= 1");
  }
  if (n < 2) throw std::invalid_argument("partition: need at least 2 rows");

  // One pass to |r| for all pairs: standardize columns (constant columns
  // become all-zero, so they correlate 0 with everything), then Z^T Z.
  Matrix Z = data.X;
  for (int j = 0; j < p; ++j) {
    const double m = Z.col(j).mean();
    Z.col(j).array() -= m;
    const double norm = Z.col(j).norm();
    if (norm > 0) {
      Z.col(j) /= norm;
    } else {
      Z.col(j).setZero();
    }
  }
  Matrix corr = (Z.transpose() * Z).cwiseAbs();
  corr.diagonal().setZero();

  std::vector<int> remaining(static_cast<std::size_t>(p));
  for (int j = 0; j < p; ++j) remaining[std::size_t(j)] = j;

  BlockPartition part;
  part.total_features = p;
  while (!remaining.empty()) {
    int seed;
    if (cfg.seed_rule == SeedRule::Random || remaining.size() == 1) {
      seed = remaining[std::size_t(rng.uniform_int(0, int(remaining.size()) - 1))];
    } else {
      // Seed = the remaining feature with the strongest |r| link to another
      // remaining feature (ties toward the lower index).
      seed = remaining[0];
      double best = -1.0;
      for (int a : remaining) {
        for (int b : remaining) {
          if (b <= a) continue;
          const double r = corr(a, b);
          if (r > best) {
            best = r;
            seed = a;
          }
        }
      }
    }

    std::vector<std::pair<double, int>> scored;  // (|r|, feature)
    for (int f : remaining) {
      if (f == seed) continue;
      scored.emplace_back(corr(seed, f), f);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });

    VariableBlock block;
    block.id = int(part.blocks.size());
    block.feature_indices.push_back(seed);
    for (const auto& [r, f] : scored) {
      if (block.size() >= cfg.block_size) break;
      if (cfg.correlation_threshold > 0 && r < cfg.correlation_threshold) break;
      block.feature_indices.push_back(f);
    }
    std::sort(block.feature_indices.begin(), block.feature_indices.end());

    std::vector<int> next;
    for (int f : remaining) {
      if (!std::count(block.feature_indices.begin(),
                      block.feature_indices.end(), f)) {
        next.push_back(f);
      }
    }
    remaining = std::move(next);
    part.blocks.push_back(std::move(block));
  }
  part.validate();
  return part;
}

BlockPartition partition_variables(const Dataset& data, int block_size,
                                   Rng& rng) {
  PartitionConfig cfg;
  cfg.block_size = block_size;
  return partition_variables(data, cfg, rng);
}

}  // namespace dvc
