#pragma once

#include "dvc/data.hpp"
#include "dvc/numerics.hpp"

#include <string>
#include <vector>

namespace dvc {

struct VariableBlock {
  int id = 0;
  std::vector<int> feature_indices;

  int size() const { return int(feature_indices.size()); }
};

struct BlockPartition {
  std::vector<VariableBlock> blocks;
  int total_features = 0;

  int V() const { return int(blocks.size()); }
  /// Smallest block size; used by the state-size rule.
  int min_block_size() const;
  /// Throws unless blocks are disjoint, nonempty, and exhaustive.
  void validate() const;

  std::string to_json() const;
  static BlockPartition from_json(const std::string& text);
};

/// Sample Pearson correlation. Throws on length mismatch, length < 2, or a
/// constant column.
double pearson_correlation(const Vector& col_a, const Vector& col_b);

enum class SeedRule {
  /// Seed each block on the remaining feature with the strongest |r| link to
  /// another remaining feature. Keeps correlated groups together even when
  /// most features are noise.
  MaxCorrelation,
  /// Uniform random seed among remaining features.
  Random,
};

struct PartitionConfig {
  int block_size = 10;
  SeedRule seed_rule = SeedRule::MaxCorrelation;
  /// When > 0, grow a block only while |r| with the seed stays >= threshold
  /// (still capped at block_size).
  double correlation_threshold = 0.0;
};

/// Greedy correlation grouping: pick a seed, attach the block_size-1
/// remaining features of highest |r| with it, repeat. Constant features
/// correlate 0 with everything. Ties break toward the lower feature index.
BlockPartition partition_variables(const Dataset& data,
                                   const PartitionConfig& cfg, Rng& rng);

BlockPartition partition_variables(const Dataset& data, int block_size,
                                   Rng& rng);

}  // namespace dvc
