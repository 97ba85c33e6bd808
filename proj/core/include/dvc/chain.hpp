#pragma once

#include "dvc/blocks.hpp"
#include "dvc/training.hpp"

#include <string>
#include <vector>

namespace dvc {

struct CandidateRecord {
  int block_id = 0;
  double train_error = 0.0;
};

struct ChainResult {
  std::vector<int> order;            // B_1..B_V
  std::vector<DvcModel> models;      // D_1..D_V, models[l-1] uses B_1..B_l
  std::vector<double> train_errors;  // per length
  std::vector<double> cv_errors;     // per length (after global_select)
  int S = 0;                         // selected chain length

  int V() const { return int(order.size()); }
  /// Every candidate's training error at every greedy step.
  std::vector<std::vector<CandidateRecord>> audit;

  std::string summary_json() const;
};

/// Forward step-wise greedy search: at each step, train one fresh candidate
/// model per unused block appended to the current prefix and keep the block
/// with minimum training error (ties toward the lower block id). The winning
/// candidate is retained as the sub-chain model for that length.
ChainResult build_chain(const BlockPartition& partition, const Dataset& data,
                        const TrainConfig& cfg);

/// Cross-validates every prefix length over one shared fold split and sets
/// S to the smallest length attaining the minimum CV error.
void global_select(ChainResult& chain, const BlockPartition& partition,
                   const Dataset& data, const TrainConfig& cfg);

/// Feature indices of blocks B_1..B_S, in chain order.
std::vector<int> selected_variables(const ChainResult& chain, int S);

/// Persists order/errors/S plus one model file per sub-chain length into a
/// directory (chain.json, model_001.json, ...).
void save_chain(const ChainResult& chain, const BlockPartition& partition,
                const std::string& dir);

struct LoadedChain {
  ChainResult chain;
  BlockPartition partition;
};

LoadedChain load_chain(const std::string& dir);

}  // namespace dvc
