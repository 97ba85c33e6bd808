#include "dvc/chain.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace dvc {

namespace {

namespace fs = std::filesystem;

// Runs fn(i) for i in [0, n); each task writes only its own result slot, so
// the outcome does not depend on the worker count.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  jobs = std::max(1, std::min(jobs, n));
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
  for (int w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
      } catch (...) {
        errors[std::size_t(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

std::string ChainResult::summary_json() const {
  nlohmann::json j;
  j["order"] = order;
  j["train_errors"] = train_errors;
  j["cv_errors"] = cv_errors;
  j["S"] = S;
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& step : audit) {
    nlohmann::json cands = nlohmann::json::array();
    for (const auto& c : step) {
      cands.push_back({{"block_id", c.block_id}, {"train_error", c.train_error}});
    }
    steps.push_back(std::move(cands));
  }
  j["greedy_audit"] = std::move(steps);
  return j.dump(2);
}

ChainResult build_chain(const BlockPartition& partition, const Dataset& data,
                        const TrainConfig& cfg) {
  partition.validate();
  data.validate();
  cfg.validate();
  const int V = partition.V();

  ChainResult result;
  std::vector<int> unused;
  for (int v = 0; v < V; ++v) unused.push_back(v);

  for (int step = 1; step <= V; ++step) {
    struct Candidate {
      int block_id;
      double train_error;
      DvcModel model;
    };
    std::vector<Candidate> candidates(unused.size());

    parallel_for(int(unused.size()), cfg.jobs, [&](int ci) {
      const int block_id = unused[std::size_t(ci)];
      std::vector<int> prefix = result.order;
      prefix.push_back(block_id);

      TrainConfig cand_cfg = cfg;
      cand_cfg.seed =
          Rng::derive(cfg.seed, std::uint64_t(step), std::uint64_t(block_id));
      Rng init_rng(Rng::derive(cand_cfg.seed, 0x11, 3));
      DvcModel model = init_model(prefix, partition, data.K, init_rng);
      FitReport report = train(model, data, cand_cfg);
      candidates[std::size_t(ci)] =
          Candidate{block_id, report.train_error, std::move(model)};
    });

    // Argmin in block-id order; candidates are already sorted by block id.
    int best = 0;
    std::vector<CandidateRecord> step_audit;
    for (int ci = 0; ci < int(candidates.size()); ++ci) {
      step_audit.push_back(
          {candidates[std::size_t(ci)].block_id,
           candidates[std::size_t(ci)].train_error});
      if (candidates[std::size_t(ci)].train_error <
          candidates[std::size_t(best)].train_error) {
        best = ci;
      }
    }
    result.audit.push_back(std::move(step_audit));
    result.order.push_back(candidates[std::size_t(best)].block_id);
    result.train_errors.push_back(candidates[std::size_t(best)].train_error);
    result.models.push_back(std::move(candidates[std::size_t(best)].model));
    unused.erase(std::find(unused.begin(), unused.end(), result.order.back()));
  }
  return result;
}

void global_select(ChainResult& chain, const BlockPartition& partition,
                   const Dataset& data, const TrainConfig& cfg) {
  const int V = chain.V();
  if (V == 0) throw std::invalid_argument("global_select: chain not built");

  // One shared fold split so the comparison across lengths is paired.
  const std::vector<int> folds =
      stratified_folds(data.y, cfg.cv_folds, cfg.seed);

  chain.cv_errors.assign(std::size_t(V), 0.0);
  parallel_for(V, cfg.jobs, [&](int li) {
    std::vector<int> prefix(chain.order.begin(),
                            chain.order.begin() + li + 1);
    TrainConfig cv_cfg = cfg;
    cv_cfg.seed = Rng::derive(cfg.seed, 0x9e, std::uint64_t(li + 1));
    chain.cv_errors[std::size_t(li)] =
        cross_validate(prefix, partition, data, cv_cfg, &folds);
  });

  int best = 0;
  for (int l = 1; l < V; ++l) {
    if (chain.cv_errors[std::size_t(l)] < chain.cv_errors[std::size_t(best)]) {
      best = l;
    }
  }
  chain.S = best + 1;
}

std::vector<int> selected_variables(const ChainResult& chain, int S) {
  if (S < 1 || S > chain.V()) {
    throw std::out_of_range("selected_variables: S out of range");
  }
  const DvcModel& model = chain.models[std::size_t(S - 1)];
  return model.used_features();
}

void save_chain(const ChainResult& chain, const BlockPartition& partition,
                const std::string& dir) {
  fs::create_directories(dir);
  write_file(fs::path(dir) / "chain.json", chain.summary_json());
  write_file(fs::path(dir) / "partition.json", partition.to_json());
  for (int l = 1; l <= chain.V(); ++l) {
    char name[32];
    std::snprintf(name, sizeof(name), "model_%03d.json", l);
    write_file(fs::path(dir) / name,
               chain.models[std::size_t(l - 1)].to_json());
  }
}

LoadedChain load_chain(const std::string& dir) {
  LoadedChain loaded;
  nlohmann::json j =
      nlohmann::json::parse(read_file(fs::path(dir) / "chain.json"));
  loaded.chain.order = j.at("order").get<std::vector<int>>();
  loaded.chain.train_errors = j.at("train_errors").get<std::vector<double>>();
  loaded.chain.cv_errors = j.at("cv_errors").get<std::vector<double>>();
  loaded.chain.S = j.at("S").get<int>();
  loaded.partition =
      BlockPartition::from_json(read_file(fs::path(dir) / "partition.json"));
  for (int l = 1; l <= int(loaded.chain.order.size()); ++l) {
    char name[32];
    std::snprintf(name, sizeof(name), "model_%03d.json", l);
    loaded.chain.models.push_back(
        DvcModel::from_json(read_file(fs::path(dir) / name)));
  }
  return loaded;
}

}  // namespace dvc
