// Command-line front end: simulate / fit / avs / predict / evaluate /
// gradcheck. Every stage drops a manifest.json next to its artifacts with the
// config snapshot, seeds, input fingerprint and timing, so runs can be
// repeated bit-identically.

#include <CLI11.hpp>
#include <json.hpp>

#include "dvc/avs.hpp"
#include "dvc/chain.hpp"

#include <chrono>
#include <cstdio>
#include <map>
#include <filesystem>
#include <fstream>
#include <iostream>

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;
using namespace dvc;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

// FNV-1a over the file bytes; enough to fingerprint inputs in manifests.
std::string fingerprint(const std::string& path) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : read_file(path)) {
    h = (h ^ c) * 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)h);
  return buf;
}

class Stopwatch {
 public:
  double ms() const {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_ =
      std::chrono::steady_clock::now();
};

void write_manifest(const fs::path& dir, const std::string& command,
                    json config, json inputs, json artifacts, double ms) {
  json m;
  m["command"] = command;
  m["config"] = std::move(config);
  m["inputs"] = std::move(inputs);
  m["artifacts"] = std::move(artifacts);
  m["timing_ms"] = ms;
  write_file((dir / "manifest.json").string(), m.dump(2) + "\n");
}

struct CommonOpts {
  std::string data;
  std::string label_col = "label";
  std::uint64_t seed = 0;
  std::string out;
};

void add_train_flags(CLI::App* cmd, TrainConfig& cfg) {
  cmd->add_option("--folds", cfg.cv_folds, "cross-validation folds");
  cmd->add_option("--epochs", cfg.epochs, "training epochs");
  cmd->add_option("--lr", cfg.lr, "Adam learning rate");
  cmd->add_option("--batch", cfg.batch_size, "mini-batch size");
  cmd->add_option("--l2", cfg.l2, "weight decay strength");
  cmd->add_option("--dropout", cfg.dropout, "gate dropout rate");
  cmd->add_option("--loss-tol", cfg.loss_tol,
                  "stop epochs early at this mean loss (0 = off)");
  cmd->add_option("--jobs", cfg.jobs, "worker threads");
}

json scaler_to_json(const Scaler& s) {
  json j;
  j["mean"] = std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size());
  j["sd"] = std::vector<double>(s.sd.data(), s.sd.data() + s.sd.size());
  return j;
}

Scaler scaler_from_json(const json& j) {
  Scaler s;
  auto mean = j.at("mean").get<std::vector<double>>();
  auto sd = j.at("sd").get<std::vector<double>>();
  s.mean = Eigen::Map<Vector>(mean.data(), Eigen::Index(mean.size()));
  s.sd = Eigen::Map<Vector>(sd.data(), Eigen::Index(sd.size()));
  return s;
}

// Model directories carry the label mapping used at fit time; test CSVs may
// list classes in a different first-appearance order, so labels are remapped
// by name before scoring.
void align_labels(Dataset& d, const std::vector<std::string>& class_names) {
  std::vector<int> remap(d.class_names.size(), -1);
  for (std::size_t c = 0; c < d.class_names.size(); ++c) {
    for (std::size_t t = 0; t < class_names.size(); ++t) {
      if (d.class_names[c] == class_names[t]) remap[c] = int(t);
    }
    if (remap[c] < 0) {
      throw std::runtime_error("unknown class label: " + d.class_names[c]);
    }
  }
  for (int& label : d.y) label = remap[std::size_t(label)];
  d.class_names = class_names;
  d.K = int(class_names.size());
  d.validate();
}

struct FittedArtifacts {
  LoadedChain loaded;
  Scaler scaler;
  std::vector<std::string> class_names;
  std::string label_col;
};

FittedArtifacts load_fitted(const std::string& dir) {
  FittedArtifacts art;
  art.loaded = load_chain(dir);
  json meta = json::parse(read_file((fs::path(dir) / "meta.json").string()));
  art.scaler = scaler_from_json(meta.at("scaler"));
  art.class_names = meta.at("class_names").get<std::vector<std::string>>();
  art.label_col = meta.at("label_col").get<std::string>();
  return art;
}

Dataset load_aligned(const FittedArtifacts& art, const std::string& csv,
                     const std::string& label_col) {
  Dataset d = load_csv(csv, label_col.empty() ? art.label_col : label_col);
  align_labels(d, art.class_names);
  art.scaler.apply(d);
  return d;
}

std::vector<DvcModel> selected_models(const FittedArtifacts& art) {
  const auto& chain = art.loaded.chain;
  return {chain.models.begin(), chain.models.begin() + chain.S};
}

// ---------------------------------------------------------------- simulate

int cmd_simulate(const CommonOpts& common, int p, bool correlated, int n) {
  Stopwatch timer;
  SimConfig cfg = correlated ? SimConfig::correlated_variant(p, common.seed)
                             : SimConfig::standard(p, common.seed);
  cfg.n = n;
  SimResult sim = simulate_gmm(cfg);

  fs::create_directories(common.out);
  const fs::path dir(common.out);
  save_csv(sim.data, (dir / "data.csv").string(), common.label_col);

  json meta;
  meta["n"] = cfg.n;
  meta["p"] = int(sim.data.p());
  meta["noise_dims"] = cfg.noise_dims;
  meta["correlated"] = cfg.correlated;
  meta["seed"] = cfg.seed;
  meta["relevant_features"] = sim.relevant_features;
  write_file((dir / "metadata.json").string(), meta.dump(2) + "\n");

  json config = meta;
  write_manifest(dir, "simulate", config, json::object(),
                 json{{"data", "data.csv"}, {"metadata", "metadata.json"}},
                 timer.ms());
  std::cout << "wrote " << (dir / "data.csv").string() << " (" << sim.data.n()
            << " x " << sim.data.p() << ", "
            << sim.relevant_features.size() << " relevant features)\n";
  return 0;
}

// --------------------------------------------------------------------- fit

int cmd_fit(const CommonOpts& common, TrainConfig train_cfg, int block_size,
            const std::string& blocks_file, double test_frac) {
  Stopwatch timer;
  train_cfg.seed = common.seed;
  train_cfg.validate();

  Dataset full = load_csv(common.data, common.label_col);
  fs::create_directories(common.out);
  const fs::path dir(common.out);

  if (test_frac > 0) {
    auto [tr, te] = split(full, test_frac, common.seed);
    save_csv(te, (dir / "test.csv").string(), common.label_col);
    save_csv(tr, (dir / "train.csv").string(), common.label_col);
  } else {
    save_csv(full, (dir / "train.csv").string(), common.label_col);
  }
  // Fitting consumes the emitted training file, never the original CSV, so a
  // later fit on train.csv alone reproduces the same chain byte for byte.
  Dataset train_data = load_csv((dir / "train.csv").string(), common.label_col);

  Scaler scaler = Scaler::fit(train_data);
  scaler.apply(train_data);

  BlockPartition partition;
  if (!blocks_file.empty()) {
    partition = BlockPartition::from_json(read_file(blocks_file));
    partition.validate();
    if (partition.total_features != int(train_data.p())) {
      throw std::runtime_error("block file feature count mismatch");
    }
  } else {
    Rng rng(Rng::derive(common.seed, 0xb1, 0));
    partition = partition_variables(train_data, block_size, rng);
  }

  ChainResult chain = build_chain(partition, train_data, train_cfg);
  global_select(chain, partition, train_data, train_cfg);
  save_chain(chain, partition, common.out);

  json meta;
  meta["label_col"] = common.label_col;
  meta["class_names"] = train_data.class_names;
  meta["feature_names"] = train_data.feature_names;
  meta["scaler"] = scaler_to_json(scaler);
  write_file((dir / "meta.json").string(), meta.dump(2) + "\n");

  std::printf("chain order:");
  for (int b : chain.order) std::printf(" %d", b);
  std::printf("\nselected length S = %d\n", chain.S);
  std::printf("%6s %12s %12s\n", "length", "train error", "cv error");
  for (int l = 1; l <= chain.V(); ++l) {
    std::printf("%6d %12.4f %12.4f%s\n", l,
                chain.train_errors[std::size_t(l - 1)],
                chain.cv_errors[std::size_t(l - 1)],
                l == chain.S ? "  <- S" : "");
  }
  std::printf("selected features:");
  for (int f : selected_variables(chain, chain.S)) std::printf(" %d", f);
  std::printf("\n");

  json config = json::parse(train_cfg.to_json());
  config["block_size"] = block_size;
  config["blocks_file"] = blocks_file;
  config["test_frac"] = test_frac;
  write_manifest(dir, "fit", config,
                 json{{"data", common.data},
                      {"fingerprint", fingerprint(common.data)}},
                 json{{"chain", "chain.json"}, {"meta", "meta.json"}},
                 timer.ms());
  return 0;
}

// --------------------------------------------------------------------- avs

int cmd_avs(const std::string& model_dir, std::string data_csv,
            const std::string& label_col, std::uint64_t seed,
            std::string out_dir, TreeConfig tree_cfg) {
  Stopwatch timer;
  FittedArtifacts art = load_fitted(model_dir);
  if (out_dir.empty()) out_dir = model_dir;
  if (data_csv.empty()) data_csv = (fs::path(model_dir) / "train.csv").string();
  Dataset train_data = load_aligned(art, data_csv, label_col);

  std::vector<DvcModel> models = selected_models(art);
  const int S = int(models.size());
  auto records = compute_nu_dataset(models, train_data);

  std::vector<int> nu_values;
  std::vector<int> histogram(std::size_t(S + 1), 0);
  for (const auto& rec : records) {
    nu_values.push_back(rec.nu);
    histogram[std::size_t(rec.nu - 1)]++;
  }
  std::vector<int> candidates;
  for (int j = 0; j < int(train_data.p()); ++j) candidates.push_back(j);
  VsTree tree = fit_vs_tree(train_data.X, candidates, nu_values, S + 1,
                            tree_cfg, Rng::derive(seed, 0xa5, 0));

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  write_file((dir / "tree.json").string(), tree.to_json());
  write_file((dir / "tree.dot").string(),
             tree.to_dot(train_data.feature_names));
  json report;
  report["chain_length"] = S;
  report["nu_histogram"] = histogram;
  report["n_leaves"] = tree.n_leaves();
  write_file((dir / "avs.json").string(), report.dump(2) + "\n");

  std::printf("nu histogram:");
  for (int l = 1; l <= S + 1; ++l) {
    std::printf(" %d:%d", l, histogram[std::size_t(l - 1)]);
  }
  std::printf("\ntree leaves: %d\n", tree.n_leaves());

  json config;
  config["min_leaf"] = tree_cfg.min_leaf;
  config["max_depth"] = tree_cfg.max_depth;
  config["cv_folds"] = tree_cfg.cv_folds;
  config["leaf_alpha"] = tree_cfg.leaf_alpha;
  config["seed"] = seed;
  write_manifest(dir, "avs", config,
                 json{{"data", data_csv}, {"fingerprint", fingerprint(data_csv)},
                      {"model", model_dir}},
                 json{{"tree", "tree.json"}, {"dot", "tree.dot"},
                      {"report", "avs.json"}},
                 timer.ms());
  return 0;
}

// ----------------------------------------------------- predict / evaluate

int cmd_predict(const std::string& model_dir, const std::string& data_csv,
                const std::string& label_col, bool use_avs,
                const std::string& out_path) {
  Stopwatch timer;
  FittedArtifacts art = load_fitted(model_dir);
  Dataset data = load_aligned(art, data_csv, label_col);
  std::vector<DvcModel> models = selected_models(art);

  json rows = json::array();
  if (use_avs) {
    VsTree tree = VsTree::from_json(
        read_file((fs::path(model_dir) / "tree.json").string()));
    auto preds = predict_avs_dataset(tree, models, data);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      rows.push_back({{"index", i},
                      {"label", art.class_names[std::size_t(preds[i].label)]},
                      {"nu_tilde", preds[i].nu_tilde}});
    }
  } else {
    auto labels = predict_labels(models.back(), data);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      rows.push_back({{"index", i},
                      {"label", art.class_names[std::size_t(labels[i])]}});
    }
  }
  json out;
  out["model"] = model_dir;
  out["avs"] = use_avs;
  out["predictions"] = rows;
  write_file(out_path, out.dump(2) + "\n");
  std::cout << "wrote " << out_path << " (" << rows.size() << " rows, "
            << int(timer.ms()) << " ms)\n";
  return 0;
}

int cmd_evaluate(const std::string& model_dir, const std::string& data_csv,
                 const std::string& label_col, bool use_avs,
                 const std::string& out_path) {
  Stopwatch timer;
  FittedArtifacts art = load_fitted(model_dir);
  Dataset data = load_aligned(art, data_csv, label_col);
  std::vector<DvcModel> models = selected_models(art);

  json report;
  report["model"] = model_dir;
  report["avs"] = use_avs;
  report["n"] = int(data.n());

  std::vector<int> pred;
  if (use_avs) {
    VsTree tree = VsTree::from_json(
        read_file((fs::path(model_dir) / "tree.json").string()));
    auto preds = predict_avs_dataset(tree, models, data);
    std::map<int, std::pair<int, int>> groups;  // nu_tilde -> (n, correct)
    for (std::size_t i = 0; i < preds.size(); ++i) {
      pred.push_back(preds[i].label);
      auto& g = groups[preds[i].nu_tilde];
      g.first++;
      if (preds[i].label == data.y[i]) g.second++;
    }
    json by_group = json::array();
    int routed = 0;
    for (const auto& [nu, g] : groups) {
      by_group.push_back({{"nu_tilde", nu},
                          {"n", g.first},
                          {"accuracy", double(g.second) / g.first}});
      routed += g.first;
    }
    report["groups"] = by_group;
    report["routed_total"] = routed;
  } else {
    pred = predict_labels(models.back(), data);
  }

  const double acc = metric_accuracy(pred, data.y);
  report["accuracy"] = acc;
  std::printf("accuracy: %.4f\n", acc);
  if (data.K == 2) {
    const double auc = metric_auc(positive_scores(models.back(), data), data.y);
    report["auc"] = auc;
    std::printf("auc: %.4f\n", auc);
  }
  if (!out_path.empty()) {
    write_file(out_path, report.dump(2) + "\n");
  }
  (void)timer;
  return 0;
}

// --------------------------------------------------------------- gradcheck

int cmd_gradcheck(std::uint64_t seed, int n_models, int max_cells, int max_q,
                  double tol, bool inject_bug) {
  Stopwatch timer;
  Rng rng(seed);
  double worst = 0.0;
  for (int trial = 0; trial < n_models; ++trial) {
    const int cells = rng.uniform_int(1, max_cells);
    const int q = rng.uniform_int(1, max_q);
    const int K = rng.uniform_int(2, 4);
    const int batch = rng.uniform_int(2, 6);

    BlockPartition part;
    std::vector<int> prefix;
    int feature = 0;
    for (int c = 0; c < cells; ++c) {
      std::vector<int> fs;
      const int p_c = q;  // block size == q keeps the state-size rule at q
      for (int j = 0; j < p_c; ++j) fs.push_back(feature++);
      part.blocks.push_back({c, fs});
      prefix.push_back(c);
    }
    part.total_features = feature;

    Rng init_rng(Rng::derive(seed, 0x6c, std::uint64_t(trial)));
    DvcModel model = init_model(prefix, part, K, init_rng);

    Matrix rows(batch, feature);
    std::vector<int> labels;
    for (int i = 0; i < batch; ++i) {
      for (int j = 0; j < feature; ++j) rows(i, j) = init_rng.normal(0, 1);
      labels.push_back(init_rng.uniform_int(0, K - 1));
    }
    const double l2 = trial % 2 == 0 ? 0.0 : 0.01;

    BackwardResult res = backward(model, rows, labels, l2);
    auto numeric = finite_diff_grad(
        [&] { return backward(model, rows, labels, l2).loss; },
        param_refs(model.params), 1e-5);
    std::vector<ParamRef> grefs = param_refs(res.grads);
    std::size_t k = 0;
    for (const ParamRef& ref : grefs) {
      for (Eigen::Index i = 0; i < ref.size; ++i, ++k) {
        double analytic = ref.data[i];
        if (inject_bug && k == 0) analytic += 0.1;
        const double rel =
            std::abs(analytic - numeric[k]) /
            std::max(1.0, std::max(std::abs(analytic), std::abs(numeric[k])));
        worst = std::max(worst, rel);
      }
    }
  }
  std::printf("gradcheck: %d models, max relative error %.3e (%d ms)\n",
              n_models, worst, int(timer.ms()));
  if (worst > tol) {
    std::fprintf(stderr, "gradcheck failed: %.3e > %.3e\n", worst, tol);
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deep variable-block chain classifier"};
  app.require_subcommand(1);

  CommonOpts common;
  TrainConfig train_cfg;

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate a mixture dataset");
  int sim_p = 100, sim_noise = -1, sim_n = 1000;
  bool sim_corr = false;
  sim->add_option("--p", sim_p, "total feature count");
  sim->add_option("--noise", sim_noise, "noise dimensions (overrides --p)");
  sim->add_option("--n", sim_n, "sample count");
  sim->add_flag("--correlated", sim_corr, "correlated-pairs variant");
  sim->add_option("--seed", common.seed);
  sim->add_option("--label-col", common.label_col);
  sim->add_option("--out", common.out)->required();

  // fit
  auto* fit = app.add_subcommand("fit", "build and select a block chain");
  int block_size = 10;
  std::string blocks_file;
  double test_frac = 0.0;
  fit->add_option("--data", common.data)->required();
  fit->add_option("--label-col", common.label_col);
  fit->add_option("--seed", common.seed);
  auto* bs = fit->add_option("--block-size", block_size);
  fit->add_option("--blocks", blocks_file, "predefined partition JSON")
      ->excludes(bs);
  fit->add_option("--test-frac", test_frac, "held-out fraction");
  add_train_flags(fit, train_cfg);
  fit->add_option("--out", common.out)->required();

  // avs
  auto* avs = app.add_subcommand("avs", "fit the variable selection tree");
  std::string model_dir, avs_out;
  TreeConfig tree_cfg;
  avs->add_option("--model", model_dir)->required();
  avs->add_option("--data", common.data, "training CSV (default: model dir)");
  avs->add_option("--label-col", common.label_col);
  avs->add_option("--seed", common.seed);
  avs->add_option("--folds", tree_cfg.cv_folds);
  avs->add_option("--min-leaf", tree_cfg.min_leaf);
  avs->add_option("--max-depth", tree_cfg.max_depth);
  avs->add_option("--alpha", tree_cfg.leaf_alpha);
  avs->add_option("--out", avs_out, "output dir (default: model dir)");

  // predict / evaluate
  auto* pred = app.add_subcommand("predict", "write per-sample predictions");
  bool use_avs = false;
  pred->add_option("--model", model_dir)->required();
  pred->add_option("--data", common.data)->required();
  pred->add_option("--label-col", common.label_col);
  pred->add_flag("--avs", use_avs, "route through the selection tree");
  pred->add_option("--out", common.out)->required();

  auto* eval = app.add_subcommand("evaluate", "score against labeled data");
  eval->add_option("--model", model_dir)->required();
  eval->add_option("--data", common.data)->required();
  eval->add_option("--label-col", common.label_col);
  eval->add_flag("--avs", use_avs);
  eval->add_option("--out", common.out, "report JSON path");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "verify analytic gradients");
  int gc_models = 20, gc_cells = 3, gc_q = 5;
  double gc_tol = 1e-4;
  bool gc_bug = false;
  gc->add_option("--seed", common.seed);
  gc->add_option("--models", gc_models);
  gc->add_option("--cells", gc_cells, "maximum chain length");
  gc->add_option("--q", gc_q, "maximum state size");
  gc->add_option("--tol", gc_tol);
  gc->add_flag("--inject-bug", gc_bug)->group("");  // test hook

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (sim->parsed()) {
      const int p = sim_noise >= 0 ? 20 + sim_noise : sim_p;
      return cmd_simulate(common, p, sim_corr, sim_n);
    }
    if (fit->parsed()) {
      return cmd_fit(common, train_cfg, block_size, blocks_file, test_frac);
    }
    if (avs->parsed()) {
      return cmd_avs(model_dir, common.data, common.label_col, common.seed,
                     avs_out, tree_cfg);
    }
    if (pred->parsed()) {
      return cmd_predict(model_dir, common.data, common.label_col, use_avs,
                         common.out);
    }
    if (eval->parsed()) {
      return cmd_evaluate(model_dir, common.data, common.label_col, use_avs,
                          common.out);
    }
    if (gc->parsed()) {
      return cmd_gradcheck(common.seed, gc_models, gc_cells, gc_q, gc_tol,
                           gc_bug);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
