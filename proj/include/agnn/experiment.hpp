#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "agnn/controller.hpp"
#include "agnn/graph.hpp"
#include "agnn/registry.hpp"
#include "agnn/trainer.hpp"

namespace agnn {

struct RunConfig {
  std::string data;                  // path | sbm:k=v,... | surrogate:seed=N
  std::string controller = "agnn";   // agnn | resample | random
  int trials = 300;
  int n_layers = 2;
  int s = 1;
  bool share = false;
  SharePolicy share_policy = SharePolicy::Constrained;
  std::uint64_t seed = 0;
  int restart_slots = 4;
  bool test_once = true;
  std::string out_dir;
  TrainConfig train;

  nlohmann::json to_json() const {
    return {{"data", data},
            {"controller", controller},
            {"trials", trials},
            {"layers", n_layers},
            {"s", s},
            {"share", share},
            {"share_policy", share_policy == SharePolicy::Constrained ? "constrained" : "relaxed"},
            {"seed", seed},
            {"restarts", restart_slots},
            {"test_once", test_once},
            {"epochs", train.epochs},
            {"warmup", train.warmup_epochs},
            {"lr", train.lr},
            {"l2", train.l2},
            {"dropout", train.dropout},
            {"batch_graphs", train.batch_graphs}};
  }
};

struct SearchLog {
  std::vector<EvaluationRecord> records;
  nlohmann::json config;  // immutable snapshot of the run configuration
  ArchitectureDescriptor best;
  double best_val = 0.0;
  std::optional<double> test_metric;  // populated exactly once, at the end
  double wall_seconds = 0.0;
};

// ---------------------------------------------------------------------------
// Data spec parsing

namespace detail_exp {

struct KvList {
  std::vector<std::pair<std::string, std::string>> items;
  std::string get(const std::string& key, const std::string& fallback) const {
    for (const auto& [k, v] : items)
      if (k == key) return v;
    return fallback;
  }
};

inline KvList parse_kv(const std::string& body) {
  KvList out;
  std::size_t pos = 0;
  while (pos < body.size()) {
    std::size_t comma = body.find(',', pos);
    const std::string item = body.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    const std::size_t eq = item.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("data spec: malformed item '" + item + "'");
    out.items.emplace_back(item.substr(0, eq), item.substr(eq + 1));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace detail_exp

struct ResolvedData {
  bool surrogate = false;
  std::uint64_t landscape_seed = 42;
  DatasetBundle bundle;
};

inline ResolvedData resolve_data(const std::string& spec) {
  ResolvedData r;
  if (spec.rfind("surrogate:", 0) == 0 || spec == "surrogate") {
    r.surrogate = true;
    if (spec.size() > 10) {
      const auto kv = detail_exp::parse_kv(spec.substr(10));
      r.landscape_seed = std::stoull(kv.get("seed", "42"));
    }
    return r;
  }
  if (spec.rfind("sbm:", 0) == 0) {
    const auto kv = detail_exp::parse_kv(spec.substr(4));
    const int n = std::stoi(kv.get("n", "300"));
    const int k = std::stoi(kv.get("k", "3"));
    const double p_in = std::stod(kv.get("p_in", "0.3"));
    const double p_out = std::stod(kv.get("p_out", "0.01"));
    const int feat_dim = std::stoi(kv.get("feat_dim", std::to_string(k)));
    const double noise = std::stod(kv.get("noise", "0.1"));
    const std::uint64_t seed = std::stoull(kv.get("seed", "7"));
    r.bundle = generate_sbm(n, k, p_in, p_out, feat_dim, noise, seed);
    return r;
  }
  r.bundle = load_dataset(spec);
  return r;
}

// ---------------------------------------------------------------------------
// The search loop: propose -> build(+inherit) -> train -> evaluate -> update,
// with slot initializations logged as the first trials.

inline SearchLog run_search(const RunConfig& cfg) {
  if (cfg.controller != "agnn" && cfg.controller != "resample" && cfg.controller != "random")
    throw std::invalid_argument("run_search: unknown controller '" + cfg.controller + "'");
  if (cfg.trials < 1) throw std::invalid_argument("run_search: trials must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();
  ResolvedData data = resolve_data(cfg.data);
  if (!data.surrogate && data.bundle.setting == DatasetBundle::Setting::Inductive &&
      cfg.n_layers < 3)
    std::cerr << "warning: inductive data with fewer than 3 layers (no skip connections)\n";

  SearchLog log;
  log.config = cfg.to_json();
  ParameterRegistry registry(cfg.share_policy);

  std::ofstream jsonl;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    jsonl.open(std::filesystem::path(cfg.out_dir) / "trials.jsonl");
  }

  auto eval_arch = [&](const ArchitectureDescriptor& a, long trial) {
    EvaluationRecord rec;
    if (data.surrogate) {
      rec.trial_id = trial;
      rec.descriptor = a;
      rec.val_metric = surrogate_evaluate(a, data.landscape_seed);
    } else {
      TrainConfig tc = cfg.train;
      tc.setting = data.bundle.setting;
      tc.use_sharing = cfg.share;
      tc.seed = hash_combine(cfg.seed, 0x7e17, static_cast<std::uint64_t>(trial));
      CompiledModel model = build(a, data.bundle.feat_dim, data.bundle.num_classes,
                                  hash_combine(cfg.seed, 0xb01d, static_cast<std::uint64_t>(trial)));
      rec = train(model, data.bundle, tc, cfg.share ? &registry : nullptr, trial);
    }
    if (jsonl.is_open()) {
      nlohmann::json j = {{"trial", rec.trial_id},
                          {"architecture", to_string(rec.descriptor)},
                          {"val_metric", rec.val_metric},
                          {"shared", rec.shared_tensor_count},
                          {"seconds", rec.train_seconds}};
      jsonl << j.dump() << "\n";
    }
    log.records.push_back(rec);
    return rec;
  };

  if (cfg.controller == "random") {
    Rng rng(hash_combine(cfg.seed, 0x3a9d));
    for (long t = 1; t <= cfg.trials; ++t) {
      Proposal prop = propose_random(cfg.n_layers, rng);
      eval_arch(prop.offspring, t);
    }
  } else {
    const int slots = std::min(cfg.restart_slots, cfg.trials);
    ControllerState state =
        ControllerState::make(cfg.n_layers, slots, cfg.s, hash_combine(cfg.seed, 0xc011));
    long trial = 1;
    for (int i = 0; i < slots; ++i, ++trial) {
      const ArchitectureDescriptor a = random_architecture(cfg.n_layers, state.rng);
      const EvaluationRecord rec = eval_arch(a, trial);
      state.init_slot(i, a, rec.val_metric);
    }
    while (trial <= cfg.trials) {
      state.active_slot = static_cast<int>((trial - slots - 1) % slots);
      Proposal prop =
          cfg.controller == "resample" ? propose_full_resample(state) : propose(state);
      const EvaluationRecord rec = eval_arch(prop.offspring, trial);
      update(state, prop, rec.val_metric);
      ++trial;
    }
    if (!cfg.out_dir.empty())
      save_checkpoint(state, (std::filesystem::path(cfg.out_dir) / "controller.ckpt").string());
  }

  std::size_t best_idx = 0;
  for (std::size_t i = 1; i < log.records.size(); ++i)
    if (log.records[i].val_metric > log.records[best_idx].val_metric) best_idx = i;
  log.best = log.records[best_idx].descriptor;
  log.best_val = log.records[best_idx].val_metric;

  // Held-out discipline: the test metric is computed exactly once, for the
  // final best architecture, after the search ends.
  if (cfg.test_once) {
    if (data.surrogate) {
      log.test_metric = log.best_val;
    } else {
      TrainConfig tc = cfg.train;
      tc.setting = data.bundle.setting;
      tc.use_sharing = false;
      tc.seed = hash_combine(cfg.seed, 0x7e57);
      CompiledModel model = build(log.best, data.bundle.feat_dim, data.bundle.num_classes,
                                  hash_combine(cfg.seed, 0x7e58));
      train(model, data.bundle, tc, nullptr, 0);
      log.test_metric = evaluate(model, data.bundle, Split::Test);
    }
  }
  log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

// ---------------------------------------------------------------------------
// Progression statistics

// Prefix-wise mean of the k best validation metrics seen so far.
inline std::vector<std::pair<long, double>> top_k_progression(const SearchLog& log, int k = 10) {
  if (k < 1) throw std::invalid_argument("top_k_progression: k must be >= 1");
  if (log.records.empty()) throw std::invalid_argument("top_k_progression: empty log");
  std::vector<std::pair<long, double>> out;
  std::vector<double> top;  // sorted descending, at most k entries
  for (const auto& rec : log.records) {
    const auto pos = std::lower_bound(top.begin(), top.end(), rec.val_metric,
                                      [](double a, double b) { return a > b; });
    top.insert(pos, rec.val_metric);
    if (static_cast<int>(top.size()) > k) top.pop_back();
    double sum = 0;
    for (double v : top) sum += v;
    out.emplace_back(rec.trial_id, sum / static_cast<double>(top.size()));
  }
  return out;
}

// Empirical CDF over all trial validation metrics; identical metrics
// collapse to one step and the final fraction is 1.
inline std::vector<std::pair<double, double>> cumulative_distribution(const SearchLog& log) {
  if (log.records.empty()) throw std::invalid_argument("cumulative_distribution: empty log");
  std::vector<double> vals;
  vals.reserve(log.records.size());
  for (const auto& rec : log.records) vals.push_back(rec.val_metric);
  std::sort(vals.begin(), vals.end());
  std::vector<std::pair<double, double>> out;
  const double n = static_cast<double>(vals.size());
  for (std::size_t i = 0; i < vals.size(); ++i) {
    if (i + 1 < vals.size() && vals[i + 1] == vals[i]) continue;
    out.emplace_back(vals[i], static_cast<double>(i + 1) / n);
  }
  return out;
}

inline double median_val_metric(const SearchLog& log) {
  std::vector<double> vals;
  for (const auto& rec : log.records) vals.push_back(rec.val_metric);
  std::sort(vals.begin(), vals.end());
  const std::size_t n = vals.size();
  return n % 2 ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
}

// ---------------------------------------------------------------------------
// Export

namespace detail_exp {

inline std::string fmt(double v, const char* spec = "%.10g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

}  // namespace detail_exp

inline void export_log(const SearchLog& log, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream f(fs::path(dir) / "trials.csv");
    if (!f) throw std::runtime_error("export: cannot write trials.csv in " + dir);
    f << "trial,architecture,val_metric,shared,seconds\n";
    for (const auto& rec : log.records)
      f << rec.trial_id << "," << to_string(rec.descriptor) << ","
        << detail_exp::fmt(rec.val_metric) << "," << rec.shared_tensor_count << ","
        << detail_exp::fmt(rec.train_seconds, "%.3f") << "\n";
  }
  {
    std::ofstream f(fs::path(dir) / "progression.csv");
    f << "trial,top10_mean\n";
    for (const auto& [trial, mean] : top_k_progression(log, 10))
      f << trial << "," << detail_exp::fmt(mean) << "\n";
  }
  {
    std::ofstream f(fs::path(dir) / "cdf.csv");
    f << "val_metric,fraction\n";
    for (const auto& [v, frac] : cumulative_distribution(log))
      f << detail_exp::fmt(v) << "," << detail_exp::fmt(frac) << "\n";
  }
  {
    std::ofstream f(fs::path(dir) / "summary.txt");
    f << "config: " << log.config.dump() << "\n";
    f << "trials: " << log.records.size() << "\n";
    f << "best_architecture: " << to_string(log.best) << "\n";
    f << "best_val_metric: " << detail_exp::fmt(log.best_val) << "\n";
    if (log.test_metric)
      f << "test_metric: " << detail_exp::fmt(*log.test_metric) << "\n";
    f << "wall_seconds: " << detail_exp::fmt(log.wall_seconds, "%.3f") << "\n";
  }
  {
    std::ofstream f(fs::path(dir) / "config.json");
    f << log.config.dump(2) << "\n";
  }
}

// Rebuilds a SearchLog from a run directory's trials.jsonl (+config.json).
inline SearchLog load_log(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream f(fs::path(dir) / "trials.jsonl");
  if (!f) throw std::runtime_error("load_log: missing trials.jsonl in " + dir);
  SearchLog log;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    EvaluationRecord rec;
    rec.trial_id = j.at("trial").get<long>();
    rec.descriptor = parse_architecture(j.at("architecture").get<std::string>());
    rec.val_metric = j.at("val_metric").get<double>();
    rec.shared_tensor_count = j.at("shared").get<int>();
    rec.train_seconds = j.at("seconds").get<double>();
    log.records.push_back(std::move(rec));
  }
  if (log.records.empty()) throw std::runtime_error("load_log: no trials in " + dir);
  std::ifstream cf(fs::path(dir) / "config.json");
  if (cf) log.config = nlohmann::json::parse(cf);
  std::size_t best_idx = 0;
  for (std::size_t i = 1; i < log.records.size(); ++i)
    if (log.records[i].val_metric > log.records[best_idx].val_metric) best_idx = i;
  log.best = log.records[best_idx].descriptor;
  log.best_val = log.records[best_idx].val_metric;
  return log;
}

// Pure file concatenation of several runs' trials.csv with a run-id column.
inline void merge_logs(const std::vector<std::string>& dirs, const std::string& out_path) {
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("merge_logs: cannot write " + out_path);
  out << "run,trial,architecture,val_metric,shared,seconds\n";
  for (const auto& dir : dirs) {
    std::ifstream f(std::filesystem::path(dir) / "trials.csv");
    if (!f) throw std::runtime_error("merge_logs: missing trials.csv in " + dir);
    std::string line;
    std::getline(f, line);  // header
    const std::string run_id = std::filesystem::path(dir).filename().string();
    while (std::getline(f, line))
      if (!line.empty()) out << run_id << "," << line << "\n";
  }
}

}  // namespace agnn
