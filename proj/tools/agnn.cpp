// Command-line front end: configures and runs architecture searches, logs
// every trial, and exports the CSV reports.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "agnn/experiment.hpp"

namespace {

bool data_is_inductive(const std::string& spec) {
  if (spec.rfind("sbm:", 0) == 0 || spec.rfind("surrogate", 0) == 0) return false;
  return std::filesystem::is_directory(spec);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AGNN: architecture search for message-passing GNNs"};
  app.set_config("--config", "", "Structured text config; CLI flags override file values");
  app.require_subcommand(1);

  // search ------------------------------------------------------------------
  auto* search = app.add_subcommand("search", "Run an architecture search");
  agnn::RunConfig cfg;
  std::string share = "off";
  std::string share_policy = "constrained";
  int epochs = -1, warmup = -1, batch_graphs = -1;
  double lr = -1, l2 = -1, dropout = -1;
  search->add_option("--data", cfg.data, "Dataset path, sbm:n=..,k=.., or surrogate:seed=..")
      ->required();
  search->add_option("--controller", cfg.controller, "agnn | resample | random")
      ->capture_default_str();
  search->add_option("--trials", cfg.trials, "Number of architectures to explore")
      ->capture_default_str();
  search->add_option("--layers", cfg.n_layers, "Graph convolution layers per architecture")
      ->capture_default_str();
  search->add_option("--s", cfg.s, "Mutation width: classes modified per proposal (1..6)")
      ->capture_default_str();
  search->add_option("--share", share, "Parameter sharing: on | off")->capture_default_str();
  search->add_option("--share-policy", share_policy, "constrained | relaxed")
      ->capture_default_str();
  search->add_option("--seed", cfg.seed, "Run seed")->capture_default_str();
  search->add_option("--restarts", cfg.restart_slots, "Conservative-explorer restart slots")
      ->capture_default_str();
  search->add_option("--out", cfg.out_dir, "Output directory for logs and CSVs");
  search->add_flag("!--no-test", cfg.test_once, "Skip the final one-shot test evaluation");
  search->add_option("--epochs", epochs, "Training epochs without sharing");
  search->add_option("--warmup", warmup, "Warm-up epochs with sharing");
  search->add_option("--lr", lr, "Learning rate");
  search->add_option("--l2", l2, "L2 regularization strength");
  search->add_option("--dropout", dropout, "Dropout rate for inputs and attention coefficients");
  search->add_option("--batch-graphs", batch_graphs, "Graphs per inductive batch");

  // report ------------------------------------------------------------------
  auto* report = app.add_subcommand("report", "Regenerate CSVs from a run directory");
  std::string report_dir;
  report->add_option("--log", report_dir, "Run directory containing trials.jsonl")->required();

  // merge-logs ----------------------------------------------------------------
  auto* merge = app.add_subcommand("merge-logs", "Concatenate runs into one CSV");
  std::vector<std::string> merge_dirs;
  std::string merge_out = "merged.csv";
  merge->add_option("dirs", merge_dirs, "Run directories")->required();
  merge->add_option("--out", merge_out, "Merged CSV path")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (search->parsed()) {
      if (share != "on" && share != "off")
        throw std::invalid_argument("--share must be 'on' or 'off'");
      cfg.share = share == "on";
      if (share_policy == "constrained") cfg.share_policy = agnn::SharePolicy::Constrained;
      else if (share_policy == "relaxed") cfg.share_policy = agnn::SharePolicy::Relaxed;
      else throw std::invalid_argument("--share-policy must be 'constrained' or 'relaxed'");
      cfg.train = data_is_inductive(cfg.data) ? agnn::TrainConfig::inductive_defaults()
                                              : agnn::TrainConfig::transductive_defaults();
      if (epochs >= 0) cfg.train.epochs = epochs;
      if (warmup >= 0) cfg.train.warmup_epochs = warmup;
      if (lr >= 0) cfg.train.lr = lr;
      if (l2 >= 0) cfg.train.l2 = l2;
      if (dropout >= 0) cfg.train.dropout = dropout;
      if (batch_graphs > 0) cfg.train.batch_graphs = batch_graphs;
      cfg.train.check();

      agnn::SearchLog log = agnn::run_search(cfg);
      if (!cfg.out_dir.empty()) agnn::export_log(log, cfg.out_dir);
      std::cout << "trials: " << log.records.size() << "\n"
                << "best architecture: " << agnn::to_string(log.best) << "\n"
                << "best val metric: " << log.best_val << "\n";
      if (log.test_metric) std::cout << "test metric (evaluated once): " << *log.test_metric << "\n";
      std::cout << "wall seconds: " << log.wall_seconds << "\n";
      if (!cfg.out_dir.empty()) std::cout << "logs written to " << cfg.out_dir << "\n";
    } else if (report->parsed()) {
      agnn::SearchLog log = agnn::load_log(report_dir);
      agnn::export_log(log, report_dir);
      std::cout << "regenerated CSVs for " << log.records.size() << " trials in " << report_dir
                << "\n";
    } else if (merge->parsed()) {
      agnn::merge_logs(merge_dirs, merge_out);
      std::cout << "merged " << merge_dirs.size() << " runs into " << merge_out << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
