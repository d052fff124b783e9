#pragma once

#include <chrono>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "agnn/gnn.hpp"
#include "agnn/graph.hpp"
#include "agnn/registry.hpp"
#include "agnn/search_space.hpp"

namespace agnn {

struct TrainConfig {
  DatasetBundle::Setting setting = DatasetBundle::Setting::Transductive;
  int epochs = 200;
  int warmup_epochs = 20;
  double lr = 0.005;
  double l2 = 5e-4;
  double dropout = 0.6;
  int batch_graphs = 2;
  std::uint64_t seed = 0;
  bool use_sharing = false;

  static TrainConfig transductive_defaults() { return TrainConfig{}; }

  static TrainConfig inductive_defaults() {
    TrainConfig c;
    c.setting = DatasetBundle::Setting::Inductive;
    c.epochs = 20;
    c.warmup_epochs = 5;
    c.lr = 0.005;
    c.l2 = 0.0;
    c.dropout = 0.0;
    c.batch_graphs = 2;
    return c;
  }

  void check() const {
    if (epochs < warmup_epochs || warmup_epochs < 0)
      throw std::invalid_argument("TrainConfig: require epochs >= warmup_epochs >= 0");
  }
};

struct EvaluationRecord {
  long trial_id = 0;
  ArchitectureDescriptor descriptor;
  double val_metric = 0.0;
  std::optional<double> test_metric;  // populated only for the final best architecture
  int shared_tensor_count = 0;
  double train_seconds = 0.0;
  int epochs_run = 0;
  bool aborted = false;
};

enum class Split { Val, Test };

// Micro-averaged F1 over pooled (node, class) cells; 0 when no positives at
// all on either side.
inline double micro_f1(const std::vector<std::uint8_t>& pred,
                       const std::vector<std::uint8_t>& target) {
  if (pred.size() != target.size()) throw std::invalid_argument("micro_f1: shape mismatch");
  long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] && target[i]) ++tp;
    else if (pred[i] && !target[i]) ++fp;
    else if (!pred[i] && target[i]) ++fn;
  }
  const long denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

namespace detail_train {

inline std::vector<int> mask_rows(const Graph& g, MaskRole role) {
  std::vector<int> rows;
  for (int i = 0; i < g.num_nodes; ++i)
    if (g.mask[static_cast<std::size_t>(i)] == role) rows.push_back(i);
  return rows;
}

inline double metric_on_rows(const Tensor& logits, const Graph& g, const std::vector<int>& rows,
                             bool multi_label) {
  if (multi_label) {
    const std::size_t c = logits.dim(1);
    std::vector<std::uint8_t> pred, target;
    pred.reserve(rows.size() * c);
    target.reserve(rows.size() * c);
    for (int r : rows)
      for (std::size_t j = 0; j < c; ++j) {
        pred.push_back(logits.at(static_cast<std::size_t>(r), j) > 0.0 ? 1 : 0);
        target.push_back(g.label_bits[static_cast<std::size_t>(r) * c + j]);
      }
    return micro_f1(pred, target);
  }
  long correct = 0;
  const std::size_t c = logits.dim(1);
  for (int r : rows) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (logits.at(static_cast<std::size_t>(r), j) > logits.at(static_cast<std::size_t>(r), best))
        best = j;
    if (static_cast<int>(best) == g.labels[static_cast<std::size_t>(r)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

inline Tensor loss_on_rows(const Tensor& logits, const Graph& g, const std::vector<int>& rows) {
  if (g.multi_label) return binary_cross_entropy(logits, g.label_bits, rows);
  return cross_entropy(logits, g.labels, rows);
}

}  // namespace detail_train

// Metric in eval mode (no dropout, BN running statistics).
inline double evaluate(CompiledModel& model, const DatasetBundle& data, Split split) {
  const MaskRole role = split == Split::Val ? MaskRole::Val : MaskRole::Test;
  if (data.setting == DatasetBundle::Setting::Transductive) {
    const Graph& g = data.graphs[0];
    const auto rows = detail_train::mask_rows(g, role);
    if (rows.empty()) throw std::runtime_error("evaluate: empty split");
    Tensor logits = model_forward(model, g);
    return detail_train::metric_on_rows(logits, g, rows, data.multi_label);
  }
  // Inductive: pool the metric over whole held-out graphs.
  if (data.multi_label) {
    std::vector<std::uint8_t> pred, target;
    for (std::size_t gi = 0; gi < data.graphs.size(); ++gi) {
      if (data.graph_roles[gi] != role) continue;
      const Graph& g = data.graphs[gi];
      Tensor logits = model_forward(model, g);
      const std::size_t c = logits.dim(1);
      for (int r = 0; r < g.num_nodes; ++r)
        for (std::size_t j = 0; j < c; ++j) {
          pred.push_back(logits.at(static_cast<std::size_t>(r), j) > 0.0 ? 1 : 0);
          target.push_back(g.label_bits[static_cast<std::size_t>(r) * c + j]);
        }
    }
    if (pred.empty()) throw std::runtime_error("evaluate: empty split");
    return micro_f1(pred, target);
  }
  long correct = 0, total = 0;
  for (std::size_t gi = 0; gi < data.graphs.size(); ++gi) {
    if (data.graph_roles[gi] != role) continue;
    const Graph& g = data.graphs[gi];
    Tensor logits = model_forward(model, g);
    const std::size_t c = logits.dim(1);
    for (int r = 0; r < g.num_nodes; ++r) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < c; ++j)
        if (logits.at(static_cast<std::size_t>(r), j) > logits.at(static_cast<std::size_t>(r), best))
          best = j;
      if (static_cast<int>(best) == g.labels[static_cast<std::size_t>(r)]) ++correct;
      ++total;
    }
  }
  if (total == 0) throw std::runtime_error("evaluate: empty split");
  return static_cast<double>(correct) / static_cast<double>(total);
}

// Trains under the configured recipe. With sharing: inherit, then warm up for
// warmup_epochs and write back; without: train the full epoch budget. A
// non-finite loss aborts the trial with metric 0 and no writeback.
inline EvaluationRecord train(CompiledModel& model, const DatasetBundle& data,
                              const TrainConfig& cfg, ParameterRegistry* reg = nullptr,
                              long trial_id = 0) {
  cfg.check();
  const auto t0 = std::chrono::steady_clock::now();
  EvaluationRecord rec;
  rec.trial_id = trial_id;
  rec.descriptor = model.arch;
  auto manifest = parameter_manifest(model);
  if (cfg.use_sharing && reg) rec.shared_tensor_count = reg->inherit(manifest);
  const int epochs = (cfg.use_sharing && reg) ? cfg.warmup_epochs : cfg.epochs;
  std::vector<AdamState> opt(manifest.size());
  Rng rng(cfg.seed);
  bool aborted = false;

  auto step = [&](const Graph& g, const std::vector<int>& rows) {
    Tape tape;
    TapeScope scope(tape);
    ForwardContext ctx;
    ctx.train = true;
    ctx.dropout = cfg.dropout;
    ctx.rng = &rng;
    Tensor logits = model_forward(model, g, ctx);
    Tensor loss = detail_train::loss_on_rows(logits, g, rows);
    if (!std::isfinite(loss.val())) return false;
    tape.backward(loss);
    for (std::size_t i = 0; i < manifest.size(); ++i)
      adam_step(manifest[i].tensor, opt[i], cfg.lr, 0.9, 0.999, 1e-8, cfg.l2);
    return true;
  };

  if (data.setting == DatasetBundle::Setting::Transductive) {
    const Graph& g = data.graphs[0];
    const auto train_rows = detail_train::mask_rows(g, MaskRole::Train);
    if (train_rows.empty()) throw std::runtime_error("train: no training nodes");
    for (int e = 0; e < epochs && !aborted; ++e) {
      if (!step(g, train_rows)) aborted = true;
      else ++rec.epochs_run;
    }
  } else {
    std::vector<std::size_t> train_graphs;
    for (std::size_t gi = 0; gi < data.graphs.size(); ++gi)
      if (data.graph_roles[gi] == MaskRole::Train) train_graphs.push_back(gi);
    if (train_graphs.empty()) throw std::runtime_error("train: no training graphs");
    const int bsz = std::max(1, cfg.batch_graphs);
    for (int e = 0; e < epochs && !aborted; ++e) {
      std::vector<std::size_t> order = train_graphs;
      for (std::size_t t = order.size(); t > 1; --t)
        std::swap(order[t - 1], order[rng.uniform_int(t)]);
      for (std::size_t b = 0; b < order.size() && !aborted; b += static_cast<std::size_t>(bsz)) {
        std::vector<const Graph*> parts;
        for (std::size_t j = b; j < std::min(order.size(), b + static_cast<std::size_t>(bsz)); ++j)
          parts.push_back(&data.graphs[order[j]]);
        Graph batch = disjoint_union(parts);
        std::vector<int> rows(static_cast<std::size_t>(batch.num_nodes));
        for (int r = 0; r < batch.num_nodes; ++r) rows[static_cast<std::size_t>(r)] = r;
        if (!step(batch, rows)) aborted = true;
      }
      if (!aborted) ++rec.epochs_run;
    }
  }

  rec.aborted = aborted;
  if (aborted) {
    rec.val_metric = 0.0;  // unstable trial: report zero, never poison the registry
  } else {
    rec.val_metric = evaluate(model, data, Split::Val);
    if (cfg.use_sharing && reg) reg->writeback(manifest, trial_id, rec.val_metric);
  }
  rec.train_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

// ---------------------------------------------------------------------------
// Deterministic surrogate fitness for fast controller experiments: a sum of
// per-(layer, class, value) utilities plus one (aggregator x activation)
// interaction per layer, each drawn once from the landscape seed. Scores lie
// in [0, 1]; the optimum is computable by enumerating the 14112 per-layer
// combinations.

inline double surrogate_layer_score(std::uint64_t landscape_seed, int layer_index,
                                    const LayerSpec& spec) {
  double total = 0;
  for (int c = 0; c < kNumActionClasses; ++c) {
    const auto cls = static_cast<ActionClass>(c);
    total += unit_from_bits(hash_combine(landscape_seed, 1, static_cast<std::uint64_t>(layer_index),
                                         static_cast<std::uint64_t>(c),
                                         static_cast<std::uint64_t>(spec.value_index(cls))));
  }
  total += unit_from_bits(hash_combine(
      landscape_seed, 2, static_cast<std::uint64_t>(layer_index),
      static_cast<std::uint64_t>(spec.value_index(ActionClass::Aggregator)),
      static_cast<std::uint64_t>(spec.value_index(ActionClass::Activation))));
  return total;
}

inline double surrogate_evaluate(const ArchitectureDescriptor& a, std::uint64_t landscape_seed) {
  double total = 0;
  for (int l = 0; l < a.n_layers(); ++l)
    total += surrogate_layer_score(landscape_seed, l, a.layers[static_cast<std::size_t>(l)]);
  return total / (7.0 * static_cast<double>(a.n_layers()));
}

}  // namespace agnn
