#include <catch2/catch_amalgamated.hpp>

#include "agnn/trainer.hpp"
#include "test_helpers.hpp"

using namespace agnn;
using namespace agnn_test;

namespace {

ArchitectureDescriptor gcn_like(int n_layers) {
  LayerSpec spec;
  spec.hidden_dim = 16;
  spec.attention_fn = AttentionKind::Gcn;
  spec.heads = 1;
  spec.aggregator = AggregatorKind::Sum;
  spec.combiner = CombinerKind::Mlp;
  spec.activation = Activation::ReLU;
  ArchitectureDescriptor a;
  a.layers.assign(static_cast<std::size_t>(n_layers), spec);
  return a;
}

DatasetBundle inductive_fixture(bool multi_label, std::uint64_t seed) {
  Rng rng(seed);
  DatasetBundle b;
  b.setting = DatasetBundle::Setting::Inductive;
  b.num_classes = 3;
  b.feat_dim = 3;
  b.multi_label = multi_label;
  for (int gi = 0; gi < 4; ++gi) {
    DatasetBundle part = generate_sbm(24, 3, 0.6, 0.05, 3, 0.2, seed * 10 + static_cast<std::uint64_t>(gi));
    Graph g = std::move(part.graphs[0]);
    const MaskRole role = gi < 2 ? MaskRole::Train : (gi == 2 ? MaskRole::Val : MaskRole::Test);
    std::fill(g.mask.begin(), g.mask.end(), role);
    if (multi_label) {
      g.multi_label = true;
      g.label_bits.assign(static_cast<std::size_t>(g.num_nodes) * 3, 0);
      for (int i = 0; i < g.num_nodes; ++i)
        g.label_bits[static_cast<std::size_t>(i) * 3 +
                     static_cast<std::size_t>(g.labels[static_cast<std::size_t>(i)])] = 1;
      g.labels.clear();
    }
    b.graphs.push_back(std::move(g));
    b.graph_roles.push_back(role);
  }
  return b;
}

}  // namespace

TEST_CASE("micro_f1 formula cases") {
  REQUIRE(micro_f1({1, 0, 1}, {1, 0, 1}) == 1.0);
  REQUIRE(micro_f1({0, 0, 0}, {1, 0, 1}) == 0.0);
  // TP=1, FP=1, FN=1 -> 2/(2+1+1) = 0.5
  REQUIRE(micro_f1({1, 1, 0}, {1, 0, 1}) == 0.5);
  REQUIRE(micro_f1({0, 0}, {0, 0}) == 0.0);  // zero denominator
  REQUIRE_THROWS_AS(micro_f1({1}, {1, 0}), std::invalid_argument);
}

TEST_CASE("metric helpers") {
  Graph g;
  g.num_nodes = 3;
  g.num_classes = 2;
  g.feat_dim = 1;
  g.labels = {0, 1, 1};
  g.multi_label = false;
  SECTION("all-correct predictions give accuracy 1") {
    Tensor logits = Tensor::from_values({3, 2}, {2, 1, 0, 5, -1, 3});
    REQUIRE(detail_train::metric_on_rows(logits, g, {0, 1, 2}, false) == 1.0);
  }
  SECTION("constant predictor hits the class prior") {
    Tensor logits = Tensor::from_values({3, 2}, {1, 0, 1, 0, 1, 0});  // always class 0
    REQUIRE_THAT(detail_train::metric_on_rows(logits, g, {0, 1, 2}, false),
                 Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-12));
  }
  SECTION("multi-label perfect predictions give micro-F1 1") {
    Graph gm = g;
    gm.multi_label = true;
    gm.label_bits = {1, 0, 0, 1, 1, 1};
    Tensor logits = Tensor::from_values({3, 2}, {1, -1, -1, 1, 1, 1});
    REQUIRE(detail_train::metric_on_rows(logits, gm, {0, 1, 2}, true) == 1.0);
  }
}

TEST_CASE("zero-epoch training returns the untrained metric and leaves no registry trace") {
  DatasetBundle data = generate_sbm(60, 3, 0.5, 0.05, 3, 0.2, 3);
  ArchitectureDescriptor a = gcn_like(2);
  CompiledModel m = build(a, 3, 3, 5);
  const double untrained = evaluate(m, data, Split::Val);
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.warmup_epochs = 0;
  ParameterRegistry reg;
  CompiledModel m2 = build(a, 3, 3, 5);
  EvaluationRecord rec = train(m2, data, cfg, nullptr, 1);
  REQUIRE(rec.val_metric == untrained);
  REQUIRE(rec.epochs_run == 0);
  REQUIRE(reg.size() == 0);
}

TEST_CASE("training is deterministic for a fixed seed") {
  DatasetBundle data = generate_sbm(60, 3, 0.4, 0.05, 3, 0.3, 7);
  ArchitectureDescriptor a = gcn_like(2);
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.warmup_epochs = 8;
  cfg.dropout = 0.6;
  cfg.seed = 13;
  CompiledModel m1 = build(a, 3, 3, 11);
  CompiledModel m2 = build(a, 3, 3, 11);
  EvaluationRecord r1 = train(m1, data, cfg, nullptr, 1);
  EvaluationRecord r2 = train(m2, data, cfg, nullptr, 1);
  REQUIRE(r1.val_metric == r2.val_metric);
  REQUIRE(r1.epochs_run == r2.epochs_run);
  REQUIRE(m1.out_proj.value() == m2.out_proj.value());
}

TEST_CASE("gcn-like descriptor recovers the planted partition") {
  DatasetBundle data = generate_sbm(300, 3, 0.3, 0.01, 3, 0.1, 7);
  CompiledModel m = build(gcn_like(2), 3, 3, 17);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.warmup_epochs = 20;
  cfg.dropout = 0.0;
  cfg.seed = 19;
  EvaluationRecord rec = train(m, data, cfg, nullptr, 1);
  INFO("val accuracy " << rec.val_metric);
  REQUIRE(rec.val_metric > 0.85);
  REQUIRE(rec.val_metric <= 1.0);
}

TEST_CASE("non-finite loss aborts with metric zero and no writeback") {
  DatasetBundle data = generate_sbm(30, 3, 0.5, 0.05, 3, 0.1, 23);
  ArchitectureDescriptor a = gcn_like(2);
  CompiledModel m = build(a, 3, 3, 29);
  m.layers[0].transform_w[0].value()[0] = std::numeric_limits<double>::infinity();
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.use_sharing = true;
  cfg.warmup_epochs = 3;
  ParameterRegistry reg;
  EvaluationRecord rec = train(m, data, cfg, &reg, 1);
  REQUIRE(rec.aborted);
  REQUIRE(rec.val_metric == 0.0);
  REQUIRE(reg.size() == 0);
}

TEST_CASE("evaluate rejects an empty split") {
  DatasetBundle data = generate_sbm(30, 3, 0.5, 0.05, 3, 0.1, 31);
  for (auto& mask : data.graphs[0].mask)
    if (mask == MaskRole::Test) mask = MaskRole::None;
  CompiledModel m = build(gcn_like(2), 3, 3, 37);
  REQUIRE_THROWS_WITH(evaluate(m, data, Split::Test),
                      Catch::Matchers::ContainsSubstring("empty split"));
}

TEST_CASE("inductive path trains over batched disjoint unions") {
  DatasetBundle data = inductive_fixture(false, 41);
  ArchitectureDescriptor a = gcn_like(3);  // 3-layer: exercises the skip connection
  a.layers[1].combiner = CombinerKind::Identity;
  CompiledModel m = build(a, 3, 3, 43);
  TrainConfig cfg = TrainConfig::inductive_defaults();
  cfg.epochs = 6;
  cfg.seed = 47;
  EvaluationRecord rec = train(m, data, cfg, nullptr, 1);
  REQUIRE(rec.val_metric >= 0.0);
  REQUIRE(rec.val_metric <= 1.0);
  REQUIRE(rec.epochs_run == 6);
  const double test = evaluate(m, data, Split::Test);
  REQUIRE(test >= 0.0);
  REQUIRE(test <= 1.0);
}

TEST_CASE("inductive multi-label path reports micro-F1") {
  DatasetBundle data = inductive_fixture(true, 53);
  ArchitectureDescriptor a = gcn_like(3);
  CompiledModel m = build(a, 3, 3, 59);
  TrainConfig cfg = TrainConfig::inductive_defaults();
  cfg.epochs = 10;
  cfg.seed = 61;
  EvaluationRecord rec = train(m, data, cfg, nullptr, 1);
  REQUIRE(rec.val_metric >= 0.0);
  REQUIRE(rec.val_metric <= 1.0);
  CompiledModel fresh = build(a, 3, 3, 59);
  REQUIRE(rec.val_metric >= evaluate(fresh, data, Split::Val) - 0.05);
}

TEST_CASE("warm start from an identical ancestor beats fresh training on most seeds") {
  ArchitectureDescriptor a;
  LayerSpec spec;
  spec.hidden_dim = 16;
  spec.attention_fn = AttentionKind::Gcn;
  spec.heads = 2;
  spec.aggregator = AggregatorKind::Sum;
  spec.combiner = CombinerKind::Identity;
  spec.activation = Activation::ReLU;
  a.layers = {spec, spec};
  int wins = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    DatasetBundle data = generate_sbm(90, 3, 0.25, 0.03, 3, 0.5, 100 + seed);
    ParameterRegistry reg;
    CompiledModel ancestor = build(a, 3, 3, 200 + seed);
    TrainConfig full;
    full.epochs = 60;
    full.warmup_epochs = 60;
    full.use_sharing = true;  // writes back after training
    full.dropout = 0.0;
    full.seed = 300 + seed;
    train(ancestor, data, full, &reg, 1);

    TrainConfig short_run;
    short_run.epochs = 10;
    short_run.warmup_epochs = 10;
    short_run.dropout = 0.0;
    short_run.seed = 400 + seed;

    CompiledModel warm = build(a, 3, 3, 500 + seed);
    TrainConfig warm_cfg = short_run;
    warm_cfg.use_sharing = true;
    EvaluationRecord wrec = train(warm, data, warm_cfg, &reg, 2);
    REQUIRE(wrec.shared_tensor_count > 0);

    CompiledModel fresh = build(a, 3, 3, 500 + seed);
    EvaluationRecord frec = train(fresh, data, short_run, nullptr, 3);
    if (wrec.val_metric >= frec.val_metric) ++wins;
  }
  INFO("warm-start wins " << wins << "/10");
  REQUIRE(wins >= 7);
}

TEST_CASE("surrogate evaluator") {
  Rng rng(67);
  SECTION("deterministic in (descriptor, seed)") {
    ArchitectureDescriptor a = random_architecture(2, rng);
    REQUIRE(surrogate_evaluate(a, 5) == surrogate_evaluate(a, 5));
    REQUIRE(surrogate_evaluate(a, 5) != surrogate_evaluate(a, 6));
  }
  SECTION("scores lie in [0,1]") {
    for (int rep = 0; rep < 100; ++rep) {
      const double s = surrogate_evaluate(random_architecture(1 + static_cast<int>(rng.uniform_int(3)), rng), 9);
      REQUIRE(s >= 0.0);
      REQUIRE(s <= 1.0);
    }
  }
  SECTION("separable classes contribute additively") {
    // For a class outside the (aggregator, activation) pair, the score
    // difference between two values does not depend on the other classes.
    for (int rep = 0; rep < 20; ++rep) {
      ArchitectureDescriptor base = random_architecture(2, rng);
      ArchitectureDescriptor other = random_architecture(2, rng);
      other.layers[0].hidden_dim = base.layers[0].hidden_dim;
      ArchitectureDescriptor base2 = base, other2 = other;
      base2.layers[0].hidden_dim = other2.layers[0].hidden_dim = 256;
      const double d1 = surrogate_evaluate(base2, 11) - surrogate_evaluate(base, 11);
      const double d2 = surrogate_evaluate(other2, 11) - surrogate_evaluate(other, 11);
      REQUIRE_THAT(d1, Catch::Matchers::WithinAbs(d2, 1e-12));
    }
  }
  SECTION("enumerated optimum dominates random draws and is attained") {
    const std::uint64_t seed = 77;
    LayerSpec best0, best1;
    surrogate_layer_max_by_enumeration(seed, 0, &best0);
    surrogate_layer_max_by_enumeration(seed, 1, &best1);
    const double opt = surrogate_optimum_by_enumeration(seed, 2);
    ArchitectureDescriptor best;
    best.layers = {best0, best1};
    REQUIRE_THAT(surrogate_evaluate(best, seed), Catch::Matchers::WithinAbs(opt, 1e-12));
    for (int rep = 0; rep < 200; ++rep)
      REQUIRE(surrogate_evaluate(random_architecture(2, rng), seed) <= opt + 1e-12);
  }
}
