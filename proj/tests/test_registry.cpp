#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <map>

#include "agnn/gnn.hpp"
#include "agnn/registry.hpp"
#include "agnn/trainer.hpp"
#include "test_helpers.hpp"

using namespace agnn;
using namespace agnn_test;

namespace {

int shareable_count(const std::vector<ManifestEntry>& manifest) {
  int n = 0;
  for (const auto& e : manifest)
    if (e.key.role != ParamRole::NonShareable) ++n;
  return n;
}

// Copies everything inherit() deliberately leaves alone, so metric equality
// isolates the transfer path.
void copy_non_shareable(const CompiledModel& src, CompiledModel& dst) {
  auto ms = parameter_manifest(src);
  auto md = parameter_manifest(dst);
  for (std::size_t i = 0; i < ms.size(); ++i)
    if (ms[i].key.role == ParamRole::NonShareable) md[i].tensor.value() = ms[i].tensor.value();
  for (std::size_t l = 0; l < src.layers.size(); ++l) dst.layers[l].bn = src.layers[l].bn;
}

}  // namespace

TEST_CASE("empty registry transfers nothing") {
  Rng rng(3);
  ArchitectureDescriptor a = random_architecture(2, rng);
  CompiledModel m = build(a, 4, 3, 1);
  ParameterRegistry reg;
  REQUIRE(reg.inherit(parameter_manifest(m)) == 0);
  const auto stats = reg.stats();
  REQUIRE(stats.total_entries == 0);
  REQUIRE(stats.transfers == 0);
  REQUIRE(stats.hit_rate() == 0.0);
}

TEST_CASE("identical descriptor transfers every shareable tensor and reproduces the metric") {
  DatasetBundle data = generate_sbm(60, 3, 0.5, 0.05, 3, 0.1, 11);
  Rng rng(5);
  ArchitectureDescriptor a = random_architecture(2, rng);
  CompiledModel ancestor = build(a, 3, 3, 7);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.warmup_epochs = 5;
  cfg.dropout = 0.0;
  cfg.l2 = 0.0;
  cfg.seed = 9;
  EvaluationRecord rec = train(ancestor, data, cfg, nullptr, 1);

  ParameterRegistry reg;
  reg.writeback(parameter_manifest(ancestor), 1, rec.val_metric);
  CompiledModel offspring = build(a, 3, 3, 7);
  const int transferred = reg.inherit(parameter_manifest(offspring));
  REQUIRE(transferred == shareable_count(parameter_manifest(offspring)));
  copy_non_shareable(ancestor, offspring);
  const double metric = evaluate(offspring, data, Split::Val);
  REQUIRE_THAT(metric, Catch::Matchers::WithinAbs(rec.val_metric, 1e-9));
}

TEST_CASE("activation mismatch blocks that layer only") {
  Rng rng(13);
  ArchitectureDescriptor a = random_architecture(2, rng);
  a.layers[0].attention_fn = AttentionKind::Gat;  // give layer 0 attention params
  CompiledModel ancestor = build(a, 4, 3, 21);
  ParameterRegistry reg;
  reg.writeback(parameter_manifest(ancestor), 1, 0.5);

  ArchitectureDescriptor b = a;
  b.layers[0].activation =
      static_cast<Activation>((static_cast<int>(a.layers[0].activation) + 1) % 8);
  CompiledModel offspring = build(b, 4, 3, 22);
  const auto manifest = parameter_manifest(offspring);
  const auto before = [&] {
    std::vector<std::vector<double>> vals;
    for (const auto& e : manifest) vals.push_back(e.tensor.value());
    return vals;
  }();
  const int transferred = reg.inherit(manifest);
  int layer1_shareable = 0;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& e = manifest[i];
    if (e.key.role == ParamRole::NonShareable) continue;
    if (e.key.layer_index == 0) {
      REQUIRE(e.tensor.value() == before[i]);  // untouched fresh init
    } else {
      ++layer1_shareable;
      REQUIRE(e.tensor.value() != before[i]);  // layer 1 unaffected by the mismatch
    }
  }
  REQUIRE(transferred == layer1_shareable);
}

TEST_CASE("writeback keeps the latest values and never stores NonShareable roles") {
  ArchitectureDescriptor a;
  LayerSpec spec;
  spec.hidden_dim = 8;
  spec.attention_fn = AttentionKind::Constant;
  spec.heads = 4;
  spec.combiner = CombinerKind::Identity;
  a.layers = {spec, spec};
  CompiledModel m = build(a, 4, 3, 31);
  ParameterRegistry reg;
  reg.writeback(parameter_manifest(m), 1, 0.4);
  // 2-layer CONSTANT attention + IDENTITY: W per head per layer only.
  REQUIRE(reg.size() == 2 * 4);
  REQUIRE_FALSE(reg.contains_role(ParamRole::NonShareable));

  const double marker = 123.456;
  m.layers[0].transform_w[0].value()[0] = marker;
  reg.writeback(parameter_manifest(m), 2, 0.6);
  REQUIRE(reg.size() == 2 * 4);

  CompiledModel m2 = build(a, 4, 3, 32);
  reg.inherit(parameter_manifest(m2));
  REQUIRE(m2.layers[0].transform_w[0].value()[0] == marker);

  const auto stats = reg.stats();
  REQUIRE(stats.total_entries == 8);
  REQUIRE(stats.entries_per_role.at("W") == 8);
  REQUIRE(stats.hit_rate() >= 0.0);
  REQUIRE(stats.hit_rate() <= 1.0);
}

TEST_CASE("inherit never changes shapes and rebuild round-trips exactly") {
  Rng rng(37);
  for (int rep = 0; rep < 10; ++rep) {
    ArchitectureDescriptor a = random_architecture(1 + static_cast<int>(rng.uniform_int(3)), rng);
    CompiledModel m = build(a, 5, 4, 100 + static_cast<std::uint64_t>(rep));
    for (auto& e : parameter_manifest(m))
      for (auto& v : e.tensor.value()) v += 1.0;  // mark as "trained"
    ParameterRegistry reg;
    reg.writeback(parameter_manifest(m), rep, 0.5);
    CompiledModel m2 = build(a, 5, 4, 200 + static_cast<std::uint64_t>(rep));
    auto manifest2 = parameter_manifest(m2);
    std::vector<Shape> shapes;
    for (const auto& e : manifest2) shapes.push_back(e.tensor.shape());
    reg.inherit(manifest2);
    auto manifest1 = parameter_manifest(m);
    for (std::size_t i = 0; i < manifest2.size(); ++i) {
      REQUIRE(manifest2[i].tensor.shape() == shapes[i]);
      if (manifest2[i].key.role != ParamRole::NonShareable)
        REQUIRE(manifest2[i].tensor.value() == manifest1[i].tensor.value());
    }
  }
}

TEST_CASE("sharing constraint fuzz: transfer iff the full signature matches") {
  Rng rng(41);
  const int pairs = 200;  // the acceptance suite runs the full 1000
  for (int rep = 0; rep < pairs; ++rep) {
    const int n = 1 + static_cast<int>(rng.uniform_int(2));
    ArchitectureDescriptor a = random_architecture(n, rng);
    ArchitectureDescriptor b = random_architecture(n, rng);
    if (rng.uniform() < 0.4) {
      // Make collisions common: copy and mutate one class.
      b = a;
      const auto cls = static_cast<ActionClass>(rng.uniform_int(6));
      for (auto& layer : b.layers)
        layer.set_value_index(cls, static_cast<int>(rng.uniform_int(
                                       static_cast<std::uint64_t>(candidate_count(cls)))));
    }
    CompiledModel ma = build(a, 4, 3, 300 + static_cast<std::uint64_t>(rep));
    CompiledModel mb = build(b, 4, 3, 600 + static_cast<std::uint64_t>(rep));
    ParameterRegistry reg;
    const auto manifest_a = parameter_manifest(ma);
    reg.writeback(manifest_a, rep, 0.5);
    std::map<std::string, std::vector<double>> stored;
    for (const auto& e : manifest_a)
      if (e.key.role != ParamRole::NonShareable) stored[e.key.to_string()] = e.tensor.value();

    auto manifest_b = parameter_manifest(mb);
    std::vector<std::vector<double>> before;
    for (const auto& e : manifest_b) before.push_back(e.tensor.value());
    const int transferred = reg.inherit(manifest_b);
    int expected = 0;
    for (std::size_t i = 0; i < manifest_b.size(); ++i) {
      const auto& e = manifest_b[i];
      const bool eligible = e.key.role != ParamRole::NonShareable;
      const auto it = stored.find(e.key.to_string());
      const bool should_transfer = eligible && it != stored.end();
      if (should_transfer) {
        ++expected;
        REQUIRE(e.tensor.value() == it->second);
      } else {
        REQUIRE(e.tensor.value() == before[i]);
      }
    }
    REQUIRE(transferred == expected);
    REQUIRE_FALSE(reg.contains_role(ParamRole::NonShareable));
  }
}

TEST_CASE("relaxed policy shares by shape alone, including connection tensors") {
  Rng rng(43);
  ArchitectureDescriptor a = random_architecture(2, rng);
  ArchitectureDescriptor b = a;
  b.layers[0].activation =
      static_cast<Activation>((static_cast<int>(a.layers[0].activation) + 1) % 8);
  CompiledModel ma = build(a, 4, 3, 51);
  CompiledModel mb = build(b, 4, 3, 52);
  ParameterRegistry relaxed(SharePolicy::Relaxed);
  relaxed.writeback(parameter_manifest(ma), 1, 0.5);
  const int transferred = relaxed.inherit(parameter_manifest(mb));
  // Same shapes everywhere, so every tensor (BN and output head included)
  // crosses the activation mismatch.
  REQUIRE(transferred == static_cast<int>(parameter_manifest(mb).size()));
  REQUIRE(mb.layers[0].bn_gamma.value() == ma.layers[0].bn_gamma.value());
  REQUIRE(mb.out_proj.value() == ma.out_proj.value());

  ParameterRegistry constrained;
  CompiledModel mc = build(b, 4, 3, 53);
  constrained.writeback(parameter_manifest(ma), 1, 0.5);
  const auto manifest_c = parameter_manifest(mc);
  const int strict = constrained.inherit(manifest_c);
  int expected = 0;
  for (const auto& e : manifest_c)
    if (e.key.role != ParamRole::NonShareable && e.key.layer_index == 1) ++expected;
  REQUIRE(strict == expected);
}

TEST_CASE("registry snapshot round trip") {
  Rng rng(47);
  ArchitectureDescriptor a = random_architecture(2, rng);
  CompiledModel m = build(a, 4, 3, 61);
  ParameterRegistry reg;
  reg.writeback(parameter_manifest(m), 1, 0.7);
  const auto path = (std::filesystem::temp_directory_path() / "agnn_registry.snap").string();
  reg.save(path);
  ParameterRegistry reg2;
  reg2.load(path);
  REQUIRE(reg2.size() == reg.size());
  CompiledModel m2 = build(a, 4, 3, 62);
  const int transferred = reg2.inherit(parameter_manifest(m2));
  REQUIRE(transferred == shareable_count(parameter_manifest(m2)));
  auto m1_manifest = parameter_manifest(m);
  auto m2_manifest = parameter_manifest(m2);
  for (std::size_t i = 0; i < m1_manifest.size(); ++i)
    if (m1_manifest[i].key.role != ParamRole::NonShareable)
      REQUIRE(m2_manifest[i].tensor.value() == m1_manifest[i].tensor.value());
}
