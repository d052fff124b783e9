#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "agnn/controller.hpp"
#include "agnn/trainer.hpp"
#include "test_helpers.hpp"

using namespace agnn;
using namespace agnn_test;

namespace {

std::vector<std::vector<double>> snapshot_params(const ClassEncoder& enc) {
  std::vector<std::vector<double>> out;
  for (const Tensor* t : enc.params()) out.push_back(t->value());
  return out;
}

}  // namespace

TEST_CASE("encode_and_decide: bounded distributions, determinism, vocabulary check") {
  ControllerState st = ControllerState::make(3, 1, 1, 7);
  Rng arch_rng(3);
  ArchitectureDescriptor best = random_architecture(3, arch_rng);
  const auto sub = subarchitecture(best, ActionClass::Activation);
  ClassEncoder& enc = st.encoders[5];

  Rng r1(11), r2(11);
  DecodeResult a = encode_and_decide(enc, sub, 3, &r1);
  DecodeResult b = encode_and_decide(enc, sub, 3, &r2);
  REQUIRE(a.actions == b.actions);
  REQUIRE(a.log_probs == b.log_probs);

  // The 2.5*tanh(logits/5) squash bounds every pre-softmax logit in
  // [-2.5, 2.5], so no action's probability can fall below e^-5 / m.
  const double floor = std::exp(-5.0) / static_cast<double>(enc.m);
  for (const auto& dist : a.step_dists) {
    double sum = 0;
    for (double p : dist) {
      REQUIRE(p >= floor);
      sum += p;
    }
    REQUIRE_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-9));
  }

  REQUIRE_THROWS_WITH(encode_and_decide(enc, {0, 99}, 3, &r1),
                      Catch::Matchers::ContainsSubstring("vocabulary"));
}

TEST_CASE("decision entropy") {
  SECTION("deterministic distributions have zero entropy") {
    REQUIRE(decision_entropy({{1, 0, 0}, {0, 1, 0}}) == 0.0);
  }
  SECTION("uniform over 8 with 3 steps is 3 ln 8") {
    std::vector<std::vector<double>> dists(3, std::vector<double>(8, 1.0 / 8));
    REQUIRE_THAT(decision_entropy(dists),
                 Catch::Matchers::WithinRel(3 * std::log(8.0), 1e-12));
    REQUIRE_THAT(decision_entropy(dists), Catch::Matchers::WithinAbs(6.2383, 1e-3));
  }
  SECTION("never exceeds n ln m") {
    Rng rng(13);
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<std::vector<double>> dists;
      const int n = 1 + static_cast<int>(rng.uniform_int(4));
      const int m = 2 + static_cast<int>(rng.uniform_int(7));
      for (int t = 0; t < n; ++t) {
        std::vector<double> d(static_cast<std::size_t>(m));
        double sum = 0;
        for (auto& p : d) sum += (p = std::exp(rng.uniform(-2, 2)));
        for (auto& p : d) p /= sum;
        dists.push_back(std::move(d));
      }
      REQUIRE(decision_entropy(dists) <= n * std::log(static_cast<double>(m)) + 1e-9);
    }
  }
}

TEST_CASE("guide_select follows the entropy weights") {
  Rng rng(17);
  SECTION("all mass on one class") {
    std::array<double, 6> e{0, 0, 0, 0, 0, 4.0};
    for (int rep = 0; rep < 200; ++rep) {
      const auto picked = guide_select(e, 1, rng);
      REQUIRE(picked == std::vector<ActionClass>{ActionClass::Activation});
    }
  }
  SECTION("s=6 returns every class") {
    std::array<double, 6> e{0, 1, 0, 2, 0, 3};
    const auto picked = guide_select(e, 6, rng);
    REQUIRE(picked.size() == 6);
    std::array<bool, 6> seen{};
    for (auto c : picked) seen[static_cast<std::size_t>(static_cast<int>(c))] = true;
    for (bool s : seen) REQUIRE(s);
  }
  SECTION("equal entropies are uniform") {
    std::array<double, 6> e{1, 1, 1, 1, 1, 1};
    std::array<int, 6> counts{};
    const int draws = 10000;
    for (int rep = 0; rep < draws; ++rep)
      ++counts[static_cast<std::size_t>(static_cast<int>(guide_select(e, 1, rng)[0]))];
    for (int c : counts) {
      const double freq = static_cast<double>(c) / draws;
      REQUIRE(freq > 1.0 / 6 - 0.02);
      REQUIRE(freq < 1.0 / 6 + 0.02);
    }
  }
  REQUIRE_THROWS_AS(guide_select({1, 1, 1, 1, 1, 1}, 0, rng), std::invalid_argument);
}

TEST_CASE("propose mutates only the chosen classes of the slot's best") {
  ControllerState st = ControllerState::make(3, 1, 1, 23);
  ArchitectureDescriptor best = random_architecture(3, st.rng);
  st.init_slot(0, best, 0.5);
  for (int rep = 0; rep < 10; ++rep) {
    Proposal prop = propose(st);
    REQUIRE(prop.chosen_classes.size() == 1);
    for (int c = 0; c < 6; ++c) {
      const auto cls = static_cast<ActionClass>(c);
      const bool chosen = prop.chosen_classes[0] == cls;
      for (int l = 0; l < 3; ++l) {
        const int got = prop.offspring.layers[static_cast<std::size_t>(l)].value_index(cls);
        const int was = best.layers[static_cast<std::size_t>(l)].value_index(cls);
        if (chosen)
          REQUIRE(got == prop.actions[static_cast<std::size_t>(c)][static_cast<std::size_t>(l)]);
        else
          REQUIRE(got == was);
      }
    }
    REQUIRE(prop.entropy[0] > 0);  // fresh encoders are near-uniform
  }
}

TEST_CASE("full resample chooses all six classes") {
  ControllerState st = ControllerState::make(2, 1, 1, 29);
  st.init_slot(0, random_architecture(2, st.rng), 0.4);
  Proposal prop = propose_full_resample(st);
  REQUIRE(prop.chosen_classes.size() == 6);
}

TEST_CASE("propose_random ignores controller state and reproduces per seed") {
  Rng r1(31), r2(31);
  Proposal a = propose_random(2, r1);
  Proposal b = propose_random(2, r2);
  REQUIRE(a.offspring == b.offspring);
  REQUIRE(a.from_random);
  REQUIRE(a.chosen_classes.empty());
}

TEST_CASE("update: conservative explorer and reward shaping") {
  ControllerState st = ControllerState::make(2, 1, 1, 37);
  ArchitectureDescriptor best = random_architecture(2, st.rng);
  st.init_slot(0, best, 0.6);

  SECTION("equal metric with zero entropy weight gives zero reward") {
    st.entropy_weight = 0.0;
    Proposal prop = propose(st);
    update(st, prop, 0.6);
    const auto ci = static_cast<std::size_t>(static_cast<int>(prop.chosen_classes[0]));
    REQUIRE(st.encoders[ci].baseline == 0.0);  // 0.95*0 + 0.05*0
    REQUIRE(st.slots[0].metric == 0.6);        // tie keeps the incumbent
    REQUIRE(st.slots[0].best == best);
  }
  SECTION("improvement replaces the best, regression keeps it") {
    Proposal p1 = propose(st);
    update(st, p1, 0.3);
    REQUIRE(st.slots[0].best == best);
    REQUIRE(st.slots[0].metric == 0.6);
    Proposal p2 = propose(st);
    update(st, p2, 0.9);
    REQUIRE(st.slots[0].best == p2.offspring);
    REQUIRE(st.slots[0].metric == 0.9);
  }
  SECTION("M_b is non-decreasing over a random metric stream") {
    Rng metric_rng(41);
    double prev = st.slots[0].metric;
    for (int t = 0; t < 30; ++t) {
      Proposal prop = propose(st);
      update(st, prop, metric_rng.uniform());
      REQUIRE(st.slots[0].metric >= prev);
      prev = st.slots[0].metric;
    }
  }
}

TEST_CASE("non-chosen encoders stay bitwise unchanged") {
  ControllerState st = ControllerState::make(2, 1, 2, 43);
  st.init_slot(0, random_architecture(2, st.rng), 0.5);
  Proposal prop = propose(st);
  std::array<std::vector<std::vector<double>>, 6> before;
  for (int c = 0; c < 6; ++c) before[static_cast<std::size_t>(c)] = snapshot_params(st.encoders[static_cast<std::size_t>(c)]);
  update(st, prop, 0.7);
  for (int c = 0; c < 6; ++c) {
    const bool chosen = std::find(prop.chosen_classes.begin(), prop.chosen_classes.end(),
                                  static_cast<ActionClass>(c)) != prop.chosen_classes.end();
    const auto after = snapshot_params(st.encoders[static_cast<std::size_t>(c)]);
    if (chosen)
      REQUIRE(after != before[static_cast<std::size_t>(c)]);
    else
      REQUIRE(after == before[static_cast<std::size_t>(c)]);
  }
}

TEST_CASE("positive advantage raises the probability of every taken action") {
  // Single-layer case, where the REINFORCE step's sign is provable.
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ControllerState st = ControllerState::make(1, 1, 1, seed);
    st.init_slot(0, random_architecture(1, st.rng), 0.4);
    Proposal prop = propose(st);
    const auto cls = prop.chosen_classes[0];
    const auto ci = static_cast<std::size_t>(static_cast<int>(cls));
    const double before = std::exp(prop.log_probs[ci][0]);
    update(st, prop, 0.9);  // reward 0.5 + entropy bonus, baseline 0 -> positive advantage
    DecodeResult replay =
        encode_and_decide(st.encoders[ci], prop.sub_tokens[ci], 1, nullptr, &prop.actions[ci]);
    const double after = std::exp(replay.log_probs[0]);
    INFO("seed " << seed << " before " << before << " after " << after);
    REQUIRE(after > before);
  }
}

TEST_CASE("update rejects a stale proposal") {
  ControllerState st = ControllerState::make(2, 1, 1, 47);
  st.init_slot(0, random_architecture(2, st.rng), 0.5);
  Proposal prop = propose(st);
  update(st, prop, 0.8);
  // The encoder moved; replaying the same proposal must fail the
  // consistency check (unless the same class was untouched, so mutate all).
  Proposal stale = prop;
  stale.chosen_classes.clear();
  for (int c = 0; c < 6; ++c) stale.chosen_classes.push_back(static_cast<ActionClass>(c));
  bool threw = false;
  try {
    update(st, stale, 0.9);
  } catch (const std::runtime_error& e) {
    threw = std::string(e.what()).find("mismatch") != std::string::npos;
  }
  REQUIRE(threw);
}

TEST_CASE("policy gradient matches finite differences of the REINFORCE objective") {
  ControllerState st = ControllerState::make(2, 1, 1, 53);
  st.init_slot(0, random_architecture(2, st.rng), 0.5);
  Proposal prop = propose(st);
  const auto cls = prop.chosen_classes[0];
  const auto ci = static_cast<std::size_t>(static_cast<int>(cls));
  ClassEncoder& enc = st.encoders[ci];
  const double advantage = 0.37;

  for (Tensor* t : enc.params()) t->clear_grad();
  Tape tape;
  {
    TapeScope scope(tape);
    DecodeResult res = encode_and_decide(enc, prop.sub_tokens[ci], 2, nullptr, &prop.actions[ci]);
    Tensor total = add(res.logp_nodes[0], res.logp_nodes[1]);
    tape.backward(scale(total, -advantage));
  }
  const auto objective = [&] {
    DecodeResult res = encode_and_decide(enc, prop.sub_tokens[ci], 2, nullptr, &prop.actions[ci]);
    return -advantage * (res.log_probs[0] + res.log_probs[1]);
  };
  Rng pick(59);
  for (Tensor* t : enc.params()) {
    const auto& g = t->grad_raw();
    REQUIRE_FALSE(g.empty());
    for (int probe = 0; probe < 10; ++probe) {
      const std::size_t idx = pick.uniform_int(t->numel());
      const double fd = finite_diff_at(*t, idx, objective);
      const double diff = std::abs(g[idx] - fd);
      const double scale_ = std::max({std::abs(g[idx]), std::abs(fd), 1e-6});
      INFO("component " << idx << " analytic " << g[idx] << " fd " << fd);
      REQUIRE(diff / scale_ < 1e-3);
    }
    t->clear_grad();
  }
}

TEST_CASE("checkpoint round trip resumes bit-exactly") {
  const std::uint64_t landscape = 71;
  ControllerState st = ControllerState::make(2, 2, 1, 61);
  st.init_slot(0, random_architecture(2, st.rng), surrogate_evaluate(random_architecture(2, st.rng), landscape));
  st.init_slot(1, random_architecture(2, st.rng), 0.2);
  auto drive = [&](ControllerState& s, int steps) {
    std::vector<std::string> seen;
    for (int t = 0; t < steps; ++t) {
      s.active_slot = t % 2;
      Proposal prop = propose(s);
      const double metric = surrogate_evaluate(prop.offspring, landscape);
      update(s, prop, metric);
      seen.push_back(to_string(prop.offspring));
    }
    return seen;
  };
  drive(st, 6);
  const auto path = (std::filesystem::temp_directory_path() / "agnn_ctrl.ckpt").string();
  save_checkpoint(st, path);
  ControllerState resumed = load_checkpoint(path);
  const auto a = drive(st, 8);
  const auto b = drive(resumed, 8);
  REQUIRE(a == b);
  for (int c = 0; c < 6; ++c)
    REQUIRE(st.encoders[static_cast<std::size_t>(c)].baseline ==
            resumed.encoders[static_cast<std::size_t>(c)].baseline);
}
