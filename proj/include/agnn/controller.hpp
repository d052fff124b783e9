#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "agnn/rng.hpp"
#include "agnn/search_space.hpp"
#include "agnn/snapshot.hpp"
#include "agnn/tensor.hpp"

namespace agnn {

constexpr int kControllerHidden = 100;
constexpr double kControllerTemperature = 5.0;
constexpr double kControllerTanhConst = 2.5;
constexpr double kControllerLr = 3.5e-4;
constexpr double kEntropyBonusWeight = 1e-4;
constexpr double kBaselineDecay = 0.95;
constexpr double kGuiderEntropyFloor = 1e-8;

// Per-class recurrent encoder: token embedding, one-layer LSTM with 100
// hidden units, and a projection onto the class's candidate set.
struct ClassEncoder {
  ActionClass cls = ActionClass::HiddenDim;
  int m = 0;  // |candidate_set(cls)|
  Tensor embed;  // (33 x 100)
  LstmWeights lstm;
  Tensor w_out;  // (100 x m)
  double baseline = 0.0;  // b_c, exponential moving average of shaped rewards
  std::array<AdamState, 5> opt;

  std::array<Tensor*, 5> params() {
    return {&embed, &lstm.w_ih, &lstm.w_hh, &lstm.bias, &w_out};
  }
  std::array<const Tensor*, 5> params() const {
    return {&embed, &lstm.w_ih, &lstm.w_hh, &lstm.bias, &w_out};
  }
};

inline ClassEncoder make_class_encoder(ActionClass cls, Rng& rng) {
  ClassEncoder e;
  e.cls = cls;
  e.m = candidate_count(cls);
  const std::size_t h = kControllerHidden;
  // Controller weights start uniform in [-0.1, 0.1]; biases are zero except
  // the forget gate block, which starts at 1.
  e.embed = uniform_init({kVocabSize, h}, -0.1, 0.1, rng);
  e.lstm.w_ih = uniform_init({h, 4 * h}, -0.1, 0.1, rng);
  e.lstm.w_hh = uniform_init({h, 4 * h}, -0.1, 0.1, rng);
  e.lstm.bias = Tensor::zeros({4 * h}, true);
  for (std::size_t i = h; i < 2 * h; ++i) e.lstm.bias.value()[i] = 1.0;
  e.w_out = uniform_init({h, static_cast<std::size_t>(e.m)}, -0.1, 0.1, rng);
  return e;
}

struct DecodeResult {
  std::vector<int> actions;                     // decided value indices, one per layer
  std::vector<double> log_probs;                // log P(a_t) under the sampling distribution
  std::vector<std::vector<double>> step_dists;  // n x m step distributions
  std::vector<Tensor> logp_nodes;               // tape scalars (only when a tape is active)
};

// Consumes the 5n subarchitecture tokens, then decodes n actions
// autoregressively; each step's logits pass through 2.5*tanh(logits/5.0)
// before the softmax, and the sampled token feeds the next step. In replay
// mode (`forced`) the given actions are teacher-forced so log-probs can be
// rebuilt on an active tape.
inline DecodeResult encode_and_decide(ClassEncoder& enc, const std::vector<int>& sub, int n,
                                      Rng* rng, const std::vector<int>* forced = nullptr,
                                      double temperature = kControllerTemperature,
                                      double tanh_const = kControllerTanhConst) {
  for (int tok : sub)
    if (tok < 0 || tok >= kVocabSize)
      throw std::invalid_argument("encode_and_decide: token " + std::to_string(tok) +
                                  " outside vocabulary");
  if (forced && static_cast<int>(forced->size()) != n)
    throw std::invalid_argument("encode_and_decide: forced action count mismatch");
  DecodeResult res;
  Tensor h = Tensor::zeros({1, kControllerHidden});
  Tensor c = Tensor::zeros({1, kControllerHidden});
  for (int tok : sub) {
    Tensor x = gather_rows(enc.embed, {tok});
    auto [h2, c2] = lstm_cell(x, h, c, enc.lstm);
    h = h2;
    c = c2;
  }
  for (int t = 0; t < n; ++t) {
    Tensor logits = matmul(h, enc.w_out);
    Tensor squashed =
        scale(activation(scale(logits, 1.0 / temperature), Activation::Tanh), tanh_const);
    Tensor logp = row_log_softmax(squashed);
    std::vector<double> dist(static_cast<std::size_t>(enc.m));
    for (int j = 0; j < enc.m; ++j) dist[static_cast<std::size_t>(j)] = std::exp(logp.val(static_cast<std::size_t>(j)));
    int action;
    if (forced) {
      action = (*forced)[static_cast<std::size_t>(t)];
      if (action < 0 || action >= enc.m)
        throw std::invalid_argument("encode_and_decide: forced action out of range");
    } else {
      if (!rng) throw std::invalid_argument("encode_and_decide: rng required to sample");
      const double u = rng->uniform();
      double acc = 0;
      action = enc.m - 1;
      for (int j = 0; j < enc.m; ++j) {
        acc += dist[static_cast<std::size_t>(j)];
        if (u < acc) { action = j; break; }
      }
    }
    Tensor logp_a = select(logp, static_cast<std::size_t>(action));
    res.actions.push_back(action);
    res.log_probs.push_back(logp_a.val());
    res.step_dists.push_back(std::move(dist));
    res.logp_nodes.push_back(logp_a);
    Tensor x = gather_rows(enc.embed, {token_id(enc.cls, action)});
    auto [h2, c2] = lstm_cell(x, h, c, enc.lstm);
    h = h2;
    c = c2;
  }
  return res;
}

// E_c = sum over decode steps and candidates of -P log P (natural log).
inline double decision_entropy(const std::vector<std::vector<double>>& step_dists) {
  double e = 0;
  for (const auto& dist : step_dists)
    for (double p : dist)
      if (p > 0) e -= p * std::log(p);
  return e;
}

// Samples s distinct classes without replacement, probability proportional
// to E_c plus a tiny floor so zero-entropy classes stay reachable.
inline std::vector<ActionClass> guide_select(const std::array<double, 6>& entropies, int s,
                                             Rng& rng) {
  if (s < 1 || s > 6) throw std::invalid_argument("guide_select: s must be in [1,6]");
  std::array<double, 6> w{};
  std::array<bool, 6> taken{};
  for (int i = 0; i < 6; ++i) w[static_cast<std::size_t>(i)] = entropies[static_cast<std::size_t>(i)] + kGuiderEntropyFloor;
  std::vector<ActionClass> out;
  for (int pick = 0; pick < s; ++pick) {
    double total = 0;
    for (int i = 0; i < 6; ++i)
      if (!taken[static_cast<std::size_t>(i)]) total += w[static_cast<std::size_t>(i)];
    double u = rng.uniform() * total;
    int chosen = -1;
    for (int i = 0; i < 6; ++i) {
      if (taken[static_cast<std::size_t>(i)]) continue;
      u -= w[static_cast<std::size_t>(i)];
      chosen = i;
      if (u < 0) break;
    }
    taken[static_cast<std::size_t>(chosen)] = true;
    out.push_back(static_cast<ActionClass>(chosen));
  }
  return out;
}

struct Proposal {
  ArchitectureDescriptor offspring;
  std::vector<ActionClass> chosen_classes;
  std::array<std::vector<int>, 6> actions;
  std::array<std::vector<double>, 6> log_probs;
  std::array<std::vector<int>, 6> sub_tokens;
  std::array<double, 6> entropy{};
  int slot = 0;
  bool from_random = false;
};

struct ControllerState {
  struct Slot {
    ArchitectureDescriptor best;
    double metric = 0.0;  // M_b, the max validation metric observed
    bool initialized = false;
  };

  std::array<ClassEncoder, 6> encoders;
  std::vector<Slot> slots;
  int active_slot = 0;
  int n_layers = 2;
  int s = 1;  // mutation width |C|
  Rng rng;
  double lr = kControllerLr;
  double entropy_weight = kEntropyBonusWeight;
  double baseline_decay = kBaselineDecay;

  static ControllerState make(int n_layers, int restart_slots, int s, std::uint64_t seed) {
    if (restart_slots < 1) throw std::invalid_argument("controller: need >= 1 restart slot");
    ControllerState st;
    st.n_layers = n_layers;
    st.s = s;
    st.rng = Rng(seed);
    for (int c = 0; c < 6; ++c)
      st.encoders[static_cast<std::size_t>(c)] = make_class_encoder(static_cast<ActionClass>(c), st.rng);
    st.slots.resize(static_cast<std::size_t>(restart_slots));
    return st;
  }

  void init_slot(int slot, const ArchitectureDescriptor& best, double metric) {
    slots.at(static_cast<std::size_t>(slot)) = Slot{best, metric, true};
  }
};

// One conservative-explorer step: six per-class decodes over the active
// slot's best architecture, entropy-guided class choice, and the offspring
// with the chosen classes' actions replaced.
inline Proposal propose(ControllerState& st, int forced_s = -1) {
  ControllerState::Slot& slot = st.slots.at(static_cast<std::size_t>(st.active_slot));
  if (!slot.initialized) throw std::runtime_error("propose: active slot has no best architecture");
  const int n = st.n_layers;
  Proposal prop;
  prop.slot = st.active_slot;
  for (int c = 0; c < 6; ++c) {
    const auto cls = static_cast<ActionClass>(c);
    prop.sub_tokens[static_cast<std::size_t>(c)] = subarchitecture(slot.best, cls);
    DecodeResult res = encode_and_decide(st.encoders[static_cast<std::size_t>(c)],
                                         prop.sub_tokens[static_cast<std::size_t>(c)], n, &st.rng);
    prop.actions[static_cast<std::size_t>(c)] = res.actions;
    prop.log_probs[static_cast<std::size_t>(c)] = res.log_probs;
    prop.entropy[static_cast<std::size_t>(c)] = decision_entropy(res.step_dists);
  }
  const int width = forced_s > 0 ? forced_s : st.s;
  if (width >= 6) {
    for (int c = 0; c < 6; ++c) prop.chosen_classes.push_back(static_cast<ActionClass>(c));
  } else {
    prop.chosen_classes = guide_select(prop.entropy, width, st.rng);
  }
  prop.offspring = slot.best;
  for (ActionClass cls : prop.chosen_classes)
    for (int l = 0; l < n; ++l)
      prop.offspring.layers[static_cast<std::size_t>(l)].set_value_index(
          cls, prop.actions[static_cast<std::size_t>(static_cast<int>(cls))][static_cast<std::size_t>(l)]);
  return prop;
}

// Traditional-controller baseline: resample every class (s = 6).
inline Proposal propose_full_resample(ControllerState& st) { return propose(st, 6); }

// Random-search baseline: uniform descriptor, no encoder involvement.
inline Proposal propose_random(int n_layers, Rng& rng) {
  Proposal prop;
  prop.offspring = random_architecture(n_layers, rng);
  prop.from_random = true;
  return prop;
}

// REINFORCE update with reward shaping R = (M_o - M_b) + entropy bonus over
// the chosen classes; each chosen encoder takes one Adam step on
// -(R - b_c) * sum_t log P(a_t), then the conservative explorer replaces the
// slot's best only on strict improvement.
inline void update(ControllerState& st, const Proposal& prop, double offspring_metric) {
  if (prop.from_random) return;
  ControllerState::Slot& slot = st.slots.at(static_cast<std::size_t>(prop.slot));
  if (!slot.initialized) throw std::runtime_error("update: proposal/state mismatch (slot empty)");
  double bonus = 0;
  for (ActionClass cls : prop.chosen_classes) bonus += prop.entropy[static_cast<std::size_t>(static_cast<int>(cls))];
  const double reward = (offspring_metric - slot.metric) + st.entropy_weight * bonus;
  const int n = st.n_layers;
  for (ActionClass cls : prop.chosen_classes) {
    const auto ci = static_cast<std::size_t>(static_cast<int>(cls));
    ClassEncoder& enc = st.encoders[ci];
    Tape tape;
    TapeScope scope(tape);
    DecodeResult res = encode_and_decide(enc, prop.sub_tokens[ci], n, nullptr, &prop.actions[ci]);
    for (int t = 0; t < n; ++t)
      if (std::abs(res.log_probs[static_cast<std::size_t>(t)] -
                   prop.log_probs[ci][static_cast<std::size_t>(t)]) > 1e-9)
        throw std::runtime_error("update: proposal/state mismatch (encoder changed since propose)");
    Tensor total = res.logp_nodes[0];
    for (int t = 1; t < n; ++t) total = add(total, res.logp_nodes[static_cast<std::size_t>(t)]);
    const double advantage = reward - enc.baseline;
    Tensor loss = scale(total, -advantage);
    tape.backward(loss);
    auto params = enc.params();
    for (std::size_t p = 0; p < params.size(); ++p)
      adam_step(*params[p], enc.opt[p], st.lr);
    enc.baseline = st.baseline_decay * enc.baseline + (1.0 - st.baseline_decay) * reward;
  }
  if (offspring_metric > slot.metric) {
    slot.best = prop.offspring;
    slot.metric = offspring_metric;
  }
}

// ---------------------------------------------------------------------------
// Checkpointing: encoder tensors, optimizer moments, baselines, rng state,
// and per-slot bests — everything needed to resume a search bit-exactly.

namespace detail_ctrl {

inline std::vector<double> doubles_from_u64(const std::array<std::uint64_t, 4>& s) {
  std::vector<double> out(4);
  std::memcpy(out.data(), s.data(), sizeof(std::uint64_t) * 4);
  return out;
}

inline std::array<std::uint64_t, 4> u64_from_doubles(const std::vector<double>& v) {
  std::array<std::uint64_t, 4> s{};
  std::memcpy(s.data(), v.data(), sizeof(std::uint64_t) * 4);
  return s;
}

}  // namespace detail_ctrl

inline void save_checkpoint(const ControllerState& st, const std::string& path) {
  std::vector<SnapshotRecord> recs;
  static constexpr std::array<const char*, 5> pnames{"embed", "w_ih", "w_hh", "bias", "w_out"};
  for (int c = 0; c < 6; ++c) {
    const ClassEncoder& enc = st.encoders[static_cast<std::size_t>(c)];
    const std::string prefix = "enc" + std::to_string(c) + "/";
    auto params = enc.params();
    for (std::size_t p = 0; p < params.size(); ++p) {
      recs.push_back({prefix + pnames[p], params[p]->shape(), params[p]->value()});
      const AdamState& a = enc.opt[p];
      recs.push_back({prefix + pnames[p] + ".adam_m", {a.m.size()}, a.m});
      recs.push_back({prefix + pnames[p] + ".adam_v", {a.v.size()}, a.v});
      recs.push_back({prefix + pnames[p] + ".adam_t", {1}, {static_cast<double>(a.t)}});
    }
    recs.push_back({prefix + "baseline", {1}, {enc.baseline}});
  }
  recs.push_back({"__rng", {4}, detail_ctrl::doubles_from_u64(st.rng.state())});
  recs.push_back({"__meta", {4},
                  {static_cast<double>(st.n_layers), static_cast<double>(st.s),
                   static_cast<double>(st.slots.size()), static_cast<double>(st.active_slot)}});
  for (std::size_t i = 0; i < st.slots.size(); ++i) {
    const auto& slot = st.slots[i];
    const std::string prefix = "slot" + std::to_string(i) + "/";
    recs.push_back({prefix + "initialized", {1}, {slot.initialized ? 1.0 : 0.0}});
    recs.push_back({prefix + "metric", {1}, {slot.metric}});
    if (slot.initialized) {
      const auto tokens = encode(slot.best);
      std::vector<double> td(tokens.begin(), tokens.end());
      recs.push_back({prefix + "best_tokens", {td.size()}, td});
    }
  }
  write_snapshot(path, recs);
}

inline ControllerState load_checkpoint(const std::string& path) {
  auto recs = read_snapshot(path);
  auto find = [&](const std::string& name) -> const SnapshotRecord& {
    for (const auto& r : recs)
      if (r.name == name) return r;
    throw std::runtime_error("load_checkpoint: missing record " + name);
  };
  const auto& meta = find("__meta").values;
  ControllerState st = ControllerState::make(static_cast<int>(meta[0]),
                                             static_cast<int>(meta[2]),
                                             static_cast<int>(meta[1]), 0);
  st.active_slot = static_cast<int>(meta[3]);
  st.rng.set_state(detail_ctrl::u64_from_doubles(find("__rng").values));
  static constexpr std::array<const char*, 5> pnames{"embed", "w_ih", "w_hh", "bias", "w_out"};
  for (int c = 0; c < 6; ++c) {
    ClassEncoder& enc = st.encoders[static_cast<std::size_t>(c)];
    const std::string prefix = "enc" + std::to_string(c) + "/";
    auto params = enc.params();
    for (std::size_t p = 0; p < params.size(); ++p) {
      params[p]->value() = find(prefix + pnames[p]).values;
      enc.opt[p].m = find(prefix + pnames[p] + ".adam_m").values;
      enc.opt[p].v = find(prefix + pnames[p] + ".adam_v").values;
      enc.opt[p].t = static_cast<long>(find(prefix + pnames[p] + ".adam_t").values[0]);
    }
    enc.baseline = find(prefix + "baseline").values[0];
  }
  for (std::size_t i = 0; i < st.slots.size(); ++i) {
    const std::string prefix = "slot" + std::to_string(i) + "/";
    const bool init = find(prefix + "initialized").values[0] != 0.0;
    if (!init) continue;
    const auto& td = find(prefix + "best_tokens").values;
    std::vector<int> tokens(td.begin(), td.end());
    st.init_slot(static_cast<int>(i), decode(tokens), find(prefix + "metric").values[0]);
  }
  return st;
}

}  // namespace agnn
