#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "agnn/rng.hpp"
#include "agnn/tensor.hpp"

namespace agnn {

// The six per-layer action classes, in the canonical per-layer string order.
enum class ActionClass { HiddenDim, AttentionFn, Heads, Aggregator, Combiner, Activation };
constexpr int kNumActionClasses = 6;

enum class AttentionKind { Constant, Gcn, Gat, SymGat, Cos, Linear, GeneLinear };
enum class AggregatorKind { Sum, Mean, MaxPool };
enum class CombinerKind { Identity, Mlp };

constexpr std::array<int, 7> kHiddenDims{4, 8, 16, 32, 64, 128, 256};
constexpr std::array<int, 6> kHeadCounts{1, 2, 4, 6, 8, 16};

inline const char* action_class_name(ActionClass c) {
  switch (c) {
    case ActionClass::HiddenDim: return "hidden_dim";
    case ActionClass::AttentionFn: return "attention_fn";
    case ActionClass::Heads: return "heads";
    case ActionClass::Aggregator: return "aggregator";
    case ActionClass::Combiner: return "combiner";
    case ActionClass::Activation: return "activation";
  }
  return "?";
}

inline const char* attention_name(AttentionKind a) {
  switch (a) {
    case AttentionKind::Constant: return "constant";
    case AttentionKind::Gcn: return "gcn";
    case AttentionKind::Gat: return "gat";
    case AttentionKind::SymGat: return "sym-gat";
    case AttentionKind::Cos: return "cos";
    case AttentionKind::Linear: return "linear";
    case AttentionKind::GeneLinear: return "gene-linear";
  }
  return "?";
}

inline const char* aggregator_name(AggregatorKind a) {
  switch (a) {
    case AggregatorKind::Sum: return "sum";
    case AggregatorKind::Mean: return "mean";
    case AggregatorKind::MaxPool: return "maxpool";
  }
  return "?";
}

inline const char* combiner_name(CombinerKind c) {
  return c == CombinerKind::Identity ? "identity" : "mlp";
}

inline int candidate_count(ActionClass c) {
  switch (c) {
    case ActionClass::HiddenDim: return 7;
    case ActionClass::AttentionFn: return 7;
    case ActionClass::Heads: return 6;
    case ActionClass::Aggregator: return 3;
    case ActionClass::Combiner: return 2;
    case ActionClass::Activation: return 8;
  }
  return 0;
}

// Candidate value names in their frozen canonical order; controller token
// ids depend on these orders.
inline std::string candidate_name(ActionClass c, int idx) {
  if (idx < 0 || idx >= candidate_count(c))
    throw std::invalid_argument("candidate_name: index out of range");
  switch (c) {
    case ActionClass::HiddenDim: return std::to_string(kHiddenDims[static_cast<std::size_t>(idx)]);
    case ActionClass::AttentionFn: return attention_name(static_cast<AttentionKind>(idx));
    case ActionClass::Heads: return std::to_string(kHeadCounts[static_cast<std::size_t>(idx)]);
    case ActionClass::Aggregator: return aggregator_name(static_cast<AggregatorKind>(idx));
    case ActionClass::Combiner: return combiner_name(static_cast<CombinerKind>(idx));
    case ActionClass::Activation: return activation_name(static_cast<Activation>(idx));
  }
  return "?";
}

inline std::vector<std::string> candidate_set(ActionClass c) {
  std::vector<std::string> out;
  for (int i = 0; i < candidate_count(c); ++i) out.push_back(candidate_name(c, i));
  return out;
}

// Token vocabulary: the disjoint union of all (class, value) pairs, 33
// tokens, so class identity is recoverable from any token id.
constexpr int kVocabSize = 33;

inline int class_offset(ActionClass c) {
  static constexpr std::array<int, 6> off{0, 7, 14, 20, 23, 25};
  return off[static_cast<std::size_t>(c)];
}

inline int token_id(ActionClass c, int value_index) {
  if (value_index < 0 || value_index >= candidate_count(c))
    throw std::invalid_argument("token_id: value index out of range for class " +
                                std::string(action_class_name(c)));
  return class_offset(c) + value_index;
}

inline ActionClass token_class(int id) {
  if (id < 0 || id >= kVocabSize) throw std::invalid_argument("token_class: id out of range");
  for (int c = kNumActionClasses - 1; c >= 0; --c)
    if (id >= class_offset(static_cast<ActionClass>(c))) return static_cast<ActionClass>(c);
  return ActionClass::HiddenDim;
}

inline int token_value(int id) { return id - class_offset(token_class(id)); }

// ---------------------------------------------------------------------------

struct LayerSpec {
  int hidden_dim = 16;
  AttentionKind attention_fn = AttentionKind::Constant;
  int heads = 1;
  AggregatorKind aggregator = AggregatorKind::Sum;
  CombinerKind combiner = CombinerKind::Identity;
  Activation activation = Activation::ReLU;

  int value_index(ActionClass c) const {
    switch (c) {
      case ActionClass::HiddenDim:
        for (int i = 0; i < 7; ++i)
          if (kHiddenDims[static_cast<std::size_t>(i)] == hidden_dim) return i;
        throw std::invalid_argument("LayerSpec: hidden_dim not in candidate set");
      case ActionClass::AttentionFn: return static_cast<int>(attention_fn);
      case ActionClass::Heads:
        for (int i = 0; i < 6; ++i)
          if (kHeadCounts[static_cast<std::size_t>(i)] == heads) return i;
        throw std::invalid_argument("LayerSpec: heads not in candidate set");
      case ActionClass::Aggregator: return static_cast<int>(aggregator);
      case ActionClass::Combiner: return static_cast<int>(combiner);
      case ActionClass::Activation: return static_cast<int>(activation);
    }
    return -1;
  }

  void set_value_index(ActionClass c, int idx) {
    if (idx < 0 || idx >= candidate_count(c))
      throw std::invalid_argument("LayerSpec: value index out of range");
    switch (c) {
      case ActionClass::HiddenDim: hidden_dim = kHiddenDims[static_cast<std::size_t>(idx)]; break;
      case ActionClass::AttentionFn: attention_fn = static_cast<AttentionKind>(idx); break;
      case ActionClass::Heads: heads = kHeadCounts[static_cast<std::size_t>(idx)]; break;
      case ActionClass::Aggregator: aggregator = static_cast<AggregatorKind>(idx); break;
      case ActionClass::Combiner: combiner = static_cast<CombinerKind>(idx); break;
      case ActionClass::Activation: activation = static_cast<Activation>(idx); break;
    }
  }

  bool operator==(const LayerSpec& o) const {
    return hidden_dim == o.hidden_dim && attention_fn == o.attention_fn && heads == o.heads &&
           aggregator == o.aggregator && combiner == o.combiner && activation == o.activation;
  }
};

struct ArchitectureDescriptor {
  std::vector<LayerSpec> layers;
  int n_layers() const { return static_cast<int>(layers.size()); }
  bool operator==(const ArchitectureDescriptor& o) const { return layers == o.layers; }
};

inline boost::multiprecision::cpp_int space_cardinality(int n_layers) {
  if (n_layers < 0) throw std::invalid_argument("space_cardinality: n_layers must be >= 0");
  boost::multiprecision::cpp_int per_layer = 1;
  for (int c = 0; c < kNumActionClasses; ++c)
    per_layer *= candidate_count(static_cast<ActionClass>(c));
  boost::multiprecision::cpp_int total = 1;
  for (int i = 0; i < n_layers; ++i) total *= per_layer;
  return total;
}

inline std::vector<int> encode(const ArchitectureDescriptor& a) {
  std::vector<int> tokens;
  tokens.reserve(static_cast<std::size_t>(a.n_layers()) * kNumActionClasses);
  for (const auto& layer : a.layers)
    for (int c = 0; c < kNumActionClasses; ++c) {
      const auto cls = static_cast<ActionClass>(c);
      tokens.push_back(token_id(cls, layer.value_index(cls)));
    }
  return tokens;
}

inline ArchitectureDescriptor decode(const std::vector<int>& tokens) {
  if (tokens.empty()) throw std::invalid_argument("decode: empty token sequence");
  if (tokens.size() % kNumActionClasses != 0)
    throw std::invalid_argument("decode: token count " + std::to_string(tokens.size()) +
                                " is not a multiple of 6");
  ArchitectureDescriptor a;
  a.layers.resize(tokens.size() / kNumActionClasses);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto expected = static_cast<ActionClass>(i % kNumActionClasses);
    const int id = tokens[i];
    if (id < 0 || id >= kVocabSize)
      throw std::invalid_argument("decode: unknown token " + std::to_string(id) + " at position " +
                                  std::to_string(i) + " (expected class " +
                                  action_class_name(expected) + ")");
    if (token_class(id) != expected)
      throw std::invalid_argument("decode: token at position " + std::to_string(i) +
                                  " belongs to class " +
                                  std::string(action_class_name(token_class(id))) +
                                  ", expected " + action_class_name(expected));
    a.layers[i / kNumActionClasses].set_value_index(expected, token_value(id));
  }
  return a;
}

// encode(a) with the given class's tokens removed: length 5n, order kept.
inline std::vector<int> subarchitecture(const ArchitectureDescriptor& a, ActionClass c) {
  std::vector<int> tokens = encode(a);
  std::vector<int> out;
  out.reserve(tokens.size() - static_cast<std::size_t>(a.n_layers()));
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (static_cast<ActionClass>(i % kNumActionClasses) != c) out.push_back(tokens[i]);
  return out;
}

inline ArchitectureDescriptor random_architecture(int n_layers, Rng& rng) {
  if (n_layers < 1) throw std::invalid_argument("random_architecture: n_layers must be >= 1");
  ArchitectureDescriptor a;
  a.layers.resize(static_cast<std::size_t>(n_layers));
  for (auto& layer : a.layers)
    for (int c = 0; c < kNumActionClasses; ++c) {
      const auto cls = static_cast<ActionClass>(c);
      layer.set_value_index(cls, static_cast<int>(rng.uniform_int(
                                     static_cast<std::uint64_t>(candidate_count(cls)))));
    }
  return a;
}

// Human-readable form used in logs and CSVs:
//   [dim=16|att=gcn|heads=1|agg=sum|comb=mlp|act=relu]...
inline std::string to_string(const ArchitectureDescriptor& a) {
  std::string out;
  for (const auto& l : a.layers) {
    out += "[dim=" + std::to_string(l.hidden_dim);
    out += "|att=" + std::string(attention_name(l.attention_fn));
    out += "|heads=" + std::to_string(l.heads);
    out += "|agg=" + std::string(aggregator_name(l.aggregator));
    out += "|comb=" + std::string(combiner_name(l.combiner));
    out += "|act=" + std::string(activation_name(l.activation));
    out += "]";
  }
  return out;
}

inline ArchitectureDescriptor parse_architecture(const std::string& s) {
  ArchitectureDescriptor a;
  std::size_t pos = 0;
  static constexpr std::array<const char*, 6> keys{"dim", "att", "heads", "agg", "comb", "act"};
  while (pos < s.size()) {
    if (s[pos] != '[') throw std::invalid_argument("parse_architecture: expected '[' at " + std::to_string(pos));
    const std::size_t end = s.find(']', pos);
    if (end == std::string::npos) throw std::invalid_argument("parse_architecture: missing ']'");
    std::string body = s.substr(pos + 1, end - pos - 1);
    LayerSpec layer;
    std::size_t field = 0, start = 0;
    while (field < 6) {
      std::size_t bar = body.find('|', start);
      std::string item = body.substr(start, bar == std::string::npos ? std::string::npos : bar - start);
      const std::size_t eq = item.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("parse_architecture: malformed field '" + item + "'");
      const std::string key = item.substr(0, eq), val = item.substr(eq + 1);
      if (key != keys[field])
        throw std::invalid_argument("parse_architecture: expected key '" + std::string(keys[field]) +
                                    "', got '" + key + "'");
      const auto cls = static_cast<ActionClass>(field);
      int idx = -1;
      for (int i = 0; i < candidate_count(cls); ++i)
        if (candidate_name(cls, i) == val) { idx = i; break; }
      if (idx < 0)
        throw std::invalid_argument("parse_architecture: layer " + std::to_string(a.layers.size()) +
                                    ": value '" + val + "' not in candidate set of class " +
                                    action_class_name(cls));
      layer.set_value_index(cls, idx);
      ++field;
      if (bar == std::string::npos) break;
      start = bar + 1;
    }
    if (field != 6) throw std::invalid_argument("parse_architecture: layer needs 6 fields");
    a.layers.push_back(layer);
    pos = end + 1;
  }
  if (a.layers.empty()) throw std::invalid_argument("parse_architecture: no layers");
  return a;
}

}  // namespace agnn
