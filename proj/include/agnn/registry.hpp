#pragma once

#include <map>
#include <mutex>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "agnn/search_space.hpp"
#include "agnn/snapshot.hpp"
#include "agnn/tensor.hpp"

namespace agnn {

enum class ParamRole {
  TransformW,
  AttnVec,
  AttnVecL,
  AttnVecR,
  AttnMat,
  CombinerMlp1,
  CombinerMlp2,
  NonShareable
};

inline const char* role_name(ParamRole r) {
  switch (r) {
    case ParamRole::TransformW: return "W";
    case ParamRole::AttnVec: return "attn_a";
    case ParamRole::AttnVecL: return "attn_al";
    case ParamRole::AttnVecR: return "attn_ar";
    case ParamRole::AttnMat: return "attn_mat";
    case ParamRole::CombinerMlp1: return "mlp1";
    case ParamRole::CombinerMlp2: return "mlp2";
    case ParamRole::NonShareable: return "nonshareable";
  }
  return "?";
}

// Structural signature that gates weight transfer: same layer position, role,
// tensor shape, head count, attention function, and activation function.
struct ShareKey {
  int layer_index = 0;
  ParamRole role = ParamRole::NonShareable;
  int in_dim = 0;
  int out_dim = 0;
  int heads = 1;
  AttentionKind attention_fn = AttentionKind::Constant;
  Activation activation = Activation::ReLU;
  int head_index = 0;  // per-head subkey so equal-head layers transfer head-to-head

  bool operator==(const ShareKey& o) const {
    return layer_index == o.layer_index && role == o.role && in_dim == o.in_dim &&
           out_dim == o.out_dim && heads == o.heads && attention_fn == o.attention_fn &&
           activation == o.activation && head_index == o.head_index;
  }

  // Serialized form: L<idx>/<role>.<head>/<in>x<out>/h<heads>/<attn>/<act>
  std::string to_string() const {
    return "L" + std::to_string(layer_index) + "/" + role_name(role) + "." +
           std::to_string(head_index) + "/" + std::to_string(in_dim) + "x" +
           std::to_string(out_dim) + "/h" + std::to_string(heads) + "/" +
           attention_name(attention_fn) + "/" + activation_name(activation);
  }
};

// One trainable tensor of a compiled model, with its sharing signature.
// `slot` is the model-local label ("W.0", "bn_gamma", ...) used by the
// relaxed policy and for snapshot names.
struct ManifestEntry {
  std::string name;  // unique within the model, "L<idx>/<slot>"
  std::string slot;
  ShareKey key;
  Tensor tensor;
};

enum class SharePolicy { Constrained, Relaxed };

struct RegistryStats {
  std::map<std::string, int> entries_per_role;
  long total_entries = 0;
  long lookups = 0;
  long transfers = 0;
  double hit_rate() const {
    return lookups == 0 ? 0.0 : static_cast<double>(transfers) / static_cast<double>(lookups);
  }
};

// Constrained parameter store. Many concurrent readers or one writer;
// inherit() is a read transaction, writeback() a write transaction.
class ParameterRegistry {
 public:
  explicit ParameterRegistry(SharePolicy policy = SharePolicy::Constrained) : policy_(policy) {}

  SharePolicy policy() const { return policy_; }

  // Copies stored values into every matching shareable tensor; returns the
  // number of tensors transferred. Fresh initialization is kept elsewhere.
  int inherit(const std::vector<ManifestEntry>& manifest) {
    std::shared_lock lock(mutex_);
    int transferred = 0;
    for (const auto& e : manifest) {
      if (!eligible(e)) continue;
      ++lookups_;
      const auto it = store_.find(effective_key(e));
      if (it == store_.end()) continue;
      const Entry& stored = it->second;
      if (stored.values.size() != e.tensor.numel())
        throw std::runtime_error("registry corruption: stored shape mismatch for key " +
                                 effective_key(e));
      Tensor t = e.tensor;
      t.value() = stored.values;
      ++transferred;
      ++transfers_;
    }
    return transferred;
  }

  // Insert-or-overwrite with the most recent trained values.
  void writeback(const std::vector<ManifestEntry>& manifest, long trial_id, double metric) {
    std::unique_lock lock(mutex_);
    for (const auto& e : manifest) {
      if (!eligible(e)) continue;
      Entry& slot = store_[effective_key(e)];
      slot.values = e.tensor.value();
      slot.dims = e.tensor.shape();
      slot.trial_id = trial_id;
      slot.metric = metric;
      slot.role = e.key.role;
    }
  }

  RegistryStats stats() const {
    std::shared_lock lock(mutex_);
    RegistryStats s;
    s.total_entries = static_cast<long>(store_.size());
    for (const auto& [k, v] : store_) ++s.entries_per_role[role_name(v.role)];
    s.lookups = lookups_;
    s.transfers = transfers_;
    return s;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return store_.size();
  }

  bool contains_role(ParamRole r) const {
    std::shared_lock lock(mutex_);
    for (const auto& [k, v] : store_)
      if (v.role == r) return true;
    return false;
  }

  void save(const std::string& path) const {
    std::shared_lock lock(mutex_);
    std::vector<SnapshotRecord> records;
    for (const auto& [k, v] : store_) records.push_back({k, v.dims, v.values});
    write_snapshot(path, records);
  }

  void load(const std::string& path) {
    std::unique_lock lock(mutex_);
    store_.clear();
    for (auto& rec : read_snapshot(path)) {
      Entry e;
      e.values = std::move(rec.values);
      e.dims = rec.dims;
      e.trial_id = -1;
      e.metric = 0;
      e.role = ParamRole::NonShareable;  // role is cosmetic after reload
      // Recover the role from the serialized key for stats purposes.
      const auto slash = rec.name.find('/');
      if (slash != std::string::npos) {
        const auto dot = rec.name.find('.', slash);
        const std::string role = rec.name.substr(slash + 1, dot - slash - 1);
        for (int r = 0; r <= static_cast<int>(ParamRole::NonShareable); ++r)
          if (role == role_name(static_cast<ParamRole>(r))) e.role = static_cast<ParamRole>(r);
      }
      store_[rec.name] = std::move(e);
    }
  }

 private:
  struct Entry {
    std::vector<double> values;
    Shape dims;
    long trial_id = -1;
    double metric = 0;
    ParamRole role = ParamRole::NonShareable;
  };

  bool eligible(const ManifestEntry& e) const {
    if (policy_ == SharePolicy::Constrained) return e.key.role != ParamRole::NonShareable;
    return true;  // relaxed: anything whose shape matches may transfer
  }

  std::string effective_key(const ManifestEntry& e) const {
    if (policy_ == SharePolicy::Constrained) return e.key.to_string();
    // Relaxed (GraphNAS-style): layer position + tensor slot + shape only.
    return "L" + std::to_string(e.key.layer_index) + "/" + e.slot + "/" +
           std::to_string(e.key.in_dim) + "x" + std::to_string(e.key.out_dim);
  }

  SharePolicy policy_;
  std::map<std::string, Entry> store_;
  mutable std::shared_mutex mutex_;
  mutable long lookups_ = 0;
  mutable long transfers_ = 0;
};

}  // namespace agnn
