#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "agnn/graph.hpp"
#include "agnn/registry.hpp"
#include "agnn/search_space.hpp"
#include "agnn/snapshot.hpp"
#include "agnn/tensor.hpp"

namespace agnn {

constexpr int kCombinerMlpHidden = 128;

// One compiled graph convolution. Heads share no parameters with each other;
// attention tensors exist only for the rows that use them.
struct CompiledLayer {
  LayerSpec spec;
  int layer_index = 0;
  int in_dim = 0;        // total input width, including a landed skip
  int head_out_dim = 0;  // 2d for IDENTITY, d for MLP
  int out_dim = 0;       // merged width: heads*head_out (intermediate), head_out (final)
  bool is_final = false;

  std::vector<Tensor> transform_w;              // per head: (in_dim x d)
  std::vector<Tensor> attn_a;                   // per head: (2d), GAT / SYM-GAT / COS
  std::vector<Tensor> attn_al, attn_ar;         // per head: (d), LINEAR
  std::vector<Tensor> attn_mat;                 // per head: (d x d), GENE-LINEAR
  std::vector<Tensor> mlp1, mlp2;               // per head: (2d x 128), (128 x d)
  Tensor bn_gamma, bn_beta;                     // (out_dim)
  BatchNormBuffers bn;
};

struct CompiledModel {
  ArchitectureDescriptor arch;
  int in_dim = 0;
  int num_classes = 0;
  std::vector<CompiledLayer> layers;
  std::vector<char> receives_skip;   // layer i takes layer i-2's output by concatenation
  std::vector<Tensor> skip_adapter;  // square map on the skip source, per receiving layer
  Tensor out_proj;                   // (last out_dim x num_classes)
};

// Fixed skip rule: present between intermediate layers once the stack is
// deep enough (n >= 3), from layer k's output into layer k+2's input.
inline bool layer_receives_skip(int layer_index, int n_layers) {
  return n_layers >= 3 && layer_index >= 2;
}

inline CompiledModel build(const ArchitectureDescriptor& arch, int in_dim, int num_classes,
                           std::uint64_t seed) {
  if (arch.n_layers() < 1) throw std::invalid_argument("build: descriptor must have >= 1 layer");
  Rng rng(seed);
  CompiledModel m;
  m.arch = arch;
  m.in_dim = in_dim;
  m.num_classes = num_classes;
  const int n = arch.n_layers();
  std::vector<int> out_dims(static_cast<std::size_t>(n));
  int prev_out = in_dim;
  for (int i = 0; i < n; ++i) {
    const LayerSpec& spec = arch.layers[static_cast<std::size_t>(i)];
    CompiledLayer layer;
    layer.spec = spec;
    layer.layer_index = i;
    layer.is_final = (i == n - 1);
    const bool skip = layer_receives_skip(i, n);
    m.receives_skip.push_back(skip ? 1 : 0);
    const int skip_dim = skip ? out_dims[static_cast<std::size_t>(i - 2)] : 0;
    layer.in_dim = prev_out + skip_dim;
    const int d = spec.hidden_dim;
    layer.head_out_dim = spec.combiner == CombinerKind::Mlp ? d : 2 * d;
    layer.out_dim = layer.is_final ? layer.head_out_dim : spec.heads * layer.head_out_dim;
    for (int h = 0; h < spec.heads; ++h) {
      layer.transform_w.push_back(glorot_init({static_cast<std::size_t>(layer.in_dim),
                                               static_cast<std::size_t>(d)}, rng));
      switch (spec.attention_fn) {
        case AttentionKind::Gat:
        case AttentionKind::SymGat:
        case AttentionKind::Cos:
          layer.attn_a.push_back(glorot_init({static_cast<std::size_t>(2 * d)}, rng));
          break;
        case AttentionKind::Linear:
          layer.attn_al.push_back(glorot_init({static_cast<std::size_t>(d)}, rng));
          layer.attn_ar.push_back(glorot_init({static_cast<std::size_t>(d)}, rng));
          break;
        case AttentionKind::GeneLinear:
          layer.attn_mat.push_back(glorot_init({static_cast<std::size_t>(d),
                                                static_cast<std::size_t>(d)}, rng));
          break;
        case AttentionKind::Constant:
        case AttentionKind::Gcn:
          break;
      }
      if (spec.combiner == CombinerKind::Mlp) {
        layer.mlp1.push_back(glorot_init({static_cast<std::size_t>(2 * d), kCombinerMlpHidden}, rng));
        layer.mlp2.push_back(glorot_init({kCombinerMlpHidden, static_cast<std::size_t>(d)}, rng));
      }
    }
    layer.bn_gamma = Tensor::from_values({static_cast<std::size_t>(layer.out_dim)},
                                         std::vector<double>(static_cast<std::size_t>(layer.out_dim), 1.0), true);
    layer.bn_beta = Tensor::zeros({static_cast<std::size_t>(layer.out_dim)}, true);
    layer.bn.init(static_cast<std::size_t>(layer.out_dim));
    if (skip)
      m.skip_adapter.push_back(glorot_init({static_cast<std::size_t>(skip_dim),
                                            static_cast<std::size_t>(skip_dim)}, rng));
    else
      m.skip_adapter.push_back(Tensor());
    out_dims[static_cast<std::size_t>(i)] = layer.out_dim;
    prev_out = layer.out_dim;
    m.layers.push_back(std::move(layer));
  }
  m.out_proj = glorot_init({static_cast<std::size_t>(prev_out),
                            static_cast<std::size_t>(num_classes)}, rng);
  return m;
}

// ---------------------------------------------------------------------------
// Forward passes

struct ForwardContext {
  bool train = false;
  double dropout = 0.0;
  Rng* rng = nullptr;  // draws dropout stream ids; required when train && dropout > 0

  bool wants_dropout() const { return train && dropout > 0.0; }
  std::uint64_t next_stream() {
    if (!rng) throw std::invalid_argument("forward: dropout requires an rng");
    return rng->next_u64();
  }
};

namespace detail_gnn {

inline bool attention_is_learned(AttentionKind k) {
  switch (k) {
    case AttentionKind::Constant:
    case AttentionKind::Gcn:
      return false;
    default:
      return true;
  }
}

// Raw (pre-normalization) edge scores for one head, vectorized over the
// graph's directed edge list (sorted by destination).
inline Tensor head_edge_scores(const CompiledLayer& layer, int head, const Tensor& z,
                               const Graph& g) {
  const std::size_t e = g.edge_src.size();
  const int d = layer.spec.hidden_dim;
  switch (layer.spec.attention_fn) {
    case AttentionKind::Constant: {
      return Tensor::from_values({e}, std::vector<double>(e, 1.0));
    }
    case AttentionKind::Gcn: {
      std::vector<double> s(e);
      for (std::size_t i = 0; i < e; ++i) {
        const int di = g.degree[static_cast<std::size_t>(g.edge_dst[i])];
        const int dj = g.degree[static_cast<std::size_t>(g.edge_src[i])];
        if (di <= 0 || dj <= 0)
          throw std::runtime_error("gcn attention: zero degree on an edge endpoint");
        s[i] = 1.0 / std::sqrt(static_cast<double>(di) * static_cast<double>(dj));
      }
      return Tensor::from_values({e}, std::move(s));
    }
    case AttentionKind::Gat:
    case AttentionKind::SymGat:
    case AttentionKind::Cos: {
      const Tensor& a = layer.attn_a[static_cast<std::size_t>(head)];
      Tensor a_dst = slice_vec(a, 0, static_cast<std::size_t>(d));
      Tensor a_src = slice_vec(a, static_cast<std::size_t>(d), static_cast<std::size_t>(2 * d));
      Tensor per_dst = matvec(z, a_dst);
      Tensor per_src = matvec(z, a_src);
      Tensor s = add(gather_rows(per_dst, g.edge_dst), gather_rows(per_src, g.edge_src));
      if (layer.spec.attention_fn == AttentionKind::Cos) return s;
      Tensor gat = activation(s, Activation::LeakyReLU);
      if (layer.spec.attention_fn == AttentionKind::Gat) return gat;
      return add_reversed(gat, g.edge_rev);
    }
    case AttentionKind::Linear: {
      Tensor sl = matvec(z, layer.attn_al[static_cast<std::size_t>(head)]);
      Tensor sr = matvec(z, layer.attn_ar[static_cast<std::size_t>(head)]);
      Tensor per_node = activation(add(sl, sr), Activation::Tanh);
      return gather_rows(per_node, g.edge_dst);
    }
    case AttentionKind::GeneLinear: {
      // W_G tanh(z_i + z_i), reduced to a scalar by an all-ones projection.
      Tensor u = activation(scale(z, 2.0), Activation::Tanh);
      Tensor t = matmul(u, layer.attn_mat[static_cast<std::size_t>(head)]);
      Tensor per_node = row_sum(t);
      return gather_rows(per_node, g.edge_dst);
    }
  }
  throw std::logic_error("unreachable attention kind");
}

}  // namespace detail_gnn

// Scalar reference path for a single edge's raw attention score, independent
// of the vectorized tensor ops. i is the aggregating (destination) node.
inline double attention_score_raw(const CompiledLayer& layer, int head,
                                  const std::vector<double>& z_i, const std::vector<double>& z_j,
                                  int deg_i, int deg_j) {
  const int d = layer.spec.hidden_dim;
  auto dot_half = [&](const std::vector<double>& a, int off, const std::vector<double>& v) {
    double s = 0;
    for (int k = 0; k < d; ++k) s += a[static_cast<std::size_t>(off + k)] * v[static_cast<std::size_t>(k)];
    return s;
  };
  switch (layer.spec.attention_fn) {
    case AttentionKind::Constant:
      return 1.0;
    case AttentionKind::Gcn:
      if (deg_i <= 0 || deg_j <= 0)
        throw std::runtime_error("gcn attention: zero degree on an edge endpoint");
      return 1.0 / std::sqrt(static_cast<double>(deg_i) * static_cast<double>(deg_j));
    case AttentionKind::Gat: {
      const auto& a = layer.attn_a[static_cast<std::size_t>(head)].value();
      const double s = dot_half(a, 0, z_i) + dot_half(a, d, z_j);
      return activation_fwd(Activation::LeakyReLU, s);
    }
    case AttentionKind::SymGat: {
      const auto& a = layer.attn_a[static_cast<std::size_t>(head)].value();
      const double sij = activation_fwd(Activation::LeakyReLU, dot_half(a, 0, z_i) + dot_half(a, d, z_j));
      const double sji = activation_fwd(Activation::LeakyReLU, dot_half(a, 0, z_j) + dot_half(a, d, z_i));
      return sij + sji;
    }
    case AttentionKind::Cos: {
      const auto& a = layer.attn_a[static_cast<std::size_t>(head)].value();
      return dot_half(a, 0, z_i) + dot_half(a, d, z_j);
    }
    case AttentionKind::Linear: {
      const auto& al = layer.attn_al[static_cast<std::size_t>(head)].value();
      const auto& ar = layer.attn_ar[static_cast<std::size_t>(head)].value();
      double s = 0;
      for (int k = 0; k < d; ++k) s += (al[static_cast<std::size_t>(k)] + ar[static_cast<std::size_t>(k)]) * z_i[static_cast<std::size_t>(k)];
      return std::tanh(s);
    }
    case AttentionKind::GeneLinear: {
      const auto& wg = layer.attn_mat[static_cast<std::size_t>(head)].value();
      double total = 0;
      for (int r = 0; r < d; ++r) {
        const double u = std::tanh(2.0 * z_i[static_cast<std::size_t>(r)]);
        for (int c = 0; c < d; ++c) total += u * wg[static_cast<std::size_t>(r) * d + c];
      }
      return total;
    }
  }
  throw std::logic_error("unreachable attention kind");
}

inline Tensor layer_forward(CompiledLayer& layer, const Tensor& x, const Graph& g,
                            ForwardContext& ctx) {
  if (static_cast<int>(x.dim(1)) != layer.in_dim)
    throw std::invalid_argument("layer_forward: input width " + std::to_string(x.dim(1)) +
                                " != in_dim " + std::to_string(layer.in_dim));
  const int num_nodes = g.num_nodes;
  std::vector<Tensor> head_outs;
  head_outs.reserve(static_cast<std::size_t>(layer.spec.heads));
  for (int h = 0; h < layer.spec.heads; ++h) {
    Tensor z = matmul(x, layer.transform_w[static_cast<std::size_t>(h)]);
    Tensor scores = detail_gnn::head_edge_scores(layer, h, z, g);
    Tensor coef = detail_gnn::attention_is_learned(layer.spec.attention_fn)
                      ? segment_softmax(scores, g.edge_dst, num_nodes)
                      : scores;
    if (ctx.wants_dropout()) coef = dropout(coef, ctx.dropout, ctx.next_stream(), true);
    Tensor msgs = mul_rows(gather_rows(z, g.edge_src), coef);
    Reduce mode = Reduce::Sum;
    if (layer.spec.aggregator == AggregatorKind::Mean) mode = Reduce::Mean;
    if (layer.spec.aggregator == AggregatorKind::MaxPool) mode = Reduce::Max;
    Tensor agg = segment_reduce(msgs, g.edge_dst, num_nodes, mode);
    Tensor combined = concat_cols({z, agg});
    Tensor head_out;
    if (layer.spec.combiner == CombinerKind::Mlp) {
      Tensor hidden = activation(matmul(combined, layer.mlp1[static_cast<std::size_t>(h)]),
                                 Activation::ReLU);
      head_out = matmul(hidden, layer.mlp2[static_cast<std::size_t>(h)]);
    } else {
      head_out = combined;
    }
    head_outs.push_back(std::move(head_out));
  }
  Tensor merged;
  if (layer.is_final && layer.spec.heads > 1) {
    merged = head_outs[0];
    for (std::size_t h = 1; h < head_outs.size(); ++h) merged = add(merged, head_outs[h]);
    merged = scale(merged, 1.0 / static_cast<double>(layer.spec.heads));
  } else if (head_outs.size() == 1) {
    merged = head_outs[0];
  } else {
    merged = concat_cols(head_outs);
  }
  Tensor normed = batch_norm(merged, layer.bn_gamma, layer.bn_beta, layer.bn, ctx.train);
  return activation(normed, layer.spec.activation);
}

inline Tensor model_forward(CompiledModel& m, const Graph& g, ForwardContext ctx = {}) {
  if (g.feat_dim != m.in_dim)
    throw std::invalid_argument("model_forward: feature width mismatch");
  Tensor x = Tensor::from_values({static_cast<std::size_t>(g.num_nodes),
                                  static_cast<std::size_t>(g.feat_dim)},
                                 g.features);
  std::vector<Tensor> outs;
  Tensor prev = x;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    Tensor input = prev;
    if (m.receives_skip[i]) {
      Tensor adapted = matmul(outs[i - 2], m.skip_adapter[i]);
      input = concat_cols({input, adapted});
    }
    if (ctx.wants_dropout()) input = dropout(input, ctx.dropout, ctx.next_stream(), true);
    Tensor out = layer_forward(m.layers[i], input, g, ctx);
    outs.push_back(out);
    prev = out;
  }
  return matmul(prev, m.out_proj);
}

// ---------------------------------------------------------------------------
// Manifest: every trainable tensor exactly once, with its sharing signature.

inline std::vector<ManifestEntry> parameter_manifest(const CompiledModel& m) {
  std::vector<ManifestEntry> out;
  const int n = static_cast<int>(m.layers.size());
  for (int i = 0; i < n; ++i) {
    const CompiledLayer& layer = m.layers[static_cast<std::size_t>(i)];
    const LayerSpec& spec = layer.spec;
    const int d = spec.hidden_dim;
    auto key_for = [&](ParamRole role, int in_dim, int out_dim, int head) {
      ShareKey k;
      k.layer_index = i;
      k.role = role;
      k.in_dim = in_dim;
      k.out_dim = out_dim;
      k.heads = spec.heads;
      k.attention_fn = spec.attention_fn;
      k.activation = spec.activation;
      k.head_index = head;
      return k;
    };
    auto push = [&](const std::string& slot, ParamRole role, int in_dim, int out_dim, int head,
                    const Tensor& t) {
      out.push_back({"L" + std::to_string(i) + "/" + slot, slot,
                     key_for(role, in_dim, out_dim, head), t});
    };
    for (int h = 0; h < spec.heads; ++h) {
      push("W." + std::to_string(h), ParamRole::TransformW, layer.in_dim, d, h,
           layer.transform_w[static_cast<std::size_t>(h)]);
      switch (spec.attention_fn) {
        case AttentionKind::Gat:
        case AttentionKind::SymGat:
        case AttentionKind::Cos:
          push("attn_a." + std::to_string(h), ParamRole::AttnVec, 2 * d, 1, h,
               layer.attn_a[static_cast<std::size_t>(h)]);
          break;
        case AttentionKind::Linear:
          push("attn_al." + std::to_string(h), ParamRole::AttnVecL, d, 1, h,
               layer.attn_al[static_cast<std::size_t>(h)]);
          push("attn_ar." + std::to_string(h), ParamRole::AttnVecR, d, 1, h,
               layer.attn_ar[static_cast<std::size_t>(h)]);
          break;
        case AttentionKind::GeneLinear:
          push("attn_mat." + std::to_string(h), ParamRole::AttnMat, d, d, h,
               layer.attn_mat[static_cast<std::size_t>(h)]);
          break;
        case AttentionKind::Constant:
        case AttentionKind::Gcn:
          break;
      }
      if (spec.combiner == CombinerKind::Mlp) {
        push("mlp1." + std::to_string(h), ParamRole::CombinerMlp1, 2 * d, kCombinerMlpHidden, h,
             layer.mlp1[static_cast<std::size_t>(h)]);
        push("mlp2." + std::to_string(h), ParamRole::CombinerMlp2, kCombinerMlpHidden, d, h,
             layer.mlp2[static_cast<std::size_t>(h)]);
      }
    }
    push("bn_gamma", ParamRole::NonShareable, layer.out_dim, 1, 0, layer.bn_gamma);
    push("bn_beta", ParamRole::NonShareable, layer.out_dim, 1, 0, layer.bn_beta);
    if (m.receives_skip[static_cast<std::size_t>(i)]) {
      const int sdim = static_cast<int>(m.skip_adapter[static_cast<std::size_t>(i)].dim(0));
      push("skip_adapter", ParamRole::NonShareable, sdim, sdim, 0,
           m.skip_adapter[static_cast<std::size_t>(i)]);
    }
  }
  {
    ShareKey k;
    k.layer_index = n;
    k.role = ParamRole::NonShareable;
    k.in_dim = static_cast<int>(m.out_proj.dim(0));
    k.out_dim = m.num_classes;
    k.heads = 1;
    k.attention_fn = AttentionKind::Constant;
    k.activation = Activation::Linear;
    k.head_index = 0;
    out.push_back({"out/proj", "proj", k, m.out_proj});
  }
  return out;
}

// Model snapshot: manifest tensors plus batch-norm running buffers, keyed by
// manifest names (buffers get reserved names alongside each layer's records).
inline void save_model(const CompiledModel& m, const std::string& path) {
  std::vector<SnapshotRecord> records;
  for (const auto& e : parameter_manifest(m))
    records.push_back({e.name, e.tensor.shape(), e.tensor.value()});
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& bn = m.layers[i].bn;
    records.push_back({"L" + std::to_string(i) + "/bn_running_mean",
                       {bn.running_mean.size()}, bn.running_mean});
    records.push_back({"L" + std::to_string(i) + "/bn_running_var",
                       {bn.running_var.size()}, bn.running_var});
  }
  write_snapshot(path, records);
}

inline void load_model(CompiledModel& m, const std::string& path) {
  auto records = read_snapshot(path);
  auto manifest = parameter_manifest(m);
  auto find = [&](const std::string& name) -> SnapshotRecord* {
    for (auto& r : records)
      if (r.name == name) return &r;
    return nullptr;
  };
  for (auto& e : manifest) {
    SnapshotRecord* r = find(e.name);
    if (!r) throw std::runtime_error("load_model: missing tensor " + e.name);
    if (r->values.size() != e.tensor.numel())
      throw std::runtime_error("load_model: shape mismatch for " + e.name);
    e.tensor.value() = r->values;
  }
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    SnapshotRecord* mean = find("L" + std::to_string(i) + "/bn_running_mean");
    SnapshotRecord* var = find("L" + std::to_string(i) + "/bn_running_var");
    if (mean && mean->values.size() == m.layers[i].bn.running_mean.size())
      m.layers[i].bn.running_mean = mean->values;
    if (var && var->values.size() == m.layers[i].bn.running_var.size())
      m.layers[i].bn.running_var = var->values;
  }
}

}  // namespace agnn
