#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "agnn/graph.hpp"
#include "agnn/tensor.hpp"
#include "agnn/trainer.hpp"

namespace agnn_test {

// Central finite differences, step 1e-5: the independent gradient oracle.
// `f` must be a pure function of the tensor's current values.
inline std::vector<double> finite_diff_grad(agnn::Tensor& param,
                                            const std::function<double()>& f,
                                            double h = 1e-5) {
  std::vector<double> grad(param.numel());
  auto& v = param.value();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double keep = v[i];
    v[i] = keep + h;
    const double up = f();
    v[i] = keep - h;
    const double down = f();
    v[i] = keep;
    grad[i] = (up - down) / (2 * h);
  }
  return grad;
}

// Single-component central difference, for spot checks on large tensors.
inline double finite_diff_at(agnn::Tensor& param, std::size_t idx,
                             const std::function<double()>& f, double h = 1e-5) {
  auto& v = param.value();
  const double keep = v[idx];
  v[idx] = keep + h;
  const double up = f();
  v[idx] = keep - h;
  const double down = f();
  v[idx] = keep;
  return (up - down) / (2 * h);
}

// Relative-error comparison with an absolute floor near zero.
inline bool grads_match(const std::vector<double>& got, const std::vector<double>& want,
                        double rel_tol = 1e-4, double abs_tol = 1e-6) {
  if (got.size() != want.size()) return false;
  for (std::size_t i = 0; i < got.size(); ++i) {
    const double diff = std::abs(got[i] - want[i]);
    const double scale = std::max(std::abs(got[i]), std::abs(want[i]));
    if (diff > abs_tol && diff > rel_tol * scale) return false;
  }
  return true;
}

inline double max_rel_err(const std::vector<double>& got, const std::vector<double>& want,
                          double abs_floor = 1e-6) {
  double worst = 0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    const double diff = std::abs(got[i] - want[i]);
    const double scale = std::max({std::abs(got[i]), std::abs(want[i]), abs_floor});
    worst = std::max(worst, diff / scale);
  }
  return worst;
}

inline agnn::Tensor random_tensor(agnn::Shape shape, agnn::Rng& rng, bool requires_grad = true,
                                  double lo = -1.0, double hi = 1.0) {
  agnn::Tensor t = agnn::Tensor::zeros(std::move(shape), requires_grad);
  for (auto& v : t.value()) v = rng.uniform(lo, hi);
  return t;
}

// Applies a node permutation to a graph: node i of the input becomes node
// perm[i] of the output.
inline agnn::Graph permute_graph(const agnn::Graph& g, const std::vector<int>& perm) {
  agnn::Graph out;
  out.num_nodes = g.num_nodes;
  out.feat_dim = g.feat_dim;
  out.num_classes = g.num_classes;
  out.multi_label = g.multi_label;
  out.neighbors.assign(static_cast<std::size_t>(g.num_nodes), {});
  out.features.assign(g.features.size(), 0.0);
  out.mask.assign(static_cast<std::size_t>(g.num_nodes), agnn::MaskRole::None);
  if (!g.labels.empty()) out.labels.assign(static_cast<std::size_t>(g.num_nodes), -1);
  if (!g.label_bits.empty()) out.label_bits.assign(g.label_bits.size(), 0);
  for (int i = 0; i < g.num_nodes; ++i) {
    const int pi = perm[static_cast<std::size_t>(i)];
    for (int j : g.neighbors[static_cast<std::size_t>(i)])
      out.neighbors[static_cast<std::size_t>(pi)].push_back(perm[static_cast<std::size_t>(j)]);
    for (int f = 0; f < g.feat_dim; ++f)
      out.features[static_cast<std::size_t>(pi) * g.feat_dim + f] =
          g.features[static_cast<std::size_t>(i) * g.feat_dim + f];
    if (!g.labels.empty()) out.labels[static_cast<std::size_t>(pi)] = g.labels[static_cast<std::size_t>(i)];
    if (!g.label_bits.empty())
      for (int c = 0; c < g.num_classes; ++c)
        out.label_bits[static_cast<std::size_t>(pi) * g.num_classes + c] =
            g.label_bits[static_cast<std::size_t>(i) * g.num_classes + c];
    out.mask[static_cast<std::size_t>(pi)] = g.mask[static_cast<std::size_t>(i)];
  }
  out.finalize();
  return out;
}

// Random undirected graph for forward/gradient checks.
inline agnn::Graph random_graph(int n, double p, agnn::Rng& rng, int feat_dim = 4,
                                int num_classes = 3) {
  agnn::Graph g;
  g.num_nodes = n;
  g.feat_dim = feat_dim;
  g.num_classes = num_classes;
  g.neighbors.assign(static_cast<std::size_t>(n), {});
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (rng.uniform() < p) {
        g.neighbors[static_cast<std::size_t>(i)].push_back(j);
        g.neighbors[static_cast<std::size_t>(j)].push_back(i);
      }
  g.features.resize(static_cast<std::size_t>(n) * feat_dim);
  for (auto& f : g.features) f = rng.uniform(-1, 1);
  g.labels.resize(static_cast<std::size_t>(n));
  for (auto& y : g.labels) y = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(num_classes)));
  g.mask.assign(static_cast<std::size_t>(n), agnn::MaskRole::Train);
  for (int i = 0; i < n; ++i)
    if (i % 3 == 1) g.mask[static_cast<std::size_t>(i)] = agnn::MaskRole::Val;
    else if (i % 3 == 2) g.mask[static_cast<std::size_t>(i)] = agnn::MaskRole::Test;
  g.finalize();
  return g;
}

// Brute-force enumeration oracle over the 14112 per-layer combinations:
// independent route to the surrogate optimum (feasible at 14112*n evals).
inline double surrogate_layer_max_by_enumeration(std::uint64_t landscape_seed, int layer_index,
                                                 agnn::LayerSpec* argmax = nullptr) {
  double best = -1;
  agnn::LayerSpec spec;
  for (int d = 0; d < 7; ++d)
    for (int att = 0; att < 7; ++att)
      for (int h = 0; h < 6; ++h)
        for (int ag = 0; ag < 3; ++ag)
          for (int cb = 0; cb < 2; ++cb)
            for (int ac = 0; ac < 8; ++ac) {
              spec.set_value_index(agnn::ActionClass::HiddenDim, d);
              spec.set_value_index(agnn::ActionClass::AttentionFn, att);
              spec.set_value_index(agnn::ActionClass::Heads, h);
              spec.set_value_index(agnn::ActionClass::Aggregator, ag);
              spec.set_value_index(agnn::ActionClass::Combiner, cb);
              spec.set_value_index(agnn::ActionClass::Activation, ac);
              const double s = agnn::surrogate_layer_score(landscape_seed, layer_index, spec);
              if (s > best) {
                best = s;
                if (argmax) *argmax = spec;
              }
            }
  return best;
}

inline double surrogate_optimum_by_enumeration(std::uint64_t landscape_seed, int n_layers) {
  double total = 0;
  for (int l = 0; l < n_layers; ++l)
    total += surrogate_layer_max_by_enumeration(landscape_seed, l);
  return total / (7.0 * static_cast<double>(n_layers));
}

}  // namespace agnn_test
