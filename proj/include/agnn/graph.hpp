#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "agnn/rng.hpp"

namespace agnn {

enum class MaskRole : std::uint8_t { None, Train, Val, Test };

inline const char* mask_name(MaskRole m) {
  switch (m) {
    case MaskRole::None: return "none";
    case MaskRole::Train: return "train";
    case MaskRole::Val: return "val";
    case MaskRole::Test: return "test";
  }
  return "?";
}

// Undirected graph with node features, labels, and split masks. Immutable
// after finalize(); the edge arrays are derived there once and shared by all
// readers.
struct Graph {
  int num_nodes = 0;
  int feat_dim = 0;
  int num_classes = 0;
  bool multi_label = false;

  std::vector<std::vector<int>> neighbors;  // sorted ascending, no self ids
  std::vector<double> features;             // num_nodes x feat_dim, row-major
  std::vector<int> labels;                  // single-label; -1 = unlabeled
  std::vector<std::uint8_t> label_bits;     // multi-label: num_nodes x num_classes
  std::vector<MaskRole> mask;

  int duplicate_edge_warnings = 0;  // directed/duplicate inputs symmetrized at load

  // Derived by finalize(): directed edge list sorted by (dst, src), one entry
  // per orientation of each undirected edge; rev[e] is the opposite
  // orientation's index.
  std::vector<int> edge_src, edge_dst, edge_rev;
  std::vector<int> degree;
  long num_undirected_edges = 0;

  bool has_label(int i) const {
    if (multi_label) return true;  // a bitset row always exists
    return labels[static_cast<std::size_t>(i)] >= 0;
  }

  void finalize() {
    degree.assign(num_nodes, 0);
    edge_src.clear();
    edge_dst.clear();
    long dir_edges = 0;
    for (int i = 0; i < num_nodes; ++i) {
      auto& ns = neighbors[static_cast<std::size_t>(i)];
      std::sort(ns.begin(), ns.end());
      degree[static_cast<std::size_t>(i)] = static_cast<int>(ns.size());
      dir_edges += static_cast<long>(ns.size());
    }
    num_undirected_edges = dir_edges / 2;
    edge_src.reserve(dir_edges);
    edge_dst.reserve(dir_edges);
    for (int i = 0; i < num_nodes; ++i)
      for (int j : neighbors[static_cast<std::size_t>(i)]) {
        edge_src.push_back(j);
        edge_dst.push_back(i);
      }
    // Reverse lookup: edge (j -> i) pairs with (i -> j).
    std::vector<long> offset(num_nodes + 1, 0);
    for (int i = 0; i < num_nodes; ++i)
      offset[static_cast<std::size_t>(i) + 1] =
          offset[static_cast<std::size_t>(i)] + degree[static_cast<std::size_t>(i)];
    edge_rev.assign(edge_src.size(), -1);
    for (std::size_t e = 0; e < edge_src.size(); ++e) {
      const int s = edge_src[e], d = edge_dst[e];
      const auto& ns = neighbors[static_cast<std::size_t>(s)];
      const auto it = std::lower_bound(ns.begin(), ns.end(), d);
      edge_rev[e] = static_cast<int>(offset[static_cast<std::size_t>(s)] + (it - ns.begin()));
    }
  }

  void validate() const {
    for (int i = 0; i < num_nodes; ++i) {
      const auto& ns = neighbors[static_cast<std::size_t>(i)];
      for (std::size_t k = 0; k < ns.size(); ++k) {
        const int j = ns[k];
        if (j == i) throw std::runtime_error("graph invariant violated: self edge at node " + std::to_string(i));
        if (j < 0 || j >= num_nodes)
          throw std::runtime_error("graph invariant violated: neighbor id out of range");
        if (k > 0 && ns[k - 1] >= j)
          throw std::runtime_error("graph invariant violated: duplicate or unsorted neighbor list at node " +
                                   std::to_string(i));
        const auto& back = neighbors[static_cast<std::size_t>(j)];
        if (!std::binary_search(back.begin(), back.end(), i))
          throw std::runtime_error("graph invariant violated: edge (" + std::to_string(i) + "," +
                                   std::to_string(j) + ") not symmetric");
      }
      if (mask[static_cast<std::size_t>(i)] != MaskRole::None && !has_label(i))
        throw std::runtime_error("graph invariant violated: masked node " + std::to_string(i) +
                                 " has no label");
    }
  }
};

struct DatasetBundle {
  enum class Setting { Transductive, Inductive };
  Setting setting = Setting::Transductive;
  std::vector<Graph> graphs;
  std::vector<MaskRole> graph_roles;  // inductive only, parallel to graphs
  int num_classes = 0;
  bool multi_label = false;
  int feat_dim = 0;
};

inline std::vector<int> degrees(const Graph& g) { return g.degree; }

// ---------------------------------------------------------------------------
// Text format
//
//   nodes=<N> feats=<F> classes=<C> multilabel=<0|1>
//   N feature lines (F decimals)
//   N label lines (one integer, or C 0/1 flags when multilabel)
//   N mask lines (train|val|test|none)
//   edges
//   one "i j" pair per line, 0-based
//
// Inductive bundles are a directory of such files plus roles.txt mapping
// filename -> train/val/test.

namespace detail_graph {

struct LineReader {
  std::istream& is;
  std::string file;
  int line_no = 0;
  bool next(std::string& out) {
    while (std::getline(is, out)) {
      ++line_no;
      if (!out.empty() && out.back() == '\r') out.pop_back();
      if (!out.empty()) return true;
    }
    return false;
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw std::runtime_error(file + ":" + std::to_string(line_no) + ": " + msg);
  }
};

}  // namespace detail_graph

inline Graph load_graph_stream(std::istream& is, const std::string& display_name) {
  detail_graph::LineReader rd{is, display_name};
  std::string line;
  if (!rd.next(line)) rd.fail("empty file");
  Graph g;
  {
    std::istringstream hs(line);
    std::string tok;
    int seen = 0;
    while (hs >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) rd.fail("malformed header token '" + tok + "'");
      const std::string key = tok.substr(0, eq);
      const std::string val = tok.substr(eq + 1);
      try {
        if (key == "nodes") g.num_nodes = std::stoi(val);
        else if (key == "feats") g.feat_dim = std::stoi(val);
        else if (key == "classes") g.num_classes = std::stoi(val);
        else if (key == "multilabel") g.multi_label = std::stoi(val) != 0;
        else rd.fail("unknown header key '" + key + "'");
      } catch (const std::invalid_argument&) {
        rd.fail("non-numeric header value '" + val + "'");
      }
      ++seen;
    }
    if (seen != 4) rd.fail("header must have nodes=, feats=, classes=, multilabel=");
    if (g.num_nodes < 0 || g.feat_dim <= 0 || g.num_classes <= 0)
      rd.fail("header values out of range");
  }
  const std::size_t n = static_cast<std::size_t>(g.num_nodes);
  g.features.assign(n * static_cast<std::size_t>(g.feat_dim), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!rd.next(line)) rd.fail("expected feature line for node " + std::to_string(i));
    std::istringstream ls(line);
    for (int f = 0; f < g.feat_dim; ++f)
      if (!(ls >> g.features[i * static_cast<std::size_t>(g.feat_dim) + static_cast<std::size_t>(f)]))
        rd.fail("expected " + std::to_string(g.feat_dim) + " features for node " + std::to_string(i));
  }
  if (g.multi_label) {
    g.label_bits.assign(n * static_cast<std::size_t>(g.num_classes), 0);
    for (std::size_t i = 0; i < n; ++i) {
      if (!rd.next(line)) rd.fail("expected label line for node " + std::to_string(i));
      std::istringstream ls(line);
      for (int c = 0; c < g.num_classes; ++c) {
        int b;
        if (!(ls >> b) || (b != 0 && b != 1)) rd.fail("expected 0/1 label flags");
        g.label_bits[i * static_cast<std::size_t>(g.num_classes) + static_cast<std::size_t>(c)] =
            static_cast<std::uint8_t>(b);
      }
    }
  } else {
    g.labels.assign(n, -1);
    for (std::size_t i = 0; i < n; ++i) {
      if (!rd.next(line)) rd.fail("expected label line for node " + std::to_string(i));
      int y;
      std::istringstream ls(line);
      if (!(ls >> y)) rd.fail("expected integer label");
      if (y < -1 || y >= g.num_classes) rd.fail("label " + std::to_string(y) + " out of range");
      g.labels[i] = y;
    }
  }
  g.mask.assign(n, MaskRole::None);
  for (std::size_t i = 0; i < n; ++i) {
    if (!rd.next(line)) rd.fail("expected mask line for node " + std::to_string(i));
    std::string m, extra;
    std::istringstream ls(line);
    ls >> m;
    if (ls >> extra)
      rd.fail("invariant violated: masks overlap (node " + std::to_string(i) +
              " listed with multiple masks)");
    if (m == "train") g.mask[i] = MaskRole::Train;
    else if (m == "val") g.mask[i] = MaskRole::Val;
    else if (m == "test") g.mask[i] = MaskRole::Test;
    else if (m == "none") g.mask[i] = MaskRole::None;
    else rd.fail("unknown mask '" + m + "'");
  }
  if (!rd.next(line) || line != "edges") rd.fail("expected 'edges' sentinel");
  g.neighbors.assign(n, {});
  std::vector<std::set<int>> adj(n);
  while (rd.next(line)) {
    std::istringstream ls(line);
    int a, b;
    if (!(ls >> a >> b)) rd.fail("expected 'i j' edge pair");
    if (a < 0 || b < 0 || a >= g.num_nodes || b >= g.num_nodes)
      rd.fail("edge endpoint out of range");
    if (a == b) rd.fail("invariant violated: self edge (" + std::to_string(a) + "," +
                        std::to_string(b) + ") is not allowed");
    if (adj[static_cast<std::size_t>(a)].count(b)) {
      ++g.duplicate_edge_warnings;  // directed duplicate, already symmetrized
      continue;
    }
    adj[static_cast<std::size_t>(a)].insert(b);
    adj[static_cast<std::size_t>(b)].insert(a);
  }
  for (std::size_t i = 0; i < n; ++i)
    g.neighbors[i].assign(adj[i].begin(), adj[i].end());
  // Masked nodes must be labeled; disjointness is structural (one mask word).
  for (std::size_t i = 0; i < n; ++i)
    if (g.mask[i] != MaskRole::None && !g.has_label(static_cast<int>(i)))
      rd.fail("invariant violated: masked node " + std::to_string(i) + " has no label");
  g.finalize();
  g.validate();
  return g;
}

inline void save_graph_stream(std::ostream& os, const Graph& g) {
  os << "nodes=" << g.num_nodes << " feats=" << g.feat_dim << " classes=" << g.num_classes
     << " multilabel=" << (g.multi_label ? 1 : 0) << "\n";
  char buf[64];
  for (int i = 0; i < g.num_nodes; ++i) {
    for (int f = 0; f < g.feat_dim; ++f) {
      std::snprintf(buf, sizeof(buf), "%.17g",
                    g.features[static_cast<std::size_t>(i) * g.feat_dim + f]);
      os << (f ? " " : "") << buf;
    }
    os << "\n";
  }
  for (int i = 0; i < g.num_nodes; ++i) {
    if (g.multi_label) {
      for (int c = 0; c < g.num_classes; ++c)
        os << (c ? " " : "")
           << int(g.label_bits[static_cast<std::size_t>(i) * g.num_classes + c]);
      os << "\n";
    } else {
      os << g.labels[static_cast<std::size_t>(i)] << "\n";
    }
  }
  for (int i = 0; i < g.num_nodes; ++i) os << mask_name(g.mask[static_cast<std::size_t>(i)]) << "\n";
  os << "edges\n";
  for (int i = 0; i < g.num_nodes; ++i)
    for (int j : g.neighbors[static_cast<std::size_t>(i)])
      if (i < j) os << i << " " << j << "\n";
}

inline DatasetBundle load_dataset(const std::string& path) {
  namespace fs = std::filesystem;
  DatasetBundle b;
  if (fs::is_directory(path)) {
    b.setting = DatasetBundle::Setting::Inductive;
    const fs::path roles_path = fs::path(path) / "roles.txt";
    std::ifstream rf(roles_path);
    if (!rf) throw std::runtime_error("load_dataset: missing roles.txt in " + path);
    std::string fname, role;
    int line_no = 0;
    while (rf >> fname >> role) {
      ++line_no;
      MaskRole r;
      if (role == "train") r = MaskRole::Train;
      else if (role == "val") r = MaskRole::Val;
      else if (role == "test") r = MaskRole::Test;
      else
        throw std::runtime_error(roles_path.string() + ":" + std::to_string(line_no) +
                                 ": unknown role '" + role + "'");
      std::ifstream gf(fs::path(path) / fname);
      if (!gf) throw std::runtime_error("load_dataset: cannot open " + fname + " in " + path);
      Graph g = load_graph_stream(gf, fname);
      // Inductive convention: every node carries the graph's role.
      std::fill(g.mask.begin(), g.mask.end(), r);
      g.validate();
      b.graphs.push_back(std::move(g));
      b.graph_roles.push_back(r);
    }
    if (b.graphs.empty()) throw std::runtime_error("load_dataset: roles.txt lists no graphs");
  } else {
    b.setting = DatasetBundle::Setting::Transductive;
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_dataset: cannot open " + path);
    b.graphs.push_back(load_graph_stream(f, path));
  }
  b.num_classes = b.graphs[0].num_classes;
  b.multi_label = b.graphs[0].multi_label;
  b.feat_dim = b.graphs[0].feat_dim;
  for (const auto& g : b.graphs)
    if (g.num_classes != b.num_classes || g.multi_label != b.multi_label ||
        g.feat_dim != b.feat_dim)
      throw std::runtime_error("load_dataset: graphs disagree on classes/feats/multilabel");
  return b;
}

inline void save_dataset(const DatasetBundle& b, const std::string& path) {
  namespace fs = std::filesystem;
  if (b.setting == DatasetBundle::Setting::Transductive) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_dataset: cannot open " + path);
    save_graph_stream(f, b.graphs[0]);
  } else {
    fs::create_directories(path);
    std::ofstream rf(fs::path(path) / "roles.txt");
    for (std::size_t i = 0; i < b.graphs.size(); ++i) {
      const std::string fname = "graph" + std::to_string(i) + ".txt";
      rf << fname << " " << mask_name(b.graph_roles[i]) << "\n";
      std::ofstream gf(fs::path(path) / fname);
      save_graph_stream(gf, b.graphs[i]);
    }
  }
}

// ---------------------------------------------------------------------------
// Planted-partition generator: desk-scale stand-in for citation graphs.
// Features are the class one-hot plus additive Gaussian noise. Masks follow
// the 20-train-per-class / capped-val protocol, shrunk proportionally when a
// class is too small to honor it.

inline DatasetBundle generate_sbm(int n, int k_classes, double p_in, double p_out, int feat_dim,
                                  double noise, std::uint64_t seed) {
  if (!(0.0 <= p_out && p_out < p_in && p_in <= 1.0))
    throw std::invalid_argument("generate_sbm: require 0 <= p_out < p_in <= 1");
  if (k_classes <= 0 || n % k_classes != 0)
    throw std::invalid_argument("generate_sbm: n must be divisible by k_classes");
  if (feat_dim < k_classes)
    throw std::invalid_argument("generate_sbm: feat_dim must be >= k_classes");
  Rng rng(seed);
  Graph g;
  g.num_nodes = n;
  g.feat_dim = feat_dim;
  g.num_classes = k_classes;
  const int per_class = n / k_classes;
  g.labels.assign(n, 0);
  for (int i = 0; i < n; ++i) g.labels[static_cast<std::size_t>(i)] = i / per_class;
  g.features.assign(static_cast<std::size_t>(n) * feat_dim, 0.0);
  for (int i = 0; i < n; ++i) {
    g.features[static_cast<std::size_t>(i) * feat_dim + g.labels[static_cast<std::size_t>(i)]] = 1.0;
    if (noise > 0)
      for (int f = 0; f < feat_dim; ++f)
        g.features[static_cast<std::size_t>(i) * feat_dim + f] += noise * rng.normal();
  }
  g.neighbors.assign(n, {});
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double p = (g.labels[static_cast<std::size_t>(i)] == g.labels[static_cast<std::size_t>(j)])
                           ? p_in : p_out;
      if (rng.uniform() < p) {
        g.neighbors[static_cast<std::size_t>(i)].push_back(j);
        g.neighbors[static_cast<std::size_t>(j)].push_back(i);
      }
    }
  // Masks: shuffle within each class, take up to 20 train per class; then
  // val = min(500, half of the remainder) so the test split stays non-empty.
  g.mask.assign(n, MaskRole::None);
  std::vector<int> pool;
  for (int c = 0; c < k_classes; ++c) {
    std::vector<int> members;
    for (int i = 0; i < n; ++i)
      if (g.labels[static_cast<std::size_t>(i)] == c) members.push_back(i);
    for (std::size_t t = members.size(); t > 1; --t)
      std::swap(members[t - 1], members[rng.uniform_int(t)]);
    const int want = std::min(20, std::max(1, per_class / 3));
    for (int t = 0; t < want; ++t) g.mask[static_cast<std::size_t>(members[t])] = MaskRole::Train;
    for (std::size_t t = static_cast<std::size_t>(want); t < members.size(); ++t)
      pool.push_back(members[static_cast<std::size_t>(t)]);
  }
  std::sort(pool.begin(), pool.end());
  for (std::size_t t = pool.size(); t > 1; --t)
    std::swap(pool[t - 1], pool[rng.uniform_int(t)]);
  const std::size_t val_count = std::min<std::size_t>(500, pool.size() / 2);
  for (std::size_t t = 0; t < pool.size(); ++t)
    g.mask[static_cast<std::size_t>(pool[t])] = t < val_count ? MaskRole::Val : MaskRole::Test;
  g.finalize();
  g.validate();
  DatasetBundle b;
  b.setting = DatasetBundle::Setting::Transductive;
  b.num_classes = k_classes;
  b.feat_dim = feat_dim;
  b.multi_label = false;
  b.graphs.push_back(std::move(g));
  return b;
}

// Concatenates graphs as one disjoint union with offset node ids (inductive
// minibatching). Labels/masks/features carry over unchanged.
inline Graph disjoint_union(const std::vector<const Graph*>& parts) {
  if (parts.empty()) throw std::invalid_argument("disjoint_union: empty input");
  Graph out;
  out.feat_dim = parts[0]->feat_dim;
  out.num_classes = parts[0]->num_classes;
  out.multi_label = parts[0]->multi_label;
  int offset = 0;
  for (const Graph* p : parts) {
    out.num_nodes += p->num_nodes;
    out.features.insert(out.features.end(), p->features.begin(), p->features.end());
    out.labels.insert(out.labels.end(), p->labels.begin(), p->labels.end());
    out.label_bits.insert(out.label_bits.end(), p->label_bits.begin(), p->label_bits.end());
    out.mask.insert(out.mask.end(), p->mask.begin(), p->mask.end());
    for (const auto& ns : p->neighbors) {
      std::vector<int> shifted;
      shifted.reserve(ns.size());
      for (int j : ns) shifted.push_back(j + offset);
      out.neighbors.push_back(std::move(shifted));
    }
    offset += p->num_nodes;
  }
  out.finalize();
  return out;
}

}  // namespace agnn
