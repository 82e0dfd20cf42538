#pragma once

// Data model for graphs, multi-graph samples and datasets, plus the
// deterministic split/k-fold machinery used by the training drivers.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mgf/errors.hpp"
#include "mgf/rng.hpp"

namespace mgf {

// Undirected simple graph with dense node features. Self-loops are never
// stored; attention adds them at compute time.
struct Graph {
  int node_count = 0;
  int feature_dim = 0;
  std::vector<double> features;            // row-major node_count x feature_dim
  std::vector<std::pair<int, int>> edges;  // canonical u < v
  std::vector<std::string> node_labels;    // optional, empty or per node

  Graph() = default;
  Graph(int n, int d)
      : node_count(n),
        feature_dim(d),
        features(static_cast<size_t>(n) * d, 0.0) {}

  double feature(int u, int j) const {
    return features[static_cast<size_t>(u) * feature_dim + j];
  }
  void set_feature(int u, int j, double v) {
    features[static_cast<size_t>(u) * feature_dim + j] = v;
  }

  // Adds the canonical form of (u, v); returns false for self-loops,
  // out-of-range endpoints and duplicates.
  bool add_edge(int u, int v) {
    if (u == v || u < 0 || v < 0 || u >= node_count || v >= node_count) {
      return false;
    }
    auto e = std::minmax(u, v);
    std::pair<int, int> edge{e.first, e.second};
    if (std::find(edges.begin(), edges.end(), edge) != edges.end()) {
      return false;
    }
    edges.push_back(edge);
    return true;
  }

  void sort_edges() { std::sort(edges.begin(), edges.end()); }

  friend bool operator==(const Graph& a, const Graph& b) = default;
};

// Sorted neighbor lists (without self-loops).
inline std::vector<std::vector<int>> adjacency_lists(const Graph& g) {
  std::vector<std::vector<int>> adj(g.node_count);
  for (const auto& [u, v] : g.edges) {
    adj[u].push_back(v);
    adj[v].push_back(u);
  }
  for (auto& n : adj) std::sort(n.begin(), n.end());
  return adj;
}

// Ordered collection of graphs sharing one label.
struct MultiGraphSample {
  std::vector<Graph> graphs;
  int label = 0;

  friend bool operator==(const MultiGraphSample&,
                         const MultiGraphSample&) = default;
};

struct Provenance {
  std::string kind;         // "setting1", "setting2", "file", ...
  std::string config_json;  // compact JSON echo of the generating config
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct Dataset {
  std::vector<MultiGraphSample> samples;
  int class_count = 0;
  int feature_dim = 0;
  Provenance provenance;
  uint64_t seed = 0;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// ---------------------------------------------------------------------------
// Validation (never throws; reports every violation with a path)
// ---------------------------------------------------------------------------

struct Violation {
  std::string path;
  std::string message;
};

inline void validate_graph(const Graph& g, const std::string& path,
                           int expected_dim, std::vector<Violation>* out) {
  if (g.node_count <= 0) {
    out->push_back({path + ".n", "node count must be positive"});
    return;
  }
  if (expected_dim >= 0 && g.feature_dim != expected_dim) {
    out->push_back({path + ".features",
                    "feature dimension " + std::to_string(g.feature_dim) +
                        " differs from dataset dimension " +
                        std::to_string(expected_dim)});
  }
  if (g.features.size() !=
      static_cast<size_t>(g.node_count) * static_cast<size_t>(g.feature_dim)) {
    out->push_back({path + ".features", "feature matrix size mismatch"});
  }
  for (size_t i = 0; i < g.features.size(); ++i) {
    if (!std::isfinite(g.features[i])) {
      out->push_back({path + ".features[" + std::to_string(i) + "]",
                      "non-finite feature"});
    }
  }
  std::set<std::pair<int, int>> seen;
  for (size_t e = 0; e < g.edges.size(); ++e) {
    const auto& [u, v] = g.edges[e];
    const std::string epath = path + ".edges[" + std::to_string(e) + "]";
    if (u < 0 || v < 0 || u >= g.node_count || v >= g.node_count) {
      out->push_back({epath, "endpoint out of range"});
      continue;
    }
    if (u == v) {
      out->push_back({epath, "explicit self-loop"});
      continue;
    }
    auto c = std::minmax(u, v);
    if (!seen.insert({c.first, c.second}).second) {
      out->push_back({epath, "duplicate edge"});
    }
  }
  if (!g.node_labels.empty() &&
      g.node_labels.size() != static_cast<size_t>(g.node_count)) {
    out->push_back({path + ".node_labels", "label list length mismatch"});
  }
}

inline std::vector<Violation> validate_sample(const MultiGraphSample& s,
                                              int class_count,
                                              int feature_dim,
                                              const std::string& path = "sample") {
  std::vector<Violation> out;
  if (s.graphs.empty()) {
    out.push_back({path + ".graphs", "sample must contain at least one graph"});
  }
  if (s.label < 0 || (class_count > 0 && s.label >= class_count)) {
    out.push_back({path + ".label",
                   "label " + std::to_string(s.label) + " out of range"});
  }
  for (size_t i = 0; i < s.graphs.size(); ++i) {
    validate_graph(s.graphs[i], path + ".graphs[" + std::to_string(i) + "]",
                   feature_dim, &out);
  }
  return out;
}

inline std::vector<Violation> validate_dataset(const Dataset& d) {
  std::vector<Violation> out;
  if (d.samples.empty()) {
    out.push_back({"samples", "dataset must be non-empty"});
    return out;
  }
  const size_t n = d.samples[0].graphs.size();
  for (size_t k = 0; k < d.samples.size(); ++k) {
    const std::string path = "samples[" + std::to_string(k) + "]";
    if (d.samples[k].graphs.size() != n) {
      out.push_back({path + ".graphs",
                     "expected " + std::to_string(n) + " graphs per sample"});
    }
    auto sub = validate_sample(d.samples[k], d.class_count, d.feature_dim, path);
    out.insert(out.end(), sub.begin(), sub.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct SplitResult {
  Dataset train;
  Dataset val;
  Dataset test;
  std::vector<std::string> warnings;
};

struct FoldPair {
  Dataset train;
  Dataset val;
};

struct KFoldResult {
  std::vector<FoldPair> folds;
  std::vector<std::string> warnings;
};

namespace detail {

// Deterministic shuffled sample order. When stratified, samples of each
// class are shuffled independently and merged by interleaving fractional
// positions, so any prefix is close to class-proportional.
inline std::vector<int> split_order(const Dataset& d, uint64_t seed,
                                    int min_parts,
                                    std::vector<std::string>* warnings) {
  std::map<int, std::vector<int>> by_class;
  for (size_t k = 0; k < d.samples.size(); ++k) {
    by_class[d.samples[k].label].push_back(static_cast<int>(k));
  }
  bool stratify = true;
  for (const auto& [label, members] : by_class) {
    if (static_cast<int>(members.size()) < min_parts) {
      stratify = false;
      warnings->push_back("class " + std::to_string(label) + " has only " +
                          std::to_string(members.size()) +
                          " members; falling back to unstratified split");
      break;
    }
  }
  RandomStream rng(seed);
  if (!stratify) {
    std::vector<int> order(d.samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);
    return order;
  }
  struct Slot {
    double pos;
    int cls;
    int sample;
  };
  std::vector<Slot> slots;
  slots.reserve(d.samples.size());
  for (auto& [label, members] : by_class) {
    rng.shuffle(members);
    const double m = static_cast<double>(members.size());
    for (size_t i = 0; i < members.size(); ++i) {
      slots.push_back({(static_cast<double>(i) + 0.5) / m, label, members[i]});
    }
  }
  std::stable_sort(slots.begin(), slots.end(), [](const Slot& a, const Slot& b) {
    if (a.pos != b.pos) return a.pos < b.pos;
    return a.cls < b.cls;
  });
  std::vector<int> order;
  order.reserve(slots.size());
  for (const auto& s : slots) order.push_back(s.sample);
  return order;
}

inline Dataset subset(const Dataset& d, const std::vector<int>& idx) {
  Dataset out;
  out.class_count = d.class_count;
  out.feature_dim = d.feature_dim;
  out.provenance = d.provenance;
  out.seed = d.seed;
  out.samples.reserve(idx.size());
  for (int i : idx) out.samples.push_back(d.samples[i]);
  return out;
}

// Largest-remainder apportionment of n items into fractions r.
inline std::vector<int> apportion(int n, const std::vector<double>& r) {
  std::vector<int> sizes(r.size());
  std::vector<std::pair<double, size_t>> rema(r.size());
  int used = 0;
  for (size_t p = 0; p < r.size(); ++p) {
    const double exact = n * r[p];
    sizes[p] = static_cast<int>(std::floor(exact));
    used += sizes[p];
    rema[p] = {exact - sizes[p], p};
  }
  std::stable_sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
    return a.first > b.first;
  });
  for (int leftover = n - used, i = 0; leftover > 0; --leftover, ++i) {
    sizes[rema[i % rema.size()].second] += 1;
  }
  return sizes;
}

}  // namespace detail

// Deterministic (train, val, test) partition. Ratios must sum to one.
inline SplitResult split(const Dataset& d, const std::array<double, 3>& ratios,
                         uint64_t seed) {
  double total = 0.0;
  for (double r : ratios) {
    if (r < 0.0) throw ConfigError("split ratios must be non-negative");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("split ratios must sum to 1");
  }
  SplitResult res;
  const auto order = detail::split_order(d, seed, 3, &res.warnings);
  const auto sizes =
      detail::apportion(static_cast<int>(order.size()),
                        {ratios[0], ratios[1], ratios[2]});
  std::vector<int> tr(order.begin(), order.begin() + sizes[0]);
  std::vector<int> va(order.begin() + sizes[0],
                      order.begin() + sizes[0] + sizes[1]);
  std::vector<int> te(order.begin() + sizes[0] + sizes[1], order.end());
  res.train = detail::subset(d, tr);
  res.val = detail::subset(d, va);
  res.test = detail::subset(d, te);
  return res;
}

// k deterministic (train, val) pairs; validation parts partition the dataset.
inline KFoldResult kfold(const Dataset& d, int k, uint64_t seed) {
  if (k < 2) throw ConfigError("kfold requires k >= 2");
  if (static_cast<size_t>(k) > d.samples.size()) {
    throw ConfigError("kfold: more folds than samples");
  }
  KFoldResult res;
  const auto order = detail::split_order(d, seed, k, &res.warnings);
  for (int f = 0; f < k; ++f) {
    std::vector<int> tr, va;
    for (size_t i = 0; i < order.size(); ++i) {
      if (static_cast<int>(i % k) == f) {
        va.push_back(order[i]);
      } else {
        tr.push_back(order[i]);
      }
    }
    res.folds.push_back({detail::subset(d, tr), detail::subset(d, va)});
  }
  return res;
}

}  // namespace mgf
