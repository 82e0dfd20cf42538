#pragma once

// Supernode extraction, similarity-based superedge construction and
// meta-graph assembly. Scores and similarities are computed on detached
// values: selection is a hard, stop-gradient decision and superedges carry
// binary adjacency into the meta transformer. The Dirichlet energy
// diagnostic measures smoothness of features over an adjacency.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mgf/encoder.hpp"
#include "mgf/errors.hpp"
#include "mgf/graph.hpp"

namespace mgf {

// ---------------------------------------------------------------------------
// Supernode scores and selection
// ---------------------------------------------------------------------------

// Total fused attention distributed by each node to its neighbors,
// self-loop excluded.
inline std::vector<double> supernode_scores(const EncoderOutput& enc) {
  const auto& sup = enc.support;
  std::vector<double> scores(sup.nodes, 0.0);
  for (int u = 0; u < sup.nodes; ++u) {
    for (int p = sup.offsets[u]; p < sup.offsets[u + 1]; ++p) {
      if (sup.dst[p] != u) scores[u] += enc.fused_attn[p];
    }
  }
  return scores;
}

// Linear-interpolation quantile of unsorted values, p in [0, 1].
inline double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw ContractError("quantile of empty set");
  std::sort(values.begin(), values.end());
  const double h = p * static_cast<double>(values.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(h));
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + (h - lo) * (values[lo + 1] - values[lo]);
}

struct SupernodeSelection {
  enum class Kind { FixedThreshold, Quantile } kind = Kind::FixedThreshold;
  double value = 0.3;  // tau for FixedThreshold, retention rate for Quantile

  static SupernodeSelection fixed(double tau) {
    return {Kind::FixedThreshold, tau};
  }
  static SupernodeSelection quantile_rate(double rho) {
    if (rho <= 0.0 || rho >= 1.0) {
      throw ConfigError("supernode retention rate must be in (0,1)");
    }
    return {Kind::Quantile, rho};
  }
};

// Nodes whose score passes the rule; never empty (falls back to the single
// highest-score node, ties resolved to the lowest index).
inline std::vector<int> select_supernodes(const std::vector<double>& scores,
                                          const SupernodeSelection& mode) {
  std::vector<int> selected;
  const int n = static_cast<int>(scores.size());
  if (n == 0) throw ContractError("select_supernodes: no nodes");
  if (mode.kind == SupernodeSelection::Kind::FixedThreshold) {
    for (int u = 0; u < n; ++u) {
      if (scores[u] >= mode.value) selected.push_back(u);
    }
  } else {
    const double lo = *std::min_element(scores.begin(), scores.end());
    const double hi = *std::max_element(scores.begin(), scores.end());
    const double denom = hi - lo + 1e-5;
    std::vector<double> normalized(n);
    for (int u = 0; u < n; ++u) normalized[u] = (scores[u] - lo) / denom;
    const double cut = quantile(normalized, 1.0 - mode.value);
    for (int u = 0; u < n; ++u) {
      if (normalized[u] >= cut) selected.push_back(u);
    }
  }
  if (selected.empty()) {
    int best = 0;
    for (int u = 1; u < n; ++u) {
      if (scores[u] > scores[best]) best = u;
    }
    selected.push_back(best);
  }
  return selected;
}

// ---------------------------------------------------------------------------
// Similarity metrics
// ---------------------------------------------------------------------------

enum class SimilarityMetric { Cosine, Pearson, Euclidean, Dot };

inline const char* to_string(SimilarityMetric m) {
  switch (m) {
    case SimilarityMetric::Cosine: return "cosine";
    case SimilarityMetric::Pearson: return "pearson";
    case SimilarityMetric::Euclidean: return "euclidean";
    case SimilarityMetric::Dot: return "dot";
  }
  return "?";
}

inline double similarity(std::span<const double> a, std::span<const double> b,
                         SimilarityMetric metric) {
  if (a.size() != b.size()) {
    throw DimensionError("similarity: embedding lengths differ");
  }
  const size_t d = a.size();
  switch (metric) {
    case SimilarityMetric::Dot: {
      double dot = 0.0;
      for (size_t j = 0; j < d; ++j) dot += a[j] * b[j];
      return dot;
    }
    case SimilarityMetric::Euclidean: {
      double sq = 0.0;
      for (size_t j = 0; j < d; ++j) {
        const double diff = a[j] - b[j];
        sq += diff * diff;
      }
      return 1.0 / (1.0 + std::sqrt(sq));
    }
    case SimilarityMetric::Cosine: {
      double dot = 0.0, na = 0.0, nb = 0.0;
      for (size_t j = 0; j < d; ++j) {
        dot += a[j] * b[j];
        na += a[j] * a[j];
        nb += b[j] * b[j];
      }
      na = std::sqrt(na);
      nb = std::sqrt(nb);
      if (na < 1e-12 || nb < 1e-12) return 0.0;
      return dot / (na * nb);
    }
    case SimilarityMetric::Pearson: {
      double ma = 0.0, mb = 0.0;
      for (size_t j = 0; j < d; ++j) {
        ma += a[j];
        mb += b[j];
      }
      ma /= d;
      mb /= d;
      double dot = 0.0, na = 0.0, nb = 0.0;
      for (size_t j = 0; j < d; ++j) {
        const double xa = a[j] - ma, xb = b[j] - mb;
        dot += xa * xb;
        na += xa * xa;
        nb += xb * xb;
      }
      na = std::sqrt(na);
      nb = std::sqrt(nb);
      if (na < 1e-12 || nb < 1e-12) return 0.0;
      return dot / (na * nb);
    }
  }
  throw ConfigError("unknown similarity metric");
}

// ---------------------------------------------------------------------------
// Meta-graph assembly
// ---------------------------------------------------------------------------

struct Supernode {
  int graph_index = 0;
  int node_index = 0;
  double score = 0.0;
  std::vector<double> embedding;  // detached fused embedding
};

struct MetaEdge {
  int a = 0;  // indices into the supernode list
  int b = 0;
  double similarity = 0.0;
};

struct SuperedgeRule {
  enum class Kind { FixedThreshold, Quantile } kind = Kind::FixedThreshold;
  double value = 0.4;  // gamma for FixedThreshold, keep fraction for Quantile
  SimilarityMetric metric = SimilarityMetric::Cosine;

  static SuperedgeRule fixed(double gamma,
                             SimilarityMetric m = SimilarityMetric::Cosine) {
    return {Kind::FixedThreshold, gamma, m};
  }
  static SuperedgeRule quantile_rate(
      double kappa, SimilarityMetric m = SimilarityMetric::Cosine) {
    if (kappa <= 0.0 || kappa >= 1.0) {
      throw ConfigError("superedge keep fraction must be in (0,1)");
    }
    return {Kind::Quantile, kappa, m};
  }
};

struct MetaGraph {
  std::vector<Supernode> supernodes;  // ordered by (graph_index, node_index)
  std::vector<std::pair<int, int>> intra_edges;  // supernode indices, a < b
  std::vector<MetaEdge> inter_edges;             // distinct graph indices
  std::string provenance;

  int size() const { return static_cast<int>(supernodes.size()); }

  // Attention support over intra + inter edges plus self-loops.
  AttentionSupport attention_support() const {
    std::vector<std::vector<int>> adj(supernodes.size());
    for (const auto& [a, b] : intra_edges) {
      adj[a].push_back(b);
      adj[b].push_back(a);
    }
    for (const auto& e : inter_edges) {
      adj[e.a].push_back(e.b);
      adj[e.b].push_back(e.a);
    }
    return AttentionSupport::from_adjacency(adj);
  }
};

// Inter-graph candidate pairs are all supernode pairs with distinct graph
// indices. Fixed mode keeps similarity > gamma (strict); quantile mode keeps
// the top fraction via the (1 - kappa)-quantile with ties at the cutoff kept.
inline std::vector<MetaEdge> build_superedges(
    const std::vector<Supernode>& supernodes, const SuperedgeRule& rule) {
  std::vector<MetaEdge> candidates;
  for (size_t p = 0; p < supernodes.size(); ++p) {
    for (size_t q = p + 1; q < supernodes.size(); ++q) {
      if (supernodes[p].graph_index == supernodes[q].graph_index) continue;
      const double e = similarity(supernodes[p].embedding,
                                  supernodes[q].embedding, rule.metric);
      candidates.push_back(
          {static_cast<int>(p), static_cast<int>(q), e});
    }
  }
  std::vector<MetaEdge> kept;
  if (candidates.empty()) return kept;
  if (rule.kind == SuperedgeRule::Kind::FixedThreshold) {
    for (const auto& c : candidates) {
      if (c.similarity > rule.value) kept.push_back(c);
    }
  } else {
    std::vector<double> sims;
    sims.reserve(candidates.size());
    for (const auto& c : candidates) sims.push_back(c.similarity);
    const double cut = quantile(std::move(sims), 1.0 - rule.value);
    for (const auto& c : candidates) {
      if (c.similarity >= cut) kept.push_back(c);
    }
  }
  return kept;
}

// Builds the meta-graph of one sample from per-graph encoder outputs and
// selected node sets. Intra edges are the original edges surviving the
// selection (dropped entirely under include_intra = false).
inline MetaGraph assemble_meta_graph(
    const std::vector<const EncoderOutput*>& encodings,
    const std::vector<std::vector<int>>& selections,
    const std::vector<const Graph*>& graphs, const SuperedgeRule& rule,
    bool include_intra = true, bool include_inter = true) {
  if (encodings.size() != selections.size() ||
      encodings.size() != graphs.size()) {
    throw DimensionError("assemble_meta_graph: per-graph inputs disagree");
  }
  MetaGraph meta;
  // Supernodes ordered by (graph index, node index); selections are sorted.
  std::vector<std::vector<int>> position(encodings.size());
  for (size_t i = 0; i < encodings.size(); ++i) {
    position[i].assign(graphs[i]->node_count, -1);
    const Tensor& fused = encodings[i]->fused_h;
    const auto scores = supernode_scores(*encodings[i]);
    for (int u : selections[i]) {
      position[i][u] = meta.size();
      Supernode s;
      s.graph_index = static_cast<int>(i);
      s.node_index = u;
      s.score = scores[u];
      s.embedding.assign(fused.values().begin() + u * fused.cols(),
                         fused.values().begin() + (u + 1) * fused.cols());
      meta.supernodes.push_back(std::move(s));
    }
  }
  if (include_intra) {
    for (size_t i = 0; i < graphs.size(); ++i) {
      for (const auto& [u, v] : graphs[i]->edges) {
        const int a = position[i][u], b = position[i][v];
        if (a >= 0 && b >= 0) {
          meta.intra_edges.emplace_back(std::min(a, b), std::max(a, b));
        }
      }
    }
    std::sort(meta.intra_edges.begin(), meta.intra_edges.end());
    meta.intra_edges.erase(
        std::unique(meta.intra_edges.begin(), meta.intra_edges.end()),
        meta.intra_edges.end());
  }
  if (include_inter) {
    meta.inter_edges = build_superedges(meta.supernodes, rule);
  }
  meta.provenance =
      std::string(rule.kind == SuperedgeRule::Kind::FixedThreshold
                      ? "gamma="
                      : "kappa_edge=") +
      std::to_string(rule.value) + ",metric=" + to_string(rule.metric) +
      (include_intra ? "" : ",no_intra") + (include_inter ? "" : ",no_inter");
  return meta;
}

// ---------------------------------------------------------------------------
// Dirichlet energy
// ---------------------------------------------------------------------------

// (1 / 2n^2) * sum_{ij} A_ij ||x_i - x_j||^2 over the symmetric adjacency
// spanned by the given undirected edges.
inline double dirichlet_energy(int node_count,
                               const std::vector<std::pair<int, int>>& edges,
                               const std::vector<double>& features, int dim) {
  if (node_count <= 0) throw ContractError("dirichlet_energy: no nodes");
  double acc = 0.0;
  for (const auto& [u, v] : edges) {
    double sq = 0.0;
    for (int j = 0; j < dim; ++j) {
      const double diff = features[static_cast<size_t>(u) * dim + j] -
                          features[static_cast<size_t>(v) * dim + j];
      sq += diff * diff;
    }
    acc += 2.0 * sq;  // both ordered pairs
  }
  const double n = static_cast<double>(node_count);
  return acc / (2.0 * n * n);
}

// Same quantity through the Laplacian trace form (1/n^2) tr(X^T L X); kept
// as an independent route for cross-checking.
inline double dirichlet_energy_trace(
    int node_count, const std::vector<std::pair<int, int>>& edges,
    const std::vector<double>& features, int dim) {
  if (node_count <= 0) throw ContractError("dirichlet_energy: no nodes");
  const size_t n = static_cast<size_t>(node_count);
  std::vector<double> lap(n * n, 0.0);
  for (const auto& [u, v] : edges) {
    lap[u * n + v] -= 1.0;
    lap[v * n + u] -= 1.0;
    lap[u * n + u] += 1.0;
    lap[v * n + v] += 1.0;
  }
  // tr(X^T L X) = sum_j x_j^T L x_j over feature columns.
  double trace = 0.0;
  for (int j = 0; j < dim; ++j) {
    for (size_t r = 0; r < n; ++r) {
      double lx = 0.0;
      for (size_t c = 0; c < n; ++c) {
        lx += lap[r * n + c] * features[c * dim + j];
      }
      trace += features[r * dim + j] * lx;
    }
  }
  return trace / (static_cast<double>(n) * static_cast<double>(n));
}

}  // namespace mgf
