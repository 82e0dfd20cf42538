#pragma once

// Synthetic multi-graph dataset generators: Setting 1 (modality-specific
// feature noise, linear label rule) and Setting 2 (Gaussian-process features
// with temporal structure, nonlinear label rule). Topology is Erdos-Renyi
// with isolated-node patching; the generating config is echoed into dataset
// provenance. Per-sample RNG substreams are derived from (seed, sample index)
// so parallel generation would be bit-identical to serial.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgf/errors.hpp"
#include "mgf/graph.hpp"
#include "mgf/rng.hpp"

namespace mgf {

struct Setting1Config {
  int sample_count = 100;            // K
  int graphs_per_sample = 5;         // n
  int nodes = 5;                     // N
  int informative_count = 5;         // N0 <= N; == N means all informative
  int feature_dim = 12;              // d
  std::vector<double> noise_levels;  // sigma_i, defaults filled per graph
  std::vector<double> label_weights; // w_i in [0,1], sum 1; defaults uniform
  double label_threshold = 0.5;      // tau_label in [0,1]
  double edge_probability = 0.3;
  uint64_t seed = 0;
};

struct Setting2Config {
  int sample_count = 100;
  int graphs_per_sample = 5;
  int nodes = 50;
  int informative_count = 40;
  int feature_dim = 12;              // must be divisible by 3
  std::vector<double> label_weights;
  double label_threshold = 0.5;
  double edge_probability = 0.3;
  double gp_length_scale = 1.0;      // l
  double informative_variance = 1.0; // sigma^2
  double noise_variance = 2.5;       // sigma^2 for non-informative nodes
  uint64_t seed = 0;
};

namespace detail {

inline std::vector<double> default_noise_levels(int n) {
  std::vector<double> s(n);
  for (int i = 0; i < n; ++i) {
    s[i] = n > 1 ? 0.1 + 0.4 * static_cast<double>(i) / (n - 1) : 0.3;
  }
  return s;
}

inline std::vector<double> default_weights(int n) {
  return std::vector<double>(n, 1.0 / n);
}

inline void check_common(int k, int n, int nodes, int informative, int d,
                         const std::vector<double>& w, double tau,
                         double p_edge) {
  if (k < 1) throw ConfigError("sample_count must be positive");
  if (n < 1) throw ConfigError("graphs_per_sample must be positive");
  if (nodes < 1) throw ConfigError("nodes must be positive");
  if (informative < 1 || informative > nodes) {
    throw ConfigError("informative_count must be in [1, nodes]");
  }
  if (d < 1) throw ConfigError("feature_dim must be positive");
  if (static_cast<int>(w.size()) != n) {
    throw ConfigError("label_weights must have one entry per graph");
  }
  double sum = 0.0;
  for (double wi : w) {
    if (wi < 0.0 || wi > 1.0) throw ConfigError("label weights must be in [0,1]");
    sum += wi;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("label weights must sum to 1");
  }
  if (tau < 0.0 || tau > 1.0) {
    throw ConfigError("label_threshold must be in [0,1]");
  }
  if (p_edge < 0.0 || p_edge > 1.0) {
    throw ConfigError("edge_probability must be in [0,1]");
  }
}

}  // namespace detail

inline Setting1Config with_defaults(Setting1Config c) {
  if (c.noise_levels.empty()) {
    c.noise_levels = detail::default_noise_levels(c.graphs_per_sample);
  }
  if (c.label_weights.empty()) {
    c.label_weights = detail::default_weights(c.graphs_per_sample);
  }
  detail::check_common(c.sample_count, c.graphs_per_sample, c.nodes,
                       c.informative_count, c.feature_dim, c.label_weights,
                       c.label_threshold, c.edge_probability);
  if (static_cast<int>(c.noise_levels.size()) != c.graphs_per_sample) {
    throw ConfigError("noise_levels must have one entry per graph");
  }
  for (double s : c.noise_levels) {
    if (s < 0.0) throw ConfigError("noise levels must be non-negative");
  }
  return c;
}

inline Setting2Config with_defaults(Setting2Config c) {
  if (c.label_weights.empty()) {
    c.label_weights = detail::default_weights(c.graphs_per_sample);
  }
  detail::check_common(c.sample_count, c.graphs_per_sample, c.nodes,
                       c.informative_count, c.feature_dim, c.label_weights,
                       c.label_threshold, c.edge_probability);
  if (c.feature_dim % 3 != 0) {
    throw ConfigError("feature_dim must be divisible by 3 for the label rule");
  }
  if (c.gp_length_scale <= 0.0) throw ConfigError("gp_length_scale must be > 0");
  if (!(c.informative_variance > 0.0) ||
      c.noise_variance < c.informative_variance) {
    throw ConfigError("need noise_variance >= informative_variance > 0");
  }
  return c;
}

inline nlohmann::json to_json(const Setting1Config& c) {
  return {{"setting", 1},
          {"sample_count", c.sample_count},
          {"graphs_per_sample", c.graphs_per_sample},
          {"nodes", c.nodes},
          {"informative_count", c.informative_count},
          {"feature_dim", c.feature_dim},
          {"noise_levels", c.noise_levels},
          {"label_weights", c.label_weights},
          {"label_threshold", c.label_threshold},
          {"edge_probability", c.edge_probability},
          {"seed", c.seed}};
}

inline nlohmann::json to_json(const Setting2Config& c) {
  return {{"setting", 2},
          {"sample_count", c.sample_count},
          {"graphs_per_sample", c.graphs_per_sample},
          {"nodes", c.nodes},
          {"informative_count", c.informative_count},
          {"feature_dim", c.feature_dim},
          {"label_weights", c.label_weights},
          {"label_threshold", c.label_threshold},
          {"edge_probability", c.edge_probability},
          {"gp_length_scale", c.gp_length_scale},
          {"informative_variance", c.informative_variance},
          {"noise_variance", c.noise_variance},
          {"seed", c.seed}};
}

// ---------------------------------------------------------------------------
// Topology
// ---------------------------------------------------------------------------

// Erdos-Renyi G(N, p). Any node left isolated is connected to one uniformly
// random other node, so extended neighborhoods are never just self-loops
// unless N = 1.
inline std::vector<std::pair<int, int>> gen_topology(int n, double p_edge,
                                                     RandomStream& rng) {
  if (p_edge < 0.0 || p_edge > 1.0) {
    throw ConfigError("edge probability must be in [0,1]");
  }
  std::vector<std::pair<int, int>> edges;
  std::vector<int> degree(n, 0);
  for (int u = 0; u < n; ++u) {
    for (int v = u + 1; v < n; ++v) {
      const bool keep = p_edge >= 1.0 || rng.uniform() < p_edge;
      if (keep) {
        edges.emplace_back(u, v);
        degree[u]++;
        degree[v]++;
      }
    }
  }
  if (n > 1) {
    for (int u = 0; u < n; ++u) {
      if (degree[u] > 0) continue;
      int w = rng.index(n - 1);
      if (w >= u) w += 1;
      edges.emplace_back(std::min(u, w), std::max(u, w));
      degree[u]++;
      degree[w]++;
    }
  }
  std::sort(edges.begin(), edges.end());
  return edges;
}

// ---------------------------------------------------------------------------
// Setting 1
// ---------------------------------------------------------------------------

namespace detail {

// Nearest-PSD repair: symmetrize, clip eigenvalues at 1e-8, reconstruct.
// Returns a factor A with A A^T equal to the repaired covariance.
inline Eigen::MatrixXd covariance_factor(const Eigen::MatrixXd& sym) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.info() != Eigen::Success) {
    throw Error("covariance eigendecomposition failed");
  }
  Eigen::VectorXd lam = es.eigenvalues();
  for (int i = 0; i < lam.size(); ++i) lam[i] = std::max(lam[i], 1e-8);
  return es.eigenvectors() * lam.cwiseSqrt().asDiagonal();
}

inline Eigen::MatrixXd setting1_covariance(int d, double sigma,
                                           RandomStream& rng) {
  Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(d, d);
  for (int r = 0; r < d; ++r) {
    for (int c = r + 1; c < d; ++c) {
      const double v = rng.uniform(-sigma, sigma);
      cov(r, c) = v;
      cov(c, r) = v;
    }
  }
  return cov;
}

}  // namespace detail

// Shared label: indicator of the weighted vote reaching the threshold.
inline int shared_label(const std::vector<int>& graph_labels,
                        const std::vector<double>& weights,
                        double label_threshold) {
  if (graph_labels.size() != weights.size()) {
    throw DimensionError("shared_label: weights/labels length mismatch");
  }
  double vote = 0.0;
  for (size_t i = 0; i < graph_labels.size(); ++i) {
    vote += weights[i] * graph_labels[i];
  }
  return vote >= label_threshold ? 1 : 0;
}

inline Dataset gen_setting1(const Setting1Config& config_in) {
  const Setting1Config cfg = with_defaults(config_in);
  const int n = cfg.graphs_per_sample;
  const int d = cfg.feature_dim;
  const double eps_stddev = std::sqrt(0.1);

  RandomStream master(cfg.seed);

  // One covariance per graph index, shared by all samples.
  std::vector<Eigen::MatrixXd> factors;
  factors.reserve(n);
  for (int i = 0; i < n; ++i) {
    RandomStream cov_rng = master.substream(0x5351000000000000ULL + i);
    factors.push_back(detail::covariance_factor(
        detail::setting1_covariance(d, cfg.noise_levels[i], cov_rng)));
  }

  Dataset data;
  data.class_count = 2;
  data.feature_dim = d;
  data.seed = cfg.seed;
  data.provenance = {"setting1", to_json(cfg).dump()};
  data.samples.reserve(cfg.sample_count);

  Eigen::VectorXd z(d);
  for (int k = 0; k < cfg.sample_count; ++k) {
    RandomStream rng = master.substream(static_cast<uint64_t>(k));
    MultiGraphSample sample;
    std::vector<int> graph_labels(n);
    for (int i = 0; i < n; ++i) {
      Graph g(cfg.nodes, d);
      g.edges = gen_topology(cfg.nodes, cfg.edge_probability, rng);
      double informative_sum = 0.0;
      for (int u = 0; u < cfg.nodes; ++u) {
        if (u < cfg.informative_count) {
          for (int j = 0; j < d; ++j) z[j] = rng.normal();
          const Eigen::VectorXd x = factors[i] * z;
          for (int j = 0; j < d; ++j) {
            g.set_feature(u, j, x[j]);
            informative_sum += x[j];
          }
        } else {
          for (int j = 0; j < d; ++j) {
            g.set_feature(u, j, rng.uniform(0.0, 0.5));
          }
        }
      }
      const double eps = rng.normal(0.0, eps_stddev);
      graph_labels[i] =
          informative_sum / cfg.informative_count + eps > 0.0 ? 1 : 0;
      sample.graphs.push_back(std::move(g));
    }
    sample.label =
        shared_label(graph_labels, cfg.label_weights, cfg.label_threshold);
    data.samples.push_back(std::move(sample));
  }
  return data;
}

// ---------------------------------------------------------------------------
// Setting 2
// ---------------------------------------------------------------------------

// Squared exponential kernel k(x, x') = sigma^2 exp(-(x-x')^2 / l^2).
inline double gp_kernel(double x, double xp, double variance,
                        double length_scale) {
  if (length_scale <= 0.0) throw ConfigError("gp length scale must be > 0");
  const double diff = x - xp;
  return variance * std::exp(-diff * diff / (length_scale * length_scale));
}

namespace detail {

// One GP sample path over d fresh uniform inputs (sorted ascending so the
// path reads as a temporal sequence). Gram gets 1e-8 diagonal jitter before
// the Cholesky factorization.
inline void gp_sample_path(int d, double variance, double length_scale,
                           RandomStream& rng, double* out) {
  std::vector<double> inputs(d);
  for (auto& x : inputs) x = rng.uniform();
  std::sort(inputs.begin(), inputs.end());
  Eigen::MatrixXd gram(d, d);
  for (int a = 0; a < d; ++a) {
    for (int b = 0; b < d; ++b) {
      gram(a, b) = gp_kernel(inputs[a], inputs[b], variance, length_scale);
    }
    gram(a, a) += 1e-8;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success) {
    throw Error("GP gram matrix is not PSD after jitter");
  }
  Eigen::VectorXd z(d);
  for (int a = 0; a < d; ++a) z[a] = rng.normal();
  const Eigen::VectorXd path = llt.matrixL() * z;
  for (int a = 0; a < d; ++a) out[a] = path[a];
}

}  // namespace detail

inline Dataset gen_setting2(const Setting2Config& config_in) {
  const Setting2Config cfg = with_defaults(config_in);
  const int n = cfg.graphs_per_sample;
  const int d = cfg.feature_dim;
  const int third = d / 3;
  const double eps_stddev = std::sqrt(0.1);

  RandomStream master(cfg.seed);
  Dataset data;
  data.class_count = 2;
  data.feature_dim = d;
  data.seed = cfg.seed;
  data.provenance = {"setting2", to_json(cfg).dump()};
  data.samples.reserve(cfg.sample_count);

  std::vector<double> path(d);
  std::vector<double> mean_informative(d);
  for (int k = 0; k < cfg.sample_count; ++k) {
    RandomStream rng = master.substream(static_cast<uint64_t>(k));
    MultiGraphSample sample;
    std::vector<int> graph_labels(n);
    for (int i = 0; i < n; ++i) {
      Graph g(cfg.nodes, d);
      g.edges = gen_topology(cfg.nodes, cfg.edge_probability, rng);
      std::fill(mean_informative.begin(), mean_informative.end(), 0.0);
      for (int u = 0; u < cfg.nodes; ++u) {
        const bool informative = u < cfg.informative_count;
        const double variance =
            informative ? cfg.informative_variance : cfg.noise_variance;
        detail::gp_sample_path(d, variance, cfg.gp_length_scale, rng,
                               path.data());
        for (int j = 0; j < d; ++j) {
          g.set_feature(u, j, path[j]);
          if (informative) mean_informative[j] += path[j];
        }
      }
      for (auto& v : mean_informative) v /= cfg.informative_count;
      double dot1 = 0.0, dot2 = 0.0, quad = 0.0;
      for (int j = 0; j < third; ++j) dot1 += mean_informative[j];
      for (int j = third; j < 2 * third; ++j) dot2 += mean_informative[j];
      for (int j = 2 * third; j < d; ++j) {
        quad += mean_informative[j] * mean_informative[j];
      }
      const double eps = rng.normal(0.0, eps_stddev);
      graph_labels[i] =
          std::sin(dot1) * std::cos(dot2) + quad + eps > 0.0 ? 1 : 0;
      sample.graphs.push_back(std::move(g));
    }
    sample.label =
        shared_label(graph_labels, cfg.label_weights, cfg.label_threshold);
    data.samples.push_back(std::move(sample));
  }
  return data;
}

// ---------------------------------------------------------------------------
// Experiment presets
// ---------------------------------------------------------------------------

// Experiment 1: Setting 1, 100 samples, five 5-node graphs, all informative.
inline Setting1Config experiment1_config(uint64_t seed) {
  Setting1Config c;
  c.sample_count = 100;
  c.graphs_per_sample = 5;
  c.nodes = 5;
  c.informative_count = 5;
  c.feature_dim = 12;
  c.seed = seed;
  return c;
}

// Experiment 2: Setting 2, 100 samples, 50-node graphs, 40 informative.
inline Setting2Config experiment2_config(uint64_t seed) {
  Setting2Config c;
  c.sample_count = 100;
  c.graphs_per_sample = 5;
  c.nodes = 50;
  c.informative_count = 40;
  c.feature_dim = 12;
  c.seed = seed;
  return c;
}

// Experiment 3: Experiment 2 at scale (2000 samples).
inline Setting2Config experiment3_config(uint64_t seed) {
  Setting2Config c = experiment2_config(seed);
  c.sample_count = 2000;
  return c;
}

}  // namespace mgf
