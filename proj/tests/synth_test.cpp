#include "mgf/synth.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "mgf/dataset_io.hpp"

namespace mgf {
namespace {

TEST(Topology, FullProbabilityGivesCompleteGraph) {
  RandomStream rng(1);
  const auto edges = gen_topology(6, 1.0, rng);
  EXPECT_EQ(edges.size(), 15u);
}

TEST(Topology, ZeroProbabilityPatchesIsolatedNodes) {
  RandomStream rng(2);
  const auto edges = gen_topology(5, 0.0, rng);
  EXPECT_LE(edges.size(), 5u);
  std::vector<int> degree(5, 0);
  for (const auto& [u, v] : edges) {
    degree[u]++;
    degree[v]++;
  }
  for (int deg : degree) EXPECT_GE(deg, 1);
}

TEST(Topology, DeterministicPerSeed) {
  RandomStream a(33), b(33);
  EXPECT_EQ(gen_topology(12, 0.4, a), gen_topology(12, 0.4, b));
}

TEST(Topology, SingleNodeHasNoEdges) {
  RandomStream rng(3);
  EXPECT_TRUE(gen_topology(1, 0.5, rng).empty());
}

TEST(SharedLabel, UnanimousPositive) {
  EXPECT_EQ(shared_label({1, 1, 1}, {0.2, 0.3, 0.5}, 1.0), 1);
}

TEST(SharedLabel, HandComputedVote) {
  // Uniform weights, 2 of 5 positive: 0.4 < 0.5.
  EXPECT_EQ(shared_label({1, 1, 0, 0, 0},
                         {0.2, 0.2, 0.2, 0.2, 0.2}, 0.5), 0);
}

TEST(SharedLabel, AllZeroStaysZero) {
  EXPECT_EQ(shared_label({0, 0}, {0.5, 0.5}, 0.1), 0);
}

TEST(Setting1, DeterministicPerSeed) {
  Setting1Config cfg;
  cfg.sample_count = 6;
  cfg.graphs_per_sample = 3;
  cfg.nodes = 5;
  cfg.informative_count = 3;
  cfg.feature_dim = 4;
  cfg.seed = 77;
  EXPECT_EQ(gen_setting1(cfg), gen_setting1(cfg));
}

TEST(Setting1, NonInformativeFeaturesInRange) {
  Setting1Config cfg;
  cfg.sample_count = 10;
  cfg.graphs_per_sample = 2;
  cfg.nodes = 6;
  cfg.informative_count = 2;
  cfg.feature_dim = 5;
  cfg.seed = 5;
  Dataset d = gen_setting1(cfg);
  for (const auto& s : d.samples) {
    for (const auto& g : s.graphs) {
      for (int u = cfg.informative_count; u < cfg.nodes; ++u) {
        for (int j = 0; j < cfg.feature_dim; ++j) {
          EXPECT_GE(g.feature(u, j), 0.0);
          EXPECT_LE(g.feature(u, j), 0.5);
        }
      }
    }
  }
}

TEST(Setting1, ZeroNoiseGivesUncorrelatedStandardNormals) {
  Setting1Config cfg;
  cfg.sample_count = 400;
  cfg.graphs_per_sample = 1;
  cfg.nodes = 4;
  cfg.informative_count = 4;
  cfg.feature_dim = 3;
  cfg.noise_levels = {0.0};
  cfg.seed = 20250810;
  Dataset d = gen_setting1(cfg);
  // Pool informative rows and check empirical moments.
  std::vector<std::vector<double>> rows;
  for (const auto& s : d.samples) {
    const Graph& g = s.graphs[0];
    for (int u = 0; u < g.node_count; ++u) {
      std::vector<double> row(cfg.feature_dim);
      for (int j = 0; j < cfg.feature_dim; ++j) row[j] = g.feature(u, j);
      rows.push_back(row);
    }
  }
  const double m = static_cast<double>(rows.size());
  for (int a = 0; a < cfg.feature_dim; ++a) {
    for (int b = a; b < cfg.feature_dim; ++b) {
      double cov = 0.0;
      for (const auto& r : rows) cov += r[a] * r[b];
      cov /= m;
      const double expected = a == b ? 1.0 : 0.0;
      EXPECT_NEAR(cov, expected, 0.12) << "entry " << a << "," << b;
    }
  }
}

TEST(Setting1, LabelBalanceIsRoughlyEven) {
  Setting1Config cfg = experiment1_config(20250810);
  cfg.sample_count = 1000;
  Dataset d = gen_setting1(cfg);
  double ones = 0;
  for (const auto& s : d.samples) ones += s.label;
  const double balance = ones / d.samples.size();
  EXPECT_GE(balance, 0.35);
  EXPECT_LE(balance, 0.65);
}

TEST(Setting1, CovarianceSanityUnderNoise) {
  Setting1Config cfg;
  cfg.sample_count = 500;
  cfg.graphs_per_sample = 1;
  cfg.nodes = 2;
  cfg.informative_count = 2;
  cfg.feature_dim = 4;
  cfg.noise_levels = {0.4};
  cfg.seed = 99;
  Dataset d = gen_setting1(cfg);
  const int n_rows = cfg.sample_count * cfg.nodes;
  const double stderr_bound = 3.0 / std::sqrt(static_cast<double>(n_rows));
  for (int a = 0; a < cfg.feature_dim; ++a) {
    for (int b = a + 1; b < cfg.feature_dim; ++b) {
      double cov = 0.0;
      for (const auto& s : d.samples) {
        const Graph& g = s.graphs[0];
        for (int u = 0; u < g.node_count; ++u) {
          cov += g.feature(u, a) * g.feature(u, b);
        }
      }
      cov /= n_rows;
      EXPECT_LE(std::abs(cov), 0.4 + stderr_bound + 0.1);
    }
  }
}

TEST(GpKernel, ZeroDistanceGivesVariance) {
  EXPECT_DOUBLE_EQ(gp_kernel(0.3, 0.3, 2.5, 1.0), 2.5);
}

TEST(GpKernel, UnitDistanceDirectEvaluation) {
  EXPECT_NEAR(gp_kernel(0.0, 1.0, 1.0, 1.0), std::exp(-1.0), 1e-15);
}

TEST(GpKernel, Symmetric) {
  EXPECT_DOUBLE_EQ(gp_kernel(0.2, 0.9, 1.7, 0.5), gp_kernel(0.9, 0.2, 1.7, 0.5));
}

TEST(Setting2, RequiresFeatureDimDivisibleByThree) {
  Setting2Config cfg;
  cfg.feature_dim = 10;
  EXPECT_THROW(gen_setting2(cfg), ConfigError);
}

TEST(Setting2, DeterministicPerSeed) {
  Setting2Config cfg;
  cfg.sample_count = 3;
  cfg.graphs_per_sample = 2;
  cfg.nodes = 6;
  cfg.informative_count = 4;
  cfg.feature_dim = 6;
  cfg.seed = 4;
  EXPECT_EQ(gen_setting2(cfg), gen_setting2(cfg));
}

// Monte-Carlo check of the configured kernel variances: informative nodes
// near 1.0, noise nodes near 2.5, both within 10% over 10k node draws.
TEST(Setting2, EmpiricalVariancesMatchKernels) {
  Setting2Config cfg;
  cfg.sample_count = 250;
  cfg.graphs_per_sample = 1;
  cfg.nodes = 40;
  cfg.informative_count = 20;
  cfg.feature_dim = 6;
  cfg.seed = 20250810;
  Dataset d = gen_setting2(cfg);
  double inf_sq = 0.0, noise_sq = 0.0;
  long inf_n = 0, noise_n = 0;
  for (const auto& s : d.samples) {
    const Graph& g = s.graphs[0];
    for (int u = 0; u < g.node_count; ++u) {
      for (int j = 0; j < g.feature_dim; ++j) {
        const double v = g.feature(u, j);
        if (u < cfg.informative_count) {
          inf_sq += v * v;
          inf_n++;
        } else {
          noise_sq += v * v;
          noise_n++;
        }
      }
    }
  }
  const double inf_var = inf_sq / inf_n;
  const double noise_var = noise_sq / noise_n;
  EXPECT_NEAR(inf_var, 1.0, 0.1);
  EXPECT_NEAR(noise_var, 2.5, 0.25);
}

TEST(Setting2, ProvenanceRoundTripsThroughFile) {
  Setting2Config cfg;
  cfg.sample_count = 2;
  cfg.graphs_per_sample = 2;
  cfg.nodes = 4;
  cfg.informative_count = 2;
  cfg.feature_dim = 3;
  cfg.seed = 8;
  Dataset d = gen_setting2(cfg);
  Dataset back = dataset_from_json(dataset_to_json(d));
  EXPECT_EQ(back.provenance.kind, "setting2");
  EXPECT_EQ(d, back);
}

}  // namespace
}  // namespace mgf
