#include "mgf/encoder.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "mgf/synth.hpp"

namespace mgf {
namespace {

Tensor graph_features(const Graph& g, bool requires_grad = false) {
  return Tensor::leaf(g.node_count, g.feature_dim, g.features, requires_grad);
}

Graph random_graph(int n, int d, double p, uint64_t seed) {
  RandomStream rng(seed);
  Graph g(n, d);
  g.edges = gen_topology(n, p, rng);
  for (auto& f : g.features) f = rng.normal();
  return g;
}

EncoderConfig small_config(int layers = 1, int heads = 1, int dim = 4) {
  EncoderConfig cfg;
  cfg.layers = layers;
  cfg.heads = heads;
  cfg.dim = dim;
  return cfg;
}

TEST(Support, IncludesSelfLoopsAndAllEdges) {
  Graph g(3, 2);
  g.add_edge(0, 1);
  const auto sup = AttentionSupport::from_graph(g);
  EXPECT_EQ(sup.pairs(), 5);  // (0,0),(0,1),(1,0),(1,1),(2,2)
  EXPECT_EQ(sup.pair_index(0, 0), 0);
  EXPECT_EQ(sup.pair_index(1, 0), 2);
  EXPECT_EQ(sup.pair_index(2, 2), 4);
  EXPECT_EQ(sup.pair_index(0, 2), -1);
}

TEST(AttentionLayer, ZeroQueryKeyGivesUniformAttention) {
  Graph g = random_graph(6, 4, 0.5, 3);
  const auto sup = AttentionSupport::from_graph(g);
  EncoderConfig cfg = small_config();
  RandomStream rng(1);
  EncoderParams params = init_encoder_params(cfg, rng);
  // Zero out query/key projections of the single layer.
  for (auto& h : params.layers[0].heads) {
    std::fill(h.wq.mutable_values().begin(), h.wq.mutable_values().end(), 0.0);
    std::fill(h.wk.mutable_values().begin(), h.wk.mutable_values().end(), 0.0);
  }
  auto res = attention_layer(graph_features(g), sup, params.layers[0], cfg, 0);
  for (int u = 0; u < sup.nodes; ++u) {
    const int lo = sup.offsets[u], hi = sup.offsets[u + 1];
    const double expected = 1.0 / (hi - lo);
    for (int p = lo; p < hi; ++p) {
      EXPECT_NEAR(res.head_attn[0][p], expected, 1e-15);
    }
  }
}

TEST(AttentionLayer, DisconnectedGraphWithIdentityValuesIsIdentity) {
  // Self-loops only, W_V = I, b_V = 0, W_O = I, b_O = 0 -> Z = H_prev.
  Graph g(5, 3);
  for (auto& f : g.features) f = 0.1;
  RandomStream rng(9);
  for (auto& f : g.features) f = rng.normal();
  const auto sup = AttentionSupport::from_graph(g);
  EncoderConfig cfg = small_config(1, 1, 3);
  EncoderParams params = init_encoder_params(cfg, rng);
  auto& h = params.layers[0].heads[0];
  h.wv = Tensor::identity(3, true);
  h.bv = Tensor::zeros(1, 3, true);
  params.layers[0].wo = Tensor::identity(3, true);
  params.layers[0].bo = Tensor::zeros(1, 3, true);
  Tensor x = graph_features(g);
  auto res = attention_layer(x, sup, params.layers[0], cfg, 0);
  for (int u = 0; u < 5; ++u) {
    for (int j = 0; j < 3; ++j) {
      EXPECT_DOUBLE_EQ(res.z.at(u, j), x.at(u, j));
    }
  }
}

TEST(AttentionLayer, IdenticalFeaturesSplitAttentionEvenly) {
  Graph g(2, 3);
  for (int j = 0; j < 3; ++j) {
    g.set_feature(0, j, 0.7 - 0.2 * j);
    g.set_feature(1, j, 0.7 - 0.2 * j);
  }
  g.add_edge(0, 1);
  const auto sup = AttentionSupport::from_graph(g);
  EncoderConfig cfg = small_config(1, 1, 3);
  RandomStream rng(5);
  EncoderParams params = init_encoder_params(cfg, rng);
  auto res = attention_layer(graph_features(g), sup, params.layers[0], cfg, 0);
  EXPECT_NEAR(res.head_attn[0][sup.pair_index(0, 0)], 0.5, 1e-12);
  EXPECT_NEAR(res.head_attn[0][sup.pair_index(0, 1)], 0.5, 1e-12);
}

TEST(FfnBlock, ZeroFfnReducesToLayerNorm) {
  EncoderConfig cfg = small_config(1, 1, 4);
  RandomStream rng(2);
  EncoderParams params = init_encoder_params(cfg, rng);
  auto& lp = params.layers[0];
  for (Tensor* t : {&lp.ffn_w1, &lp.ffn_b1, &lp.ffn_w2, &lp.ffn_b2}) {
    std::fill(t->mutable_values().begin(), t->mutable_values().end(), 0.0);
  }
  Tensor z = Tensor::randn(3, 4, rng);
  Tensor h = ffn_block(z, lp, cfg);
  Tensor expected = layer_norm(z, lp.ln_gain, lp.ln_bias);
  for (size_t i = 0; i < h.size(); ++i) {
    EXPECT_DOUBLE_EQ(h.values()[i], expected.values()[i]);
  }
}

TEST(FfnBlock, ProofModeWithIdentityFfnAndIdentityActIsExactIdentity) {
  EncoderConfig cfg = small_config(1, 1, 4);
  cfg.block = BlockMode::Proof;
  cfg.activation = Activation::Identity;
  EncoderParams params = theorem_encoder_params(cfg);
  RandomStream rng(3);
  Tensor z = Tensor::randn(5, 4, rng);
  Tensor h = ffn_block(z, params.layers[0], cfg);
  for (size_t i = 0; i < z.size(); ++i) {
    EXPECT_DOUBLE_EQ(h.values()[i], z.values()[i]);
  }
}

TEST(FfnBlock, StandardModeRowsHaveZeroMean) {
  EncoderConfig cfg = small_config(1, 1, 6);
  RandomStream rng(4);
  EncoderParams params = init_encoder_params(cfg, rng);
  Tensor z = Tensor::randn(4, 6, rng);
  Tensor h = ffn_block(z, params.layers[0], cfg);
  for (int r = 0; r < 4; ++r) {
    double mean = 0.0;
    for (int c = 0; c < 6; ++c) mean += h.at(r, c);
    EXPECT_NEAR(mean / 6.0, 0.0, 1e-12);
  }
}

TEST(Encode, SingleLayerUnitGammaIsThatLayer) {
  Graph g = random_graph(5, 4, 0.5, 12);
  const auto sup = AttentionSupport::from_graph(g);
  EncoderConfig cfg = small_config(1, 2, 4);
  RandomStream rng(6);
  EncoderParams params = init_encoder_params(cfg, rng);
  auto out = encode(graph_features(g), sup, cfg, params, std::vector<double>{1.0});
  for (size_t i = 0; i < out.fused_h.size(); ++i) {
    EXPECT_DOUBLE_EQ(out.fused_h.values()[i], out.per_layer_h[0].values()[i]);
  }
}

TEST(Encode, FinalLayerOnlyGammaMatchesLastLayer) {
  Graph g = random_graph(6, 4, 0.4, 13);
  const auto sup = AttentionSupport::from_graph(g);
  EncoderConfig cfg = small_config(3, 1, 4);
  RandomStream rng(7);
  EncoderParams params = init_encoder_params(cfg, rng);
  auto out = encode(graph_features(g), sup, cfg, params,
                    final_layer_weights(3));
  for (size_t i = 0; i < out.fused_h.size(); ++i) {
    EXPECT_NEAR(out.fused_h.values()[i], out.per_layer_h[2].values()[i], 0.0);
  }
  for (int p = 0; p < sup.pairs(); ++p) {
    EXPECT_DOUBLE_EQ(out.fused_attn[p], out.per_layer_attn[2][p]);
  }
}

TEST(Encode, GammaLengthMismatchIsConfigError) {
  Graph g = random_graph(4, 4, 0.5, 14);
  const auto sup = AttentionSupport::from_graph(g);
  EncoderConfig cfg = small_config(2, 1, 4);
  RandomStream rng(8);
  EncoderParams params = init_encoder_params(cfg, rng);
  EXPECT_THROW(
      encode(graph_features(g), sup, cfg, params, std::vector<double>{1.0}),
      ConfigError);
}

TEST(Encode, PerLayerAttentionRowsSumToOne) {
  for (uint64_t seed = 0; seed < 25; ++seed) {
    Graph g = random_graph(3 + seed % 6, 4, 0.4, 100 + seed);
    const auto sup = AttentionSupport::from_graph(g);
    EncoderConfig cfg = small_config(2, 2, 4);
    RandomStream rng(seed);
    EncoderParams params = init_encoder_params(cfg, rng);
    auto out = encode(graph_features(g), sup, cfg, params,
                      std::vector<double>{0.8, -0.3});
    for (int l = 0; l < cfg.layers; ++l) {
      for (int u = 0; u < sup.nodes; ++u) {
        double sum = 0.0;
        for (int p = sup.offsets[u]; p < sup.offsets[u + 1]; ++p) {
          sum += out.per_layer_attn[l][p];
        }
        EXPECT_NEAR(sum, 1.0, 1e-9);
      }
    }
    // Fused rows sum to the gamma total.
    for (int u = 0; u < sup.nodes; ++u) {
      double sum = 0.0;
      for (int p = sup.offsets[u]; p < sup.offsets[u + 1]; ++p) {
        sum += out.fused_attn[p];
      }
      EXPECT_NEAR(sum, 0.5, 1e-9);
    }
  }
}

TEST(Encode, PermutationEquivariance) {
  const int n = 7, d = 4;
  Graph g = random_graph(n, d, 0.5, 42);
  // Permutation pi maps old index u to new index pi[u].
  std::vector<int> pi = {3, 0, 6, 2, 5, 1, 4};
  Graph pg(n, d);
  for (int u = 0; u < n; ++u) {
    for (int j = 0; j < d; ++j) pg.set_feature(pi[u], j, g.feature(u, j));
  }
  for (const auto& [u, v] : g.edges) pg.add_edge(pi[u], pi[v]);
  pg.sort_edges();

  EncoderConfig cfg = small_config(2, 2, d);
  RandomStream rng(11);
  EncoderParams params = init_encoder_params(cfg, rng);
  const std::vector<double> gamma = {0.6, 0.4};
  auto out = encode(graph_features(g), AttentionSupport::from_graph(g), cfg,
                    params, gamma);
  auto pout = encode(graph_features(pg), AttentionSupport::from_graph(pg), cfg,
                     params, gamma);
  for (int l = 0; l < cfg.layers; ++l) {
    for (int u = 0; u < n; ++u) {
      for (int j = 0; j < d; ++j) {
        EXPECT_NEAR(out.per_layer_h[l].at(u, j),
                    pout.per_layer_h[l].at(pi[u], j), 1e-12);
      }
    }
  }
  for (int u = 0; u < n; ++u) {
    for (int p = out.support.offsets[u]; p < out.support.offsets[u + 1]; ++p) {
      const int v = out.support.dst[p];
      const int pp = pout.support.pair_index(pi[u], pi[v]);
      ASSERT_GE(pp, 0);
      EXPECT_NEAR(out.fused_attn[p], pout.fused_attn[pp], 1e-12);
    }
  }
}

TEST(TopK, MagnitudeRuleKeepsLargestMagnitude) {
  // Neighbor scores 0.9, -1.5, 0.2 at k=1: keeps the -1.5 neighbor plus self.
  std::vector<double> scores = {0.9, -1.5, 0.0, 0.2};
  std::vector<int> dst = {1, 2, 3, 4};  // self node is 3
  auto kept = topk_sparsify(scores, dst, 3, 1);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(dst[kept[0]], 2);
  EXPECT_EQ(dst[kept[1]], 3);
}

TEST(TopK, TieBreaksByScoreDescThenIndexAsc) {
  std::vector<double> scores = {-0.5, 0.5, 0.5, 0.0};
  std::vector<int> dst = {1, 2, 5, 0};  // self is 0
  auto kept = topk_sparsify(scores, dst, 0, 2);
  // Magnitudes tie at 0.5; positive scores win, then lower neighbor index,
  // so neighbors 2 and 5 survive. Kept entries come back in support order.
  ASSERT_EQ(kept.size(), 3u);
  EXPECT_EQ(dst[kept[0]], 2);
  EXPECT_EQ(dst[kept[1]], 5);
  EXPECT_EQ(dst[kept[2]], 0);
}

TEST(TopK, LargeKMatchesDenseExactly) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Graph g = random_graph(8, 4, 0.6, 200 + seed);
    const auto sup = AttentionSupport::from_graph(g);
    EncoderConfig dense_cfg = small_config(2, 2, 4);
    EncoderConfig topk_cfg = dense_cfg;
    topk_cfg.topk = 8;  // >= max degree
    RandomStream rng(seed);
    EncoderParams params = init_encoder_params(dense_cfg, rng);
    const std::vector<double> gamma = {0.5, 0.5};
    auto dense = encode(graph_features(g), sup, dense_cfg, params, gamma);
    auto sparse = encode(graph_features(g), sup, topk_cfg, params, gamma);
    for (size_t i = 0; i < dense.fused_h.size(); ++i) {
      EXPECT_NEAR(dense.fused_h.values()[i], sparse.fused_h.values()[i], 1e-12);
    }
    for (int p = 0; p < sup.pairs(); ++p) {
      EXPECT_NEAR(dense.fused_attn[p], sparse.fused_attn[p], 1e-12);
    }
  }
}

TEST(Encode, GradientCheckThroughTwoLayers) {
  Graph g = random_graph(4, 4, 0.6, 77);
  const auto sup = AttentionSupport::from_graph(g);
  EncoderConfig cfg = small_config(2, 2, 4);
  RandomStream rng(19);
  EncoderParams params = init_encoder_params(cfg, rng);
  Tensor x = graph_features(g, true);
  std::vector<NamedTensor> named;
  collect_encoder_params(params, "enc", &named);
  std::vector<Tensor> all = {x};
  for (auto& [name, t] : named) all.push_back(t);
  const std::vector<double> gamma = {0.7, 0.3};
  auto f = [&] {
    auto out = encode(x, sup, cfg, params, gamma);
    return cross_entropy(mean_rows(out.fused_h), {1});
  };
  EXPECT_LT(grad_check(f, all), 1e-4);
}

TEST(Encode, AttentionSupportNeverLeaksOutsideEdges) {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Graph g = random_graph(6, 4, 0.3, 300 + seed);
    const auto sup = AttentionSupport::from_graph(g);
    const auto adj = adjacency_lists(g);
    for (int p = 0; p < sup.pairs(); ++p) {
      const int u = sup.src[p], v = sup.dst[p];
      const bool self = u == v;
      const bool edge =
          std::find(adj[u].begin(), adj[u].end(), v) != adj[u].end();
      EXPECT_TRUE(self || edge);
    }
  }
}

}  // namespace
}  // namespace mgf
