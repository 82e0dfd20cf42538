#include "mgf/model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "mgf/synth.hpp"

namespace mgf {
namespace {

Dataset tiny_dataset(int samples = 8, int n = 2, int nodes = 4, int d = 6,
                     uint64_t seed = 3) {
  Setting1Config cfg;
  cfg.sample_count = samples;
  cfg.graphs_per_sample = n;
  cfg.nodes = nodes;
  cfg.informative_count = nodes;
  cfg.feature_dim = d;
  cfg.seed = seed;
  return gen_setting1(cfg);
}

ModelConfig tiny_config(const Dataset& d, uint64_t seed = 1) {
  ModelConfig cfg = make_model_config(
      static_cast<int>(d.samples[0].graphs.size()), d.feature_dim,
      d.class_count);
  cfg.mlp_hidden = 8;
  cfg.seed = seed;
  return cfg;
}

TEST(ModelConfig, LateFusionExcludesMetaFlags) {
  Dataset d = tiny_dataset();
  ModelConfig cfg = tiny_config(d);
  cfg.late_fusion = true;
  cfg.no_intra_edges = true;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Predict, ProbabilitiesFormASimplex) {
  Dataset d = tiny_dataset();
  Model m = init_model(tiny_config(d));
  for (const auto& s : d.samples) {
    auto p = predict(m, s);
    double sum = 0.0;
    for (double v : p.probabilities) {
      EXPECT_GE(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
    EXPECT_EQ(p.probabilities.size(), 2u);
    EXPECT_TRUE(p.has_meta);
    EXPECT_GE(p.meta.size(), 2);
  }
}

TEST(Predict, SingleGraphSampleRuns) {
  Dataset d = tiny_dataset(4, /*n=*/1);
  Model m = init_model(tiny_config(d));
  auto p = predict(m, d.samples[0]);
  EXPECT_NEAR(p.probabilities[0] + p.probabilities[1], 1.0, 1e-9);
}

TEST(Predict, LateFusionSingleGraphEqualsItsClassifier) {
  Dataset d = tiny_dataset(4, /*n=*/1);
  ModelConfig cfg = tiny_config(d);
  cfg.late_fusion = true;
  Model m = init_model(cfg);
  auto p = predict(m, d.samples[0]);
  // Recompute the single-graph path by hand.
  NoGradGuard guard;
  const auto& g = d.samples[0].graphs[0];
  auto enc = encode(feature_tensor(g), AttentionSupport::from_graph(g),
                    cfg.encoder, m.params.encoders[0], depth_weights_for(m, 0));
  Tensor logits = mlp_forward(mean_rows(enc.fused_h), m.params.late_mlps[0]);
  for (int c = 0; c < 2; ++c) {
    EXPECT_NEAR(p.logits[c], logits.at(0, c), 1e-12);
  }
}

TEST(Predict, LateFusionIndependentOfThresholds) {
  Dataset d = tiny_dataset();
  ModelConfig a = tiny_config(d);
  a.late_fusion = true;
  a.supernode_rule = SupernodeSelection::fixed(0.1);
  a.superedge_rule = SuperedgeRule::fixed(0.1);
  ModelConfig b = a;
  b.supernode_rule = SupernodeSelection::fixed(0.9);
  b.superedge_rule = SuperedgeRule::fixed(0.9);
  Model ma = init_model(a);
  Model mb = init_model(b);
  for (const auto& s : d.samples) {
    const auto pa = predict(ma, s);
    const auto pb = predict(mb, s);
    for (int c = 0; c < 2; ++c) {
      EXPECT_DOUBLE_EQ(pa.logits[c], pb.logits[c]);
    }
  }
}

TEST(Predict, WithinGraphPermutationInvariance) {
  Dataset d = tiny_dataset(3, 2, 5, 6, 11);
  Model m = init_model(tiny_config(d));
  const auto& sample = d.samples[0];

  MultiGraphSample permuted = sample;
  const std::vector<int> pi = {2, 4, 0, 3, 1};
  Graph& g = permuted.graphs[1];
  const Graph original = sample.graphs[1];
  for (int u = 0; u < g.node_count; ++u) {
    for (int j = 0; j < g.feature_dim; ++j) {
      g.set_feature(pi[u], j, original.feature(u, j));
    }
  }
  g.edges.clear();
  for (const auto& [u, v] : original.edges) g.add_edge(pi[u], pi[v]);
  g.sort_edges();

  const auto pa = predict(m, sample);
  const auto pb = predict(m, permuted);
  for (int c = 0; c < 2; ++c) {
    EXPECT_NEAR(pa.logits[c], pb.logits[c], 1e-9);
  }
}

TEST(Predict, NoSupernodesKeepsEveryNode) {
  Dataset d = tiny_dataset();
  ModelConfig cfg = tiny_config(d);
  cfg.no_supernodes = true;
  Model m = init_model(cfg);
  auto p = predict(m, d.samples[0]);
  int total_nodes = 0;
  for (const auto& g : d.samples[0].graphs) total_nodes += g.node_count;
  EXPECT_EQ(p.meta.size(), total_nodes);
}

TEST(Predict, NoIntraEdgesDropsWithinGraphStructure) {
  Dataset d = tiny_dataset();
  ModelConfig cfg = tiny_config(d);
  cfg.no_supernodes = true;
  cfg.no_intra_edges = true;
  cfg.superedge_rule = SuperedgeRule::fixed(-1.0);
  Model m = init_model(cfg);
  auto p = predict(m, d.samples[0]);
  EXPECT_TRUE(p.meta.intra_edges.empty());
  EXPECT_FALSE(p.meta.inter_edges.empty());
}

TEST(Predict, NoInterEdgesDropsCrossGraphStructure) {
  Dataset d = tiny_dataset();
  ModelConfig cfg = tiny_config(d);
  cfg.no_supernodes = true;
  cfg.no_inter_edges = true;
  Model m = init_model(cfg);
  auto p = predict(m, d.samples[0]);
  EXPECT_TRUE(p.meta.inter_edges.empty());
}

TEST(MetaForward, IdentityParametersPreserveEmbeddings) {
  // Proof-mode meta layers with identity maps on an edgeless meta-graph.
  EncoderConfig meta_cfg;
  meta_cfg.layers = 2;
  meta_cfg.heads = 1;
  meta_cfg.dim = 4;
  meta_cfg.block = BlockMode::Proof;
  meta_cfg.activation = Activation::Identity;
  EncoderParams meta_params = theorem_encoder_params(meta_cfg);
  MetaGraph meta;
  RandomStream rng(4);
  for (int i = 0; i < 5; ++i) {
    Supernode s;
    s.graph_index = i % 2;
    s.node_index = i;
    s.embedding = {rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    meta.supernodes.push_back(s);
  }
  std::vector<double> flat;
  for (const auto& s : meta.supernodes) {
    flat.insert(flat.end(), s.embedding.begin(), s.embedding.end());
  }
  Tensor h0 = Tensor::leaf(5, 4, flat);
  Tensor out = meta_forward(meta, h0, meta_cfg, meta_params);
  for (size_t i = 0; i < flat.size(); ++i) {
    EXPECT_DOUBLE_EQ(out.values()[i], flat[i]);
  }
}

TEST(MetaForward, EmptyMetaGraphIsContractViolation) {
  EncoderConfig meta_cfg;
  meta_cfg.layers = 1;
  meta_cfg.heads = 1;
  meta_cfg.dim = 4;
  RandomStream rng(1);
  EncoderParams p = init_encoder_params(meta_cfg, rng);
  MetaGraph meta;
  EXPECT_THROW(
      meta_forward(meta, Tensor::zeros(0, 4), meta_cfg, p),
      ContractError);
}

TEST(Pool, SingleRowIsThatRowForMeanAndMax) {
  Tensor h = Tensor::leaf(1, 3, {0.5, -1.0, 2.0});
  for (auto mode : {Pooling::Mean, Pooling::Max}) {
    Tensor p = pool_rows(h, mode);
    EXPECT_DOUBLE_EQ(p.at(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(p.at(0, 1), -1.0);
    EXPECT_DOUBLE_EQ(p.at(0, 2), 2.0);
  }
}

TEST(Pool, MeanInvariantToRowPermutation) {
  RandomStream rng(6);
  Tensor h = Tensor::randn(5, 3, rng);
  Tensor hp = gather_rows(h, {4, 1, 3, 0, 2});
  Tensor a = pool_rows(h, Pooling::Mean);
  Tensor b = pool_rows(hp, Pooling::Mean);
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(a.at(0, j), b.at(0, j), 1e-12);
}

TEST(Pool, ConcatStacksPerGraphMeans) {
  RandomStream rng(7);
  Tensor h = Tensor::randn(4, 3, rng);
  Tensor p = concat_pool(h, {{0, 1}, {2, 3}});
  EXPECT_EQ(p.cols(), 6);
  for (int j = 0; j < 3; ++j) {
    EXPECT_NEAR(p.at(0, j), 0.5 * (h.at(0, j) + h.at(1, j)), 1e-12);
    EXPECT_NEAR(p.at(0, 3 + j), 0.5 * (h.at(2, j) + h.at(3, j)), 1e-12);
  }
}

TEST(Pool, EmptySubsetIsContractViolation) {
  Tensor h = Tensor::zeros(3, 2);
  EXPECT_THROW(concat_pool(h, {{0}, {}}), ContractError);
}

TEST(Checkpoint, RoundTripReproducesPredictionsBitExactly) {
  Dataset d = tiny_dataset(6, 2, 4, 6, 9);
  ModelConfig cfg = tiny_config(d, 21);
  Model m = init_model(cfg);
  // Non-trivial depth state so the round trip covers it.
  m.depth.gamma = {{0.9, 0.4}, {0.2, -0.1}};
  m.depth.epsilon = {{0.2, 0.3}, {0.45, 0.55}};
  const auto path = std::filesystem::temp_directory_path() / "mgf_ckpt.json";
  save_checkpoint(m, path);
  Model back = load_checkpoint(path);
  std::filesystem::remove(path);
  for (const auto& s : d.samples) {
    const auto pa = predict(m, s);
    const auto pb = predict(back, s);
    for (size_t c = 0; c < pa.probabilities.size(); ++c) {
      EXPECT_EQ(pa.probabilities[c], pb.probabilities[c]);
      EXPECT_EQ(pa.logits[c], pb.logits[c]);
    }
  }
}

TEST(Checkpoint, ParameterOrderMismatchDetected) {
  Dataset d = tiny_dataset();
  Model m = init_model(tiny_config(d));
  std::string doc = checkpoint_to_json(m);
  const auto pos = doc.find("encoder0.l0.h0.wq");
  ASSERT_NE(pos, std::string::npos);
  doc.replace(pos, 17, "encoder0.l0.h0.zz");
  EXPECT_THROW(checkpoint_from_json(doc), ParseError);
}

TEST(GradCheckEndToEnd, TwoGraphFourNodeSampleAllParameters) {
  Dataset d = tiny_dataset(2, 2, 4, 6, 13);
  ModelConfig cfg = tiny_config(d, 5);
  cfg.encoder.layers = 2;
  cfg.supernode_rule = SupernodeSelection::fixed(0.0);  // keep all generic
  Model m = init_model(cfg);
  m.depth.gamma = {{0.7, 0.3}, {0.5, 0.5}};
  const auto& sample = d.samples[0];
  auto params = parameter_tensors(m);
  auto f = [&] {
    auto art = forward_sample(m, sample);
    return sample_loss(m, sample, art, 0.1);
  };
  EXPECT_LT(grad_check(f, params), 1e-4);
}

TEST(GradCheckEndToEnd, LateFusionPath) {
  Dataset d = tiny_dataset(2, 2, 4, 6, 14);
  ModelConfig cfg = tiny_config(d, 6);
  cfg.late_fusion = true;
  cfg.learn_late_weights = true;
  Model m = init_model(cfg);
  const auto& sample = d.samples[1];
  auto params = parameter_tensors(m);
  auto f = [&] {
    auto art = forward_sample(m, sample);
    return sample_loss(m, sample, art, 0.1);
  };
  EXPECT_LT(grad_check(f, params), 1e-4);
}

}  // namespace
}  // namespace mgf
