#pragma once

// End-to-end model: per-graph encoders with depth-aware fusion, supernode
// selection, meta-graph assembly, meta transformer layers, pooling and an
// MLP head. Ablation switches cover final-layer-only depth weights, keeping
// all nodes, dropping inter- or intra-graph edges, and the late-fusion
// baseline of independently pooled per-graph classifiers.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgf/depth.hpp"
#include "mgf/encoder.hpp"
#include "mgf/errors.hpp"
#include "mgf/graph.hpp"
#include "mgf/io_util.hpp"
#include "mgf/metagraph.hpp"
#include "mgf/tensor.hpp"

namespace mgf {

enum class Pooling { Mean, Max, Concat };

inline const char* to_string(Pooling p) {
  switch (p) {
    case Pooling::Mean: return "mean";
    case Pooling::Max: return "max";
    case Pooling::Concat: return "concat";
  }
  return "?";
}

inline Pooling pooling_from_string(const std::string& s) {
  if (s == "mean") return Pooling::Mean;
  if (s == "max") return Pooling::Max;
  if (s == "concat") return Pooling::Concat;
  throw ConfigError("unknown pooling '" + s + "'");
}

struct ModelConfig {
  int graphs_per_sample = 0;  // n
  int feature_dim = 0;        // d; also the model width
  int class_count = 0;

  EncoderConfig encoder;       // per-graph encoders, layers = L
  EncoderConfig meta_encoder;  // meta transformer, layers = L_GT
  bool share_encoder_weights = false;

  Pooling pooling = Pooling::Mean;
  int mlp_hidden = 16;  // h''

  SupernodeSelection supernode_rule = SupernodeSelection::fixed(0.3);
  SuperedgeRule superedge_rule = SuperedgeRule::fixed(0.4);

  // Ablations.
  bool no_adaptive_depth = false;
  bool no_supernodes = false;
  bool no_inter_edges = false;
  bool no_intra_edges = false;
  bool late_fusion = false;

  bool learn_late_weights = false;
  std::vector<double> late_weights;  // defaults to uniform
  bool floor_gamma = false;
  bool meta_mean_depth_fusion = false;  // average meta layers instead of last

  uint64_t seed = 0;

  int pooled_dim() const {
    return pooling == Pooling::Concat ? graphs_per_sample * feature_dim
                                      : feature_dim;
  }

  void validate() const {
    if (graphs_per_sample < 1) throw ConfigError("graphs_per_sample must be >= 1");
    if (feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
    if (class_count < 2) throw ConfigError("class_count must be >= 2");
    if (mlp_hidden < 1) throw ConfigError("mlp_hidden must be >= 1");
    encoder.validate();
    meta_encoder.validate();
    if (encoder.dim != feature_dim || meta_encoder.dim != feature_dim) {
      throw ConfigError("encoder dims must equal feature_dim");
    }
    if (late_fusion &&
        (no_supernodes || no_inter_edges || no_intra_edges)) {
      throw ConfigError(
          "late_fusion bypasses the meta-graph; meta-graph ablation flags "
          "must stay unset");
    }
    if (!late_fusion && (learn_late_weights || !late_weights.empty())) {
      throw ConfigError("late-fusion weights require late_fusion mode");
    }
    if (!late_weights.empty() &&
        static_cast<int>(late_weights.size()) != graphs_per_sample) {
      throw ConfigError("late_weights must have one entry per graph");
    }
  }
};

// Reasonable defaults for a dataset with n graphs of width d.
inline ModelConfig make_model_config(int graphs_per_sample, int feature_dim,
                                     int class_count) {
  ModelConfig cfg;
  cfg.graphs_per_sample = graphs_per_sample;
  cfg.feature_dim = feature_dim;
  cfg.class_count = class_count;
  cfg.encoder.layers = 2;
  cfg.encoder.heads = feature_dim % 2 == 0 ? 2 : 1;
  cfg.encoder.dim = feature_dim;
  cfg.meta_encoder = cfg.encoder;
  cfg.meta_encoder.layers = 1;
  return cfg;
}

struct MlpParams {
  Tensor w1, b1, w2, b2;  // h' x h'', 1 x h'', h'' x C, 1 x C
};

inline MlpParams init_mlp_params(int in_dim, int hidden, int out_dim,
                                 RandomStream& rng) {
  const double b1 = 1.0 / std::sqrt(static_cast<double>(in_dim));
  const double b2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  return {Tensor::randu(in_dim, hidden, rng, -b1, b1, true),
          Tensor::zeros(1, hidden, true),
          Tensor::randu(hidden, out_dim, rng, -b2, b2, true),
          Tensor::zeros(1, out_dim, true)};
}

inline Tensor mlp_forward(const Tensor& pooled, const MlpParams& p) {
  Tensor hidden = relu(add_rowvec(matmul(pooled, p.w1), p.b1));
  return add_rowvec(matmul(hidden, p.w2), p.b2);
}

struct ModelParams {
  std::vector<EncoderParams> encoders;           // n, or 1 when shared
  std::vector<std::vector<ProbeParams>> probes;  // [n][L], empty w/o depth
  EncoderParams meta;
  MlpParams mlp;
  std::vector<MlpParams> late_mlps;  // n entries in late-fusion mode
  Tensor late_weight_logits;         // 1 x n when learn_late_weights
};

struct Model {
  ModelConfig config;
  ModelParams params;
  DepthState depth;
};

inline Model init_model(const ModelConfig& cfg) {
  cfg.validate();
  RandomStream rng(mix_seed(cfg.seed, 0x4d4f44454cULL));
  Model m;
  m.config = cfg;
  const int n = cfg.graphs_per_sample;
  const int encoder_count = cfg.share_encoder_weights ? 1 : n;
  for (int i = 0; i < encoder_count; ++i) {
    m.params.encoders.push_back(init_encoder_params(cfg.encoder, rng));
  }
  if (!cfg.no_adaptive_depth) {
    m.params.probes.resize(n);
    for (int i = 0; i < n; ++i) {
      for (int l = 0; l < cfg.encoder.layers; ++l) {
        m.params.probes[i].push_back(
            init_probe_params(cfg.feature_dim, cfg.class_count, rng));
      }
    }
  }
  if (cfg.late_fusion) {
    for (int i = 0; i < n; ++i) {
      m.params.late_mlps.push_back(init_mlp_params(
          cfg.feature_dim, cfg.mlp_hidden, cfg.class_count, rng));
    }
    if (cfg.learn_late_weights) {
      m.params.late_weight_logits = Tensor::zeros(1, n, true);
    }
  } else {
    m.params.meta = init_encoder_params(cfg.meta_encoder, rng);
    m.params.mlp = init_mlp_params(cfg.pooled_dim(), cfg.mlp_hidden,
                                   cfg.class_count, rng);
  }
  // Neutral depth weights until the first recomputation.
  m.depth = DepthState::uniform(n, cfg.encoder.layers,
                                1.0 / cfg.encoder.layers);
  return m;
}

inline std::vector<NamedTensor> collect_parameters(Model& m) {
  std::vector<NamedTensor> out;
  for (size_t i = 0; i < m.params.encoders.size(); ++i) {
    collect_encoder_params(m.params.encoders[i],
                           "encoder" + std::to_string(i), &out);
  }
  for (size_t i = 0; i < m.params.probes.size(); ++i) {
    for (size_t l = 0; l < m.params.probes[i].size(); ++l) {
      const std::string p =
          "probe" + std::to_string(i) + ".l" + std::to_string(l);
      out.push_back({p + ".w", m.params.probes[i][l].w});
      out.push_back({p + ".b", m.params.probes[i][l].b});
    }
  }
  if (!m.config.late_fusion) {
    collect_encoder_params(m.params.meta, "meta", &out);
    out.push_back({"mlp.w1", m.params.mlp.w1});
    out.push_back({"mlp.b1", m.params.mlp.b1});
    out.push_back({"mlp.w2", m.params.mlp.w2});
    out.push_back({"mlp.b2", m.params.mlp.b2});
  } else {
    for (size_t i = 0; i < m.params.late_mlps.size(); ++i) {
      const std::string p = "late_mlp" + std::to_string(i);
      out.push_back({p + ".w1", m.params.late_mlps[i].w1});
      out.push_back({p + ".b1", m.params.late_mlps[i].b1});
      out.push_back({p + ".w2", m.params.late_mlps[i].w2});
      out.push_back({p + ".b2", m.params.late_mlps[i].b2});
    }
    if (m.config.learn_late_weights) {
      out.push_back({"late_weight_logits", m.params.late_weight_logits});
    }
  }
  return out;
}

inline std::vector<Tensor> parameter_tensors(Model& m) {
  std::vector<Tensor> out;
  for (auto& [name, t] : collect_parameters(m)) out.push_back(t);
  return out;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

struct StageTimes {
  double data_prep = 0.0;
  double encoders = 0.0;
  double extraction = 0.0;
  double meta = 0.0;
  double head = 0.0;

  double sum() const { return data_prep + encoders + extraction + meta + head; }
  StageTimes& operator+=(const StageTimes& o) {
    data_prep += o.data_prep;
    encoders += o.encoders;
    extraction += o.extraction;
    meta += o.meta;
    head += o.head;
    return *this;
  }
};

namespace detail {

class ScopedStageTimer {
 public:
  explicit ScopedStageTimer(double* slot)
      : slot_(slot), start_(std::chrono::steady_clock::now()) {}
  ~ScopedStageTimer() {
    if (slot_) {
      *slot_ += std::chrono::duration<double>(
                    std::chrono::steady_clock::now() - start_)
                    .count();
    }
  }

 private:
  double* slot_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace detail

inline Tensor pool_rows(const Tensor& h, Pooling mode,
                        const std::vector<int>& subset = {}) {
  if (!subset.empty()) {
    for (int i : subset) {
      if (i < 0 || i >= h.rows()) {
        throw ContractError("pool_restricted: row index out of range");
      }
    }
  } else if (h.rows() == 0) {
    throw ContractError("pool: empty input");
  }
  switch (mode) {
    case Pooling::Mean: return mean_rows(h, subset);
    case Pooling::Max: return max_rows(h, subset);
    case Pooling::Concat:
      throw ConfigError("concat pooling needs per-graph row sets");
  }
  throw ConfigError("unknown pooling");
}

// Stacks per-graph restricted pools into one 1 x (n*d) row.
inline Tensor concat_pool(const Tensor& h_meta,
                          const std::vector<std::vector<int>>& per_graph_rows,
                          Pooling inner = Pooling::Mean) {
  std::vector<Tensor> parts;
  parts.reserve(per_graph_rows.size());
  for (const auto& rows : per_graph_rows) {
    if (rows.empty()) throw ContractError("concat_pool: empty graph subset");
    parts.push_back(pool_rows(h_meta, inner, rows));
  }
  return hconcat(parts);
}

// Meta transformer over the assembled meta-graph.
inline Tensor meta_forward(const MetaGraph& meta, const Tensor& h0,
                           const EncoderConfig& cfg,
                           const EncoderParams& params,
                           bool mean_depth_fusion = false,
                           RandomStream* drop_rng = nullptr,
                           bool training = false) {
  if (meta.size() < 1) {
    throw ContractError("meta_forward: empty meta-graph");
  }
  std::vector<double> gamma =
      mean_depth_fusion
          ? std::vector<double>(cfg.layers, 1.0 / cfg.layers)
          : final_layer_weights(cfg.layers);
  auto out = encode(h0, meta.attention_support(), cfg, params, gamma, drop_rng,
                    training);
  return out.fused_h;
}

struct ForwardArtifacts {
  Tensor logits;  // 1 x C
  std::vector<EncoderOutput> encodings;
  std::vector<std::vector<int>> selections;  // per graph (meta path)
  MetaGraph meta;
  bool has_meta = false;
};

inline std::vector<double> depth_weights_for(const Model& m, int graph_index) {
  if (m.config.no_adaptive_depth) {
    return final_layer_weights(m.config.encoder.layers);
  }
  return m.depth.gamma[graph_index];
}

inline ForwardArtifacts forward_sample(const Model& m,
                                       const MultiGraphSample& sample,
                                       RandomStream* drop_rng = nullptr,
                                       bool training = false,
                                       StageTimes* times = nullptr) {
  const auto& cfg = m.config;
  if (static_cast<int>(sample.graphs.size()) != cfg.graphs_per_sample) {
    throw ContractError("sample has " + std::to_string(sample.graphs.size()) +
                        " graphs, model expects " +
                        std::to_string(cfg.graphs_per_sample));
  }
  ForwardArtifacts art;
  const int n = cfg.graphs_per_sample;

  std::vector<Tensor> features;
  std::vector<AttentionSupport> supports;
  {
    detail::ScopedStageTimer t(times ? &times->data_prep : nullptr);
    features.reserve(n);
    supports.reserve(n);
    for (const auto& g : sample.graphs) {
      features.push_back(feature_tensor(g));
      supports.push_back(AttentionSupport::from_graph(g));
    }
  }

  {
    detail::ScopedStageTimer t(times ? &times->encoders : nullptr);
    art.encodings.reserve(n);
    for (int i = 0; i < n; ++i) {
      const auto& enc_params =
          m.params.encoders[cfg.share_encoder_weights ? 0 : i];
      art.encodings.push_back(encode(features[i], supports[i], cfg.encoder,
                                     enc_params, depth_weights_for(m, i),
                                     drop_rng, training));
    }
  }

  if (cfg.late_fusion) {
    detail::ScopedStageTimer t(times ? &times->head : nullptr);
    std::vector<Tensor> logits;
    logits.reserve(n);
    for (int i = 0; i < n; ++i) {
      Tensor pooled = pool_rows(art.encodings[i].fused_h,
                                cfg.pooling == Pooling::Max ? Pooling::Max
                                                            : Pooling::Mean);
      logits.push_back(mlp_forward(pooled, m.params.late_mlps[i]));
    }
    Tensor stacked = vconcat(logits);
    if (cfg.learn_late_weights) {
      art.logits = matmul(softmax_rows(m.params.late_weight_logits), stacked);
    } else {
      std::vector<double> w = cfg.late_weights;
      if (w.empty()) w.assign(n, 1.0 / n);
      art.logits = matmul(Tensor::row(w), stacked);
    }
    return art;
  }

  std::vector<std::vector<int>> selections(n);
  {
    detail::ScopedStageTimer t(times ? &times->extraction : nullptr);
    for (int i = 0; i < n; ++i) {
      if (cfg.no_supernodes) {
        selections[i].resize(sample.graphs[i].node_count);
        for (int u = 0; u < sample.graphs[i].node_count; ++u) {
          selections[i][u] = u;
        }
      } else {
        selections[i] = select_supernodes(supernode_scores(art.encodings[i]),
                                          cfg.supernode_rule);
      }
    }
    std::vector<const EncoderOutput*> encs;
    std::vector<const Graph*> graphs;
    for (int i = 0; i < n; ++i) {
      encs.push_back(&art.encodings[i]);
      graphs.push_back(&sample.graphs[i]);
    }
    art.meta = assemble_meta_graph(encs, selections, graphs,
                                   cfg.superedge_rule,
                                   /*include_intra=*/!cfg.no_intra_edges,
                                   /*include_inter=*/!cfg.no_inter_edges);
    art.has_meta = true;
  }
  art.selections = selections;

  Tensor h_meta;
  {
    detail::ScopedStageTimer t(times ? &times->meta : nullptr);
    std::vector<Tensor> blocks;
    blocks.reserve(n);
    for (int i = 0; i < n; ++i) {
      blocks.push_back(gather_rows(art.encodings[i].fused_h, selections[i]));
    }
    Tensor h0 = blocks.size() == 1 ? blocks[0] : vconcat(blocks);
    h_meta = meta_forward(art.meta, h0, cfg.meta_encoder, m.params.meta,
                          cfg.meta_mean_depth_fusion, drop_rng, training);
  }

  {
    detail::ScopedStageTimer t(times ? &times->head : nullptr);
    Tensor pooled;
    if (cfg.pooling == Pooling::Concat) {
      std::vector<std::vector<int>> per_graph_rows(n);
      int row = 0;
      for (int i = 0; i < n; ++i) {
        for (size_t j = 0; j < selections[i].size(); ++j) {
          per_graph_rows[i].push_back(row++);
        }
      }
      pooled = concat_pool(h_meta, per_graph_rows);
    } else {
      pooled = pool_rows(h_meta, cfg.pooling);
    }
    art.logits = mlp_forward(pooled, m.params.mlp);
  }
  return art;
}

// Training loss: cross-entropy of the final logits plus the weighted sum of
// per-(graph, layer) probe losses.
inline Tensor sample_loss(const Model& m, const MultiGraphSample& sample,
                          const ForwardArtifacts& art, double aux_weight) {
  Tensor loss = cross_entropy(art.logits, {sample.label});
  if (!m.params.probes.empty() && aux_weight > 0.0) {
    Tensor aux;
    bool first = true;
    for (size_t i = 0; i < art.encodings.size(); ++i) {
      for (size_t l = 0; l < art.encodings[i].per_layer_h.size(); ++l) {
        Tensor probe_loss = cross_entropy(
            pooled_probe(art.encodings[i].per_layer_h[l],
                         m.params.probes[i][l]),
            {sample.label});
        aux = first ? probe_loss : add(aux, probe_loss);
        first = false;
      }
    }
    loss = add(loss, scale(aux, aux_weight));
  }
  return loss;
}

struct Prediction {
  std::vector<double> probabilities;
  std::vector<double> logits;
  MetaGraph meta;
  bool has_meta = false;
};

inline Prediction predict(const Model& m, const MultiGraphSample& sample,
                          StageTimes* times = nullptr) {
  NoGradGuard guard;
  auto art = forward_sample(m, sample, nullptr, false, times);
  Prediction p;
  p.logits.assign(art.logits.values().begin(), art.logits.values().end());
  Tensor probs = softmax_rows(art.logits);
  p.probabilities.assign(probs.values().begin(), probs.values().end());
  p.meta = std::move(art.meta);
  p.has_meta = art.has_meta;
  return p;
}

inline int predicted_class(const Prediction& p) {
  return argmax_class(p.probabilities);
}

// ---------------------------------------------------------------------------
// Checkpoint (single JSON document; 17-significant-digit decimals)
// ---------------------------------------------------------------------------

inline nlohmann::json encoder_config_to_json(const EncoderConfig& c) {
  return {{"layers", c.layers},
          {"heads", c.heads},
          {"dim", c.dim},
          {"ffn_hidden", c.ffn_hidden},
          {"activation", c.activation == Activation::ReLU ? "relu" : "identity"},
          {"dropout", c.dropout},
          {"topk", c.topk},
          {"block", c.block == BlockMode::Standard
                        ? "standard"
                        : (c.block == BlockMode::Conventional ? "conventional"
                                                              : "proof")}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.dim = j.at("dim").get<int>();
  c.ffn_hidden = j.value("ffn_hidden", 0);
  const std::string act = j.value("activation", "relu");
  c.activation = act == "identity" ? Activation::Identity : Activation::ReLU;
  c.dropout = j.value("dropout", 0.0);
  c.topk = j.value("topk", 0);
  const std::string block = j.value("block", "standard");
  c.block = block == "proof"
                ? BlockMode::Proof
                : (block == "conventional" ? BlockMode::Conventional
                                           : BlockMode::Standard);
  return c;
}

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["graphs_per_sample"] = c.graphs_per_sample;
  j["feature_dim"] = c.feature_dim;
  j["class_count"] = c.class_count;
  j["encoder"] = encoder_config_to_json(c.encoder);
  j["meta_encoder"] = encoder_config_to_json(c.meta_encoder);
  j["share_encoder_weights"] = c.share_encoder_weights;
  j["pooling"] = to_string(c.pooling);
  j["mlp_hidden"] = c.mlp_hidden;
  j["supernode_rule"] = {
      {"kind", c.supernode_rule.kind == SupernodeSelection::Kind::FixedThreshold
                   ? "fixed"
                   : "quantile"},
      {"value", c.supernode_rule.value}};
  j["superedge_rule"] = {
      {"kind", c.superedge_rule.kind == SuperedgeRule::Kind::FixedThreshold
                   ? "fixed"
                   : "quantile"},
      {"value", c.superedge_rule.value},
      {"metric", to_string(c.superedge_rule.metric)}};
  j["no_adaptive_depth"] = c.no_adaptive_depth;
  j["no_supernodes"] = c.no_supernodes;
  j["no_inter_edges"] = c.no_inter_edges;
  j["no_intra_edges"] = c.no_intra_edges;
  j["late_fusion"] = c.late_fusion;
  j["learn_late_weights"] = c.learn_late_weights;
  j["late_weights"] = c.late_weights;
  j["floor_gamma"] = c.floor_gamma;
  j["meta_mean_depth_fusion"] = c.meta_mean_depth_fusion;
  j["seed"] = c.seed;
  return j;
}

inline SimilarityMetric similarity_from_string(const std::string& s) {
  if (s == "cosine") return SimilarityMetric::Cosine;
  if (s == "pearson") return SimilarityMetric::Pearson;
  if (s == "euclidean") return SimilarityMetric::Euclidean;
  if (s == "dot") return SimilarityMetric::Dot;
  throw ConfigError("unknown similarity metric '" + s + "'");
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.graphs_per_sample = j.at("graphs_per_sample").get<int>();
  c.feature_dim = j.at("feature_dim").get<int>();
  c.class_count = j.at("class_count").get<int>();
  c.encoder = encoder_config_from_json(j.at("encoder"));
  c.meta_encoder = encoder_config_from_json(j.at("meta_encoder"));
  c.share_encoder_weights = j.value("share_encoder_weights", false);
  c.pooling = pooling_from_string(j.value("pooling", "mean"));
  c.mlp_hidden = j.value("mlp_hidden", 16);
  if (j.contains("supernode_rule")) {
    const auto& r = j["supernode_rule"];
    c.supernode_rule.kind = r.value("kind", "fixed") == std::string("quantile")
                                ? SupernodeSelection::Kind::Quantile
                                : SupernodeSelection::Kind::FixedThreshold;
    c.supernode_rule.value = r.value("value", 0.3);
  }
  if (j.contains("superedge_rule")) {
    const auto& r = j["superedge_rule"];
    c.superedge_rule.kind = r.value("kind", "fixed") == std::string("quantile")
                                ? SuperedgeRule::Kind::Quantile
                                : SuperedgeRule::Kind::FixedThreshold;
    c.superedge_rule.value = r.value("value", 0.4);
    c.superedge_rule.metric = similarity_from_string(r.value("metric", "cosine"));
  }
  c.no_adaptive_depth = j.value("no_adaptive_depth", false);
  c.no_supernodes = j.value("no_supernodes", false);
  c.no_inter_edges = j.value("no_inter_edges", false);
  c.no_intra_edges = j.value("no_intra_edges", false);
  c.late_fusion = j.value("late_fusion", false);
  c.learn_late_weights = j.value("learn_late_weights", false);
  c.late_weights = j.value("late_weights", std::vector<double>{});
  c.floor_gamma = j.value("floor_gamma", false);
  c.meta_mean_depth_fusion = j.value("meta_mean_depth_fusion", false);
  c.seed = j.value("seed", uint64_t{0});
  return c;
}

constexpr int kCheckpointSchemaVersion = 1;

inline std::string checkpoint_to_json(Model& m) {
  std::string out = "{\n";
  out += "\"schema_version\":" + std::to_string(kCheckpointSchemaVersion) + ",\n";
  out += "\"config\":" + model_config_to_json(m.config).dump() + ",\n";
  out += "\"depth_state\":{\"gamma\":[";
  for (size_t i = 0; i < m.depth.gamma.size(); ++i) {
    out += '[';
    for (size_t l = 0; l < m.depth.gamma[i].size(); ++l) {
      out += fmt_g17(m.depth.gamma[i][l]);
      if (l + 1 < m.depth.gamma[i].size()) out += ',';
    }
    out += ']';
    if (i + 1 < m.depth.gamma.size()) out += ',';
  }
  out += "],\"epsilon\":[";
  for (size_t i = 0; i < m.depth.epsilon.size(); ++i) {
    out += '[';
    for (size_t l = 0; l < m.depth.epsilon[i].size(); ++l) {
      out += fmt_g17(m.depth.epsilon[i][l]);
      if (l + 1 < m.depth.epsilon[i].size()) out += ',';
    }
    out += ']';
    if (i + 1 < m.depth.epsilon.size()) out += ',';
  }
  out += "]},\n\"params\":[\n";
  const auto named = collect_parameters(m);
  for (size_t p = 0; p < named.size(); ++p) {
    const auto& [name, t] = named[p];
    out += "{\"name\":\"" + name + "\",\"rows\":" + std::to_string(t.rows()) +
           ",\"cols\":" + std::to_string(t.cols()) + ",\"values\":[";
    auto v = t.values();
    for (size_t i = 0; i < v.size(); ++i) {
      out += fmt_g17(v[i]);
      if (i + 1 < v.size()) out += ',';
    }
    out += "]}";
    if (p + 1 < named.size()) out += ',';
    out += '\n';
  }
  out += "]}\n";
  return out;
}

inline void save_checkpoint(Model& m, const std::filesystem::path& path) {
  write_text_file(path, checkpoint_to_json(m));
}

inline Model checkpoint_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("checkpoint JSON: ") + e.what());
  }
  if (doc.value("schema_version", -1) != kCheckpointSchemaVersion) {
    throw VersionError("unsupported checkpoint schema version");
  }
  Model m = init_model(model_config_from_json(doc.at("config")));
  m.depth.gamma =
      doc.at("depth_state").at("gamma").get<std::vector<std::vector<double>>>();
  m.depth.epsilon = doc.at("depth_state")
                        .at("epsilon")
                        .get<std::vector<std::vector<double>>>();
  auto named = collect_parameters(m);
  const auto& params = doc.at("params");
  if (params.size() != named.size()) {
    throw ParseError("checkpoint parameter count mismatch: file has " +
                     std::to_string(params.size()) + ", model expects " +
                     std::to_string(named.size()));
  }
  for (size_t p = 0; p < named.size(); ++p) {
    const auto& pj = params[p];
    if (pj.at("name").get<std::string>() != named[p].first) {
      throw ParseError("checkpoint parameter order mismatch at '" +
                       pj.at("name").get<std::string>() + "'");
    }
    const auto values = pj.at("values").get<std::vector<double>>();
    Tensor& t = named[p].second;
    if (values.size() != t.size()) {
      throw ParseError("checkpoint parameter size mismatch at '" +
                       named[p].first + "'");
    }
    std::copy(values.begin(), values.end(), t.mutable_values().begin());
  }
  return m;
}

inline Model load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(read_text_file(path));
}

}  // namespace mgf
