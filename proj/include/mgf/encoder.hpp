#pragma once

// Graph-specific transformer encoder. Attention is localized: each node
// attends over its 1-hop neighborhood plus itself, computed sparsely over an
// edge pair list. The block follows the printed order
//   H = LayerNorm(Z + act(FFN(Z)))
// with a conventional variant and a proof mode (H = act(FFN(Z)), residual and
// normalization removed) used by the theory checks. Per-layer embeddings and
// head-averaged attention maps are recorded and fused with depth weights.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mgf/errors.hpp"
#include "mgf/graph.hpp"
#include "mgf/rng.hpp"
#include "mgf/tensor.hpp"

namespace mgf {

enum class Activation { ReLU, Identity };

inline Tensor activate(const Tensor& x, Activation a) {
  return a == Activation::ReLU ? relu(x) : x;
}

enum class BlockMode {
  Standard,      // LayerNorm(Z + act(FFN(Z)))
  Conventional,  // LayerNorm(Z + FFN(Z))
  Proof,         // act(FFN(Z)); no residual, no normalization
};

struct EncoderConfig {
  int layers = 2;  // L
  int heads = 2;   // M
  int dim = 0;     // d; per-head dim is dim / heads
  int ffn_hidden = 0;  // 0 means dim
  Activation activation = Activation::ReLU;
  double dropout = 0.0;
  int topk = 0;  // 0 = dense; otherwise keep k largest-magnitude neighbors
  BlockMode block = BlockMode::Standard;

  int head_dim() const { return dim / heads; }
  int ffn_dim() const { return ffn_hidden > 0 ? ffn_hidden : dim; }

  void validate() const {
    if (layers < 1) throw ConfigError("encoder needs at least one layer");
    if (heads < 1) throw ConfigError("encoder needs at least one head");
    if (dim < 1) throw ConfigError("encoder dim must be positive");
    if (dim % heads != 0) {
      throw ConfigError("encoder dim " + std::to_string(dim) +
                        " not divisible by head count " +
                        std::to_string(heads));
    }
    if (topk < 0) throw ConfigError("topk must be >= 1 when enabled");
    if (dropout < 0.0 || dropout >= 1.0) {
      throw ConfigError("dropout must be in [0, 1)");
    }
  }
};

// ---------------------------------------------------------------------------
// Attention support: pair list over edges plus self-loops
// ---------------------------------------------------------------------------

struct AttentionSupport {
  int nodes = 0;
  std::vector<int> src;      // sorted by (src, dst)
  std::vector<int> dst;
  std::vector<int> offsets;  // nodes + 1 segment delimiters

  int pairs() const { return static_cast<int>(src.size()); }

  static AttentionSupport from_adjacency(
      const std::vector<std::vector<int>>& adj) {
    AttentionSupport s;
    s.nodes = static_cast<int>(adj.size());
    s.offsets.reserve(s.nodes + 1);
    s.offsets.push_back(0);
    for (int u = 0; u < s.nodes; ++u) {
      std::vector<int> support = adj[u];
      support.push_back(u);
      std::sort(support.begin(), support.end());
      for (int v : support) {
        s.src.push_back(u);
        s.dst.push_back(v);
      }
      s.offsets.push_back(static_cast<int>(s.src.size()));
    }
    return s;
  }

  static AttentionSupport from_graph(const Graph& g) {
    return from_adjacency(adjacency_lists(g));
  }

  // Index of pair (u, v) in the list, or -1 when v is not in u's support.
  int pair_index(int u, int v) const {
    for (int p = offsets[u]; p < offsets[u + 1]; ++p) {
      if (dst[p] == v) return p;
    }
    return -1;
  }
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct HeadParams {
  Tensor wq, bq, wk, bk, wv, bv;  // wq: d x d', bq: 1 x d'
};

struct LayerParams {
  std::vector<HeadParams> heads;
  Tensor wo, bo;  // d x d, 1 x d
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Tensor ln_gain, ln_bias;
};

struct EncoderParams {
  std::vector<LayerParams> layers;
};

using NamedTensor = std::pair<std::string, Tensor>;

inline void collect_layer_params(LayerParams& lp, const std::string& prefix,
                                 std::vector<NamedTensor>* out) {
  for (size_t m = 0; m < lp.heads.size(); ++m) {
    const std::string hp = prefix + ".h" + std::to_string(m);
    out->push_back({hp + ".wq", lp.heads[m].wq});
    out->push_back({hp + ".bq", lp.heads[m].bq});
    out->push_back({hp + ".wk", lp.heads[m].wk});
    out->push_back({hp + ".bk", lp.heads[m].bk});
    out->push_back({hp + ".wv", lp.heads[m].wv});
    out->push_back({hp + ".bv", lp.heads[m].bv});
  }
  out->push_back({prefix + ".wo", lp.wo});
  out->push_back({prefix + ".bo", lp.bo});
  out->push_back({prefix + ".ffn_w1", lp.ffn_w1});
  out->push_back({prefix + ".ffn_b1", lp.ffn_b1});
  out->push_back({prefix + ".ffn_w2", lp.ffn_w2});
  out->push_back({prefix + ".ffn_b2", lp.ffn_b2});
  out->push_back({prefix + ".ln_gain", lp.ln_gain});
  out->push_back({prefix + ".ln_bias", lp.ln_bias});
}

inline void collect_encoder_params(EncoderParams& p, const std::string& prefix,
                                   std::vector<NamedTensor>* out) {
  for (size_t l = 0; l < p.layers.size(); ++l) {
    collect_layer_params(p.layers[l], prefix + ".l" + std::to_string(l), out);
  }
}

// Projections initialized uniform(-1/sqrt(d), 1/sqrt(d)), biases zero,
// LayerNorm at identity.
inline LayerParams init_layer_params(const EncoderConfig& cfg,
                                     RandomStream& rng) {
  const int d = cfg.dim, dh = cfg.head_dim(), dff = cfg.ffn_dim();
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  LayerParams lp;
  lp.heads.resize(cfg.heads);
  for (auto& h : lp.heads) {
    h.wq = Tensor::randu(d, dh, rng, -bound, bound, true);
    h.bq = Tensor::zeros(1, dh, true);
    h.wk = Tensor::randu(d, dh, rng, -bound, bound, true);
    h.bk = Tensor::zeros(1, dh, true);
    h.wv = Tensor::randu(d, dh, rng, -bound, bound, true);
    h.bv = Tensor::zeros(1, dh, true);
  }
  lp.wo = Tensor::randu(d, d, rng, -bound, bound, true);
  lp.bo = Tensor::zeros(1, d, true);
  lp.ffn_w1 = Tensor::randu(d, dff, rng, -bound, bound, true);
  lp.ffn_b1 = Tensor::zeros(1, dff, true);
  lp.ffn_w2 = Tensor::randu(dff, d, rng, -bound, bound, true);
  lp.ffn_b2 = Tensor::zeros(1, d, true);
  lp.ln_gain = Tensor::full(1, d, 1.0, true);
  lp.ln_bias = Tensor::zeros(1, d, true);
  return lp;
}

inline EncoderParams init_encoder_params(const EncoderConfig& cfg,
                                         RandomStream& rng) {
  cfg.validate();
  EncoderParams p;
  p.layers.reserve(cfg.layers);
  for (int l = 0; l < cfg.layers; ++l) {
    p.layers.push_back(init_layer_params(cfg, rng));
  }
  return p;
}

// Parameters of the constructive L-hop argument: zero query/key maps,
// identity value/output/FFN maps, zero biases. Single head, ffn_hidden = dim,
// Proof block mode.
inline EncoderParams theorem_encoder_params(const EncoderConfig& cfg) {
  if (cfg.heads != 1 || cfg.ffn_dim() != cfg.dim ||
      cfg.block != BlockMode::Proof) {
    throw ConfigError(
        "theorem parameters need a single head, ffn_hidden == dim and proof "
        "block mode");
  }
  const int d = cfg.dim;
  EncoderParams p;
  for (int l = 0; l < cfg.layers; ++l) {
    LayerParams lp;
    HeadParams h;
    h.wq = Tensor::zeros(d, d, true);
    h.bq = Tensor::zeros(1, d, true);
    h.wk = Tensor::zeros(d, d, true);
    h.bk = Tensor::zeros(1, d, true);
    h.wv = Tensor::identity(d, true);
    h.bv = Tensor::zeros(1, d, true);
    lp.heads.push_back(h);
    lp.wo = Tensor::identity(d, true);
    lp.bo = Tensor::zeros(1, d, true);
    lp.ffn_w1 = Tensor::identity(d, true);
    lp.ffn_b1 = Tensor::zeros(1, d, true);
    lp.ffn_w2 = Tensor::identity(d, true);
    lp.ffn_b2 = Tensor::zeros(1, d, true);
    lp.ln_gain = Tensor::full(1, d, 1.0, true);
    lp.ln_bias = Tensor::zeros(1, d, true);
    p.layers.push_back(std::move(lp));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Top-k sparsification
// ---------------------------------------------------------------------------

// Keeps the self-loop unconditionally plus the k largest-magnitude neighbor
// scores of one node's support segment. Ties break by (score desc, neighbor
// index asc). Returns kept local indices sorted ascending.
inline std::vector<int> topk_sparsify(std::span<const double> scores,
                                      std::span<const int> dst, int self_node,
                                      int k) {
  if (k < 1) throw ConfigError("topk_sparsify: k must be >= 1");
  if (scores.size() != dst.size()) {
    throw DimensionError("topk_sparsify: scores/dst length mismatch");
  }
  std::vector<int> neighbors;
  int self_idx = -1;
  for (size_t i = 0; i < dst.size(); ++i) {
    if (dst[i] == self_node) {
      self_idx = static_cast<int>(i);
    } else {
      neighbors.push_back(static_cast<int>(i));
    }
  }
  if (self_idx < 0) {
    throw ContractError("topk_sparsify: support segment misses the self-loop");
  }
  std::sort(neighbors.begin(), neighbors.end(), [&](int a, int b) {
    const double ma = std::abs(scores[a]), mb = std::abs(scores[b]);
    if (ma != mb) return ma > mb;
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return dst[a] < dst[b];
  });
  if (static_cast<int>(neighbors.size()) > k) neighbors.resize(k);
  neighbors.push_back(self_idx);
  std::sort(neighbors.begin(), neighbors.end());
  return neighbors;
}

// ---------------------------------------------------------------------------
// Layer forward
// ---------------------------------------------------------------------------

struct AttentionLayerResult {
  Tensor z;  // N x d, after the output projection
  std::vector<std::vector<double>> head_attn;  // heads x pairs (full support)
};

inline AttentionLayerResult attention_layer(const Tensor& h_prev,
                                            const AttentionSupport& sup,
                                            const LayerParams& lp,
                                            const EncoderConfig& cfg,
                                            int layer_index,
                                            RandomStream* drop_rng = nullptr,
                                            bool training = false) {
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
  std::vector<Tensor> head_outputs;
  AttentionLayerResult res;
  head_outputs.reserve(lp.heads.size());
  res.head_attn.resize(lp.heads.size());

  for (size_t m = 0; m < lp.heads.size(); ++m) {
    const auto& hp = lp.heads[m];
    Tensor q = add_rowvec(matmul(h_prev, hp.wq), hp.bq);
    Tensor k = add_rowvec(matmul(h_prev, hp.wk), hp.bk);
    Tensor v = add_rowvec(matmul(h_prev, hp.wv), hp.bv);
    Tensor scores =
        scale(row_dot(gather_rows(q, sup.src), gather_rows(k, sup.dst)),
              inv_sqrt_dh);
    for (double s : scores.values()) {
      if (!std::isfinite(s)) {
        throw NumericError("non-finite attention score at layer " +
                           std::to_string(layer_index) + " head " +
                           std::to_string(m));
      }
    }

    Tensor alpha;
    std::vector<double> full_attn(sup.pairs(), 0.0);
    if (cfg.topk > 0) {
      // Reduce each segment to self + k largest-magnitude neighbors, then
      // softmax over the reduced support.
      std::vector<int> kept;
      std::vector<int> kept_src, kept_dst, kept_offsets{0};
      auto sv = scores.values();
      for (int u = 0; u < sup.nodes; ++u) {
        const int lo = sup.offsets[u], hi = sup.offsets[u + 1];
        auto local = topk_sparsify(
            std::span<const double>(sv.data() + lo, hi - lo),
            std::span<const int>(sup.dst.data() + lo, hi - lo), u, cfg.topk);
        for (int i : local) {
          kept.push_back(lo + i);
          kept_src.push_back(u);
          kept_dst.push_back(sup.dst[lo + i]);
        }
        kept_offsets.push_back(static_cast<int>(kept.size()));
      }
      alpha = segment_softmax(gather_rows(scores, kept), kept_offsets);
      // Exported maps are the softmax weights; dropout only perturbs the
      // value aggregation during training.
      auto av = alpha.values();
      for (size_t i = 0; i < kept.size(); ++i) full_attn[kept[i]] = av[i];
      if (training && drop_rng && cfg.dropout > 0.0) {
        alpha = dropout(alpha, cfg.dropout, *drop_rng, true);
      }
      head_outputs.push_back(segment_weighted_rows(alpha, v, kept_src,
                                                   kept_dst, sup.nodes));
    } else {
      alpha = segment_softmax(scores, sup.offsets);
      auto av = alpha.values();
      std::copy(av.begin(), av.end(), full_attn.begin());
      if (training && drop_rng && cfg.dropout > 0.0) {
        alpha = dropout(alpha, cfg.dropout, *drop_rng, true);
      }
      head_outputs.push_back(
          segment_weighted_rows(alpha, v, sup.src, sup.dst, sup.nodes));
    }
    res.head_attn[m] = std::move(full_attn);
  }

  Tensor concat = head_outputs.size() == 1 ? head_outputs[0]
                                           : hconcat(head_outputs);
  res.z = add_rowvec(matmul(concat, lp.wo), lp.bo);
  return res;
}

// Feed-forward block in the configured order.
inline Tensor ffn_block(const Tensor& z, const LayerParams& lp,
                        const EncoderConfig& cfg,
                        RandomStream* drop_rng = nullptr,
                        bool training = false) {
  Tensor hidden = activate(add_rowvec(matmul(z, lp.ffn_w1), lp.ffn_b1),
                           cfg.activation);
  if (training && drop_rng && cfg.dropout > 0.0) {
    hidden = dropout(hidden, cfg.dropout, *drop_rng, true);
  }
  Tensor ffn_out = add_rowvec(matmul(hidden, lp.ffn_w2), lp.ffn_b2);
  switch (cfg.block) {
    case BlockMode::Standard:
      return layer_norm(add(z, activate(ffn_out, cfg.activation)), lp.ln_gain,
                        lp.ln_bias);
    case BlockMode::Conventional:
      return layer_norm(add(z, ffn_out), lp.ln_gain, lp.ln_bias);
    case BlockMode::Proof:
      return activate(ffn_out, cfg.activation);
  }
  throw ConfigError("unknown block mode");
}

// ---------------------------------------------------------------------------
// Full encoder
// ---------------------------------------------------------------------------

struct EncoderOutput {
  std::vector<Tensor> per_layer_h;                  // L x (N x d)
  std::vector<std::vector<double>> per_layer_attn;  // L x pairs, head-averaged
  Tensor fused_h;                                   // N x d
  std::vector<double> fused_attn;                   // pairs
  AttentionSupport support;
};

// Runs L layers and fuses per-layer embeddings and head-averaged attention
// maps with the depth weights.
inline EncoderOutput encode(const Tensor& features, const AttentionSupport& sup,
                            const EncoderConfig& cfg,
                            const EncoderParams& params,
                            std::span<const double> depth_weights,
                            RandomStream* drop_rng = nullptr,
                            bool training = false) {
  if (static_cast<int>(depth_weights.size()) != cfg.layers) {
    throw ConfigError("depth weight vector length " +
                      std::to_string(depth_weights.size()) +
                      " does not match layer count " +
                      std::to_string(cfg.layers));
  }
  if (static_cast<int>(params.layers.size()) != cfg.layers) {
    throw ConfigError("encoder parameter count does not match layer count");
  }
  EncoderOutput out;
  out.support = sup;
  out.per_layer_h.reserve(cfg.layers);
  out.per_layer_attn.reserve(cfg.layers);

  Tensor h = features;
  for (int l = 0; l < cfg.layers; ++l) {
    auto attn = attention_layer(h, sup, params.layers[l], cfg, l, drop_rng,
                                training);
    h = ffn_block(attn.z, params.layers[l], cfg, drop_rng, training);
    out.per_layer_h.push_back(h);
    std::vector<double> avg(sup.pairs(), 0.0);
    const double inv_m = 1.0 / static_cast<double>(cfg.heads);
    for (const auto& head : attn.head_attn) {
      for (int p = 0; p < sup.pairs(); ++p) avg[p] += head[p] * inv_m;
    }
    out.per_layer_attn.push_back(std::move(avg));
  }

  Tensor fused = scale(out.per_layer_h[0], depth_weights[0]);
  for (int l = 1; l < cfg.layers; ++l) {
    fused = add(fused, scale(out.per_layer_h[l], depth_weights[l]));
  }
  out.fused_h = fused;
  out.fused_attn.assign(sup.pairs(), 0.0);
  for (int l = 0; l < cfg.layers; ++l) {
    for (int p = 0; p < sup.pairs(); ++p) {
      out.fused_attn[p] += depth_weights[l] * out.per_layer_attn[l][p];
    }
  }
  return out;
}

// Final-layer-only depth weights (the ablation without adaptive depth).
inline std::vector<double> final_layer_weights(int layers) {
  std::vector<double> g(layers, 0.0);
  g.back() = 1.0;
  return g;
}

inline Tensor feature_tensor(const Graph& g) {
  return Tensor::leaf(g.node_count, g.feature_dim, g.features);
}

}  // namespace mgf
