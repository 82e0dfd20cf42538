#pragma once

// Boosting-style layer confidence. Per (graph index, layer), a lightweight
// probe classifies mean-pooled layer embeddings; its weighted training error
// eps yields the confidence Gamma = 0.5 log((1-eps)/eps), and sample weights
// beta are re-normalized between layers to emphasize misclassified samples.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mgf/errors.hpp"
#include "mgf/tensor.hpp"

namespace mgf {

constexpr double kErrorClipLo = 1e-3;
constexpr double kErrorClipHi = 1.0 - 1e-3;

struct ProbeParams {
  Tensor w;  // d x classes
  Tensor b;  // 1 x classes
};

inline ProbeParams init_probe_params(int dim, int classes, RandomStream& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  return {Tensor::randu(dim, classes, rng, -bound, bound, true),
          Tensor::zeros(1, classes, true)};
}

// Mean-pool node embeddings, then apply the probe's affine map.
inline Tensor pooled_probe(const Tensor& h, const ProbeParams& probe) {
  return add_rowvec(matmul(mean_rows(h), probe.w), probe.b);
}

// Argmax with ties broken by the lowest class index.
inline int argmax_class(std::span<const double> logits) {
  int best = 0;
  for (size_t j = 1; j < logits.size(); ++j) {
    if (logits[j] > logits[best]) best = static_cast<int>(j);
  }
  return best;
}

// Beta-weighted misclassification rate, clipped away from {0, 1} so the
// confidence stays finite.
inline double layer_error(const std::vector<int>& predictions,
                          const std::vector<int>& labels,
                          const std::vector<double>& beta) {
  if (predictions.empty() || predictions.size() != labels.size() ||
      predictions.size() != beta.size()) {
    throw ContractError("layer_error: needs matching non-empty samples");
  }
  double num = 0.0, den = 0.0;
  for (size_t k = 0; k < predictions.size(); ++k) {
    if (predictions[k] != labels[k]) num += beta[k];
    den += beta[k];
  }
  if (den <= 0.0) throw ContractError("layer_error: zero total weight");
  return std::clamp(num / den, kErrorClipLo, kErrorClipHi);
}

inline double confidence(double eps) {
  return 0.5 * std::log((1.0 - eps) / eps);
}

// beta' proportional to beta * exp(1{wrong} * gamma), renormalized to sum 1.
inline std::vector<double> update_weights(const std::vector<double>& beta,
                                          const std::vector<uint8_t>& wrong,
                                          double gamma) {
  if (beta.size() != wrong.size()) {
    throw ContractError("update_weights: beta/wrong length mismatch");
  }
  std::vector<double> next(beta.size());
  double sum = 0.0;
  for (size_t k = 0; k < beta.size(); ++k) {
    next[k] = beta[k] * (wrong[k] ? std::exp(gamma) : 1.0);
    sum += next[k];
  }
  if (!(sum > 0.0) || !std::isfinite(sum)) {
    throw ContractError("update_weights: degenerate weight sum");
  }
  for (auto& b : next) b /= sum;
  return next;
}

struct DepthState {
  // Indexed [graph][layer].
  std::vector<std::vector<double>> gamma;
  std::vector<std::vector<double>> epsilon;

  int graphs() const { return static_cast<int>(gamma.size()); }
  int layers() const { return gamma.empty() ? 0 : static_cast<int>(gamma[0].size()); }

  static DepthState uniform(int graphs, int layers, double value = 1.0) {
    DepthState s;
    s.gamma.assign(graphs, std::vector<double>(layers, value));
    s.epsilon.assign(graphs, std::vector<double>(layers, 0.5));
    return s;
  }
};

// Sequential boosting recursion over layers for one graph index.
// predictions[l][k] is the probe's predicted class for layer l, sample k.
struct GraphDepthResult {
  std::vector<double> gamma;
  std::vector<double> epsilon;
  std::vector<double> final_beta;
};

inline GraphDepthResult depth_weights_for_graph(
    const std::vector<std::vector<int>>& predictions,
    const std::vector<int>& labels, bool floor_gamma_at_zero = false) {
  if (predictions.empty()) {
    throw ContractError("depth_weights_for_graph: no layers");
  }
  const size_t k_count = labels.size();
  if (k_count == 0) throw ContractError("depth_weights_for_graph: no samples");
  GraphDepthResult res;
  std::vector<double> beta(k_count, 1.0 / static_cast<double>(k_count));
  for (const auto& layer_preds : predictions) {
    const double eps = layer_error(layer_preds, labels, beta);
    const double g = confidence(eps);
    res.epsilon.push_back(eps);
    res.gamma.push_back(floor_gamma_at_zero ? std::max(g, 0.0) : g);
    std::vector<uint8_t> wrong(k_count);
    for (size_t k = 0; k < k_count; ++k) {
      wrong[k] = layer_preds[k] != labels[k] ? 1 : 0;
    }
    beta = update_weights(beta, wrong, g);
  }
  res.final_beta = std::move(beta);
  return res;
}

// Full depth-state computation from probe predictions for every
// (graph index, layer, sample).
inline DepthState compute_depth_weights(
    const std::vector<std::vector<std::vector<int>>>& predictions,
    const std::vector<int>& labels, bool floor_gamma_at_zero = false) {
  DepthState state;
  state.gamma.reserve(predictions.size());
  state.epsilon.reserve(predictions.size());
  for (const auto& graph_preds : predictions) {
    auto r = depth_weights_for_graph(graph_preds, labels, floor_gamma_at_zero);
    state.gamma.push_back(std::move(r.gamma));
    state.epsilon.push_back(std::move(r.epsilon));
  }
  return state;
}

}  // namespace mgf
