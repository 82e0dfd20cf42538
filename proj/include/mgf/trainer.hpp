#pragma once

// Optimization loop with Adam, per-epoch depth-weight recomputation on the
// training split, early stopping on validation loss with best-parameter
// restore, evaluation metrics, uniform random hyperparameter search and the
// repeated-trial driver.

#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "mgf/graph.hpp"
#include "mgf/model.hpp"

namespace mgf {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 0;  // 0 = full batch up to 256 samples, else 32
  double lr = 3e-3;
  int patience = 10;
  double aux_weight = 0.1;  // probe auxiliary loss weight
  uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (!(lr > 0.0) && lr != 0.0) throw ConfigError("learning rate must be >= 0");
    if (batch_size < 0) throw ConfigError("batch size must be >= 0");
  }

  int effective_batch(size_t train_size) const {
    if (batch_size > 0) return batch_size;
    return train_size <= 256 ? static_cast<int>(train_size) : 32;
  }
};

struct EpochStats {
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  // gamma_trace[epoch][graph][layer]
  std::vector<std::vector<std::vector<double>>> gamma_trace;
  int best_epoch = 0;  // 1-based, matches epochs[best_epoch-1]
  double best_val_loss = 0.0;
  StageTimes stage_seconds;
  double total_seconds = 0.0;
  std::optional<double> test_accuracy;
};

struct Evaluation {
  double accuracy = 0.0;
  double mean_loss = 0.0;
  std::vector<std::vector<int>> confusion;  // [true][predicted]
};

inline Evaluation evaluate(const Model& m,
                           std::span<const MultiGraphSample> samples) {
  if (samples.empty()) throw ContractError("evaluate: empty sample set");
  Evaluation ev;
  ev.confusion.assign(m.config.class_count,
                      std::vector<int>(m.config.class_count, 0));
  int correct = 0;
  double loss = 0.0;
  for (const auto& s : samples) {
    const auto p = predict(m, s);
    const int yhat = predicted_class(p);
    if (yhat == s.label) correct++;
    ev.confusion[s.label][yhat] += 1;
    loss -= std::log(std::max(p.probabilities[s.label], 1e-300));
  }
  ev.accuracy = static_cast<double>(correct) / samples.size();
  ev.mean_loss = loss / samples.size();
  return ev;
}

// Probe predictions for every (graph index, layer, sample); used for the
// per-epoch depth-weight recomputation.
inline std::vector<std::vector<std::vector<int>>> probe_predictions(
    const Model& m, std::span<const MultiGraphSample> samples,
    StageTimes* times = nullptr) {
  NoGradGuard guard;
  const int n = m.config.graphs_per_sample;
  const int layers = m.config.encoder.layers;
  std::vector<std::vector<std::vector<int>>> preds(
      n, std::vector<std::vector<int>>(layers,
                                       std::vector<int>(samples.size(), 0)));
  const auto gamma = final_layer_weights(layers);  // fusion not needed here
  for (size_t k = 0; k < samples.size(); ++k) {
    for (int i = 0; i < n; ++i) {
      const Graph& g = samples[k].graphs[i];
      EncoderOutput enc;
      {
        detail::ScopedStageTimer t(times ? &times->encoders : nullptr);
        enc = encode(feature_tensor(g), AttentionSupport::from_graph(g),
                     m.config.encoder,
                     m.params.encoders[m.config.share_encoder_weights ? 0 : i],
                     gamma);
      }
      detail::ScopedStageTimer t(times ? &times->head : nullptr);
      for (int l = 0; l < layers; ++l) {
        Tensor logits =
            pooled_probe(enc.per_layer_h[l], m.params.probes[i][l]);
        preds[i][l][k] = argmax_class(logits.values());
      }
    }
  }
  return preds;
}

namespace detail {

struct ParamSnapshot {
  std::vector<std::vector<double>> values;
  DepthState depth;
};

inline ParamSnapshot snapshot(Model& m, const std::vector<Tensor>& params) {
  ParamSnapshot s;
  s.values.reserve(params.size());
  for (const auto& p : params) {
    s.values.emplace_back(p.values().begin(), p.values().end());
  }
  s.depth = m.depth;
  return s;
}

inline void restore(Model& m, std::vector<Tensor>& params,
                    const ParamSnapshot& s) {
  for (size_t i = 0; i < params.size(); ++i) {
    std::copy(s.values[i].begin(), s.values[i].end(),
              params[i].mutable_values().begin());
  }
  m.depth = s.depth;
}

}  // namespace detail

// Minimizes cross-entropy plus the weighted probe losses with Adam. Depth
// weights are recomputed on the training split at the start of each epoch
// and kept fixed within it. Stops when validation loss has not improved for
// `patience` epochs and restores the best-validation snapshot.
inline TrainReport train(Model& m, const Dataset& train_set,
                         const Dataset& val_set, const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.samples.empty() || val_set.samples.empty()) {
    throw ContractError("train: empty split");
  }
  const auto t_start = std::chrono::steady_clock::now();
  TrainReport report;

  std::vector<Tensor> params = parameter_tensors(m);
  AdamState adam;
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;

  std::vector<int> labels;
  for (const auto& s : train_set.samples) labels.push_back(s.label);

  RandomStream order_rng(mix_seed(cfg.seed, 0x0bafful));
  detail::ParamSnapshot best;
  double best_val = std::numeric_limits<double>::infinity();
  int stale = 0;

  const int batch = cfg.effective_batch(train_set.samples.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Depth weights from the current probes, frozen for this epoch.
    if (!m.params.probes.empty()) {
      auto preds =
          probe_predictions(m, train_set.samples, &report.stage_seconds);
      m.depth = compute_depth_weights(preds, labels, m.config.floor_gamma);
    }
    report.gamma_trace.push_back(m.depth.gamma);

    std::vector<int> order(train_set.samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    order_rng.shuffle(order);

    RandomStream drop_rng(mix_seed(cfg.seed, 0xd0ul + epoch));
    double epoch_loss = 0.0;
    int epoch_correct = 0;
    for (size_t start = 0; start < order.size(); start += batch) {
      const size_t stop = std::min(order.size(), start + batch);
      const double inv = 1.0 / static_cast<double>(stop - start);
      zero_grad(params);
      for (size_t pos = start; pos < stop; ++pos) {
        const auto& sample = train_set.samples[order[pos]];
        auto art = forward_sample(m, sample, &drop_rng, /*training=*/true,
                                  &report.stage_seconds);
        detail::ScopedStageTimer t(&report.stage_seconds.head);
        Tensor loss = sample_loss(m, sample, art, cfg.aux_weight);
        const double value = loss.item();
        if (!std::isfinite(value)) {
          throw TrainingError("training loss diverged at epoch " +
                              std::to_string(epoch + 1));
        }
        epoch_loss += value;
        if (argmax_class(art.logits.values()) == sample.label) epoch_correct++;
        backward(loss, inv);
      }
      detail::ScopedStageTimer t(&report.stage_seconds.head);
      adam_step(params, adam, adam_cfg);
    }

    EpochStats stats;
    stats.train_loss = epoch_loss / train_set.samples.size();
    stats.train_accuracy =
        static_cast<double>(epoch_correct) / train_set.samples.size();
    const auto val = evaluate(m, val_set.samples);
    stats.val_loss = val.mean_loss;
    stats.val_accuracy = val.accuracy;
    report.epochs.push_back(stats);

    if (stats.val_loss < best_val) {
      best_val = stats.val_loss;
      best = detail::snapshot(m, params);
      report.best_epoch = epoch + 1;
      stale = 0;
    } else {
      stale += 1;
      if (stale >= cfg.patience) break;
    }
  }

  if (report.best_epoch > 0) {
    detail::restore(m, params, best);
  }
  report.best_val_loss = best_val;
  report.total_seconds = std::chrono::duration<double>(
                             std::chrono::steady_clock::now() - t_start)
                             .count();
  return report;
}

// ---------------------------------------------------------------------------
// Random hyperparameter search
// ---------------------------------------------------------------------------

struct SearchSpace {
  std::vector<int> layers = {1, 2, 3, 4};
  std::vector<int> meta_layers = {1, 2};
  std::vector<int> heads = {1, 2, 4};
  double lr_lo = 1e-4, lr_hi = 1e-2;
  double dropout_lo = 0.0, dropout_hi = 0.5;
  double tau_lo = 0.1, tau_hi = 0.7;
  double gamma_lo = 0.1, gamma_hi = 0.8;
};

struct SearchTrial {
  int index = 0;
  int layers = 0;
  int meta_layers = 0;
  int heads = 0;
  double lr = 0.0;
  double dropout = 0.0;
  double tau = 0.0;
  double gamma = 0.0;
  double val_accuracy = 0.0;
  double val_loss = 0.0;
};

struct SearchResult {
  std::vector<SearchTrial> leaderboard;  // sorted by val accuracy desc
  SearchTrial best;
  ModelConfig best_config;
  TrainConfig best_train;
};

// Runs trials[begin, end) of `total` through `fn` on `threads` workers;
// results land in a vector indexed by trial, so the outcome is independent
// of the thread count.
template <typename Fn>
void run_indexed_parallel(int total, int threads, Fn&& fn) {
  if (threads <= 1 || total <= 1) {
    for (int i = 0; i < total; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next.fetch_add(1); i < total; i = next.fetch_add(1)) fn(i);
  };
  std::vector<std::thread> pool;
  const int n = std::min(threads, total);
  pool.reserve(n);
  for (int t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

inline SearchResult random_search(const ModelConfig& base_model,
                                  const TrainConfig& base_train,
                                  const SearchSpace& space, int budget,
                                  const Dataset& train_set,
                                  const Dataset& val_set, uint64_t seed,
                                  int threads = 1) {
  if (budget < 1) throw ConfigError("search budget must be >= 1");
  // Head choices must divide the model width.
  std::vector<int> heads;
  for (int h : space.heads) {
    if (base_model.feature_dim % h == 0) heads.push_back(h);
  }
  if (heads.empty()) heads.push_back(1);

  std::vector<SearchTrial> trials(budget);
  std::vector<ModelConfig> configs(budget);
  std::vector<TrainConfig> train_cfgs(budget);
  RandomStream master(seed);
  for (int t = 0; t < budget; ++t) {
    RandomStream rng = master.substream(static_cast<uint64_t>(t));
    SearchTrial s;
    s.index = t;
    s.layers = space.layers[rng.index(static_cast<int>(space.layers.size()))];
    s.meta_layers =
        space.meta_layers[rng.index(static_cast<int>(space.meta_layers.size()))];
    s.heads = heads[rng.index(static_cast<int>(heads.size()))];
    s.lr = rng.log_uniform(space.lr_lo, space.lr_hi);
    s.dropout = rng.uniform(space.dropout_lo, space.dropout_hi);
    s.tau = rng.uniform(space.tau_lo, space.tau_hi);
    s.gamma = rng.uniform(space.gamma_lo, space.gamma_hi);
    trials[t] = s;

    ModelConfig mc = base_model;
    mc.encoder.layers = s.layers;
    mc.encoder.heads = s.heads;
    mc.encoder.dropout = s.dropout;
    mc.meta_encoder.layers = s.meta_layers;
    mc.meta_encoder.heads = s.heads;
    mc.meta_encoder.dropout = s.dropout;
    mc.supernode_rule = SupernodeSelection::fixed(s.tau);
    mc.superedge_rule.value = s.gamma;
    mc.seed = mix_seed(seed, 0x7185ULL + t);
    configs[t] = mc;

    TrainConfig tc = base_train;
    tc.lr = s.lr;
    tc.seed = mix_seed(seed, 0x3117ULL + t);
    train_cfgs[t] = tc;
  }

  run_indexed_parallel(budget, threads, [&](int t) {
    Model model = init_model(configs[t]);
    train(model, train_set, val_set, train_cfgs[t]);
    const auto ev = evaluate(model, val_set.samples);
    trials[t].val_accuracy = ev.accuracy;
    trials[t].val_loss = ev.mean_loss;
  });

  SearchResult result;
  result.leaderboard = trials;
  std::stable_sort(result.leaderboard.begin(), result.leaderboard.end(),
                   [](const SearchTrial& a, const SearchTrial& b) {
                     if (a.val_accuracy != b.val_accuracy) {
                       return a.val_accuracy > b.val_accuracy;
                     }
                     return a.index < b.index;
                   });
  result.best = result.leaderboard.front();
  result.best_config = configs[result.best.index];
  result.best_train = train_cfgs[result.best.index];
  return result;
}

// ---------------------------------------------------------------------------
// Repeated trials
// ---------------------------------------------------------------------------

struct MeanStderr {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanStderr mean_and_stderr(std::span<const double> xs) {
  if (xs.empty()) throw ContractError("mean_and_stderr: empty");
  MeanStderr r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return r;
  double ss = 0.0;
  for (double x : xs) ss += (x - r.mean) * (x - r.mean);
  const double stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  r.se = stddev / std::sqrt(static_cast<double>(xs.size()));
  return r;
}

}  // namespace mgf
