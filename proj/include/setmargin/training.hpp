#ifndef SETMARGIN_TRAINING_HPP
#define SETMARGIN_TRAINING_HPP

#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "setmargin/common.hpp"
#include "setmargin/encoder.hpp"
#include "setmargin/keystroke.hpp"
#include "setmargin/losses.hpp"

namespace setmargin {

struct LossGradient {
  double value = 0.0;
  Vec grads;
};

/// Groups sequences into one pool per subject, in order of first appearance.
inline std::vector<ClassPool> class_pools(std::span<const FeatureSequence> seqs) {
  std::vector<ClassPool> pools;
  std::map<std::string, std::size_t> index;
  for (std::size_t k = 0; k < seqs.size(); ++k) {
    auto [it, inserted] = index.emplace(seqs[k].subject_id, pools.size());
    if (inserted) pools.push_back(ClassPool{seqs[k].subject_id, {}});
    pools[it->second].items.push_back(k);
  }
  return pools;
}

/// Exact batch loss and its gradient with respect to every parameter.
///
/// Each distinct sequence in the batch is embedded once; the loss gradient
/// with respect to the embeddings is then pushed back through the encoder.
/// Reduction order is fixed (batch order), so results are reproducible.
/// dropout_seed is only used when the arch has a non-zero dropout rate.
inline LossGradient loss_gradient(const ModelParams& params, std::span<const FeatureSequence> data, const IndexBatch& batch,
                                  const LossSpec& spec, std::uint64_t dropout_seed = 0) {
  spec.validate();
  std::map<std::size_t, std::size_t> slot_of;
  std::vector<std::size_t> items;
  for (const auto& p : batch.pairs) {
    for (const auto* list : {&p.items_i, &p.items_j}) {
      for (std::size_t it : *list) {
        if (it >= data.size()) throw DataError("loss_gradient: batch references a missing sample");
        if (slot_of.emplace(it, items.size()).second) items.push_back(it);
      }
    }
  }

  const bool dropout = params.arch.dropout_rate > 0.0;
  std::vector<ForwardTrace> traces(items.size());
  std::vector<Vec> embeds(items.size());
  for (std::size_t s = 0; s < items.size(); ++s) {
    if (dropout) {
      Rng rng(Rng::mix(dropout_seed, s));
      const auto masks = make_dropout_masks(params.arch, rng);
      embeds[s] = encode(params, data[items[s]], &traces[s], &masks);
    } else {
      embeds[s] = encode(params, data[items[s]], &traces[s]);
    }
  }

  const auto D = static_cast<std::size_t>(params.arch.embedding_dim);
  std::vector<Vec> d_embed(items.size(), Vec(D, 0.0));
  LossGradient out;
  std::vector<Vec> set_i;
  std::vector<Vec> set_j;
  std::vector<Vec> g_i;
  std::vector<Vec> g_j;
  for (const auto& p : batch.pairs) {
    set_i.clear();
    set_j.clear();
    for (std::size_t it : p.items_i) set_i.push_back(embeds[slot_of[it]]);
    for (std::size_t it : p.items_j) set_j.push_back(embeds[slot_of[it]]);
    g_i.assign(set_i.size(), Vec(D, 0.0));
    g_j.assign(set_j.size(), Vec(D, 0.0));
    out.value += set_pair_loss(spec, set_i, set_j, g_i, g_j);
    for (std::size_t k = 0; k < p.items_i.size(); ++k) {
      auto& dst = d_embed[slot_of[p.items_i[k]]];
      for (std::size_t c = 0; c < D; ++c) dst[c] += g_i[k][c];
    }
    for (std::size_t k = 0; k < p.items_j.size(); ++k) {
      auto& dst = d_embed[slot_of[p.items_j[k]]];
      for (std::size_t c = 0; c < D; ++c) dst[c] += g_j[k][c];
    }
  }
  if (!std::isfinite(out.value)) {
    throw NumericalError("loss_gradient: non-finite " + to_string(spec.kind) + " loss over " +
                         std::to_string(batch.pairs.size()) + " set pairs");
  }

  out.grads.assign(params.size(), 0.0);
  for (std::size_t s = 0; s < items.size(); ++s) {
    bool any = false;
    for (double v : d_embed[s]) any = any || v != 0.0;
    if (any) backward(params, traces[s], d_embed[s], out.grads);
  }
  return out;
}

/// Scalar batch loss only (no traces kept).
inline double batch_loss_value(const ModelParams& params, std::span<const FeatureSequence> data, const IndexBatch& batch,
                               const LossSpec& spec) {
  double total = 0.0;
  std::vector<Vec> set_i;
  std::vector<Vec> set_j;
  for (const auto& p : batch.pairs) {
    set_i.clear();
    set_j.clear();
    for (std::size_t it : p.items_i) set_i.push_back(encode(params, data[it]));
    for (std::size_t it : p.items_j) set_j.push_back(encode(params, data[it]));
    total += set_pair_loss(spec, set_i, set_j);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Optimizers

namespace detail {

inline void check_finite(std::span<const double> g) {
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (!std::isfinite(g[k])) throw NumericalError("optimizer: non-finite gradient at coordinate " + std::to_string(k));
  }
}

}  // namespace detail

struct SgdState {
  Vec velocity;
};

/// Plain SGD, with heavy-ball momentum when momentum > 0.
inline void sgd_step(std::span<double> params, std::span<const double> grads, SgdState& state, double lr,
                     double momentum = 0.0) {
  if (params.size() != grads.size()) throw DataError("sgd_step: shape mismatch");
  detail::check_finite(grads);
  if (momentum > 0.0) {
    if (state.velocity.size() != params.size()) state.velocity.assign(params.size(), 0.0);
    for (std::size_t k = 0; k < params.size(); ++k) {
      state.velocity[k] = momentum * state.velocity[k] + grads[k];
      params[k] -= lr * state.velocity[k];
    }
  } else {
    for (std::size_t k = 0; k < params.size(); ++k) params[k] -= lr * grads[k];
  }
}

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Vec m;
  Vec v;
  long long t = 0;
};

inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamHyper& hp) {
  if (params.size() != grads.size()) throw DataError("adam_step: shape mismatch");
  detail::check_finite(grads);
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
    state.t = 0;
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    state.m[k] = hp.beta1 * state.m[k] + (1.0 - hp.beta1) * grads[k];
    state.v[k] = hp.beta2 * state.v[k] + (1.0 - hp.beta2) * grads[k] * grads[k];
    const double mhat = state.m[k] / c1;
    const double vhat = state.v[k] / c2;
    params[k] -= hp.lr * mhat / (std::sqrt(vhat) + hp.eps);
  }
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainingConfig {
  int epochs = 10;
  int batches_per_epoch = 50;
  int pairs_per_batch = 32;
  std::string optimizer = "adam";  // adam | sgd
  double lr = 1e-3;
  double momentum = 0.0;  // sgd only
  std::uint64_t seed = 1;

  void validate() const {
    if (epochs < 0) throw ConfigError("training: epochs must be >= 0");
    if (batches_per_epoch < 1) throw ConfigError("training: batches_per_epoch must be >= 1");
    if (pairs_per_batch < 1) throw ConfigError("training: pairs_per_batch must be >= 1");
    if (optimizer != "adam" && optimizer != "sgd") throw ConfigError("training: optimizer must be adam or sgd");
    if (!(lr > 0.0)) throw ConfigError("training: lr must be > 0");
  }
};

struct TrainingResult {
  ModelParams params;
  std::vector<double> epoch_mean_loss;
  std::vector<double> batch_loss;  // every batch, in order
};

/// Runs epochs x batches of sample / loss+gradient / optimizer step.
/// An epoch is a fixed number of batches, not a pass over the data.
inline TrainingResult train(ModelParams params, std::span<const FeatureSequence> data, const LossSpec& spec,
                            const TrainingConfig& cfg,
                            const std::function<void(int epoch, double mean_loss)>& on_epoch = {}) {
  cfg.validate();
  spec.validate();
  const auto pools = class_pools(data);
  TrainingResult result;
  AdamState adam;
  SgdState sgd;
  const AdamHyper hp{cfg.lr};
  std::uint64_t counter = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double sum = 0.0;
    for (int b = 0; b < cfg.batches_per_epoch; ++b, ++counter) {
      const auto batch = sample_set_pair_batch(pools, cfg.pairs_per_batch, spec.G, Rng::mix(cfg.seed, 2 * counter));
      const auto lg = loss_gradient(params, data, batch, spec, Rng::mix(cfg.seed, 2 * counter + 1));
      result.batch_loss.push_back(lg.value);
      sum += lg.value;
      if (cfg.optimizer == "adam") {
        adam_step(params.values, lg.grads, adam, hp);
      } else {
        sgd_step(params.values, lg.grads, sgd, cfg.lr, cfg.momentum);
      }
    }
    const double mean = sum / cfg.batches_per_epoch;
    result.epoch_mean_loss.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  result.params = std::move(params);
  return result;
}

}  // namespace setmargin

#endif  // SETMARGIN_TRAINING_HPP
