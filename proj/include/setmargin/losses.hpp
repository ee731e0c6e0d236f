#ifndef SETMARGIN_LOSSES_HPP
#define SETMARGIN_LOSSES_HPP

// Pair, triplet and set-pair metric learning losses, with gradients with
// respect to the embeddings, and the set-pair batch sampler.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "setmargin/common.hpp"

namespace setmargin {

enum class LossKind { contrastive, triplet, sm_cl, sm_tl };

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::contrastive: return "contrastive";
    case LossKind::triplet: return "triplet";
    case LossKind::sm_cl: return "sm-cl";
    case LossKind::sm_tl: return "sm-tl";
  }
  return "?";
}

inline LossKind loss_from_string(const std::string& s) {
  if (s == "contrastive" || s == "cl") return LossKind::contrastive;
  if (s == "triplet" || s == "tl") return LossKind::triplet;
  if (s == "sm-cl" || s == "smcl") return LossKind::sm_cl;
  if (s == "sm-tl" || s == "smtl") return LossKind::sm_tl;
  throw ConfigError("unknown loss '" + s + "' (expected contrastive, triplet, sm-cl or sm-tl)");
}

struct LossSpec {
  LossKind kind = LossKind::sm_tl;
  double alpha = 1.5;
  std::optional<double> beta;  // defaults to 2G
  int G = 3;
  // Adds set j's intra-class term to SM-CL.
  bool symmetrized = false;

  double effective_beta() const { return beta ? *beta : 2.0 * G; }

  void validate() const {
    if (!(alpha >= 0.0)) throw ConfigError("loss: alpha must be >= 0");
    if (G < 1) throw ConfigError("loss: G must be >= 1");
  }
};

inline double pair_distance(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) {
    throw DataError("pair_distance: dimension mismatch (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  }
  return euclidean(a, b);
}

// Each term adds its value and, if gradient buffers are given, its gradient.
// Hinges use the one-sided derivative: zero at the kink.
namespace terms {

inline double positive(const Vec& a, const Vec& b, double w, Vec* ga, Vec* gb) {
  const double d2 = squared_distance(a, b);
  if (ga || gb) {
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double diff = w * (a[k] - b[k]);
      if (ga) (*ga)[k] += diff;
      if (gb) (*gb)[k] -= diff;
    }
  }
  return w * 0.5 * d2;
}

inline double negative(const Vec& a, const Vec& b, double alpha, double w, Vec* ga, Vec* gb) {
  const double d = euclidean(a, b);
  const double h = alpha - d;
  if (h <= 0.0) return 0.0;
  if ((ga || gb) && d > 0.0) {
    const double coef = -w * h / d;
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double diff = coef * (a[k] - b[k]);
      if (ga) (*ga)[k] += diff;
      if (gb) (*gb)[k] -= diff;
    }
  }
  return w * 0.5 * h * h;
}

inline double triplet(const Vec& A, const Vec& P, const Vec& N, double alpha, Vec* gA, Vec* gP, Vec* gN) {
  const double v = squared_distance(A, P) - squared_distance(A, N) + alpha;
  if (v <= 0.0) return 0.0;
  if (gA || gP || gN) {
    for (std::size_t k = 0; k < A.size(); ++k) {
      if (gA) (*gA)[k] += 2.0 * (N[k] - P[k]);
      if (gP) (*gP)[k] -= 2.0 * (A[k] - P[k]);
      if (gN) (*gN)[k] += 2.0 * (A[k] - N[k]);
    }
  }
  return v;
}

}  // namespace terms

/// Positive pair: d^2/2. Negative pair: max(0, alpha - d)^2 / 2.
inline double contrastive_loss(const Vec& a, const Vec& b, bool is_negative_pair, double alpha) {
  if (a.size() != b.size()) throw DataError("contrastive_loss: dimension mismatch");
  return is_negative_pair ? terms::negative(a, b, alpha, 1.0, nullptr, nullptr) : terms::positive(a, b, 1.0, nullptr, nullptr);
}

/// max(0, d^2(A,P) - d^2(A,N) + alpha).
inline double triplet_loss(const Vec& anchor, const Vec& positive, const Vec& negative, double alpha) {
  if (anchor.size() != positive.size() || anchor.size() != negative.size()) throw DataError("triplet_loss: dimension mismatch");
  return terms::triplet(anchor, positive, negative, alpha, nullptr, nullptr, nullptr);
}

namespace detail {

inline Vec* at(std::span<Vec> g, std::size_t k) { return g.empty() ? nullptr : &g[k]; }

}  // namespace detail

/// SetMargin contrastive loss for sets i and j.
///
/// Intra term: d^2/2 over the unordered pairs of set i (and of set j when
/// symmetrized). Cross term: beta * max(0, alpha - d)^2 / 2 over all |i| x |j|
/// pairs.
inline double setmargin_contrastive(std::span<const Vec> set_i, std::span<const Vec> set_j, double alpha, double beta,
                                    bool symmetrized = false, std::span<Vec> grad_i = {}, std::span<Vec> grad_j = {}) {
  double loss = 0.0;
  for (std::size_t k = 0; k < set_i.size(); ++k) {
    for (std::size_t q = k + 1; q < set_i.size(); ++q) {
      loss += terms::positive(set_i[k], set_i[q], 1.0, detail::at(grad_i, k), detail::at(grad_i, q));
    }
  }
  if (symmetrized) {
    for (std::size_t k = 0; k < set_j.size(); ++k) {
      for (std::size_t q = k + 1; q < set_j.size(); ++q) {
        loss += terms::positive(set_j[k], set_j[q], 1.0, detail::at(grad_j, k), detail::at(grad_j, q));
      }
    }
  }
  for (std::size_t k = 0; k < set_i.size(); ++k) {
    for (std::size_t q = 0; q < set_j.size(); ++q) {
      loss += terms::negative(set_i[k], set_j[q], alpha, beta, detail::at(grad_i, k), detail::at(grad_j, q));
    }
  }
  return loss;
}

/// SetMargin triplet loss: for every anchor/positive pair (k < q) inside one
/// set and every negative l of the other set, one hinge per direction.
/// Symmetric in its two arguments.
inline double setmargin_triplet(std::span<const Vec> set_i, std::span<const Vec> set_j, double alpha,
                                std::span<Vec> grad_i = {}, std::span<Vec> grad_j = {}) {
  auto one_side = [&](std::span<const Vec> own, std::span<const Vec> other, std::span<Vec> g_own, std::span<Vec> g_other) {
    double loss = 0.0;
    for (std::size_t k = 0; k < own.size(); ++k) {
      for (std::size_t q = k + 1; q < own.size(); ++q) {
        for (std::size_t l = 0; l < other.size(); ++l) {
          loss += terms::triplet(own[k], own[q], other[l], alpha, detail::at(g_own, k), detail::at(g_own, q),
                                 detail::at(g_other, l));
        }
      }
    }
    return loss;
  };
  return one_side(set_i, set_j, grad_i, grad_j) + one_side(set_j, set_i, grad_j, grad_i);
}

/// Loss of one set pair under the given spec. Pair and triplet baselines see
/// the same set pair through a fixed sample-level decomposition:
/// contrastive uses positives (i0, i1), (j0, j1) and negative (i0, j0);
/// triplet uses (i0, i1 | j0) and (j0, j1 | i0).
inline double set_pair_loss(const LossSpec& spec, std::span<const Vec> set_i, std::span<const Vec> set_j,
                            std::span<Vec> grad_i = {}, std::span<Vec> grad_j = {}) {
  using detail::at;
  switch (spec.kind) {
    case LossKind::sm_cl:
      return setmargin_contrastive(set_i, set_j, spec.alpha, spec.effective_beta(), spec.symmetrized, grad_i, grad_j);
    case LossKind::sm_tl:
      return setmargin_triplet(set_i, set_j, spec.alpha, grad_i, grad_j);
    case LossKind::contrastive: {
      double loss = 0.0;
      if (set_i.size() >= 2) loss += terms::positive(set_i[0], set_i[1], 1.0, at(grad_i, 0), at(grad_i, 1));
      if (set_j.size() >= 2) loss += terms::positive(set_j[0], set_j[1], 1.0, at(grad_j, 0), at(grad_j, 1));
      loss += terms::negative(set_i[0], set_j[0], spec.alpha, 1.0, at(grad_i, 0), at(grad_j, 0));
      return loss;
    }
    case LossKind::triplet: {
      double loss = 0.0;
      if (set_i.size() >= 2)
        loss += terms::triplet(set_i[0], set_i[1], set_j[0], spec.alpha, at(grad_i, 0), at(grad_i, 1), at(grad_j, 0));
      if (set_j.size() >= 2)
        loss += terms::triplet(set_j[0], set_j[1], set_i[0], spec.alpha, at(grad_j, 0), at(grad_j, 1), at(grad_i, 0));
      return loss;
    }
  }
  return 0.0;
}

struct LabeledEmbeddingSet {
  std::string class_id;
  std::vector<Vec> embeddings;
};

struct SetPair {
  LabeledEmbeddingSet first;
  LabeledEmbeddingSet second;
};

struct SetPairBatch {
  std::vector<SetPair> pairs;
  int G = 0;
};

inline void validate_batch(const SetPairBatch& batch) {
  std::size_t dim = 0;
  bool have_dim = false;
  for (const auto& p : batch.pairs) {
    if (p.first.class_id == p.second.class_id) throw DataError("set pair batch: pair within class " + p.first.class_id);
    for (const auto* s : {&p.first, &p.second}) {
      if (static_cast<int>(s->embeddings.size()) != batch.G) throw DataError("set pair batch: non-uniform G");
      for (const auto& e : s->embeddings) {
        if (!have_dim) {
          dim = e.size();
          have_dim = true;
        } else if (e.size() != dim) {
          throw DataError("set pair batch: mixed embedding dimensions");
        }
      }
    }
  }
}

/// Sum of the set-pair loss over the batch.
inline double batch_loss(const SetPairBatch& batch, const LossSpec& spec) {
  validate_batch(batch);
  double total = 0.0;
  for (const auto& p : batch.pairs) total += set_pair_loss(spec, p.first.embeddings, p.second.embeddings);
  return total;
}

// ---------------------------------------------------------------------------
// Sampling

struct ClassPool {
  std::string label;
  std::vector<std::size_t> items;
};

struct IndexSetPair {
  std::size_t class_i = 0;
  std::size_t class_j = 0;
  std::vector<std::size_t> items_i;
  std::vector<std::size_t> items_j;
};

struct IndexBatch {
  std::vector<IndexSetPair> pairs;
  int G = 0;
};

/// B set pairs. Per pair two distinct classes are drawn uniformly, then G
/// items of each without replacement. Deterministic in seed.
inline IndexBatch sample_set_pair_batch(std::span<const ClassPool> pools, int B, int G, std::uint64_t seed) {
  if (G < 1 || B < 0) throw ConfigError("sampler: need B >= 0 and G >= 1");
  if (pools.size() < 2) throw DataError("sampler: need at least 2 classes, have " + std::to_string(pools.size()));
  for (const auto& p : pools) {
    if (p.items.size() < static_cast<std::size_t>(G)) {
      throw DataError("sampler: class " + p.label + " has " + std::to_string(p.items.size()) + " samples, needs " +
                      std::to_string(G));
    }
  }
  Rng rng(seed);
  IndexBatch batch;
  batch.G = G;
  batch.pairs.reserve(static_cast<std::size_t>(B));
  auto draw = [&](const ClassPool& pool) {
    std::vector<std::size_t> items = pool.items;
    for (std::size_t k = 0; k < static_cast<std::size_t>(G); ++k) {
      const std::size_t pick = k + rng.below(items.size() - k);
      std::swap(items[k], items[pick]);
    }
    items.resize(static_cast<std::size_t>(G));
    return items;
  };
  for (int b = 0; b < B; ++b) {
    IndexSetPair p;
    p.class_i = rng.below(pools.size());
    p.class_j = rng.below(pools.size() - 1);
    if (p.class_j >= p.class_i) ++p.class_j;
    p.items_i = draw(pools[p.class_i]);
    p.items_j = draw(pools[p.class_j]);
    batch.pairs.push_back(std::move(p));
  }
  return batch;
}

}  // namespace setmargin

#endif  // SETMARGIN_LOSSES_HPP
