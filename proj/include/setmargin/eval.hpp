#ifndef SETMARGIN_EVAL_HPP
#define SETMARGIN_EVAL_HPP

// Gallery scoring, open-set identification (Rank-n) and per-subject EER
// verification.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "setmargin/common.hpp"

namespace setmargin {

struct SubjectGallery {
  std::string subject_id;
  std::vector<Vec> embeddings;
};

/// Mean Euclidean distance between the query and the T gallery embeddings.
/// Lower means more similar.
inline double score(std::span<const Vec> gallery, const Vec& query) {
  if (gallery.empty()) throw DataError("score: empty gallery");
  double sum = 0.0;
  for (const auto& g : gallery) {
    if (g.size() != query.size()) throw DataError("score: dimension mismatch");
    sum += euclidean(g, query);
  }
  return sum / static_cast<double>(gallery.size());
}

inline double score(const SubjectGallery& gallery, const Vec& query) { return score(gallery.embeddings, query); }

struct RankedSubject {
  std::string subject_id;
  double distance = 0.0;
};

/// Background subjects ordered by the mean gallery score over the query
/// samples, ascending; ties go to the smaller subject id.
inline std::vector<RankedSubject> identify(std::span<const Vec> query_set, std::span<const SubjectGallery> background) {
  if (query_set.empty()) throw DataError("identify: empty query set");
  if (background.empty()) throw DataError("identify: empty background");
  std::vector<RankedSubject> ranked;
  ranked.reserve(background.size());
  for (const auto& g : background) {
    double sum = 0.0;
    for (const auto& q : query_set) sum += score(g, q);
    ranked.push_back(RankedSubject{g.subject_id, sum / static_cast<double>(query_set.size())});
  }
  std::sort(ranked.begin(), ranked.end(), [](const RankedSubject& a, const RankedSubject& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.subject_id < b.subject_id;
  });
  return ranked;
}

enum class IdentificationMode {
  query_set,     // one trial per query subject, scores averaged over its samples
  query_sample,  // one trial per query sample
};

struct QuerySubject {
  std::string subject_id;
  std::vector<Vec> embeddings;
};

struct IdentificationRun {
  std::vector<SubjectGallery> background;
  std::vector<QuerySubject> queries;
  IdentificationMode mode = IdentificationMode::query_set;
};

/// 1-based rank of the true subject for every identification trial.
inline std::vector<int> true_subject_ranks(const IdentificationRun& run) {
  std::vector<int> ranks;
  for (const auto& q : run.queries) {
    const bool present = std::any_of(run.background.begin(), run.background.end(),
                                     [&](const SubjectGallery& g) { return g.subject_id == q.subject_id; });
    if (!present) throw DataError("identification: query subject " + q.subject_id + " is not in the background");
    auto rank_of = [&](std::span<const Vec> qs) {
      const auto ranked = identify(qs, run.background);
      for (std::size_t k = 0; k < ranked.size(); ++k) {
        if (ranked[k].subject_id == q.subject_id) return static_cast<int>(k + 1);
      }
      return static_cast<int>(ranked.size());
    };
    if (run.mode == IdentificationMode::query_set) {
      ranks.push_back(rank_of(q.embeddings));
    } else {
      for (std::size_t k = 0; k < q.embeddings.size(); ++k) ranks.push_back(rank_of(std::span<const Vec>(&q.embeddings[k], 1)));
    }
  }
  return ranks;
}

/// Fraction of trials whose true subject is within the first n, per n.
/// No decision threshold: the closest subject is always the answer.
inline std::vector<double> rank_n_accuracy(const IdentificationRun& run, std::span<const int> ns) {
  const auto ranks = true_subject_ranks(run);
  std::vector<double> acc;
  for (int n : ns) {
    const auto hits = std::count_if(ranks.begin(), ranks.end(), [n](int r) { return r <= n; });
    acc.push_back(ranks.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(ranks.size()));
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Verification

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

/// Equal error rate of distance scores.
///
/// FRR(t) is the fraction of genuine scores above t, FAR(t) the fraction of
/// impostor scores at or below t. Operating points are taken at every
/// distinct score (plus t = -inf); the EER is where FRR - FAR changes sign,
/// interpolated linearly between the two bracketing operating points.
inline EerResult eer(std::span<const double> genuine, std::span<const double> impostor) {
  if (genuine.empty() || impostor.empty()) throw DataError("eer: genuine and impostor lists must be non-empty");
  std::vector<double> g(genuine.begin(), genuine.end());
  std::vector<double> im(impostor.begin(), impostor.end());
  std::sort(g.begin(), g.end());
  std::sort(im.begin(), im.end());
  std::vector<double> thresholds;
  thresholds.reserve(g.size() + im.size());
  std::merge(g.begin(), g.end(), im.begin(), im.end(), std::back_inserter(thresholds));
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  const double ng = static_cast<double>(g.size());
  const double ni = static_cast<double>(im.size());
  double prev_far = 0.0;
  double prev_frr = 1.0;
  double prev_t = -INFINITY;
  std::size_t gi = 0;
  std::size_t ii = 0;
  for (double t : thresholds) {
    while (gi < g.size() && g[gi] <= t) ++gi;
    while (ii < im.size() && im[ii] <= t) ++ii;
    const double frr = (ng - static_cast<double>(gi)) / ng;
    const double far = static_cast<double>(ii) / ni;
    const double diff = frr - far;
    if (diff == 0.0) return EerResult{far, t};
    if (diff < 0.0) {
      const double prev_diff = prev_frr - prev_far;
      const double w = prev_diff / (prev_diff - diff);
      const double rate = prev_far + w * (far - prev_far);
      const double thr = std::isinf(prev_t) ? t : prev_t + w * (t - prev_t);
      return EerResult{rate, thr};
    }
    prev_far = far;
    prev_frr = frr;
    prev_t = t;
  }
  // Unreachable: at the largest score FRR = 0 and FAR = 1.
  return EerResult{prev_far, prev_t};
}

struct VerificationSubject {
  std::string subject_id;
  std::vector<Vec> gallery;
  std::vector<Vec> queries;
};

struct VerificationOptions {
  std::size_t impostor_query_index = 0;     // which query of each subject acts as impostor
  std::size_t max_impostors_per_subject = 0;  // 0 = every other subject
  std::uint64_t seed = 0;                   // impostor subsampling
};

struct ScoreRecord {
  std::string query_id;
  std::string subject_id;
  double distance = 0.0;
  bool genuine = false;
};

struct VerificationResult {
  std::vector<std::string> subject_ids;
  std::vector<double> per_subject_eer;
  double mean_eer = 0.0;
  std::size_t genuine_count = 0;
  std::size_t impostor_count = 0;
  std::vector<ScoreRecord> scores;
};

/// Per-subject EER, averaged. Every query is scored against its own gallery
/// (genuine); one query per other subject is scored against it (impostor).
inline VerificationResult run_verification(std::span<const VerificationSubject> subjects, const VerificationOptions& opts = {}) {
  if (subjects.size() < 2) throw DataError("verification: need at least 2 subjects");
  for (const auto& s : subjects) {
    if (s.gallery.empty() || s.queries.empty()) throw DataError("verification: subject " + s.subject_id + " lacks gallery or queries");
    if (opts.impostor_query_index >= s.queries.size()) {
      throw DataError("verification: subject " + s.subject_id + " has no query #" + std::to_string(opts.impostor_query_index));
    }
  }
  VerificationResult res;
  Rng rng(opts.seed);
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const auto& s = subjects[i];
    std::vector<double> genuine;
    for (std::size_t q = 0; q < s.queries.size(); ++q) {
      const double d = score(s.gallery, s.queries[q]);
      genuine.push_back(d);
      res.scores.push_back(ScoreRecord{s.subject_id + "#" + std::to_string(q), s.subject_id, d, true});
    }
    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < subjects.size(); ++j) {
      if (j != i) others.push_back(j);
    }
    if (opts.max_impostors_per_subject > 0 && opts.max_impostors_per_subject < others.size()) {
      for (std::size_t k = 0; k < opts.max_impostors_per_subject; ++k) {
        std::swap(others[k], others[k + rng.below(others.size() - k)]);
      }
      others.resize(opts.max_impostors_per_subject);
      std::sort(others.begin(), others.end());
    }
    std::vector<double> impostor;
    for (std::size_t j : others) {
      const auto& o = subjects[j];
      const double d = score(s.gallery, o.queries[opts.impostor_query_index]);
      impostor.push_back(d);
      res.scores.push_back(ScoreRecord{o.subject_id + "#" + std::to_string(opts.impostor_query_index), s.subject_id, d, false});
    }
    res.genuine_count += genuine.size();
    res.impostor_count += impostor.size();
    res.subject_ids.push_back(s.subject_id);
    res.per_subject_eer.push_back(eer(genuine, impostor).eer);
  }
  res.mean_eer = std::accumulate(res.per_subject_eer.begin(), res.per_subject_eer.end(), 0.0) /
                 static_cast<double>(res.per_subject_eer.size());
  return res;
}

}  // namespace setmargin

#endif  // SETMARGIN_EVAL_HPP
