// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "setmargin/experiment.hpp"
#include "test_util.hpp"

using namespace setmargin;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1. Analytic gradients through the default encoder against central
// differences.
Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto data = setmargin::testing::small_dataset(6, 4, 12, 11, 5, 10);
  const auto pools = class_pools(data);
  double worst = 0.0;
  int draws_total = 0;
  int coords_total = 0;
  bool complete = true;
  for (LossKind kind : {LossKind::contrastive, LossKind::triplet, LossKind::sm_cl, LossKind::sm_tl}) {
    LossSpec spec;
    spec.kind = kind;
    int draws = 0;
    for (std::uint64_t d = 0; draws < 10 && d < 200; ++d) {
      ModelParams p = init_params(EncoderArch{}, 1000 + d);
      p.input_norm = InputNormalizer::fit(data);
      const auto batch = sample_set_pair_batch(pools, 2, spec.G, 2000 + d);
      if (setmargin::testing::min_hinge_margin(spec, p, data, batch) < 1e-2) continue;
      Rng rng(3000 + d);
      const auto gc = setmargin::testing::finite_difference_check(p, data, batch, spec, 100, rng);
      worst = std::max(worst, gc.max_rel_error);
      coords_total += gc.coordinates;
      ++draws;
    }
    complete = complete && draws == 10;
    draws_total += draws;
  }
  const double secs = seconds_since(t0);
  return {complete && worst <= 1e-4 && secs < 120.0,
          fmt("%d draws, %d coordinates, max relative error %.3g, %.1fs", draws_total, coords_total, worst, secs)};
}

// 2. Hand-enumerated loss values and the G = 1 closed forms.
Outcome loss_oracles() {
  double worst = 0.0;
  auto check = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };
  const std::vector<Vec> a{{0, 0}, {1, 0}};
  const std::vector<Vec> b{{2, 0}, {3, 0}};
  check(setmargin_contrastive(a, b, 1.5, 4.0), 1.0);
  const std::vector<Vec> si{{0, 0}, {0.5, 0}};
  const std::vector<Vec> sj{{1, 0}, {1.5, 0}};
  check(setmargin_triplet(si, sj, 1.5), 3.0);

  Rng rng(5);
  for (int t = 0; t < 1000; ++t) {
    const Vec x{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const Vec y{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const double beta = rng.uniform(0.5, 8.0);
    const double h = std::max(0.0, 1.5 - euclidean(x, y));
    check(setmargin_contrastive(std::vector<Vec>{x}, std::vector<Vec>{y}, 1.5, beta), beta * h * h / 2.0);
    check(setmargin_triplet(std::vector<Vec>{x}, std::vector<Vec>{y}, 1.5), 0.0);
  }
  return {worst <= 1e-12, fmt("SM-CL 1.0, SM-TL 3.0, 1000 G=1 draws; max abs error %.3g", worst)};
}

// 3. Bound columns of the packing table for N = 12..20.
Outcome packing_bounds() {
  const int ns[] = {12, 14, 16, 18, 20};
  const double cp[] = {0.25, 0.23, 0.22, 0.21, 0.19};
  const double mx[] = {0.33, 0.30, 0.28, 0.26, 0.24};
  bool ok = true;
  std::string detail;
  for (int k = 0; k < 5; ++k) {
    const auto r = packing_reference(ns[k]);
    const bool row = std::abs(r.delta_cp - cp[k]) <= 0.005 && std::abs(r.delta_max - mx[k]) <= 0.005;
    ok = ok && row;
    detail += fmt("%sN=%d cp %.4f/%.2f max %.4f/%.2f%s", k ? "; " : "", ns[k], r.delta_cp, cp[k], r.delta_max, mx[k], row ? "" : " (off)");
  }
  return {ok, detail};
}

// 4. Point-packing optimizer against the known optima.
Outcome packing_optimizer() {
  const auto t0 = std::chrono::steady_clock::now();
  PackingOptions opts;
  opts.restarts = 32;
  double worst = 0.0;
  int worst_n = 0;
  for (int n = 2; n <= 13; ++n) {
    const auto sol = solve_point_packing(n, opts);
    const double gap = 1.0 - sol.min_distance / optimal_point_spacing(n);
    if (gap > worst) {
      worst = gap;
      worst_n = n;
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 0.005 && secs < 300.0, fmt("worst relative gap %.3g%% at N=%d, %.1fs", 100.0 * worst, worst_n, secs)};
}

// 5. Ranking and EER against brute-force re-implementations.
std::vector<std::string> ranking_bruteforce(const std::vector<Vec>& queries, const std::vector<SubjectGallery>& bg) {
  std::vector<std::pair<double, std::string>> rows;
  for (const auto& g : bg) {
    double total = 0.0;
    for (const auto& q : queries) {
      double s = 0.0;
      for (const auto& e : g.embeddings) {
        double d2 = 0.0;
        for (std::size_t c = 0; c < e.size(); ++c) d2 += (e[c] - q[c]) * (e[c] - q[c]);
        s += std::sqrt(d2);
      }
      total += s / static_cast<double>(g.embeddings.size());
    }
    rows.emplace_back(total / static_cast<double>(queries.size()), g.subject_id);
  }
  std::sort(rows.begin(), rows.end());
  std::vector<std::string> ids;
  for (const auto& r : rows) ids.push_back(r.second);
  return ids;
}

double eer_bruteforce(const std::vector<double>& gen, const std::vector<double>& imp) {
  std::vector<double> ts{-INFINITY};
  ts.insert(ts.end(), gen.begin(), gen.end());
  ts.insert(ts.end(), imp.begin(), imp.end());
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  auto frr = [&](double t) {
    return static_cast<double>(std::count_if(gen.begin(), gen.end(), [t](double s) { return s > t; })) / static_cast<double>(gen.size());
  };
  auto far = [&](double t) {
    return static_cast<double>(std::count_if(imp.begin(), imp.end(), [t](double s) { return s <= t; })) / static_cast<double>(imp.size());
  };
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const double d = frr(ts[k]) - far(ts[k]);
    if (d == 0.0) return far(ts[k]);
    if (d < 0.0) {
      const double d0 = frr(ts[k - 1]) - far(ts[k - 1]);
      const double w = d0 / (d0 - d);
      return far(ts[k - 1]) + w * (far(ts[k]) - far(ts[k - 1]));
    }
  }
  return NAN;
}

Outcome eval_oracles() {
  Rng rng(17);
  int rank_mismatch = 0;
  int rank_rank_mismatch = 0;
  for (int t = 0; t < 500; ++t) {
    const int n = 1 + static_cast<int>(rng.below(10));
    const int dim = 1 + static_cast<int>(rng.below(4));
    auto vec = [&] {
      Vec v(static_cast<std::size_t>(dim));
      // Coarse grid so exact score ties occur.
      for (auto& x : v) x = t % 2 ? rng.normal() : static_cast<double>(rng.below(3));
      return v;
    };
    std::vector<SubjectGallery> bg;
    IdentificationRun run;
    for (int s = 0; s < n; ++s) {
      SubjectGallery g{"s" + std::to_string(s), {}};
      const int gk = 1 + static_cast<int>(rng.below(4));
      for (int k = 0; k < gk; ++k) g.embeddings.push_back(vec());
      bg.push_back(g);
      QuerySubject q{g.subject_id, {}};
      for (int k = 0; k < 3; ++k) q.embeddings.push_back(vec());
      run.queries.push_back(q);
    }
    run.background = bg;
    const auto ranks = true_subject_ranks(run);
    for (std::size_t s = 0; s < run.queries.size(); ++s) {
      const auto& q = run.queries[s];
      const auto ranked = identify(q.embeddings, bg);
      const auto oracle = ranking_bruteforce(q.embeddings, bg);
      for (std::size_t k = 0; k < oracle.size(); ++k) rank_mismatch += ranked[k].subject_id != oracle[k];
      const auto pos = std::find(oracle.begin(), oracle.end(), q.subject_id) - oracle.begin();
      rank_rank_mismatch += ranks[s] != static_cast<int>(pos) + 1;
    }
  }
  double eer_worst = 0.0;
  for (int t = 0; t < 500; ++t) {
    const std::size_t ng = 1 + rng.below(500);
    const std::size_t ni = 1 + rng.below(1000 - ng);
    std::vector<double> g(ng), im(ni);
    const bool coarse = t % 3 == 0;
    for (auto& x : g) x = coarse ? static_cast<double>(rng.below(20)) : rng.normal(0.0, 1.0);
    for (auto& x : im) x = coarse ? static_cast<double>(rng.below(20)) + 3.0 : rng.normal(1.0 + rng.uniform(0, 2), 1.0);
    eer_worst = std::max(eer_worst, std::abs(eer(g, im).eer - eer_bruteforce(g, im)));
  }
  return {rank_mismatch == 0 && rank_rank_mismatch == 0 && eer_worst <= 1e-9,
          fmt("500 ranking instances, %d order and %d rank mismatches; 500 EER instances, max error %.3g", rank_mismatch,
              rank_rank_mismatch, eer_worst)};
}

// 6 and 8. Desk-scale keystroke experiment.
struct DeskRun {
  double rank1 = 0.0;
  double eer = 0.0;
  double seconds = 0.0;
  std::string digest;
};

DeskRun desk_run(std::uint64_t seed, LossKind kind) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg;
  cfg.apply_seed(seed);
  cfg.loss.kind = kind;
  const auto seqs = load_sequences(cfg.data);
  const auto train_seqs = training_sequences(cfg, seqs);
  const auto res = train(initial_model(cfg, train_seqs), train_seqs, cfg.loss, cfg.training);
  const auto ev = evaluate_model(cfg, res.params, seqs);
  DeskRun r;
  r.rank1 = ev.rank_accuracy.at(0);
  r.eer = ev.verification->mean_eer;
  r.seconds = seconds_since(t0);
  r.digest = to_json(ev).dump();
  return r;
}

struct DeskTable {
  // [seed][loss] with losses ordered SM-TL, TL, CL.
  std::vector<std::array<DeskRun, 3>> runs;
};

constexpr LossKind kDeskLosses[3] = {LossKind::sm_tl, LossKind::triplet, LossKind::contrastive};

DeskTable desk_table() {
  DeskTable t;
  for (std::uint64_t seed : {1, 2, 3}) {
    std::array<DeskRun, 3> row;
    for (int k = 0; k < 3; ++k) {
      row[static_cast<std::size_t>(k)] = desk_run(seed, kDeskLosses[k]);
      std::fprintf(stderr, "  desk seed %llu %-11s rank1 %.4f eer %.4f %.1fs\n", static_cast<unsigned long long>(seed),
                   to_string(kDeskLosses[k]).c_str(), row[static_cast<std::size_t>(k)].rank1, row[static_cast<std::size_t>(k)].eer,
                   row[static_cast<std::size_t>(k)].seconds);
    }
    t.runs.push_back(row);
  }
  return t;
}

Outcome desk_ordering(const DeskTable& t) {
  double r1[3] = {}, eer[3] = {};
  double slowest_seed = 0.0;
  for (const auto& row : t.runs) {
    double secs = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      r1[k] += row[k].rank1 / static_cast<double>(t.runs.size());
      eer[k] += row[k].eer / static_cast<double>(t.runs.size());
      secs += row[k].seconds;
    }
    slowest_seed = std::max(slowest_seed, secs);
  }
  const bool ok = r1[0] >= r1[1] && r1[1] >= r1[2] && eer[0] <= eer[2] && slowest_seed < 600.0;
  return {ok, fmt("mean rank-1 SM-TL %.4f, TL %.4f, CL %.4f; mean EER SM-TL %.4f, CL %.4f; slowest seed %.0fs", r1[0], r1[1], r1[2],
                  eer[0], eer[2], slowest_seed)};
}

Outcome desk_determinism(const DeskTable& first) {
  const DeskTable second = desk_table();
  int differing = 0;
  for (std::size_t s = 0; s < first.runs.size(); ++s) {
    for (std::size_t k = 0; k < 3; ++k) differing += first.runs[s][k].digest != second.runs[s][k].digest;
  }
  return {differing == 0, fmt("%d of 9 rerun metric reports differ", differing)};
}

// 7. 2-D embeddings of synthetic point-cloud classes, mean over seeds 1..3.
// Optimizer settings follow the original toy experiment (Adam, lr 0.01).
Outcome cluster_trend() {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  std::string detail;
  for (int n : {12, 16, 20}) {
    double delta[3] = {}, rho[3] = {};
    for (std::uint64_t seed : {1, 2, 3}) {
      for (int k = 0; k < 3; ++k) {
        ExperimentConfig cfg;
        cfg.data.source = "clusters";
        cfg.data.clusters.n_classes = n;
        cfg.apply_seed(seed);
        cfg.encoder.arch.embedding_dim = 2;
        cfg.training.lr = 0.01;
        cfg.training.epochs = 40;
        cfg.loss.kind = kDeskLosses[k];
        const auto seqs = load_sequences(cfg.data);
        const auto res = train(initial_model(cfg, seqs), seqs, cfg.loss, cfg.training);
        const auto rep = analyze_space(embed_cloud(res.params, seqs));
        delta[k] += rep.normalized->delta / 3.0;
        rho[k] += rep.normalized->rho / 3.0;
      }
    }
    const bool row = delta[0] > delta[1] && rho[0] < rho[2];
    ok = ok && row;
    detail += fmt("%sN=%d delta SM-TL %.4f TL %.4f, rho SM-TL %.4f CL %.4f", n == 12 ? "" : "; ", n, delta[0], delta[1], rho[0], rho[2]);
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 600.0;
  return {ok, detail + fmt("; %.0fs", secs)};
}

}  // namespace

int main() {
  int failed = 0;
  auto report = [&](int id, const char* name, const Outcome& o) {
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  };
  report(1, "gradient check", gradients());
  report(2, "loss oracles", loss_oracles());
  report(3, "packing bounds", packing_bounds());
  report(4, "packing optimizer", packing_optimizer());
  report(5, "evaluation oracles", eval_oracles());
  const auto desk = desk_table();
  report(6, "desk ordering", desk_ordering(desk));
  report(7, "2-D cluster trend", cluster_trend());
  report(8, "determinism", desk_determinism(desk));
  std::printf("%d of 8 criteria passed\n", 8 - failed);
  return failed == 0 ? 0 : 1;
}
