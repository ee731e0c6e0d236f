#ifndef SETMARGIN_SPACE_HPP
#define SETMARGIN_SPACE_HPP

// Embedding-space diagnostics: mean nearest-centroid distance (delta), mean
// intra-class dispersion (rho), and circle packing reference bounds.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "setmargin/common.hpp"

namespace setmargin {

struct ClassCloud {
  std::string label;
  std::vector<Vec> points;
};

using LabeledCloud = std::vector<ClassCloud>;

namespace detail {

inline std::size_t cloud_dim(const LabeledCloud& cloud) {
  std::size_t dim = 0;
  bool have = false;
  for (const auto& c : cloud) {
    if (c.points.empty()) throw DataError("space analysis: class " + c.label + " is empty");
    for (const auto& p : c.points) {
      if (!have) {
        dim = p.size();
        have = true;
      } else if (p.size() != dim) {
        throw DataError("space analysis: mixed dimensions in class " + c.label);
      }
    }
  }
  return dim;
}

}  // namespace detail

inline std::vector<Vec> centroids(const LabeledCloud& cloud) {
  const std::size_t dim = detail::cloud_dim(cloud);
  std::vector<Vec> out;
  out.reserve(cloud.size());
  for (const auto& c : cloud) {
    Vec m(dim, 0.0);
    for (const auto& p : c.points) {
      for (std::size_t k = 0; k < dim; ++k) m[k] += p[k];
    }
    for (auto& v : m) v /= static_cast<double>(c.points.size());
    out.push_back(std::move(m));
  }
  return out;
}

/// delta: mean over classes of the distance to the nearest other centroid.
inline double centroid_min_distance(const LabeledCloud& cloud) {
  if (cloud.size() < 2) throw DataError("centroid_min_distance: need at least 2 classes");
  const auto c = centroids(cloud);
  double sum = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c.size(); ++j) {
      if (j != i) best = std::min(best, euclidean(c[i], c[j]));
    }
    sum += best;
  }
  return sum / static_cast<double>(c.size());
}

/// rho: mean over classes of the mean sample-to-centroid distance.
inline double intra_cluster_dispersion(const LabeledCloud& cloud) {
  if (cloud.empty()) throw DataError("intra_cluster_dispersion: empty cloud");
  const auto c = centroids(cloud);
  double sum = 0.0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    double s = 0.0;
    for (const auto& p : cloud[i].points) s += euclidean(p, c[i]);
    sum += s / static_cast<double>(cloud[i].points.size());
  }
  return sum / static_cast<double>(cloud.size());
}

// ---------------------------------------------------------------------------
// Circle packing reference

/// Best known (proven for N <= 13 and N = 19) radius of N equal circles packed
/// in a unit circle, N = 2..20.
inline constexpr std::array<double, 19> kPackingCircleRadius = {
    0.500000000000000,  // 2
    0.464101615137754,  // 3
    0.414213562373095,  // 4
    0.370191908158750,  // 5
    0.333333333333333,  // 6
    0.333333333333333,  // 7
    0.302593388348611,  // 8
    0.276768653914155,  // 9
    0.262258924190165,  // 10
    0.254854701717277,  // 11
    0.248163470571686,  // 12
    0.236067977499790,  // 13
    0.231030727971009,  // 14
    0.221172539086390,  // 15
    0.216664742924422,  // 16
    0.208679665570499,  // 17
    0.205604646508519,  // 18
    0.205604646508519,  // 19
    0.195224011018748,  // 20
};

inline constexpr int kPackingTableMin = 2;
inline constexpr int kPackingTableMax = 20;

struct PackingReference {
  int n = 0;
  double ratio = 0.0;      // container radius / circle radius
  double r_paper = 0.0;    // container radius in circle diameters (ratio / 2)
  double delta_cp = 0.0;   // 1 / (2 r_paper): circle-center spacing in a unit-diameter container
  double delta_max = 0.0;  // 1 / (2 r_paper - 1): point spacing in a unit-diameter disk
};

/// Reference bounds for N classes in a unit-diameter disk.
inline PackingReference packing_reference(int n) {
  if (n < kPackingTableMin || n > kPackingTableMax) {
    throw ConfigError("packing_reference: N=" + std::to_string(n) + " outside the table range [2, 20]; use solve_point_packing");
  }
  PackingReference ref;
  ref.n = n;
  ref.ratio = 1.0 / kPackingCircleRadius[static_cast<std::size_t>(n - kPackingTableMin)];
  ref.r_paper = ref.ratio / 2.0;
  ref.delta_cp = 1.0 / (2.0 * ref.r_paper);
  ref.delta_max = 1.0 / (2.0 * ref.r_paper - 1.0);
  return ref;
}

/// Maximum possible minimum distance of N points in the unit (radius 1) disk.
inline double optimal_point_spacing(int n) { return 2.0 / (packing_reference(n).ratio - 1.0); }

// ---------------------------------------------------------------------------
// Point packing optimizer

using Point2 = std::array<double, 2>;

struct PackingOptions {
  int restarts = 32;
  int max_iters = 4000;  // per restart
  std::uint64_t seed = 0;
};

struct PackingSolution {
  std::vector<Point2> points;
  double min_distance = 0.0;
  int best_restart = 0;
};

inline double min_pairwise_distance(const std::vector<Point2>& pts) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      best = std::min(best, std::hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]));
    }
  }
  return best;
}

namespace detail {

inline void project_to_disk(Point2& p) {
  const double r = std::hypot(p[0], p[1]);
  if (r > 1.0) {
    p[0] /= r;
    p[1] /= r;
  }
}

// One restart: projected ascent on the log-sum-exp soft minimum of pairwise
// distances with geometrically increasing sharpness and shrinking step.
inline std::vector<Point2> packing_restart(int n, int iters, double tau0, Rng& rng) {
  std::vector<Point2> pts(static_cast<std::size_t>(n));
  for (auto& p : pts) {
    do {
      p = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    } while (p[0] * p[0] + p[1] * p[1] > 1.0);
  }
  const std::size_t N = pts.size();
  std::vector<Point2> grad(N);
  std::vector<double> dist(N * N);
  std::vector<Point2> best = pts;
  double best_min = min_pairwise_distance(pts);
  const double spacing_guess = 2.0 / std::sqrt(static_cast<double>(n));
  for (int it = 0; it < iters; ++it) {
    const double frac = static_cast<double>(it) / std::max(1, iters - 1);
    // Sharpness in units of 1/spacing, annealed from tau0 up to 5000.
    const double tau = tau0 * std::pow(5000.0 / tau0, frac) / spacing_guess;
    const double step = spacing_guess * 0.05 * std::pow(0.005, frac);
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t j = i + 1; j < N; ++j) {
        const double d = std::max(1e-12, std::hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]));
        dist[i * N + j] = d;
        dmin = std::min(dmin, d);
      }
    }
    if (dmin > best_min) {
      best_min = dmin;
      best = pts;
    }
    for (auto& g : grad) g = {0.0, 0.0};
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t j = i + 1; j < N; ++j) {
        const double d = dist[i * N + j];
        const double w = std::exp(-tau * (d - dmin));
        const double ux = (pts[i][0] - pts[j][0]) / d;
        const double uy = (pts[i][1] - pts[j][1]) / d;
        grad[i][0] += w * ux;
        grad[i][1] += w * uy;
        grad[j][0] -= w * ux;
        grad[j][1] -= w * uy;
      }
    }
    double gmax = 0.0;
    for (const auto& g : grad) gmax = std::max(gmax, std::hypot(g[0], g[1]));
    if (gmax <= 0.0) break;
    const double scale = step / gmax;
    for (std::size_t i = 0; i < N; ++i) {
      pts[i][0] += scale * grad[i][0];
      pts[i][1] += scale * grad[i][1];
      project_to_disk(pts[i]);
    }
  }
  if (min_pairwise_distance(pts) > best_min) best = pts;
  return best;
}

}  // namespace detail

/// Maximizes the minimum pairwise distance of N points in the closed unit
/// disk by multi-start projected soft-min ascent. Returns the best restart;
/// ties go to the lower restart index.
inline PackingSolution solve_point_packing(int n, const PackingOptions& opts = {}) {
  if (n < 2) throw ConfigError("solve_point_packing: N must be >= 2");
  if (opts.restarts < 1 || opts.max_iters < 1) throw ConfigError("solve_point_packing: restarts and max_iters must be >= 1");
  PackingSolution best;
  best.min_distance = -1.0;
  for (int r = 0; r < opts.restarts; ++r) {
    Rng rng(Rng::mix(opts.seed, static_cast<std::uint64_t>(r)));
    // Restarts cycle through initial sharpness levels; a low start smooths
    // towards a repulsion energy, a high one keeps the random start's basin.
    static constexpr std::array<double, 4> kTau0 = {5.0, 20.0, 80.0, 320.0};
    auto pts = detail::packing_restart(n, opts.max_iters, kTau0[static_cast<std::size_t>(r) % kTau0.size()], rng);
    const double m = min_pairwise_distance(pts);
    if (m > best.min_distance) {
      best.points = std::move(pts);
      best.min_distance = m;
      best.best_restart = r;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Normalization and the space report

struct Circle {
  Vec center;
  double radius = 0.0;
};

namespace detail {

inline bool in_circle(const Circle& c, const Vec& p) { return euclidean(c.center, p) <= c.radius * (1.0 + 1e-12) + 1e-15; }

inline Circle circle_two(const Vec& a, const Vec& b) {
  Circle c;
  c.center = {(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0};
  c.radius = euclidean(a, b) / 2.0;
  return c;
}

inline Circle circle_three(const Vec& a, const Vec& b, const Vec& c) {
  const double bx = b[0] - a[0], by = b[1] - a[1];
  const double cx = c[0] - a[0], cy = c[1] - a[1];
  const double d = 2.0 * (bx * cy - by * cx);
  if (std::abs(d) < 1e-300) {
    // Collinear: the widest pair spans the circle.
    Circle best = circle_two(a, b);
    for (const auto& cand : {circle_two(a, c), circle_two(b, c)}) {
      if (cand.radius > best.radius) best = cand;
    }
    return best;
  }
  const double b2 = bx * bx + by * by;
  const double c2 = cx * cx + cy * cy;
  const double ux = (cy * b2 - by * c2) / d;
  const double uy = (bx * c2 - cx * b2) / d;
  Circle out;
  out.center = {a[0] + ux, a[1] + uy};
  out.radius = std::hypot(ux, uy);
  return out;
}

}  // namespace detail

/// Smallest circle containing every point (2-D). Randomized incremental
/// construction with a fixed shuffle seed, so the result is deterministic.
inline Circle min_enclosing_circle(std::vector<Vec> pts) {
  if (pts.empty()) return Circle{{0.0, 0.0}, 0.0};
  for (const auto& p : pts) {
    if (p.size() != 2) throw DataError("min_enclosing_circle: points must be 2-D");
  }
  Rng rng(0x5EED);
  for (std::size_t k = pts.size(); k > 1; --k) std::swap(pts[k - 1], pts[rng.below(k)]);
  Circle c{pts[0], 0.0};
  for (std::size_t i = 1; i < pts.size(); ++i) {
    if (detail::in_circle(c, pts[i])) continue;
    c = Circle{pts[i], 0.0};
    for (std::size_t j = 0; j < i; ++j) {
      if (detail::in_circle(c, pts[j])) continue;
      c = detail::circle_two(pts[i], pts[j]);
      for (std::size_t k = 0; k < j; ++k) {
        if (!detail::in_circle(c, pts[k])) c = detail::circle_three(pts[i], pts[j], pts[k]);
      }
    }
  }
  return c;
}

struct NormalizedStats {
  double delta = 0.0;
  double rho = 0.0;
  Vec center;          // center of the raw bounding disk
  double radius = 0.0; // raw bounding disk radius; points are mapped to radius 1/2
};

struct SpaceReport {
  int n_classes = 0;
  int dim = 0;
  double delta = 0.0;  // raw
  double rho = 0.0;    // raw
  std::optional<NormalizedStats> normalized;
  std::optional<PackingReference> bounds;
  bool in_bound_scope = false;
  std::string note;
  std::vector<std::string> labels;
  std::vector<Vec> centroids;
};

/// Maps a 2-D cloud affinely so its smallest enclosing disk has diameter 1.
inline LabeledCloud normalize_cloud(const LabeledCloud& cloud, Circle* disk_out = nullptr) {
  std::vector<Vec> all;
  for (const auto& c : cloud) all.insert(all.end(), c.points.begin(), c.points.end());
  const Circle disk = min_enclosing_circle(all);
  const double s = disk.radius > 0.0 ? 0.5 / disk.radius : 1.0;
  LabeledCloud out = cloud;
  for (auto& c : out) {
    for (auto& p : c.points) {
      p[0] = (p[0] - disk.center[0]) * s;
      p[1] = (p[1] - disk.center[1]) * s;
    }
  }
  if (disk_out) *disk_out = disk;
  return out;
}

/// delta and rho of the raw cloud; for 2-D clouds with 2..20 classes also the
/// normalized values and the packing bounds they compare against. Table-style
/// listings usually print rho x 100; the report keeps raw rho.
inline SpaceReport analyze_space(const LabeledCloud& cloud) {
  if (cloud.size() < 2) throw DataError("analyze_space: need at least 2 classes");
  SpaceReport rep;
  rep.dim = static_cast<int>(detail::cloud_dim(cloud));
  rep.n_classes = static_cast<int>(cloud.size());
  rep.delta = centroid_min_distance(cloud);
  rep.rho = intra_cluster_dispersion(cloud);
  rep.centroids = centroids(cloud);
  for (const auto& c : cloud) rep.labels.push_back(c.label);
  if (rep.dim != 2) {
    rep.note = "bounds only apply to 2-D embeddings";
    return rep;
  }
  Circle disk;
  const auto norm = normalize_cloud(cloud, &disk);
  rep.normalized = NormalizedStats{centroid_min_distance(norm), intra_cluster_dispersion(norm), disk.center, disk.radius};
  if (rep.n_classes >= kPackingTableMin && rep.n_classes <= kPackingTableMax) {
    rep.bounds = packing_reference(rep.n_classes);
    rep.in_bound_scope = true;
  } else {
    rep.note = "class count outside the packing table range";
  }
  return rep;
}

}  // namespace setmargin

#endif  // SETMARGIN_SPACE_HPP
