#pragma once

// Matching benchmark: for each query point an anchor patch, one true match
// and n_neg distractors from other points. Distances are pooled over all
// queries into PR and ROC curves; CMC uses the rank of the true match within
// its own query.
//
// Conventions:
//   - Threshold sweeps enter all items at equal distance together.
//   - PR starts at recall 0 with the precision of the first threshold.
//   - ROC plots TPR against TNR; both AUCs are trapezoidal.
//   - CMC ranks are pessimistic (distractors at the same distance as the
//     true match rank ahead of it); CMC AUC is the mean of CMC(k) over
//     k = 1..n_candidates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "patchdesc/error.hpp"
#include "patchdesc/rng.hpp"
#include "patchdesc/sampler.hpp"

namespace patchdesc {

enum class CurveKind { PR, ROC, CMC };

inline const char* curve_kind_name(CurveKind k) {
  switch (k) {
    case CurveKind::PR: return "PR";
    case CurveKind::ROC: return "ROC";
    case CurveKind::CMC: return "CMC";
  }
  return "?";
}

struct CurvePoint {
  double x = 0;
  double y = 0;
  friend bool operator==(const CurvePoint&, const CurvePoint&) = default;
};

struct Curve {
  CurveKind kind = CurveKind::PR;
  std::vector<CurvePoint> points;  // non-decreasing in x
  double auc = 0;
};

inline double trapezoid(std::span<const CurvePoint> pts) {
  double area = 0;
  for (std::size_t i = 1; i < pts.size(); ++i) area += (pts[i].x - pts[i - 1].x) * (pts[i].y + pts[i - 1].y) / 2;
  return area;
}

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

struct Query {
  std::uint32_t anchor = 0;
  std::uint32_t match = 0;
  std::vector<std::uint32_t> distractors;
};

struct EvalTask {
  std::vector<Query> queries;
  std::size_t n_neg = 0;
  std::uint64_t seed = 0;
};

/// Draws `n_points` distinct points with >= 2 patches, two distinct patches
/// of each, and `n_neg` distinct distractors from other points.
inline EvalTask build_eval_task(const DatasetIndex& index, std::size_t n_points, std::size_t n_neg,
                                std::uint64_t seed) {
  if (n_points == 0) throw std::invalid_argument("build_eval_task: n_points must be >= 1");
  if (index.eligible.size() < n_points)
    throw DatasetError("build_eval_task: " + std::to_string(n_points) + " query points requested but only " +
                       std::to_string(index.eligible.size()) + " points have two patches");
  const std::size_t n_total = index.patch_count();
  Rng rng(seed);
  EvalTask task;
  task.n_neg = n_neg;
  task.seed = seed;
  std::vector<std::uint32_t> points = index.eligible;
  for (std::size_t i = 0; i < n_points; ++i) std::swap(points[i], points[i + rng.below(points.size() - i)]);
  for (std::size_t qi = 0; qi < n_points; ++qi) {
    const auto& own = index.members[points[qi]];
    const std::size_t available = n_total - own.size();
    if (n_neg > available)
      throw DatasetError("build_eval_task: " + std::to_string(n_neg) + " distractors requested but only " +
                         std::to_string(available) + " non-matching patches exist");
    Query q;
    const std::size_t ia = rng.below(own.size());
    std::size_t ib = rng.below(own.size() - 1);
    if (ib >= ia) ++ib;
    q.anchor = own[ia];
    q.match = own[ib];
    q.distractors.reserve(n_neg);
    const std::uint32_t own_slot = index.patch_point[q.anchor];
    if (2 * n_neg <= available) {
      std::unordered_set<std::uint32_t> seen;
      while (q.distractors.size() < n_neg) {
        const auto c = static_cast<std::uint32_t>(rng.below(n_total));
        if (index.patch_point[c] == own_slot || !seen.insert(c).second) continue;
        q.distractors.push_back(c);
      }
    } else {
      std::vector<std::uint32_t> pool;
      pool.reserve(available);
      for (std::uint32_t c = 0; c < n_total; ++c)
        if (index.patch_point[c] != own_slot) pool.push_back(c);
      for (std::size_t i = 0; i < n_neg; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
      q.distractors.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_neg));
    }
    task.queries.push_back(std::move(q));
  }
  return task;
}

// Fold f uses seed + f.
inline std::vector<EvalTask> build_eval_folds(const DatasetIndex& index, std::size_t n_points, std::size_t n_neg,
                                              std::size_t folds, std::uint64_t seed) {
  std::vector<EvalTask> out;
  for (std::size_t f = 0; f < folds; ++f) out.push_back(build_eval_task(index, n_points, n_neg, seed + f));
  return out;
}

// Every patch a set of tasks touches, sorted.
inline std::vector<std::uint32_t> referenced_patches(std::span<const EvalTask> tasks) {
  std::vector<std::uint32_t> out;
  for (const auto& t : tasks)
    for (const auto& q : t.queries) {
      out.push_back(q.anchor);
      out.push_back(q.match);
      out.insert(out.end(), q.distractors.begin(), q.distractors.end());
    }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Curves
// ---------------------------------------------------------------------------

namespace detail {

struct SweepStep {
  std::size_t tp = 0;
  std::size_t fp = 0;
};

// Cumulative (TP, FP) after each group of equal distances, ascending.
inline std::vector<SweepStep> threshold_sweep(std::span<const double> distances, std::span<const std::uint8_t> labels,
                                              std::size_t& positives, std::size_t& negatives) {
  if (distances.size() != labels.size()) throw std::invalid_argument("curve: distances and labels differ in length");
  std::vector<std::size_t> order(distances.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return distances[a] < distances[b]; });
  positives = 0;
  for (auto l : labels) positives += l ? 1 : 0;
  negatives = labels.size() - positives;
  std::vector<SweepStep> steps;
  SweepStep cur;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (labels[order[i]] ? cur.tp : cur.fp)++;
    if (i + 1 == order.size() || distances[order[i + 1]] != distances[order[i]]) steps.push_back(cur);
  }
  return steps;
}

}  // namespace detail

inline Curve pr_curve(std::span<const double> distances, std::span<const std::uint8_t> labels) {
  std::size_t pos = 0, neg = 0;
  const auto steps = detail::threshold_sweep(distances, labels, pos, neg);
  if (pos == 0) throw std::invalid_argument("pr_curve: no positives");
  Curve c{CurveKind::PR, {}, 0};
  c.points.reserve(steps.size() + 1);
  for (const auto& s : steps) {
    const double precision = static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp);
    const double recall = static_cast<double>(s.tp) / static_cast<double>(pos);
    if (c.points.empty()) c.points.push_back({0.0, precision});
    c.points.push_back({recall, precision});
  }
  c.auc = trapezoid(c.points);
  return c;
}

inline Curve roc_curve(std::span<const double> distances, std::span<const std::uint8_t> labels) {
  std::size_t pos = 0, neg = 0;
  const auto steps = detail::threshold_sweep(distances, labels, pos, neg);
  if (pos == 0) throw std::invalid_argument("roc_curve: no positives");
  if (neg == 0) throw std::invalid_argument("roc_curve: no negatives");
  Curve c{CurveKind::ROC, {}, 0};
  c.points.reserve(steps.size() + 1);
  // Built with TNR descending, then reversed so x is ascending.
  c.points.push_back({1.0, 0.0});
  for (const auto& s : steps)
    c.points.push_back({1.0 - static_cast<double>(s.fp) / static_cast<double>(neg),
                        static_cast<double>(s.tp) / static_cast<double>(pos)});
  std::reverse(c.points.begin(), c.points.end());
  c.auc = trapezoid(c.points);
  return c;
}

/// ranks are 1-based positions of each query's true match among
/// n_candidates candidates.
inline Curve cmc_curve(std::span<const std::size_t> ranks, std::size_t n_candidates) {
  if (n_candidates == 0) throw std::invalid_argument("cmc_curve: no candidates");
  if (ranks.empty()) throw std::invalid_argument("cmc_curve: no queries");
  std::vector<std::size_t> hist(n_candidates + 1, 0);
  for (auto r : ranks) {
    if (r < 1 || r > n_candidates)
      throw std::out_of_range("cmc_curve: rank " + std::to_string(r) + " outside [1, " + std::to_string(n_candidates) + "]");
    ++hist[r];
  }
  Curve c{CurveKind::CMC, {}, 0};
  c.points.reserve(n_candidates);
  std::size_t cum = 0;
  double sum = 0;
  for (std::size_t k = 1; k <= n_candidates; ++k) {
    cum += hist[k];
    const double v = static_cast<double>(cum) / static_cast<double>(ranks.size());
    c.points.push_back({static_cast<double>(k), v});
    sum += v;
  }
  c.auc = sum / static_cast<double>(n_candidates);
  return c;
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

using DistanceFn = std::function<double(std::uint32_t, std::uint32_t)>;

struct ScoredTask {
  std::vector<double> distances;  // per query: true match, then distractors
  std::vector<std::uint8_t> labels;
  std::vector<std::size_t> ranks;
  std::size_t n_candidates = 0;
};

inline ScoredTask score_task(const EvalTask& task, const DistanceFn& distance) {
  ScoredTask s;
  s.n_candidates = task.n_neg + 1;
  s.distances.reserve(task.queries.size() * s.n_candidates);
  s.labels.reserve(s.distances.capacity());
  for (const auto& q : task.queries) {
    const double dp = distance(q.anchor, q.match);
    s.distances.push_back(dp);
    s.labels.push_back(1);
    std::size_t ahead = 0;
    for (auto d : q.distractors) {
      const double dn = distance(q.anchor, d);
      s.distances.push_back(dn);
      s.labels.push_back(0);
      if (dn <= dp) ++ahead;
    }
    s.ranks.push_back(ahead + 1);
  }
  return s;
}

struct FoldResult {
  Curve pr;
  Curve roc;
  Curve cmc;
};

struct EvalResult {
  std::vector<FoldResult> folds;
  double mean_pr_auc = 0;
  double mean_roc_auc = 0;
  double mean_cmc_auc = 0;
  double mean_rank1 = 0;  // CMC(1)
};

inline FoldResult evaluate_fold(const EvalTask& task, const DistanceFn& distance) {
  const ScoredTask s = score_task(task, distance);
  FoldResult r;
  r.pr = pr_curve(s.distances, s.labels);
  if (task.n_neg > 0) {
    r.roc = roc_curve(s.distances, s.labels);
  } else {
    r.roc = Curve{CurveKind::ROC, {}, std::nan("")};
  }
  r.cmc = cmc_curve(s.ranks, s.n_candidates);
  return r;
}

inline EvalResult evaluate(std::span<const EvalTask> folds, const DistanceFn& distance) {
  if (folds.empty()) throw std::invalid_argument("evaluate: no folds");
  EvalResult res;
  for (const auto& t : folds) {
    res.folds.push_back(evaluate_fold(t, distance));
    const auto& f = res.folds.back();
    res.mean_pr_auc += f.pr.auc;
    res.mean_roc_auc += f.roc.auc;
    res.mean_cmc_auc += f.cmc.auc;
    res.mean_rank1 += f.cmc.points.front().y;
  }
  const double n = static_cast<double>(folds.size());
  res.mean_pr_auc /= n;
  res.mean_roc_auc /= n;
  res.mean_cmc_auc /= n;
  res.mean_rank1 /= n;
  return res;
}

// ---------------------------------------------------------------------------
// Curve files
// ---------------------------------------------------------------------------

// "# kind <PR|ROC|CMC>", "# auc <value>", "# x y", then one "x<TAB>y" line
// per point. Numbers use 17 significant digits.
inline std::string curve_text(const Curve& c) {
  std::string out;
  char buf[96];
  out += "# kind ";
  out += curve_kind_name(c.kind);
  std::snprintf(buf, sizeof buf, "\n# auc %.17g\n# x y\n", c.auc);
  out += buf;
  for (const auto& p : c.points) {
    std::snprintf(buf, sizeof buf, "%.17g\t%.17g\n", p.x, p.y);
    out += buf;
  }
  return out;
}

inline Curve parse_curve(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  Curve c;
  auto expect = [&](const std::string& prefix) {
    if (!std::getline(in, line) || line.rfind(prefix, 0) != 0) throw FormatError("curve file: expected '" + prefix + "'");
    return line.substr(prefix.size());
  };
  const std::string kind = expect("# kind ");
  if (kind == "PR") c.kind = CurveKind::PR;
  else if (kind == "ROC") c.kind = CurveKind::ROC;
  else if (kind == "CMC") c.kind = CurveKind::CMC;
  else throw FormatError("curve file: unknown kind '" + kind + "'");
  c.auc = std::stod(expect("# auc "));
  expect("# x y");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    CurvePoint p;
    if (!(ls >> p.x >> p.y)) throw FormatError("curve file: bad point line '" + line + "'");
    c.points.push_back(p);
  }
  return c;
}

inline void write_curve(const std::string& path, const Curve& c) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write curve file '" + path + "'");
  f << curve_text(c);
}

inline Curve read_curve(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open curve file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_curve(ss.str());
}

}  // namespace patchdesc
