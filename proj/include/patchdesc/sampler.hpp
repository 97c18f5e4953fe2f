#pragma once

// Pair combinatorics, stochastic pair sampling and hard-pair mining.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "patchdesc/error.hpp"
#include "patchdesc/rng.hpp"

namespace patchdesc {

/// Patches grouped by 3D point id.
struct DatasetIndex {
  std::vector<std::uint32_t> point_ids;          // unique ids, first-appearance order
  std::vector<std::vector<std::uint32_t>> members;  // patch indices of each point
  std::vector<std::uint32_t> patch_point;        // patch index -> point slot
  std::vector<std::uint32_t> eligible;           // point slots with >= 2 patches

  std::size_t patch_count() const { return patch_point.size(); }
  std::size_t point_count() const { return point_ids.size(); }

  static DatasetIndex from_labels(std::span<const std::uint32_t> labels) {
    if (labels.size() >= (std::size_t{1} << 32)) throw DatasetError("dataset too large for 32-bit patch indices");
    DatasetIndex idx;
    std::unordered_map<std::uint32_t, std::uint32_t> slot;
    idx.patch_point.resize(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      auto [it, inserted] = slot.try_emplace(labels[i], static_cast<std::uint32_t>(idx.point_ids.size()));
      if (inserted) {
        idx.point_ids.push_back(labels[i]);
        idx.members.emplace_back();
      }
      idx.members[it->second].push_back(static_cast<std::uint32_t>(i));
      idx.patch_point[i] = it->second;
    }
    for (std::size_t p = 0; p < idx.members.size(); ++p)
      if (idx.members[p].size() >= 2) idx.eligible.push_back(static_cast<std::uint32_t>(p));
    return idx;
  }

  friend bool operator==(const DatasetIndex&, const DatasetIndex&) = default;
};

struct PairCounts {
  std::uint64_t positives = 0;            // sum n_i (n_i - 1) / 2
  std::uint64_t negatives = 0;            // sum n_i (N - n_i), each unordered pair twice
  std::uint64_t unordered_negatives = 0;  // negatives / 2
};

// Exact in 64 bits: N < 2^32 bounds both sums by N^2.
inline PairCounts count_pairs(const DatasetIndex& index) {
  const std::uint64_t n_total = index.patch_count();
  PairCounts c;
  for (const auto& m : index.members) {
    const std::uint64_t n = m.size();
    c.positives += n * (n - 1) / 2;
    c.negatives += n * (n_total - n);
  }
  c.unordered_negatives = c.negatives / 2;
  return c;
}

struct Pair {
  std::uint32_t a = 0;
  std::uint32_t b = 0;
  bool positive = false;
  friend bool operator==(const Pair&, const Pair&) = default;
};

struct PairBatch {
  std::vector<Pair> pairs;
  std::vector<double> losses;  // parallel to pairs once evaluated
};

/// B_P matching pairs: a point uniformly among points with >= 2 patches, then
/// two distinct patches of it uniformly. Sampling is with replacement.
inline PairBatch sample_positives(const DatasetIndex& index, std::size_t count, Rng& rng) {
  if (index.eligible.empty()) throw DatasetError("sample_positives: no point has two patches");
  PairBatch batch;
  batch.pairs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto& m = index.members[index.eligible[rng.below(index.eligible.size())]];
    const std::size_t ia = rng.below(m.size());
    std::size_t ib = rng.below(m.size() - 1);
    if (ib >= ia) ++ib;
    batch.pairs.push_back({m[ia], m[ib], true});
  }
  return batch;
}

/// B_N non-matching pairs by rejection on uniform pairs of distinct patches.
/// `draws`, when given, receives the number of candidate pairs drawn.
inline PairBatch sample_negatives(const DatasetIndex& index, std::size_t count, Rng& rng,
                                  std::uint64_t* draws = nullptr) {
  if (index.point_count() < 2) throw DatasetError("sample_negatives: need at least two distinct points");
  const std::size_t n = index.patch_count();
  PairBatch batch;
  batch.pairs.reserve(count);
  std::uint64_t tries = 0;
  while (batch.pairs.size() < count) {
    ++tries;
    const auto a = static_cast<std::uint32_t>(rng.below(n));
    auto b = static_cast<std::uint32_t>(rng.below(n - 1));
    if (b >= a) ++b;
    if (index.patch_point[a] == index.patch_point[b]) continue;
    batch.pairs.push_back({a, b, false});
  }
  if (draws) *draws = tries;
  return batch;
}

/// Keeps the `keep` highest-loss pairs. Ties go to the earlier batch
/// position; the output preserves the original order.
inline PairBatch mine(const PairBatch& batch, std::size_t keep) {
  if (batch.losses.size() != batch.pairs.size()) throw std::invalid_argument("mine: losses not computed");
  if (keep > batch.pairs.size())
    throw std::invalid_argument("mine: keep " + std::to_string(keep) + " exceeds batch size " +
                                std::to_string(batch.pairs.size()));
  std::vector<std::size_t> order(batch.pairs.size());
  std::iota(order.begin(), order.end(), 0);
  const auto harder = [&](std::size_t i, std::size_t j) {
    if (batch.losses[i] != batch.losses[j]) return batch.losses[i] > batch.losses[j];
    return i < j;
  };
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), harder);
  order.resize(keep);
  std::sort(order.begin(), order.end());
  PairBatch out;
  out.pairs.reserve(keep);
  out.losses.reserve(keep);
  for (std::size_t i : order) {
    out.pairs.push_back(batch.pairs[i]);
    out.losses.push_back(batch.losses[i]);
  }
  return out;
}

struct MiningConfig {
  std::size_t positives = 128;       // B_P
  std::size_t negatives = 256;       // B_N
  std::size_t kept_positives = 128;  // B_P^M
  std::size_t kept_negatives = 128;  // B_N^M

  double positive_ratio() const { return static_cast<double>(positives) / static_cast<double>(kept_positives); }
  double negative_ratio() const { return static_cast<double>(negatives) / static_cast<double>(kept_negatives); }
  bool mining_enabled() const { return positives != kept_positives || negatives != kept_negatives; }

  void validate() const {
    if (kept_positives < 1 || kept_negatives < 1) throw std::invalid_argument("mining: kept counts must be >= 1");
    if (positives < kept_positives || negatives < kept_negatives)
      throw std::invalid_argument("mining: pool sizes must be >= kept counts");
  }

  // R_P/R_N mining with a fixed number of kept pairs of each kind.
  static MiningConfig ratios(std::size_t r_p, std::size_t r_n, std::size_t kept = 128) {
    return {r_p * kept, r_n * kept, kept, kept};
  }
};

struct IterationTimings {
  double mining_forward_seconds = 0;  // forward pass over every candidate pair
  double total_seconds = 0;           // whole iteration
  bool mining_enabled = true;
};

/// Share of an iteration spent forwarding candidates. nullopt when nothing
/// is mined (every candidate is backpropagated anyway).
inline std::optional<double> mining_cost_fraction(const IterationTimings& t) {
  if (!t.mining_enabled) return std::nullopt;
  if (!(t.total_seconds > 0)) throw std::invalid_argument("mining_cost_fraction: zero total time");
  return std::clamp(t.mining_forward_seconds / t.total_seconds, 0.0, 1.0);
}

}  // namespace patchdesc
