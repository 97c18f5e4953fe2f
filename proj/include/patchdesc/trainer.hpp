#pragma once

// Siamese training loop with pair mining:
//
//   per iteration: sample B_P positives and B_N negatives, forward every
//   distinct patch once, keep the B_P^M / B_N^M highest-loss pairs, average
//   the hinge loss over the kept pairs, backpropagate, one momentum SGD
//   step. Every `validation_every` iterations the PR AUC on held-out points
//   decides which weights are returned.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "patchdesc/checkpoint.hpp"
#include "patchdesc/data.hpp"
#include "patchdesc/descriptors.hpp"
#include "patchdesc/error.hpp"
#include "patchdesc/eval.hpp"
#include "patchdesc/loss.hpp"
#include "patchdesc/network.hpp"
#include "patchdesc/parallel.hpp"
#include "patchdesc/sampler.hpp"

namespace patchdesc {

struct TrainConfig {
  double lr0 = 0.01;
  std::uint64_t lr_decay_every = 10000;
  double lr_decay_factor = 10.0;
  double momentum = 0.9;
  MiningConfig mining;
  std::uint64_t max_iterations = 0;
  std::uint64_t validation_every = 500;
  std::uint64_t seed = 1;
  std::string init_from;  // optional warm-start checkpoint
  PairLossConfig loss;
  // Validation replica; points and distractors are capped to what the
  // validation set can supply.
  std::size_t val_points = 1000;
  std::size_t val_negatives = 100;
  std::size_t val_folds = 1;
  std::uint64_t eval_seed = 1234;
  // The best `final_candidates` checkpoints under the reduced protocol are
  // re-scored with this protocol and the winner is returned.
  std::size_t final_points = 10000;
  std::size_t final_negatives = 1000;
  std::size_t final_folds = 10;
  std::size_t final_candidates = 3;
  std::size_t threads = 1;
  // Keep forward activations of every candidate patch when they fit,
  // otherwise recompute them for the kept pairs.
  std::size_t cache_limit_bytes = std::size_t{1} << 30;
  // Mining cost from wall-clock time instead of multiply-accumulate counts.
  // Wall-clock figures make the training log machine dependent.
  bool wallclock_cost = false;

  void validate() const {
    if (!(lr0 > 0)) throw std::invalid_argument("lr0 must be positive");
    if (!(lr_decay_factor > 1)) throw std::invalid_argument("lr_decay_factor must be > 1");
    if (lr_decay_every == 0) throw std::invalid_argument("lr_decay_every must be >= 1");
    if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("momentum must be in [0, 1)");
    if (validation_every == 0) throw std::invalid_argument("validation_every must be >= 1");
    if (val_folds == 0 || val_points == 0) throw std::invalid_argument("validation protocol needs points and folds");
    if (final_folds == 0 || final_points == 0 || final_candidates == 0)
      throw std::invalid_argument("final selection protocol needs points, folds and candidates");
    mining.validate();
    loss.validate();
  }
};

/// Mean and standard deviation over every pixel (scaled to [0, 1]) of every
/// patch, accumulated in 64 bits.
inline NormStats compute_norm_stats(std::span<const Patch> patches) {
  if (patches.empty()) throw DatasetError("compute_norm_stats: no patches");
  std::uint64_t sum = 0;
  for (const auto& p : patches)
    for (auto v : p.pixels) sum += v;
  const double n = static_cast<double>(patches.size()) * static_cast<double>(kPatchPixels);
  const double mean255 = static_cast<double>(sum) / n;
  double ss = 0;
  for (const auto& p : patches)
    for (auto v : p.pixels) {
      const double d = v - mean255;
      ss += d * d;
    }
  const double std255 = std::sqrt(ss / n);
  if (!(std255 > 0)) throw DatasetError("compute_norm_stats: constant dataset (standard deviation 0)");
  return {mean255 / 255.0, std255 / 255.0};
}

inline double lr_at(std::uint64_t iteration, const TrainConfig& cfg) {
  const auto steps = static_cast<double>(iteration / cfg.lr_decay_every);
  return cfg.lr0 / std::pow(cfg.lr_decay_factor, steps);
}

/// v <- momentum * v - lr * g;  w <- w + v
template <typename T>
void sgd_step(NetworkState<T>& state, const std::vector<Tensor<T>>& grads, std::vector<Tensor<T>>& velocity,
              double lr, double momentum) {
  auto params = state.parameters();
  if (grads.size() != params.size() || velocity.size() != params.size())
    throw ShapeError("sgd_step: gradient/velocity buffers do not match the network");
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i]->require_same_shape(grads[i], "sgd_step");
    params[i]->require_same_shape(velocity[i], "sgd_step");
    if (!grads[i].all_finite()) throw NumericError("sgd_step: non-finite gradient in parameter tensor " + std::to_string(i));
  }
  const T m = static_cast<T>(momentum), r = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* w = params[i]->data();
    T* v = velocity[i].data();
    const T* g = grads[i].data();
    for (std::size_t k = 0; k < params[i]->size(); ++k) {
      v[k] = m * v[k] - r * g[k];
      w[k] += v[k];
    }
  }
}

// ---------------------------------------------------------------------------
// Training log
// ---------------------------------------------------------------------------

struct LogRecord {
  std::uint64_t iteration = 0;  // iterations completed
  double loss_mean = 0;         // over the kept pairs, before the update
  double lr = 0;
  std::optional<double> mining_cost;  // nullopt when nothing is mined
  std::optional<double> val_pr_auc;   // only on validation iterations
};

inline constexpr const char* kLogHeader = "# iteration\tloss_mean\tlr\tmining_cost\tval_pr_auc";

// Tab-separated; "---" for no mining, "-" for no validation.
inline std::string format_log_record(const LogRecord& r) {
  char buf[256];
  char cost[32] = "---", val[32] = "-";
  if (r.mining_cost) std::snprintf(cost, sizeof cost, "%.4f", *r.mining_cost);
  if (r.val_pr_auc) std::snprintf(val, sizeof val, "%.9f", *r.val_pr_auc);
  std::snprintf(buf, sizeof buf, "%llu\t%.9g\t%.9g\t%s\t%s", static_cast<unsigned long long>(r.iteration), r.loss_mean,
                r.lr, cost, val);
  return buf;
}

inline LogRecord parse_log_record(const std::string& line) {
  LogRecord r;
  unsigned long long it = 0;
  char cost[32] = {0}, val[32] = {0};
  if (std::sscanf(line.c_str(), "%llu\t%lf\t%lf\t%31s\t%31s", &it, &r.loss_mean, &r.lr, cost, val) != 5)
    throw FormatError("training log: bad record '" + line + "'");
  r.iteration = it;
  if (std::string(cost) != "---") r.mining_cost = std::stod(cost);
  if (std::string(val) != "-") r.val_pr_auc = std::stod(val);
  return r;
}

struct TrainResult {
  NetworkState<float> best;
  std::vector<LogRecord> log;
  std::optional<double> best_val_pr_auc;    // reduced protocol, as logged
  std::optional<double> final_pr_auc;       // full protocol, after re-scoring
  std::uint64_t best_iteration = 0;
};

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

// Evaluation folds capped to what the validation set supports.
inline std::vector<EvalTask> capped_tasks(const PatchDataset& validation, std::size_t n_points, std::size_t n_neg,
                                          std::size_t folds, std::uint64_t seed) {
  const auto& idx = validation.index;
  const std::size_t points = std::min(n_points, idx.eligible.size());
  if (points == 0) throw DatasetError("validation set has no point with two patches");
  std::size_t max_own = 0;
  for (auto p : idx.eligible) max_own = std::max(max_own, idx.members[p].size());
  const std::size_t negatives = std::min(n_neg, idx.patch_count() - max_own);
  return build_eval_folds(idx, points, negatives, folds, seed);
}

inline std::vector<EvalTask> validation_tasks(const PatchDataset& validation, const TrainConfig& cfg) {
  return capped_tasks(validation, cfg.val_points, cfg.val_negatives, cfg.val_folds, cfg.eval_seed);
}

inline std::vector<EvalTask> final_tasks(const PatchDataset& validation, const TrainConfig& cfg) {
  return capped_tasks(validation, cfg.final_points, cfg.final_negatives, cfg.final_folds, cfg.eval_seed);
}

inline EvalResult evaluate_network(const NetworkState<float>& state, const PatchDataset& ds,
                                   std::span<const EvalTask> tasks, std::size_t threads = 1) {
  const auto needed = referenced_patches(tasks);
  const std::size_t dim = output_dim(state.spec);
  std::vector<float> table(needed.size() * dim);
  parallel_for(needed.size(), threads, [&](std::size_t i) {
    const auto d = describe(state, patch_tensor<float>(ds.patches.at(needed[i]), state.norm));
    std::copy(d.values().begin(), d.values().end(), table.begin() + static_cast<std::ptrdiff_t>(i * dim));
  });
  std::vector<std::uint32_t> slot(ds.size(), 0);
  for (std::size_t i = 0; i < needed.size(); ++i) slot[needed[i]] = static_cast<std::uint32_t>(i);
  return evaluate(tasks, [&](std::uint32_t a, std::uint32_t b) {
    return l2_distance<float>(std::span<const float>(table.data() + slot[a] * dim, dim),
                              std::span<const float>(table.data() + slot[b] * dim, dim));
  });
}

// ---------------------------------------------------------------------------
// One iteration
// ---------------------------------------------------------------------------

inline constexpr std::size_t kGradientBlocks = 16;

struct IterationOutcome {
  double loss_mean = 0;
  IterationTimings timings;
  PairBatch kept;
};

/// Computes the averaged hinge-loss gradient for one sampled candidate pool
/// and applies nothing; `grads` receives the summed parameter gradients.
/// Patches are backpropagated once each with their accumulated descriptor
/// gradient, which equals backpropagating every pair separately.
inline IterationOutcome mined_gradient(const NetworkState<float>& state, const PatchDataset& train,
                                       const PairBatch& positives, const PairBatch& negatives, const TrainConfig& cfg,
                                       std::vector<Tensor<float>>& grads) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  IterationOutcome out;
  out.timings.mining_enabled = cfg.mining.mining_enabled();

  std::vector<std::uint32_t> patches;
  for (const auto* b : {&positives, &negatives})
    for (const auto& p : b->pairs) {
      patches.push_back(p.a);
      patches.push_back(p.b);
    }
  std::sort(patches.begin(), patches.end());
  patches.erase(std::unique(patches.begin(), patches.end()), patches.end());
  std::map<std::uint32_t, std::size_t> slot;
  for (std::size_t i = 0; i < patches.size(); ++i) slot[patches[i]] = i;

  // Rough activation footprint of one cached forward.
  std::size_t per_patch = 0;
  {
    const auto trace = spatial_trace(state.spec);
    for (std::size_t i = 0; i < state.spec.conv.size(); ++i)
      per_patch += 3 * state.spec.conv[i].filters * trace[2 * i + 1] * trace[2 * i + 1] * sizeof(float);
  }
  const bool keep_caches = per_patch * patches.size() <= cfg.cache_limit_bytes;

  std::vector<ForwardCache<float>> caches(keep_caches ? patches.size() : 0);
  std::vector<Tensor<float>> desc(patches.size());
  parallel_for(patches.size(), cfg.threads, [&](std::size_t i) {
    auto x = patch_tensor<float>(train.patches[patches[i]], state.norm);
    if (keep_caches) {
      caches[i] = forward(state, std::move(x));
      desc[i] = caches[i].output();
    } else {
      desc[i] = describe(state, x);
    }
  });

  auto score = [&](const PairBatch& in) {
    PairBatch b = in;
    b.losses.resize(b.pairs.size());
    for (std::size_t i = 0; i < b.pairs.size(); ++i) {
      const double d = l2_distance(desc[slot[b.pairs[i].a]], desc[slot[b.pairs[i].b]]);
      b.losses[i] = pair_loss(d, b.pairs[i].positive, cfg.loss);
      if (!std::isfinite(b.losses[i])) throw NumericError("non-finite loss during training");
    }
    return b;
  };
  const PairBatch kept_pos = mine(score(positives), cfg.mining.kept_positives);
  const PairBatch kept_neg = mine(score(negatives), cfg.mining.kept_negatives);
  out.kept = kept_pos;
  out.kept.pairs.insert(out.kept.pairs.end(), kept_neg.pairs.begin(), kept_neg.pairs.end());
  out.kept.losses.insert(out.kept.losses.end(), kept_neg.losses.begin(), kept_neg.losses.end());
  const auto t_mined = clock::now();

  const double scale = 1.0 / static_cast<double>(out.kept.pairs.size());
  double loss_sum = 0;
  std::map<std::uint32_t, Tensor<float>> grad_desc;
  for (std::size_t i = 0; i < out.kept.pairs.size(); ++i) {
    const auto& p = out.kept.pairs[i];
    loss_sum += out.kept.losses[i];
    const auto& da = desc[slot[p.a]];
    const auto& db = desc[slot[p.b]];
    Tensor<float> g = pair_descriptor_grad(da, db, p.positive, cfg.loss, scale);
    auto [ia, fresh_a] = grad_desc.try_emplace(p.a, g.shape());
    ia->second += g;
    g *= -1.0f;
    auto [ib, fresh_b] = grad_desc.try_emplace(p.b, g.shape());
    ib->second += g;
  }
  out.loss_mean = loss_sum * scale;

  std::vector<std::pair<std::uint32_t, const Tensor<float>*>> work;
  for (const auto& [patch, g] : grad_desc) {
    bool nonzero = false;
    for (float v : g.values()) nonzero |= v != 0.0f;
    if (nonzero) work.emplace_back(patch, &g);
  }
  // Fixed blocks summed in order: the result does not depend on the thread count.
  const std::size_t blocks = std::min(kGradientBlocks, work.size());
  std::vector<std::vector<Tensor<float>>> partial(blocks);
  parallel_for(blocks, cfg.threads, [&](std::size_t b) {
    partial[b] = zero_grads(state);
    for (std::size_t i = work.size() * b / blocks; i < work.size() * (b + 1) / blocks; ++i) {
      const auto [patch, g] = work[i];
      if (keep_caches) {
        backward(state, caches[slot.at(patch)], *g, partial[b]);
      } else {
        backward(state, forward(state, patch_tensor<float>(train.patches[patch], state.norm)), *g, partial[b]);
      }
    }
  });
  for (auto& g : grads) g.fill(0.0f);
  for (auto& part : partial)
    if (!part.empty())
      for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += part[i];

  const auto t_end = clock::now();
  if (cfg.wallclock_cost) {
    out.timings.mining_forward_seconds = std::chrono::duration<double>(t_mined - t0).count();
    out.timings.total_seconds = std::chrono::duration<double>(t_end - t0).count();
  } else {
    // A backward pass costs two forwards (input and weight gradients).
    const double f = static_cast<double>(forward_macs(state.spec));
    const double learn = static_cast<double>(work.size()) * f * (keep_caches ? 2.0 : 3.0);
    out.timings.mining_forward_seconds = static_cast<double>(patches.size()) * f;
    out.timings.total_seconds = out.timings.mining_forward_seconds + learn;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full loop
// ---------------------------------------------------------------------------

/// Trains `spec` (or continues the `cfg.init_from` checkpoint with fresh
/// momentum) on `train`, selecting the iteration with the best validation
/// PR AUC. `on_record` sees each log record as it is produced.
inline TrainResult train_network(const PatchDataset& train, const PatchDataset& validation, const NetworkSpec& spec,
                                 const TrainConfig& cfg, const std::function<void(const LogRecord&)>& on_record = {}) {
  cfg.validate();
  if (train.index.eligible.empty() || train.index.point_count() < 2)
    throw DatasetError("training set too small: needs two points and a point with two patches");

  NetworkState<float> state;
  if (!cfg.init_from.empty()) {
    state = load_checkpoint(cfg.init_from);
    if (resolved_spec(state.spec) != resolved_spec(spec))
      throw std::invalid_argument("--init-from checkpoint architecture '" + state.spec.name + "' does not match '" +
                                  spec.name + "'");
  } else {
    state = build_network<float>(spec, cfg.seed);
    state.norm = compute_norm_stats(train.patches);
  }

  TrainResult result;
  result.best = state;
  result.best_iteration = state.iteration;
  if (cfg.max_iterations == 0) return result;

  const auto tasks = validation_tasks(validation, cfg);
  auto grads = zero_grads(state);
  auto velocity = zero_grads(state);
  Rng rng(cfg.seed ^ 0xA5A5A5A55A5A5A5AULL);
  const std::uint64_t start = state.iteration;
  std::vector<std::pair<double, NetworkState<float>>> candidates;

  for (std::uint64_t step = 0; step < cfg.max_iterations; ++step) {
    const std::uint64_t it = start + step;
    const PairBatch pos = sample_positives(train.index, cfg.mining.positives, rng);
    const PairBatch neg = sample_negatives(train.index, cfg.mining.negatives, rng);
    const auto outcome = mined_gradient(state, train, pos, neg, cfg, grads);
    const double lr = lr_at(it, cfg);
    sgd_step(state, grads, velocity, lr, cfg.momentum);
    state.iteration = it + 1;

    LogRecord rec;
    rec.iteration = state.iteration;
    rec.loss_mean = outcome.loss_mean;
    rec.lr = lr;
    rec.mining_cost = mining_cost_fraction(outcome.timings);
    if ((step + 1) % cfg.validation_every == 0 || step + 1 == cfg.max_iterations) {
      const double auc = evaluate_network(state, validation, tasks, cfg.threads).mean_pr_auc;
      rec.val_pr_auc = auc;
      // Top candidates by reduced AUC; earlier iterations win ties.
      auto pos_it = std::find_if(candidates.begin(), candidates.end(), [&](const auto& c) { return auc > c.first; });
      if (static_cast<std::size_t>(pos_it - candidates.begin()) < cfg.final_candidates) {
        candidates.insert(pos_it, {auc, state});
        if (candidates.size() > cfg.final_candidates) candidates.pop_back();
      }
    }
    result.log.push_back(rec);
    if (on_record) on_record(rec);
  }

  const auto full = final_tasks(validation, cfg);
  for (const auto& [auc, cand] : candidates) {
    const double score = evaluate_network(cand, validation, full, cfg.threads).mean_pr_auc;
    if (!result.final_pr_auc || score > *result.final_pr_auc) {
      result.final_pr_auc = score;
      result.best_val_pr_auc = auc;
      result.best = cand;
      result.best_iteration = cand.iteration;
    }
  }
  return result;
}

}  // namespace patchdesc
