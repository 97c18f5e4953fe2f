// Acceptance suite: prints one PASS/FAIL line per criterion (1-10) with the
// measured figures, and exits nonzero if any criterion fails.
//
// Environment:
//   PATCHDESC_BROWN_DATA  colon-separated dataset paths (e.g. the liberty and
//                         yosemite mosaic directories) for criterion 8.
//   PATCHDESC_ACCEPTANCE_THREADS  worker threads for the training runs
//                         (default 1).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "patchdesc/checkpoint.hpp"
#include "patchdesc/config.hpp"
#include "patchdesc/experiment.hpp"
#include "patchdesc/gradcheck.hpp"

using namespace patchdesc;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::size_t env_threads() {
  const char* v = std::getenv("PATCHDESC_ACCEPTANCE_THREADS");
  return v ? std::max<std::size_t>(1, std::strtoul(v, nullptr, 10)) : 1;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "patchdesc_acceptance" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------

Outcome gradients() {
  const auto t0 = Clock::now();
  bool ok = true;
  double worst = 0;
  std::string failed;
  auto take = [&](const GradCheckResult& r) {
    worst = std::max(worst, r.max_rel_error);
    std::printf("    %-26s max rel error %.2e (tol %.0e)\n", r.name.c_str(), r.max_rel_error, r.tolerance);
    if (!r.pass()) ok = false, failed += " " + r.name;
  };
  for (const auto& r : layer_gradchecks(1)) take(r);
  take(network_gradcheck(registry_spec("CNN3"), 1, 16, 4));
  take(network_gradcheck(narrow_cnn3_spec(), 2, 0, 8));
  const double t = seconds_since(t0);
  ok = ok && t < 120;
  return {ok, fmt("worst relative error %.2e, %.1f s%s", worst, t, failed.empty() ? "" : (" failing:" + failed).c_str())};
}

Outcome architectures() {
  const std::map<std::string, std::size_t> published = {{"CNN1_NN1", 68352},  {"CNN2", 27776},   {"CNN2a_NN1", 145088},
                                                        {"CNN2b_NN1", 48576}, {"CNN3_NN1", 62784}, {"CNN3", 46272},
                                                        {"CNN3_WIDE", 110496}};
  bool ok = registry_names().size() == 7;
  Rng rng(3);
  const auto x = Tensor<float>::uniform({1, 64, 64}, rng, -1, 1);
  std::printf("    %-10s %10s %10s  (informational)\n", "arch", "params", "published");
  for (const auto& name : registry_names()) {
    try {
      const auto spec = registry_spec(name);
      const auto state = build_network<float>(spec, 1);  // throws on any stage needing padding
      const auto trace = spatial_trace(spec);
      for (std::size_t i = 0; i < spec.conv.size(); ++i)
        ok = ok && trace[2 * i + 1] % spec.conv[i].pool == 0 && trace[2 * i] >= spec.conv[i].kernel;
      ok = ok && describe(state, x).size() == 128 && output_dim(spec) == 128;  // registry default dimension
      const auto it = published.find(name);
      std::printf("    %-10s %10zu %10zu\n", name.c_str(), param_count(state), it == published.end() ? 0 : it->second);
    } catch (const std::exception& e) {
      std::printf("    %-10s error: %s\n", name.c_str(), e.what());
      ok = false;
    }
  }
  const auto trace = spatial_trace(registry_spec("CNN3"));
  const bool exact = trace == std::vector<std::size_t>{64, 58, 29, 24, 8, 4, 1};
  std::string t;
  for (auto v : trace) t += (t.empty() ? "" : ">") + std::to_string(v);
  return {ok && exact, "7 specs build without padding at their declared dimension; CNN3 trace " + t};
}

Outcome combinatorics() {
  Rng rng(17);
  bool ok = true;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(200);
    std::vector<std::uint32_t> labels(n);
    const std::size_t m = 1 + rng.below(n);
    for (auto& l : labels) l = static_cast<std::uint32_t>(rng.below(m));
    std::uint64_t pos = 0, neg = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) (labels[i] == labels[j] ? pos : neg)++;
    const auto c = count_pairs(DatasetIndex::from_labels(labels));
    ok = ok && c.positives == pos && c.unordered_negatives == neg && c.negatives == 2 * neg;
  }
  const auto tiny = count_pairs(generate_synthetic(2, 2, 1).index);
  ok = ok && tiny.positives == 2 && tiny.negatives == 8;
  return {ok, fmt("100 random indices match brute force; synthetic(2,2): N_P=%llu N_N=%llu",
                  static_cast<unsigned long long>(tiny.positives), static_cast<unsigned long long>(tiny.negatives))};
}

Outcome mining() {
  Rng rng(23);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(2048), keep = rng.below(n + 1);
    PairBatch b;
    for (std::size_t i = 0; i < n; ++i) {
      b.pairs.push_back({static_cast<std::uint32_t>(i), 0, false});
      b.losses.push_back(trial % 2 ? rng.uniform() : std::floor(rng.uniform() * 8) / 8);
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return b.losses[x] > b.losses[y]; });
    order.resize(keep);
    std::sort(order.begin(), order.end());
    const auto m = mine(b, keep);
    bool same = m.pairs.size() == keep;
    for (std::size_t i = 0; same && i < keep; ++i) same = m.pairs[i] == b.pairs[order[i]] && m.losses[i] == b.losses[order[i]];
    mismatches += !same;
  }
  return {mismatches == 0, fmt("1000 batches up to 2048, %zu mismatches against full sort", mismatches)};
}

// Independent quadratic references.
double ref_pr_auc(const std::vector<double>& d, const std::vector<std::uint8_t>& l) {
  std::vector<double> th = d;
  std::sort(th.begin(), th.end());
  th.erase(std::unique(th.begin(), th.end()), th.end());
  double p = 0;
  for (auto v : l) p += v;
  double area = 0, prev_r = 0, prev_p = -1;
  for (double t : th) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (d[i] <= t) (l[i] ? tp : fp) += 1;
    const double r = tp / p, pr = tp / (tp + fp);
    if (prev_p < 0) prev_p = pr;
    area += (r - prev_r) * (pr + prev_p) / 2;
    prev_r = r;
    prev_p = pr;
  }
  return area;
}

double ref_rank_auc(const std::vector<double>& d, const std::vector<std::uint8_t>& l) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < d.size(); ++j)
      if (l[i] && !l[j]) pairs += 1, wins += d[i] < d[j] ? 1 : (d[i] == d[j] ? 0.5 : 0);
  return wins / pairs;
}

// Trapezoid over FPR of the quadratic ROC points, in threshold order.
double ref_roc_curve_auc(const std::vector<double>& d, const std::vector<std::uint8_t>& l) {
  std::vector<double> th = d;
  std::sort(th.begin(), th.end());
  th.erase(std::unique(th.begin(), th.end()), th.end());
  double p = 0, n = 0;
  for (auto v : l) (v ? p : n) += 1;
  double area = 0, prev_f = 0, prev_t = 0;
  for (double t : th) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (d[i] <= t) (l[i] ? tp : fp) += 1;
    area += (fp / n - prev_f) * (tp / p + prev_t) / 2;
    prev_f = fp / n;
    prev_t = tp / p;
  }
  return area;
}

double ref_cmc_auc(const EvalTask& task, const DistanceFn& dist) {
  const std::size_t c = task.n_neg + 1;
  double total = 0;
  for (std::size_t k = 1; k <= c; ++k) {
    double hit = 0;
    for (const auto& q : task.queries) {
      const double dp = dist(q.anchor, q.match);
      std::size_t ahead = 0;
      for (auto x : q.distractors) ahead += dist(q.anchor, x) <= dp;
      hit += ahead + 1 <= k;
    }
    total += hit / static_cast<double>(task.queries.size());
  }
  return total / static_cast<double>(c);
}

Outcome metrics() {
  Rng rng(29);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t points = 1 + rng.below(100), n_neg = rng.below(50) + 1;
    std::vector<std::uint32_t> labels;
    for (std::size_t p = 0; p < points + n_neg; ++p) labels.insert(labels.end(), 2, static_cast<std::uint32_t>(p));
    const auto idx = DatasetIndex::from_labels(labels);
    const auto task = build_eval_task(idx, points, n_neg, 100 + trial);
    std::vector<double> emb(labels.size());
    for (std::size_t i = 0; i < emb.size(); ++i) emb[i] = labels[i] * 0.1 + rng.normal() * (trial % 3 + 1);
    const bool coarse = trial % 2 == 0;
    DistanceFn dist = [&](std::uint32_t a, std::uint32_t b) {
      const double v = std::abs(emb[a] - emb[b]);
      return coarse ? std::round(v * 4) / 4 : v;
    };
    const auto fold = evaluate_fold(task, dist);
    const auto s = score_task(task, dist);
    worst = std::max({worst, std::abs(fold.pr.auc - ref_pr_auc(s.distances, s.labels)),
                      std::abs(fold.roc.auc - ref_roc_curve_auc(s.distances, s.labels)),
                      std::abs(fold.roc.auc - ref_rank_auc(s.distances, s.labels)),
                      std::abs(fold.cmc.auc - ref_cmc_auc(task, dist))});
  }
  std::vector<double> d(100000);
  std::vector<std::uint8_t> l(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = rng.uniform(), l[i] = rng.uniform() < 0.5;
  const double null_auc = roc_curve(d, l).auc;
  const bool ok = worst <= 1e-9 && std::abs(null_auc - 0.5) <= 0.02;
  return {ok, fmt("max deviation from references %.1e; uninformative ROC AUC %.4f", worst, null_auc)};
}

// ---------------------------------------------------------------------------
// Desk-scale training runs
// ---------------------------------------------------------------------------

struct DeskRun {
  double untrained = 0;
  double final_auc = 0;
  double seconds = 0;
  std::uint64_t best_iteration = 0;
};

const PatchDataset& desk_data() {
  static const PatchDataset ds = generate_synthetic(kDeskClasses, kDeskPerClass, kDeskDataSeed);
  return ds;
}

DeskRun desk_run(const std::string& preset_name) {
  auto cfg = preset(preset_name);
  cfg.train.threads = env_threads();
  const auto split = prepare_training_data(cfg, desk_data());
  const auto tasks = final_tasks(split.validation, cfg.train);
  auto initial = build_network<float>(cfg.network_spec(), cfg.train.seed);
  initial.norm = compute_norm_stats(split.train.patches);
  DeskRun r;
  r.untrained = evaluate_network(initial, split.validation, tasks, cfg.train.threads).mean_pr_auc;
  const auto t0 = Clock::now();
  const auto res = train_network(split.train, split.validation, cfg.network_spec(), cfg.train, [&](const LogRecord& rec) {
    if (rec.val_pr_auc) {
      std::printf("    %s it %5llu  loss %.4f  validation PR AUC %.4f  %.0f s\n", preset_name.c_str(),
                  static_cast<unsigned long long>(rec.iteration), rec.loss_mean, *rec.val_pr_auc, seconds_since(t0));
      std::fflush(stdout);
    }
  });
  r.seconds = seconds_since(t0);
  r.final_auc = res.final_pr_auc.value_or(0);
  r.best_iteration = res.best_iteration;
  std::printf("    %s untrained %.4f  selected iteration %llu  PR AUC %.4f  %.0f s\n", preset_name.c_str(), r.untrained,
              static_cast<unsigned long long>(r.best_iteration), r.final_auc, r.seconds);
  return r;
}

std::map<std::string, DeskRun> desk_runs;

Outcome desk_learning() {
  const auto r = desk_runs["cnn3-mine-2x2"] = desk_run("cnn3-mine-2x2");
  const bool ok = r.final_auc >= 0.80 && r.final_auc >= 3 * r.untrained && r.seconds <= 600;
  return {ok, fmt("PR AUC %.4f (untrained %.4f, ratio %.1fx) in %.0f s", r.final_auc, r.untrained,
                  r.final_auc / std::max(r.untrained, 1e-12), r.seconds)};
}

Outcome mining_trend() {
  for (const char* name : {"cnn3-mine-1x1", "cnn3-mine-2x2", "cnn3-mine-4x4"})
    if (!desk_runs.count(name)) desk_runs[name] = desk_run(name);
  const double a1 = desk_runs["cnn3-mine-1x1"].final_auc, a2 = desk_runs["cnn3-mine-2x2"].final_auc,
               a4 = desk_runs["cnn3-mine-4x4"].final_auc;
  return {a2 >= a1 - 0.02 && a4 >= a1, fmt("PR AUC 1/1 %.4f, 2/2 %.4f, 4/4 %.4f", a1, a2, a4)};
}

// ---------------------------------------------------------------------------

Outcome brown_counts() {
  constexpr std::uint64_t kPublished = 1133525;
  const char* env = std::getenv("PATCHDESC_BROWN_DATA");
  if (!env || !*env) {
    const auto split = split_validation(desk_data(), kDeskValidationPoints, 11);
    const auto c = count_pairs(split.train.index);
    return {true, fmt("conditional: Brown data absent (set PATCHDESC_BROWN_DATA); synthetic training pool N_P=%llu "
                      "N_N=%llu reported instead",
                      static_cast<unsigned long long>(c.positives), static_cast<unsigned long long>(c.negatives))};
  }
  std::vector<Patch> all;
  std::stringstream paths(env);
  std::string path;
  while (std::getline(paths, path, ':'))
    if (!path.empty()) {
      auto ds = load_dataset(path, env_threads());
      all.insert(all.end(), ds.patches.begin(), ds.patches.end());
    }
  const auto ds = make_dataset(std::move(all), "brown");
  const auto whole = count_pairs(ds.index);
  std::printf("    dataset: %zu patches, %zu points, N_P %llu\n", ds.size(), ds.index.point_count(),
              static_cast<unsigned long long>(whole.positives));
  std::uint64_t lo = ~0ULL, hi = 0, first = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto c = count_pairs(split_validation(ds, 10000, seed).train.index);
    lo = std::min(lo, c.positives);
    hi = std::max(hi, c.positives);
    if (seed == 1) first = c.positives;
    std::printf("    split seed %llu: training pool N_P %llu\n", static_cast<unsigned long long>(seed),
                static_cast<unsigned long long>(c.positives));
  }
  return {first == kPublished, fmt("training pool N_P %llu (published %llu); over 5 split seeds %llu..%llu",
                                   static_cast<unsigned long long>(first), static_cast<unsigned long long>(kPublished),
                                   static_cast<unsigned long long>(lo), static_cast<unsigned long long>(hi))};
}

Outcome determinism() {
  auto cfg = preset("cnn3-mine-2x2");
  cfg.train.max_iterations = 40;
  cfg.train.validation_every = 20;
  cfg.train.threads = 1;
  std::vector<fs::path> dirs;
  for (const char* tag : {"a", "b"}) {
    const auto dir = scratch(std::string("determinism_") + tag);
    run_training(cfg, desk_data(), dir.string());
    const auto state = load_checkpoint((dir / "model.ckpt").string());
    const auto split = prepare_training_data(cfg, desk_data());
    const auto tasks = build_eval_folds(split.validation.index, cfg.eval_points, cfg.eval_negatives, cfg.eval_folds,
                                        cfg.eval_seed);
    write_eval_outputs(evaluate_network(state, split.validation, tasks), (dir / "eval").string());
    dirs.push_back(dir);
  }
  std::size_t compared = 0, differing = 0;
  for (const auto& e : fs::recursive_directory_iterator(dirs[0])) {
    if (!e.is_regular_file()) continue;
    const auto other = dirs[1] / fs::relative(e.path(), dirs[0]);
    ++compared;
    differing += !fs::exists(other) || slurp(e.path()) != slurp(other);
  }
  return {compared >= 4 + 3 * cfg.eval_folds && differing == 0,
          fmt("%zu files (checkpoint, log, config, curves) compared across two serial runs, %zu differ", compared, differing)};
}

Outcome round_trips() {
  const auto dir = scratch("roundtrip");
  bool ok = true;
  std::string failed;
  auto check = [&](const char* what, bool same) {
    if (!same) ok = false, failed += std::string(" ") + what;
  };

  auto state = build_network<float>(registry_spec("CNN3_NN1"), 5);
  Rng rng(6);
  for (auto* p : state.parameters()) *p = Tensor<float>::uniform(p->shape(), rng, -1, 1);
  state.iteration = 777;
  state.norm = {0.41, 0.22};
  save_checkpoint(state, (dir / "m.ckpt").string());
  check("checkpoint", checkpoint_bytes(load_checkpoint((dir / "m.ckpt").string())) == checkpoint_bytes(state));

  const auto ds = generate_synthetic(9, 4, 3);
  save_raw(ds, (dir / "d.bin").string());
  const auto back = load_raw((dir / "d.bin").string());
  check("raw dataset", back.patches == ds.patches && raw_bytes(back) == raw_bytes(ds));

  const auto set = describe_dataset(state, ds);
  save_descriptors(set, (dir / "desc.bin").string());
  check("descriptors", load_descriptors((dir / "desc.bin").string()) == set);
  DescriptorSet bits;
  bits.format = DescriptorFormat::Bits;
  bits.dim = 61;
  bits.count = 7;
  for (std::size_t i = 0; i < bits.count * bits.row_bytes(); ++i) bits.bits.push_back(static_cast<std::uint8_t>(rng.below(256)));
  save_descriptors(bits, (dir / "bits.bin").string());
  check("bit descriptors", load_descriptors((dir / "bits.bin").string()) == bits);

  for (const auto& name : preset_names()) {
    auto c = preset(name);
    c.train.lr0 = 0.1 + 0.2;  // not exactly representable in short decimal
    save_config(c, (dir / "c.txt").string());
    const auto r = load_config((dir / "c.txt").string());
    check("config", r == c && dump_config(r) == dump_config(c) && r.train.lr0 == c.train.lr0);
  }
  return {ok, ok ? "checkpoint, raw dataset, float and bit descriptor files, configs: bit-exact"
                 : "mismatch:" + failed};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", gradients},     {2, "architecture fidelity", architectures},
      {3, "combinatorics oracle", combinatorics}, {4, "mining oracle", mining},
      {5, "metric oracles", metrics},             {6, "desk-scale learning", desk_learning},
      {7, "mining-benefit trend", mining_trend},  {8, "dataset-conditional pair counts", brown_counts},
      {9, "determinism", determinism},            {10, "format round trips", round_trips},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    std::printf("[%d] %s\n", c.id, c.name);
    std::fflush(stdout);
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
