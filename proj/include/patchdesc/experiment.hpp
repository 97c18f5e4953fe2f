#pragma once

// Glue shared by the command-line tool and the acceptance suite: dataset
// loading by path type, train/validation preparation, training-log and
// evaluation output files.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "patchdesc/config.hpp"
#include "patchdesc/data.hpp"
#include "patchdesc/descriptors.hpp"
#include "patchdesc/eval.hpp"
#include "patchdesc/trainer.hpp"

namespace patchdesc {

/// A directory is read as mosaics + info.txt, a file as a raw dataset.
inline PatchDataset load_dataset(const std::string& path, std::size_t threads = 1) {
  if (path.empty()) throw DatasetError("no dataset path given");
  if (!std::filesystem::exists(path)) throw DatasetError("dataset path '" + path + "' does not exist");
  if (std::filesystem::is_directory(path)) return load_mosaic_dataset(path, threads);
  return load_raw(path);
}

inline DatasetSplit prepare_training_data(const ExperimentConfig& cfg, const PatchDataset& ds,
                                          std::size_t threads = 1) {
  if (!cfg.validation_data.empty()) return {ds, load_dataset(cfg.validation_data, threads)};
  return split_validation(ds, cfg.validation_points, cfg.split_seed);
}

/// Trains per `cfg` on `ds`, writing the best checkpoint, the log and the
/// effective config into `out_dir`.
inline TrainResult run_training(const ExperimentConfig& cfg, const PatchDataset& ds, const std::string& out_dir,
                                const std::function<void(const LogRecord&)>& on_record = {}) {
  cfg.validate();
  const auto split = prepare_training_data(cfg, ds, cfg.train.threads);
  std::filesystem::create_directories(out_dir);
  save_config(cfg, (std::filesystem::path(out_dir) / "config.txt").string());
  std::ofstream log((std::filesystem::path(out_dir) / "train.log").string(), std::ios::binary);
  if (!log) throw std::runtime_error("cannot write training log in '" + out_dir + "'");
  log << kLogHeader << "\n";
  auto result = train_network(split.train, split.validation, cfg.network_spec(), cfg.train, [&](const LogRecord& r) {
    log << format_log_record(r) << "\n";
    log.flush();
    if (on_record) on_record(r);
  });
  save_checkpoint(result.best, (std::filesystem::path(out_dir) / "model.ckpt").string());
  return result;
}

inline std::vector<LogRecord> read_training_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open training log '" + path + "'");
  std::vector<LogRecord> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty() && line.front() != '#') out.push_back(parse_log_record(line));
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation output
// ---------------------------------------------------------------------------

/// One row per fold plus a mean row: PR AUC, ROC AUC, CMC AUC, rank-1 rate.
inline std::string summary_table(const EvalResult& r) {
  std::string out = "# fold\tpr_auc\troc_auc\tcmc_auc\trank1\n";
  char buf[256];
  double rank1_sum = 0;
  for (std::size_t f = 0; f < r.folds.size(); ++f) {
    const auto& fr = r.folds[f];
    const double rank1 = fr.cmc.points.empty() ? 0.0 : fr.cmc.points.front().y;
    rank1_sum += rank1;
    std::snprintf(buf, sizeof buf, "%zu\t%.6f\t%.6f\t%.6f\t%.6f\n", f + 1, fr.pr.auc, fr.roc.auc, fr.cmc.auc, rank1);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "mean\t%.6f\t%.6f\t%.6f\t%.6f\n", r.mean_pr_auc, r.mean_roc_auc, r.mean_cmc_auc,
                r.mean_rank1);
  out += buf;
  return out;
}

/// fold<k>_pr.txt, fold<k>_roc.txt, fold<k>_cmc.txt and summary.txt.
inline void write_eval_outputs(const EvalResult& r, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path root(out_dir);
  for (std::size_t f = 0; f < r.folds.size(); ++f) {
    const std::string stem = "fold" + std::to_string(f + 1);
    write_curve((root / (stem + "_pr.txt")).string(), r.folds[f].pr);
    write_curve((root / (stem + "_roc.txt")).string(), r.folds[f].roc);
    write_curve((root / (stem + "_cmc.txt")).string(), r.folds[f].cmc);
  }
  std::ofstream s((root / "summary.txt").string(), std::ios::binary);
  s << summary_table(r);
  if (!s) throw std::runtime_error("cannot write summary in '" + out_dir + "'");
}

inline EvalResult evaluate_descriptors(const DescriptorSet& set, const PatchDataset& ds,
                                       std::span<const EvalTask> tasks) {
  if (set.count != ds.size())
    throw DatasetError("descriptor count " + std::to_string(set.count) + " does not match dataset size " +
                       std::to_string(ds.size()));
  return evaluate(tasks, [&](std::uint32_t a, std::uint32_t b) { return set.distance(a, b); });
}

}  // namespace patchdesc
