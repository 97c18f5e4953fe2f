// patchdesc: train, evaluate and apply patch descriptor networks.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "patchdesc/config.hpp"
#include "patchdesc/experiment.hpp"
#include "patchdesc/gradcheck.hpp"
#include "patchdesc/sampler.hpp"

using namespace patchdesc;

namespace {

struct TrainArgs {
  std::string config, preset, data, out, init_from;
  std::optional<std::uint64_t> seed, iterations;
  std::optional<std::size_t> threads;
};

int cmd_train(const TrainArgs& a) {
  ExperimentConfig cfg = a.config.empty() ? preset(a.preset.empty() ? "default" : a.preset) : load_config(a.config);
  if (!a.data.empty()) cfg.data = a.data;
  if (!a.init_from.empty()) cfg.train.init_from = a.init_from;
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.iterations) cfg.train.max_iterations = *a.iterations;
  if (a.threads) cfg.train.threads = *a.threads;
  cfg.validate();
  const auto ds = load_dataset(cfg.data, cfg.train.threads);
  std::printf("training %s on %zu patches (%zu points), %llu iterations\n", cfg.arch.c_str(), ds.size(),
              ds.index.point_count(), static_cast<unsigned long long>(cfg.train.max_iterations));
  const auto result = run_training(cfg, ds, a.out, [](const LogRecord& r) {
    if (r.val_pr_auc) {
      std::printf("iteration %llu  loss %.4f  lr %g  validation PR AUC %.4f\n",
                  static_cast<unsigned long long>(r.iteration), r.loss_mean, r.lr, *r.val_pr_auc);
      std::fflush(stdout);
    }
  });
  std::printf("best iteration %llu", static_cast<unsigned long long>(result.best_iteration));
  if (result.final_pr_auc) std::printf("  final-protocol PR AUC %.4f", *result.final_pr_auc);
  std::printf("\nwrote %s\n", (std::filesystem::path(a.out) / "model.ckpt").string().c_str());
  return 0;
}

struct EvalArgs {
  std::string model, descriptors, data, out, config;
  bool bits = false;
  std::optional<std::size_t> points, negatives, folds;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
};

int cmd_eval(const EvalArgs& a) {
  ExperimentConfig cfg = a.config.empty() ? ExperimentConfig{} : load_config(a.config);
  const std::size_t points = a.points.value_or(cfg.eval_points);
  const std::size_t negatives = a.negatives.value_or(cfg.eval_negatives);
  const std::size_t folds = a.folds.value_or(cfg.eval_folds);
  const std::uint64_t seed = a.seed.value_or(cfg.eval_seed);
  const auto ds = load_dataset(a.data, a.threads);
  const auto tasks = build_eval_folds(ds.index, points, negatives, folds, seed);

  EvalResult result;
  if (!a.model.empty()) {
    const auto state = load_checkpoint(a.model);
    result = evaluate_network(state, ds, tasks, a.threads);
  } else {
    const auto set = load_descriptors(a.descriptors);
    if (a.bits != (set.format == DescriptorFormat::Bits))
      throw FormatError(a.bits ? "--bits given but the descriptor file holds float32 rows"
                               : "descriptor file holds packed bits; pass --bits for Hamming distance");
    result = evaluate_descriptors(set, ds, tasks);
  }
  std::cout << summary_table(result);
  if (!a.out.empty()) write_eval_outputs(result, a.out);
  return 0;
}

int cmd_describe(const std::string& model, const std::string& data, const std::string& out, std::size_t threads) {
  const auto state = load_checkpoint(model);
  const auto ds = load_dataset(data, threads);
  const auto set = describe_dataset(state, ds, threads);
  save_descriptors(set, out);
  std::printf("wrote %zu descriptors of dimension %zu to %s\n", set.count, set.dim, out.c_str());
  return 0;
}

int cmd_count_pairs(const std::string& data, std::optional<std::size_t> validation_points, std::uint64_t split_seed) {
  const auto ds = load_dataset(data);
  auto print = [](const char* label, const PatchDataset& d) {
    const auto c = count_pairs(d.index);
    std::printf("%s: patches %zu  points %zu\n", label, d.size(), d.index.point_count());
    std::printf("  N_P   %llu\n  N_N   %llu\n  N_N/2 %llu\n", static_cast<unsigned long long>(c.positives),
                static_cast<unsigned long long>(c.negatives), static_cast<unsigned long long>(c.unordered_negatives));
  };
  print("dataset", ds);
  if (validation_points) {
    const auto split = split_validation(ds, *validation_points, split_seed);
    print("training pool", split.train);
    print("validation", split.validation);
  }
  return 0;
}

int cmd_synth(std::size_t classes, std::size_t per_class, std::uint64_t seed, const std::string& out,
              const std::string& mosaic_dir) {
  const auto ds = generate_synthetic(classes, per_class, seed);
  if (!out.empty()) save_raw(ds, out);
  if (!mosaic_dir.empty()) save_mosaic_dataset(ds, mosaic_dir);
  std::printf("generated %zu patches of %zu classes\n", ds.size(), classes);
  return 0;
}

int cmd_gradcheck(const std::string& arch, std::uint64_t seed, std::size_t samples) {
  bool ok = true;
  auto report = [&](const GradCheckResult& r) {
    std::printf("%-4s %-24s max rel error %.3e (tolerance %.0e, %zu checks)\n", r.pass() ? "ok" : "FAIL",
                r.name.c_str(), r.max_rel_error, r.tolerance, r.checked);
    ok = ok && r.pass();
  };
  for (const auto& r : layer_gradchecks(seed)) report(r);
  report(network_gradcheck(registry_spec(arch), seed, samples, 4));
  return ok ? 0 : 1;
}

int cmd_config_dump(const std::string& preset_name, const std::string& config, const std::string& out) {
  const ExperimentConfig cfg = config.empty() ? preset(preset_name) : load_config(config);
  if (out.empty())
    std::cout << dump_config(cfg);
  else
    save_config(cfg, out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Patch descriptor networks: training, evaluation and descriptor extraction"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a network and keep the best validation checkpoint");
  auto* cfg_group = train->add_option_group("configuration");
  cfg_group->add_option("--config", ta.config, "Config file (key = value)")->check(CLI::ExistingFile);
  cfg_group->add_option("--preset", ta.preset, "Built-in preset (see `config dump --preset`)");
  cfg_group->require_option(0, 1);
  train->add_option("--data", ta.data, "Dataset: raw file or mosaic directory (overrides config)");
  train->add_option("--out", ta.out, "Output directory")->required();
  train->add_option("--init-from", ta.init_from, "Warm-start checkpoint")->check(CLI::ExistingFile);
  train->add_option("--seed", ta.seed, "Training seed (overrides config)");
  train->add_option("--iterations", ta.iterations, "Iteration budget (overrides config)");
  train->add_option("--threads", ta.threads, "Worker threads; 1 is the determinism reference");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a model or a descriptor file (PR, ROC, CMC)");
  auto* src = eval->add_option_group("source");
  src->add_option("--model", ea.model, "Checkpoint")->check(CLI::ExistingFile);
  src->add_option("--descriptors", ea.descriptors, "Descriptor file with .hdr sidecar")->check(CLI::ExistingFile);
  src->require_option(1);
  eval->add_flag("--bits", ea.bits, "Descriptors are packed bits compared by Hamming distance");
  eval->add_option("--data", ea.data, "Dataset: raw file or mosaic directory")->required();
  eval->add_option("--config", ea.config, "Take protocol defaults from a config file")->check(CLI::ExistingFile);
  eval->add_option("--points", ea.points, "Query points per fold");
  eval->add_option("--negatives", ea.negatives, "Distractors per query");
  eval->add_option("--folds", ea.folds, "Number of folds");
  eval->add_option("--seed", ea.seed, "Protocol seed (fold f uses seed + f)");
  eval->add_option("--out", ea.out, "Directory for curve files and summary.txt");
  eval->add_option("--threads", ea.threads, "Worker threads");

  std::string d_model, d_data, d_out;
  std::size_t d_threads = 1;
  auto* describe_cmd = app.add_subcommand("describe", "Write descriptors of every patch");
  describe_cmd->add_option("--model", d_model, "Checkpoint")->required()->check(CLI::ExistingFile);
  describe_cmd->add_option("--data", d_data, "Dataset")->required();
  describe_cmd->add_option("--out", d_out, "Descriptor file (a .hdr sidecar is written next to it)")->required();
  describe_cmd->add_option("--threads", d_threads, "Worker threads");

  std::string c_data;
  std::optional<std::size_t> c_val;
  std::uint64_t c_split_seed = 1;
  auto* count = app.add_subcommand("count-pairs", "Count positive and negative pairs");
  count->add_option("--data", c_data, "Dataset")->required();
  count->add_option("--validation-points", c_val, "Also count the training pool left after holding out N points");
  count->add_option("--split-seed", c_split_seed, "Seed of the validation split");

  std::size_t s_classes = 64, s_per_class = 6;
  std::uint64_t s_seed = kDeskDataSeed;
  std::string s_out, s_mosaic;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic textured-patch dataset");
  synth->add_option("--classes", s_classes, "Number of classes (3D points)")->capture_default_str();
  synth->add_option("--per-class", s_per_class, "Patches per class")->capture_default_str();
  synth->add_option("--seed", s_seed, "Generator seed")->capture_default_str();
  auto* synth_out = synth->add_option_group("output");
  synth_out->add_option("--out", s_out, "Raw dataset file");
  synth_out->add_option("--mosaic-dir", s_mosaic, "Write mosaics + info.txt instead");
  synth_out->require_option(1, 2);

  std::string g_arch = "CNN3";
  std::uint64_t g_seed = 1;
  std::size_t g_samples = 16;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every backward pass");
  grad->add_option("--arch", g_arch, "Architecture")->capture_default_str()->transform(
      CLI::IsMember(registry_names(), CLI::ignore_case));
  grad->add_option("--seed", g_seed, "Seed")->capture_default_str();
  grad->add_option("--samples", g_samples, "Sampled coordinates per parameter tensor (0: all)")->capture_default_str();

  auto* config = app.add_subcommand("config", "Configuration utilities");
  config->require_subcommand(1);
  std::string cd_preset = "default", cd_config, cd_out;
  auto* dump = config->add_subcommand("dump", "Print a complete config with every key explicit");
  dump->add_option("--preset", cd_preset, "Preset name")
      ->capture_default_str()
      ->check(CLI::IsMember(preset_names()));
  dump->add_option("--config", cd_config, "Re-dump an existing config file")->check(CLI::ExistingFile);
  dump->add_option("--out", cd_out, "Write to a file instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(ta);
    if (*eval) return cmd_eval(ea);
    if (*describe_cmd) return cmd_describe(d_model, d_data, d_out, d_threads);
    if (*count) return cmd_count_pairs(c_data, c_val, c_split_seed);
    if (*synth) return cmd_synth(s_classes, s_per_class, s_seed, s_out, s_mosaic);
    if (*grad) return cmd_gradcheck(g_arch, g_seed, g_samples);
    if (*dump) return cmd_config_dump(cd_preset, cd_config, cd_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
