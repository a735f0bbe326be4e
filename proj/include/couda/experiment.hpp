#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "couda/data.hpp"
#include "couda/metrics.hpp"
#include "couda/training.hpp"

namespace couda {

/// CLI exit codes.
enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitNumeric = 3 };

struct CsvSources {
  std::filesystem::path source;
  std::filesystem::path target_train;
  std::filesystem::path target_test;
  std::size_t num_classes = 3;
};

/// Everything needed to reproduce a run. Serialized as one JSON document:
///
///   { "seed", "output_dir",
///     "data":    { "generate": {...} } | { "csv": {...} },
///     "model":   { "feature_dim", "extractor_hidden", "discriminator_hidden" },
///     "hp":      { "alpha", "eta", "gamma", "lr", "batch_size", "epochs",
///                  "beta_noise_init", "class_weights", "alpha_warmup",
///                  "discriminator_steps", "discriminator_lr" },
///     "ablation": { "variant" } | { "enable_adv", "enable_dis", "enable_ncl", "single_network" },
///     "ablate":  { "seeds", "jobs" } }
/// Missing keys keep their defaults; unknown keys are rejected.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "couda_out";
  std::optional<SyntheticSpec> generate = SyntheticSpec{};
  double test_fraction = 0.2;
  std::optional<CsvSources> csv;
  ArchitectureConfig arch;
  Hyperparams hp;
  AblationFlags flags;
  std::size_t ablation_seeds = 5;
  /// Worker threads for cmd_ablate; results do not depend on it.
  std::size_t ablation_jobs = 1;
  /// Not serialized; see TrainConfig::fault_step.
  std::optional<std::uint64_t> fault_step;

  void validate() const;
  TrainConfig train_config() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies "a.b.c=value" to a config document. The value is parsed as JSON
/// when possible and taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

struct ExperimentData {
  Dataset source;
  Dataset target_train;
  Dataset target_test;
};

/// Generates (and splits) or loads the datasets a config describes.
ExperimentData resolve_data(const ExperimentConfig& config);

void write_history_csv(std::span<const EpochRecord> history, const std::filesystem::path& path);
std::vector<EpochRecord> read_history_csv(const std::filesystem::path& path);
std::string format_number(double v);

struct RunResult {
  std::uint64_t seed = 0;
  bool completed = false;
  std::string error;
  MetricsReport metrics;
};

struct VariantSummary {
  Variant variant = Variant::full;
  std::vector<RunResult> runs;
  /// Medians over completed runs.
  double median_accuracy = 0.0;
  double median_macro_precision = 0.0;
  double median_macro_recall = 0.0;
  double median_macro_f1 = 0.0;
  double median_noise_diag = 0.0;
};

/// Trains every variant on every seed (data regenerated per seed when it is
/// synthetic). A failed run is recorded and the sweep continues. Results are
/// ordered by variant, then seed.
std::vector<VariantSummary> run_ablation(const ExperimentConfig& config, std::span<const std::uint64_t> seeds,
                                         std::span<const Variant> variants, std::ostream* log = nullptr);

/// config.seed, config.seed + 1, ... (config.ablation_seeds values).
std::vector<std::uint64_t> ablation_seed_list(const ExperimentConfig& config);

nlohmann::json ablation_summary_json(const ExperimentConfig& config, std::span<const std::uint64_t> seeds,
                                     std::span<const VariantSummary> summary);

double median(std::vector<double> values);

// Subcommands. Each returns an ExitCode and reports problems on `err`.
int cmd_generate(const ExperimentConfig& config, std::ostream& log, std::ostream& err);
int cmd_train(const ExperimentConfig& config, std::ostream& log, std::ostream& err);
/// Scores a checkpoint on a CSV carrying clean labels; the report goes to
/// `out` and, if given, to out_dir/eval_metrics.json.
int cmd_evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& data,
                 const std::optional<std::filesystem::path>& out_dir, std::ostream& out, std::ostream& err);

/// Runs `body`, mapping exceptions to exit codes and messages on `err`.
int guarded(const std::function<int()>& body, std::ostream& err);
int cmd_ablate(const ExperimentConfig& config, std::ostream& log, std::ostream& err);

}  // namespace couda
