#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "couda/experiment.hpp"
#include "couda/selfcheck.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> ablation;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool with_variant) {
  cmd->add_option("--config", flags.config_path, "JSON experiment config (defaults apply when omitted)");
  cmd->add_option("--seed", flags.seed, "Seed for data, initialization and batching");
  cmd->add_option("--out", flags.out, "Output directory");
  cmd->add_option("--set", flags.overrides, "Override a config field, e.g. --set hp.epochs=5 (repeatable)");
  if (with_variant) {
    cmd->add_option("--ablation", flags.ablation,
                    "Variant: single_lc, ours_lc, ours_lc_adv, ours_lc_adv_dis_no_ncl, full");
  }
}

/// Config file, then --set overrides, then the named flags.
couda::ExperimentConfig resolve_config(const CommonFlags& flags) {
  nlohmann::json doc = nlohmann::json::object();
  if (!flags.config_path.empty()) doc = couda::to_json(couda::load_config(flags.config_path));
  for (const auto& o : flags.overrides) couda::apply_override(doc, o);
  if (flags.seed) doc["seed"] = *flags.seed;
  if (flags.out) doc["output_dir"] = *flags.out;
  if (flags.ablation) doc["ablation"] = {{"variant", *flags.ablation}};
  return couda::config_from_json(doc);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Collaborative unsupervised domain adaptation with noisy source labels"};
  app.require_subcommand(1);

  CommonFlags flags;
  auto* generate = app.add_subcommand("generate", "Write the synthetic two-domain benchmark as CSV");
  add_common(generate, flags, false);
  auto* train = app.add_subcommand("train", "Train one configuration and score it on the target test split");
  add_common(train, flags, true);
  std::optional<std::uint64_t> fault_step;
  train->add_option("--inject-nonfinite-step", fault_step)->group("");
  auto* ablate = app.add_subcommand("ablate", "Run every ablation variant over several seeds");
  add_common(ablate, flags, false);

  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on a labeled CSV");
  std::string checkpoint, data;
  std::optional<std::string> eval_out;
  evaluate->add_option("--checkpoint", checkpoint, "checkpoint.bin written by train")->required();
  evaluate->add_option("--data", data, "CSV with a clean_label column")->required();
  evaluate->add_option("--out", eval_out, "Also write eval_metrics.json here");

  auto* gradcheck = app.add_subcommand("gradcheck", "Compare reverse-mode gradients with central differences");
  couda::GradcheckOptions gc;
  gradcheck->add_option("--instances", gc.instances, "Random instances per component")->capture_default_str();
  gradcheck->add_option("--seed", gc.seed, "Seed for the random instances")->capture_default_str();
  gradcheck->add_option("--corrupt", gc.corrupt_component)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : couda::kExitConfig;
  }

  return couda::guarded(
      [&]() -> int {
        if (*generate) return couda::cmd_generate(resolve_config(flags), std::cout, std::cerr);
        if (*train) {
          auto config = resolve_config(flags);
          config.fault_step = fault_step;
          return couda::cmd_train(config, std::cout, std::cerr);
        }
        if (*ablate) return couda::cmd_ablate(resolve_config(flags), std::cout, std::cerr);
        if (*evaluate) {
          std::optional<std::filesystem::path> out;
          if (eval_out) out = *eval_out;
          return couda::cmd_evaluate(checkpoint, data, out, std::cout, std::cerr);
        }
        return couda::cmd_gradcheck(gc, std::cout);
      },
      std::cerr);
}
