#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "couda/checkpoint.hpp"
#include "couda/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

#ifndef COUDA_CLI_PATH
#error "COUDA_CLI_PATH must point at the couda executable"
#endif

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const std::string kTiny =
    " --set data.generate.source_count=60 --set data.generate.target_count=50"
    " --set hp.epochs=1 --set hp.batch_size=16";

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + COUDA_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

couda::ExperimentConfig tiny_config(const fs::path& out) {
  couda::ExperimentConfig c;
  c.output_dir = out;
  c.generate->source_count = 60;
  c.generate->target_count = 50;
  c.hp.epochs = 1;
  c.hp.batch_size = 16;
  return c;
}

}  // namespace

TEST_CASE("config JSON round-trip") {
  couda::ExperimentConfig c;
  c.seed = 42;
  c.hp.alpha = 0.25;
  c.hp.class_weights = {1, 2, 3};
  c.arch.extractor_hidden = {8};
  c.flags = couda::flags_for(couda::Variant::ours_no_ncl);
  c.generate->rotation_deg = 45;
  const auto back = couda::config_from_json(couda::to_json(c));
  CHECK(couda::to_json(back) == couda::to_json(c));
  CHECK(back.flags == c.flags);
  CHECK(back.hp.class_weights == c.hp.class_weights);
}

TEST_CASE("defaults when keys are missing") {
  const auto c = couda::config_from_json(json::object());
  CHECK(c.generate.has_value());
  CHECK_FALSE(c.csv.has_value());
  CHECK(c.test_fraction == 0.2);
  CHECK(c.flags == couda::AblationFlags{});
  CHECK(c.generate->source_count == 3000);
}

TEST_CASE("unknown keys and bad types are config errors") {
  CHECK_THROWS_AS(couda::config_from_json(json{{"sed", 1}}), couda::ConfigError);
  CHECK_THROWS_AS(couda::config_from_json(json{{"hp", {{"alpah", 1}}}}), couda::ConfigError);
  CHECK_THROWS_AS(couda::config_from_json(json{{"hp", {{"alpha", "big"}}}}), couda::ConfigError);
  CHECK_THROWS_AS(couda::config_from_json(json{{"ablation", {{"variant", "best"}}}}), couda::ConfigError);
}

TEST_CASE("validation") {
  auto c = couda::config_from_json(json::object());
  CHECK_NOTHROW(c.validate());
  c.generate->source_priors = {0.5, 0.4, 0.3};
  CHECK_THROWS_AS(c.validate(), couda::ConfigError);
  c = couda::config_from_json(json::object());
  c.csv = couda::CsvSources{"a", "b", "c", 3};
  CHECK_THROWS_AS(c.validate(), couda::ConfigError);  // both data sources
  c.generate.reset();
  CHECK_NOTHROW(c.validate());
  CHECK_THROWS_AS(couda::resolve_data(c), couda::ConfigError);  // files do not exist
  c = couda::config_from_json(json::object());
  c.test_fraction = 1.0;
  CHECK_THROWS_AS(c.validate(), couda::ConfigError);
  c = couda::config_from_json(json::object());
  c.ablation_seeds = 0;
  CHECK_THROWS_AS(c.validate(), couda::ConfigError);
}

TEST_CASE("overrides") {
  json doc = json::object();
  couda::apply_override(doc, "hp.alpha=0.5");
  couda::apply_override(doc, "model.extractor_hidden=[4,4]");
  couda::apply_override(doc, "ablation.variant=full");
  couda::apply_override(doc, "seed=7");
  CHECK(doc["hp"]["alpha"] == 0.5);
  CHECK(doc["model"]["extractor_hidden"] == json::array({4, 4}));
  CHECK(doc["ablation"]["variant"] == "full");
  const auto c = couda::config_from_json(doc);
  CHECK(c.seed == 7);
  CHECK(c.arch.extractor_hidden == std::vector<std::size_t>{4, 4});
  CHECK_THROWS_AS(couda::apply_override(doc, "novalue"), couda::ConfigError);
  CHECK_THROWS_AS(couda::apply_override(doc, "=3"), couda::ConfigError);
}

TEST_CASE("history CSV round-trip") {
  TempDir dir("couda_hist");
  std::vector<couda::EpochRecord> h(2);
  h[0].epoch = 1;
  h[0].steps = 10;
  h[0].objective = -0.1 / 3.0;
  h[0].macro_f1 = 0.123456789012345678;
  h[1].epoch = 2;
  h[1].lambda_target = 1e-300;
  couda::write_history_csv(h, dir.path / "h.csv");
  CHECK(slurp(dir.path / "h.csv").starts_with(
      "epoch,steps,classification,adversarial,diversity,objective,discriminator,lambda_source,lambda_target,accuracy,"
      "macro_precision,macro_recall,macro_f1,noise_diag\n"));
  const auto back = couda::read_history_csv(dir.path / "h.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[0].objective == h[0].objective);
  CHECK(back[0].macro_f1 == h[0].macro_f1);
  CHECK(back[1].lambda_target == h[1].lambda_target);
  CHECK(couda::format_number(0.1) == "0.1");
}

TEST_CASE("median") {
  CHECK(couda::median({3, 1, 2}) == 2);
  CHECK(couda::median({4, 1, 2, 3}) == 2.5);
  CHECK(std::isnan(couda::median({})));
}

TEST_CASE("guarded maps exceptions to exit codes") {
  std::ostringstream err;
  CHECK(couda::guarded([] { return 0; }, err) == couda::kExitOk);
  CHECK(couda::guarded([]() -> int { throw couda::ConfigError("x"); }, err) == couda::kExitConfig);
  CHECK(couda::guarded([]() -> int { throw couda::ParseError("f", 3, "x"); }, err) == couda::kExitConfig);
  CHECK(couda::guarded([]() -> int { throw couda::NumericError("x"); }, err) == couda::kExitNumeric);
  CHECK(couda::guarded([]() -> int { throw std::runtime_error("x"); }, err) == couda::kExitFailure);
}

TEST_CASE("in-process train writes parseable artifacts") {
  TempDir dir("couda_inproc");
  std::ostringstream log, err;
  const auto cfg = tiny_config(dir.path);
  REQUIRE(couda::cmd_train(cfg, log, err) == couda::kExitOk);
  const auto metrics = json::parse(slurp(dir.path / "metrics.json"));
  for (const char* key : {"accuracy", "macro_precision", "macro_recall", "macro_f1"}) CHECK(metrics.contains(key));
  CHECK(couda::read_history_csv(dir.path / "history.csv").size() == 1);
  const auto model = couda::load_checkpoint(dir.path / "checkpoint.bin");
  const auto data = couda::resolve_data(cfg);
  CHECK(couda::to_json(couda::evaluate(model, data.target_test))["macro_f1"] == metrics["macro_f1"]);
}

TEST_CASE("ablation sweep runs every variant and records failures") {
  auto cfg = tiny_config("unused");
  cfg.ablation_seeds = 2;
  const auto seeds = couda::ablation_seed_list(cfg);
  CHECK(seeds == std::vector<std::uint64_t>{0, 1});
  const auto summary = couda::run_ablation(cfg, seeds, couda::kAblationOrder);
  REQUIRE(summary.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(summary[i].variant == couda::kAblationOrder[i]);
    REQUIRE(summary[i].runs.size() == 2);
    CHECK(summary[i].runs[0].seed == 0);
    CHECK(summary[i].runs[1].completed);
  }
  cfg.ablation_jobs = 3;
  const auto parallel = couda::run_ablation(cfg, seeds, couda::kAblationOrder);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t s = 0; s < 2; ++s) CHECK(parallel[i].runs[s].metrics == summary[i].runs[s].metrics);

  cfg.fault_step = 0;
  const auto failed = couda::run_ablation(cfg, seeds, couda::kAblationOrder);
  REQUIRE(failed.size() == 5);
  CHECK_FALSE(failed[0].runs[0].completed);
  CHECK_FALSE(failed[0].runs[0].error.empty());
}

TEST_CASE("cli generate writes three CSVs and a manifest, deterministically") {
  TempDir dir("couda_cli_gen");
  REQUIRE(run("generate --out " + (dir.path / "a").string(), dir.path / "log") == 0);
  REQUIRE(run("generate --out " + (dir.path / "b").string(), dir.path / "log") == 0);
  for (const char* f : {"source.csv", "target_train.csv", "target_test.csv", "manifest.json"}) {
    CAPTURE(f);
    CHECK(fs::exists(dir.path / "a" / f));
    CHECK(slurp(dir.path / "a" / f) == slurp(dir.path / "b" / f));
  }
  const auto m = json::parse(slurp(dir.path / "a" / "manifest.json"));
  CHECK(m["num_classes"] == 3);
  CHECK(m["input_dim"] == 2);
  CHECK(m["files"]["source.csv"] == 3000);
  CHECK(m["files"]["target_train.csv"] == 2000);
  CHECK(m["files"]["target_test.csv"] == 500);
  CHECK(couda::load_csv(dir.path / "a" / "source.csv", 3).size() == 3000);
  CHECK(couda::load_csv(dir.path / "a" / "target_test.csv", 3).size() == 500);
}

TEST_CASE("cli rejects priors that do not sum to one") {
  TempDir dir("couda_cli_badprior");
  CHECK(run("generate --out " + dir.path.string() + " --set data.generate.source_priors=[0.5,0.5,0.5]",
            dir.path / "log") == 2);
  CHECK(slurp(dir.path / "log").find("priors") != std::string::npos);
  CHECK(run("train --out " + dir.path.string() + " --ablation nonsense", dir.path / "log") == 2);
  CHECK(run("train --config " + (dir.path / "missing.json").string(), dir.path / "log") == 2);
  CHECK(run("frobnicate", dir.path / "log") == 2);
}

TEST_CASE("cli train is deterministic and its artifacts parse") {
  TempDir dir("couda_cli_train");
  const std::string common = " --seed 3 --ablation full" + kTiny;
  REQUIRE(run("train --out " + (dir.path / "a").string() + common, dir.path / "log") == 0);
  REQUIRE(run("train --out " + (dir.path / "b").string() + common, dir.path / "log") == 0);
  for (const char* f : {"metrics.json", "history.csv"}) {
    CAPTURE(f);
    CHECK(slurp(dir.path / "a" / f) == slurp(dir.path / "b" / f));
  }
  const auto metrics = json::parse(slurp(dir.path / "a" / "metrics.json"));
  CHECK(metrics["config"]["seed"] == 3);
  CHECK(metrics["config"]["ablation"]["enable_ncl"] == true);
  CHECK(couda::read_history_csv(dir.path / "a" / "history.csv").size() == 1);
  CHECK(couda::load_checkpoint(dir.path / "a" / "checkpoint.bin").num_peers() == 2);

  // A config file with a flag override: the flag wins.
  std::ofstream(dir.path / "cfg.json") << R"({"seed": 9, "hp": {"epochs": 1, "batch_size": 16},
      "data": {"generate": {"source_count": 60, "target_count": 50}}})";
  REQUIRE(run("train --config " + (dir.path / "cfg.json").string() + " --seed 3 --ablation full --out " +
                  (dir.path / "c").string(),
              dir.path / "log") == 0);
  CHECK(slurp(dir.path / "a" / "metrics.json") == slurp(dir.path / "c" / "metrics.json"));
}

TEST_CASE("cli single_lc trains one network") {
  TempDir dir("couda_cli_single");
  REQUIRE(run("train --out " + dir.path.string() + " --ablation single_lc" + kTiny, dir.path / "log") == 0);
  CHECK(couda::load_checkpoint(dir.path / "checkpoint.bin").num_peers() == 1);
  const auto metrics = json::parse(slurp(dir.path / "metrics.json"));
  CHECK(metrics["config"]["ablation"]["single_network"] == true);
}

TEST_CASE("cli numeric failure exits 3 and keeps partial history") {
  TempDir dir("couda_cli_nan");
  const std::string args = "train --out " + dir.path.string() +
                           " --set data.generate.source_count=60 --set data.generate.target_count=50"
                           " --set hp.epochs=3 --set hp.batch_size=16 --inject-nonfinite-step 5";
  CHECK(run(args, dir.path / "log") == 3);
  CHECK(slurp(dir.path / "log").find("non-finite") != std::string::npos);
  CHECK(couda::read_history_csv(dir.path / "history.csv").size() == 1);
  CHECK_FALSE(fs::exists(dir.path / "metrics.json"));
}

TEST_CASE("cli evaluate scores a checkpoint") {
  TempDir dir("couda_cli_eval");
  REQUIRE(run("generate --out " + dir.path.string() + " --set data.generate.source_count=60"
                  " --set data.generate.target_count=50",
              dir.path / "log") == 0);
  REQUIRE(run("train --out " + dir.path.string() + kTiny, dir.path / "log") == 0);
  REQUIRE(run("evaluate --checkpoint " + (dir.path / "checkpoint.bin").string() + " --data " +
                  (dir.path / "target_test.csv").string() + " --out " + (dir.path / "eval").string(),
              dir.path / "out") == 0);
  const auto eval = json::parse(slurp(dir.path / "eval" / "eval_metrics.json"));
  const auto metrics = json::parse(slurp(dir.path / "metrics.json"));
  CHECK(eval["macro_f1"] == metrics["macro_f1"]);
  CHECK(json::parse(slurp(dir.path / "out"))["accuracy"] == metrics["accuracy"]);
  CHECK(run("evaluate --checkpoint " + (dir.path / "nope.bin").string() + " --data " +
                (dir.path / "target_test.csv").string(),
            dir.path / "out") != 0);
}

TEST_CASE("cli ablate with one seed yields five entries") {
  TempDir dir("couda_cli_ablate");
  REQUIRE(run("ablate --out " + dir.path.string() + " --set ablate.seeds=1" + kTiny, dir.path / "log") == 0);
  const auto s = json::parse(slurp(dir.path / "ablation_summary.json"));
  REQUIRE(s["variants"].size() == 5);
  const char* order[] = {"single_lc", "ours_lc", "ours_lc_adv", "ours_lc_adv_dis_no_ncl", "full"};
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(s["variants"][i]["variant"] == order[i]);
    CHECK(s["variants"][i]["runs"].size() == 1);
    CHECK(s["variants"][i]["median"].contains("macro_f1"));
  }
  CHECK(s["seeds"] == json::array({0}));
  CHECK(s.contains("config"));
}

TEST_CASE("cli gradcheck passes and catches a corrupted gradient") {
  TempDir dir("couda_cli_gc");
  CHECK(run("gradcheck --instances 5", dir.path / "log") == 0);
  const std::string log = slurp(dir.path / "log");
  for (const char* c : {"L^c", "L^adv", "L^dis", "Z path", "full objective"}) CHECK(log.find(c) != std::string::npos);
  CHECK(run("gradcheck --instances 5 --corrupt \"Z path\"", dir.path / "log") == 1);
  CHECK(slurp(dir.path / "log").find("Z path") != std::string::npos);
}

TEST_CASE("cli help exits 0") {
  TempDir dir("couda_cli_help");
  CHECK(run("--help", dir.path / "log") == 0);
  CHECK(run("train --help", dir.path / "log") == 0);
}
