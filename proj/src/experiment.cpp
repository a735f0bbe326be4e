#include "couda/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <fstream>
#include <limits>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "couda/checkpoint.hpp"

namespace couda {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, std::string_view section, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(section) + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(std::string(section) + ": unknown key '" + key + "'");
    }
  }
}

template <typename T>
void read(const json& j, std::string_view section, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(section) + "." + key + ": " + e.what());
  }
}

void read_path(const json& j, std::string_view section, const char* key, fs::path& out) {
  std::string s = out.string();
  read(j, section, key, s);
  out = s;
}

SyntheticSpec spec_from_json(const json& j) {
  constexpr std::string_view sec = "data.generate";
  check_keys(j, sec, {"num_classes", "radius", "cluster_std", "source_priors", "target_priors", "source_count",
                      "target_count", "rotation_deg", "translation", "noise_transition", "noise_rate"});
  SyntheticSpec s;
  read(j, sec, "num_classes", s.num_classes);
  read(j, sec, "radius", s.radius);
  read(j, sec, "cluster_std", s.cluster_std);
  read(j, sec, "source_priors", s.source_priors);
  read(j, sec, "target_priors", s.target_priors);
  read(j, sec, "source_count", s.source_count);
  read(j, sec, "target_count", s.target_count);
  read(j, sec, "rotation_deg", s.rotation_deg);
  read(j, sec, "translation", s.translation);
  read(j, sec, "noise_transition", s.noise_transition);
  read(j, sec, "noise_rate", s.noise_rate);
  return s;
}

json spec_to_json(const SyntheticSpec& s) {
  return {{"num_classes", s.num_classes},     {"radius", s.radius},
          {"cluster_std", s.cluster_std},     {"source_priors", s.source_priors},
          {"target_priors", s.target_priors}, {"source_count", s.source_count},
          {"target_count", s.target_count},   {"rotation_deg", s.rotation_deg},
          {"translation", s.translation},     {"noise_transition", s.noise_transition},
          {"noise_rate", s.noise_rate}};
}

void require_file(const fs::path& p, std::string_view what) {
  if (!fs::is_regular_file(p)) throw ConfigError(std::string(what) + ": no such file '" + p.string() + "'");
}

fs::path checked_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error("cannot create output directory '" + dir.string() + "'");
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write '" + path.string() + "'");
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

json manifest(const ExperimentConfig& config, const ExperimentData& data) {
  const auto& s = *config.generate;
  return {{"num_classes", s.num_classes},
          {"input_dim", data.source.input_dim},
          {"seed", config.seed},
          {"source_priors", s.source_priors},
          {"target_priors", s.target_priors},
          {"noise_transition", s.noise(config.seed).transition},
          {"rotation_deg", s.rotation_deg},
          {"translation", s.translation},
          {"test_fraction", config.test_fraction},
          {"files",
           {{"source.csv", data.source.size()},
            {"target_train.csv", data.target_train.size()},
            {"target_test.csv", data.target_test.size()}}}};
}

}  // namespace

void ExperimentConfig::validate() const {
  if (generate.has_value() == csv.has_value()) {
    throw ConfigError("data: exactly one of 'generate' and 'csv' must be given");
  }
  if (generate) generate->validate();
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("data.test_fraction must lie in (0, 1)");
  if (ablation_seeds == 0) throw ConfigError("ablate.seeds must be at least 1");
  if (ablation_jobs == 0) throw ConfigError("ablate.jobs must be at least 1");
  train_config().validate();
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t{arch, hp, flags, seed, fault_step};
  if (generate) t.arch.num_classes = generate->num_classes;
  if (csv) t.arch.num_classes = csv->num_classes;
  return t;
}

ExperimentConfig config_from_json(const json& j) {
  check_keys(j, "config", {"seed", "output_dir", "data", "model", "hp", "ablation", "ablate"});
  ExperimentConfig c;
  read(j, "config", "seed", c.seed);
  read_path(j, "config", "output_dir", c.output_dir);

  if (j.contains("data")) {
    const json& d = j.at("data");
    check_keys(d, "data", {"generate", "csv", "test_fraction"});
    read(d, "data", "test_fraction", c.test_fraction);
    // Generated data is the default only when no CSV paths are given.
    if (d.contains("csv")) c.generate.reset();
    if (d.contains("generate")) c.generate = spec_from_json(d.at("generate"));
    if (d.contains("csv")) {
      const json& s = d.at("csv");
      check_keys(s, "data.csv", {"source", "target_train", "target_test", "num_classes"});
      CsvSources src;
      for (const char* key : {"source", "target_train", "target_test"}) {
        if (!s.contains(key)) throw ConfigError(std::string("data.csv.") + key + " is required");
      }
      read_path(s, "data.csv", "source", src.source);
      read_path(s, "data.csv", "target_train", src.target_train);
      read_path(s, "data.csv", "target_test", src.target_test);
      read(s, "data.csv", "num_classes", src.num_classes);
      c.csv = src;
    }
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, "model", {"feature_dim", "extractor_hidden", "discriminator_hidden"});
    read(m, "model", "feature_dim", c.arch.feature_dim);
    read(m, "model", "extractor_hidden", c.arch.extractor_hidden);
    read(m, "model", "discriminator_hidden", c.arch.discriminator_hidden);
  }
  if (j.contains("hp")) {
    const json& h = j.at("hp");
    check_keys(h, "hp", {"alpha", "eta", "gamma", "lr", "batch_size", "epochs", "beta_noise_init", "class_weights",
                         "alpha_warmup", "discriminator_steps", "discriminator_lr"});
    read(h, "hp", "alpha", c.hp.alpha);
    read(h, "hp", "eta", c.hp.eta);
    read(h, "hp", "gamma", c.hp.gamma);
    read(h, "hp", "lr", c.hp.lr);
    read(h, "hp", "batch_size", c.hp.batch_size);
    read(h, "hp", "epochs", c.hp.epochs);
    read(h, "hp", "beta_noise_init", c.hp.beta_noise_init);
    read(h, "hp", "class_weights", c.hp.class_weights);
    read(h, "hp", "alpha_warmup", c.hp.alpha_warmup);
    read(h, "hp", "discriminator_steps", c.hp.discriminator_steps);
    read(h, "hp", "discriminator_lr", c.hp.discriminator_lr);
  }
  if (j.contains("ablation")) {
    const json& a = j.at("ablation");
    check_keys(a, "ablation", {"variant", "enable_adv", "enable_dis", "enable_ncl", "single_network"});
    if (a.contains("variant")) {
      std::string name;
      read(a, "ablation", "variant", name);
      c.flags = flags_for(parse_variant(name));
    }
    read(a, "ablation", "enable_adv", c.flags.enable_adv);
    read(a, "ablation", "enable_dis", c.flags.enable_dis);
    read(a, "ablation", "enable_ncl", c.flags.enable_ncl);
    read(a, "ablation", "single_network", c.flags.single_network);
  }
  if (j.contains("ablate")) {
    const json& a = j.at("ablate");
    check_keys(a, "ablate", {"seeds", "jobs"});
    read(a, "ablate", "seeds", c.ablation_seeds);
    read(a, "ablate", "jobs", c.ablation_jobs);
  }
  return c;
}

json to_json(const ExperimentConfig& c) {
  json data{{"test_fraction", c.test_fraction}};
  if (c.generate) data["generate"] = spec_to_json(*c.generate);
  if (c.csv) {
    data["csv"] = {{"source", c.csv->source.string()},
                   {"target_train", c.csv->target_train.string()},
                   {"target_test", c.csv->target_test.string()},
                   {"num_classes", c.csv->num_classes}};
  }
  json ablation{{"enable_adv", c.flags.enable_adv},
                {"enable_dis", c.flags.enable_dis},
                {"enable_ncl", c.flags.enable_ncl},
                {"single_network", c.flags.single_network}};
  for (auto v : kAblationOrder)
    if (flags_for(v) == c.flags) ablation["variant"] = variant_name(v);
  return {{"seed", c.seed},
          {"output_dir", c.output_dir.string()},
          {"data", data},
          {"model",
           {{"feature_dim", c.arch.feature_dim},
            {"extractor_hidden", c.arch.extractor_hidden},
            {"discriminator_hidden", c.arch.discriminator_hidden}}},
          {"hp",
           {{"alpha", c.hp.alpha},
            {"eta", c.hp.eta},
            {"gamma", c.hp.gamma},
            {"lr", c.hp.lr},
            {"batch_size", c.hp.batch_size},
            {"epochs", c.hp.epochs},
            {"beta_noise_init", c.hp.beta_noise_init},
            {"class_weights", c.hp.class_weights},
            {"alpha_warmup", c.hp.alpha_warmup},
            {"discriminator_steps", c.hp.discriminator_steps},
            {"discriminator_lr", c.hp.discriminator_lr}}},
          {"ablation", ablation},
          {"ablate", {{"seeds", c.ablation_seeds}, {"jobs", c.ablation_jobs}}}};
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  try {
    return config_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ParseError(path.string(), 0, e.what());
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override '" + assignment + "' has an empty key segment");
    if (!node->is_object()) throw ConfigError("override '" + key + "': '" + part + "' is not inside a section");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

ExperimentData resolve_data(const ExperimentConfig& config) {
  if (config.generate) {
    auto domains = generate_synthetic(*config.generate, config.seed);
    auto split = split_holdout(domains.target, config.test_fraction, config.seed);
    return {std::move(domains.source), std::move(split.train), std::move(split.test)};
  }
  const auto& c = *config.csv;
  require_file(c.source, "data.csv.source");
  require_file(c.target_train, "data.csv.target_train");
  require_file(c.target_test, "data.csv.target_test");
  ExperimentData d{load_csv(c.source, c.num_classes), load_csv(c.target_train, c.num_classes),
                   load_csv(c.target_test, c.num_classes)};
  d.source.domain = Domain::source;
  d.target_train.domain = Domain::target;
  d.target_test.domain = Domain::target;
  if (d.source.input_dim != d.target_train.input_dim || d.source.input_dim != d.target_test.input_dim) {
    throw ConfigError("data.csv: files disagree on the number of feature columns");
  }
  for (const auto& e : d.source.examples)
    if (!e.label) throw ConfigError("data.csv.source: needs a label column");
  return d;
}

std::string format_number(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

namespace {

constexpr const char* kHistoryHeader =
    "epoch,steps,classification,adversarial,diversity,objective,discriminator,lambda_source,lambda_target,"
    "accuracy,macro_precision,macro_recall,macro_f1,noise_diag";

double parse_double(std::string_view s, const fs::path& path, std::size_t line) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw ParseError(path.string(), line, "bad number '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

void write_history_csv(std::span<const EpochRecord> history, const fs::path& path) {
  std::ostringstream out;
  out << kHistoryHeader << '\n';
  for (const auto& r : history) {
    out << r.epoch << ',' << r.steps;
    for (double v : {r.classification, r.adversarial, r.diversity, r.objective, r.discriminator, r.lambda_source,
                     r.lambda_target, r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1, r.noise_diag}) {
      out << ',' << format_number(v);
    }
    out << '\n';
  }
  write_text(path, out.str());
}

std::vector<EpochRecord> read_history_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open");
  std::string line;
  if (!std::getline(in, line) || line != kHistoryHeader) throw ParseError(path.string(), 1, "unexpected header");
  std::vector<EpochRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> f;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      f.push_back(parse_double(std::string_view(line).substr(start, comma - start), path, line_no));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (f.size() != 14) throw ParseError(path.string(), line_no, "expected 14 fields");
    EpochRecord r;
    r.epoch = static_cast<std::size_t>(f[0]);
    r.steps = static_cast<std::size_t>(f[1]);
    double* dst[] = {&r.classification,  &r.adversarial,   &r.diversity,    &r.objective,
                     &r.discriminator,   &r.lambda_source, &r.lambda_target, &r.accuracy,
                     &r.macro_precision, &r.macro_recall,  &r.macro_f1,     &r.noise_diag};
    for (std::size_t i = 0; i < 12; ++i) *dst[i] = f[i + 2];
    out.push_back(r);
  }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<std::uint64_t> ablation_seed_list(const ExperimentConfig& config) {
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < config.ablation_seeds; ++i) seeds.push_back(config.seed + i);
  return seeds;
}

std::vector<VariantSummary> run_ablation(const ExperimentConfig& config, std::span<const std::uint64_t> seeds,
                                         std::span<const Variant> variants, std::ostream* log) {
  config.validate();
  if (seeds.empty()) throw ConfigError("ablate: need at least one seed");

  // Data depends only on the seed, so it is shared across variants.
  std::vector<std::optional<ExperimentData>> data(seeds.size());
  std::vector<std::string> data_errors(seeds.size());
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    ExperimentConfig c = config;
    c.seed = seeds[s];
    try {
      data[s] = resolve_data(c);
    } catch (const Error& e) {
      data_errors[s] = e.what();
    }
  }

  std::vector<VariantSummary> out(variants.size());
  for (std::size_t v = 0; v < variants.size(); ++v) {
    out[v].variant = variants[v];
    out[v].runs.resize(seeds.size());
  }

  std::mutex log_mutex;
  auto run_one = [&](std::size_t job) {
    const std::size_t v = job / seeds.size(), s = job % seeds.size();
    RunResult& r = out[v].runs[s];
    r.seed = seeds[s];
    const auto start = std::chrono::steady_clock::now();
    if (!data[s]) {
      r.error = data_errors[s];
    } else {
      try {
        ExperimentConfig c = config;
        c.seed = seeds[s];
        c.flags = flags_for(variants[v]);
        const auto fitted = fit(c.train_config(), data[s]->source, data[s]->target_train, data[s]->target_test);
        r.completed = fitted.completed;
        r.error = fitted.error;
        if (fitted.completed) r.metrics = evaluate(fitted.model, data[s]->target_test);
      } catch (const std::exception& e) {
        r.completed = false;
        r.error = e.what();
      }
    }
    if (log) {
      const std::chrono::duration<double> took = std::chrono::steady_clock::now() - start;
      std::lock_guard lock(log_mutex);
      *log << variant_name(variants[v]) << " seed " << r.seed << ": ";
      if (r.completed) {
        *log << "macro_f1 " << r.metrics.macro_f1 << " accuracy " << r.metrics.accuracy;
      } else {
        *log << "FAILED (" << r.error << ")";
      }
      *log << " [" << took.count() << " s]\n";
    }
  };

  const std::size_t jobs = variants.size() * seeds.size();
  const std::size_t workers = std::min(config.ablation_jobs, jobs);
  if (workers <= 1) {
    for (std::size_t j = 0; j < jobs; ++j) run_one(j);
  } else {
    std::mutex next_mutex;
    std::size_t next = 0;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        while (true) {
          std::size_t j;
          {
            std::lock_guard lock(next_mutex);
            if (next == jobs) return;
            j = next++;
          }
          run_one(j);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  for (auto& summary : out) {
    std::vector<double> acc, prec, rec, f1, diag;
    for (const auto& r : summary.runs) {
      if (!r.completed) continue;
      acc.push_back(r.metrics.accuracy);
      prec.push_back(r.metrics.macro_precision);
      rec.push_back(r.metrics.macro_recall);
      f1.push_back(r.metrics.macro_f1);
      diag.push_back(r.metrics.noise_diag.value_or(0.0));
    }
    summary.median_accuracy = median(acc);
    summary.median_macro_precision = median(prec);
    summary.median_macro_recall = median(rec);
    summary.median_macro_f1 = median(f1);
    summary.median_noise_diag = median(diag);
  }
  return out;
}

json ablation_summary_json(const ExperimentConfig& config, std::span<const std::uint64_t> seeds,
                           std::span<const VariantSummary> summary) {
  json variants = json::array();
  for (const auto& s : summary) {
    json runs = json::array();
    std::size_t completed = 0;
    for (const auto& r : s.runs) {
      json run{{"seed", r.seed}, {"completed", r.completed}};
      if (r.completed) {
        run["metrics"] = to_json(r.metrics);
        ++completed;
      } else {
        run["error"] = r.error;
      }
      runs.push_back(run);
    }
    variants.push_back({{"variant", variant_name(s.variant)},
                        {"completed_runs", completed},
                        {"median",
                         {{"accuracy", s.median_accuracy},
                          {"macro_precision", s.median_macro_precision},
                          {"macro_recall", s.median_macro_recall},
                          {"macro_f1", s.median_macro_f1},
                          {"noise_diag", s.median_noise_diag}}},
                        {"runs", runs}});
  }
  return {{"config", to_json(config)}, {"seeds", std::vector<std::uint64_t>(seeds.begin(), seeds.end())},
          {"variants", variants}};
}

int cmd_generate(const ExperimentConfig& config, std::ostream& log, std::ostream& err) {
  config.validate();
  if (!config.generate) {
    err << "error: generate needs a data.generate section\n";
    return kExitConfig;
  }
  const auto data = resolve_data(config);
  const fs::path dir = checked_out_dir(config.output_dir);
  write_csv(data.source, dir / "source.csv");
  write_csv(data.target_train, dir / "target_train.csv");
  write_csv(data.target_test, dir / "target_test.csv");
  write_text(dir / "manifest.json", dump(manifest(config, data)));
  log << "wrote " << data.source.size() << " source, " << data.target_train.size() << " target train and "
      << data.target_test.size() << " target test rows to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_train(const ExperimentConfig& config, std::ostream& log, std::ostream& err) {
  config.validate();
  const auto data = resolve_data(config);
  const fs::path dir = checked_out_dir(config.output_dir);
  const auto start = std::chrono::steady_clock::now();
  const auto result = fit(config.train_config(), data.source, data.target_train, data.target_test);
  const std::chrono::duration<double> took = std::chrono::steady_clock::now() - start;

  write_history_csv(result.history, dir / "history.csv");
  if (!result.completed) {
    err << "error: " << result.error << " (history of " << result.history.size() << " epochs saved)\n";
    return kExitNumeric;
  }
  save_checkpoint(result.model, dir / "checkpoint.bin");
  const MetricsReport report = evaluate(result.model, data.target_test);
  json metrics = to_json(report);
  metrics["epochs"] = result.history.size();
  metrics["config"] = to_json(config);
  metrics["config"].erase("output_dir");  // where the files went does not affect them
  write_text(dir / "metrics.json", dump(metrics));
  log << "trained " << result.history.size() << " epochs in " << took.count() << " s; target macro_f1 "
      << report.macro_f1 << ", accuracy " << report.accuracy << "\n";
  return kExitOk;
}

int cmd_evaluate(const fs::path& checkpoint, const fs::path& data_path, const std::optional<fs::path>& out_dir,
                 std::ostream& out, std::ostream& /*err*/) {
  require_file(checkpoint, "--checkpoint");
  require_file(data_path, "--data");
  const CoudaModel model = load_checkpoint(checkpoint);
  const Dataset data = load_csv(data_path, model.arch().num_classes);
  if (data.input_dim != model.arch().input_dim) {
    throw ConfigError("--data has " + std::to_string(data.input_dim) + " feature columns, model expects " +
                      std::to_string(model.arch().input_dim));
  }
  const std::string text = dump(to_json(evaluate(model, data)));
  if (out_dir) write_text(checked_out_dir(*out_dir) / "eval_metrics.json", text);
  out << text;
  return kExitOk;
}

int cmd_ablate(const ExperimentConfig& config, std::ostream& log, std::ostream& /*err*/) {
  config.validate();
  const fs::path dir = checked_out_dir(config.output_dir);
  const auto seeds = ablation_seed_list(config);
  const auto start = std::chrono::steady_clock::now();
  const auto summary = run_ablation(config, seeds, kAblationOrder, &log);
  const std::chrono::duration<double> took = std::chrono::steady_clock::now() - start;
  write_text(dir / "ablation_summary.json", dump(ablation_summary_json(config, seeds, summary)));
  for (const auto& s : summary) {
    log << variant_name(s.variant) << ": median macro_f1 " << s.median_macro_f1 << ", median accuracy "
        << s.median_accuracy << "\n";
  }
  log << "ablation finished in " << took.count() << " s\n";
  return kExitOk;
}

int guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace couda
