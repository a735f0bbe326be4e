#include "couda/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>

#include "couda/rng.hpp"

namespace couda {

namespace {

// Stream tags for make_rng.
constexpr std::uint64_t kSourceStream = 1;
constexpr std::uint64_t kTargetStream = 2;
constexpr std::uint64_t kNoiseStream = 3;
constexpr std::uint64_t kSplitStream = 4;
constexpr std::uint64_t kBatchStream = 5;

void validate_transition(std::string_view op, std::span<const double> t, std::size_t k) {
  if (t.size() != k * k) throw ConfigError(std::string(op) + ": transition must have K*K entries");
  for (std::size_t r = 0; r < k; ++r) {
    double row = 0.0;
    for (std::size_t m = 0; m < k; ++m) {
      const double v = t[r * k + m];
      if (!std::isfinite(v) || v < 0.0) throw ConfigError(std::string(op) + ": transition entries must be >= 0");
      row += v;
    }
    if (std::abs(row - 1.0) > 1e-9) {
      throw ConfigError(std::string(op) + ": transition row " + std::to_string(r) + " sums to " + std::to_string(row));
    }
  }
}

void validate_priors(std::string_view name, std::span<const double> priors, std::size_t k) {
  if (priors.size() != k) throw ConfigError(std::string(name) + ": expected " + std::to_string(k) + " priors");
  double total = 0.0;
  for (double p : priors) {
    if (!std::isfinite(p) || p <= 0.0) throw ConfigError(std::string(name) + ": priors must be positive");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw ConfigError(std::string(name) + ": priors sum to " + std::to_string(total) + ", expected 1");
  }
}

}  // namespace

diff::Tensor Dataset::features() const {
  if (examples.empty()) throw ConfigError("dataset is empty");
  std::vector<double> values;
  values.reserve(examples.size() * input_dim);
  for (const auto& e : examples) values.insert(values.end(), e.x.begin(), e.x.end());
  return diff::Tensor::from({examples.size(), input_dim}, std::move(values));
}

std::vector<std::size_t> Dataset::observed_labels() const {
  std::vector<std::size_t> out;
  out.reserve(examples.size());
  for (const auto& e : examples) {
    if (!e.label) throw ConfigError("dataset: example without an observed label");
    out.push_back(*e.label);
  }
  return out;
}

std::vector<std::size_t> Dataset::clean_labels() const {
  std::vector<std::size_t> out;
  out.reserve(examples.size());
  for (const auto& e : examples) {
    if (!e.clean_label) throw ConfigError("dataset: example without a clean label");
    out.push_back(*e.clean_label);
  }
  return out;
}

NoiseSpec NoiseSpec::uniform(std::size_t num_classes, double rate, std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("noise: need at least 2 classes");
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("noise: rate must lie in [0, 1]");
  NoiseSpec spec{num_classes, std::vector<double>(num_classes * num_classes), seed};
  const double off = rate / static_cast<double>(num_classes - 1);
  for (std::size_t k = 0; k < num_classes; ++k)
    for (std::size_t m = 0; m < num_classes; ++m) spec.transition[k * num_classes + m] = k == m ? 1.0 - rate : off;
  return spec;
}

void NoiseSpec::validate() const { validate_transition("noise", transition, num_classes); }

std::vector<double> normalize_counts(std::span<const double> counts) {
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  std::vector<double> out(counts.begin(), counts.end());
  for (auto& v : out) v /= total;
  return out;
}

NoiseSpec SyntheticSpec::noise(std::uint64_t seed) const {
  const std::uint64_t noise_seed = make_rng({seed, kNoiseStream})();
  if (noise_transition.empty()) return NoiseSpec::uniform(num_classes, noise_rate, noise_seed);
  return NoiseSpec{num_classes, noise_transition, noise_seed};
}

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw ConfigError("data: num_classes must be at least 2");
  validate_priors("data.source_priors", source_priors, num_classes);
  validate_priors("data.target_priors", target_priors, num_classes);
  if (source_count < num_classes || target_count < num_classes) {
    throw ConfigError("data: each domain needs at least num_classes examples");
  }
  if (!(radius >= 0.0) || !(cluster_std > 0.0)) throw ConfigError("data: radius >= 0 and cluster_std > 0 required");
  if (!std::isfinite(rotation_deg) || !std::isfinite(translation[0]) || !std::isfinite(translation[1])) {
    throw ConfigError("data: shift must be finite");
  }
  noise(0).validate();
}

std::array<double, 2> AffineMap::apply(std::array<double, 2> p) const {
  const double theta = rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  return {c * p[0] - s * p[1] + translation[0], s * p[0] + c * p[1] + translation[1]};
}

std::vector<std::size_t> class_counts(std::span<const double> priors, std::size_t total) {
  std::vector<std::size_t> counts(priors.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < priors.size(); ++k) {
    const double exact = priors[k] * static_cast<double>(total);
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[k];
    remainders.emplace_back(exact - std::floor(exact), k);
  }
  // Largest remainder first; ties to the lower class index.
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++counts[remainders[i % remainders.size()].second];
  return counts;
}

Dataset sample_domain(const SyntheticSpec& spec, std::span<const std::size_t> counts, const AffineMap& map,
                      Domain domain, std::uint64_t seed) {
  if (counts.size() != spec.num_classes) throw ConfigError("sample_domain: one count per class required");
  auto rng = make_rng({seed});
  std::normal_distribution<double> unit(0.0, 1.0);
  Dataset data{domain, 2, spec.num_classes, {}};
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(spec.num_classes);
    const std::array<double, 2> centre{spec.radius * std::cos(angle), spec.radius * std::sin(angle)};
    for (std::size_t i = 0; i < counts[k]; ++i) {
      const double e0 = unit(rng);
      const double e1 = unit(rng);
      const auto p = map.apply({centre[0] + spec.cluster_std * e0, centre[1] + spec.cluster_std * e1});
      data.examples.push_back({{p[0], p[1]}, std::nullopt, k, domain});
    }
  }
  std::shuffle(data.examples.begin(), data.examples.end(), rng);
  return data;
}

SyntheticDomains generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  SyntheticDomains out;
  const auto source_counts = class_counts(spec.source_priors, spec.source_count);
  out.source = sample_domain(spec, source_counts, AffineMap{}, Domain::source, make_rng({seed, kSourceStream})());
  const auto noisy = inject_label_noise(out.source.clean_labels(), spec.noise(seed));
  for (std::size_t i = 0; i < noisy.size(); ++i) out.source.examples[i].label = noisy[i];

  const auto target_counts = class_counts(spec.target_priors, spec.target_count);
  out.target = sample_domain(spec, target_counts, AffineMap{spec.rotation_deg, spec.translation}, Domain::target,
                             make_rng({seed, kTargetStream})());
  return out;
}

std::vector<std::size_t> inject_label_noise(std::span<const std::size_t> labels, const NoiseSpec& noise) {
  noise.validate();
  const std::size_t k = noise.num_classes;
  std::vector<std::discrete_distribution<std::size_t>> rows;
  for (std::size_t r = 0; r < k; ++r) {
    rows.emplace_back(noise.transition.begin() + static_cast<std::ptrdiff_t>(r * k),
                      noise.transition.begin() + static_cast<std::ptrdiff_t>((r + 1) * k));
  }
  auto rng = make_rng({noise.seed});
  std::vector<std::size_t> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= k) throw ConfigError("inject_label_noise: label " + std::to_string(labels[i]) + " out of range");
    out[i] = rows[labels[i]](rng);
  }
  return out;
}

HoldoutSplit split_holdout(const Dataset& data, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ConfigError("split: fraction must lie in [0, 1)");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_rng({seed, kSplitStream});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(data.size())));
  std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::sort(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  HoldoutSplit split{{data.domain, data.input_dim, data.num_classes, {}}, {data.domain, data.input_dim, data.num_classes, {}}};
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_test ? split.test : split.train).examples.push_back(data.examples[order[i]]);
  }
  return split;
}

std::vector<DomainBatch> make_batches(const Dataset& source, const Dataset& target, std::size_t batch_size,
                                      std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size < 1) throw ConfigError("make_batches: batch_size must be >= 1");
  if (source.empty() || target.empty()) throw ConfigError("make_batches: both domains must be non-empty");
  auto permutation = [&](std::size_t n, std::uint64_t stream) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    auto rng = make_rng({seed, kBatchStream, epoch, stream});
    std::shuffle(p.begin(), p.end(), rng);
    return p;
  };
  const auto ps = permutation(source.size(), 0);
  const auto pt = permutation(target.size(), 1);
  const std::size_t longest = std::max(source.size(), target.size());
  const std::size_t count = (longest + batch_size - 1) / batch_size;
  std::vector<DomainBatch> batches(count);
  for (std::size_t b = 0; b < count; ++b) {
    auto& batch = batches[b];
    batch.source.reserve(batch_size);
    batch.target.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
      const std::size_t slot = b * batch_size + i;
      batch.source.push_back(source.examples[ps[slot % ps.size()]]);
      batch.target.push_back(target.examples[pt[slot % pt.size()]]);
    }
  }
  return batches;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

void write_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("csv: cannot open " + path.string() + " for writing");
  const bool source = data.domain == Domain::source;
  for (std::size_t j = 0; j < data.input_dim; ++j) out << (j ? "," : "") << "x" << j;
  out << (source ? ",label,clean_label\n" : ",clean_label\n");
  for (const auto& e : data.examples) {
    for (std::size_t j = 0; j < e.x.size(); ++j) out << (j ? "," : "") << format_double(e.x[j]);
    if (source) out << "," << e.label.value();
    out << "," << e.clean_label.value() << "\n";
  }
  if (!out) throw Error("csv: write to " + path.string() + " failed");
}

Dataset load_csv(const std::filesystem::path& path, std::size_t num_classes) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open file");
  const std::string where = path.string();
  std::string line;
  if (!std::getline(in, line)) throw ParseError(where, 1, "missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const auto header = split_fields(line);
  std::size_t dim = 0;
  while (dim < header.size() && header[dim] == "x" + std::to_string(dim)) ++dim;
  if (dim == 0) throw ParseError(where, 1, "header must start with x0");
  const auto rest = std::vector<std::string_view>(header.begin() + static_cast<std::ptrdiff_t>(dim), header.end());
  Dataset data;
  data.input_dim = dim;
  data.num_classes = num_classes;
  bool has_label = false, has_clean = false;
  if (rest == std::vector<std::string_view>{"label", "clean_label"}) {
    data.domain = Domain::source;
    has_label = has_clean = true;
  } else if (rest == std::vector<std::string_view>{"clean_label"}) {
    data.domain = Domain::target;
    has_clean = true;
  } else if (rest.empty()) {
    data.domain = Domain::target;
  } else {
    throw ParseError(where, 1, "unrecognized header '" + line + "'");
  }
  const std::size_t expected = header.size();

  auto parse_label = [&](std::string_view field, std::size_t line_no) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc() || ptr != field.data() + field.size()) {
      throw ParseError(where, line_no, "invalid label '" + std::string(field) + "'");
    }
    if (v >= num_classes) {
      throw ParseError(where, line_no,
                       "label " + std::to_string(v) + " out of range for " + std::to_string(num_classes) + " classes");
    }
    return v;
  };

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != expected) {
      throw ParseError(where, line_no,
                       "expected " + std::to_string(expected) + " fields, found " + std::to_string(fields.size()));
    }
    LabeledExample e;
    e.domain = data.domain;
    e.x.resize(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      const auto f = fields[j];
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), e.x[j]);
      if (ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(e.x[j])) {
        throw ParseError(where, line_no, "invalid number '" + std::string(f) + "' in column x" + std::to_string(j));
      }
    }
    std::size_t col = dim;
    if (has_label) e.label = parse_label(fields[col++], line_no);
    if (has_clean) e.clean_label = parse_label(fields[col++], line_no);
    data.examples.push_back(std::move(e));
  }
  if (data.examples.empty()) throw ParseError(where, line_no, "empty dataset");
  return data;
}

}  // namespace couda
