#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "couda/tensor.hpp"

namespace couda {

enum class Domain { source, target };

struct LabeledExample {
  std::vector<double> x;
  /// Observed, possibly noisy label. Source examples only.
  std::optional<std::size_t> label;
  /// Hidden true label, used for evaluation and noise diagnostics only.
  std::optional<std::size_t> clean_label;
  Domain domain = Domain::source;
};

struct Dataset {
  Domain domain = Domain::source;
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::vector<LabeledExample> examples;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
  /// n x d feature matrix.
  diff::Tensor features() const;
  /// Throws ConfigError if any example lacks the requested label.
  std::vector<std::size_t> observed_labels() const;
  std::vector<std::size_t> clean_labels() const;
};

struct DomainBatch {
  std::vector<LabeledExample> source;
  std::vector<LabeledExample> target;
};

/// K x K row-stochastic corruption matrix, row-major: transition[k*K + m]
/// is the probability that true class k is observed as m.
struct NoiseSpec {
  std::size_t num_classes = 0;
  std::vector<double> transition;
  std::uint64_t seed = 0;

  /// Diagonal 1 - rate, off-diagonal mass spread evenly.
  static NoiseSpec uniform(std::size_t num_classes, double rate, std::uint64_t seed);
  void validate() const;
};

/// Class priors of the source (slide) and target (microscopy) training sets
/// in the histopathology benchmark this generator imitates.
inline constexpr std::array<double, 3> kSourceClassCounts{36094, 3626, 3081};
inline constexpr std::array<double, 3> kTargetClassCounts{2696, 1042, 1091};

std::vector<double> normalize_counts(std::span<const double> counts);

struct SyntheticSpec {
  std::size_t num_classes = 3;
  double radius = 4.0;
  double cluster_std = 1.0;
  std::vector<double> source_priors = normalize_counts(kSourceClassCounts);
  std::vector<double> target_priors = normalize_counts(kTargetClassCounts);
  std::size_t source_count = 3000;
  std::size_t target_count = 2500;
  double rotation_deg = 30.0;
  std::array<double, 2> translation{1.0, 1.0};
  /// Row-major K x K; empty means uniform off-diagonal noise at noise_rate.
  std::vector<double> noise_transition;
  double noise_rate = 0.3;

  NoiseSpec noise(std::uint64_t seed) const;
  void validate() const;
};

/// Rotation by `rotation_deg` about the origin followed by a translation.
struct AffineMap {
  double rotation_deg = 0.0;
  std::array<double, 2> translation{0.0, 0.0};

  std::array<double, 2> apply(std::array<double, 2> p) const;
};

/// Integer class counts summing to `total` that follow `priors`
/// (largest-remainder rounding).
std::vector<std::size_t> class_counts(std::span<const double> priors, std::size_t total);

/// Gaussian clusters with centres evenly spaced on a circle, mapped through
/// `map`. Each point is centre + cluster_std * eps with eps drawn from a
/// stream fixed by `seed`, so two calls with the same seed and counts differ
/// only by their maps. Examples carry clean labels but no observed label.
Dataset sample_domain(const SyntheticSpec& spec, std::span<const std::size_t> counts, const AffineMap& map,
                      Domain domain, std::uint64_t seed);

struct SyntheticDomains {
  Dataset source;  // with injected noisy labels
  Dataset target;  // unlabeled (clean labels kept for evaluation)
};

SyntheticDomains generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

/// Resample each label k from row k of the transition matrix.
std::vector<std::size_t> inject_label_noise(std::span<const std::size_t> labels, const NoiseSpec& noise);

struct HoldoutSplit {
  Dataset train;
  Dataset test;
};

/// Random split with round(fraction * n) examples in the test part.
HoldoutSplit split_holdout(const Dataset& data, double test_fraction, std::uint64_t seed);

/// Batches for one epoch: each pairs batch_size source with batch_size target
/// examples drawn from per-domain shuffles seeded by (seed, epoch). The epoch
/// has ceil(max(n_s, n_t) / batch_size) batches; whichever domain runs out
/// first wraps around to the start of its own permutation.
std::vector<DomainBatch> make_batches(const Dataset& source, const Dataset& target, std::size_t batch_size,
                                      std::uint64_t seed, std::uint64_t epoch);

// CSV: header x0,...,x{d-1},label,clean_label (source) or
// x0,...,x{d-1}[,clean_label] (target); one example per row.
void write_csv(const Dataset& data, const std::filesystem::path& path);
Dataset load_csv(const std::filesystem::path& path, std::size_t num_classes);

}  // namespace couda
