#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "couda/data.hpp"
#include "couda/model.hpp"

namespace couda {

/// Rows are true classes, columns predicted classes.
using ConfusionMatrix = std::vector<std::vector<std::size_t>>;

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;

  bool operator==(const ClassMetrics&) const = default;
};

struct MacroMetrics {
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::vector<ClassMetrics> per_class;
};

struct MetricsReport {
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::vector<ClassMetrics> per_class;
  ConfusionMatrix confusion;
  /// Mean over examples of the mean diagonal of the first peer's estimated
  /// noise transition.
  std::optional<double> noise_diag;

  bool operator==(const MetricsReport&) const = default;
};

ConfusionMatrix confusion_matrix(std::span<const std::size_t> predicted, std::span<const std::size_t> truth,
                                 std::size_t num_classes);

/// Per-class precision, recall and F1 with 0/0 taken as 0, and their
/// unweighted means (classes without support still count).
MacroMetrics macro_metrics(const ConfusionMatrix& confusion);

/// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

/// Predicts with the clean ensemble path and scores against clean labels.
/// Throws ConfigError if any example lacks a clean label.
MetricsReport evaluate(const CoudaModel& model, const Dataset& data);

/// Mean over examples of mean(diag(T(f_1(x)))).
double mean_noise_diagonal(const CoudaModel& model, const Dataset& data);

nlohmann::json to_json(const MetricsReport& report);
MetricsReport metrics_from_json(const nlohmann::json& j);

}  // namespace couda
