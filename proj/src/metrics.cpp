#include "couda/metrics.hpp"

#include <algorithm>

#include "couda/ops.hpp"

namespace couda {

ConfusionMatrix confusion_matrix(std::span<const std::size_t> predicted, std::span<const std::size_t> truth,
                                 std::size_t num_classes) {
  if (predicted.size() != truth.size()) {
    throw ShapeError("confusion_matrix", {Shape{predicted.size()}, Shape{truth.size()}}, "lengths differ");
  }
  ConfusionMatrix cm(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= num_classes || predicted[i] >= num_classes) {
      throw DomainError("confusion_matrix", "class index out of range at position " + std::to_string(i));
    }
    ++cm[truth[i]][predicted[i]];
  }
  return cm;
}

MacroMetrics macro_metrics(const ConfusionMatrix& cm) {
  const std::size_t k = cm.size();
  MacroMetrics out;
  auto ratio = [](double num, double den) { return den > 0.0 ? num / den : 0.0; };
  for (std::size_t c = 0; c < k; ++c) {
    if (cm[c].size() != k) throw ShapeError("macro_metrics", {Shape{k, cm[c].size()}}, "confusion must be square");
    double tp = static_cast<double>(cm[c][c]);
    double predicted = 0.0, actual = 0.0;
    for (std::size_t r = 0; r < k; ++r) {
      predicted += static_cast<double>(cm[r][c]);
      actual += static_cast<double>(cm[c][r]);
    }
    ClassMetrics m;
    m.precision = ratio(tp, predicted);
    m.recall = ratio(tp, actual);
    m.f1 = ratio(2.0 * m.precision * m.recall, m.precision + m.recall);
    m.support = static_cast<std::size_t>(actual);
    out.per_class.push_back(m);
  }
  if (k > 0) {
    for (const auto& m : out.per_class) {
      out.macro_precision += m.precision;
      out.macro_recall += m.recall;
      out.macro_f1 += m.f1;
    }
    out.macro_precision /= static_cast<double>(k);
    out.macro_recall /= static_cast<double>(k);
    out.macro_f1 /= static_cast<double>(k);
  }
  return out;
}

std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

double mean_noise_diagonal(const CoudaModel& model, const Dataset& data) {
  diff::NoGradGuard no_grad;
  const std::size_t k = model.num_classes();
  const Tensor t = model.noise_transitions(model.features(0, data.features()));
  double total = 0.0;
  auto v = t.values();
  for (std::size_t i = 0; i < data.size(); ++i) {
    double diag = 0.0;
    for (std::size_t c = 0; c < k; ++c) diag += v[(i * k + c) * k + c];
    total += diag / static_cast<double>(k);
  }
  return total / static_cast<double>(data.size());
}

MetricsReport evaluate(const CoudaModel& model, const Dataset& data) {
  if (data.empty()) throw ConfigError("evaluate: empty dataset");
  const auto truth = data.clean_labels();
  const std::size_t k = model.num_classes();
  const Tensor probs = model.ensemble_predict(data.features());
  std::vector<std::size_t> predicted(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) predicted[i] = argmax(probs.values().subspan(i * k, k));

  MetricsReport report;
  report.confusion = confusion_matrix(predicted, truth, k);
  auto macro = macro_metrics(report.confusion);
  std::size_t correct = 0;
  for (std::size_t c = 0; c < k; ++c) correct += report.confusion[c][c];
  report.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  report.macro_precision = macro.macro_precision;
  report.macro_recall = macro.macro_recall;
  report.macro_f1 = macro.macro_f1;
  report.per_class = std::move(macro.per_class);
  report.noise_diag = mean_noise_diagonal(model, data);
  return report;
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& c : r.per_class) {
    per_class.push_back({{"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}, {"support", c.support}});
  }
  nlohmann::json j = {{"accuracy", r.accuracy},
                      {"macro_precision", r.macro_precision},
                      {"macro_recall", r.macro_recall},
                      {"macro_f1", r.macro_f1},
                      {"per_class", per_class},
                      {"confusion", r.confusion}};
  j["noise_diag"] = r.noise_diag ? nlohmann::json(*r.noise_diag) : nlohmann::json(nullptr);
  return j;
}

MetricsReport metrics_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.accuracy = j.at("accuracy").get<double>();
  r.macro_precision = j.at("macro_precision").get<double>();
  r.macro_recall = j.at("macro_recall").get<double>();
  r.macro_f1 = j.at("macro_f1").get<double>();
  for (const auto& c : j.at("per_class")) {
    r.per_class.push_back({c.at("precision").get<double>(), c.at("recall").get<double>(), c.at("f1").get<double>(),
                           c.at("support").get<std::size_t>()});
  }
  r.confusion = j.at("confusion").get<ConfusionMatrix>();
  if (j.contains("noise_diag") && !j.at("noise_diag").is_null()) r.noise_diag = j.at("noise_diag").get<double>();
  return r;
}

}  // namespace couda
