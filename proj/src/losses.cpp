#include "couda/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "couda/ops.hpp"

namespace couda {

namespace dt = couda::diff;

void Hyperparams::validate() const {
  auto finite_nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };
  if (!finite_nonneg(alpha)) throw ConfigError("hp.alpha must be a finite value >= 0");
  if (!finite_nonneg(eta)) throw ConfigError("hp.eta must be a finite value >= 0");
  if (!finite_nonneg(gamma)) throw ConfigError("hp.gamma must be a finite value >= 0");
  if (!(std::isfinite(lr) && lr > 0.0)) throw ConfigError("hp.lr must be > 0");
  if (batch_size < 1) throw ConfigError("hp.batch_size must be >= 1");
  if (discriminator_steps < 1) throw ConfigError("hp.discriminator_steps must be >= 1");
  if (!finite_nonneg(discriminator_lr)) throw ConfigError("hp.discriminator_lr must be a finite value >= 0");
  if (!std::isfinite(beta_noise_init)) throw ConfigError("hp.beta_noise_init must be finite");
  for (double w : class_weights)
    if (!finite_nonneg(w)) throw ConfigError("hp.class_weights must be finite values >= 0");
}

namespace {

void require_distribution(std::string_view op, std::span<const double> p) {
  double total = 0.0;
  for (double v : p) {
    if (v < 0.0 || !std::isfinite(v)) throw DomainError(std::string(op), "entries must be finite and >= 0");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw DomainError(std::string(op), "input sums to " + std::to_string(total) + ", expected 1");
  }
}

}  // namespace

double transfer_weight(std::span<const double> y1, std::span<const double> y2) {
  if (y1.size() != y2.size()) throw ShapeError("transfer_weight", {Shape{y1.size()}, Shape{y2.size()}});
  double dot = 0.0, n1 = 0.0, n2 = 0.0;
  for (std::size_t i = 0; i < y1.size(); ++i) {
    dot += y1[i] * y2[i];
    n1 += y1[i] * y1[i];
    n2 += y2[i] * y2[i];
  }
  if (n1 == 0.0 || n2 == 0.0) throw DomainError("transfer_weight", "zero vector");
  return std::clamp(1.0 - dot / std::sqrt(n1 * n2), 0.0, 1.0);
}

double adversarial_loss(std::span<const std::vector<double>> d_source, std::span<const std::vector<double>> d_target,
                        std::span<const double> lambda_source, std::span<const double> lambda_target) {
  if (d_source.size() != d_target.size()) {
    throw ShapeError("adversarial_loss", {Shape{d_source.size()}, Shape{d_target.size()}}, "peer counts differ");
  }
  double total = 0.0;
  for (std::size_t p = 0; p < d_source.size(); ++p) {
    const auto& ds = d_source[p];
    const auto& dtg = d_target[p];
    if (ds.size() != lambda_source.size() || dtg.size() != lambda_target.size()) {
      throw ShapeError("adversarial_loss",
                       {Shape{ds.size()}, Shape{lambda_source.size()}, Shape{dtg.size()}, Shape{lambda_target.size()}},
                       "weights and discriminator outputs must have equal length");
    }
    if (ds.empty() || dtg.empty()) throw ShapeError("adversarial_loss", {Shape{ds.size()}, Shape{dtg.size()}}, "empty");
    double target_term = 0.0;
    for (std::size_t j = 0; j < dtg.size(); ++j) target_term += lambda_target[j] * (dtg[j] - 1.0) * (dtg[j] - 1.0);
    double source_term = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) source_term += lambda_source[i] * ds[i] * ds[i];
    total += target_term / static_cast<double>(dtg.size()) + source_term / static_cast<double>(ds.size());
  }
  return total;
}

double focal_loss(std::span<const double> z_hat, std::size_t label, double gamma) {
  if (label >= z_hat.size()) {
    throw DomainError("focal_loss", "label " + std::to_string(label) + " out of range for " +
                                        std::to_string(z_hat.size()) + " classes");
  }
  const double p = z_hat[label];
  return -std::pow(std::max(1.0 - p, 0.0), gamma) * std::log(std::max(p, kLogFloor));
}

double js_divergence(std::span<const double> y1, std::span<const double> y2) {
  if (y1.size() != y2.size()) throw ShapeError("js_divergence", {Shape{y1.size()}, Shape{y2.size()}});
  require_distribution("js_divergence", y1);
  require_distribution("js_divergence", y2);
  double total = 0.0;
  for (std::size_t i = 0; i < y1.size(); ++i) {
    const double m = 0.5 * (y1[i] + y2[i]);
    if (y1[i] > 0.0) total += 0.5 * y1[i] * std::log(y1[i] / m);
    if (y2[i] > 0.0) total += 0.5 * y2[i] * std::log(y2[i] / m);
  }
  return total;
}

Tensor transfer_weights(const Tensor& y1, const Tensor& y2) {
  dt::NoGradGuard no_grad;
  const Tensor cos = dt::cosine_similarity_rowwise(y1, y2);
  std::vector<double> lambda(cos.size());
  std::transform(cos.values().begin(), cos.values().end(), lambda.begin(),
                 [](double c) { return std::clamp(1.0 - c, 0.0, 1.0); });
  return Tensor::from({cos.size(), 1}, std::move(lambda));
}

Tensor adversarial_term(const Tensor& d_source, const Tensor& d_target, const Tensor& lambda_source,
                        const Tensor& lambda_target) {
  if (d_source.size() != lambda_source.size() || d_target.size() != lambda_target.size()) {
    throw ShapeError("adversarial_loss",
                     {d_source.shape(), lambda_source.shape(), d_target.shape(), lambda_target.shape()},
                     "weights and discriminator outputs must have equal length");
  }
  const Tensor ls = dt::reshape(lambda_source, d_source.shape());
  const Tensor lt = dt::reshape(lambda_target, d_target.shape());
  const Tensor target_term = dt::mean(dt::mul(lt, dt::square(dt::add_scalar(d_target, -1.0))));
  const Tensor source_term = dt::mean(dt::mul(ls, dt::square(d_source)));
  return dt::add(target_term, source_term);
}

Tensor focal_loss_mean(const Tensor& z_hat, std::span<const std::size_t> labels, double gamma,
                       std::span<const double> class_weights) {
  const Tensor p = dt::pick(z_hat, labels);
  const Tensor log_p = dt::log(dt::clamp_min(p, kLogFloor));
  Tensor per_row = log_p;
  if (gamma != 0.0) {
    const Tensor easy = dt::clamp_min(dt::add_scalar(dt::scale(p, -1.0), 1.0), 0.0);
    per_row = dt::mul(dt::pow_scalar(easy, gamma), log_p);
  }
  if (!class_weights.empty()) {
    if (class_weights.size() != z_hat.cols()) {
      throw ShapeError("focal_loss", {z_hat.shape(), Shape{class_weights.size()}}, "one weight per class");
    }
    std::vector<double> w(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) w[i] = class_weights[labels[i]];
    per_row = dt::scale_rows(per_row, Tensor::from({labels.size(), 1}, std::move(w)));
  }
  return dt::scale(dt::mean(per_row), -1.0);
}

Tensor js_divergence_rows(const Tensor& y1, const Tensor& y2) {
  const Tensor log_m = dt::log(dt::clamp_min(dt::scale(dt::add(y1, y2), 0.5), kLogFloor));
  const Tensor t1 = dt::sum_rows(dt::mul(y1, dt::sub(dt::log(dt::clamp_min(y1, kLogFloor)), log_m)));
  const Tensor t2 = dt::sum_rows(dt::mul(y2, dt::sub(dt::log(dt::clamp_min(y2, kLogFloor)), log_m)));
  return dt::scale(dt::add(t1, t2), 0.5);
}

Tensor adversarial_objective(const BatchForward& fw) {
  const std::size_t ns = fw.n_source;
  const std::size_t n = fw.n_source + fw.n_target;
  const Tensor lambda_s = dt::slice_rows(fw.lambda, 0, ns);
  const Tensor lambda_t = dt::slice_rows(fw.lambda, ns, n);
  Tensor total;
  for (const auto& peer : fw.peers) {
    const Tensor term = adversarial_term(dt::slice_rows(peer.d_hat, 0, ns), dt::slice_rows(peer.d_hat, ns, n),
                                         lambda_s, lambda_t);
    total = total ? dt::add(total, term) : term;
  }
  return total;
}

ObjectiveTerms total_objective(const BatchForward& fw, std::span<const std::size_t> noisy_labels,
                               const Hyperparams& hp, ObjectiveSwitches switches, double alpha_scale) {
  if (fw.peers.empty()) throw ConfigError("total_objective: no peers");
  if (noisy_labels.size() != fw.n_source) {
    throw ShapeError("total_objective", {Shape{noisy_labels.size()}, Shape{fw.n_source}}, "one label per source row");
  }
  ObjectiveTerms terms;
  for (const auto& peer : fw.peers) {
    const Tensor lc = focal_loss_mean(peer.z_hat_source, noisy_labels, hp.gamma, hp.class_weights);
    terms.classification = terms.classification ? dt::add(terms.classification, lc) : lc;
  }
  if (fw.peers.size() > 1) {
    terms.classification = dt::scale(terms.classification, 1.0 / static_cast<double>(fw.peers.size()));
  }
  terms.adversarial = switches.adversarial ? adversarial_objective(fw) : Tensor::scalar(0.0);
  terms.diversity = (switches.diversity && fw.peers.size() == 2)
                        ? dt::mean(js_divergence_rows(fw.peers[0].y_hat, fw.peers[1].y_hat))
                        : Tensor::scalar(0.0);
  terms.total = dt::sub(dt::sub(terms.classification, dt::scale(terms.adversarial, hp.alpha * alpha_scale)),
                        dt::scale(terms.diversity, hp.eta));
  return terms;
}

}  // namespace couda
