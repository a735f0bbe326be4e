#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "couda/tensor.hpp"

namespace couda {

using diff::Tensor;

/// Probabilities below this are clamped before taking logs.
inline constexpr double kLogFloor = 1e-12;

struct Hyperparams {
  double alpha = 0.3;  // adversarial weight
  double eta = 0.003;  // diversity weight
  double gamma = 2.0;  // focal exponent
  double lr = 1e-3;
  std::size_t batch_size = 64;
  std::size_t epochs = 30;
  double beta_noise_init = 2.0;
  /// Optional per-class focal weights indexed by observed label; empty means 1.
  std::vector<double> class_weights;
  /// Ramp alpha linearly from 0 over the first 10% of steps.
  bool alpha_warmup = false;
  /// Discriminator updates per adaptation step.
  std::size_t discriminator_steps = 1;
  /// Discriminator learning rate; 0 means use lr.
  double discriminator_lr = 0.0;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Single-example reference forms. Plain arithmetic, no graph.

/// 1 - cos(y1, y2). DomainError on a zero vector.
double transfer_weight(std::span<const double> y1, std::span<const double> y2);

/// sum over peers of
///   (1/n_t) sum_j lambda_t[j] (d_target[j] - 1)^2 + (1/n_s) sum_i lambda_s[i] d_source[i]^2.
/// The outer spans hold one vector per peer.
double adversarial_loss(std::span<const std::vector<double>> d_source, std::span<const std::vector<double>> d_target,
                        std::span<const double> lambda_source, std::span<const double> lambda_target);

/// -(1 - p)^gamma ln(max(p, 1e-12)) with p = z_hat[label].
double focal_loss(std::span<const double> z_hat, std::size_t label, double gamma);

/// Jensen-Shannon divergence with natural logs; zero-probability terms add 0.
/// DomainError if either input does not sum to 1 within 1e-6.
double js_divergence(std::span<const double> y1, std::span<const double> y2);

// ---------------------------------------------------------------------------
// Batched, differentiable forms used by training.

/// n x 1 constant tensor of 1 - cos(row of y1, row of y2). Never on the graph.
Tensor transfer_weights(const Tensor& y1, const Tensor& y2);

/// One peer's weighted least-squares domain term (scalar).
Tensor adversarial_term(const Tensor& d_source, const Tensor& d_target, const Tensor& lambda_source,
                        const Tensor& lambda_target);

/// Mean focal loss over rows of z_hat against observed labels.
Tensor focal_loss_mean(const Tensor& z_hat, std::span<const std::size_t> labels, double gamma,
                       std::span<const double> class_weights = {});

/// Row-wise JS divergence, n x 1.
Tensor js_divergence_rows(const Tensor& y1, const Tensor& y2);

/// Forward quantities of one peer over a combined batch laid out as
/// [source rows; target rows].
struct PeerForward {
  Tensor features;        // n x d_f
  Tensor y_hat;           // n x K, clean path P -> C
  Tensor d_hat;           // n x 1, shared discriminator
  Tensor z_hat_source;    // n_s x K, noise-adapted (or y_hat rows when the layer is bypassed)
};

struct BatchForward {
  std::vector<PeerForward> peers;
  std::size_t n_source = 0;
  std::size_t n_target = 0;
  Tensor lambda;  // (n_s + n_t) x 1, frozen
};

struct ObjectiveTerms {
  Tensor classification;  // L^c
  Tensor adversarial;     // L^adv
  Tensor diversity;       // L^dis
  Tensor total;           // L^c - alpha L^adv - eta L^dis
};

struct ObjectiveSwitches {
  bool adversarial = true;
  bool diversity = true;
};

/// The minimax objective. L^c averages the focal loss over source rows and
/// over peers; L^dis averages the JS divergence over all rows. Disabled
/// terms are zero constants. With a single peer L^dis is zero.
ObjectiveTerms total_objective(const BatchForward& forward, std::span<const std::size_t> noisy_labels,
                               const Hyperparams& hp, ObjectiveSwitches switches = {}, double alpha_scale = 1.0);

/// L^adv alone, used by the discriminator player.
Tensor adversarial_objective(const BatchForward& forward);

}  // namespace couda
