#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "couda/tensor.hpp"

namespace couda {

using diff::Tensor;

/// Fully connected layer: y = x W + b, W is in x out, b is 1 x out.
struct Dense {
  Tensor weight;
  Tensor bias;

  static Dense glorot(std::size_t in, std::size_t out, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;
  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }
};

/// Stack of Dense layers. ReLU follows every hidden layer, and the last
/// layer too when `relu_output` is set.
struct Mlp {
  std::vector<Dense> layers;
  bool relu_output = true;

  static Mlp glorot(std::span<const std::size_t> widths, bool relu_output, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;
  std::size_t in_dim() const { return layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.back().out_dim(); }
};

/// Shared noise co-adaptation layer. weight is K x K x d_f (w_km is a d_f
/// vector), bias is K x K. Row k of the transition it produces is the
/// softmax over m of (w_km . f + b_km).
struct NoiseLayer {
  Tensor weight;
  Tensor bias;

  static NoiseLayer near_identity(std::size_t num_classes, std::size_t feature_dim, double diagonal_bias);
  std::size_t num_classes() const { return bias.rows(); }
  std::size_t feature_dim() const { return weight.cols(); }
};

/// One feature extractor P and its linear-softmax classifier C.
struct Peer {
  Mlp extractor;
  Dense classifier;
};

struct ArchitectureConfig {
  std::size_t input_dim = 2;
  std::size_t num_classes = 3;
  std::size_t feature_dim = 16;
  std::vector<std::size_t> extractor_hidden{32, 32};
  std::vector<std::size_t> discriminator_hidden{16};
  double noise_init_diagonal = 2.0;
  bool single_network = false;

  void validate() const;
};

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

/// Two peer networks (P1,C1), (P2,C2), a shared domain discriminator D over
/// extracted features and a shared noise co-adaptation layer Z. In
/// single-network mode only the first peer exists.
///
/// Peers are addressed by zero-based index. Peers share an architecture but
/// draw their initial weights from independent streams of the seed.
class CoudaModel {
 public:
  CoudaModel(const ArchitectureConfig& arch, std::uint64_t seed);

  const ArchitectureConfig& arch() const { return arch_; }
  std::size_t num_peers() const { return peers_.size(); }
  std::size_t num_classes() const { return arch_.num_classes; }
  std::size_t feature_dim() const { return arch_.feature_dim; }

  // Differentiable pieces; inputs are batches with one example per row.
  Tensor features(std::size_t peer, const Tensor& x) const;
  Tensor classify(std::size_t peer, const Tensor& features) const;
  Tensor discriminate(const Tensor& features) const;
  /// Per-example K x K transitions stacked into an (n*K) x K tensor.
  Tensor noise_transitions(const Tensor& features) const;

  /// Row-stochastic K x K matrix T[k][m] = p(noisy = m | true = k, f) for one
  /// feature vector, row-major.
  std::vector<double> noise_transition(std::span<const double> feature) const;

  /// Average of the peers' clean-path predictions (P -> C, never Z).
  /// Records no graph. In single-network mode this is the first peer's output.
  Tensor ensemble_predict(const Tensor& x) const;

  std::vector<NamedParameter> parameters() const;
  /// The minimizing player: every P, C and Z.
  std::vector<Tensor> network_parameters() const;
  /// The maximizing player: D.
  std::vector<Tensor> discriminator_parameters() const;

  /// Number of times the noise layer has been evaluated (call audit).
  std::uint64_t noise_layer_evaluations() const { return noise_calls_; }

  Peer& peer(std::size_t index);
  const Peer& peer(std::size_t index) const;
  Mlp& discriminator() { return discriminator_; }
  const Mlp& discriminator() const { return discriminator_; }
  NoiseLayer& noise_layer() { return noise_; }
  const NoiseLayer& noise_layer() const { return noise_; }

  /// Deep copy with fresh parameter storage.
  CoudaModel clone() const;

 private:
  void require_width(std::string_view op, const Tensor& t, std::size_t width) const;

  ArchitectureConfig arch_;
  std::vector<Peer> peers_;
  Mlp discriminator_;
  NoiseLayer noise_;
  mutable std::uint64_t noise_calls_ = 0;
};

/// z_hat[m] = sum_k T[k][m] y_hat[k] for a row-major K x K transition.
/// Throws DomainError when a row of T does not sum to 1 within 1e-6.
std::vector<double> adapt_prediction(std::span<const double> transition, std::span<const double> y_hat);

}  // namespace couda
