#include "couda/model.hpp"

#include <cmath>

#include "couda/ops.hpp"
#include "couda/rng.hpp"

namespace couda {

namespace dt = couda::diff;

Dense Dense::glorot(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> w(in * out);
  for (auto& v : w) v = dist(rng);
  return {Tensor::from({in, out}, std::move(w), true), Tensor::zeros({1, out}, true)};
}

Tensor Dense::forward(const Tensor& x) const { return dt::add_rowwise(dt::matmul(x, weight), bias); }

Mlp Mlp::glorot(std::span<const std::size_t> widths, bool relu_output, std::mt19937_64& rng) {
  Mlp mlp;
  mlp.relu_output = relu_output;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) mlp.layers.push_back(Dense::glorot(widths[i], widths[i + 1], rng));
  return mlp;
}

Tensor Mlp::forward(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].forward(h);
    if (i + 1 < layers.size() || relu_output) h = dt::relu(h);
  }
  return h;
}

NoiseLayer NoiseLayer::near_identity(std::size_t num_classes, std::size_t feature_dim, double diagonal_bias) {
  std::vector<double> b(num_classes * num_classes, 0.0);
  for (std::size_t k = 0; k < num_classes; ++k) b[k * num_classes + k] = diagonal_bias;
  return {Tensor::zeros({num_classes, num_classes, feature_dim}, true),
          Tensor::from({num_classes, num_classes}, std::move(b), true)};
}

void ArchitectureConfig::validate() const {
  if (input_dim == 0) throw ConfigError("model: input_dim must be positive");
  if (num_classes < 2) throw ConfigError("model: num_classes must be at least 2");
  if (feature_dim == 0) throw ConfigError("model: feature_dim must be positive");
  for (auto w : extractor_hidden)
    if (w == 0) throw ConfigError("model: extractor layer widths must be positive");
  for (auto w : discriminator_hidden)
    if (w == 0) throw ConfigError("model: discriminator layer widths must be positive");
  if (!std::isfinite(noise_init_diagonal)) throw ConfigError("model: noise_init_diagonal must be finite");
}

namespace {

std::mt19937_64 component_rng(std::uint64_t seed, std::uint64_t component) { return make_rng({seed, 0x6d6f64656cu, component}); }

Dense clone_dense(const Dense& d) { return {d.weight.detach(true), d.bias.detach(true)}; }

Mlp clone_mlp(const Mlp& m) {
  Mlp out;
  out.relu_output = m.relu_output;
  for (const auto& l : m.layers) out.layers.push_back(clone_dense(l));
  return out;
}

}  // namespace

CoudaModel::CoudaModel(const ArchitectureConfig& arch, std::uint64_t seed) : arch_(arch) {
  arch_.validate();
  const std::size_t peers = arch_.single_network ? 1 : 2;
  for (std::size_t p = 0; p < peers; ++p) {
    auto rng = component_rng(seed, p + 1);
    std::vector<std::size_t> widths{arch_.input_dim};
    widths.insert(widths.end(), arch_.extractor_hidden.begin(), arch_.extractor_hidden.end());
    widths.push_back(arch_.feature_dim);
    Peer peer;
    peer.extractor = Mlp::glorot(widths, true, rng);
    peer.classifier = Dense::glorot(arch_.feature_dim, arch_.num_classes, rng);
    peers_.push_back(std::move(peer));
  }
  auto rng = component_rng(seed, 100);
  std::vector<std::size_t> widths{arch_.feature_dim};
  widths.insert(widths.end(), arch_.discriminator_hidden.begin(), arch_.discriminator_hidden.end());
  widths.push_back(1);
  discriminator_ = Mlp::glorot(widths, false, rng);
  noise_ = NoiseLayer::near_identity(arch_.num_classes, arch_.feature_dim, arch_.noise_init_diagonal);
}

Peer& CoudaModel::peer(std::size_t index) {
  if (index >= peers_.size()) throw ConfigError("model: peer index " + std::to_string(index) + " out of range");
  return peers_[index];
}

const Peer& CoudaModel::peer(std::size_t index) const {
  if (index >= peers_.size()) throw ConfigError("model: peer index " + std::to_string(index) + " out of range");
  return peers_[index];
}

void CoudaModel::require_width(std::string_view op, const Tensor& t, std::size_t width) const {
  if (t.rank() > 2 || t.cols() != width) {
    throw ShapeError(std::string(op), {t.shape()}, "expected width " + std::to_string(width));
  }
}

Tensor CoudaModel::features(std::size_t index, const Tensor& x) const {
  require_width("forward_features", x, arch_.input_dim);
  return peer(index).extractor.forward(x);
}

Tensor CoudaModel::classify(std::size_t index, const Tensor& f) const {
  require_width("classify", f, arch_.feature_dim);
  return dt::softmax_rowwise(peer(index).classifier.forward(f));
}

Tensor CoudaModel::discriminate(const Tensor& f) const {
  require_width("discriminate", f, arch_.feature_dim);
  return dt::sigmoid(discriminator_.forward(f));
}

Tensor CoudaModel::noise_transitions(const Tensor& f) const {
  require_width("noise_transition", f, arch_.feature_dim);
  ++noise_calls_;
  const std::size_t k = arch_.num_classes;
  const Tensor w = dt::reshape(noise_.weight, {k * k, arch_.feature_dim});
  const Tensor logits = dt::add_rowwise(dt::matmul(f, dt::transpose(w)), dt::reshape(noise_.bias, {1, k * k}));
  return dt::softmax_rowwise(dt::reshape(logits, {f.rows() * k, k}));
}

std::vector<double> CoudaModel::noise_transition(std::span<const double> feature) const {
  dt::NoGradGuard no_grad;
  const Tensor f = Tensor::from({1, feature.size()}, {feature.begin(), feature.end()});
  const Tensor t = noise_transitions(f);
  return {t.values().begin(), t.values().end()};
}

Tensor CoudaModel::ensemble_predict(const Tensor& x) const {
  dt::NoGradGuard no_grad;
  Tensor total;
  for (std::size_t p = 0; p < peers_.size(); ++p) {
    const Tensor y = classify(p, features(p, x));
    total = total ? dt::add(total, y) : y;
  }
  return peers_.size() == 1 ? total : dt::scale(total, 1.0 / static_cast<double>(peers_.size()));
}

std::vector<NamedParameter> CoudaModel::parameters() const {
  std::vector<NamedParameter> out;
  auto add_dense = [&out](const std::string& prefix, const Dense& d) {
    out.push_back({prefix + ".weight", d.weight});
    out.push_back({prefix + ".bias", d.bias});
  };
  for (std::size_t p = 0; p < peers_.size(); ++p) {
    const std::string prefix = "peer" + std::to_string(p + 1);
    for (std::size_t l = 0; l < peers_[p].extractor.layers.size(); ++l)
      add_dense(prefix + ".extractor." + std::to_string(l), peers_[p].extractor.layers[l]);
    add_dense(prefix + ".classifier", peers_[p].classifier);
  }
  out.push_back({"noise.weight", noise_.weight});
  out.push_back({"noise.bias", noise_.bias});
  for (std::size_t l = 0; l < discriminator_.layers.size(); ++l)
    add_dense("discriminator." + std::to_string(l), discriminator_.layers[l]);
  return out;
}

std::vector<Tensor> CoudaModel::network_parameters() const {
  std::vector<Tensor> out;
  for (const auto& p : parameters())
    if (!p.name.starts_with("discriminator.")) out.push_back(p.tensor);
  return out;
}

std::vector<Tensor> CoudaModel::discriminator_parameters() const {
  std::vector<Tensor> out;
  for (const auto& p : parameters())
    if (p.name.starts_with("discriminator.")) out.push_back(p.tensor);
  return out;
}

CoudaModel CoudaModel::clone() const {
  CoudaModel copy = *this;
  for (auto& p : copy.peers_) {
    p.extractor = clone_mlp(p.extractor);
    p.classifier = clone_dense(p.classifier);
  }
  copy.discriminator_ = clone_mlp(discriminator_);
  copy.noise_ = {noise_.weight.detach(true), noise_.bias.detach(true)};
  copy.noise_calls_ = 0;
  return copy;
}

std::vector<double> adapt_prediction(std::span<const double> transition, std::span<const double> y_hat) {
  const std::size_t k = y_hat.size();
  if (transition.size() != k * k) {
    throw ShapeError("adapt_prediction", {Shape{transition.size()}, Shape{k}}, "transition must be K x K");
  }
  for (std::size_t r = 0; r < k; ++r) {
    double row = 0.0;
    for (std::size_t m = 0; m < k; ++m) {
      if (transition[r * k + m] < 0.0) throw DomainError("adapt_prediction", "negative transition entry");
      row += transition[r * k + m];
    }
    if (std::abs(row - 1.0) > 1e-6) {
      throw DomainError("adapt_prediction", "transition row " + std::to_string(r) + " sums to " + std::to_string(row));
    }
  }
  std::vector<double> z(k, 0.0);
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t m = 0; m < k; ++m) z[m] += transition[r * k + m] * y_hat[r];
  return z;
}

}  // namespace couda
