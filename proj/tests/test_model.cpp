#include <doctest.h>

#include <cmath>
#include <random>
#include <utility>
#include <vector>

#include "couda/model.hpp"
#include "couda/ops.hpp"

using couda::CoudaModel;
using couda::Tensor;

namespace {

void fill(Tensor& t, double v) {
  for (auto& x : t.mutable_values()) x = v;
}

void zero_all(CoudaModel& m) {
  for (auto p : m.parameters()) fill(p.tensor, 0.0);
}

Tensor random_batch(std::mt19937_64& gen, std::size_t n, std::size_t d, double scale = 3.0) {
  std::normal_distribution<double> g(0.0, scale);
  std::vector<double> v(n * d);
  for (auto& x : v) x = g(gen);
  return Tensor::from({n, d}, std::move(v));
}

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST_CASE("zero extractor maps everything to zero") {
  CoudaModel m({}, 1);
  zero_all(m);
  std::mt19937_64 gen(3);
  const Tensor f = m.features(0, random_batch(gen, 5, 2));
  for (double v : f.values()) CHECK(v == 0.0);
}

TEST_CASE("identity extractor with ReLU") {
  couda::ArchitectureConfig arch;
  arch.extractor_hidden = {};
  arch.feature_dim = 2;
  CoudaModel m(arch, 1);
  auto& layer = m.peer(0).extractor.layers.at(0);
  auto w = layer.weight.mutable_values();
  w[0] = 1; w[1] = 0; w[2] = 0; w[3] = 1;
  fill(layer.bias, 0.0);
  CHECK(vals(m.features(0, Tensor::from({1, 2}, {-1, 2}))) == std::vector<double>{0, 2});
}

TEST_CASE("features are deterministic for a seed") {
  std::mt19937_64 gen(4);
  const Tensor x = random_batch(gen, 6, 2);
  CoudaModel a({}, 42), b({}, 42);
  CHECK(vals(a.features(0, x)) == vals(a.features(0, x)));
  CHECK(vals(a.features(1, x)) == vals(b.features(1, x)));
}

TEST_CASE("peers share an architecture but not initial weights") {
  CoudaModel m({}, 7);
  const auto& p1 = m.peer(0).extractor.layers;
  const auto& p2 = m.peer(1).extractor.layers;
  REQUIRE(p1.size() == p2.size());
  for (std::size_t l = 0; l < p1.size(); ++l) {
    CHECK(p1[l].weight.shape() == p2[l].weight.shape());
    CHECK(vals(p1[l].weight) != vals(p2[l].weight));
  }
}

TEST_CASE("initialization follows the Glorot uniform bound with zero biases") {
  CoudaModel m({}, 9);
  for (const auto& p : m.parameters()) {
    if (p.name.starts_with("noise")) continue;
    if (p.name.ends_with(".bias")) {
      for (double v : p.tensor.values()) CHECK(v == 0.0);
    } else {
      const double bound = std::sqrt(6.0 / static_cast<double>(p.tensor.rows() + p.tensor.cols()));
      for (double v : p.tensor.values()) CHECK(std::abs(v) <= bound);
    }
  }
}

TEST_CASE("default architecture") {
  CoudaModel m({}, 0);
  CHECK(m.num_peers() == 2);
  CHECK(m.peer(0).extractor.layers.size() == 3);
  CHECK(m.peer(0).extractor.layers[0].out_dim() == 32);
  CHECK(m.peer(0).extractor.layers[1].out_dim() == 32);
  CHECK(m.feature_dim() == 16);
  CHECK(m.discriminator().layers.size() == 2);
  CHECK(m.discriminator().layers[0].out_dim() == 16);
  CHECK(m.noise_layer().weight.shape() == couda::Shape{3, 3, 16});
  CHECK(m.noise_layer().bias.shape() == couda::Shape{3, 3});
}

TEST_CASE("zero classifier predicts uniformly") {
  CoudaModel m({}, 1);
  fill(m.peer(0).classifier.weight, 0.0);
  fill(m.peer(0).classifier.bias, 0.0);
  std::mt19937_64 gen(5);
  const Tensor y = m.classify(0, random_batch(gen, 4, 16));
  for (double v : y.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("classifier logits [10, 0, 0]") {
  CoudaModel m({}, 1);
  fill(m.peer(0).classifier.weight, 0.0);
  auto b = m.peer(0).classifier.bias.mutable_values();
  b[0] = 10; b[1] = 0; b[2] = 0;
  const Tensor y = m.classify(0, Tensor::zeros({1, 16}));
  const double big = 1.0 / (1.0 + 2.0 * std::exp(-10.0));
  const double small = std::exp(-10.0) / (1.0 + 2.0 * std::exp(-10.0));
  CHECK(y.at(0, 0) == doctest::Approx(big).epsilon(1e-14));
  CHECK(y.at(0, 1) == doctest::Approx(small).epsilon(1e-12));
  CHECK(y.at(0, 0) == doctest::Approx(0.99991).epsilon(1e-5));
  CHECK(y.at(0, 2) == doctest::Approx(0.0000454).epsilon(1e-3));
}

TEST_CASE("classifier rows sum to one on random parameters") {
  std::mt19937_64 gen(6);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    CoudaModel m({}, seed);
    const Tensor y = m.classify(1, m.features(1, random_batch(gen, 8, 2)));
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double s = 0;
      for (std::size_t c = 0; c < y.cols(); ++c) s += y.at(r, c);
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("width mismatches are errors") {
  CoudaModel m({}, 1);
  CHECK_THROWS_AS(m.features(0, Tensor::zeros({2, 3})), couda::ShapeError);
  CHECK_THROWS_AS(m.classify(0, Tensor::zeros({2, 15})), couda::ShapeError);
  CHECK_THROWS_AS(m.discriminate(Tensor::zeros({2, 4})), couda::ShapeError);
  CHECK_THROWS_AS(m.noise_transitions(Tensor::zeros({2, 4})), couda::ShapeError);
  CHECK_THROWS(m.peer(2));
}

TEST_CASE("discriminator") {
  CoudaModel m({}, 1);
  std::mt19937_64 gen(8);
  const Tensor f = random_batch(gen, 10, 16);
  const Tensor d = m.discriminate(f);
  CHECK(d.shape() == couda::Shape{10, 1});
  for (double v : d.values()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  CHECK(vals(d) == vals(m.discriminate(f)));
  for (auto p : m.discriminator_parameters()) fill(p, 0.0);
  const Tensor half = m.discriminate(f);
  for (double v : half.values()) CHECK(v == 0.5);
}

TEST_CASE("noise transition examples") {
  couda::ArchitectureConfig arch;
  CoudaModel m(arch, 1);
  std::mt19937_64 gen(10);
  const Tensor f = random_batch(gen, 1, 16);
  const std::vector<double> fv = vals(f);

  const auto init = m.noise_transition(fv);
  const double diag = std::exp(2.0) / (std::exp(2.0) + 2.0);
  const double off = 1.0 / (std::exp(2.0) + 2.0);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t j = 0; j < 3; ++j) CHECK(init[k * 3 + j] == doctest::Approx(k == j ? diag : off).epsilon(1e-14));
  CHECK(diag == doctest::Approx(0.78699).epsilon(1e-5));
  CHECK(off == doctest::Approx(0.10651).epsilon(1e-4));

  fill(m.noise_layer().bias, 0.0);
  for (double v : m.noise_transition(fv)) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("noise transition matches its definition and is row-stochastic") {
  std::mt19937_64 gen(12);
  std::normal_distribution<double> g(0.0, 2.0);
  CoudaModel m({}, 3);
  for (int trial = 0; trial < 20; ++trial) {
    for (auto& v : m.noise_layer().weight.mutable_values()) v = g(gen);
    for (auto& v : m.noise_layer().bias.mutable_values()) v = g(gen);
    const auto fv = vals(random_batch(gen, 1, 16));
    const auto t = m.noise_transition(fv);
    const auto w = m.noise_layer().weight.values();
    const auto b = m.noise_layer().bias.values();
    for (std::size_t k = 0; k < 3; ++k) {
      std::vector<double> e(3);
      double z = 0;
      for (std::size_t j = 0; j < 3; ++j) {
        double a = b[k * 3 + j];
        for (std::size_t i = 0; i < 16; ++i) a += w[(k * 3 + j) * 16 + i] * fv[i];
        e[j] = a;
      }
      const double mx = std::max({e[0], e[1], e[2]});
      for (auto& x : e) z += (x = std::exp(x - mx));
      double row = 0;
      for (std::size_t j = 0; j < 3; ++j) {
        CHECK(t[k * 3 + j] == doctest::Approx(e[j] / z).epsilon(1e-12));
        CHECK(t[k * 3 + j] >= 0.0);
        row += t[k * 3 + j];
      }
      CHECK(std::abs(row - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("batched transitions agree with the single-feature form") {
  std::mt19937_64 gen(13);
  CoudaModel m({}, 4);
  std::normal_distribution<double> g(0.0, 1.0);
  for (auto& v : m.noise_layer().weight.mutable_values()) v = g(gen);
  const Tensor f = random_batch(gen, 4, 16);
  const Tensor all = m.noise_transitions(f);
  REQUIRE(all.shape() == couda::Shape{12, 3});
  for (std::size_t i = 0; i < 4; ++i) {
    const auto row = vals(couda::diff::slice_rows(f, i, i + 1));
    const auto t = m.noise_transition(row);
    for (std::size_t k = 0; k < 9; ++k) CHECK(all.values()[i * 9 + k] == doctest::Approx(t[k]).epsilon(1e-14));
  }
}

TEST_CASE("adapt_prediction") {
  const std::vector<double> identity{1, 0, 0, 0, 1, 0, 0, 0, 1};
  const std::vector<double> y{0.2, 0.5, 0.3};
  CHECK(couda::adapt_prediction(identity, y) == y);

  const std::vector<double> uniform(9, 1.0 / 3.0);
  for (double v : couda::adapt_prediction(uniform, y)) CHECK(v == doctest::Approx(1.0 / 3.0));

  const std::vector<double> t{0.8, 0.2, 0.3, 0.7};
  const std::vector<double> half{0.5, 0.5};
  const auto z = couda::adapt_prediction(t, half);
  // Independent product: z[m] = sum_k T[k][m] y[k].
  CHECK(z[0] == doctest::Approx(0.8 * 0.5 + 0.3 * 0.5).epsilon(1e-15));
  CHECK(z[1] == doctest::Approx(0.2 * 0.5 + 0.7 * 0.5).epsilon(1e-15));
  CHECK(z[0] == doctest::Approx(0.55));
  CHECK(z[1] == doctest::Approx(0.45));

  CHECK_THROWS_AS(couda::adapt_prediction(std::vector<double>{0.8, 0.3, 0.3, 0.7}, half), couda::DomainError);
  CHECK_THROWS_AS(couda::adapt_prediction(std::vector<double>{1, 0, 0}, half), couda::ShapeError);
}

TEST_CASE("adapt_prediction stays on the simplex") {
  std::mt19937_64 gen(14);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> t(16), y(4);
    for (std::size_t k = 0; k < 4; ++k) {
      double s = 0;
      for (std::size_t j = 0; j < 4; ++j) s += (t[k * 4 + j] = u(gen));
      for (std::size_t j = 0; j < 4; ++j) t[k * 4 + j] /= s;
    }
    double s = 0;
    for (auto& v : y) s += (v = u(gen));
    for (auto& v : y) v /= s;
    const auto z = couda::adapt_prediction(t, y);
    double total = 0;
    for (double v : z) {
      CHECK(v >= 0.0);
      total += v;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("ensemble averages the clean path and never touches the noise layer") {
  std::mt19937_64 gen(15);
  CoudaModel m({}, 5);
  const Tensor x = random_batch(gen, 7, 2);
  const auto before = m.noise_layer_evaluations();
  const Tensor y = m.ensemble_predict(x);
  CHECK(m.noise_layer_evaluations() == before);
  CHECK_FALSE(y.requires_grad());
  const Tensor y1 = m.classify(0, m.features(0, x));
  const Tensor y2 = m.classify(1, m.features(1, x));
  for (std::size_t i = 0; i < y.size(); ++i) {
    CHECK(y.values()[i] == doctest::Approx((y1.values()[i] + y2.values()[i]) / 2).epsilon(1e-15));
  }
  for (std::size_t r = 0; r < y.rows(); ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 3; ++c) s += y.at(r, c);
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("ensemble examples with forced peer outputs") {
  couda::ArchitectureConfig arch;
  arch.num_classes = 2;
  CoudaModel m(arch, 1);
  for (std::size_t p = 0; p < 2; ++p) {
    fill(m.peer(p).classifier.weight, 0.0);
    auto b = m.peer(p).classifier.bias.mutable_values();
    b[0] = p == 0 ? 60.0 : -60.0;
    b[1] = -b[0];
  }
  const Tensor y = m.ensemble_predict(Tensor::zeros({1, 2}));
  CHECK(y.at(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(y.at(0, 1) == doctest::Approx(0.5).epsilon(1e-12));

  auto b = m.peer(1).classifier.bias.mutable_values();
  b[0] = 60.0;
  b[1] = -60.0;
  const Tensor same = m.ensemble_predict(Tensor::zeros({1, 2}));
  const Tensor y1 = m.classify(0, m.features(0, Tensor::zeros({1, 2})));
  CHECK(vals(same) == vals(y1));
}

TEST_CASE("ensemble is symmetric in the peers") {
  std::mt19937_64 gen(16);
  CoudaModel m({}, 6);
  const Tensor x = random_batch(gen, 9, 2);
  const auto before = vals(m.ensemble_predict(x));
  std::swap(m.peer(0), m.peer(1));
  const auto after = vals(m.ensemble_predict(x));
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(after[i] == doctest::Approx(before[i]).epsilon(1e-15));
}

TEST_CASE("single-network mode") {
  couda::ArchitectureConfig arch;
  arch.single_network = true;
  CoudaModel m(arch, 2);
  CHECK(m.num_peers() == 1);
  std::mt19937_64 gen(17);
  const Tensor x = random_batch(gen, 3, 2);
  CHECK(vals(m.ensemble_predict(x)) == vals(m.classify(0, m.features(0, x))));
}

TEST_CASE("parameter groups partition the parameters") {
  CoudaModel m({}, 3);
  const auto all = m.parameters();
  const auto net = m.network_parameters();
  const auto disc = m.discriminator_parameters();
  CHECK(net.size() + disc.size() == all.size());
  CHECK(disc.size() == 4);
}

TEST_CASE("clone owns fresh storage") {
  CoudaModel m({}, 3);
  CoudaModel c = m.clone();
  fill(c.peer(0).classifier.bias, 5.0);
  for (double v : m.peer(0).classifier.bias.values()) CHECK(v == 0.0);
}

TEST_CASE("architecture validation") {
  couda::ArchitectureConfig arch;
  arch.num_classes = 1;
  CHECK_THROWS_AS(arch.validate(), couda::ConfigError);
  arch = {};
  arch.extractor_hidden = {8, 0};
  CHECK_THROWS_AS(CoudaModel(arch, 0), couda::ConfigError);
}
