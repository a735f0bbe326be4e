#include "couda/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>
#include <random>

#include "couda/gradcheck.hpp"
#include "couda/losses.hpp"
#include "couda/model.hpp"
#include "couda/ops.hpp"
#include "couda/rng.hpp"
#include "couda/training.hpp"

namespace couda {

namespace dt = couda::diff;

namespace {

using Rng = std::mt19937_64;

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = true) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

/// Values bounded away from `kink` by at least `gap`, so a step of h never
/// crosses a non-differentiable point.
Tensor away_from(Shape shape, Rng& rng, double kink, double gap) {
  Tensor t = random_tensor(std::move(shape), rng, -1.0, 1.0);
  for (auto& v : t.mutable_values()) v = kink + (v < 0 ? -gap : gap) + v;
  return t;
}

/// A check instance: the scalar function and the leaves it is checked over.
struct Instance {
  std::function<Tensor()> f;
  std::vector<Tensor> params;
};

using Factory = std::function<Instance(Rng&)>;

Instance unary(Tensor x, std::function<Tensor(const Tensor&)> op, Rng& rng) {
  const Tensor r = random_tensor(op(x.detach()).shape(), rng, -1.0, 1.0, false);
  return {[x, op, r] { return dt::sum(dt::mul(op(x), r)); }, {x}};
}

Instance binary(Tensor a, Tensor b, std::function<Tensor(const Tensor&, const Tensor&)> op, Rng& rng) {
  const Tensor r = random_tensor(op(a.detach(), b.detach()).shape(), rng, -1.0, 1.0, false);
  return {[a, b, op, r] { return dt::sum(dt::mul(op(a, b), r)); }, {a, b}};
}

std::vector<std::pair<std::string, Factory>> op_components() {
  std::vector<std::pair<std::string, Factory>> out;
  auto add = [&out](std::string name, Factory f) { out.emplace_back("op " + std::move(name), std::move(f)); };

  add("matmul", [](Rng& g) { return binary(random_tensor({3, 4}, g), random_tensor({4, 2}, g), dt::matmul, g); });
  add("transpose", [](Rng& g) { return unary(random_tensor({3, 2}, g), dt::transpose, g); });
  add("batch_vecmat", [](Rng& g) {
    return binary(random_tensor({2, 3}, g), random_tensor({6, 3}, g), dt::batch_vecmat, g);
  });
  add("add", [](Rng& g) { return binary(random_tensor({3, 2}, g), random_tensor({3, 2}, g), dt::add, g); });
  add("sub", [](Rng& g) { return binary(random_tensor({3, 2}, g), random_tensor({3, 2}, g), dt::sub, g); });
  add("mul", [](Rng& g) { return binary(random_tensor({3, 2}, g), random_tensor({3, 2}, g), dt::mul, g); });
  add("add_rowwise",
      [](Rng& g) { return binary(random_tensor({3, 4}, g), random_tensor({1, 4}, g), dt::add_rowwise, g); });
  add("scale_rows",
      [](Rng& g) { return binary(random_tensor({3, 4}, g), random_tensor({3, 1}, g), dt::scale_rows, g); });
  add("scale", [](Rng& g) {
    const double c = std::uniform_real_distribution<double>(-2.0, 2.0)(g);
    return unary(random_tensor({3, 2}, g), [c](const Tensor& t) { return dt::scale(t, c); }, g);
  });
  add("add_scalar", [](Rng& g) {
    return unary(random_tensor({3, 2}, g), [](const Tensor& t) { return dt::add_scalar(t, 0.7); }, g);
  });
  add("relu", [](Rng& g) { return unary(away_from({3, 4}, g, 0.0, 0.05), dt::relu, g); });
  add("sigmoid", [](Rng& g) { return unary(random_tensor({3, 4}, g, -4.0, 4.0), dt::sigmoid, g); });
  add("softmax_rowwise", [](Rng& g) { return unary(random_tensor({3, 4}, g, -3.0, 3.0), dt::softmax_rowwise, g); });
  add("log", [](Rng& g) { return unary(random_tensor({3, 2}, g, 0.2, 3.0), dt::log, g); });
  add("clamp_min", [](Rng& g) {
    return unary(away_from({3, 4}, g, 0.1, 0.05), [](const Tensor& t) { return dt::clamp_min(t, 0.1); }, g);
  });
  add("square", [](Rng& g) { return unary(random_tensor({3, 2}, g, -2.0, 2.0), dt::square, g); });
  add("pow_scalar", [](Rng& g) {
    const double p = std::uniform_real_distribution<double>(0.5, 3.0)(g);
    return unary(random_tensor({3, 2}, g, 0.2, 2.0), [p](const Tensor& t) { return dt::pow_scalar(t, p); }, g);
  });
  add("sum", [](Rng& g) { return unary(random_tensor({3, 2}, g), dt::sum, g); });
  add("mean", [](Rng& g) { return unary(random_tensor({3, 2}, g), dt::mean, g); });
  add("sum_rows", [](Rng& g) { return unary(random_tensor({3, 4}, g), dt::sum_rows, g); });
  add("concat_rows", [](Rng& g) {
    return binary(random_tensor({2, 3}, g), random_tensor({1, 3}, g),
                  [](const Tensor& a, const Tensor& b) { return dt::concat_rows(a, b); }, g);
  });
  add("slice_rows", [](Rng& g) {
    return unary(random_tensor({4, 3}, g), [](const Tensor& t) { return dt::slice_rows(t, 1, 3); }, g);
  });
  add("reshape", [](Rng& g) {
    return unary(random_tensor({2, 6}, g), [](const Tensor& t) { return dt::reshape(t, {4, 3}); }, g);
  });
  add("pick", [](Rng& g) {
    std::vector<std::size_t> idx(3);
    for (auto& i : idx) i = std::uniform_int_distribution<std::size_t>(0, 3)(g);
    return unary(random_tensor({3, 4}, g), [idx](const Tensor& t) { return dt::pick(t, idx); }, g);
  });
  add("cosine_similarity_rowwise", [](Rng& g) {
    return binary(random_tensor({3, 4}, g), random_tensor({3, 4}, g), dt::cosine_similarity_rowwise, g);
  });
  return out;
}

ArchitectureConfig small_arch() {
  ArchitectureConfig a;
  a.input_dim = 2;
  a.num_classes = 3;
  a.feature_dim = 4;
  a.extractor_hidden = {5};
  a.discriminator_hidden = {4};
  return a;
}

/// A randomly initialized small model with random biases, a non-trivial noise layer, a
/// 3 + 3 batch, random noisy labels and a random frozen lambda.
struct ModelInstance {
  CoudaModel model;
  Tensor x;
  std::vector<std::size_t> labels;
  Tensor lambda;
  Hyperparams hp;

  static constexpr std::size_t kSource = 3;
  static constexpr std::size_t kTarget = 3;

  explicit ModelInstance(Rng& g) : model(small_arch(), 0) {
    // Redraw until no ReLU input lies within a small margin of the kink;
    // a step of h must not change which side of it a unit is on.
    do draw(g);
    while (!clear_of_kinks(1e-3));
  }

  void draw(Rng& g) {
    model = CoudaModel(small_arch(), g());
    // Random biases: with zero biases a unit sits exactly on the kink
    // whenever the layer below is entirely inactive.
    for (auto p : model.parameters())
      if (p.name.ends_with(".bias") && p.name != "noise.bias")
        for (auto& v : p.tensor.mutable_values()) v = std::uniform_real_distribution<double>(-0.5, 0.5)(g);
    for (auto& v : model.noise_layer().weight.mutable_values()) v = std::normal_distribution<double>(0.0, 0.5)(g);
    for (auto& v : model.noise_layer().bias.mutable_values()) v += std::normal_distribution<double>(0.0, 0.5)(g);
    x = random_tensor({kSource + kTarget, 2}, g, -2.0, 2.0, false);
    labels.clear();
    for (std::size_t i = 0; i < kSource; ++i) labels.push_back(std::uniform_int_distribution<std::size_t>(0, 2)(g));
    lambda = random_tensor({kSource + kTarget, 1}, g, 0.1, 1.0, false);
    hp.alpha = std::uniform_real_distribution<double>(0.5, 1.5)(g);
    hp.eta = std::uniform_real_distribution<double>(0.05, 0.5)(g);
    hp.gamma = std::uniform_real_distribution<double>(0.0, 2.5)(g);
  }

  bool clear_of_kinks(double margin) const {
    dt::NoGradGuard no_grad;
    auto clear = [margin](const Tensor& pre) {
      return std::ranges::all_of(pre.values(), [margin](double v) { return std::abs(v) > margin; });
    };
    for (std::size_t p = 0; p < model.num_peers(); ++p) {
      Tensor h = x;
      for (const auto& layer : model.peer(p).extractor.layers) {
        const Tensor pre = layer.forward(h);
        if (!clear(pre)) return false;
        h = dt::relu(pre);
      }
      const auto& disc = model.discriminator().layers;
      for (std::size_t l = 0; l + 1 < disc.size(); ++l) {
        const Tensor pre = disc[l].forward(h);
        if (!clear(pre)) return false;
        h = dt::relu(pre);
      }
    }
    return true;
  }

  BatchForward forward() const { return forward_batch(model, x, kSource, true, lambda); }
  ObjectiveTerms terms() const { return total_objective(forward(), labels, hp); }
};

Instance model_instance(Rng& g, std::function<Tensor(const ModelInstance&)> f,
                        std::function<std::vector<Tensor>(const ModelInstance&)> params) {
  auto m = std::make_shared<ModelInstance>(g);
  return {[m, f] { return f(*m); }, params(*m)};
}

/// Both peers' forward quantities as free leaves (pre-activation logits),
/// so a loss term is checked against exactly the inputs it sees in training.
struct LossInstance {
  std::vector<Tensor> y_logits, z_logits, d_logits;
  Tensor lambda;
  std::vector<std::size_t> labels;
  Hyperparams hp;

  static constexpr std::size_t kSource = 3;
  static constexpr std::size_t kTarget = 3;
  static constexpr std::size_t kClasses = 3;

  explicit LossInstance(Rng& g) {
    for (int p = 0; p < 2; ++p) {
      // Moderate logits: a saturated softmax makes some coordinates of the
      // gradient smaller than the rounding error of the central difference.
      y_logits.push_back(random_tensor({kSource + kTarget, kClasses}, g, -1.5, 1.5));
      z_logits.push_back(random_tensor({kSource, kClasses}, g, -1.5, 1.5));
      d_logits.push_back(random_tensor({kSource + kTarget, 1}, g, -3.0, 3.0));
    }
    lambda = random_tensor({kSource + kTarget, 1}, g, 0.1, 1.0, false);
    for (std::size_t i = 0; i < kSource; ++i) labels.push_back(std::uniform_int_distribution<std::size_t>(0, 2)(g));
    hp.alpha = std::uniform_real_distribution<double>(0.5, 1.5)(g);
    hp.eta = std::uniform_real_distribution<double>(0.05, 0.5)(g);
    hp.gamma = std::uniform_real_distribution<double>(0.0, 2.5)(g);
  }

  ObjectiveTerms terms() const {
    BatchForward fw;
    fw.n_source = kSource;
    fw.n_target = kTarget;
    fw.lambda = lambda;
    for (std::size_t p = 0; p < 2; ++p) {
      PeerForward pf;
      pf.y_hat = dt::softmax_rowwise(y_logits[p]);
      pf.z_hat_source = dt::softmax_rowwise(z_logits[p]);
      pf.d_hat = dt::sigmoid(d_logits[p]);
      fw.peers.push_back(std::move(pf));
    }
    return total_objective(fw, labels, hp);
  }

  std::vector<Tensor> leaves() const {
    std::vector<Tensor> out;
    for (const auto* group : {&y_logits, &z_logits, &d_logits}) out.insert(out.end(), group->begin(), group->end());
    return out;
  }
};

Instance loss_instance(Rng& g, Tensor (*term)(const ObjectiveTerms&)) {
  auto m = std::make_shared<LossInstance>(g);
  return {[m, term] { return term(m->terms()); }, m->leaves()};
}

std::vector<std::pair<std::string, Factory>> loss_components() {
  using M = ModelInstance;
  std::vector<std::pair<std::string, Factory>> out;
  out.emplace_back("L^c", [](Rng& g) {
    return loss_instance(g, [](const ObjectiveTerms& t) { return t.classification; });
  });
  out.emplace_back("L^adv", [](Rng& g) {
    return loss_instance(g, [](const ObjectiveTerms& t) { return t.adversarial; });
  });
  out.emplace_back("L^dis", [](Rng& g) {
    return loss_instance(g, [](const ObjectiveTerms& t) { return t.diversity; });
  });
  out.emplace_back("L^adv (discriminator)", [](Rng& g) {
    return model_instance(
        g, [](const M& m) { return adversarial_objective(m.forward()); },
        [](const M& m) { return m.model.discriminator_parameters(); });
  });
  out.emplace_back("Z path", [](Rng& g) {
    // Noise-adapted source predictions of peer 1 against the layer and the
    // features feeding it.
    auto m = std::make_shared<M>(g);
    const Tensor r = random_tensor({M::kSource, 3}, g, -1.0, 1.0, false);
    std::vector<Tensor> params{m->model.noise_layer().weight, m->model.noise_layer().bias};
    for (const auto& layer : m->model.peer(0).extractor.layers) {
      params.push_back(layer.weight);
      params.push_back(layer.bias);
    }
    return Instance{[m, r] { return dt::sum(dt::mul(m->forward().peers[0].z_hat_source, r)); }, params};
  });
  out.emplace_back("full objective", [](Rng& g) {
    return model_instance(
        g, [](const M& m) { return m.terms().total; }, [](const M& m) { return m.model.network_parameters(); });
  });
  return out;
}

/// Rounding in f limits a central difference to about eps |f| / h in
/// absolute terms, roughly 1e-11 here. A gradient coordinate that is nonzero
/// but not far above that cannot be resolved against the relative-error
/// floor, so such instances are redrawn. Exact zeros are still checked.
bool well_conditioned(const Instance& inst) {
  constexpr double kMinResolvable = 1e-6;
  auto params = inst.params;
  dt::zero_grads(params);
  const Tensor out = inst.f();
  if (!out.requires_grad()) return true;
  dt::backward(out);
  bool ok = true;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad())
      if (g != 0.0 && std::abs(g) < kMinResolvable) ok = false;
  }
  dt::zero_grads(params);
  return ok;
}

Instance corrupt(Instance inst) {
  const Tensor p = inst.params.front();
  auto f = inst.f;
  // Zero in value, 0.01 per coordinate in gradient.
  inst.f = [f, p] { return dt::add(f(), dt::scale(dt::sum(dt::sub(p, p.detach())), 0.01)); };
  return inst;
}

}  // namespace

std::vector<GradcheckComponent> run_gradcheck_suite(const GradcheckOptions& options) {
  auto components = op_components();
  for (auto& c : loss_components()) components.push_back(std::move(c));

  std::vector<GradcheckComponent> out;
  for (std::size_t c = 0; c < components.size(); ++c) {
    const auto& [name, factory] = components[c];
    GradcheckComponent result{name, 0.0, 0, 0, true};
    for (std::size_t i = 0; i < options.instances; ++i) {
      Rng rng = make_rng({options.seed, 0x67726164u, c, i});
      Instance inst = factory(rng);
      while (!well_conditioned(inst)) {
        inst = factory(rng);
        ++result.redrawn;
      }
      if (name == options.corrupt_component) inst = corrupt(std::move(inst));
      const double err = dt::grad_check(inst.f, inst.params, options.step);
      result.max_relative_error = std::max(result.max_relative_error, std::isnan(err) ? INFINITY : err);
      ++result.instances;
    }
    result.passed = result.max_relative_error <= options.tolerance;
    out.push_back(result);
  }
  return out;
}

int cmd_gradcheck(const GradcheckOptions& options, std::ostream& out) {
  const auto results = run_gradcheck_suite(options);
  bool ok = true;
  for (const auto& r : results) {
    out << (r.passed ? "ok   " : "FAIL ") << std::left << std::setw(30) << r.name << " max_rel_err "
        << std::scientific << std::setprecision(3) << r.max_relative_error << std::defaultfloat << " over "
        << r.instances << " instances";
    if (r.redrawn > 0) out << " (" << r.redrawn << " ill-conditioned draws replaced)";
    out << "\n";
    ok = ok && r.passed;
  }
  if (!ok) {
    out << "gradient check failed:";
    for (const auto& r : results)
      if (!r.passed) out << " " << r.name;
    out << "\n";
  }
  return ok ? 0 : 1;
}

}  // namespace couda
