#include "couda/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "couda/ops.hpp"

namespace couda {

namespace dt = couda::diff;

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::single_lc: return "single_lc";
    case Variant::ours_lc: return "ours_lc";
    case Variant::ours_lc_adv: return "ours_lc_adv";
    case Variant::ours_no_ncl: return "ours_lc_adv_dis_no_ncl";
    case Variant::full: return "full";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (auto v : kAblationOrder)
    if (variant_name(v) == name) return v;
  throw ConfigError("unknown ablation variant '" + std::string(name) + "'");
}

AblationFlags flags_for(Variant v) {
  switch (v) {
    case Variant::single_lc: return {false, false, true, true};
    case Variant::ours_lc: return {false, false, true, false};
    case Variant::ours_lc_adv: return {true, false, true, false};
    case Variant::ours_no_ncl: return {true, true, false, false};
    case Variant::full: return {true, true, true, false};
  }
  return {};
}

void TrainConfig::validate() const {
  arch.validate();
  hp.validate();
  if (!hp.class_weights.empty() && hp.class_weights.size() != arch.num_classes) {
    throw ConfigError("hp.class_weights needs one weight per class");
  }
}

namespace {

ArchitectureConfig effective_arch(const TrainConfig& c) {
  auto a = c.arch;
  a.single_network = c.flags.single_network;
  a.noise_init_diagonal = c.hp.beta_noise_init;
  return a;
}

struct BatchTensors {
  Tensor x;  // [source; target]
  std::vector<std::size_t> labels;
  std::size_t n_source;
  std::size_t n_target;
};

BatchTensors to_tensors(const DomainBatch& batch, std::size_t input_dim) {
  if (batch.source.empty() || batch.target.empty()) throw ConfigError("batch: both domains need at least one example");
  BatchTensors out{{}, {}, batch.source.size(), batch.target.size()};
  std::vector<double> values;
  values.reserve((out.n_source + out.n_target) * input_dim);
  for (const auto* part : {&batch.source, &batch.target})
    for (const auto& e : *part) {
      if (e.x.size() != input_dim) throw ShapeError("batch", {Shape{e.x.size()}, Shape{input_dim}}, "input width");
      values.insert(values.end(), e.x.begin(), e.x.end());
    }
  for (const auto& e : batch.source) {
    if (!e.label) throw ConfigError("batch: source example without an observed label");
    out.labels.push_back(*e.label);
  }
  out.x = Tensor::from({out.n_source + out.n_target, input_dim}, std::move(values));
  return out;
}

double mean_of(const Tensor& t, std::size_t begin, std::size_t end) {
  double total = 0.0;
  for (std::size_t i = begin; i < end; ++i) total += t.values()[i];
  return total / static_cast<double>(end - begin);
}

std::vector<Tensor> all_parameters(const CoudaModel& m) {
  std::vector<Tensor> out;
  for (const auto& p : m.parameters()) out.push_back(p.tensor);
  return out;
}

}  // namespace

TrainState::TrainState(const TrainConfig& config)
    : config_(config),
      model_((config.validate(), effective_arch(config)), config.seed),
      networks_(model_.network_parameters(), AdamConfig{config.hp.lr}),
      discriminator_(model_.discriminator_parameters(),
                     AdamConfig{config.hp.discriminator_lr > 0.0 ? config.hp.discriminator_lr : config.hp.lr}) {}

double TrainState::alpha_scale() const {
  if (!config_.hp.alpha_warmup || total_steps_ == 0) return 1.0;
  const double ramp = 0.1 * static_cast<double>(total_steps_);
  return std::min(1.0, static_cast<double>(steps_ + 1) / ramp);
}

void TrainState::zero_all_grads() {
  auto params = all_parameters(model_);
  dt::zero_grads(params);
}

BatchForward forward_batch(const CoudaModel& model, const Tensor& x, std::size_t n_source, bool use_noise_layer,
                           const Tensor& frozen_lambda) {
  const std::size_t n = x.rows();
  if (n_source == 0 || n_source >= n) throw ShapeError("forward_batch", {x.shape()}, "need source and target rows");
  BatchForward fw;
  fw.n_source = n_source;
  fw.n_target = n - n_source;
  for (std::size_t p = 0; p < model.num_peers(); ++p) {
    PeerForward pf;
    pf.features = model.features(p, x);
    pf.y_hat = model.classify(p, pf.features);
    pf.d_hat = model.discriminate(pf.features);
    const Tensor y_source = dt::slice_rows(pf.y_hat, 0, n_source);
    if (use_noise_layer) {
      const Tensor transitions = model.noise_transitions(dt::slice_rows(pf.features, 0, n_source));
      pf.z_hat_source = dt::batch_vecmat(y_source, transitions);
    } else {
      pf.z_hat_source = y_source;
    }
    fw.peers.push_back(std::move(pf));
  }
  if (frozen_lambda) {
    fw.lambda = frozen_lambda;
  } else {
    fw.lambda = fw.peers.size() == 2 ? transfer_weights(fw.peers[0].y_hat, fw.peers[1].y_hat)
                                     : Tensor::full({n, 1}, 1.0);
  }
  return fw;
}

BatchForward TrainState::forward(const DomainBatch& batch) const {
  const auto bt = to_tensors(batch, model_.arch().input_dim);
  return forward_batch(model_, bt.x, bt.n_source, config_.flags.enable_ncl);
}

double TrainState::discriminator_step(const DomainBatch& batch) {
  if (!config_.flags.enable_adv) return 0.0;
  const auto bt = to_tensors(batch, model_.arch().input_dim);
  const std::size_t n = bt.n_source + bt.n_target;

  BatchForward fw;
  fw.n_source = bt.n_source;
  fw.n_target = bt.n_target;
  for (std::size_t p = 0; p < model_.num_peers(); ++p) {
    PeerForward pf;
    {
      dt::NoGradGuard frozen;
      pf.features = model_.features(p, bt.x);
      pf.y_hat = model_.classify(p, pf.features);
    }
    pf.d_hat = model_.discriminate(pf.features);
    fw.peers.push_back(std::move(pf));
  }
  fw.lambda = fw.peers.size() == 2 ? transfer_weights(fw.peers[0].y_hat, fw.peers[1].y_hat)
                                   : Tensor::full({n, 1}, 1.0);

  const Tensor loss = adversarial_objective(fw);
  const double value = loss.item();
  if (!std::isfinite(value)) throw NumericError("discriminator_step: non-finite adversarial loss");
  zero_all_grads();
  if (loss.requires_grad()) {
    dt::backward(loss);
    discriminator_.step();
  }
  zero_all_grads();
  return value;
}

StepLosses TrainState::adaptation_step(const DomainBatch& batch) {
  const BatchForward fw = forward(batch);
  std::vector<std::size_t> labels;
  for (const auto& e : batch.source) labels.push_back(e.label.value());
  const ObjectiveTerms terms = total_objective(fw, labels, config_.hp,
                                               {config_.flags.enable_adv, config_.flags.enable_dis}, alpha_scale());
  StepLosses out;
  out.classification = terms.classification.item();
  out.adversarial = terms.adversarial.item();
  out.diversity = terms.diversity.item();
  out.objective = terms.total.item();
  out.lambda_source = mean_of(fw.lambda, 0, fw.n_source);
  out.lambda_target = mean_of(fw.lambda, fw.n_source, fw.n_source + fw.n_target);
  if (config_.fault_step == steps_) out.objective = std::numeric_limits<double>::quiet_NaN();
  if (!std::isfinite(out.objective)) {
    std::ostringstream msg;
    msg << "adaptation_step: non-finite objective at step " << steps_ << " (L^c=" << out.classification
        << ", L^adv=" << out.adversarial << ", L^dis=" << out.diversity << ")";
    throw NumericError(msg.str());
  }
  zero_all_grads();
  dt::backward(terms.total);
  networks_.step();
  zero_all_grads();
  ++steps_;
  return out;
}

FitResult fit(const TrainConfig& config, const Dataset& source, const Dataset& target_train,
              const Dataset& target_test) {
  TrainState state(config);
  FitResult result{state.model(), {}, true, {}};
  if (config.hp.epochs == 0) return result;
  if (target_test.empty()) throw ConfigError("fit: held-out target split is empty");

  const std::size_t batches_per_epoch =
      (std::max(source.size(), target_train.size()) + config.hp.batch_size - 1) / config.hp.batch_size;
  state.set_total_steps(batches_per_epoch * config.hp.epochs);

  for (std::size_t epoch = 0; epoch < config.hp.epochs; ++epoch) {
    const auto batches = make_batches(source, target_train, config.hp.batch_size, config.seed, epoch);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    try {
      for (const auto& batch : batches) {
        for (std::size_t k = 0; k < config.hp.discriminator_steps; ++k) {
          const double d = state.discriminator_step(batch);
          if (k == 0) rec.discriminator += d;
        }
        const auto s = state.adaptation_step(batch);
        rec.classification += s.classification;
        rec.adversarial += s.adversarial;
        rec.diversity += s.diversity;
        rec.objective += s.objective;
        rec.lambda_source += s.lambda_source;
        rec.lambda_target += s.lambda_target;
      }
    } catch (const NumericError& e) {
      result.completed = false;
      result.error = e.what();
      break;
    }
    const double n = static_cast<double>(batches.size());
    rec.steps = batches.size();
    for (double* v : {&rec.discriminator, &rec.classification, &rec.adversarial, &rec.diversity, &rec.objective,
                      &rec.lambda_source, &rec.lambda_target}) {
      *v /= n;
    }
    const auto report = evaluate(state.model(), target_test);
    rec.accuracy = report.accuracy;
    rec.macro_precision = report.macro_precision;
    rec.macro_recall = report.macro_recall;
    rec.macro_f1 = report.macro_f1;
    rec.noise_diag = report.noise_diag.value_or(0.0);
    result.history.push_back(rec);
  }
  result.model = state.model();
  return result;
}

}  // namespace couda
