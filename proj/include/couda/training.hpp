#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "couda/data.hpp"
#include "couda/losses.hpp"
#include "couda/metrics.hpp"
#include "couda/model.hpp"
#include "couda/optimizer.hpp"

namespace couda {

struct AblationFlags {
  bool enable_adv = true;
  bool enable_dis = true;
  bool enable_ncl = true;
  bool single_network = false;

  bool operator==(const AblationFlags&) const = default;
};

/// The five configurations of the ablation study, in reporting order.
enum class Variant { single_lc, ours_lc, ours_lc_adv, ours_no_ncl, full };

inline constexpr std::array<Variant, 5> kAblationOrder{Variant::single_lc, Variant::ours_lc, Variant::ours_lc_adv,
                                                       Variant::ours_no_ncl, Variant::full};

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);
AblationFlags flags_for(Variant v);

struct TrainConfig {
  ArchitectureConfig arch;
  Hyperparams hp;
  AblationFlags flags;
  std::uint64_t seed = 0;
  /// Test hook: report a non-finite objective at this adaptation step.
  std::optional<std::uint64_t> fault_step;

  void validate() const;
};

/// Loss values measured on the batch before the update.
struct StepLosses {
  double classification = 0.0;
  double adversarial = 0.0;
  double diversity = 0.0;
  double objective = 0.0;
  double lambda_source = 0.0;  // batch means of the transferability weights
  double lambda_target = 0.0;
};

/// Forward pass of every peer over x = [source rows; target rows]. Lambda is
/// computed from the peers' predictions and frozen, unless `frozen_lambda`
/// is given, in which case that tensor is used as-is.
BatchForward forward_batch(const CoudaModel& model, const Tensor& x, std::size_t n_source, bool use_noise_layer,
                           const Tensor& frozen_lambda = {});

/// Model plus one optimizer per player. The minimizing group is every
/// extractor, classifier and the noise layer; the maximizing group is D.
class TrainState {
 public:
  explicit TrainState(const TrainConfig& config);

  /// One Adam update of D lowering the weighted least-squares domain loss.
  /// Features are computed without a graph, so only D can move. Returns
  /// L^adv before the update (0 and no update when adversarial training is off).
  double discriminator_step(const DomainBatch& batch);

  /// One Adam update of {P, C, Z} lowering L^c - alpha L^adv - eta L^dis with
  /// D held fixed. Throws NumericError on a non-finite objective.
  StepLosses adaptation_step(const DomainBatch& batch);

  /// Forward pass over [source; target] with lambda computed and frozen.
  BatchForward forward(const DomainBatch& batch) const;

  const CoudaModel& model() const { return model_; }
  CoudaModel& model() { return model_; }
  const TrainConfig& config() const { return config_; }
  std::uint64_t steps() const { return steps_; }
  /// Horizon for the optional alpha warm-up.
  void set_total_steps(std::uint64_t n) { total_steps_ = n; }

 private:
  double alpha_scale() const;
  void zero_all_grads();

  TrainConfig config_;
  CoudaModel model_;
  Adam networks_;
  Adam discriminator_;
  std::uint64_t steps_ = 0;
  std::uint64_t total_steps_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double classification = 0.0;
  double adversarial = 0.0;
  double diversity = 0.0;
  double objective = 0.0;
  double discriminator = 0.0;
  double lambda_source = 0.0;
  double lambda_target = 0.0;
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double noise_diag = 0.0;
};

struct FitResult {
  CoudaModel model;
  std::vector<EpochRecord> history;
  bool completed = true;
  std::string error;
};

/// Alternating minimax training: per batch one discriminator step, then one
/// adaptation step. Each epoch is scored on `target_test`, which is never
/// batched. Deterministic for a given config. On a numeric failure the
/// history up to the last full epoch is returned with completed = false.
FitResult fit(const TrainConfig& config, const Dataset& source, const Dataset& target_train,
              const Dataset& target_test);

}  // namespace couda
