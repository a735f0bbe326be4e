#pragma once

#include <cstdint>
#include <vector>

#include "couda/tensor.hpp"

namespace couda {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive moment estimation over a fixed parameter group. Reads each
/// parameter's accumulated gradient; a parameter without one is skipped.
class Adam {
 public:
  Adam(std::vector<diff::Tensor> params, AdamConfig config);

  void step();
  void zero_grad();

  std::uint64_t steps() const { return t_; }
  const std::vector<diff::Tensor>& params() const { return params_; }

 private:
  std::vector<diff::Tensor> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::uint64_t t_ = 0;
};

}  // namespace couda
