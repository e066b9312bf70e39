#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "raimkit/tensor.hpp"

namespace raimkit::ad {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

using ParameterList = std::vector<NamedTensor>;

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment buffers for each parameter, in parameter order.
class AdamState {
 public:
  AdamState(AdamConfig config, std::span<const NamedTensor> params);

  const AdamConfig& config() const { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  std::uint64_t step() const { return step_; }

 private:
  friend void adam_step(std::span<NamedTensor> params, AdamState& state);
  AdamConfig config_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  std::uint64_t step_ = 0;
};

/// One bias-corrected Adam update using each parameter's accumulated grad.
/// Throws NumericalError naming the parameter if a gradient is not finite.
void adam_step(std::span<NamedTensor> params, AdamState& state);

void zero_grads(std::span<NamedTensor> params);

}  // namespace raimkit::ad
