#pragma once

#include <cstdint>
#include <deque>
#include <random>
#include <string>
#include <vector>

#include "raimkit/ops.hpp"
#include "raimkit/optim.hpp"

namespace raimkit::nn {

/// Owns a model's trainable parameters and non-trainable buffers (batchnorm
/// running statistics) under canonical dotted names.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed);

  /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  ad::Tensor uniform(const std::string& name, ad::Shape shape, std::size_t fan_in);
  ad::Tensor constant(const std::string& name, ad::Shape shape, double value);
  ad::BatchNormState& batchnorm(const std::string& name, std::size_t features);

  ad::ParameterList& params() { return params_; }
  const ad::ParameterList& params() const { return params_; }
  const ad::ParameterList& buffers() const { return buffers_; }
  /// Parameters followed by buffers, in registration order.
  ad::ParameterList state() const;
  std::size_t parameter_count() const;

 private:
  void claim(const std::string& name);

  std::mt19937_64 rng_;
  ad::ParameterList params_;
  ad::ParameterList buffers_;
  std::deque<ad::BatchNormState> norms_;
  std::vector<std::string> names_;
};

}  // namespace raimkit::nn
