#include "raimkit/nn.hpp"

#include <algorithm>
#include <cmath>

#include "raimkit/errors.hpp"

namespace raimkit::nn {

ParamStore::ParamStore(std::uint64_t seed) : rng_(seed) {}

void ParamStore::claim(const std::string& name) {
  if (std::find(names_.begin(), names_.end(), name) != names_.end()) {
    throw ContractError("duplicate parameter name " + name);
  }
  names_.push_back(name);
}

ad::Tensor ParamStore::uniform(const std::string& name, ad::Shape shape, std::size_t fan_in) {
  claim(name);
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> data(ad::numel_of(shape));
  for (auto& v : data) v = dist(rng_);
  ad::Tensor t(std::move(shape), std::move(data), true);
  params_.push_back({name, t});
  return t;
}

ad::Tensor ParamStore::constant(const std::string& name, ad::Shape shape, double value) {
  claim(name);
  auto t = ad::Tensor::full(std::move(shape), value, true);
  params_.push_back({name, t});
  return t;
}

ad::BatchNormState& ParamStore::batchnorm(const std::string& name, std::size_t features) {
  claim(name + ".running_mean");
  claim(name + ".running_var");
  norms_.push_back(ad::BatchNormState::init(features));
  auto& s = norms_.back();
  buffers_.push_back({name + ".running_mean", s.running_mean});
  buffers_.push_back({name + ".running_var", s.running_var});
  return s;
}

ad::ParameterList ParamStore::state() const {
  ad::ParameterList all = params_;
  all.insert(all.end(), buffers_.begin(), buffers_.end());
  return all;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

}  // namespace raimkit::nn
