#pragma once

#include <functional>
#include <random>
#include <vector>

#include "raimkit/gradcheck.hpp"
#include "raimkit/ops.hpp"

namespace testutil {

using raimkit::ad::NamedTensor;
using raimkit::ad::Shape;
using raimkit::ad::Tensor;

inline Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(raimkit::ad::numel_of(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Contracts `y` with fixed random weights so every output coordinate carries
// a distinct gradient.
inline Tensor probe_loss(const Tensor& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  Tensor w = random_tensor(rng, y.shape(), -1.0, 1.0, false);
  return raimkit::ad::sum(raimkit::ad::mul(y, w));
}

inline raimkit::ad::GradCheckReport check(std::vector<NamedTensor> params,
                                          const std::function<Tensor()>& loss,
                                          double h = 1e-6, double tol = 1e-6) {
  return raimkit::ad::check_gradients(loss, params, h, tol);
}

}  // namespace testutil
