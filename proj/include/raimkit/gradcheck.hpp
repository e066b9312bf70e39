#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "raimkit/optim.hpp"
#include "raimkit/tensor.hpp"

namespace raimkit::ad {

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h);

/// max(|a - f|, |a - f| / max(|f|, 1)) over all coordinates.
double gradient_error(std::span<const double> autodiff, std::span<const double> finite_diff);

struct GradCheckEntry {
  std::string name;
  double max_error = 0.0;
  std::size_t coordinates = 0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool passed() const;
  double max_error() const;
};

/// Compares tape gradients of `loss` against central differences for every
/// tensor in `params`. `loss` must rebuild its graph on each call and return
/// a scalar tensor.
GradCheckReport check_gradients(const std::function<Tensor()>& loss, std::span<NamedTensor> params,
                                double h, double tolerance);

}  // namespace raimkit::ad
