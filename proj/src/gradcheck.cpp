#include "raimkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "raimkit/errors.hpp"

namespace raimkit::ad {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor probe = x.clone();
  probe.set_requires_grad(false);
  std::vector<double> g(x.numel());
  auto data = probe.mutable_data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double orig = data[i];
    data[i] = orig + h;
    const double up = f(probe);
    data[i] = orig - h;
    const double down = f(probe);
    data[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return Tensor(x.shape(), std::move(g));
}

double gradient_error(std::span<const double> autodiff, std::span<const double> finite_diff) {
  if (autodiff.size() != finite_diff.size()) {
    throw ShapeError("gradient_error: length mismatch");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < autodiff.size(); ++i) {
    const double abs_err = std::abs(autodiff[i] - finite_diff[i]);
    const double rel_err = abs_err / std::max(std::abs(finite_diff[i]), 1.0);
    worst = std::max(worst, std::max(abs_err, rel_err));
  }
  return worst;
}

bool GradCheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

double GradCheckReport::max_error() const {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.max_error);
  return worst;
}

GradCheckReport check_gradients(const std::function<Tensor()>& loss, std::span<NamedTensor> params,
                                double h, double tolerance) {
  for (auto& p : params) {
    p.tensor.set_requires_grad(true);
    p.tensor.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor value = loss();
    tape.backward(value);
  }
  GradCheckReport report;
  NoGradScope no_grad;
  for (auto& p : params) {
    const std::vector<double> analytic = p.tensor.grad();
    std::vector<double> numeric(analytic.size());
    auto data = p.tensor.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + h;
      const double up = loss().item();
      data[i] = orig - h;
      const double down = loss().item();
      data[i] = orig;
      numeric[i] = (up - down) / (2.0 * h);
    }
    GradCheckEntry e;
    e.name = p.name;
    e.coordinates = data.size();
    e.max_error = gradient_error(analytic, numeric);
    e.passed = e.max_error <= tolerance;
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace raimkit::ad
