#include "raimkit/optim.hpp"

#include <cmath>

#include "raimkit/errors.hpp"

namespace raimkit::ad {

AdamState::AdamState(AdamConfig config, std::span<const NamedTensor> params) : config_(config) {
  for (const auto& p : params) {
    first_.emplace_back(p.tensor.numel(), 0.0);
    second_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void adam_step(std::span<NamedTensor> params, AdamState& state) {
  if (params.size() != state.first_.size()) {
    throw ShapeError("adam_step: state tracks " + std::to_string(state.first_.size()) +
                     " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].tensor.numel() != state.first_[i].size()) {
      throw ShapeError("adam_step: moment buffer shape mismatch for " + params[i].name);
    }
    if (!params[i].tensor.has_grad()) continue;
    for (double g : params[i].tensor.mutable_grad()) {
      if (!std::isfinite(g)) {
        throw NumericalError("adam_step: non-finite gradient in parameter " + params[i].name);
      }
    }
  }
  const auto& cfg = state.config_;
  state.step_ += 1;
  const double t = static_cast<double>(state.step_);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].tensor;
    auto& m = state.first_[i];
    auto& v = state.second_[i];
    auto w = p.mutable_data();
    const std::vector<double> g = p.grad();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      w[j] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

void zero_grads(std::span<NamedTensor> params) {
  for (auto& p : params) p.tensor.zero_grad();
}

}  // namespace raimkit::ad
