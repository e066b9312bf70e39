#include "raimkit/attention.hpp"

#include <algorithm>

#include "raimkit/errors.hpp"

namespace raimkit::attention {

namespace {

ad::Tensor first_rows(const ad::Tensor& x, std::size_t rows) {
  if (rows == x.dim(0)) return x;
  return ad::slice(x, 0, 0, rows);
}

void check_steps(const ad::Tensor& steps, std::size_t window, const char* who) {
  if (steps.rank() != 2) {
    throw ShapeError(std::string(who) + ": steps must be [W' x |a|], got " +
                     ad::shape_str(steps.shape()));
  }
  if (steps.dim(0) > window) {
    throw ShapeError(std::string(who) + ": " + std::to_string(steps.dim(0)) +
                     " steps exceed window " + std::to_string(window));
  }
}

}  // namespace

TimeParams make_time_params(nn::ParamStore& store, const std::string& prefix, std::size_t window,
                            std::size_t hidden, std::size_t input_width, bool with_m) {
  TimeParams p;
  p.W_h = store.uniform(prefix + ".W_h", {window, hidden}, hidden);
  p.w_a = store.uniform(prefix + ".w_a", {input_width}, input_width);
  p.b = store.constant(prefix + ".b", {window}, 0.0);
  if (with_m) p.W_m = store.uniform(prefix + ".W_m", {window, hidden}, hidden);
  return p;
}

ChannelParams make_channel_params(nn::ParamStore& store, const std::string& prefix,
                                  std::size_t channels, std::size_t window, std::size_t hidden,
                                  std::size_t d_emb) {
  ChannelParams p;
  p.W_h = store.uniform(prefix + ".W_h", {channels, hidden}, hidden);
  p.w_a = store.uniform(prefix + ".w_a", {window * d_emb}, window * d_emb);
  p.b = store.constant(prefix + ".b", {channels}, 0.0);
  return p;
}

ad::Tensor time_energy(const ad::Tensor& h_prev, const ad::Tensor& steps, const TimeParams& params,
                       const ad::Tensor& h_at_m) {
  check_steps(steps, params.window(), "time_energy");
  const std::size_t wp = steps.dim(0);
  ad::Tensor s = ad::add(first_rows(ad::matvec(params.W_h, h_prev), wp), ad::matvec(steps, params.w_a));
  if (params.W_m.defined()) {
    if (!h_at_m.defined()) throw ContractError("time_energy: branch needs h_at_m");
    s = ad::add(s, first_rows(ad::matvec(params.W_m, h_at_m), wp));
  }
  s = ad::add(s, first_rows(params.b, wp));
  return ad::tanh(s);
}

ad::Tensor time_weights(const ad::Tensor& energies) { return ad::masked_softmax(energies); }

ad::Tensor channel_vectors(const ad::Tensor& steps, std::size_t channels) {
  const std::size_t wp = steps.dim(0);
  const std::size_t width = steps.dim(1);
  if (channels == 0 || width % channels != 0) {
    throw ShapeError("channel_vectors: width " + std::to_string(width) + " not divisible by " +
                     std::to_string(channels) + " channels");
  }
  const std::size_t d = width / channels;
  std::vector<std::size_t> index;
  index.reserve(wp * width);
  for (std::size_t k = 0; k < channels; ++k) {
    for (std::size_t j = 0; j < wp; ++j) {
      for (std::size_t e = 0; e < d; ++e) index.push_back(j * width + k * d + e);
    }
  }
  return ad::gather(steps, std::move(index), {channels, wp * d});
}

ad::Tensor channel_weights(const ad::Tensor& h_prev, const ad::Tensor& steps,
                           const ChannelParams& params) {
  const std::size_t K = params.channels();
  ad::Tensor C = channel_vectors(steps, K);
  const std::size_t len = C.dim(1);
  if (len > params.w_a.numel()) {
    throw ShapeError("channel_weights: channel vector length " + std::to_string(len) +
                     " exceeds parameter length " + std::to_string(params.w_a.numel()));
  }
  ad::Tensor w = len == params.w_a.numel() ? params.w_a : ad::slice(params.w_a, 0, 0, len);
  ad::Tensor s = ad::tanh(ad::add(ad::add(ad::matvec(params.W_h, h_prev), ad::matvec(C, w)), params.b));
  return ad::masked_softmax(s);
}

JointContext joint_context(const ad::Tensor& alpha, const ad::Tensor& beta, const ad::Tensor& steps) {
  const std::size_t wp = steps.dim(0);
  const std::size_t width = steps.dim(1);
  if (alpha.rank() != 1 || alpha.numel() != wp) {
    throw ShapeError("joint_context: alpha " + ad::shape_str(alpha.shape()) + " vs steps " +
                     ad::shape_str(steps.shape()));
  }
  JointContext out;
  ad::Tensor pooled = ad::reshape(ad::matmul(ad::reshape(alpha, {1, wp}), steps), {width});
  if (!beta.defined()) {
    out.Z = pooled;
    return out;
  }
  const std::size_t K = beta.numel();
  if (width % K != 0) throw ShapeError("joint_context: width not divisible by channel count");
  out.A = ad::outer(beta, alpha);
  out.Z = ad::mul(pooled, ad::repeat_each(beta, width / K));
  return out;
}

std::vector<bool> active_mask(std::span<const std::uint8_t> row, std::size_t n) {
  const std::size_t radius = n / 2;
  std::vector<bool> mask(row.size(), false);
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (!row[j]) continue;
    const std::size_t lo = j >= radius ? j - radius : 0;
    const std::size_t hi = std::min(row.size() - 1, j + radius);
    for (std::size_t i = lo; i <= hi; ++i) mask[i] = true;
  }
  return mask;
}

std::vector<std::size_t> active_set(std::span<const std::uint8_t> row, std::size_t n) {
  auto mask = active_mask(row, n);
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < mask.size(); ++j) {
    if (mask[j]) out.push_back(j + 1);
  }
  return out;
}

std::optional<std::size_t> last_marked(std::span<const std::uint8_t> row) {
  for (std::size_t j = row.size(); j > 0; --j) {
    if (row[j - 1]) return j;
  }
  return std::nullopt;
}

namespace {

GuidedContext guided_impl(const ad::Tensor& h_prev, const ad::Tensor& h_at_m,
                          const ad::Tensor& steps, std::span<const std::uint8_t> row,
                          std::size_t n, const ad::Tensor& beta, const TimeParams& params,
                          EmptyPolicy policy) {
  check_steps(steps, params.window(), "guided_context");
  const std::size_t wp = steps.dim(0);
  if (row.size() != wp) {
    throw ShapeError("guided_context: guidance row has " + std::to_string(row.size()) +
                     " columns for " + std::to_string(wp) + " steps");
  }
  GuidedContext out;
  auto mask = active_mask(row, n);
  for (std::size_t j = 0; j < wp; ++j) {
    if (mask[j]) out.active.push_back(j + 1);
  }
  out.empty = out.active.empty();
  if (out.empty && policy == EmptyPolicy::kZero) {
    out.gamma = ad::Tensor::zeros({wp});
    out.Z = ad::Tensor::zeros({steps.dim(1)});
    return out;
  }
  if (out.empty) mask.clear();  // unguided fallback: attend everywhere
  ad::Tensor s = time_energy(h_prev, steps, params, h_at_m);
  out.gamma = ad::masked_softmax(s, mask);
  out.Z = joint_context(out.gamma, beta, steps).Z;
  return out;
}

}  // namespace

GuidedContext guided_context(const ad::Tensor& h_prev, const ad::Tensor& steps,
                             std::span<const std::uint8_t> row, std::size_t n,
                             const ad::Tensor& beta, const TimeParams& params, EmptyPolicy policy) {
  if (params.W_m.defined()) throw ContractError("guided_context: branch expects h_at_m");
  return guided_impl(h_prev, {}, steps, row, n, beta, params, policy);
}

GuidedContext intervention_guided_context(const ad::Tensor& h_prev, const ad::Tensor& h_at_m,
                                          const ad::Tensor& steps,
                                          std::span<const std::uint8_t> row, std::size_t n,
                                          const ad::Tensor& beta, const TimeParams& params,
                                          EmptyPolicy policy) {
  return guided_impl(h_prev, h_at_m, steps, row, n, beta, params, policy);
}

}  // namespace raimkit::attention
