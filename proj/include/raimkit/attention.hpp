#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "raimkit/nn.hpp"
#include "raimkit/ops.hpp"

namespace raimkit::attention {

/// Energy MLP over time positions: W_h [W x |h|], w_a [|a|], b [W], and for
/// the intervention branch W_m [W x |h|] applied to h at the last intervention.
struct TimeParams {
  ad::Tensor W_h;
  ad::Tensor w_a;
  ad::Tensor b;
  ad::Tensor W_m;  // undefined unless the branch uses h_at_m

  std::size_t window() const { return b.dim(0); }
};

/// Channel MLP: W_h [K x |h|], w_a [W*d_emb], b [K].
struct ChannelParams {
  ad::Tensor W_h;
  ad::Tensor w_a;
  ad::Tensor b;

  std::size_t channels() const { return b.dim(0); }
};

TimeParams make_time_params(nn::ParamStore& store, const std::string& prefix, std::size_t window,
                            std::size_t hidden, std::size_t input_width, bool with_m);
ChannelParams make_channel_params(nn::ParamStore& store, const std::string& prefix,
                                  std::size_t channels, std::size_t window, std::size_t hidden,
                                  std::size_t d_emb);

/// s_j = tanh((W_h h)_j [+ (W_m h_m)_j] + steps_j . w_a + b_j) over the W' rows
/// of `steps` ([W' x |a|]); the first W' positional rows are used.
ad::Tensor time_energy(const ad::Tensor& h_prev, const ad::Tensor& steps, const TimeParams& params,
                       const ad::Tensor& h_at_m = {});

ad::Tensor time_weights(const ad::Tensor& energies);

/// Rearranges [W' x K*d] steps into K channel vectors of length W'*d.
ad::Tensor channel_vectors(const ad::Tensor& steps, std::size_t channels);

/// beta = softmax(tanh(W_h h + C w_a[:W'd] + b)) with C from channel_vectors.
ad::Tensor channel_weights(const ad::Tensor& h_prev, const ad::Tensor& steps,
                           const ChannelParams& params);

struct JointContext {
  ad::Tensor A;  // [K x W'], beta outer alpha
  ad::Tensor Z;  // [K*d]
};

/// Z = sum_j alpha_j (beta * a_j), channel block k scaled by beta_k. With an
/// undefined beta the blocks are not reweighted.
JointContext joint_context(const ad::Tensor& alpha, const ad::Tensor& beta, const ad::Tensor& steps);

/// 1-based positions within N/2 of a marked column, clipped to [1, W'].
std::vector<std::size_t> active_set(std::span<const std::uint8_t> guidance_row, std::size_t n);
std::vector<bool> active_mask(std::span<const std::uint8_t> guidance_row, std::size_t n);

/// Most recent marked column (1-based), if any.
std::optional<std::size_t> last_marked(std::span<const std::uint8_t> guidance_row);

struct GuidedContext {
  ad::Tensor gamma;                 // [W'], zero outside the active set
  ad::Tensor Z;                     // [K*d]
  std::vector<std::size_t> active;  // 1-based, sorted
  bool empty = true;
};

enum class EmptyPolicy {
  kZero,        // empty active set gives zero weights and a zero context
  kUnguided,    // fall back to attention over every position
};

/// Masked attention restricted to the active set. `beta` may be undefined.
GuidedContext guided_context(const ad::Tensor& h_prev, const ad::Tensor& steps,
                             std::span<const std::uint8_t> guidance_row, std::size_t n,
                             const ad::Tensor& beta, const TimeParams& params,
                             EmptyPolicy policy = EmptyPolicy::kZero);

/// As guided_context, with the extra W_m h_at_m energy term.
GuidedContext intervention_guided_context(const ad::Tensor& h_prev, const ad::Tensor& h_at_m,
                                          const ad::Tensor& steps,
                                          std::span<const std::uint8_t> guidance_row,
                                          std::size_t n, const ad::Tensor& beta,
                                          const TimeParams& params,
                                          EmptyPolicy policy = EmptyPolicy::kZero);

}  // namespace raimkit::attention
