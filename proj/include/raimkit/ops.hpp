#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "raimkit/tensor.hpp"

namespace raimkit::ad {

// Differentiable primitives. Every op records a backward rule on the active
// tape when at least one operand requires a gradient.

Tensor matmul(const Tensor& a, const Tensor& b);
/// a[m x k] * x[k] -> [m]
Tensor matvec(const Tensor& a, const Tensor& x);
/// x[in] or x[n x in]; weight[out x in]; bias[out] may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);

enum class EmptyMask {
  kThrow,     // all-masked input is a domain error
  kZeros,     // all-masked input yields the zero vector
};

/// Softmax over a rank-1 tensor restricted to entries where mask is true.
/// An empty mask means "no mask". Masked outputs are exactly zero.
Tensor masked_softmax(const Tensor& energies, const std::vector<bool>& mask = {},
                      EmptyMask policy = EmptyMask::kThrow);

/// -log(max(p[label], 1e-12)).
Tensor cross_entropy(const Tensor& probabilities, std::size_t label);
/// sum((pred - target)^2); target is treated as a constant.
Tensor squared_error(const Tensor& prediction, const Tensor& target);

Tensor concat(std::span<const Tensor> parts, std::size_t axis = 0);
/// Stacks equally-shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> parts);
/// out.flat[i] = x.flat[index[i]]; the gradient scatter-adds.
Tensor gather(const Tensor& x, std::vector<std::size_t> index, Shape out_shape);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);
/// Each element of a rank-1 tensor repeated `times` times in place.
Tensor repeat_each(const Tensor& x, std::size_t times);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mean_axis(const Tensor& x, std::size_t axis);
Tensor outer(const Tensor& u, const Tensor& v);

enum class Padding { kSame, kValid };

/// Cross-correlation. x is [c_in x L] or [n x c_in x L]; kernel is
/// [c_out x c_in x k]; bias [c_out] may be undefined.
Tensor conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
              std::size_t stride, Padding padding);
std::size_t conv1d_output_length(std::size_t length, std::size_t kernel,
                                 std::size_t stride, Padding padding);

/// Valid-window max pooling over the last axis. Ties go to the lowest index.
Tensor maxpool1d(const Tensor& x, std::size_t window, std::size_t stride);

enum class Mode { kTrain, kEval };

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNormState init(std::size_t features);
};

/// Per-feature normalization over the batch axis (and the length axis for
/// rank-3 input). x is [n x c] or [n x c x L]; gamma, beta are [c].
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 BatchNormState& state, Mode mode);

namespace debug {
/// Test hook: negates the backward rule of the named op until cleared.
void inject_sign_flip(const std::string& op_name);
void clear_faults();
}  // namespace debug

}  // namespace raimkit::ad
