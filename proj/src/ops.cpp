#include "raimkit/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>

#include "raimkit/errors.hpp"
#include "raimkit/log.hpp"

namespace raimkit::ad {

namespace {

std::atomic<bool> g_fault_active{false};
std::mutex g_fault_mutex;
std::string g_fault_op;

double grad_sign(const char* op) {
  if (!g_fault_active.load(std::memory_order_relaxed)) return 1.0;
  std::lock_guard lock(g_fault_mutex);
  return g_fault_op == op ? -1.0 : 1.0;
}

bool any_requires_grad(std::initializer_list<const Tensor*> operands) {
  if (active_tape() == nullptr) return false;
  for (const Tensor* t : operands) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

// Gradient buffer of an operand, or nullptr when it does not participate.
double* grad_of(const Tensor& t) {
  if (!t.defined() || !t.requires_grad()) return nullptr;
  auto* impl = t.impl();
  impl->ensure_grad();
  return impl->grad.data();
}

const double* out_grad(const Tensor& out) { return out.impl()->grad.data(); }

Tensor make_output(Shape shape, std::vector<double> data, bool track) {
  return Tensor(std::move(shape), std::move(data), track);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got " + shape_str(t.shape()));
  }
}

template <typename Forward, typename Derivative>
Tensor elementwise(const Tensor& x, const char* name, Forward f, Derivative df) {
  const auto in = x.data();
  std::vector<double> data(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) data[i] = f(in[i]);
  const bool track = any_requires_grad({&x});
  Tensor out = make_output(x.shape(), std::move(data), track);
  if (track) {
    active_tape()->record({x}, out, [x, out, name, df]() {
      const double s = grad_sign(name);
      double* gx = grad_of(x);
      const double* g = out_grad(out);
      const auto xv = x.data();
      const auto yv = out.data();
      for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += s * g[i] * df(xv[i], yv[i]);
    });
  }
  return out;
}

}  // namespace

namespace debug {
void inject_sign_flip(const std::string& op_name) {
  std::lock_guard lock(g_fault_mutex);
  g_fault_op = op_name;
  g_fault_active.store(true);
}
void clear_faults() {
  std::lock_guard lock(g_fault_mutex);
  g_fault_op.clear();
  g_fault_active.store(false);
}
}  // namespace debug

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<double> c(m * n, 0.0);
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  const bool track = any_requires_grad({&a, &b});
  Tensor out = make_output({m, n}, std::move(c), track);
  if (track) {
    active_tape()->record({a, b}, out, [a, b, out, m, k, n]() {
      const double s = grad_sign("matmul");
      const double* g = out_grad(out);
      const auto av = a.data();
      const auto bv = b.data();
      if (double* ga = grad_of(a)) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
            ga[i * k + p] += s * acc;
          }
        }
      }
      if (double* gb = grad_of(b)) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = s * av[i * k + p];
            for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
          }
        }
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(weight, 2, "linear");
  const std::size_t out_dim = weight.dim(0), in_dim = weight.dim(1);
  std::size_t batch = 1;
  if (x.rank() == 1) {
    if (x.dim(0) != in_dim) {
      throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " +
                       shape_str(weight.shape()));
    }
  } else if (x.rank() == 2) {
    if (x.dim(1) != in_dim) {
      throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " +
                       shape_str(weight.shape()));
    }
    batch = x.dim(0);
  } else {
    throw ShapeError("linear: input must be rank 1 or 2, got " + shape_str(x.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " vs weight " +
                     shape_str(weight.shape()));
  }
  const auto xv = x.data();
  const auto wv = weight.data();
  std::vector<double> y(batch * out_dim);
  for (std::size_t n = 0; n < batch; ++n) {
    const double* xr = xv.data() + n * in_dim;
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double* wr = wv.data() + o * in_dim;
      double acc = bias.defined() ? bias[o] : 0.0;
      for (std::size_t i = 0; i < in_dim; ++i) acc += xr[i] * wr[i];
      y[n * out_dim + o] = acc;
    }
  }
  const bool track = any_requires_grad({&x, &weight, &bias});
  Shape shape = x.rank() == 1 ? Shape{out_dim} : Shape{batch, out_dim};
  Tensor out = make_output(std::move(shape), std::move(y), track);
  if (track) {
    active_tape()->record({x, weight, bias}, out, [x, weight, bias, out, batch, in_dim, out_dim]() {
      const double s = grad_sign("linear");
      const double* g = out_grad(out);
      const auto xv = x.data();
      const auto wv = weight.data();
      if (double* gx = grad_of(x)) {
        for (std::size_t n = 0; n < batch; ++n) {
          double* gxr = gx + n * in_dim;
          for (std::size_t o = 0; o < out_dim; ++o) {
            const double go = s * g[n * out_dim + o];
            if (go == 0.0) continue;
            const double* wr = wv.data() + o * in_dim;
            for (std::size_t i = 0; i < in_dim; ++i) gxr[i] += go * wr[i];
          }
        }
      }
      if (double* gw = grad_of(weight)) {
        for (std::size_t n = 0; n < batch; ++n) {
          const double* xr = xv.data() + n * in_dim;
          for (std::size_t o = 0; o < out_dim; ++o) {
            const double go = s * g[n * out_dim + o];
            if (go == 0.0) continue;
            double* gwr = gw + o * in_dim;
            for (std::size_t i = 0; i < in_dim; ++i) gwr[i] += go * xr[i];
          }
        }
      }
      if (double* gb = grad_of(bias)) {
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::size_t o = 0; o < out_dim; ++o) gb[o] += s * g[n * out_dim + o];
        }
      }
    });
  }
  return out;
}

Tensor matvec(const Tensor& a, const Tensor& x) {
  require_rank(x, 1, "matvec");
  return linear(x, a, Tensor());
}

namespace {
template <typename Op, typename DA, typename DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, Op op, DA da, DB db) {
  require_same_shape(a, b, name);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> data(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) data[i] = op(av[i], bv[i]);
  const bool track = any_requires_grad({&a, &b});
  Tensor out = make_output(a.shape(), std::move(data), track);
  if (track) {
    active_tape()->record({a, b}, out, [a, b, out, name, da, db]() {
      const double s = grad_sign(name);
      const double* g = out_grad(out);
      const auto av = a.data();
      const auto bv = b.data();
      if (double* ga = grad_of(a)) {
        for (std::size_t i = 0; i < av.size(); ++i) ga[i] += s * g[i] * da(av[i], bv[i]);
      }
      if (double* gb = grad_of(b)) {
        for (std::size_t i = 0; i < av.size(); ++i) gb[i] += s * g[i] * db(av[i], bv[i]);
      }
    });
  }
  return out;
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
  return elementwise(
      a, "scale", [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Tensor relu(const Tensor& x) {
  return elementwise(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
  return elementwise(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return elementwise(
      x, "sigmoid",
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor masked_softmax(const Tensor& energies, const std::vector<bool>& mask, EmptyMask policy) {
  require_rank(energies, 1, "masked_softmax");
  const std::size_t n = energies.numel();
  if (!mask.empty() && mask.size() != n) {
    throw ShapeError("masked_softmax: mask length " + std::to_string(mask.size()) +
                     " vs energies " + shape_str(energies.shape()));
  }
  auto active = [&](std::size_t i) { return mask.empty() || mask[i]; };
  const auto sv = energies.data();
  double max_e = -INFINITY;
  for (std::size_t i = 0; i < n; ++i) {
    if (!active(i)) continue;
    if (std::isnan(sv[i]) || sv[i] == INFINITY) throw NumericalError("masked_softmax: non-finite energy");
    max_e = std::max(max_e, sv[i]);
  }
  std::vector<double> p(n, 0.0);
  if (max_e == -INFINITY) {
    if (policy == EmptyMask::kThrow) {
      throw DomainError("masked_softmax: every entry is masked");
    }
    return Tensor(energies.shape(), std::move(p));  // constant: nothing to record
  }
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (active(i)) {
      p[i] = std::exp(sv[i] - max_e);
      z += p[i];
    }
  }
  for (auto& v : p) v /= z;
  const bool track = any_requires_grad({&energies});
  Tensor out = make_output(energies.shape(), std::move(p), track);
  if (track) {
    active_tape()->record({energies}, out, [energies, out, n]() {
      const double s = grad_sign("masked_softmax");
      const double* g = out_grad(out);
      const auto pv = out.data();
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += pv[i] * g[i];
      double* ge = grad_of(energies);
      for (std::size_t i = 0; i < n; ++i) ge[i] += s * pv[i] * (g[i] - dot);
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& probabilities, std::size_t label) {
  require_rank(probabilities, 1, "cross_entropy");
  const std::size_t n = probabilities.numel();
  if (label >= n) {
    throw IndexError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                     std::to_string(n) + " classes");
  }
  if (!probabilities.all_finite()) {
    throw NumericalError("cross_entropy: non-finite probabilities");
  }
  constexpr double kFloor = 1e-12;
  const double p = probabilities[label];
  const bool floored = p < kFloor;
  const double loss = -std::log(floored ? kFloor : p);
  const bool track = any_requires_grad({&probabilities});
  Tensor out = make_output({1}, {loss}, track);
  if (track) {
    active_tape()->record({probabilities}, out, [probabilities, out, label, p, floored]() {
      if (floored) return;
      const double s = grad_sign("cross_entropy");
      double* gp = grad_of(probabilities);
      gp[label] += s * out_grad(out)[0] * (-1.0 / p);
    });
  }
  return out;
}

Tensor squared_error(const Tensor& prediction, const Tensor& target) {
  require_same_shape(prediction, target, "squared_error");
  const auto pv = prediction.data();
  const auto tv = target.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) acc += (pv[i] - tv[i]) * (pv[i] - tv[i]);
  const bool track = any_requires_grad({&prediction});
  Tensor out = make_output({1}, {acc}, track);
  if (track) {
    active_tape()->record({prediction}, out, [prediction, target, out]() {
      const double s = grad_sign("squared_error");
      const double g = out_grad(out)[0];
      double* gp = grad_of(prediction);
      const auto pv = prediction.data();
      const auto tv = target.data();
      for (std::size_t i = 0; i < pv.size(); ++i) gp[i] += s * g * 2.0 * (pv[i] - tv[i]);
    });
  }
  return out;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no tensors");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(first));
  }
  std::size_t outer = 1, inner = 1, total_axis = 0;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) ok = false;
    }
    if (!ok) {
      throw ShapeError("concat: shape mismatch " + shape_str(first) + " vs " + shape_str(s));
    }
    total_axis += s[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total_axis;
  std::vector<double> data(numel_of(out_shape));
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t chunk = p.dim(axis) * inner;
    const auto pv = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.data() + o * chunk, chunk, data.data() + o * total_axis * inner + offset);
    }
    offset += chunk;
  }
  bool track = false;
  if (active_tape()) {
    for (const auto& p : parts) track = track || p.requires_grad();
  }
  Tensor out = make_output(std::move(out_shape), std::move(data), track);
  if (track) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    active_tape()->record(inputs, out, [inputs, out, offsets, outer, inner, total_axis, axis]() {
      const double s = grad_sign("concat");
      const double* g = out_grad(out);
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        double* gp = grad_of(inputs[k]);
        if (!gp) continue;
        const std::size_t chunk = inputs[k].dim(axis) * inner;
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = g + o * total_axis * inner + offsets[k];
          double* dst = gp + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) dst[i] += s * src[i];
        }
      }
    });
  }
  return out;
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("stack: no tensors");
  std::vector<Tensor> lifted;
  lifted.reserve(parts.size());
  for (const auto& p : parts) {
    if (p.shape() != parts[0].shape()) {
      throw ShapeError("stack: shape mismatch " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    Shape s{1};
    s.insert(s.end(), p.shape().begin(), p.shape().end());
    lifted.push_back(reshape(p, std::move(s)));
  }
  return concat(lifted, 0);
}

Tensor gather(const Tensor& x, std::vector<std::size_t> index, Shape out_shape) {
  if (numel_of(out_shape) != index.size()) {
    throw ShapeError("gather: index count " + std::to_string(index.size()) +
                     " does not match shape " + shape_str(out_shape));
  }
  const auto xv = x.data();
  std::vector<double> data(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= xv.size()) {
      throw IndexError("gather: index " + std::to_string(index[i]) + " out of range for " +
                       shape_str(x.shape()));
    }
    data[i] = xv[index[i]];
  }
  const bool track = any_requires_grad({&x});
  Tensor out = make_output(std::move(out_shape), std::move(data), track);
  if (track) {
    active_tape()->record({x}, out, [x, out, index = std::move(index)]() {
      const double s = grad_sign("gather");
      const double* g = out_grad(out);
      double* gx = grad_of(x);
      for (std::size_t i = 0; i < index.size(); ++i) gx[index[i]] += s * g[i];
    });
  }
  return out;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin >= end || end > x.dim(axis)) {
    throw ShapeError("slice: invalid range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") on axis " + std::to_string(axis) + " of " +
                     shape_str(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= x.dim(d);
  for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
  const std::size_t len = end - begin;
  std::vector<std::size_t> index;
  index.reserve(outer * len * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    const std::size_t base = o * x.dim(axis) * inner + begin * inner;
    for (std::size_t i = 0; i < len * inner; ++i) index.push_back(base + i);
  }
  Shape s = x.shape();
  s[axis] = len;
  return gather(x, std::move(index), std::move(s));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> data(x.data().begin(), x.data().end());
  const bool track = any_requires_grad({&x});
  Tensor out = make_output(std::move(shape), std::move(data), track);
  if (track) {
    active_tape()->record({x}, out, [x, out]() {
      const double s = grad_sign("reshape");
      const double* g = out_grad(out);
      double* gx = grad_of(x);
      for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += s * g[i];
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<std::size_t> index(r * c);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < r; ++j) index[i * r + j] = j * c + i;
  }
  return gather(x, std::move(index), {c, r});
}

Tensor repeat_each(const Tensor& x, std::size_t times) {
  require_rank(x, 1, "repeat_each");
  std::vector<std::size_t> index(x.numel() * times);
  for (std::size_t i = 0; i < index.size(); ++i) index[i] = i / times;
  const std::size_t n = index.size();
  return gather(x, std::move(index), {n});
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  const bool track = any_requires_grad({&x});
  Tensor out = make_output({1}, {acc}, track);
  if (track) {
    active_tape()->record({x}, out, [x, out]() {
      const double g = grad_sign("sum") * out_grad(out)[0];
      double* gx = grad_of(x);
      for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError("mean_axis: axis out of range for " + shape_str(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  const std::size_t len = x.dim(axis);
  for (std::size_t d = 0; d < axis; ++d) outer *= x.dim(d);
  for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
  Shape s = x.shape();
  s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis));
  if (s.empty()) s = {1};
  const auto xv = x.data();
  std::vector<double> data(outer * inner, 0.0);
  const double inv = 1.0 / static_cast<double>(len);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t l = 0; l < len; ++l) {
      const double* src = xv.data() + (o * len + l) * inner;
      double* dst = data.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  for (auto& v : data) v *= inv;
  const bool track = any_requires_grad({&x});
  Tensor out = make_output(std::move(s), std::move(data), track);
  if (track) {
    active_tape()->record({x}, out, [x, out, outer, inner, len, inv]() {
      const double s = grad_sign("mean_axis") * inv;
      const double* g = out_grad(out);
      double* gx = grad_of(x);
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t l = 0; l < len; ++l) {
          double* dst = gx + (o * len + l) * inner;
          for (std::size_t i = 0; i < inner; ++i) dst[i] += s * g[o * inner + i];
        }
      }
    });
  }
  return out;
}

Tensor outer(const Tensor& u, const Tensor& v) {
  require_rank(u, 1, "outer");
  require_rank(v, 1, "outer");
  const std::size_t m = u.numel(), n = v.numel();
  std::vector<double> data(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) data[i * n + j] = u[i] * v[j];
  }
  const bool track = any_requires_grad({&u, &v});
  Tensor out = make_output({m, n}, std::move(data), track);
  if (track) {
    active_tape()->record({u, v}, out, [u, v, out, m, n]() {
      const double s = grad_sign("outer");
      const double* g = out_grad(out);
      if (double* gu = grad_of(u)) {
        for (std::size_t i = 0; i < m; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * v[j];
          gu[i] += s * acc;
        }
      }
      if (double* gv = grad_of(v)) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) gv[j] += s * g[i * n + j] * u[i];
        }
      }
    });
  }
  return out;
}

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                                 Padding padding) {
  if (kernel == 0 || stride == 0) throw ShapeError("conv1d: kernel and stride must be >= 1");
  if (padding == Padding::kSame) return (length + stride - 1) / stride;
  if (kernel > length) {
    throw ShapeError("conv1d: kernel " + std::to_string(kernel) + " longer than input " +
                     std::to_string(length) + " under VALID padding");
  }
  return (length - kernel) / stride + 1;
}

Tensor conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              Padding padding) {
  require_rank(kernel, 3, "conv1d");
  const bool batched = x.rank() == 3;
  if (!batched && x.rank() != 2) {
    throw ShapeError("conv1d: input must be [c x L] or [n x c x L], got " + shape_str(x.shape()));
  }
  const std::size_t n = batched ? x.dim(0) : 1;
  const std::size_t c_in = x.dim(batched ? 1 : 0);
  const std::size_t len = x.dim(batched ? 2 : 1);
  const std::size_t c_out = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != c_in) {
    throw ShapeError("conv1d: input " + shape_str(x.shape()) + " vs kernel " +
                     shape_str(kernel.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != c_out)) {
    throw ShapeError("conv1d: bias " + shape_str(bias.shape()) + " vs kernel " +
                     shape_str(kernel.shape()));
  }
  const std::size_t out_len = conv1d_output_length(len, k, stride, padding);
  std::ptrdiff_t pad_left = 0;
  if (padding == Padding::kSame) {
    const std::ptrdiff_t needed =
        static_cast<std::ptrdiff_t>((out_len - 1) * stride + k) - static_cast<std::ptrdiff_t>(len);
    pad_left = std::max<std::ptrdiff_t>(needed, 0) / 2;
  }
  // Output positions t whose input index t*stride + kk - pad_left is in range.
  auto valid_range = [=](std::size_t kk) {
    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kk) - pad_left;
    const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(stride);
    std::ptrdiff_t lo = off >= 0 ? 0 : (-off + s - 1) / s;
    std::ptrdiff_t hi_excl = (static_cast<std::ptrdiff_t>(len) - 1 - off);
    hi_excl = hi_excl < 0 ? 0 : hi_excl / s + 1;
    hi_excl = std::min<std::ptrdiff_t>(hi_excl, static_cast<std::ptrdiff_t>(out_len));
    return std::pair<std::size_t, std::size_t>(static_cast<std::size_t>(lo),
                                               static_cast<std::size_t>(std::max(lo, hi_excl)));
  };
  const auto xv = x.data();
  const auto wv = kernel.data();
  std::vector<double> y(n * c_out * out_len, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t co = 0; co < c_out; ++co) {
      double* yr = y.data() + (b * c_out + co) * out_len;
      if (bias.defined()) std::fill_n(yr, out_len, bias[co]);
      for (std::size_t ci = 0; ci < c_in; ++ci) {
        const double* xr = xv.data() + (b * c_in + ci) * len;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double w = wv[(co * c_in + ci) * k + kk];
          const auto [lo, hi] = valid_range(kk);
          const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kk) - pad_left;
          for (std::size_t t = lo; t < hi; ++t) {
            yr[t] += w * xr[static_cast<std::ptrdiff_t>(t * stride) + off];
          }
        }
      }
    }
  }
  const bool track = any_requires_grad({&x, &kernel, &bias});
  Shape shape = batched ? Shape{n, c_out, out_len} : Shape{c_out, out_len};
  Tensor out = make_output(std::move(shape), std::move(y), track);
  if (track) {
    active_tape()->record({x, kernel, bias}, out, [=]() {
      const double s = grad_sign("conv1d");
      const double* g = out_grad(out);
      const auto xv = x.data();
      const auto wv = kernel.data();
      double* gx = grad_of(x);
      double* gw = grad_of(kernel);
      double* gb = grad_of(bias);
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t co = 0; co < c_out; ++co) {
          const double* gr = g + (b * c_out + co) * out_len;
          if (gb) {
            double acc = 0.0;
            for (std::size_t t = 0; t < out_len; ++t) acc += gr[t];
            gb[co] += s * acc;
          }
          for (std::size_t ci = 0; ci < c_in; ++ci) {
            const double* xr = xv.data() + (b * c_in + ci) * len;
            double* gxr = gx ? gx + (b * c_in + ci) * len : nullptr;
            for (std::size_t kk = 0; kk < k; ++kk) {
              const std::size_t widx = (co * c_in + ci) * k + kk;
              const auto [lo, hi] = valid_range(kk);
              const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kk) - pad_left;
              if (gw) {
                double acc = 0.0;
                for (std::size_t t = lo; t < hi; ++t) {
                  acc += gr[t] * xr[static_cast<std::ptrdiff_t>(t * stride) + off];
                }
                gw[widx] += s * acc;
              }
              if (gxr) {
                const double w = s * wv[widx];
                for (std::size_t t = lo; t < hi; ++t) {
                  gxr[static_cast<std::ptrdiff_t>(t * stride) + off] += w * gr[t];
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor maxpool1d(const Tensor& x, std::size_t window, std::size_t stride) {
  if (window == 0 || stride == 0) throw ShapeError("maxpool1d: window and stride must be >= 1");
  if (x.rank() < 1) throw ShapeError("maxpool1d: rank-0 input");
  const std::size_t len = x.shape().back();
  if (window > len) {
    throw ShapeError("maxpool1d: window " + std::to_string(window) + " longer than input " +
                     std::to_string(len));
  }
  const std::size_t rows = x.numel() / len;
  const std::size_t out_len = (len - window) / stride + 1;
  const auto xv = x.data();
  std::vector<double> y(rows * out_len);
  std::vector<std::size_t> arg(rows * out_len);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * len;
    for (std::size_t t = 0; t < out_len; ++t) {
      std::size_t best = t * stride;
      for (std::size_t i = best + 1; i < t * stride + window; ++i) {
        if (xr[i] > xr[best]) best = i;
      }
      y[r * out_len + t] = xr[best];
      arg[r * out_len + t] = r * len + best;
    }
  }
  Shape s = x.shape();
  s.back() = out_len;
  const bool track = any_requires_grad({&x});
  Tensor out = make_output(std::move(s), std::move(y), track);
  if (track) {
    active_tape()->record({x}, out, [x, out, arg = std::move(arg)]() {
      const double sgn = grad_sign("maxpool1d");
      const double* g = out_grad(out);
      double* gx = grad_of(x);
      for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += sgn * g[i];
    });
  }
  return out;
}

BatchNormState BatchNormState::init(std::size_t features) {
  BatchNormState st;
  st.running_mean = Tensor::zeros({features});
  st.running_var = Tensor::full({features}, 1.0);
  return st;
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                 Mode mode) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw ShapeError("batchnorm: input must be [n x c] or [n x c x L], got " +
                     shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), len = x.rank() == 3 ? x.dim(2) : 1;
  if (gamma.numel() != c || beta.numel() != c || state.running_mean.numel() != c) {
    throw ShapeError("batchnorm: parameters do not match " + std::to_string(c) + " features");
  }
  if (mode == Mode::kTrain && n < 2) {
    log::warn_once("batchnorm: train mode with batch size 1 falls back to identity");
    return x;
  }
  const double eps = state.eps;
  const auto xv = x.data();
  const std::size_t count = n * len;
  std::vector<double> mu(c, 0.0), var(c, 0.0);
  if (mode == Mode::kTrain) {
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* xr = xv.data() + (b * c + ch) * len;
        for (std::size_t l = 0; l < len; ++l) mu[ch] += xr[l];
      }
    }
    for (auto& m : mu) m /= static_cast<double>(count);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* xr = xv.data() + (b * c + ch) * len;
        for (std::size_t l = 0; l < len; ++l) var[ch] += (xr[l] - mu[ch]) * (xr[l] - mu[ch]);
      }
    }
    for (auto& v : var) v /= static_cast<double>(count);
    auto rm = state.running_mean.mutable_data();
    auto rv = state.running_var.mutable_data();
    const double unbias = count > 1 ? static_cast<double>(count) / static_cast<double>(count - 1) : 1.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      rm[ch] = (1.0 - state.momentum) * rm[ch] + state.momentum * mu[ch];
      rv[ch] = (1.0 - state.momentum) * rv[ch] + state.momentum * var[ch] * unbias;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = state.running_mean[ch];
      var[ch] = state.running_var[ch];
    }
  }
  std::vector<double> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(var[ch] + eps);
  std::vector<double> xhat(x.numel()), y(x.numel());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (b * c + ch) * len;
      for (std::size_t l = 0; l < len; ++l) {
        xhat[base + l] = (xv[base + l] - mu[ch]) * inv_std[ch];
        y[base + l] = gamma[ch] * xhat[base + l] + beta[ch];
      }
    }
  }
  const bool track = any_requires_grad({&x, &gamma, &beta});
  Tensor out = make_output(x.shape(), std::move(y), track);
  if (track) {
    const bool train = mode == Mode::kTrain;
    active_tape()->record({x, gamma, beta}, out,
                          [=, xhat = std::move(xhat), inv_std = std::move(inv_std)]() {
      const double s = grad_sign("batchnorm");
      const double* g = out_grad(out);
      double* gx = grad_of(x);
      double* gg = grad_of(gamma);
      double* gbeta = grad_of(beta);
      std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t base = (b * c + ch) * len;
          for (std::size_t l = 0; l < len; ++l) {
            sum_g[ch] += g[base + l];
            sum_gx[ch] += g[base + l] * xhat[base + l];
          }
        }
      }
      for (std::size_t ch = 0; ch < c; ++ch) {
        if (gg) gg[ch] += s * sum_gx[ch];
        if (gbeta) gbeta[ch] += s * sum_g[ch];
      }
      if (!gx) return;
      const double m = static_cast<double>(count);
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t base = (b * c + ch) * len;
          const double k = gamma[ch] * inv_std[ch];
          for (std::size_t l = 0; l < len; ++l) {
            double d = g[base + l];
            if (train) d -= (sum_g[ch] + xhat[base + l] * sum_gx[ch]) / m;
            gx[base + l] += s * k * d;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace raimkit::ad
