#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "raimkit/checkpoint.hpp"
#include "raimkit/errors.hpp"
#include "raimkit/log.hpp"
#include "test_util.hpp"

using namespace raimkit;
using namespace raimkit::ad;
using testutil::check;
using testutil::probe_loss;
using testutil::random_tensor;

namespace {
std::vector<double> vals(const Tensor& t) { return {t.data().begin(), t.data().end()}; }
}  // namespace

TEST_CASE("matmul forward cases") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor m({2, 2}, {1, 2, 3, 4});
  CHECK(vals(matmul(eye, m)) == std::vector<double>{1, 2, 3, 4});
  Tensor row({1, 2}, {1, 2});
  Tensor col({2, 1}, {3, 4});
  CHECK(matmul(row, col).item() == 11.0);
}

TEST_CASE("matmul shape error names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches finite differences") {
  std::mt19937_64 rng(1);
  Tensor a = random_tensor(rng, {3, 4});
  Tensor b = random_tensor(rng, {4, 2});
  auto report = check({{"a", a}, {"b", b}}, [&] { return probe_loss(matmul(a, b)); });
  CHECK(report.passed());
}

TEST_CASE("linear and matvec gradients") {
  std::mt19937_64 rng(2);
  Tensor x = random_tensor(rng, {3, 5});
  Tensor w = random_tensor(rng, {4, 5});
  Tensor bias = random_tensor(rng, {4});
  Tensor v = random_tensor(rng, {5});
  CHECK(check({{"x", x}, {"w", w}, {"b", bias}}, [&] { return probe_loss(linear(x, w, bias)); })
            .passed());
  CHECK(check({{"w", w}, {"v", v}}, [&] { return probe_loss(matvec(w, v)); }).passed());
}

TEST_CASE("conv1d forward examples") {
  Tensor x({1, 3}, {1, 2, 3});
  Tensor k1({1, 1, 1}, {1});
  CHECK(vals(conv1d(x, k1, Tensor(), 1, Padding::kSame)) == std::vector<double>{1, 2, 3});
  Tensor x4({1, 4}, {1, 2, 3, 4});
  Tensor k2({1, 1, 2}, {1, 1});
  CHECK(vals(conv1d(x4, k2, Tensor(), 1, Padding::kValid)) == std::vector<double>{3, 5, 7});
}

TEST_CASE("conv1d SAME pads left floor, right ceil") {
  // k=2, L=3, stride 1: total pad 1, all on the right.
  Tensor x({1, 3}, {1, 2, 3});
  Tensor k({1, 1, 2}, {1, 10});
  CHECK(vals(conv1d(x, k, Tensor(), 1, Padding::kSame)) == std::vector<double>{21, 32, 3});
  // k=3: one zero each side.
  Tensor k3({1, 1, 3}, {1, 10, 100});
  CHECK(vals(conv1d(x, k3, Tensor(), 1, Padding::kSame)) == std::vector<double>{210, 321, 32});
}

TEST_CASE("conv1d VALID rejects kernel longer than input") {
  Tensor x({1, 3}, {1, 2, 3});
  Tensor k({1, 1, 4}, {1, 1, 1, 1});
  CHECK_THROWS_AS(conv1d(x, k, Tensor(), 1, Padding::kValid), ShapeError);
}

TEST_CASE("conv1d SAME output length law") {
  for (std::size_t len = 1; len <= 64; ++len) {
    for (std::size_t stride : {1u, 2u}) {
      for (std::size_t k = 1; k <= 11; ++k) {
        Tensor x = Tensor::full({1, len}, 1.0);
        Tensor w = Tensor::full({1, 1, k}, 1.0);
        auto y = conv1d(x, w, Tensor(), stride, Padding::kSame);
        REQUIRE(y.dim(1) == (len + stride - 1) / stride);
      }
    }
  }
}

TEST_CASE("conv1d gradient (batched, strided, both paddings)") {
  std::mt19937_64 rng(3);
  for (auto pad : {Padding::kSame, Padding::kValid}) {
    for (std::size_t stride : {1u, 2u}) {
      Tensor x = random_tensor(rng, {2, 3, 11});
      Tensor k = random_tensor(rng, {4, 3, 4});
      Tensor b = random_tensor(rng, {4});
      auto report = check({{"x", x}, {"k", k}, {"b", b}},
                          [&] { return probe_loss(conv1d(x, k, b, stride, pad)); });
      CHECK(report.passed());
    }
  }
}

TEST_CASE("maxpool1d forward and tie-breaking") {
  Tensor x({1, 4}, {1, 3, 2, 5}, true);
  CHECK(vals(maxpool1d(x, 2, 2)) == std::vector<double>{3, 5});

  Tensor c({1, 4}, {7, 7, 7, 7}, true);
  Tape tape;
  {
    TapeScope scope(tape);
    auto y = maxpool1d(c, 2, 2);
    CHECK(vals(y) == std::vector<double>{7, 7});
    tape.backward(sum(y));
  }
  CHECK(c.grad() == std::vector<double>{1, 0, 1, 0});
  CHECK_THROWS_AS(maxpool1d(x, 5, 1), ShapeError);
}

TEST_CASE("maxpool1d subgradient away from ties") {
  std::mt19937_64 rng(4);
  Tensor x = random_tensor(rng, {2, 3, 12});
  CHECK(check({{"x", x}}, [&] { return probe_loss(maxpool1d(x, 3, 2)); }).passed());
}

TEST_CASE("batchnorm eval identity and constant-batch train") {
  auto st = BatchNormState::init(2);
  Tensor gamma = Tensor::full({2}, 1.0);
  Tensor beta = Tensor::zeros({2});
  Tensor x({3, 2}, {1, 2, 3, 4, 5, 6});
  auto y = batchnorm(x, gamma, beta, st, Mode::kEval);
  for (std::size_t i = 0; i < 6; ++i) CHECK(y[i] == doctest::Approx(x[i] / std::sqrt(1 + 1e-5)));

  Tensor shift({2}, {0.25, -3.0});
  Tensor cst({4, 2, 3}, std::vector<double>(24, 4.2));
  auto z = batchnorm(cst, gamma, shift, st, Mode::kTrain);
  for (std::size_t b = 0; b < 4; ++b) {
    for (std::size_t l = 0; l < 3; ++l) {
      CHECK(std::abs(z[(b * 2 + 0) * 3 + l] - 0.25) <= 1e-9);
      CHECK(std::abs(z[(b * 2 + 1) * 3 + l] + 3.0) <= 1e-9);
    }
  }
}

TEST_CASE("batchnorm running stats update with momentum 0.1") {
  auto st = BatchNormState::init(1);
  Tensor gamma = Tensor::full({1}, 1.0);
  Tensor beta = Tensor::zeros({1});
  Tensor x({2, 1}, {1.0, 3.0});
  batchnorm(x, gamma, beta, st, Mode::kTrain);
  CHECK(st.running_mean[0] == doctest::Approx(0.2));
  // unbiased batch variance = 2
  CHECK(st.running_var[0] == doctest::Approx(0.9 + 0.2));
}

TEST_CASE("batchnorm batch size 1 in train mode is identity") {
  log::set_level(log::Level::kError);
  auto st = BatchNormState::init(2);
  Tensor x({1, 2, 3}, {1, 2, 3, 4, 5, 6});
  auto y = batchnorm(x, Tensor::full({2}, 2.0), Tensor::full({2}, 1.0), st, Mode::kTrain);
  CHECK(vals(y) == vals(x));
  log::set_level(log::Level::kInfo);
}

TEST_CASE("batchnorm gradient (train and eval)") {
  std::mt19937_64 rng(5);
  Tensor x = random_tensor(rng, {4, 3, 5});
  Tensor gamma = random_tensor(rng, {3}, 0.5, 1.5);
  Tensor beta = random_tensor(rng, {3});
  for (auto mode : {Mode::kTrain, Mode::kEval}) {
    auto st = BatchNormState::init(3);
    auto report = check({{"x", x}, {"gamma", gamma}, {"beta", beta}},
                        [&] { return probe_loss(batchnorm(x, gamma, beta, st, mode)); }, 1e-5,
                        1e-5);
    CHECK(report.passed());
  }
}

TEST_CASE("activations") {
  Tensor x({3}, {-1, 0, 2});
  CHECK(vals(relu(x)) == std::vector<double>{0, 0, 2});
  CHECK(tanh(Tensor::scalar(0.0)).item() == 0.0);
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);

  Tensor kink({1}, {0.0}, true);
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum(relu(kink)));
  }
  CHECK(kink.grad()[0] == 0.0);

  std::mt19937_64 rng(6);
  Tensor r = random_tensor(rng, {7});
  for (auto& v : r.mutable_data()) v += v > 0 ? 0.1 : -0.1;  // stay away from the kink
  CHECK(check({{"x", r}}, [&] { return probe_loss(relu(r)); }).passed());
  CHECK(check({{"x", r}}, [&] { return probe_loss(tanh(r)); }).passed());
  CHECK(check({{"x", r}}, [&] { return probe_loss(sigmoid(r)); }).passed());
}

TEST_CASE("masked_softmax examples") {
  auto p = masked_softmax(Tensor::vector({0, 0, 0}));
  for (std::size_t i = 0; i < 3; ++i) CHECK(p[i] == doctest::Approx(1.0 / 3.0));
  auto q = masked_softmax(Tensor::vector({5, 1, 1}), {true, false, false});
  CHECK(vals(q) == std::vector<double>{1, 0, 0});
  CHECK_THROWS_AS(masked_softmax(Tensor::vector({1, 2}), {false, false}), DomainError);
  auto z = masked_softmax(Tensor::vector({1, 2}), {false, false}, EmptyMask::kZeros);
  CHECK(vals(z) == std::vector<double>{0, 0});
  CHECK_THROWS_AS(masked_softmax(Tensor::vector({1, 2}), {true}), ShapeError);
}

TEST_CASE("masked_softmax properties on random inputs") {
  std::mt19937_64 rng(7);
  std::bernoulli_distribution coin(0.6);
  std::normal_distribution<double> shift(0.0, 5.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 12;
    Tensor s = random_tensor(rng, {n}, -10, 10, false);
    std::vector<bool> mask(n);
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) any = any || (mask[i] = coin(rng));
    if (!any) mask[0] = true;
    auto p = masked_softmax(s, mask);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!mask[i]) REQUIRE(p[i] == 0.0);
      total += p[i];
    }
    REQUIRE(std::abs(total - 1.0) <= 1e-12);
    Tensor shifted = s.clone();
    const double c = shift(rng);
    for (auto& v : shifted.mutable_data()) v += c;
    auto p2 = masked_softmax(shifted, mask);
    for (std::size_t i = 0; i < n; ++i) REQUIRE(std::abs(p[i] - p2[i]) <= 1e-12);
  }
}

TEST_CASE("masked_softmax gradient") {
  std::mt19937_64 rng(8);
  Tensor s = random_tensor(rng, {6});
  CHECK(check({{"s", s}}, [&] { return probe_loss(masked_softmax(s)); }).passed());
  std::vector<bool> mask{true, false, true, true, false, true};
  CHECK(check({{"s", s}}, [&] { return probe_loss(masked_softmax(s, mask)); }).passed());
}

TEST_CASE("structural ops") {
  auto o = outer(Tensor::vector({1, 0}), Tensor::vector({2, 3}));
  CHECK(vals(o) == std::vector<double>{2, 3, 0, 0});
  std::vector<Tensor> parts{Tensor::vector({1}), Tensor::vector({2})};
  CHECK(vals(concat(parts, 0)) == std::vector<double>{1, 2});
  Tensor m({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(vals(transpose(m)) == std::vector<double>{1, 4, 2, 5, 3, 6});
  CHECK(vals(slice(m, 1, 1, 3)) == std::vector<double>{2, 3, 5, 6});
  CHECK(vals(mean_axis(m, 0)) == std::vector<double>{2.5, 3.5, 4.5});
  CHECK(vals(mean_axis(m, 1)) == std::vector<double>{2, 5});
  CHECK(vals(repeat_each(Tensor::vector({1, 2}), 3)) == std::vector<double>{1, 1, 1, 2, 2, 2});
  std::vector<Tensor> cols{Tensor({2, 1}, {1, 2}), Tensor({2, 2}, {3, 4, 5, 6})};
  CHECK(vals(concat(cols, 1)) == std::vector<double>{1, 3, 4, 2, 5, 6});
  CHECK_THROWS_AS(add(Tensor::vector({1}), Tensor::vector({1, 2})), ShapeError);
}

TEST_CASE("structural op gradients") {
  std::mt19937_64 rng(9);
  Tensor u = random_tensor(rng, {3});
  Tensor v = random_tensor(rng, {4});
  Tensor a = random_tensor(rng, {2, 3});
  Tensor b = random_tensor(rng, {2, 3});
  Tensor c = random_tensor(rng, {2, 2});
  std::vector<NamedTensor> ps{{"u", u}, {"v", v}, {"a", a}, {"b", b}, {"c", c}};
  CHECK(check(ps, [&] { return probe_loss(outer(u, v)); }).passed());
  CHECK(check(ps, [&] {
          std::vector<Tensor> p{a, c};
          return probe_loss(concat(p, 1));
        }).passed());
  CHECK(check(ps, [&] {
          std::vector<Tensor> p{a, b};
          return probe_loss(stack(p));
        }).passed());
  CHECK(check(ps, [&] { return probe_loss(mul(add(a, b), sub(a, b))); }).passed());
  CHECK(check(ps, [&] { return probe_loss(scale(transpose(a), 3.0)); }).passed());
  CHECK(check(ps, [&] { return probe_loss(mean_axis(slice(a, 1, 1, 3), 0)); }).passed());
  CHECK(check(ps, [&] { return mean(mul(u, repeat_each(Tensor::vector({1, 2, 3}), 1))); })
            .passed());
  CHECK(check(ps, [&] { return probe_loss(mul(repeat_each(u, 2), Tensor::vector({1, 2, 3, 4, 5, 6}))); })
            .passed());
}

TEST_CASE("cross_entropy examples and errors") {
  CHECK(cross_entropy(Tensor::vector({1, 0}), 0).item() == 0.0);
  CHECK(cross_entropy(Tensor::vector({0.5, 0.5}), 1).item() == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK(cross_entropy(Tensor::vector({1, 0}), 1).item() == doctest::Approx(-std::log(1e-12)));
  CHECK_THROWS_AS(cross_entropy(Tensor::vector({0.5, 0.5}), 2), IndexError);
}

TEST_CASE("softmax into cross entropy end-to-end gradient") {
  std::mt19937_64 rng(10);
  Tensor logits = random_tensor(rng, {5}, -2, 2);
  CHECK(check({{"logits", logits}}, [&] { return cross_entropy(masked_softmax(logits), 3); })
            .passed());
}

TEST_CASE("backward examples and contract") {
  Tensor x = Tensor::full({3}, 1.0, true);
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(x));
  }
  CHECK(x.grad() == std::vector<double>{1, 1, 1});

  Tensor y({2}, {1, 2}, true);
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(mul(y, y)));
  }
  CHECK(y.grad() == std::vector<double>{2, 4});

  Tape tape;
  TapeScope scope(tape);
  CHECK_THROWS_AS(tape.backward(mul(y, y)), ContractError);
}

TEST_CASE("tape records only when a tape is active and operands need grad") {
  Tensor a({2}, {1, 2}, true);
  Tensor c({2}, {1, 2}, false);
  Tape tape;
  {
    TapeScope scope(tape);
    add(c, c);
    CHECK(tape.size() == 0);
    add(a, c);
    CHECK(tape.size() == 1);
    {
      NoGradScope off;
      add(a, a);
    }
    CHECK(tape.size() == 1);
  }
  add(a, a);
  CHECK(tape.size() == 1);
}

TEST_CASE("tape determinism: repeated passes give bit-identical gradients") {
  std::mt19937_64 rng(11);
  Tensor w = random_tensor(rng, {4, 6});
  Tensor x = random_tensor(rng, {6}, -1, 1, false);
  auto run = [&] {
    w.zero_grad();
    Tape tape;
    TapeScope scope(tape);
    auto p = masked_softmax(tanh(matvec(w, x)));
    tape.backward(cross_entropy(p, 1));
    return w.grad();
  };
  CHECK(run() == run());
}

TEST_CASE("adam step examples") {
  Tensor p({1}, {0.5}, true);
  std::vector<NamedTensor> params{{"p", p}};
  AdamState st(AdamConfig{0.1, 0.9, 0.999, 1e-8}, params);
  p.mutable_grad()[0] = 0.0;
  adam_step(params, st);
  CHECK(p[0] == 0.5);

  Tensor q({1}, {0.0}, true);
  std::vector<NamedTensor> qs{{"q", q}};
  AdamState sq(AdamConfig{0.1, 0.9, 0.999, 1e-8}, qs);
  q.mutable_grad()[0] = 1.0;
  adam_step(qs, sq);
  // m_hat = 1, v_hat = 1 at t = 1
  CHECK(q[0] == doctest::Approx(-0.1).epsilon(1e-7));
  CHECK(sq.step() == 1);
  for (int i = 0; i < 50; ++i) adam_step(qs, sq);
  CHECK(q[0] < -1.0);
  CHECK(sq.step() == 51);

  q.mutable_grad()[0] = std::nan("");
  try {
    adam_step(qs, sq);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("q") != std::string::npos);
  }
}

TEST_CASE("finite_diff_grad examples") {
  auto g = finite_diff_grad([](const Tensor& t) { return sum(t).item(); },
                            Tensor::vector({0.3, -2.0, 7.0}), 1e-5);
  for (std::size_t i = 0; i < 3; ++i) CHECK(g[i] == doctest::Approx(1.0).epsilon(1e-9));
  auto sq = finite_diff_grad([](const Tensor& t) { return t[0] * t[0]; }, Tensor::scalar(3.0), 1e-5);
  CHECK(std::abs(sq[0] - 6.0) <= 1e-8);
}

TEST_CASE("gradient check detects an injected sign flip") {
  std::mt19937_64 rng(12);
  Tensor a = random_tensor(rng, {2, 3});
  Tensor b = random_tensor(rng, {3, 2});
  debug::inject_sign_flip("matmul");
  auto report = check({{"a", a}, {"b", b}}, [&] { return probe_loss(matmul(a, b)); });
  debug::clear_faults();
  CHECK_FALSE(report.passed());
  CHECK(report.entries[0].name == "a");
  CHECK_FALSE(report.entries[0].passed);
}

TEST_CASE("checkpoint round trip is bit exact") {
  std::mt19937_64 rng(13);
  std::vector<NamedTensor> ts{{"head.W_x", random_tensor(rng, {3, 4})},
                              {"attention.time.b", random_tensor(rng, {12})},
                              {"conv", random_tensor(rng, {2, 3, 5})}};
  ts[0].tensor.mutable_data()[0] = std::nextafter(1.0, 2.0);
  std::stringstream ss;
  io::write_tensors(ss, ts);
  auto back = io::read_tensors(ss);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].name == ts[i].name);
    CHECK(back[i].tensor.shape() == ts[i].tensor.shape());
    CHECK(vals(back[i].tensor) == vals(ts[i].tensor));
  }
}

TEST_CASE("checkpoint rejects truncation, bad magic, and version bumps") {
  std::vector<NamedTensor> ts{{"w", Tensor({2, 2}, {1, 2, 3, 4})}};
  std::stringstream ss;
  io::write_tensors(ss, ts);
  const std::string bytes = ss.str();
  for (std::size_t cut : {3ul, 10ul, 20ul, bytes.size() - 1}) {
    std::stringstream t(bytes.substr(0, cut));
    CHECK_THROWS_AS(io::read_tensors(t), FormatError);
  }
  std::string bad = bytes;
  bad[0] = 'X';
  std::stringstream b(bad);
  CHECK_THROWS_AS(io::read_tensors(b), FormatError);
  std::string bumped = bytes;
  bumped[8] = 2;
  std::stringstream v(bumped);
  CHECK_THROWS_AS(io::read_tensors(v), CompatibilityError);
}

TEST_CASE("checkpoint load rejects unknown names") {
  std::vector<NamedTensor> stored{{"a", Tensor::vector({1})}, {"zzz", Tensor::vector({2})}};
  std::vector<NamedTensor> params{{"a", Tensor::vector({0})}, {"b", Tensor::vector({0})}};
  try {
    io::assign_from(stored, params);
    FAIL("expected CompatibilityError");
  } catch (const CompatibilityError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("expected: a b") != std::string::npos);
    CHECK(msg.find("found: a zzz") != std::string::npos);
  }
}
