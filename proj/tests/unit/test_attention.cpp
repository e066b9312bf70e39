#include <random>

#include "attention_properties.hpp"
#include "doctest.h"
#include "raimkit/errors.hpp"
#include "test_util.hpp"

using namespace raimkit;
using namespace raimkit::attention;
using testutil::random_tensor;

namespace {

void zero_all(nn::ParamStore& store) {
  for (auto& p : store.params()) {
    for (auto& v : p.tensor.mutable_data()) v = 0.0;
  }
}

std::vector<std::uint8_t> marks(std::size_t n, std::initializer_list<std::size_t> ones) {
  std::vector<std::uint8_t> row(n, 0);
  for (auto j : ones) row[j - 1] = 1;
  return row;
}

}  // namespace

TEST_CASE("time energy and weights with zero parameters") {
  nn::ParamStore store(1);
  auto tp = make_time_params(store, "t", 12, 3, 4, false);
  zero_all(store);
  std::mt19937_64 rng(2);
  auto steps = random_tensor(rng, {5, 4}, -3, 3, false);
  auto h = random_tensor(rng, {3}, -1, 1, false);
  auto s = time_energy(h, steps, tp);
  CHECK(s.shape() == ad::Shape{5});
  for (double v : s.data()) CHECK(v == 0.0);
  auto a = time_weights(s);
  for (double v : a.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("time energy is bounded and rejects oversize windows") {
  nn::ParamStore store(3);
  auto tp = make_time_params(store, "t", 4, 3, 2, false);
  std::mt19937_64 rng(4);
  auto moderate = time_energy(random_tensor(rng, {3}, -2, 2, false),
                              random_tensor(rng, {4, 2}, -2, 2, false), tp);
  for (double v : moderate.data()) {
    CHECK(v > -1.0);
    CHECK(v < 1.0);
  }
  // large inputs saturate to +-1 in double precision but never exceed it
  auto huge = time_energy(random_tensor(rng, {3}, -50, 50, false),
                          random_tensor(rng, {4, 2}, -50, 50, false), tp);
  for (double v : huge.data()) CHECK(std::abs(v) <= 1.0);
  CHECK_THROWS_AS(time_energy(ad::Tensor::zeros({3}), ad::Tensor::zeros({5, 2}), tp), ShapeError);
}

TEST_CASE("channel weights: zero params uniform, single channel") {
  nn::ParamStore store(5);
  auto cp = make_channel_params(store, "c", 3, 12, 2, 2);
  zero_all(store);
  std::mt19937_64 rng(6);
  auto beta = channel_weights(random_tensor(rng, {2}, -1, 1, false), random_tensor(rng, {7, 6}, -1, 1, false), cp);
  for (double v : beta.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  nn::ParamStore s1(7);
  auto one = make_channel_params(s1, "c", 1, 12, 2, 3);
  auto b1 = channel_weights(random_tensor(rng, {2}, -1, 1, false), random_tensor(rng, {4, 3}, -1, 1, false), one);
  CHECK(b1.numel() == 1);
  CHECK(b1[0] == 1.0);
}

TEST_CASE("channel_vectors gathers per-channel time concatenations") {
  // steps rows: [c0e0 c0e1 c1e0 c1e1]
  ad::Tensor steps({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  auto C = channel_vectors(steps, 2);
  CHECK(C.shape() == ad::Shape{2, 4});
  CHECK(std::vector<double>(C.data().begin(), C.data().end()) ==
        std::vector<double>{1, 2, 5, 6, 3, 4, 7, 8});
  CHECK_THROWS_AS(channel_vectors(steps, 3), ShapeError);
}

TEST_CASE("joint context examples") {
  ad::Tensor steps({3, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  auto alpha = ad::Tensor::vector({0, 1, 0});
  auto uniform = ad::Tensor::vector({0.5, 0.5});
  auto jc = joint_context(alpha, uniform, steps);
  CHECK(std::vector<double>(jc.Z.data().begin(), jc.Z.data().end()) ==
        std::vector<double>{2.5, 3.0, 3.5, 4.0});

  auto onehot = ad::Tensor::vector({0, 1});
  auto a2 = ad::Tensor::vector({0.2, 0.3, 0.5});
  auto jc2 = joint_context(a2, onehot, steps);
  CHECK(jc2.Z[0] == 0.0);
  CHECK(jc2.Z[1] == 0.0);
  CHECK(jc2.Z[2] != 0.0);
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t j = 0; j < 3; ++j) CHECK(jc2.A[k * 3 + j] == onehot[k] * a2[j]);
  }
  auto plain = joint_context(a2, ad::Tensor{}, steps);
  CHECK(!plain.A.defined());
  CHECK(plain.Z[0] == doctest::Approx(0.2 * 1 + 0.3 * 5 + 0.5 * 9));
}

TEST_CASE("active set examples") {
  CHECK(active_set(marks(12, {5}), 2) == std::vector<std::size_t>{4, 5, 6});
  CHECK(active_set(marks(12, {1}), 4) == std::vector<std::size_t>{1, 2, 3});
  CHECK(active_set(marks(12, {}), 2).empty());
  CHECK(active_set(marks(12, {3, 7}), 2) == std::vector<std::size_t>{2, 3, 4, 6, 7, 8});
  CHECK(active_set(marks(12, {12}), 2) == std::vector<std::size_t>{11, 12});
  CHECK(active_set(marks(12, {5}), 0) == std::vector<std::size_t>{5});
  CHECK(last_marked(marks(12, {7})) == 7u);
  CHECK(last_marked(marks(12, {3, 7})) == 7u);
  CHECK(!last_marked(marks(12, {})).has_value());
}

TEST_CASE("guided context examples") {
  nn::ParamStore store(8);
  auto gp = make_time_params(store, "g", 12, 3, 4, false);
  auto ip = make_time_params(store, "i", 12, 3, 4, true);
  std::mt19937_64 rng(9);
  auto steps = random_tensor(rng, {12, 4}, -1, 1, false);
  auto h = random_tensor(rng, {3}, -1, 1, false);
  auto beta = ad::Tensor::vector({0.25, 0.75});

  auto single = guided_context(h, steps, marks(12, {5}), 0, beta, gp);
  CHECK(single.active == std::vector<std::size_t>{5});
  for (std::size_t j = 0; j < 12; ++j) CHECK(single.gamma[j] == (j == 4 ? 1.0 : 0.0));
  for (std::size_t c = 0; c < 4; ++c) CHECK(single.Z[c] == doctest::Approx(beta[c / 2] * steps[4 * 4 + c]));

  auto none = guided_context(h, steps, marks(12, {}), 2, beta, gp);
  CHECK(none.empty);
  for (double v : none.Z.data()) CHECK(v == 0.0);
  for (double v : none.gamma.data()) CHECK(v == 0.0);

  auto fallback = guided_context(h, steps, marks(12, {}), 2, beta, gp, EmptyPolicy::kUnguided);
  CHECK(attention_props::sum_of(fallback.gamma) == doctest::Approx(1.0));

  auto literal = guided_context(h, steps, marks(12, {5}), 0, ad::Tensor{}, gp);
  for (std::size_t c = 0; c < 4; ++c) CHECK(literal.Z[c] == steps[4 * 4 + c]);

  auto iv = intervention_guided_context(h, ad::Tensor::zeros({3}), steps, marks(12, {}), 2, beta, ip);
  CHECK(iv.empty);
  for (double v : iv.Z.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(guided_context(h, steps, marks(12, {5}), 2, beta, ip), ContractError);
}

TEST_CASE("attention properties on random configurations") {
  auto st = attention_props::run(300, 2024);
  CHECK(st.trials == 300);
  CHECK(st.alpha_sum_err <= 1e-12);
  CHECK(st.beta_sum_err <= 1e-12);
  CHECK(st.minor_err <= 1e-12);
  CHECK(st.gamma_sum_err <= 1e-12);
  CHECK(st.gamma_outside == 0);
  CHECK(st.mask_leaks == 0);
  CHECK(st.shift_err <= 1e-12);
  CHECK(st.containment_violations == 0);
}

TEST_CASE("attention gradients match finite differences") {
  nn::ParamStore store(10);
  const std::size_t W = 5, K = 2, d = 2, H = 3;
  auto tp = make_time_params(store, "time", W, H, K * d, false);
  auto cp = make_channel_params(store, "chan", K, W, H, d);
  auto gp = make_time_params(store, "lab", W, H, K * d, false);
  auto ip = make_time_params(store, "int", W, H, K * d, true);
  std::mt19937_64 rng(11);
  auto steps = random_tensor(rng, {4, K * d}, -1, 1, true);
  auto h = random_tensor(rng, {H}, -1, 1, true);
  auto hm = random_tensor(rng, {H}, -1, 1, true);
  auto params = store.params();
  params.push_back({"steps", steps});
  params.push_back({"h", h});
  params.push_back({"h_m", hm});
  auto row = marks(4, {2});
  auto report = testutil::check(params, [&] {
    auto alpha = time_weights(time_energy(h, steps, tp));
    auto beta = channel_weights(h, steps, cp);
    auto jc = joint_context(alpha, beta, steps);
    auto g1 = guided_context(h, steps, row, 2, beta, gp);
    auto g2 = intervention_guided_context(h, hm, steps, marks(4, {3}), 2, beta, ip);
    std::vector<ad::Tensor> parts = {jc.Z, ad::reshape(jc.A, {K * 4}), g1.Z, g2.Z, g1.gamma, g2.gamma};
    return testutil::probe_loss(ad::concat(parts));
  });
  for (const auto& e : report.entries) {
    INFO(e.name << " err " << e.max_error);
    CHECK(e.passed);
  }
}
