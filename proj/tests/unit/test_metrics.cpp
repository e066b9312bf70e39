#include <cmath>
#include <random>

#include "doctest.h"
#include "metric_oracles.hpp"
#include "raimkit/errors.hpp"
#include "raimkit/metrics.hpp"

using namespace raimkit;
using namespace raimkit::metrics;

TEST_CASE("auc_roc fixed cases") {
  std::vector<double> sep{0.1, 0.2, 0.8, 0.9};
  std::vector<int> y{0, 0, 1, 1};
  CHECK(auc_roc(sep, y) == 1.0);
  std::vector<double> flat{0.3, 0.3, 0.3, 0.3};
  CHECK(auc_roc(flat, y) == 0.5);
  std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  CHECK(auc_roc(s, y) == 0.75);
  std::vector<int> one_class{1, 1, 1, 1};
  CHECK_THROWS_AS(auc_roc(s, one_class), DomainError);
}

TEST_CASE("auc_pr fixed cases") {
  std::vector<double> s{0.9, 0.8, 0.2, 0.1};
  std::vector<int> perfect{1, 1, 0, 0};
  CHECK(auc_pr(s, perfect) == 1.0);
  std::vector<int> last{0, 0, 0, 1};
  CHECK(auc_pr(s, last) == 0.25);
  std::vector<int> none{0, 0, 0, 0};
  CHECK_THROWS_AS(auc_pr(s, none), DomainError);
}

TEST_CASE("accuracy boundary and extremes") {
  std::vector<double> s{0.5, 0.49, 0.9};
  std::vector<int> y{1, 0, 1};
  CHECK(accuracy(s, y) == 1.0);
  std::vector<int> wrong{0, 1, 0};
  CHECK(accuracy(s, wrong) == 0.0);
  std::vector<double> tie{0.3, 0.3, 0.1};
  CHECK(argmax(tie) == 0);
}

TEST_CASE("cohen kappa fixed cases") {
  std::vector<int> a{1, 2, 3, 1};
  CHECK(cohen_kappa(a, a).value == 1.0);
  std::vector<int> pred{1, 1, 2, 2};
  std::vector<int> truth{1, 2, 1, 2};
  CHECK(cohen_kappa(pred, truth).value == 0.0);

  // 2x2 counts [[20,5],[10,15]] as (truth, predicted) rows.
  std::vector<int> p2, t2;
  auto push = [&](int t, int p, int n) {
    for (int i = 0; i < n; ++i) {
      t2.push_back(t);
      p2.push_back(p);
    }
  };
  push(0, 0, 20);
  push(0, 1, 5);
  push(1, 0, 10);
  push(1, 1, 15);
  CHECK(cohen_kappa(p2, t2).value == doctest::Approx(0.4).epsilon(1e-15));

  std::vector<int> same{2, 2, 2};
  auto k = cohen_kappa(same, same);
  CHECK(k.value == 1.0);
  CHECK(k.degenerate_marginals);
}

TEST_CASE("confusion matrix") {
  std::vector<int> t{0, 1, 2, 8};
  auto cm = confusion_matrix(t, t, 9);
  for (std::size_t i = 0; i < 9; ++i) {
    for (std::size_t j = 0; j < 9; ++j) CHECK(cm.at(i, j) == (i == j && (i < 3 || i == 8) ? 1u : 0u));
  }
  CHECK(cm.total() == 4);
  auto empty = confusion_matrix(std::vector<int>{}, std::vector<int>{}, 9);
  CHECK(empty.total() == 0);
  std::vector<int> p{1, 1, 2, 0};
  auto c2 = confusion_matrix(p, t, 9);
  CHECK(c2.row_sum(0) == 1);
  CHECK(c2.at(8, 0) == 1);
  CHECK(c2.row_normalized()[8][0] == 1.0);
  CHECK(c2.to_csv().rfind("true\\pred,1,2", 0) == 0);
}

TEST_CASE("metrics agree with brute-force oracles on random instances") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> len(2, 30);
  std::uniform_int_distribution<int> grid(0, 6);  // coarse scores force ties
  std::uniform_int_distribution<int> cls(0, 8);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = len(rng);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) {
      s[i] = grid(rng) / 6.0;
      y[i] = grid(rng) % 2;
    }
    y[0] = 1;
    y[1] = 0;
    REQUIRE(std::abs(auc_roc(s, y) - oracle::auc_roc_pairs(s, y)) <= 1e-12);
    REQUIRE(std::abs(auc_pr(s, y) - oracle::average_precision_by_rank(s, y)) <= 1e-12);

    std::vector<int> p(n), t(n);
    for (int i = 0; i < n; ++i) {
      t[i] = cls(rng);
      p[i] = grid(rng) < 3 ? t[i] : cls(rng);
    }
    REQUIRE(std::abs(accuracy(p, t) - oracle::accuracy_count(p, t)) <= 1e-12);
    REQUIRE(std::abs(cohen_kappa(p, t).value - oracle::kappa_pairs(p, t)) <= 1e-12);
  }
}

TEST_CASE("auc_roc properties") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s(20);
    std::vector<int> y(20), flipped(20);
    for (int i = 0; i < 20; ++i) {
      s[i] = nd(rng);
      y[i] = i % 3 == 0;
      flipped[i] = 1 - y[i];
    }
    std::vector<double> mono(20);
    for (int i = 0; i < 20; ++i) mono[i] = std::exp(3.0 * s[i]) + 1.0;
    CHECK(auc_roc(s, y) == auc_roc(mono, y));
    CHECK(std::abs(auc_roc(s, y) + auc_roc(s, flipped) - 1.0) <= 1e-12);
  }
}

TEST_CASE("eval report json keys") {
  std::vector<double> s{0.1, 0.9};
  std::vector<int> y{0, 1};
  auto r = evaluate_binary(s, y);
  const auto js = r.to_json();
  CHECK(js.find("\"auc_roc\": 1.0") != std::string::npos);
  CHECK(js.find("\"auc_pr\"") != std::string::npos);
  std::vector<int> p{0, 1, 1}, t{0, 1, 2};
  auto m = evaluate_multiclass(p, t, 9);
  CHECK(m.confusion->row_sum(2) == 1);
  CHECK(m.to_json().find("\"kappa\"") != std::string::npos);
}
