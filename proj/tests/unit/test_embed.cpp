#include <random>

#include "doctest.h"
#include "raimkit/embed.hpp"
#include "raimkit/errors.hpp"
#include "test_util.hpp"

using namespace raimkit;
using namespace raimkit::embed;
using testutil::random_tensor;

namespace {

ChannelEmbedSpec small_cnn(const std::string& name, std::size_t length = 24) {
  return {name, EmbedKind::kCnn, length, {{5, 2, 1, 2}, {3, 2, 1, 1}}, true};
}

bool bit_equal(const ad::Tensor& a, const ad::Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

TEST_CASE("cnn embedder zero input yields output bias") {
  nn::ParamStore store(1);
  ChannelEmbedder emb(small_cnn("ecg"), 4, store, "e");
  for (auto& p : store.params()) {
    if (p.name == "e.out.b") {
      auto d = p.tensor.mutable_data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = 0.1 * static_cast<double>(i + 1);
    }
  }
  auto y = emb.forward(ad::Tensor::zeros({3, 24}), ad::Mode::kEval);
  REQUIRE(y.shape() == ad::Shape{3, 4});
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t i = 0; i < 4; ++i) CHECK(y[r * 4 + i] == doctest::Approx(0.1 * (i + 1)).epsilon(1e-15));
  }
}

TEST_CASE("paper preset produces d_emb 128") {
  nn::ParamStore store(2);
  ChannelEmbedSpec spec{"ecg", EmbedKind::kCnn, 400, paper_cnn_layers(4), true};
  ChannelEmbedder emb(spec, 128, store, "p");
  std::mt19937_64 rng(3);
  auto y = emb.forward(random_tensor(rng, {2, 400}, -1, 1, false), ad::Mode::kEval);
  CHECK(y.shape() == ad::Shape{2, 128});
  const auto& layers = spec.layers;
  for (std::size_t i = 1; i < layers.size(); ++i) CHECK(layers[i].kernel <= layers[i - 1].kernel);
  CHECK(layers.front().kernel == 10);
  CHECK(layers.back().kernel == 3);
}

TEST_CASE("segment shorter than first kernel is a shape error naming the layer") {
  nn::ParamStore store(4);
  ChannelEmbedSpec spec{"ecg", EmbedKind::kCnn, 4, {{10, 2, 1, 1}}, true};
  try {
    ChannelEmbedder emb(spec, 4, store, "embed.ecg");
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("embed.ecg.conv0") != std::string::npos);
  }
  nn::ParamStore store2(4);
  ChannelEmbedSpec pooled{"ecg", EmbedKind::kCnn, 12, {{3, 2, 1, 4}, {3, 2, 1, 4}}, true};
  try {
    ChannelEmbedder emb(pooled, 4, store2, "embed.ecg");
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("embed.ecg.conv1") != std::string::npos);
  }
}

TEST_CASE("vital embedder: linear and identity") {
  nn::ParamStore store(5);
  ChannelEmbedder lin({"hr", EmbedKind::kLinear, 60, {}, false}, 8, store, "v");
  auto y = lin.forward(ad::Tensor::zeros({2, 60}), ad::Mode::kEval);
  CHECK(y.shape() == ad::Shape{2, 8});
  for (double v : y.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(lin.forward(ad::Tensor::zeros({2, 59}), ad::Mode::kEval), ShapeError);

  ChannelEmbedder id({"hr", EmbedKind::kIdentity, 60, {}, false}, 60, store, "i");
  std::mt19937_64 rng(6);
  auto x = random_tensor(rng, {2, 60}, -1, 1, false);
  CHECK(bit_equal(id.forward(x, ad::Mode::kEval), x));
  CHECK_THROWS_AS(ChannelEmbedder({"hr", EmbedKind::kIdentity, 60, {}, false}, 8, store, "j"),
                  ConfigError);
}

TEST_CASE("embedder concatenates channel blocks in order") {
  EmbedderConfig cfg{4, {small_cnn("ecg"), {"hr", EmbedKind::kLinear, 6, {}, false}}};
  nn::ParamStore store(7);
  Embedder emb(cfg, store);
  std::mt19937_64 rng(8);
  std::vector<ad::Tensor> segs = {random_tensor(rng, {3, 24}, -1, 1, false),
                                  random_tensor(rng, {3, 6}, -1, 1, false)};
  auto a = emb.forward(segs, ad::Mode::kEval);
  CHECK(a.shape() == ad::Shape{3, 8});

  // block 0 depends only on channel 0
  auto perturbed = segs;
  perturbed[1] = random_tensor(rng, {3, 6}, -1, 1, false);
  auto b = emb.forward(perturbed, ad::Mode::kEval);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t i = 0; i < 4; ++i) CHECK(a[r * 8 + i] == b[r * 8 + i]);
  }
  // eval determinism
  CHECK(bit_equal(a, emb.forward(segs, ad::Mode::kEval)));

  std::vector<ad::Tensor> wrong = {segs[0]};
  CHECK_THROWS_AS(emb.forward(wrong, ad::Mode::kEval), ConfigError);
}

TEST_CASE("permuting channel order permutes output blocks") {
  auto ecg = small_cnn("ecg");
  ChannelEmbedSpec hr{"hr", EmbedKind::kLinear, 6, {}, false};
  std::mt19937_64 rng(9);
  std::vector<ad::Tensor> segs = {random_tensor(rng, {2, 24}, -1, 1, false),
                                  random_tensor(rng, {2, 6}, -1, 1, false)};
  nn::ParamStore s1(10), s2(10);
  Embedder fwd({4, {ecg, hr}}, s1);
  ChannelEmbedder e_ecg(ecg, 4, s2, "x.ecg");
  ChannelEmbedder e_hr(hr, 4, s2, "x.hr");
  // same seed and registration order -> same weights for the ecg block
  auto a = fwd.forward(segs, ad::Mode::kEval);
  auto ya = e_ecg.forward(segs[0], ad::Mode::kEval);
  auto yb = e_hr.forward(segs[1], ad::Mode::kEval);

  nn::ParamStore s3(10);
  Embedder rev({4, {hr, ecg}}, s3);
  // copy weights by channel name so the reversed embedder matches
  for (auto& p : s3.params()) {
    for (const auto& q : s1.params()) {
      if (p.name == q.name) std::copy(q.tensor.data().begin(), q.tensor.data().end(), p.tensor.mutable_data().begin());
    }
  }
  std::vector<ad::Tensor> rsegs = {segs[1], segs[0]};
  auto r = rev.forward(rsegs, ad::Mode::kEval);
  for (std::size_t row = 0; row < 2; ++row) {
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(r[row * 8 + i] == a[row * 8 + 4 + i]);
      CHECK(r[row * 8 + 4 + i] == a[row * 8 + i]);
      CHECK(ya[row * 4 + i] == a[row * 8 + i]);
    }
  }
  (void)yb;
}

TEST_CASE("embedder gradients match finite differences") {
  EmbedderConfig cfg{4, {small_cnn("ecg", 16), {"hr", EmbedKind::kLinear, 6, {}, false}}};
  nn::ParamStore store(11);
  Embedder emb(cfg, store);
  std::mt19937_64 rng(12);
  std::vector<ad::Tensor> segs = {random_tensor(rng, {3, 16}, -1, 1, false),
                                  random_tensor(rng, {3, 6}, -1, 1, false)};
  for (auto mode : {ad::Mode::kTrain, ad::Mode::kEval}) {
    auto report = testutil::check(store.params(), [&] {
      return testutil::probe_loss(emb.forward(segs, mode));
    }, 1e-6, 1e-4);
    for (const auto& e : report.entries) {
      INFO(e.name << " err " << e.max_error);
      CHECK(e.passed);
    }
  }
}

TEST_CASE("param store names are unique and buffers tracked") {
  nn::ParamStore store(13);
  store.uniform("a", {2}, 2);
  CHECK_THROWS_AS(store.constant("a", {2}, 0.0), ContractError);
  store.batchnorm("bn", 3);
  CHECK(store.buffers().size() == 2);
  CHECK(store.state().size() == 3);
  CHECK(store.parameter_count() == 2);
}
