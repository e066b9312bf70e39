#include <cmath>
#include <filesystem>
#include <random>

#include "attention_properties.hpp"
#include "doctest.h"
#include "raimkit/errors.hpp"
#include "raimkit/model.hpp"
#include "test_util.hpp"

using namespace raimkit;
using namespace raimkit::model;
using attention_props::bit_equal;
using attention_props::sum_of;
using testutil::random_tensor;

namespace {

constexpr std::size_t kFeat = 3;
constexpr std::size_t kBase = 2;

ModelConfig tiny_config(Variant v, Task task = Task::kDecompensation) {
  ModelConfig c;
  c.variant = v;
  c.task = task;
  c.window = 4;
  c.hidden = 8;
  c.embedder.d_emb = 4;
  embed::ChannelEmbedSpec wave{"ecg", embed::EmbedKind::kCnn, 8, {{3, 2, 1, 2}}, true};
  embed::ChannelEmbedSpec vital{"hr", embed::EmbedKind::kLinear, 3, {}, false};
  c.embedder.channels = {wave, vital};
  c.feature_width = kFeat;
  c.baseline_width = kBase;
  return c;
}

ingest::Sample random_sample(std::mt19937_64& rng, std::size_t T, std::vector<std::size_t> labs = {},
                             std::vector<std::size_t> ints = {}) {
  ingest::Sample s;
  s.episode_id = "ep";
  s.patient_id = "p";
  s.channels = {random_tensor(rng, {T, 8}, -1, 1, false), random_tensor(rng, {T, 3}, -1, 1, false)};
  s.features = random_tensor(rng, {T, kFeat}, -1, 1, false);
  s.baseline = random_tensor(rng, {kBase}, -1, 1, false);
  s.lab_steps.assign(T, 0);
  s.intervention_steps.assign(T, 0);
  for (auto t : labs) s.lab_steps[t - 1] = 1;
  for (auto t : ints) s.intervention_steps[t - 1] = 1;
  s.decompensation = static_cast<int>(rng() % 2);
  s.los_class = static_cast<int>(1 + rng() % 9);
  s.remaining_days = 2.5;
  return s;
}

void zero_head(Model& m) {
  for (auto& p : m.store().params()) {
    if (p.name.rfind("head.", 0) == 0) {
      for (auto& v : p.tensor.mutable_data()) v = 0.0;
    }
  }
}

std::vector<std::vector<double>> values_of(const nn::ParamStore& store) {
  std::vector<std::vector<double>> out;
  for (const auto& p : store.params()) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

}  // namespace

TEST_CASE("variant names round trip") {
  for (auto v : all_variants()) CHECK(parse_variant(variant_name(v)) == v);
  CHECK(parse_variant("RAIM-3") == Variant::kRaim3);
  CHECK_THROWS_AS(parse_variant("raim4"), ConfigError);
  CHECK(parse_task("los") == Task::kLengthOfStay);
  CHECK_THROWS_AS(parse_task("mortality"), ConfigError);
}

TEST_CASE("lstm: zero input and state stay zero") {
  nn::ParamStore store(1);
  auto cell = make_lstm_cell(store, "l", 5, 4);
  auto st = lstm_step(ad::Tensor::zeros({5}), zero_state(4), cell);
  for (double v : st.h.data()) CHECK(v == 0.0);
  for (double v : st.c.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(lstm_step(ad::Tensor::zeros({4}), zero_state(4), cell), ShapeError);
}

TEST_CASE("lstm: three-step gradients") {
  nn::ParamStore store(2);
  auto cell = make_lstm_cell(store, "l", 3, 4);
  std::mt19937_64 rng(3);
  std::vector<ad::Tensor> xs;
  for (int i = 0; i < 3; ++i) xs.push_back(random_tensor(rng, {3}));
  auto params = store.params();
  for (int i = 0; i < 3; ++i) params.push_back({"x" + std::to_string(i), xs[i]});
  auto report = testutil::check(params, [&] {
    LstmState st = zero_state(4);
    for (const auto& x : xs) st = lstm_step(x, st, cell);
    std::vector<ad::Tensor> parts = {st.h, st.c};
    return testutil::probe_loss(ad::concat(parts));
  });
  CHECK(report.passed());
}

TEST_CASE("encoder input widths per variant") {
  auto c = tiny_config(Variant::kRaim3);
  CHECK(c.encoder_input_width() == 2 * 2 * 4);
  c.variant = Variant::kRaim2;
  CHECK(c.encoder_input_width() == 8);
  c.concat_input = true;
  CHECK(c.encoder_input_width() == 16);
  c.variant = Variant::kCnnRnn;
  CHECK(c.encoder_input_width() == 8);
  c.n_lab = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("zero head gives uniform predictions and log-class losses") {
  std::mt19937_64 rng(4);
  auto s = random_sample(rng, 12, {2}, {5});
  const ingest::Sample* batch[] = {&s};
  for (auto v : all_variants()) {
    INFO(variant_name(v));
    Model dm(tiny_config(v), 5);
    zero_head(dm);
    auto out = dm.forward(batch, ad::Mode::kEval);
    for (const auto& p : out[0].predictions) {
      CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-15));
      CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-15));
    }
    CHECK(dm.loss(batch, ad::Mode::kEval).item() == doctest::Approx(12 * std::log(2.0)).epsilon(1e-12));

    Model lm(tiny_config(v, Task::kLengthOfStay), 5);
    zero_head(lm);
    auto lo = lm.forward(batch, ad::Mode::kEval);
    CHECK(lo[0].predictions.back().numel() == 9);
    for (double q : lo[0].predictions.back().data()) CHECK(q == doctest::Approx(1.0 / 9.0).epsilon(1e-14));
    CHECK(lm.loss(batch, ad::Mode::kEval).item() == doctest::Approx(12 * std::log(9.0)).epsilon(1e-12));
  }
}

TEST_CASE("predictions are distributions and traces match the variant") {
  std::mt19937_64 rng(6);
  auto s = random_sample(rng, 7, {1, 6}, {3});
  const ingest::Sample* batch[] = {&s};
  for (auto v : all_variants()) {
    INFO(variant_name(v));
    Model m(tiny_config(v, Task::kLengthOfStay), 7);
    auto out = m.forward(batch, ad::Mode::kEval, true);
    CHECK(out[0].predictions.size() == 7);
    for (const auto& p : out[0].predictions) CHECK(sum_of(p) == doctest::Approx(1.0).epsilon(1e-12));
    if (v == Variant::kCnnOnly || v == Variant::kCnnRnn) {
      CHECK(out[0].trace.empty());
      continue;
    }
    REQUIRE(out[0].trace.size() == 7);
    const auto& last = out[0].trace.back();
    CHECK(last.alpha.defined() == (v == Variant::kCnnAttRnn || v == Variant::kRaim0));
    CHECK(last.gamma_lab.defined() == uses_lab_guidance(v));
    CHECK(last.gamma_int.defined() == uses_intervention_guidance(v));
    if (last.alpha.defined()) CHECK(last.alpha.numel() == 4);
    if (uses_intervention_guidance(v)) {
      // step 7 covers steps 4..7; intervention at 3 is out of view
      CHECK(!last.m.has_value());
      CHECK(out[0].trace[4].m == 2u);  // step 5 covers 2..5, step 3 is column 2
      CHECK(out[0].trace[4].active_int == std::vector<std::size_t>{1, 2, 3});
    }
  }
}

TEST_CASE("raim2 without interventions ignores the signals") {
  std::mt19937_64 rng(8);
  auto s = random_sample(rng, 6, {2}, {});
  auto t = s;
  t.channels = {random_tensor(rng, {6, 8}, -1, 1, false), random_tensor(rng, {6, 3}, -1, 1, false)};
  Model m(tiny_config(Variant::kRaim2), 9);
  const ingest::Sample* a[] = {&s};
  const ingest::Sample* b[] = {&t};
  auto oa = m.forward(a, ad::Mode::kEval);
  auto ob = m.forward(b, ad::Mode::kEval);
  for (std::size_t k = 0; k < 6; ++k) CHECK(bit_equal(oa[0].predictions[k], ob[0].predictions[k]));
}

TEST_CASE("unidirectional predictions are causal") {
  std::mt19937_64 rng(10);
  for (auto v : all_variants()) {
    INFO(variant_name(v));
    auto s = random_sample(rng, 8, {2, 7}, {3, 6});
    auto t = s;
    // rewrite everything after step 4
    for (std::size_t k = 0; k < 2; ++k) {
      auto d = t.channels[k].clone();
      for (std::size_t i = 4 * d.dim(1); i < d.numel(); ++i) d.mutable_data()[i] += 3.0;
      t.channels[k] = d;
    }
    auto f = t.features.clone();
    for (std::size_t i = 4 * kFeat; i < f.numel(); ++i) f.mutable_data()[i] -= 2.0;
    t.features = f;
    t.lab_steps[4] = 1;
    t.intervention_steps[5] = 0;
    t.intervention_steps[4] = 1;
    Model m(tiny_config(v), 11);
    const ingest::Sample* a[] = {&s};
    const ingest::Sample* b[] = {&t};
    auto oa = m.forward(a, ad::Mode::kEval);
    auto ob = m.forward(b, ad::Mode::kEval);
    for (std::size_t k = 0; k < 4; ++k) CHECK(bit_equal(oa[0].predictions[k], ob[0].predictions[k]));
    CHECK(!bit_equal(oa[0].predictions[7], ob[0].predictions[7]));
  }
}

TEST_CASE("batched forward equals one-at-a-time in eval mode") {
  std::mt19937_64 rng(12);
  auto s1 = random_sample(rng, 5, {1}, {2});
  auto s2 = random_sample(rng, 9, {4}, {8});
  Model m(tiny_config(Variant::kRaim3), 13);
  const ingest::Sample* both[] = {&s1, &s2};
  auto ob = m.forward(both, ad::Mode::kEval);
  const ingest::Sample* one[] = {&s2};
  auto o2 = m.forward(one, ad::Mode::kEval);
  for (std::size_t k = 0; k < 9; ++k) {
    CHECK(attention_props::max_abs_diff(ob[1].predictions[k], o2[0].predictions[k]) < 1e-14);
  }
}

TEST_CASE("bidirectional and stacked encoders") {
  std::mt19937_64 rng(14);
  auto s = random_sample(rng, 6, {2}, {4});
  auto c = tiny_config(Variant::kRaim3);
  c.bidirectional = true;
  c.layers = 2;
  Model m(c, 15);
  const ingest::Sample* batch[] = {&s};
  auto out = m.forward(batch, ad::Mode::kEval);
  CHECK(out[0].hidden.front().numel() == 16);
  for (const auto& p : out[0].predictions) CHECK(sum_of(p) == doctest::Approx(1.0));
}

TEST_CASE("end-to-end gradients of a tiny raim3") {
  std::mt19937_64 rng(16);
  auto s1 = random_sample(rng, 6, {2, 5}, {3});
  auto s2 = random_sample(rng, 3, {}, {1});
  for (bool bidir : {false, true}) {
    auto c = tiny_config(Variant::kRaim3);
    c.bidirectional = bidir;
    Model m(c, 17);
    const ingest::Sample* batch[] = {&s1, &s2};
    auto params = m.store().params();
    auto report = testutil::check(params, [&] { return m.loss(batch, ad::Mode::kTrain); }, 1e-6, 1e-4);
    for (const auto& e : report.entries) {
      INFO(e.name << " err " << e.max_error);
      CHECK(e.passed);
    }
  }
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  std::mt19937_64 rng(18);
  std::vector<ingest::Sample> samples;
  for (int i = 0; i < 6; ++i) samples.push_back(random_sample(rng, 5, {2}, {3}));
  std::vector<std::size_t> idx = {0, 1, 2, 3, 4, 5};
  Model m(tiny_config(Variant::kRaim3), 19);
  auto before = values_of(m.store());
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 4;
  tc.learning_rate = 0.0;
  train(m, samples, idx, {}, tc);
  CHECK(values_of(m.store()) == before);
}

TEST_CASE("training is deterministic and reduces loss") {
  std::mt19937_64 rng(20);
  std::vector<ingest::Sample> samples;
  for (int i = 0; i < 16; ++i) {
    auto s = random_sample(rng, 5, {2}, {3});
    s.decompensation = i % 2;
    // signal the label in the chart features
    auto f = s.features.clone();
    for (std::size_t t = 0; t < 5; ++t) f.mutable_data()[t * kFeat] = s.decompensation ? 1.0 : -1.0;
    s.features = f;
    samples.push_back(s);
  }
  std::vector<std::size_t> train_idx(12), val_idx = {12, 13, 14, 15};
  for (std::size_t i = 0; i < 12; ++i) train_idx[i] = i;
  TrainConfig tc;
  tc.epochs = 15;
  tc.batch_size = 4;
  tc.learning_rate = 0.02;
  Model a(tiny_config(Variant::kRaim3), 21);
  Model b(tiny_config(Variant::kRaim3), 21);
  auto ra = train(a, samples, train_idx, val_idx, tc);
  auto rb = train(b, samples, train_idx, val_idx, tc);
  CHECK(values_of(a.store()) == values_of(b.store()));
  CHECK(ra.train_loss == rb.train_loss);
  CHECK(ra.train_loss.back() < ra.train_loss.front());
  CHECK(ra.validation_loss.size() == ra.train_loss.size());

  auto preds = predict_all(a, samples, val_idx, 2);
  auto serial = predict_all(a, samples, val_idx, 1);
  CHECK(preds == serial);
  CHECK(preds[0].size() == 1);
}

TEST_CASE("forward rejects mismatched samples") {
  std::mt19937_64 rng(22);
  auto s = random_sample(rng, 4);
  s.channels.pop_back();
  Model m(tiny_config(Variant::kCnnRnn), 23);
  const ingest::Sample* batch[] = {&s};
  CHECK_THROWS_AS(m.forward(batch, ad::Mode::kEval), CompatibilityError);
  auto t = random_sample(rng, 4);
  t.features = ad::Tensor::zeros({4, 2});
  const ingest::Sample* b2[] = {&t};
  CHECK_THROWS_AS(m.forward(b2, ad::Mode::kEval), ShapeError);
}

TEST_CASE("model checkpoint round trip") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "raimkit_model_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::mt19937_64 rng(24);
  auto s = random_sample(rng, 6, {2}, {4});
  const ingest::Sample* batch[] = {&s};
  auto cfg = tiny_config(Variant::kRaim3, Task::kLengthOfStay);
  cfg.concat_input = true;
  Model m(cfg, 25);
  // move the batchnorm buffers away from their initial values
  m.forward(batch, ad::Mode::kTrain);
  save_model(m, dir / "m.ckpt", R"({"note": "x"})");
  auto loaded = load_model(dir / "m.ckpt");
  CHECK(model_config_to_json(loaded.model->config()) == model_config_to_json(cfg));
  CHECK(loaded.context_json == R"({"note":"x"})");
  auto a = m.forward(batch, ad::Mode::kEval);
  auto b = loaded.model->forward(batch, ad::Mode::kEval);
  for (std::size_t k = 0; k < 6; ++k) CHECK(bit_equal(a[0].predictions[k], b[0].predictions[k]));

  fs::copy_file(dir / "m.ckpt", dir / "bare.ckpt");
  CHECK_THROWS_AS(load_model(dir / "bare.ckpt"), CompatibilityError);

  fs::resize_file(dir / "m.ckpt", fs::file_size(dir / "m.ckpt") - 5);
  CHECK_THROWS_AS(load_model(dir / "m.ckpt"), FormatError);

  save_model(Model(tiny_config(Variant::kRaim2), 1), dir / "other.ckpt");
  fs::copy_file(sidecar_path(dir / "other.ckpt"), sidecar_path(dir / "bare.ckpt"));
  CHECK_THROWS_AS(load_model(dir / "bare.ckpt"), CompatibilityError);  // tensor names differ
  fs::remove_all(dir);
}
