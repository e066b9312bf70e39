#include "raimkit/verify.hpp"

#include <functional>
#include <random>

#include "json.hpp"
#include "raimkit/attention.hpp"
#include "raimkit/embed.hpp"
#include "raimkit/gradcheck.hpp"

namespace raimkit::verify {

using ad::Tensor;

namespace {

Tensor rnd(std::mt19937_64& rng, ad::Shape shape, bool grad = true, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(ad::numel_of(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), grad);
}

// Contracts every output coordinate with a fixed random weight.
Tensor probe(const Tensor& y) {
  std::mt19937_64 rng(99);
  return ad::sum(ad::mul(y, rnd(rng, y.shape(), false)));
}

}  // namespace

bool SuiteReport::passed() const {
  for (const auto& e : entries) {
    if (!e.passed) return false;
  }
  return !entries.empty();
}

std::string SuiteReport::to_json() const {
  nlohmann::json j;
  j["tolerance"] = tolerance;
  j["passed"] = passed();
  j["checks"] = nlohmann::json::array();
  for (const auto& e : entries) {
    j["checks"].push_back({{"name", e.name}, {"max_error", e.max_error}, {"passed", e.passed},
                           {"failing", e.failing}});
  }
  return j.dump(2);
}

model::ModelConfig tiny_model_config(model::Variant variant) {
  model::ModelConfig c;
  c.variant = variant;
  c.task = model::Task::kDecompensation;
  c.window = 4;
  c.hidden = 8;
  c.embedder.d_emb = 4;
  c.embedder.channels = {{"wave", embed::EmbedKind::kCnn, 8, {{3, 2, 1, 2}}, true},
                         {"vital", embed::EmbedKind::kLinear, 3, {}, false}};
  c.feature_width = 3;
  c.baseline_width = 2;
  return c;
}

ingest::Sample tiny_sample(std::uint64_t seed, std::size_t steps, std::vector<std::size_t> labs,
                           std::vector<std::size_t> ints) {
  std::mt19937_64 rng(seed);
  ingest::Sample s;
  s.episode_id = "tiny" + std::to_string(seed);
  s.patient_id = s.episode_id;
  s.channels = {rnd(rng, {steps, 8}, false), rnd(rng, {steps, 3}, false)};
  s.features = rnd(rng, {steps, 3}, false);
  s.baseline = rnd(rng, {2}, false);
  s.lab_steps.assign(steps, 0);
  s.intervention_steps.assign(steps, 0);
  for (auto t : labs) s.lab_steps.at(t - 1) = 1;
  for (auto t : ints) s.intervention_steps.at(t - 1) = 1;
  s.decompensation = static_cast<int>(seed % 2);
  return s;
}

SuiteReport gradcheck_suite(double tolerance, std::uint64_t seed) {
  SuiteReport report;
  report.tolerance = tolerance;
  std::mt19937_64 rng(seed);

  auto run = [&](const std::string& name, std::vector<ad::NamedTensor> params,
                 const std::function<Tensor()>& loss) {
    auto r = ad::check_gradients(loss, params, 1e-6, tolerance);
    SuiteEntry e;
    e.name = name;
    e.passed = r.passed();
    e.max_error = r.max_error();
    for (const auto& x : r.entries) {
      if (!x.passed) e.failing.push_back(x.name);
    }
    report.entries.push_back(std::move(e));
  };

  {
    auto a = rnd(rng, {3, 4}), b = rnd(rng, {4, 2});
    run("matmul", {{"a", a}, {"b", b}}, [&] { return probe(ad::matmul(a, b)); });
  }
  {
    auto w = rnd(rng, {3, 4}), v = rnd(rng, {4}), b = rnd(rng, {3});
    run("matvec", {{"w", w}, {"v", v}}, [&] { return probe(ad::matvec(w, v)); });
    run("linear", {{"w", w}, {"x", v}, {"b", b}}, [&] { return probe(ad::linear(v, w, b)); });
  }
  {
    auto a = rnd(rng, {2, 3}), b = rnd(rng, {2, 3});
    run("add_sub_mul_scale", {{"a", a}, {"b", b}},
        [&] { return probe(ad::scale(ad::mul(ad::add(a, b), ad::sub(a, b)), 1.5)); });
    run("relu", {{"x", a}}, [&] { return probe(ad::relu(a)); });
    run("tanh", {{"x", a}}, [&] { return probe(ad::tanh(a)); });
    run("sigmoid", {{"x", a}}, [&] { return probe(ad::sigmoid(a)); });
    run("transpose", {{"x", a}}, [&] { return probe(ad::transpose(a)); });
    run("reshape", {{"x", a}}, [&] { return probe(ad::reshape(a, {3, 2})); });
    run("slice", {{"x", a}}, [&] { return probe(ad::slice(a, 1, 1, 3)); });
    run("mean_axis", {{"x", a}}, [&] { return probe(ad::mean_axis(a, 0)); });
    run("sum_mean", {{"x", a}}, [&] { return ad::add(ad::sum(a), ad::scale(ad::mean(b), 2.0)); });
    run("gather", {{"x", a}}, [&] { return probe(ad::gather(a, {5, 0, 0, 3}, {2, 2})); });
    std::vector<Tensor> parts = {a, b};
    run("concat", {{"a", a}, {"b", b}}, [&] { return probe(ad::concat(parts, 1)); });
    run("stack", {{"a", a}, {"b", b}}, [&] { return probe(ad::stack(parts)); });
  }
  {
    auto s = rnd(rng, {6}, true, -2, 2);
    run("masked_softmax", {{"s", s}}, [&] { return probe(ad::masked_softmax(s)); });
    std::vector<bool> mask = {true, false, true, true, false, true};
    run("masked_softmax_masked", {{"s", s}}, [&] { return probe(ad::masked_softmax(s, mask)); });
    run("cross_entropy", {{"s", s}}, [&] { return ad::cross_entropy(ad::masked_softmax(s), 2); });
    auto t = Tensor::vector({0.1, -0.2, 0.3, 0.0, 1.0, -1.0});
    run("squared_error", {{"s", s}}, [&] { return ad::squared_error(s, t); });
  }
  {
    auto u = rnd(rng, {3}), v = rnd(rng, {4});
    run("outer", {{"u", u}, {"v", v}}, [&] { return probe(ad::outer(u, v)); });
    run("repeat_each", {{"u", u}}, [&] { return probe(ad::repeat_each(u, 3)); });
  }
  {
    auto x = rnd(rng, {2, 2, 9}), k = rnd(rng, {3, 2, 3}), b = rnd(rng, {3});
    run("conv1d_same", {{"x", x}, {"kernel", k}, {"bias", b}},
        [&] { return probe(ad::conv1d(x, k, b, 1, ad::Padding::kSame)); });
    run("conv1d_valid_strided", {{"x", x}, {"kernel", k}, {"bias", b}},
        [&] { return probe(ad::conv1d(x, k, b, 2, ad::Padding::kValid)); });
    auto y = rnd(rng, {2, 3, 8});
    run("maxpool1d", {{"x", y}}, [&] { return probe(ad::maxpool1d(y, 2, 2)); });
    auto gamma = rnd(rng, {3}, true, 0.5, 1.5), beta = rnd(rng, {3});
    auto st = ad::BatchNormState::init(3);
    run("batchnorm_train", {{"x", y}, {"gamma", gamma}, {"beta", beta}},
        [&] { return probe(ad::batchnorm(y, gamma, beta, st, ad::Mode::kTrain)); });
    run("batchnorm_eval", {{"x", y}, {"gamma", gamma}, {"beta", beta}},
        [&] { return probe(ad::batchnorm(y, gamma, beta, st, ad::Mode::kEval)); });
  }
  {
    nn::ParamStore store(seed + 1);
    auto cell = model::make_lstm_cell(store, "lstm", 3, 4);
    std::vector<Tensor> xs = {rnd(rng, {3}), rnd(rng, {3}), rnd(rng, {3})};
    auto params = store.params();
    for (std::size_t i = 0; i < xs.size(); ++i) params.push_back({"x" + std::to_string(i), xs[i]});
    run("lstm_3_steps", params, [&] {
      auto s = model::zero_state(4);
      for (const auto& x : xs) s = model::lstm_step(x, s, cell);
      std::vector<Tensor> out = {s.h, s.c};
      return probe(ad::concat(out));
    });
  }
  {
    nn::ParamStore store(seed + 2);
    embed::ChannelEmbedSpec spec{"wave", embed::EmbedKind::kCnn, 12, {{3, 2, 2, 2}, {3, 2, 1, 1}}, true};
    embed::ChannelEmbedder cnn(spec, 3, store, "cnn");
    auto x = rnd(rng, {3, 12});
    auto params = store.params();
    params.push_back({"segments", x});
    run("cnn_embedder", params, [&] { return probe(cnn.forward(x, ad::Mode::kTrain)); });
  }
  {
    nn::ParamStore store(seed + 3);
    const std::size_t W = 5, K = 2, d = 2, H = 3;
    auto tp = attention::make_time_params(store, "time", W, H, K * d, false);
    auto cp = attention::make_channel_params(store, "channel", K, W, H, d);
    auto gp = attention::make_time_params(store, "lab", W, H, K * d, false);
    auto ip = attention::make_time_params(store, "int", W, H, K * d, true);
    auto steps = rnd(rng, {4, K * d}), h = rnd(rng, {H}), hm = rnd(rng, {H});
    auto params = store.params();
    params.push_back({"steps", steps});
    params.push_back({"h", h});
    params.push_back({"h_m", hm});
    const std::vector<std::uint8_t> lab_row = {0, 1, 0, 0}, int_row = {0, 0, 1, 0};
    run("attention", params, [&] {
      auto alpha = attention::time_weights(attention::time_energy(h, steps, tp));
      auto beta = attention::channel_weights(h, steps, cp);
      auto jc = attention::joint_context(alpha, beta, steps);
      auto g1 = attention::guided_context(h, steps, lab_row, 2, beta, gp);
      auto g2 = attention::intervention_guided_context(h, hm, steps, int_row, 2, beta, ip);
      std::vector<Tensor> out = {jc.Z, g1.Z, g2.Z, g1.gamma, g2.gamma};
      return probe(ad::concat(out));
    });
  }
  {
    model::Model m(tiny_model_config(), seed + 4);
    auto s1 = tiny_sample(seed + 5, 6, {2, 5}, {3});
    auto s2 = tiny_sample(seed + 6, 3, {}, {1});
    const ingest::Sample* batch[] = {&s1, &s2};
    run("raim3_end_to_end", m.store().params(), [&] { return m.loss(batch, ad::Mode::kTrain); });
  }
  return report;
}

}  // namespace raimkit::verify
