#include "raimkit/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <random>
#include <thread>

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "raimkit/checkpoint.hpp"
#include "raimkit/errors.hpp"
#include "raimkit/optim.hpp"

namespace raimkit::model {

namespace {

ad::Tensor row_of(const ad::Tensor& x, std::size_t r) {
  const std::size_t cols = x.dim(1);
  std::vector<std::size_t> idx(cols);
  for (std::size_t c = 0; c < cols; ++c) idx[c] = r * cols + c;
  return ad::gather(x, std::move(idx), {cols});
}

// Stacks constant per-sample [T x L] blocks into one [sum T x L] tensor.
ad::Tensor stack_rows(std::span<const ingest::Sample* const> batch, std::size_t channel) {
  std::size_t rows = 0;
  const std::size_t cols = batch.front()->channels.at(channel).dim(1);
  for (const auto* s : batch) {
    const auto& t = s->channels.at(channel);
    if (t.dim(1) != cols) {
      throw ShapeError("channel " + std::to_string(channel) + " segment length differs across windows");
    }
    rows += t.dim(0);
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const auto* s : batch) {
    const auto d = s->channels[channel].data();
    data.insert(data.end(), d.begin(), d.end());
  }
  return ad::Tensor({rows, cols}, std::move(data));
}

}  // namespace

// ---------------------------------------------------------------------------
// Names and config

Variant parse_variant(const std::string& name) {
  std::string n;
  for (char c : name) n += c == '-' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (n.size() == 6 && n.rfind("raim_", 0) == 0) n.erase(4, 1);
  if (n == "cnn_only") return Variant::kCnnOnly;
  if (n == "cnn_rnn") return Variant::kCnnRnn;
  if (n == "cnn_att_rnn") return Variant::kCnnAttRnn;
  if (n == "raim0") return Variant::kRaim0;
  if (n == "raim1") return Variant::kRaim1;
  if (n == "raim2") return Variant::kRaim2;
  if (n == "raim3") return Variant::kRaim3;
  throw ConfigError("unknown variant '" + name +
                    "' (expected cnn_only, cnn_rnn, cnn_att_rnn, raim0, raim1, raim2, raim3)");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kCnnOnly: return "cnn_only";
    case Variant::kCnnRnn: return "cnn_rnn";
    case Variant::kCnnAttRnn: return "cnn_att_rnn";
    case Variant::kRaim0: return "raim0";
    case Variant::kRaim1: return "raim1";
    case Variant::kRaim2: return "raim2";
    case Variant::kRaim3: return "raim3";
  }
  return "?";
}

Task parse_task(const std::string& name) {
  if (name == "decomp") return Task::kDecompensation;
  if (name == "los") return Task::kLengthOfStay;
  throw ConfigError("unknown task '" + name + "' (expected decomp or los)");
}

std::string task_name(Task t) { return t == Task::kDecompensation ? "decomp" : "los"; }

std::vector<Variant> all_variants() {
  return {Variant::kCnnOnly, Variant::kCnnRnn, Variant::kCnnAttRnn, Variant::kRaim0,
          Variant::kRaim1,   Variant::kRaim2,  Variant::kRaim3};
}

bool uses_lab_guidance(Variant v) { return v == Variant::kRaim1 || v == Variant::kRaim3; }
bool uses_intervention_guidance(Variant v) { return v == Variant::kRaim2 || v == Variant::kRaim3; }

std::size_t ModelConfig::classes() const {
  if (regression) return 1;
  return task == Task::kDecompensation ? 2 : 9;
}

std::size_t ModelConfig::encoder_input_width() const {
  const std::size_t a = embedder.channels.size() * embedder.d_emb;
  std::size_t w = variant == Variant::kRaim3 ? 2 * a : a;
  if (concat_input && variant != Variant::kCnnRnn) w += a;
  return w;
}

void ModelConfig::validate() const {
  if (embedder.channels.empty()) throw ConfigError("model needs at least one channel");
  if (window == 0) throw ConfigError("model.window must be positive");
  if (hidden == 0) throw ConfigError("model.hidden must be positive");
  if (layers == 0) throw ConfigError("model.layers must be positive");
  if (n_lab % 2 != 0 || n_int % 2 != 0) throw ConfigError("model.n_lab and model.n_int must be even");
  if (regression && task != Task::kLengthOfStay) {
    throw ConfigError("regression head is only defined for the los task");
  }
}

ModelConfig desk_config(const ingest::Schema& schema, std::size_t waveform_length,
                        std::size_t vital_length, Variant variant, Task task) {
  ModelConfig c;
  c.variant = variant;
  c.task = task;
  c.embedder.d_emb = 32;
  for (const auto& ch : schema.channels) {
    embed::ChannelEmbedSpec spec;
    spec.name = ch.name;
    if (ch.kind == ingest::ChannelKind::kWaveform) {
      spec.kind = embed::EmbedKind::kCnn;
      spec.input_length = waveform_length;
      spec.layers = embed::desk_cnn_layers();
    } else {
      spec.kind = embed::EmbedKind::kLinear;
      spec.input_length = vital_length;
      spec.batchnorm = false;
    }
    c.embedder.channels.push_back(spec);
  }
  c.feature_width = schema.feature_width();
  c.baseline_width = schema.baseline_width();
  return c;
}

std::string model_config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["variant"] = variant_name(c.variant);
  j["task"] = task_name(c.task);
  j["regression"] = c.regression;
  j["window"] = c.window;
  j["n_lab"] = c.n_lab;
  j["n_int"] = c.n_int;
  j["hidden"] = c.hidden;
  j["layers"] = c.layers;
  j["bidirectional"] = c.bidirectional;
  j["guided_beta"] = c.guided_beta;
  j["concat_input"] = c.concat_input;
  j["guided_fallback"] = c.guided_fallback;
  j["feature_width"] = c.feature_width;
  j["baseline_width"] = c.baseline_width;
  j["d_emb"] = c.embedder.d_emb;
  j["channels"] = nlohmann::json::array();
  for (const auto& ch : c.embedder.channels) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : ch.layers) layers.push_back({l.kernel, l.channels, l.stride, l.pool});
    const char* kind = ch.kind == embed::EmbedKind::kCnn      ? "cnn"
                       : ch.kind == embed::EmbedKind::kLinear ? "linear"
                                                               : "identity";
    j["channels"].push_back({{"name", ch.name},
                             {"kind", kind},
                             {"input_length", ch.input_length},
                             {"batchnorm", ch.batchnorm},
                             {"layers", layers}});
  }
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  ModelConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.task = parse_task(j.at("task").get<std::string>());
    c.regression = j.at("regression").get<bool>();
    c.window = j.at("window").get<std::size_t>();
    c.n_lab = j.at("n_lab").get<std::size_t>();
    c.n_int = j.at("n_int").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.bidirectional = j.at("bidirectional").get<bool>();
    c.guided_beta = j.at("guided_beta").get<bool>();
    c.concat_input = j.at("concat_input").get<bool>();
    c.guided_fallback = j.at("guided_fallback").get<bool>();
    c.feature_width = j.at("feature_width").get<std::size_t>();
    c.baseline_width = j.at("baseline_width").get<std::size_t>();
    c.embedder.d_emb = j.at("d_emb").get<std::size_t>();
    for (const auto& ch : j.at("channels")) {
      embed::ChannelEmbedSpec spec;
      spec.name = ch.at("name").get<std::string>();
      const auto kind = ch.at("kind").get<std::string>();
      if (kind == "cnn") spec.kind = embed::EmbedKind::kCnn;
      else if (kind == "linear") spec.kind = embed::EmbedKind::kLinear;
      else if (kind == "identity") spec.kind = embed::EmbedKind::kIdentity;
      else throw CompatibilityError("unknown embedder kind '" + kind + "'");
      spec.input_length = ch.at("input_length").get<std::size_t>();
      spec.batchnorm = ch.at("batchnorm").get<bool>();
      for (const auto& l : ch.at("layers")) {
        spec.layers.push_back({l.at(0).get<std::size_t>(), l.at(1).get<std::size_t>(),
                               l.at(2).get<std::size_t>(), l.at(3).get<std::size_t>()});
      }
      c.embedder.channels.push_back(spec);
    }
  } catch (const nlohmann::json::exception& e) {
    throw CompatibilityError(std::string("malformed model config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// LSTM

LstmCell make_lstm_cell(nn::ParamStore& store, const std::string& prefix, std::size_t input,
                        std::size_t hidden) {
  LstmCell cell;
  cell.hidden = hidden;
  cell.W = store.uniform(prefix + ".W", {4 * hidden, input + hidden}, input + hidden);
  std::vector<double> bias(4 * hidden, 0.0);
  for (std::size_t i = hidden; i < 2 * hidden; ++i) bias[i] = 1.0;  // forget gate
  cell.b = store.constant(prefix + ".b", {4 * hidden}, 0.0);
  std::copy(bias.begin(), bias.end(), cell.b.mutable_data().begin());
  return cell;
}

LstmState zero_state(std::size_t hidden) {
  return {ad::Tensor::zeros({hidden}), ad::Tensor::zeros({hidden})};
}

LstmState lstm_step(const ad::Tensor& x, const LstmState& state, const LstmCell& cell) {
  const std::size_t H = cell.hidden;
  if (x.rank() != 1 || x.numel() + H != cell.W.dim(1)) {
    throw ShapeError("lstm_step: input " + ad::shape_str(x.shape()) + " does not fit weight " +
                     ad::shape_str(cell.W.shape()));
  }
  std::vector<ad::Tensor> parts = {x, state.h};
  ad::Tensor gates = ad::linear(ad::concat(parts), cell.W, cell.b);
  ad::Tensor i = ad::sigmoid(ad::slice(gates, 0, 0, H));
  ad::Tensor f = ad::sigmoid(ad::slice(gates, 0, H, 2 * H));
  ad::Tensor g = ad::tanh(ad::slice(gates, 0, 2 * H, 3 * H));
  ad::Tensor o = ad::sigmoid(ad::slice(gates, 0, 3 * H, 4 * H));
  ad::Tensor c = ad::add(ad::mul(f, state.c), ad::mul(i, g));
  return {ad::mul(o, ad::tanh(c)), c};
}

// ---------------------------------------------------------------------------
// Model

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)), store_(seed) {
  config_.validate();
  const auto& ec = config_.embedder;
  const std::size_t K = ec.channels.size();
  const std::size_t a = K * ec.d_emb;
  const std::size_t W = config_.window;
  const std::size_t H = config_.hidden;
  const Variant v = config_.variant;
  embedder_.emplace(ec, store_, "embed");

  if (v == Variant::kCnnAttRnn || v == Variant::kRaim0) {
    time_ = attention::make_time_params(store_, "attention.time", W, H, a, false);
  }
  if (v == Variant::kRaim0 ||
      ((uses_lab_guidance(v) || uses_intervention_guidance(v)) && config_.guided_beta)) {
    channel_ = attention::make_channel_params(store_, "attention.channel", K, W, H, ec.d_emb);
  }
  if (uses_lab_guidance(v)) lab_ = attention::make_time_params(store_, "attention.lab", W, H, a, false);
  if (uses_intervention_guidance(v)) {
    int_ = attention::make_time_params(store_, "attention.int", W, H, a, true);
  }

  std::size_t top = a;
  if (v != Variant::kCnnOnly) {
    std::size_t in = config_.encoder_input_width();
    for (std::size_t l = 0; l < config_.layers; ++l) {
      const std::string p = "encoder.l" + std::to_string(l);
      forward_cells_.push_back(make_lstm_cell(store_, p + ".fwd", in, H));
      if (config_.bidirectional) backward_cells_.push_back(make_lstm_cell(store_, p + ".bwd", in, H));
      in = config_.bidirectional ? 2 * H : H;
    }
    top = in;
  }
  const std::size_t n = config_.classes();
  head_.W_h = store_.uniform("head.W_h", {n, top}, top);
  head_.W_x = store_.uniform("head.W_x", {n, std::max<std::size_t>(config_.feature_width, 1)},
                             std::max<std::size_t>(config_.feature_width, 1));
  head_.W_b = store_.uniform("head.W_b", {n, std::max<std::size_t>(config_.baseline_width, 1)},
                             std::max<std::size_t>(config_.baseline_width, 1));
  head_.b = store_.constant("head.b", {n}, 0.0);
}

ad::Tensor Model::predict_step(const ad::Tensor& h, const ad::Tensor& x, const ad::Tensor& b) const {
  ad::Tensor z = ad::matvec(head_.W_h, h);
  if (config_.feature_width > 0) z = ad::add(z, ad::matvec(head_.W_x, x));
  if (config_.baseline_width > 0) z = ad::add(z, ad::matvec(head_.W_b, b));
  z = ad::add(z, head_.b);
  if (config_.regression) return z;
  return ad::masked_softmax(z);
}

WindowOutput Model::encode(const ad::Tensor& emb, const ingest::Sample& s, bool trace) {
  const std::size_t T = emb.dim(0);
  const std::size_t W = config_.window;
  const std::size_t H = config_.hidden;
  const Variant v = config_.variant;
  const auto policy =
      config_.guided_fallback ? attention::EmptyPolicy::kUnguided : attention::EmptyPolicy::kZero;
  if (s.lab_steps.size() != T || s.intervention_steps.size() != T) {
    throw ShapeError("window " + s.episode_id + ": event flags do not match " + std::to_string(T) + " steps");
  }
  if (config_.feature_width > 0 &&
      (s.features.rank() != 2 || s.features.dim(0) != T || s.features.dim(1) != config_.feature_width)) {
    throw ShapeError("window " + s.episode_id + ": features " + ad::shape_str(s.features.shape()) +
                     " do not match model feature width " + std::to_string(config_.feature_width));
  }
  if (config_.baseline_width > 0 && s.baseline.numel() != config_.baseline_width) {
    throw ShapeError("window " + s.episode_id + ": baseline width mismatch");
  }

  WindowOutput out;
  std::vector<ad::Tensor> top(T);

  if (v == Variant::kCnnOnly) {
    ad::Tensor running;
    for (std::size_t t = 0; t < T; ++t) {
      ad::Tensor a = row_of(emb, t);
      running = t == 0 ? a : ad::add(running, a);
      top[t] = ad::scale(running, 1.0 / static_cast<double>(t + 1));
    }
  } else {
    // Layer 0 forward, with attention conditioned on its previous state.
    std::vector<ad::Tensor> inputs(T);
    std::vector<ad::Tensor> fwd(T);
    LstmState state = zero_state(H);
    for (std::size_t tau = 1; tau <= T; ++tau) {
      const std::size_t wp = std::min(tau, W);
      const std::size_t first = tau - wp;
      const ad::Tensor& h_prev = state.h;
      ad::Tensor rows = (first == 0 && wp == T) ? emb : ad::slice(emb, 0, first, tau);
      StepTrace st;
      ad::Tensor u;
      ad::Tensor beta;
      if (channel_.W_h.defined()) beta = attention::channel_weights(h_prev, rows, channel_);
      switch (v) {
        case Variant::kCnnRnn:
          u = row_of(emb, tau - 1);
          break;
        case Variant::kCnnAttRnn:
        case Variant::kRaim0: {
          st.alpha = attention::time_weights(attention::time_energy(h_prev, rows, time_));
          auto jc = attention::joint_context(st.alpha, v == Variant::kRaim0 ? beta : ad::Tensor{}, rows);
          u = jc.Z;
          st.A = jc.A;
          break;
        }
        default: {
          std::vector<ad::Tensor> parts;
          if (uses_lab_guidance(v)) {
            std::span<const std::uint8_t> row(s.lab_steps.data() + first, wp);
            auto g = attention::guided_context(h_prev, rows, row, config_.n_lab,
                                               config_.guided_beta ? beta : ad::Tensor{}, lab_, policy);
            parts.push_back(g.Z);
            st.gamma_lab = g.gamma;
            st.active_lab = g.active;
          }
          if (uses_intervention_guidance(v)) {
            std::span<const std::uint8_t> row(s.intervention_steps.data() + first, wp);
            st.m = attention::last_marked(row);
            ad::Tensor h_m = ad::Tensor::zeros({H});
            if (st.m) {
              // state after step first+m, capped at the latest available one
              const std::size_t p = std::min(first + *st.m, tau - 1);
              if (p > 0) h_m = fwd[p - 1];
            }
            auto g = attention::intervention_guided_context(h_prev, h_m, rows, row, config_.n_int,
                                                            config_.guided_beta ? beta : ad::Tensor{},
                                                            int_, policy);
            parts.push_back(g.Z);
            st.gamma_int = g.gamma;
            st.active_int = g.active;
          }
          u = parts.size() == 1 ? parts.front() : ad::concat(parts);
          break;
        }
      }
      if (config_.concat_input && v != Variant::kCnnRnn) {
        std::vector<ad::Tensor> parts = {u, row_of(emb, tau - 1)};
        u = ad::concat(parts);
      }
      if (trace && v != Variant::kCnnRnn) {
        st.beta = beta;
        if (beta.defined() && !st.A.defined()) {
          if (st.gamma_int.defined()) st.A = ad::outer(beta, st.gamma_int);
          else if (st.gamma_lab.defined()) st.A = ad::outer(beta, st.gamma_lab);
        }
        out.trace.push_back(std::move(st));
      }
      inputs[tau - 1] = u;
      state = lstm_step(u, state, forward_cells_[0]);
      fwd[tau - 1] = state.h;
    }

    auto run_backward = [&](const std::vector<ad::Tensor>& xs, const LstmCell& cell) {
      std::vector<ad::Tensor> hs(xs.size());
      LstmState st = zero_state(H);
      for (std::size_t k = xs.size(); k > 0; --k) {
        st = lstm_step(xs[k - 1], st, cell);
        hs[k - 1] = st.h;
      }
      return hs;
    };
    auto merge = [&](const std::vector<ad::Tensor>& f, const std::vector<ad::Tensor>& b) {
      std::vector<ad::Tensor> o(f.size());
      for (std::size_t k = 0; k < f.size(); ++k) {
        std::vector<ad::Tensor> parts = {f[k], b[k]};
        o[k] = ad::concat(parts);
      }
      return o;
    };

    std::vector<ad::Tensor> layer_out =
        config_.bidirectional ? merge(fwd, run_backward(inputs, backward_cells_[0])) : fwd;
    for (std::size_t l = 1; l < config_.layers; ++l) {
      std::vector<ad::Tensor> f(T);
      LstmState st = zero_state(H);
      for (std::size_t k = 0; k < T; ++k) {
        st = lstm_step(layer_out[k], st, forward_cells_[l]);
        f[k] = st.h;
      }
      layer_out = config_.bidirectional ? merge(f, run_backward(layer_out, backward_cells_[l])) : f;
    }
    top = std::move(layer_out);
  }

  out.hidden = top;
  out.predictions.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    ad::Tensor x = config_.feature_width > 0 ? row_of(s.features, t) : ad::Tensor{};
    out.predictions.push_back(predict_step(top[t], x, s.baseline));
  }
  return out;
}

std::vector<WindowOutput> Model::forward(std::span<const ingest::Sample* const> batch, ad::Mode mode,
                                         bool trace) {
  if (batch.empty()) throw ContractError("forward on an empty batch");
  const std::size_t K = config_.embedder.channels.size();
  for (const auto* s : batch) {
    if (s->channels.size() != K) {
      throw CompatibilityError("window " + s->episode_id + " has " + std::to_string(s->channels.size()) +
                               " channels, model expects " + std::to_string(K));
    }
  }
  std::vector<ad::Tensor> segments;
  segments.reserve(K);
  for (std::size_t k = 0; k < K; ++k) segments.push_back(stack_rows(batch, k));
  ad::Tensor emb = embedder_->forward(segments, mode);

  std::vector<WindowOutput> outs;
  outs.reserve(batch.size());
  std::size_t offset = 0;
  for (const auto* s : batch) {
    const std::size_t T = s->channels[0].dim(0);
    ad::Tensor rows = batch.size() == 1 ? emb : ad::slice(emb, 0, offset, offset + T);
    outs.push_back(encode(rows, *s, trace));
    offset += T;
  }
  return outs;
}

std::size_t target_class(const ingest::Sample& s, Task task) {
  if (task == Task::kDecompensation) return static_cast<std::size_t>(s.decompensation);
  if (s.los_class < 1 || s.los_class > 9) {
    throw DataError("LOS class " + std::to_string(s.los_class) + " outside 1..9");
  }
  return static_cast<std::size_t>(s.los_class - 1);
}

ad::Tensor sequence_loss(std::span<const ad::Tensor> predictions, std::size_t label) {
  if (predictions.empty()) throw ContractError("sequence_loss needs at least one prediction");
  ad::Tensor total = ad::cross_entropy(predictions[0], label);
  for (std::size_t t = 1; t < predictions.size(); ++t) {
    total = ad::add(total, ad::cross_entropy(predictions[t], label));
  }
  return total;
}

ad::Tensor sequence_squared_error(std::span<const ad::Tensor> predictions, double target) {
  if (predictions.empty()) throw ContractError("sequence_squared_error needs at least one prediction");
  const ad::Tensor y = ad::Tensor::scalar(target);
  ad::Tensor total = ad::squared_error(predictions[0], y);
  for (std::size_t t = 1; t < predictions.size(); ++t) {
    total = ad::add(total, ad::squared_error(predictions[t], y));
  }
  return total;
}

ad::Tensor Model::window_loss(const WindowOutput& out, const ingest::Sample& s) const {
  if (config_.regression) return sequence_squared_error(out.predictions, s.remaining_days);
  return sequence_loss(out.predictions, target_class(s, config_.task));
}

ad::Tensor Model::loss(std::span<const ingest::Sample* const> batch, ad::Mode mode) {
  auto outs = forward(batch, mode);
  ad::Tensor total;
  for (std::size_t i = 0; i < outs.size(); ++i) {
    ad::Tensor l = window_loss(outs[i], *batch[i]);
    total = i == 0 ? l : ad::add(total, l);
  }
  return ad::scale(total, 1.0 / static_cast<double>(outs.size()));
}

std::vector<double> Model::final_prediction(const ingest::Sample& sample) {
  ad::NoGradScope no_grad;
  const ingest::Sample* one[] = {&sample};
  auto outs = forward(one, ad::Mode::kEval);
  const auto& p = outs.front().predictions.back();
  if (!config_.regression && config_.task == Task::kDecompensation) return {p[1]};
  return {p.data().begin(), p.data().end()};
}

// ---------------------------------------------------------------------------
// Persistence

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
  return checkpoint.string() + ".json";
}

void save_model(const Model& model, const std::filesystem::path& path, const std::string& context_json) {
  nlohmann::json side;
  side["format"] = "raimkit-model";
  side["version"] = 1;
  side["model"] = nlohmann::json::parse(model_config_to_json(model.config()));
  side["context"] = nlohmann::json::parse(context_json);
  io::save_tensors(path, model.store().state());
  std::ofstream out(sidecar_path(path));
  if (!out) throw DataError("cannot write " + sidecar_path(path).string());
  out << side.dump(2) << "\n";
}

LoadedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(sidecar_path(path));
  if (!in) {
    throw CompatibilityError("checkpoint " + path.string() + " has no model sidecar " +
                             sidecar_path(path).string());
  }
  std::stringstream buf;
  buf << in.rdbuf();
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(buf.str());
    if (side.at("format") != "raimkit-model") throw CompatibilityError("sidecar is not a raimkit model");
    if (side.at("version") != 1) {
      throw CompatibilityError("unsupported model sidecar version " + side.at("version").dump());
    }
  } catch (const nlohmann::json::exception& e) {
    throw CompatibilityError(std::string("malformed model sidecar: ") + e.what());
  }
  LoadedModel out;
  out.model = std::make_unique<Model>(model_config_from_json(side.at("model").dump()), 0);
  auto state = out.model->store().state();
  io::load_into(path, state);
  out.context_json = side.value("context", nlohmann::json::object()).dump();
  return out;
}

// ---------------------------------------------------------------------------
// Training and evaluation

namespace {

using Snapshot = std::vector<std::vector<double>>;

Snapshot take_snapshot(const nn::ParamStore& store) {
  Snapshot s;
  for (const auto& p : store.state()) s.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return s;
}

void restore_snapshot(nn::ParamStore& store, const Snapshot& snap) {
  auto state = store.state();
  for (std::size_t i = 0; i < state.size(); ++i) {
    std::copy(snap[i].begin(), snap[i].end(), state[i].tensor.mutable_data().begin());
  }
}

std::vector<const ingest::Sample*> gather_ptrs(std::span<const ingest::Sample> samples,
                                               std::span<const std::size_t> index) {
  std::vector<const ingest::Sample*> out;
  out.reserve(index.size());
  for (auto i : index) out.push_back(&samples[i]);
  return out;
}

}  // namespace

double evaluate_loss(Model& model, std::span<const ingest::Sample> samples,
                     std::span<const std::size_t> index) {
  ad::NoGradScope no_grad;
  double total = 0.0;
  const std::size_t chunk = 64;
  auto ptrs = gather_ptrs(samples, index);
  for (std::size_t b = 0; b < ptrs.size(); b += chunk) {
    const std::size_t e = std::min(ptrs.size(), b + chunk);
    std::span<const ingest::Sample* const> batch(ptrs.data() + b, e - b);
    total += model.loss(batch, ad::Mode::kEval).item() * static_cast<double>(e - b);
  }
  return ptrs.empty() ? 0.0 : total / static_cast<double>(ptrs.size());
}

TrainResult train(Model& model, std::span<const ingest::Sample> samples,
                  std::span<const std::size_t> train_index,
                  std::span<const std::size_t> validation_index, const TrainConfig& config,
                  const std::function<void(std::size_t, double)>& on_epoch) {
  if (train_index.empty()) throw DataError("training set is empty");
  if (config.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  auto& params = model.store().params();
  ad::AdamState adam(ad::AdamConfig{config.learning_rate, 0.9, 0.999, 1e-8}, params);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train_index.begin(), train_index.end());
  TrainResult result;
  Snapshot last_good = take_snapshot(model.store());
  Snapshot best = last_good;
  double best_val = INFINITY;
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::size_t e = std::min(order.size(), b + config.batch_size);
      std::vector<const ingest::Sample*> batch;
      batch.reserve(e - b);
      for (std::size_t i = b; i < e; ++i) batch.push_back(&samples[order[i]]);
      ad::Tape tape;
      ad::TapeScope scope(tape);
      ad::zero_grads(params);
      ad::Tensor loss;
      try {
        loss = model.loss(batch, ad::Mode::kTrain);
      } catch (const NumericalError&) {
        loss = ad::Tensor::scalar(NAN);
      }
      if (!loss.all_finite()) {
        restore_snapshot(model.store(), last_good);
        throw NumericalError("training diverged at epoch " + std::to_string(epoch + 1) +
                             " (non-finite loss); parameters restored to the last completed epoch");
      }
      tape.backward(loss);
      try {
        ad::adam_step(params, adam);
      } catch (const NumericalError&) {
        restore_snapshot(model.store(), last_good);
        throw;
      }
      total += loss.item() * static_cast<double>(e - b);
    }
    ad::zero_grads(params);
    const double mean = total / static_cast<double>(order.size());
    result.train_loss.push_back(mean);
    last_good = take_snapshot(model.store());
    if (on_epoch) on_epoch(epoch + 1, mean);

    if (!validation_index.empty()) {
      const double val = evaluate_loss(model, samples, validation_index);
      result.validation_loss.push_back(val);
      if (val < best_val) {
        best_val = val;
        best = last_good;
        result.best_epoch = epoch + 1;
        since_best = 0;
      } else if (config.patience > 0 && ++since_best >= config.patience) {
        restore_snapshot(model.store(), best);
        result.stopped_early = true;
        break;
      }
    } else {
      result.best_epoch = epoch + 1;
    }
  }
  return result;
}

std::size_t worker_threads() {
  if (const char* env = std::getenv("RAIMKIT_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && n > 0) return static_cast<std::size_t>(n);
    throw ConfigError(std::string("RAIMKIT_THREADS must be a positive integer, got '") + env + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<std::vector<double>> predict_all(Model& model, std::span<const ingest::Sample> samples,
                                             std::span<const std::size_t> index, std::size_t threads) {
  std::vector<std::vector<double>> out(index.size());
  if (threads == 0) threads = worker_threads();
  threads = std::max<std::size_t>(1, std::min(threads, index.size()));
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) out[i] = model.final_prediction(samples[index[i]]);
  };
  if (threads == 1) {
    work(0, index.size());
    return out;
  }
  std::vector<std::thread> pool;
  const std::size_t per = (index.size() + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t b = t * per, e = std::min(index.size(), b + per);
    if (b < e) pool.emplace_back(work, b, e);
  }
  for (auto& th : pool) th.join();
  return out;
}

}  // namespace raimkit::model
