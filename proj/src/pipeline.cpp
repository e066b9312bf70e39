#include "raimkit/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "raimkit/errors.hpp"
#include "raimkit/log.hpp"

namespace raimkit::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::size_t first_length(const ingest::Schema& schema, const ingest::Sample& s, ingest::ChannelKind kind) {
  for (std::size_t k = 0; k < schema.channels.size(); ++k) {
    if (schema.channels[k].kind == kind) return s.channels.at(k).dim(1);
  }
  return 1;
}

json tensor_json(const ad::Tensor& t) {
  if (!t.defined()) return nullptr;
  return std::vector<double>(t.data().begin(), t.data().end());
}

}  // namespace

std::string ingest_config_to_json(const ingest::IngestConfig& c) {
  json j;
  j["step_hours"] = c.step_hours;
  j["discard_hours"] = c.discard_hours;
  j["window"] = c.window;
  j["stride"] = c.stride;
  j["min_record_hours"] = c.min_record_hours;
  j["min_age_years"] = c.min_age_years;
  j["decompensation_horizon_hours"] = c.decompensation_horizon_hours;
  j["waveform_bins"] = c.waveform_bins;
  return j.dump(2);
}

ingest::IngestConfig ingest_config_from_json(const std::string& text) {
  try {
    auto j = json::parse(text);
    ingest::IngestConfig c;
    c.step_hours = j.at("step_hours").get<double>();
    c.discard_hours = j.at("discard_hours").get<double>();
    c.window = j.at("window").get<std::size_t>();
    c.stride = j.at("stride").get<std::size_t>();
    c.min_record_hours = j.at("min_record_hours").get<double>();
    c.min_age_years = j.at("min_age_years").get<double>();
    c.decompensation_horizon_hours = j.at("decompensation_horizon_hours").get<double>();
    c.waveform_bins = j.at("waveform_bins").get<std::size_t>();
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("ingest settings: ") + e.what());
  }
}

ingest::Schema schema_for_episodes(const fs::path& dir) {
  const auto manifest = dir / "manifest.json";
  if (fs::exists(manifest)) {
    try {
      auto j = json::parse(read_text(manifest));
      return ingest::Schema::defaults(j.at("config").at("n_vitals").get<std::size_t>());
    } catch (const json::exception& e) {
      throw DataError("manifest " + manifest.string() + ": " + e.what());
    }
  }
  return ingest::Schema::defaults();
}

DatasetBundle ingest_episodes(const config::RunConfig& config) {
  if (config.data_episodes.empty()) throw ConfigError("data.episodes is not set");
  DatasetBundle b;
  b.schema = schema_for_episodes(config.data_episodes);
  b.ingest = config.ingest_config();
  b.dataset = ingest::ingest_directory(config.data_episodes, b.ingest, b.schema, config.ingest_skip_bad);
  if (b.dataset.samples.empty()) {
    throw DataError("no eligible episodes in " + config.data_episodes + " (" +
                    std::to_string(b.dataset.report.episodes) + " read, " +
                    std::to_string(b.dataset.report.too_short) + " too short, " +
                    std::to_string(b.dataset.report.minors) + " under age, " +
                    std::to_string(b.dataset.report.rejected) + " rejected)");
  }
  return b;
}

void save_bundle(const DatasetBundle& b, const fs::path& dir) {
  fs::create_directories(dir);
  ingest::save_dataset(b.dataset, dir / "dataset.bin", dir / "dataset.jsonl");
  write_text(dir / "schema.json", b.schema.to_json());
  write_text(dir / "ingest.json", ingest_config_to_json(b.ingest));
  write_text(dir / "report.json", b.dataset.report.to_json());
}

DatasetBundle load_bundle(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
  DatasetBundle b;
  b.dataset = ingest::load_dataset(dir / "dataset.bin", dir / "dataset.jsonl");
  b.schema = ingest::Schema::from_json(read_text(dir / "schema.json"));
  b.ingest = ingest_config_from_json(read_text(dir / "ingest.json"));
  if (b.dataset.samples.empty()) throw DataError("dataset " + dir.string() + " holds no windows");
  return b;
}

model::ModelConfig model_config_for(const config::RunConfig& cfg, const DatasetBundle& b) {
  if (b.dataset.samples.empty()) throw DataError("empty dataset");
  const auto& s = b.dataset.samples.front();
  auto c = model::desk_config(b.schema, first_length(b.schema, s, ingest::ChannelKind::kWaveform),
                              first_length(b.schema, s, ingest::ChannelKind::kVital),
                              model::parse_variant(cfg.model_variant), model::parse_task(cfg.model_task));
  c.regression = cfg.model_regression;
  c.window = b.ingest.window;
  c.n_lab = cfg.model_n_lab;
  c.n_int = cfg.model_n_int;
  c.hidden = cfg.model_hidden;
  c.layers = cfg.model_layers;
  c.bidirectional = cfg.model_bidirectional;
  c.guided_beta = cfg.model_guided_beta;
  c.concat_input = cfg.model_concat_input;
  c.guided_fallback = cfg.model_guided_fallback;
  c.embedder.d_emb = cfg.model_d_emb;
  for (auto& ch : c.embedder.channels) {
    if (ch.kind != embed::EmbedKind::kCnn) continue;
    ch.layers = cfg.model_cnn == "paper" ? embed::paper_cnn_layers(cfg.model_cnn_width)
                                         : embed::desk_cnn_layers(cfg.model_cnn_width);
  }
  c.validate();
  return c;
}

SplitPlan plan_split(std::span<const ingest::Sample> samples, double train_fraction,
                     double validation_fraction, std::uint64_t seed) {
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("split.validation_fraction must be in [0, 1)");
  }
  auto outer = ingest::split_by_patient(samples, train_fraction, seed);
  SplitPlan plan;
  plan.test = std::move(outer.test);
  if (validation_fraction == 0.0) {
    plan.train = std::move(outer.train);
    return plan;
  }
  std::set<std::string> unique;
  for (auto i : outer.train) unique.insert(samples[i].patient_id);
  std::vector<std::string> patients(unique.begin(), unique.end());
  std::mt19937_64 rng(seed + 1);
  std::shuffle(patients.begin(), patients.end(), rng);
  auto n_val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(patients.size())));
  if (patients.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, patients.size() - 1);
  else n_val = 0;
  std::set<std::string> val(patients.begin(), patients.begin() + static_cast<std::ptrdiff_t>(n_val));
  for (auto i : outer.train) (val.count(samples[i].patient_id) ? plan.validation : plan.train).push_back(i);
  return plan;
}

TrainRun train_run(const config::RunConfig& cfg, const DatasetBundle& b,
                   const std::function<void(std::size_t, double)>& on_epoch) {
  TrainRun run;
  const auto& samples = b.dataset.samples;
  run.split = plan_split(samples, cfg.split_train_fraction, cfg.split_validation_fraction, cfg.seed);
  if (run.split.train.empty()) throw DataError("training split is empty");
  try {
    run.model = std::make_unique<model::Model>(model_config_for(cfg, b), cfg.seed);
  } catch (const ShapeError& e) {
    throw ConfigError(std::string("model does not fit the dataset segments (") + e.what() +
                      "); raise ingest.waveform_bins or change model.cnn");
  }
  model::TrainConfig tc;
  tc.epochs = cfg.train_epochs;
  tc.batch_size = cfg.train_batch_size;
  tc.learning_rate = cfg.train_learning_rate;
  tc.seed = cfg.seed;
  tc.patience = cfg.train_patience;
  try {
    run.result = model::train(*run.model, samples, run.split.train, run.split.validation, tc, on_epoch);
  } catch (const NumericalError& e) {
    run.diverged = true;
    run.error = e.what();
  }
  return run;
}

std::string training_context(const config::RunConfig& cfg, const DatasetBundle& b) {
  json j;
  j["schema"] = json::parse(b.schema.to_json());
  j["ingest"] = json::parse(ingest_config_to_json(b.ingest));
  j["split"] = {{"seed", cfg.seed},
                {"train_fraction", cfg.split_train_fraction},
                {"validation_fraction", cfg.split_validation_fraction}};
  j["dataset"] = cfg.data_dataset;
  return j.dump();
}

std::vector<std::size_t> test_index_from_context(const std::string& context_json,
                                                 std::span<const ingest::Sample> samples) {
  try {
    const auto split = json::parse(context_json).at("split");
    return plan_split(samples, split.at("train_fraction").get<double>(),
                      split.at("validation_fraction").get<double>(), split.at("seed").get<std::uint64_t>())
        .test;
  } catch (const json::exception& e) {
    throw CompatibilityError(std::string("checkpoint context lacks split settings: ") + e.what());
  }
}

metrics::EvalReport evaluate_model(model::Model& m, std::span<const ingest::Sample> samples,
                                   std::span<const std::size_t> index) {
  const auto& c = m.config();
  const auto preds = model::predict_all(m, samples, index);
  if (c.task == model::Task::kDecompensation) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t i = 0; i < index.size(); ++i) {
      scores.push_back(preds[i].at(0));
      labels.push_back(samples[index[i]].decompensation);
    }
    return metrics::evaluate_binary(scores, labels);
  }
  std::vector<int> predicted, truth;
  for (std::size_t i = 0; i < index.size(); ++i) {
    truth.push_back(static_cast<int>(model::target_class(samples[index[i]], c.task)));
    if (c.regression) {
      predicted.push_back(ingest::los_class_for_days(std::max(preds[i].at(0), 1e-9)) - 1);
    } else {
      predicted.push_back(static_cast<int>(metrics::argmax(preds[i])));
    }
  }
  return metrics::evaluate_multiclass(predicted, truth, 9);
}

std::vector<std::string> prediction_lines(model::Model& m, const ingest::Sample& s) {
  ad::NoGradScope no_grad;
  const ingest::Sample* batch[] = {&s};
  auto out = m.forward(batch, ad::Mode::kEval, true).front();
  std::vector<std::string> lines;
  const bool binary = m.config().task == model::Task::kDecompensation && !m.config().regression;
  for (std::size_t t = 0; t < out.predictions.size(); ++t) {
    json j;
    j["episode_id"] = s.episode_id;
    j["window_index"] = s.window_index;
    j["step"] = t + 1;
    const auto& p = out.predictions[t];
    j["prediction"] = tensor_json(p);
    if (binary) j["risk"] = p[1];
    if (t < out.trace.size()) {
      const auto& tr = out.trace[t];
      json a;
      a["alpha"] = tensor_json(tr.alpha);
      a["beta"] = tensor_json(tr.beta);
      a["gamma_lab"] = tensor_json(tr.gamma_lab);
      a["gamma_int"] = tensor_json(tr.gamma_int);
      a["A"] = tensor_json(tr.A);
      if (tr.A.defined()) a["A_shape"] = {tr.A.dim(0), tr.A.dim(1)};
      a["active_lab"] = tr.active_lab;
      a["active_int"] = tr.active_int;
      a["m"] = tr.m ? json(*tr.m) : json(nullptr);
      j["attention"] = a;
    } else {
      j["attention"] = nullptr;
    }
    lines.push_back(j.dump());
  }
  return lines;
}

std::string attention_svg(model::Model& m, const ingest::Sample& s,
                          const std::vector<std::string>& names) {
  ad::NoGradScope no_grad;
  const ingest::Sample* batch[] = {&s};
  auto out = m.forward(batch, ad::Mode::kEval, true).front();
  if (out.trace.empty()) {
    throw ConfigError("variant " + model::variant_name(m.config().variant) + " has no attention map");
  }
  const auto& tr = out.trace.back();
  const std::size_t K = names.size();
  std::vector<std::vector<double>> cell;
  if (tr.A.defined()) {
    const std::size_t cols = tr.A.dim(1);
    for (std::size_t k = 0; k < tr.A.dim(0); ++k) {
      cell.emplace_back(tr.A.data().begin() + static_cast<std::ptrdiff_t>(k * cols),
                        tr.A.data().begin() + static_cast<std::ptrdiff_t>((k + 1) * cols));
    }
  } else {
    // time attention alone: the same weight for every channel
    const ad::Tensor& w = tr.alpha.defined() ? tr.alpha : (tr.gamma_int.defined() ? tr.gamma_int : tr.gamma_lab);
    std::vector<double> row(w.data().begin(), w.data().end());
    for (auto& v : row) v /= static_cast<double>(K);
    cell.assign(K, row);
  }
  if (cell.size() != K) throw ShapeError("attention map has " + std::to_string(cell.size()) + " rows for " + std::to_string(K) + " channels");
  const std::size_t cols = cell.front().size();
  double peak = 0.0;
  for (const auto& r : cell) peak = std::max(peak, *std::max_element(r.begin(), r.end()));
  if (peak <= 0.0) peak = 1.0;

  const int cw = 28, ch = 18, left = 70, top = 24;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + cw * static_cast<int>(cols) + 10
     << "\" height=\"" << top + ch * static_cast<int>(K) + 10 << "\">\n";
  os << "<style>.cell{fill:#c0392b;stroke:#999;stroke-width:0.5}"
        ".band-low{stroke:#e67e22;stroke-width:1.5}.band-high{stroke:#111;stroke-width:2.5}"
        "text{font:11px sans-serif}</style>\n";
  os << "<text x=\"4\" y=\"14\">" << s.episode_id << " window " << s.window_index << "</text>\n";
  for (std::size_t j = 0; j < cols; ++j) {
    os << "<text x=\"" << left + cw * static_cast<int>(j) + 8 << "\" y=\"" << top - 4 << "\">" << j + 1 << "</text>\n";
  }
  for (std::size_t k = 0; k < K; ++k) {
    const int y = top + ch * static_cast<int>(k);
    os << "<text x=\"4\" y=\"" << y + 13 << "\">" << names[k] << "</text>\n";
    for (std::size_t j = 0; j < cols; ++j) {
      const double v = cell[k][j];
      std::string cls = "cell";
      if (v >= 0.01 && v < 0.02) cls += " band-low";
      else if (v >= 0.02 && v <= 0.07) cls += " band-high";
      os << "<rect class=\"" << cls << "\" x=\"" << left + cw * static_cast<int>(j) << "\" y=\"" << y
         << "\" width=\"" << cw << "\" height=\"" << ch << "\" fill-opacity=\"" << v / peak
         << "\"><title>" << v << "</title></rect>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace raimkit::pipeline
