#include "raimkit/synthgen.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "raimkit/errors.hpp"
#include "raimkit/log.hpp"

namespace raimkit::synthgen {

using json = nlohmann::json;

namespace {

constexpr double kLoading = 0.8;
const char* const kInterventionKinds[] = {"vasopressor", "iv_fluids", "ventilation", "sedation",
                                          "transfusion"};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double sign_of(std::size_t i) { return i % 3 == 1 ? -1.0 : 1.0; }

double quantize(double v) { return std::round(v * 1000.0) / 1000.0; }

std::uint32_t poisson(double mean, std::mt19937_64& rng) {
  if (!(mean > 0.0)) return 0;
  return std::poisson_distribution<std::uint32_t>(mean)(rng);
}

std::size_t draw_steps(const GeneratorConfig& c, std::mt19937_64& rng) {
  return std::uniform_int_distribution<std::size_t>(c.min_steps, c.max_steps)(rng);
}

}  // namespace

ingest::IngestConfig GeneratorConfig::ingest_config() const {
  ingest::IngestConfig c = profile == Profile::kFast ? ingest::IngestConfig::fast() : ingest::IngestConfig{};
  c.window = window;
  c.stride = window;
  c.min_record_hours = static_cast<double>(window + 1) * step_seconds() / ingest::kSecondsPerHour;
  c.min_age_years = 18.0;
  return c;
}

ingest::Schema GeneratorConfig::schema() const { return ingest::Schema::defaults(n_vitals); }

void GeneratorConfig::validate() const {
  auto nonneg = [](double v, const char* key) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(std::string(key) + " must be finite and >= 0");
  };
  nonneg(lambda_lab, "lambda_lab");
  nonneg(lambda_int, "lambda_int");
  nonneg(lambda_artifact, "lambda_artifact");
  nonneg(delta, "delta");
  nonneg(kappa, "kappa");
  nonneg(base_sd, "base_sd");
  nonneg(waveform_noise, "waveform_noise");
  nonneg(vital_noise, "vital_noise");
  nonneg(chart_noise, "chart_noise");
  nonneg(lab_noise, "lab_noise");
  nonneg(risk_noise, "risk_noise");
  if (!(waveform_rate_hz > 0.0)) throw ConfigError("waveform_rate_hz must be positive");
  if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("rho must lie in [0, 1)");
  if (!(ar_phi >= 0.0 && ar_phi < 1.0)) throw ConfigError("ar_phi must lie in [0, 1)");
  if (window == 0) throw ConfigError("window must be positive");
  if (min_steps < window + 1 || max_steps < min_steps) {
    throw ConfigError("need window + 1 <= min_steps <= max_steps");
  }
  if (!(target_positive_rate > 0.0 && target_positive_rate < 1.0)) {
    throw ConfigError("target_positive_rate must lie in (0, 1)");
  }
  if (!(chart_probability >= 0.0 && chart_probability <= 1.0)) {
    throw ConfigError("chart_probability must lie in [0, 1]");
  }
  if (jump_max < jump_min || artifact_max < artifact_min) throw ConfigError("empty jump or artifact range");
  if (calibration_draws < 100) throw ConfigError("calibration_draws must be at least 100");
  if (!(min_age <= max_age)) throw ConfigError("min_age exceeds max_age");
}

GeneratorConfig paper_profile() {
  GeneratorConfig c;
  c.profile = Profile::kPaper;
  c.waveform_rate_hz = 125.0;
  return c;
}

std::uint64_t episode_seed(std::uint64_t seed, std::size_t index) {
  return splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(index));
}

Latent simulate_latent(const GeneratorConfig& c, std::size_t steps, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> jump(c.jump_min, c.jump_max);
  std::uniform_real_distribution<double> burst(c.artifact_min, c.artifact_max);
  const double innovation = c.base_sd * std::sqrt(1.0 - c.ar_phi * c.ar_phi);
  Latent z;
  z.base.resize(steps);
  z.effect.resize(steps);
  z.artifact.resize(steps);
  z.interventions.resize(steps);
  z.bursts.resize(steps);
  z.true_severity.resize(steps);
  z.observed.resize(steps);
  double base = c.base_sd * normal(rng), effect = 0.0, artifact = 0.0;
  for (std::size_t h = 0; h < steps; ++h) {
    if (h > 0) base = c.ar_phi * base + innovation * normal(rng);
    const double rate = c.lambda_int * std::max(0.0, 1.0 + c.delta * c.kappa * std::tanh(base / std::max(c.base_sd, 1e-12)));
    const auto n_int = poisson(rate, rng);
    const auto n_art = poisson(c.lambda_artifact, rng);
    effect *= c.rho;
    for (std::uint32_t k = 0; k < n_int; ++k) effect += jump(rng);
    artifact *= c.rho;
    for (std::uint32_t k = 0; k < n_art; ++k) artifact += burst(rng);
    z.base[h] = base;
    z.effect[h] = effect;
    z.artifact[h] = artifact;
    z.interventions[h] = n_int;
    z.bursts[h] = n_art;
    z.true_severity[h] = base + c.delta * effect;
    z.observed[h] = z.true_severity[h] + artifact;
  }
  double peak = -INFINITY;
  const std::size_t last = std::min(steps - 1, c.window);
  for (std::size_t h = 1; h <= last; ++h) peak = std::max(peak, z.true_severity[h]);
  z.risk = c.delta * peak + c.risk_noise * normal(rng);
  return z;
}

double calibrate_theta(const GeneratorConfig& c) {
  if (std::isfinite(c.theta)) return c.theta;
  std::mt19937_64 rng(episode_seed(c.seed, 0x7e7a0000ULL) ^ 0x5bd1e995ULL);
  std::vector<double> risks;
  risks.reserve(c.calibration_draws);
  for (std::size_t i = 0; i < c.calibration_draws; ++i) {
    const std::size_t steps = draw_steps(c, rng);
    risks.push_back(simulate_latent(c, steps, rng).risk);
  }
  std::sort(risks.begin(), risks.end());
  const auto k = static_cast<std::size_t>((1.0 - c.target_positive_rate) * static_cast<double>(risks.size()));
  return risks[std::min(k, risks.size() - 1)];
}

GeneratedEpisode generate_episode(const GeneratorConfig& c, std::size_t index, double theta) {
  std::mt19937_64 rng(episode_seed(c.seed, index));
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const ingest::Schema schema = c.schema();
  const double step_s = c.step_seconds();
  const double day = ingest::kSecondsPerDay;
  const double horizon_s = 24.0 * ingest::kSecondsPerHour;

  GeneratedEpisode out;
  const std::size_t steps = draw_steps(c, rng);
  out.latent = simulate_latent(c, steps, rng);
  const Latent& z = out.latent;
  out.positive = z.risk > theta;

  auto& ep = out.episode;
  char id[32];
  std::snprintf(id, sizeof id, "ep%05zu", index);
  ep.episode_id = id;
  ep.patient_id = "p" + std::string(id + 2);
  ep.baseline.age_years = std::round(10.0 * (c.min_age + (c.max_age - c.min_age) * unit(rng))) / 10.0;
  ep.baseline.gender = schema.genders[rng() % schema.genders.size()];
  ep.baseline.ethnicity = schema.ethnicities[rng() % schema.ethnicities.size()];

  const double window_end = static_cast<double>(c.window + 1) * step_s;
  double record = static_cast<double>(steps) * step_s;
  if (out.positive) {
    const double death = window_end + horizon_s * (1.0 - unit(rng));  // (end, end + 24 h]
    ep.outcome.death_time_s = death;
    ep.outcome.discharge_time_s = death;
    record = std::min(record, death);
  } else {
    double mean_sev = 0.0;
    for (std::size_t h = 1; h <= c.window; ++h) mean_sev += z.true_severity[h];
    mean_sev /= static_cast<double>(c.window);
    const double days = std::exp(c.los_log_mean + 0.3 * c.delta * mean_sev + c.los_log_sd * normal(rng));
    ep.outcome.discharge_time_s = std::max(window_end + days * day, record);
  }
  ep.record_length_s = record;

  // waveform: quasi-periodic pulse train modulated by observed severity
  ingest::Channel wave{schema.channels[0].name, ingest::ChannelKind::kWaveform, c.waveform_rate_hz, {}};
  const auto n_wave = static_cast<std::size_t>(std::floor(c.waveform_rate_hz * record + 1e-9));
  wave.samples.reserve(n_wave);
  const double dt = 1.0 / c.waveform_rate_hz;
  double phase = unit(rng);
  for (std::size_t i = 0; i < n_wave; ++i) {
    const std::size_t h = std::min(steps - 1, static_cast<std::size_t>(static_cast<double>(i) * dt / step_s));
    const double o = z.observed[h];
    const double period = 0.8 * (1.0 - 0.15 * std::tanh(o));
    const double amp = 1.0 + 0.3 * o;
    phase += dt / period;
    phase -= std::floor(phase);
    const double u = (phase - 0.3) / 0.05;
    wave.samples.push_back(quantize(amp * std::exp(-0.5 * u * u) - 0.1 + c.waveform_noise * normal(rng)));
  }
  ep.channels.push_back(std::move(wave));

  // vitals at one sample per minute with AR(1) measurement noise
  const double vital_rate = 1.0 / 60.0;
  const auto n_vital = static_cast<std::size_t>(std::floor(vital_rate * record + 1e-9));
  for (std::size_t v = 1; v < schema.channels.size(); ++v) {
    const auto& spec = schema.channels[v];
    ingest::Channel ch{spec.name, ingest::ChannelKind::kVital, vital_rate, {}};
    double e = c.vital_noise * normal(rng);
    for (std::size_t i = 0; i < n_vital; ++i) {
      const std::size_t h = std::min(steps - 1, static_cast<std::size_t>(static_cast<double>(i) * 60.0 / step_s));
      if (i > 0) e = 0.7 * e + std::sqrt(1.0 - 0.49) * c.vital_noise * normal(rng);
      ch.samples.push_back(quantize(spec.offset + spec.scale * (sign_of(v) * kLoading * z.observed[h] + e)));
    }
    ep.channels.push_back(std::move(ch));
  }

  std::uniform_int_distribution<std::size_t> pick_lab(0, schema.labs.size() - 1);
  for (std::size_t h = 0; h < steps; ++h) {
    const double t0 = static_cast<double>(h) * step_s;
    const double o = z.observed[h];
    for (std::size_t k = 0; k < schema.chart.size(); ++k) {
      if (unit(rng) >= c.chart_probability) continue;
      const auto& var = schema.chart[k];
      const double t = t0 + step_s * unit(rng);
      const double value = var.default_value + var.scale * (sign_of(k) * kLoading * o + c.chart_noise * normal(rng));
      if (t < record) ep.charts.push_back({t, var.name, quantize(value)});
    }
    const auto n_lab = poisson(c.lambda_lab, rng);
    for (std::uint32_t k = 0; k < n_lab; ++k) {
      const std::size_t li = pick_lab(rng);
      const auto& var = schema.labs[li];
      const double t = t0 + step_s * unit(rng);
      const double value = var.default_value + var.scale * (sign_of(li) * kLoading * o + c.lab_noise * normal(rng));
      if (t < record) ep.labs.push_back({t, var.name, quantize(value)});
    }
    for (std::uint32_t k = 0; k < z.interventions[h]; ++k) {
      const double t = t0 + step_s * unit(rng);
      const char* kind = kInterventionKinds[rng() % std::size(kInterventionKinds)];
      if (t < record) ep.interventions.push_back({t, kind});
    }
  }
  auto by_time = [](const auto& a, const auto& b) { return a.time_s < b.time_s; };
  std::stable_sort(ep.charts.begin(), ep.charts.end(), by_time);
  std::stable_sort(ep.labs.begin(), ep.labs.end(), by_time);
  std::stable_sort(ep.interventions.begin(), ep.interventions.end(), by_time);
  return out;
}

ingest::RawEpisode generate_episode(const GeneratorConfig& c, std::size_t index) {
  return generate_episode(c, index, calibrate_theta(c)).episode;
}

// ---------------------------------------------------------------------------
// Config echo

std::string config_to_json(const GeneratorConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["n_episodes"] = c.n_episodes;
  j["profile"] = c.profile == Profile::kFast ? "fast" : "paper";
  j["waveform_rate_hz"] = c.waveform_rate_hz;
  j["n_vitals"] = c.n_vitals;
  j["min_steps"] = c.min_steps;
  j["max_steps"] = c.max_steps;
  j["window"] = c.window;
  j["lambda_lab"] = c.lambda_lab;
  j["lambda_int"] = c.lambda_int;
  j["lambda_artifact"] = c.lambda_artifact;
  j["delta"] = c.delta;
  j["kappa"] = c.kappa;
  j["rho"] = c.rho;
  j["ar_phi"] = c.ar_phi;
  j["base_sd"] = c.base_sd;
  j["jump_min"] = c.jump_min;
  j["jump_max"] = c.jump_max;
  j["artifact_min"] = c.artifact_min;
  j["artifact_max"] = c.artifact_max;
  j["waveform_noise"] = c.waveform_noise;
  j["vital_noise"] = c.vital_noise;
  j["chart_noise"] = c.chart_noise;
  j["lab_noise"] = c.lab_noise;
  j["risk_noise"] = c.risk_noise;
  j["chart_probability"] = c.chart_probability;
  j["target_positive_rate"] = c.target_positive_rate;
  j["theta"] = std::isfinite(c.theta) ? json(c.theta) : json(nullptr);
  j["calibration_draws"] = c.calibration_draws;
  j["los_log_mean"] = c.los_log_mean;
  j["los_log_sd"] = c.los_log_sd;
  j["min_age"] = c.min_age;
  j["max_age"] = c.max_age;
  return j.dump();
}

GeneratorConfig config_from_json(const std::string& text) {
  GeneratorConfig c;
  try {
    const auto j = json::parse(text);
    const auto known = json::parse(config_to_json(c));
    for (const auto& [key, value] : j.items()) {
      if (!known.contains(key)) throw ConfigError("unknown generator key '" + key + "'");
    }
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("seed", c.seed);
    get("n_episodes", c.n_episodes);
    if (j.contains("profile")) {
      const auto p = j.at("profile").get<std::string>();
      if (p != "fast" && p != "paper") throw ConfigError("profile must be fast or paper, got '" + p + "'");
      c.profile = p == "fast" ? Profile::kFast : Profile::kPaper;
    }
    get("waveform_rate_hz", c.waveform_rate_hz);
    get("n_vitals", c.n_vitals);
    get("min_steps", c.min_steps);
    get("max_steps", c.max_steps);
    get("window", c.window);
    get("lambda_lab", c.lambda_lab);
    get("lambda_int", c.lambda_int);
    get("lambda_artifact", c.lambda_artifact);
    get("delta", c.delta);
    get("kappa", c.kappa);
    get("rho", c.rho);
    get("ar_phi", c.ar_phi);
    get("base_sd", c.base_sd);
    get("jump_min", c.jump_min);
    get("jump_max", c.jump_max);
    get("artifact_min", c.artifact_min);
    get("artifact_max", c.artifact_max);
    get("waveform_noise", c.waveform_noise);
    get("vital_noise", c.vital_noise);
    get("chart_noise", c.chart_noise);
    get("lab_noise", c.lab_noise);
    get("risk_noise", c.risk_noise);
    get("chart_probability", c.chart_probability);
    get("target_positive_rate", c.target_positive_rate);
    if (j.contains("theta")) c.theta = j.at("theta").is_null() ? NAN : j.at("theta").get<double>();
    get("calibration_draws", c.calibration_draws);
    get("los_log_mean", c.los_log_mean);
    get("los_log_sd", c.los_log_sd);
    get("min_age", c.min_age);
    get("max_age", c.max_age);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed generator config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string config_hash(const GeneratorConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char ch : config_to_json(c)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Cohorts

namespace {

struct Accumulator {
  CohortSummary s;
  double int_sum = 0.0, int_sq = 0.0, lab_sum = 0.0, step_sum = 0.0;

  void add(const GeneratedEpisode& g) {
    s.episodes++;
    if (g.positive) s.positives++;
    const double n = static_cast<double>(g.episode.interventions.size());
    int_sum += n;
    int_sq += n * n;
    lab_sum += static_cast<double>(g.episode.labs.size());
    step_sum += static_cast<double>(g.latent.base.size());
  }
  CohortSummary finish() {
    const double n = static_cast<double>(std::max<std::size_t>(s.episodes, 1));
    s.interventions_mean = int_sum / n;
    s.interventions_sd =
        s.episodes > 1 ? std::sqrt(std::max(0.0, (int_sq - int_sum * int_sum / n) / (n - 1.0))) : 0.0;
    s.labs_mean = lab_sum / n;
    s.steps_mean = step_sum / n;
    return s;
  }
};

bool is_cohort_file(const std::filesystem::path& p) {
  const auto name = p.filename().string();
  return name == "manifest.json" || (name.rfind("ep", 0) == 0 && p.extension() == ".json");
}

}  // namespace

CohortSummary generate_cohort(const GeneratorConfig& c, const std::filesystem::path& dir, bool force) {
  namespace fs = std::filesystem;
  c.validate();
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ConfigError("output path " + dir.string() + " is not a directory");
    std::vector<fs::path> existing;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (is_cohort_file(e.path())) existing.push_back(e.path());
    }
    if (!existing.empty() && !force) {
      throw ConfigError("output directory " + dir.string() + " already holds a cohort (" +
                        std::to_string(existing.size()) + " files); pass --force to overwrite");
    }
    for (const auto& p : existing) fs::remove(p);
  }
  fs::create_directories(dir);

  const double theta = calibrate_theta(c);
  Accumulator acc;
  json files = json::array();
  for (std::size_t i = 0; i < c.n_episodes; ++i) {
    auto g = generate_episode(c, i, theta);
    const std::string name = g.episode.episode_id + ".json";
    ingest::write_episode(g.episode, dir / name);
    files.push_back(name);
    acc.add(g);
  }
  CohortSummary s = acc.finish();
  s.theta = theta;
  s.config_hash = config_hash(c);

  json m;
  m["format"] = "raimkit-cohort";
  m["version"] = 1;
  m["config"] = json::parse(config_to_json(c));
  m["config_hash"] = s.config_hash;
  m["theta"] = theta;
  m["episodes"] = s.episodes;
  m["class_balance"] = {{"positives", s.positives},
                        {"negatives", s.episodes - s.positives},
                        {"positive_rate", s.episodes ? static_cast<double>(s.positives) / static_cast<double>(s.episodes) : 0.0}};
  m["events"] = {{"interventions_mean", s.interventions_mean},
                 {"interventions_sd", s.interventions_sd},
                 {"labs_mean", s.labs_mean},
                 {"steps_mean", s.steps_mean}};
  m["files"] = files;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
  out << m.dump(2) << "\n";
  return s;
}

ingest::Dataset generate_dataset(const GeneratorConfig& c, std::size_t waveform_bins,
                                 CohortSummary* summary) {
  c.validate();
  const double theta = calibrate_theta(c);
  auto icfg = c.ingest_config();
  icfg.waveform_bins = waveform_bins;
  const auto schema = c.schema();
  ingest::Dataset ds;
  Accumulator acc;
  for (std::size_t i = 0; i < c.n_episodes; ++i) {
    auto g = generate_episode(c, i, theta);
    ingest::add_episode(ds, g.episode, icfg, schema);
    acc.add(g);
  }
  if (summary) {
    *summary = acc.finish();
    summary->theta = theta;
    summary->config_hash = config_hash(c);
  }
  return ds;
}

}  // namespace raimkit::synthgen
