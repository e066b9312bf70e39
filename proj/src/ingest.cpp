#include "raimkit/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

#include "raimkit/checkpoint.hpp"
#include "raimkit/errors.hpp"
#include "raimkit/log.hpp"

namespace raimkit::ingest {

using json = nlohmann::ordered_json;

namespace {

constexpr double kTimeSlack = 1e-9;

const char* kind_name(ChannelKind kind) {
  return kind == ChannelKind::kWaveform ? "waveform" : "vital";
}

ChannelKind parse_kind(const std::string& s) {
  if (s == "waveform") return ChannelKind::kWaveform;
  if (s == "vital") return ChannelKind::kVital;
  throw DataError("unknown channel kind '" + s + "'");
}

std::string list_names(const std::vector<VariableSpec>& specs) {
  std::string out;
  for (const auto& s : specs) {
    if (!out.empty()) out += ", ";
    out += s.name;
  }
  return out;
}

std::unordered_map<std::string, std::size_t> index_of(const std::vector<VariableSpec>& specs) {
  std::unordered_map<std::string, std::size_t> m;
  for (std::size_t i = 0; i < specs.size(); ++i) m.emplace(specs[i].name, i);
  return m;
}

std::size_t samples_per_step(const Channel& ch, double step_seconds) {
  return static_cast<std::size_t>(std::llround(ch.rate_hz * step_seconds));
}

}  // namespace

// ---------------------------------------------------------------------------
// Episode validation and JSON

void validate(const RawEpisode& ep) {
  auto fail = [&](const std::string& what) {
    throw DataError("episode " + ep.episode_id + " rejected: " + what);
  };
  if (ep.episode_id.empty()) throw DataError("episode without id");
  if (!(ep.record_length_s > 0.0) || !std::isfinite(ep.record_length_s)) {
    fail("record length must be positive");
  }
  const double T = ep.record_length_s;
  auto in_range = [&](double ts) { return ts >= 0.0 && ts <= T + kTimeSlack; };
  for (const auto& ch : ep.channels) {
    if (ch.samples.empty()) fail("channel " + ch.name + " has no samples");
    if (!(ch.rate_hz > 0.0)) fail("channel " + ch.name + " has non-positive rate");
    const double expected = ch.rate_hz * T;
    const double tolerance = ch.rate_hz * kSecondsPerHour;
    if (std::abs(static_cast<double>(ch.samples.size()) - expected) > tolerance + 0.5) {
      fail("channel " + ch.name + " has " + std::to_string(ch.samples.size()) +
           " samples, expected about " + std::to_string(static_cast<long long>(expected)));
    }
  }
  for (const auto& r : ep.charts) {
    if (!in_range(r.time_s)) fail("chart record outside [0, T]");
  }
  for (const auto& e : ep.labs) {
    if (!in_range(e.time_s)) fail("lab event outside [0, T]");
  }
  for (const auto& e : ep.interventions) {
    if (!in_range(e.time_s)) fail("intervention event outside [0, T]");
  }
}

std::string episode_to_json(const RawEpisode& ep) {
  json j;
  j["format"] = "raimkit-episode";
  j["version"] = 1;
  j["episode_id"] = ep.episode_id;
  j["patient_id"] = ep.patient_id;
  j["record_length_s"] = ep.record_length_s;
  j["baseline"] = {{"age", ep.baseline.age_years},
                   {"gender", ep.baseline.gender},
                   {"ethnicity", ep.baseline.ethnicity}};
  json channels = json::array();
  for (const auto& ch : ep.channels) {
    channels.push_back({{"name", ch.name},
                        {"kind", kind_name(ch.kind)},
                        {"rate_hz", ch.rate_hz},
                        {"samples", ch.samples}});
  }
  j["channels"] = std::move(channels);
  json chart = json::array();
  for (const auto& r : ep.charts) chart.push_back(json::array({r.time_s, r.variable, r.value}));
  j["chart"] = std::move(chart);
  json labs = json::array();
  for (const auto& e : ep.labs) labs.push_back(json::array({e.time_s, e.name, e.value}));
  j["labs"] = std::move(labs);
  json ints = json::array();
  for (const auto& e : ep.interventions) ints.push_back(json::array({e.time_s, e.kind}));
  j["interventions"] = std::move(ints);
  json outcome;
  outcome["death_time_s"] = ep.outcome.death_time_s ? json(*ep.outcome.death_time_s) : json(nullptr);
  outcome["discharge_time_s"] = ep.outcome.discharge_time_s;
  j["outcome"] = std::move(outcome);
  return j.dump();
}

RawEpisode episode_from_json(const std::string& text) {
  RawEpisode ep;
  try {
    auto j = json::parse(text);
    if (j.value("format", std::string()) != "raimkit-episode") {
      throw DataError("not an episode file (format field missing or wrong)");
    }
    if (j.at("version").get<int>() != 1) {
      throw DataError("unsupported episode version " + j.at("version").dump());
    }
    ep.episode_id = j.at("episode_id").get<std::string>();
    ep.patient_id = j.value("patient_id", ep.episode_id);
    ep.record_length_s = j.at("record_length_s").get<double>();
    const auto& b = j.at("baseline");
    ep.baseline.age_years = b.at("age").get<double>();
    ep.baseline.gender = b.at("gender").get<std::string>();
    ep.baseline.ethnicity = b.at("ethnicity").get<std::string>();
    for (const auto& c : j.at("channels")) {
      Channel ch;
      ch.name = c.at("name").get<std::string>();
      ch.kind = parse_kind(c.at("kind").get<std::string>());
      ch.rate_hz = c.at("rate_hz").get<double>();
      ch.samples = c.at("samples").get<std::vector<double>>();
      ep.channels.push_back(std::move(ch));
    }
    for (const auto& r : j.at("chart")) {
      ep.charts.push_back({r.at(0).get<double>(), r.at(1).get<std::string>(), r.at(2).get<double>()});
    }
    for (const auto& r : j.at("labs")) {
      ep.labs.push_back({r.at(0).get<double>(), r.at(1).get<std::string>(), r.at(2).get<double>()});
    }
    for (const auto& r : j.at("interventions")) {
      ep.interventions.push_back({r.at(0).get<double>(), r.at(1).get<std::string>()});
    }
    const auto& o = j.at("outcome");
    if (!o.at("death_time_s").is_null()) ep.outcome.death_time_s = o.at("death_time_s").get<double>();
    ep.outcome.discharge_time_s = o.at("discharge_time_s").get<double>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed episode: ") + e.what());
  }
  return ep;
}

RawEpisode read_episode(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open episode file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return episode_from_json(ss.str());
}

void write_episode(const RawEpisode& ep, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write episode file " + path.string());
  out << episode_to_json(ep) << '\n';
}

// ---------------------------------------------------------------------------
// Schema

Schema Schema::defaults(std::size_t n_vitals) {
  Schema s;
  s.channels.push_back({"ecg", ChannelKind::kWaveform, 0.0, 1.0});
  static const std::vector<ChannelSpec> vitals = {
      {"hr", ChannelKind::kVital, 80.0, 15.0},     {"sbp", ChannelKind::kVital, 120.0, 20.0},
      {"dbp", ChannelKind::kVital, 70.0, 12.0},    {"mbp", ChannelKind::kVital, 85.0, 14.0},
      {"resp", ChannelKind::kVital, 18.0, 5.0},    {"spo2", ChannelKind::kVital, 97.0, 2.0},
      {"etco2", ChannelKind::kVital, 38.0, 5.0},
  };
  for (std::size_t i = 0; i < n_vitals; ++i) {
    ChannelSpec spec = vitals[i % vitals.size()];
    if (i >= vitals.size()) spec.name += "_" + std::to_string(i / vitals.size());
    s.channels.push_back(spec);
  }
  s.chart = {{"heart_rate", 80.0, 15.0}, {"resp_rate", 18.0, 5.0}, {"spo2", 97.0, 2.0},
             {"sbp", 120.0, 20.0},       {"gcs", 15.0, 3.0},       {"fio2", 0.21, 0.1}};
  s.labs = {{"glucose", 100.0, 30.0},   {"lactate", 1.5, 1.0},    {"creatinine", 1.0, 0.5},
            {"potassium", 4.2, 0.5},    {"sodium", 140.0, 4.0},   {"wbc", 8.0, 3.0},
            {"hemoglobin", 12.0, 2.0},  {"temperature", 37.0, 0.7}};
  s.genders = {"F", "M"};
  s.ethnicities = {"WHITE", "BLACK", "ASIAN", "HISPANIC", "OTHER"};
  return s;
}

Schema Schema::from_json(const std::string& text) {
  Schema s;
  try {
    auto j = json::parse(text);
    for (const auto& c : j.at("channels")) {
      s.channels.push_back({c.at("name").get<std::string>(), parse_kind(c.at("kind").get<std::string>()),
                            c.value("offset", 0.0), c.value("scale", 1.0)});
    }
    auto vars = [](const json& arr) {
      std::vector<VariableSpec> out;
      for (const auto& v : arr) {
        out.push_back({v.at("name").get<std::string>(), v.at("default").get<double>(),
                       v.value("scale", 1.0)});
      }
      return out;
    };
    s.chart = vars(j.at("chart"));
    s.labs = vars(j.at("labs"));
    s.genders = j.at("genders").get<std::vector<std::string>>();
    s.ethnicities = j.at("ethnicities").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed schema: ") + e.what());
  }
  for (const auto& c : s.channels) {
    if (!(c.scale > 0.0)) throw ConfigError("schema channel " + c.name + " needs a positive scale");
  }
  return s;
}

std::string Schema::to_json() const {
  json j;
  j["channels"] = json::array();
  for (const auto& c : channels) {
    j["channels"].push_back(
        {{"name", c.name}, {"kind", kind_name(c.kind)}, {"offset", c.offset}, {"scale", c.scale}});
  }
  auto vars = [](const std::vector<VariableSpec>& v) {
    json arr = json::array();
    for (const auto& s : v) arr.push_back({{"name", s.name}, {"default", s.default_value}, {"scale", s.scale}});
    return arr;
  };
  j["chart"] = vars(chart);
  j["labs"] = vars(labs);
  j["genders"] = genders;
  j["ethnicities"] = ethnicities;
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Step grid and per-step inputs

StepGrid StepGrid::for_episode(const RawEpisode& ep, const IngestConfig& config) {
  if (!(config.step_hours > 0.0)) throw ConfigError("ingest.step_hours must be positive");
  StepGrid g;
  g.step_seconds = config.step_hours * kSecondsPerHour;
  g.discard_steps = static_cast<std::size_t>(std::llround(config.discard_hours / config.step_hours));
  const auto full = static_cast<std::size_t>(std::floor(ep.record_length_s / g.step_seconds + kTimeSlack));
  g.n_steps = full > g.discard_steps ? full - g.discard_steps : 0;
  return g;
}

std::optional<std::size_t> StepGrid::step_of(double time_s) const {
  if (time_s < 0.0 || n_steps == 0) return std::nullopt;
  const auto absolute = static_cast<std::size_t>(std::floor(time_s / step_seconds));
  if (absolute < discard_steps) return std::nullopt;
  std::size_t t = absolute - discard_steps + 1;
  if (t > n_steps) {
    // an event exactly on the closing boundary belongs to the last step
    if (time_s <= step_end_s(n_steps) + kTimeSlack) return n_steps;
    return std::nullopt;
  }
  return t;
}

double StepGrid::step_end_s(std::size_t t) const {
  return static_cast<double>(discard_steps + t) * step_seconds;
}

std::vector<StepInput> segment_episode(const RawEpisode& ep, const StepGrid& grid) {
  std::vector<StepInput> steps(grid.n_steps);
  for (std::size_t t = 1; t <= grid.n_steps; ++t) {
    steps[t - 1].step = t;
    steps[t - 1].segments.reserve(ep.channels.size());
  }
  for (const auto& ch : ep.channels) {
    if (ch.samples.empty()) {
      throw DataError("episode " + ep.episode_id + " rejected: channel " + ch.name +
                      " has no samples");
    }
    const std::size_t per = samples_per_step(ch, grid.step_seconds);
    if (per == 0) {
      throw DataError("episode " + ep.episode_id + " rejected: channel " + ch.name +
                      " yields zero samples per step");
    }
    for (std::size_t t = 1; t <= grid.n_steps; ++t) {
      const std::size_t begin = (grid.discard_steps + t - 1) * per;
      std::vector<double> seg(per, 0.0);
      bool incomplete = false;
      for (std::size_t i = 0; i < per; ++i) {
        const std::size_t src = begin + i;
        if (src < ch.samples.size() && std::isfinite(ch.samples[src])) {
          seg[i] = ch.samples[src];
        } else {
          incomplete = true;
        }
      }
      steps[t - 1].segments.push_back(std::move(seg));
      steps[t - 1].incomplete.push_back(incomplete);
    }
  }
  return steps;
}

std::vector<std::vector<double>> aggregate_chart(std::span<const ChartRecord> records,
                                                 const StepGrid& grid, const Schema& schema) {
  const auto index = index_of(schema.chart);
  const std::size_t nv = schema.chart.size();
  std::vector<std::vector<std::vector<double>>> buckets(grid.n_steps, std::vector<std::vector<double>>(nv));
  for (const auto& r : records) {
    auto it = index.find(r.variable);
    if (it == index.end()) {
      throw DataError("unknown chart variable '" + r.variable + "'; schema has: " +
                      list_names(schema.chart));
    }
    auto t = grid.step_of(r.time_s);
    if (!t) continue;
    buckets[*t - 1][it->second].push_back(r.value);
  }
  std::vector<double> last(3 * nv);
  for (std::size_t v = 0; v < nv; ++v) {
    last[3 * v] = last[3 * v + 1] = last[3 * v + 2] = schema.chart[v].default_value;
  }
  std::vector<std::vector<double>> out(grid.n_steps);
  for (std::size_t t = 0; t < grid.n_steps; ++t) {
    for (std::size_t v = 0; v < nv; ++v) {
      const auto& obs = buckets[t][v];
      if (obs.empty()) continue;
      auto [lo, hi] = std::minmax_element(obs.begin(), obs.end());
      last[3 * v] = *lo;
      last[3 * v + 1] = std::accumulate(obs.begin(), obs.end(), 0.0) / static_cast<double>(obs.size());
      last[3 * v + 2] = *hi;
    }
    out[t] = last;
  }
  return out;
}

std::vector<double> build_lab_vector(std::span<const LabEvent> labs, std::size_t t,
                                     const StepGrid& grid, const Schema& schema) {
  const auto index = index_of(schema.labs);
  const std::size_t nl = schema.labs.size();
  std::vector<double> out(2 * nl, 0.0);
  std::vector<double> latest_time(nl, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < nl; ++i) out[i] = schema.labs[i].default_value;
  for (const auto& e : labs) {
    auto it = index.find(e.name);
    if (it == index.end()) {
      throw DataError("unknown lab '" + e.name + "'; schema has: " + list_names(schema.labs));
    }
    auto s = grid.step_of(e.time_s);
    if (!s || *s > t) continue;
    const std::size_t i = it->second;
    if (e.time_s >= latest_time[i]) {
      latest_time[i] = e.time_s;
      out[i] = e.value;
    }
    if (*s == t) out[nl + i] = 1.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Guidance

GuidanceMatrix::GuidanceMatrix(std::size_t t, std::size_t window) : t_(t), window_(window) {
  if (t == 0) throw ContractError("guidance matrix needs t >= 1");
  if (window == 0) throw ContractError("guidance window must be positive");
  columns_ = std::min(t, window);
  cells_.assign(2 * columns_, 0);
}

std::uint8_t GuidanceMatrix::at(std::size_t row, std::size_t j) const {
  if (row > 1 || j == 0 || j > columns_) {
    throw IndexError("guidance index (" + std::to_string(row) + ", " + std::to_string(j) +
                     ") outside 2 x " + std::to_string(columns_));
  }
  return cells_[row * columns_ + (j - 1)];
}

void GuidanceMatrix::set(std::size_t row, std::size_t j, std::uint8_t value) {
  if (row > 1 || j == 0 || j > columns_) {
    throw IndexError("guidance index (" + std::to_string(row) + ", " + std::to_string(j) +
                     ") outside 2 x " + std::to_string(columns_));
  }
  cells_[row * columns_ + (j - 1)] = value ? 1 : 0;
}

std::vector<std::uint8_t> GuidanceMatrix::row(std::size_t r) const {
  if (r > 1) throw IndexError("guidance row " + std::to_string(r));
  return {cells_.begin() + static_cast<std::ptrdiff_t>(r * columns_),
          cells_.begin() + static_cast<std::ptrdiff_t>((r + 1) * columns_)};
}

GuidanceMatrix build_guidance(std::span<const std::uint8_t> lab_steps,
                              std::span<const std::uint8_t> intervention_steps, std::size_t t,
                              std::size_t window) {
  GuidanceMatrix g(t, window);
  const std::size_t offset = t > window ? t - window : 0;
  for (std::size_t j = 1; j <= g.columns(); ++j) {
    const std::size_t k = offset + j - 1;  // 0-based step index
    if (k < lab_steps.size() && lab_steps[k]) g.set(0, j, 1);
    if (k < intervention_steps.size() && intervention_steps[k]) g.set(1, j, 1);
  }
  return g;
}

GuidanceMatrix build_guidance(std::span<const LabEvent> labs,
                              std::span<const InterventionEvent> interventions, std::size_t t,
                              std::size_t window, const StepGrid& grid) {
  std::vector<std::uint8_t> lab_steps(t, 0), int_steps(t, 0);
  for (const auto& e : labs) {
    if (auto s = grid.step_of(e.time_s); s && *s <= t) lab_steps[*s - 1] = 1;
  }
  for (const auto& e : interventions) {
    if (auto s = grid.step_of(e.time_s); s && *s <= t) int_steps[*s - 1] = 1;
  }
  return build_guidance(lab_steps, int_steps, t, window);
}

// ---------------------------------------------------------------------------
// Labels

int label_decompensation(const Outcome& outcome, double window_end_s, double horizon_hours) {
  if (!outcome.death_time_s) return 0;
  const double d = *outcome.death_time_s;
  return (d > window_end_s && d <= window_end_s + horizon_hours * kSecondsPerHour) ? 1 : 0;
}

int los_class_for_days(double r) {
  if (!(r > 0.0)) throw DataError("remaining stay must be positive, got " + std::to_string(r));
  if (r <= 7.0) return static_cast<int>(std::ceil(r));
  if (r <= 14.0) return 8;
  return 9;
}

int label_los(const Outcome& outcome, double window_end_s) {
  if (!(outcome.discharge_time_s > window_end_s)) {
    throw DataError("discharge at " + std::to_string(outcome.discharge_time_s) +
                    " s is not after window end " + std::to_string(window_end_s) + " s");
  }
  return los_class_for_days((outcome.discharge_time_s - window_end_s) / kSecondsPerDay);
}

// ---------------------------------------------------------------------------
// Windows

Eligibility check_eligibility(const RawEpisode& ep, const IngestConfig& config) {
  if (ep.record_length_s + kTimeSlack < config.min_record_hours * kSecondsPerHour) {
    return Eligibility::kTooShort;
  }
  if (ep.baseline.age_years < config.min_age_years) return Eligibility::kMinor;
  return Eligibility::kEligible;
}

IngestConfig IngestConfig::fast() {
  IngestConfig c;
  c.step_hours = 1.0 / 60.0;
  c.discard_hours = 1.0 / 60.0;
  c.min_record_hours = 13.0 / 60.0;
  return c;
}

std::vector<double> bin_segment(std::span<const double> segment, std::size_t bins) {
  if (bins == 0 || segment.size() < bins) {
    throw ConfigError("cannot bin a " + std::to_string(segment.size()) + "-sample segment into " +
                      std::to_string(bins) + " bins");
  }
  std::vector<double> out(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    const std::size_t lo = b * segment.size() / bins, hi = (b + 1) * segment.size() / bins;
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += segment[i];
    out[b] = s / static_cast<double>(hi - lo);
  }
  return out;
}

std::vector<LabeledWindow> window_episode(const RawEpisode& ep, const IngestConfig& config,
                                          const Schema& schema) {
  if (check_eligibility(ep, config) != Eligibility::kEligible) return {};
  if (config.window == 0 || config.stride == 0) throw ConfigError("window and stride must be positive");
  const StepGrid grid = StepGrid::for_episode(ep, config);
  if (grid.n_steps < config.window) return {};

  auto steps = segment_episode(ep, grid);
  if (config.waveform_bins > 0) {
    for (auto& st : steps) {
      for (std::size_t k = 0; k < ep.channels.size(); ++k) {
        if (ep.channels[k].kind == ChannelKind::kWaveform) {
          st.segments[k] = bin_segment(st.segments[k], config.waveform_bins);
        }
      }
    }
  }
  const auto chart = aggregate_chart(ep.charts, grid, schema);
  std::vector<std::uint8_t> lab_flags(grid.n_steps, 0), int_flags(grid.n_steps, 0);
  for (const auto& e : ep.labs) {
    if (auto s = grid.step_of(e.time_s)) lab_flags[*s - 1] = 1;
  }
  for (const auto& e : ep.interventions) {
    if (auto s = grid.step_of(e.time_s)) int_flags[*s - 1] = 1;
  }
  for (std::size_t t = 1; t <= grid.n_steps; ++t) {
    steps[t - 1].x_chart = chart[t - 1];
    steps[t - 1].x_lab = build_lab_vector(ep.labs, t, grid, schema);
  }

  std::vector<LabeledWindow> windows;
  const std::size_t W = config.window;
  for (std::size_t w = 0; w * config.stride + W <= grid.n_steps; ++w) {
    const std::size_t first = w * config.stride;  // 0-based
    LabeledWindow lw;
    lw.episode_id = ep.episode_id;
    lw.patient_id = ep.patient_id;
    lw.window_index = w;
    lw.end_time_s = grid.step_end_s(first + W);
    lw.baseline = ep.baseline;
    for (std::size_t k = 0; k < W; ++k) {
      StepInput s = steps[first + k];
      s.step = k + 1;
      lw.steps.push_back(std::move(s));
      lw.lab_steps.push_back(lab_flags[first + k]);
      lw.intervention_steps.push_back(int_flags[first + k]);
    }
    for (std::size_t tau = 1; tau <= W; ++tau) {
      lw.guidance.push_back(build_guidance(lw.lab_steps, lw.intervention_steps, tau, W));
    }
    lw.decompensation =
        label_decompensation(ep.outcome, lw.end_time_s, config.decompensation_horizon_hours);
    lw.los_class = label_los(ep.outcome, lw.end_time_s);
    lw.remaining_days = (ep.outcome.discharge_time_s - lw.end_time_s) / kSecondsPerDay;
    windows.push_back(std::move(lw));
  }
  return windows;
}

// ---------------------------------------------------------------------------
// Samples

std::vector<double> encode_baseline(const Baseline& b, const Schema& schema) {
  std::vector<double> out(schema.baseline_width(), 0.0);
  out[0] = (b.age_years - 60.0) / 20.0;
  auto one_hot = [&](const std::vector<std::string>& cats, const std::string& value,
                     std::size_t offset, const char* what) {
    auto it = std::find(cats.begin(), cats.end(), value);
    if (it == cats.end()) {
      log::warn_once(std::string("unknown ") + what + " category '" + value + "' encoded as zeros");
      return;
    }
    out[offset + static_cast<std::size_t>(it - cats.begin())] = 1.0;
  };
  one_hot(schema.genders, b.gender, 1, "gender");
  one_hot(schema.ethnicities, b.ethnicity, 1 + schema.genders.size(), "ethnicity");
  return out;
}

Sample assemble_sample(const LabeledWindow& lw, const Schema& schema) {
  const std::size_t T = lw.steps.size();
  if (T == 0) throw ContractError("empty window");
  const std::size_t K = lw.steps[0].segments.size();
  if (K != schema.channels.size()) {
    throw DataError("episode " + lw.episode_id + " has " + std::to_string(K) +
                    " channels, schema expects " + std::to_string(schema.channels.size()));
  }
  Sample s;
  s.episode_id = lw.episode_id;
  s.patient_id = lw.patient_id;
  s.window_index = lw.window_index;
  s.end_time_s = lw.end_time_s;
  s.lab_steps = lw.lab_steps;
  s.intervention_steps = lw.intervention_steps;
  s.decompensation = lw.decompensation;
  s.los_class = lw.los_class;
  s.remaining_days = lw.remaining_days;

  for (std::size_t k = 0; k < K; ++k) {
    const auto& spec = schema.channels[k];
    const std::size_t L = lw.steps[0].segments[k].size();
    std::vector<double> data;
    data.reserve(T * L);
    for (const auto& step : lw.steps) {
      for (double v : step.segments[k]) data.push_back((v - spec.offset) / spec.scale);
    }
    s.channels.emplace_back(ad::Shape{T, L}, std::move(data));
  }

  const std::size_t nc = schema.chart.size();
  const std::size_t nl = schema.labs.size();
  std::vector<double> feats;
  feats.reserve(T * schema.feature_width());
  for (const auto& step : lw.steps) {
    for (std::size_t v = 0; v < nc; ++v) {
      const auto& spec = schema.chart[v];
      for (std::size_t q = 0; q < 3; ++q) {
        feats.push_back((step.x_chart[3 * v + q] - spec.default_value) / spec.scale);
      }
    }
    for (std::size_t i = 0; i < nl; ++i) {
      const auto& spec = schema.labs[i];
      feats.push_back((step.x_lab[i] - spec.default_value) / spec.scale);
    }
    for (std::size_t i = 0; i < nl; ++i) feats.push_back(step.x_lab[nl + i]);
  }
  s.features = ad::Tensor(ad::Shape{T, schema.feature_width()}, std::move(feats));
  s.baseline = ad::Tensor::vector(encode_baseline(lw.baseline, schema));
  return s;
}

// ---------------------------------------------------------------------------
// Dataset

double IngestReport::positive_rate() const {
  return windows == 0 ? 0.0 : static_cast<double>(positives) / static_cast<double>(windows);
}

std::string IngestReport::to_json() const {
  json j;
  j["episodes"] = episodes;
  j["eligible"] = eligible;
  j["too_short"] = too_short;
  j["minors"] = minors;
  j["rejected"] = rejected;
  j["rejected_files"] = rejected_files;
  j["windows"] = windows;
  j["decompensation_positive_rate"] = positive_rate();
  json hist = json::object();
  for (const auto& [k, v] : los_histogram) hist[std::to_string(k)] = v;
  j["los_histogram"] = std::move(hist);
  return j.dump(2);
}

void add_episode(Dataset& ds, const RawEpisode& ep, const IngestConfig& config,
                 const Schema& schema) {
  validate(ep);
  ds.report.episodes += 1;
  switch (check_eligibility(ep, config)) {
    case Eligibility::kTooShort:
      ds.report.too_short += 1;
      return;
    case Eligibility::kMinor:
      ds.report.minors += 1;
      return;
    case Eligibility::kEligible:
      break;
  }
  ds.report.eligible += 1;
  for (const auto& lw : window_episode(ep, config, schema)) {
    ds.samples.push_back(assemble_sample(lw, schema));
    ds.report.windows += 1;
    ds.report.positives += static_cast<std::size_t>(lw.decompensation);
    ds.report.los_histogram[lw.los_class] += 1;
  }
}

Dataset ingest_directory(const std::filesystem::path& dir, const IngestConfig& config,
                         const Schema& schema, bool skip_bad) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("episode directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json" &&
        entry.path().filename() != "manifest.json") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  Dataset ds;
  for (const auto& f : files) {
    try {
      add_episode(ds, read_episode(f), config, schema);
    } catch (const DataError& e) {
      if (!skip_bad) throw DataError(f.filename().string() + ": " + e.what());
      log::warn("skipping " + f.filename().string() + ": " + e.what());
      ds.report.rejected += 1;
      ds.report.rejected_files.push_back(f.filename().string());
    }
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& tensors_path,
                  const std::filesystem::path& sidecar_path) {
  std::vector<ad::NamedTensor> tensors;
  std::ofstream side(sidecar_path);
  if (!side) throw DataError("cannot write " + sidecar_path.string());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    const std::string p = "w" + std::to_string(i) + ".";
    for (std::size_t k = 0; k < s.channels.size(); ++k) {
      tensors.push_back({p + "ch" + std::to_string(k), s.channels[k]});
    }
    tensors.push_back({p + "x", s.features});
    tensors.push_back({p + "b", s.baseline});
    const std::size_t T = s.length();
    std::vector<double> ev(2 * T);
    for (std::size_t t = 0; t < T; ++t) {
      ev[t] = s.lab_steps[t];
      ev[T + t] = s.intervention_steps[t];
    }
    tensors.push_back({p + "events", ad::Tensor(ad::Shape{2, T}, std::move(ev))});
    json line;
    line["index"] = i;
    line["episode_id"] = s.episode_id;
    line["patient_id"] = s.patient_id;
    line["window"] = s.window_index;
    line["end_time_s"] = s.end_time_s;
    line["channels"] = s.channels.size();
    line["decompensation"] = s.decompensation;
    line["los_class"] = s.los_class;
    line["remaining_days"] = s.remaining_days;
    side << line.dump() << '\n';
  }
  io::save_tensors(tensors_path, tensors, io::kDatasetMagic);
}

Dataset load_dataset(const std::filesystem::path& tensors_path,
                     const std::filesystem::path& sidecar_path) {
  auto stored = io::load_tensors(tensors_path, io::kDatasetMagic);
  std::unordered_map<std::string, ad::Tensor> by_name;
  for (auto& nt : stored) by_name.emplace(nt.name, nt.tensor);
  auto fetch = [&](const std::string& name) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("corrupt dataset: missing tensor " + name);
    return it->second;
  };

  std::ifstream side(sidecar_path);
  if (!side) throw DataError("cannot open " + sidecar_path.string());
  Dataset ds;
  std::string text;
  while (std::getline(side, text)) {
    if (text.empty()) continue;
    json line;
    try {
      line = json::parse(text);
    } catch (const json::exception& e) {
      throw FormatError(std::string("corrupt dataset sidecar: ") + e.what());
    }
    Sample s;
    const auto i = line.at("index").get<std::size_t>();
    const std::string p = "w" + std::to_string(i) + ".";
    s.episode_id = line.at("episode_id").get<std::string>();
    s.patient_id = line.at("patient_id").get<std::string>();
    s.window_index = line.at("window").get<std::size_t>();
    s.end_time_s = line.at("end_time_s").get<double>();
    s.decompensation = line.at("decompensation").get<int>();
    s.los_class = line.at("los_class").get<int>();
    s.remaining_days = line.at("remaining_days").get<double>();
    const auto nch = line.at("channels").get<std::size_t>();
    for (std::size_t k = 0; k < nch; ++k) s.channels.push_back(fetch(p + "ch" + std::to_string(k)));
    s.features = fetch(p + "x");
    s.baseline = fetch(p + "b");
    auto ev = fetch(p + "events");
    const std::size_t T = ev.dim(1);
    for (std::size_t t = 0; t < T; ++t) {
      s.lab_steps.push_back(ev[t] != 0.0 ? 1 : 0);
      s.intervention_steps.push_back(ev[T + t] != 0.0 ? 1 : 0);
    }
    ds.report.windows += 1;
    ds.report.positives += static_cast<std::size_t>(s.decompensation);
    ds.report.los_histogram[s.los_class] += 1;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

Split split_by_patient(std::span<const Sample> samples, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
    throw ConfigError("train fraction must be in (0, 1]");
  }
  std::set<std::string> unique;
  for (const auto& s : samples) unique.insert(s.patient_id);
  std::vector<std::string> patients(unique.begin(), unique.end());
  std::mt19937_64 rng(seed);
  std::shuffle(patients.begin(), patients.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(patients.size())));
  if (patients.size() >= 2 && train_fraction < 1.0) {
    n_train = std::clamp<std::size_t>(n_train, 1, patients.size() - 1);
  }
  std::set<std::string> train_set(patients.begin(), patients.begin() + static_cast<std::ptrdiff_t>(n_train));
  Split split;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    (train_set.count(samples[i].patient_id) ? split.train : split.test).push_back(i);
  }
  return split;
}

}  // namespace raimkit::ingest
