#include "raimkit/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "json.hpp"
#include "raimkit/errors.hpp"

namespace raimkit::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* what) {
  throw ConfigError("config key '" + key + "': expected " + what + ", got '" + value + "'");
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) bad_value(key, v, "a number");
    return out;
  } catch (const std::logic_error&) {
    bad_value(key, v, "a number");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "a boolean");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

template <typename T>
Field field(T RunConfig::*member) {
  Field f;
  f.get = [member](const RunConfig& c) -> std::string {
    const auto& v = c.*member;
    if constexpr (std::is_same_v<T, std::string>) return v;
    else if constexpr (std::is_same_v<T, bool>) return v ? "true" : "false";
    else if constexpr (std::is_same_v<T, double>) return fmt(v);
    else return std::to_string(v);
  };
  f.set = [member](RunConfig& c, const std::string& key, const std::string& v) {
    if constexpr (std::is_same_v<T, std::string>) c.*member = v;
    else if constexpr (std::is_same_v<T, bool>) c.*member = to_bool(key, v);
    else if constexpr (std::is_same_v<T, double>) c.*member = to_double(key, v);
    else if constexpr (std::is_same_v<T, std::uint64_t>) c.*member = to_u64(key, v);
    else c.*member = to_size(key, v);
  };
  return f;
}

Field choice(std::string RunConfig::*member, std::vector<std::string> allowed) {
  Field f = field(member);
  f.set = [member, allowed](RunConfig& c, const std::string& key, const std::string& v) {
    if (std::find(allowed.begin(), allowed.end(), v) == allowed.end()) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : "|") + a;
      bad_value(key, v, list.c_str());
    }
    c.*member = v;
  };
  return f;
}

const std::map<std::string, Field>& registry() {
  static const std::map<std::string, Field> fields = [] {
    std::map<std::string, Field> m;
    m["seed"] = field(&RunConfig::seed);
    m["out"] = field(&RunConfig::out);
    m["data.episodes"] = field(&RunConfig::data_episodes);
    m["data.dataset"] = field(&RunConfig::data_dataset);
    m["ingest.profile"] = choice(&RunConfig::ingest_profile, {"fast", "hourly"});
    m["ingest.window"] = field(&RunConfig::ingest_window);
    m["ingest.stride"] = field(&RunConfig::ingest_stride);
    m["ingest.waveform_bins"] = field(&RunConfig::ingest_waveform_bins);
    m["ingest.min_age"] = field(&RunConfig::ingest_min_age);
    m["ingest.skip_bad"] = field(&RunConfig::ingest_skip_bad);
    m["split.train_fraction"] = field(&RunConfig::split_train_fraction);
    m["split.validation_fraction"] = field(&RunConfig::split_validation_fraction);
    m["model.variant"] = field(&RunConfig::model_variant);
    m["model.task"] = field(&RunConfig::model_task);
    m["model.regression"] = field(&RunConfig::model_regression);
    m["model.d_emb"] = field(&RunConfig::model_d_emb);
    m["model.hidden"] = field(&RunConfig::model_hidden);
    m["model.layers"] = field(&RunConfig::model_layers);
    m["model.bidirectional"] = field(&RunConfig::model_bidirectional);
    m["model.n_lab"] = field(&RunConfig::model_n_lab);
    m["model.n_int"] = field(&RunConfig::model_n_int);
    m["model.guided_beta"] = field(&RunConfig::model_guided_beta);
    m["model.concat_input"] = field(&RunConfig::model_concat_input);
    m["model.guided_fallback"] = field(&RunConfig::model_guided_fallback);
    m["model.cnn_width"] = field(&RunConfig::model_cnn_width);
    m["model.cnn"] = choice(&RunConfig::model_cnn, {"desk", "paper"});
    m["train.epochs"] = field(&RunConfig::train_epochs);
    m["train.batch_size"] = field(&RunConfig::train_batch_size);
    m["train.learning_rate"] = field(&RunConfig::train_learning_rate);
    m["train.patience"] = field(&RunConfig::train_patience);
    m["predict.episode"] = field(&RunConfig::predict_episode);
    m["predict.window"] = field(&RunConfig::predict_window);
    m["predict.svg"] = field(&RunConfig::predict_svg);

    // generator.* keys mirror the generator's JSON echo
    const auto defaults = nlohmann::json::parse(synthgen::config_to_json(synthgen::GeneratorConfig{}));
    for (const auto& [name, value] : defaults.items()) {
      if (name == "seed") continue;  // `seed` drives the generator too
      Field f;
      f.get = [name](const RunConfig& c) {
        const auto j = nlohmann::json::parse(synthgen::config_to_json(c.generator));
        const auto& v = j.at(name);
        return v.is_string() ? v.get<std::string>() : v.dump();
      };
      f.set = [name](RunConfig& c, const std::string& key, const std::string& v) {
        auto j = nlohmann::json::parse(synthgen::config_to_json(c.generator));
        nlohmann::json parsed = nlohmann::json::parse(v, nullptr, false);
        if (parsed.is_discarded() || parsed.is_object() || parsed.is_array()) parsed = v;
        j[name] = parsed;
        try {
          c.generator = synthgen::config_from_json(j.dump());
        } catch (const ConfigError& e) {
          throw ConfigError("config key '" + key + "': " + e.what());
        } catch (const nlohmann::json::exception&) {
          bad_value(key, v, "a value of the right type");
        }
      };
      m["generator." + name] = std::move(f);
    }
    return m;
  }();
  return fields;
}

}  // namespace

KeyValues parse_key_values(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    kv.entries.emplace_back(std::move(key), trim(line.substr(eq + 1)));
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& reg = registry();
  auto it = reg.find(key);
  if (it == reg.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(*this, key, value);
}

void RunConfig::apply(const KeyValues& kv) {
  for (const auto& [k, v] : kv.entries) set(k, v);
}

std::string RunConfig::get(const std::string& key) const {
  const auto& reg = registry();
  auto it = reg.find(key);
  if (it == reg.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second.get(*this);
}

std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, f] : registry()) out.push_back(k);
  return out;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, f] : registry()) out += k + " = " + f.get(*this) + "\n";
  return out;
}

ingest::IngestConfig RunConfig::ingest_config() const {
  auto c = ingest_profile == "fast" ? ingest::IngestConfig::fast() : ingest::IngestConfig{};
  if (ingest_window == 0 || ingest_stride == 0) throw ConfigError("ingest.window and ingest.stride must be positive");
  // the minimum record keeps one full window after the discarded prefix
  const double step = c.step_hours;
  c.window = ingest_window;
  c.stride = ingest_stride;
  c.min_record_hours = c.discard_hours + step * static_cast<double>(ingest_window);
  c.min_age_years = ingest_min_age;
  c.waveform_bins = ingest_waveform_bins;
  return c;
}

std::filesystem::path write_resolved(const RunConfig& config, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto path = dir / "resolved_config.txt";
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << config.to_text();
  return path;
}

}  // namespace raimkit::config
