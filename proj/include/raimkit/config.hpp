#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "raimkit/synthgen.hpp"

namespace raimkit::config {

/// Ordered `key = value` pairs. `#` starts a comment; blank lines are skipped.
struct KeyValues {
  std::vector<std::pair<std::string, std::string>> entries;
};

KeyValues parse_key_values(const std::string& text, const std::string& origin = "<config>");
KeyValues read_key_values(const std::filesystem::path& path);

/// Every setting any command reads. Keys are documented in docs/formats.md.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string out;

  std::string data_episodes;   // directory of episode files
  std::string data_dataset;    // directory written by `ingest`

  std::string ingest_profile = "fast";  // fast: one-minute steps; hourly: one-hour steps
  std::size_t ingest_window = 12;
  std::size_t ingest_stride = 12;
  std::size_t ingest_waveform_bins = 100;
  double ingest_min_age = 18.0;
  bool ingest_skip_bad = false;

  double split_train_fraction = 0.85;
  double split_validation_fraction = 0.0;  // carved from the training patients

  std::string model_variant = "raim3";
  std::string model_task = "decomp";
  bool model_regression = false;
  std::size_t model_d_emb = 32;
  std::size_t model_hidden = 32;
  std::size_t model_layers = 1;
  bool model_bidirectional = false;
  std::size_t model_n_lab = 2;
  std::size_t model_n_int = 2;
  bool model_guided_beta = true;
  bool model_concat_input = false;
  bool model_guided_fallback = false;
  std::size_t model_cnn_width = 4;
  std::string model_cnn = "desk";  // desk or paper layer stack

  std::size_t train_epochs = 10;
  std::size_t train_batch_size = 32;
  double train_learning_rate = 3e-3;
  std::size_t train_patience = 0;

  std::string predict_episode;
  std::size_t predict_window = 0;
  std::string predict_svg;

  synthgen::GeneratorConfig generator;

  /// Sets one key from its text form. Unknown keys and unparsable values
  /// throw ConfigError naming the key.
  void set(const std::string& key, const std::string& value);
  void apply(const KeyValues& kv);
  std::string get(const std::string& key) const;
  /// All keys in sorted order.
  std::vector<std::string> keys() const;
  /// Resolved `key = value` text covering every key.
  std::string to_text() const;

  ingest::IngestConfig ingest_config() const;
};

/// Writes the resolved config echo as `dir/resolved_config.txt`.
std::filesystem::path write_resolved(const RunConfig& config, const std::filesystem::path& dir);

}  // namespace raimkit::config
