#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "raimkit/tensor.hpp"

namespace raimkit::ingest {

inline constexpr double kSecondsPerHour = 3600.0;
inline constexpr double kSecondsPerDay = 86400.0;

// ---------------------------------------------------------------------------
// Raw episodes

enum class ChannelKind { kWaveform, kVital };

struct Channel {
  std::string name;
  ChannelKind kind = ChannelKind::kWaveform;
  double rate_hz = 0.0;
  std::vector<double> samples;
};

struct Baseline {
  double age_years = 0.0;
  std::string gender;
  std::string ethnicity;
};

struct ChartRecord {
  double time_s = 0.0;
  std::string variable;
  double value = 0.0;
};

struct LabEvent {
  double time_s = 0.0;
  std::string name;
  double value = 0.0;
};

struct InterventionEvent {
  double time_s = 0.0;
  std::string kind;
};

struct Outcome {
  std::optional<double> death_time_s;
  double discharge_time_s = 0.0;
};

/// One ICU visit: aligned streams, discrete events, baseline and outcome.
struct RawEpisode {
  std::string episode_id;
  std::string patient_id;
  double record_length_s = 0.0;
  Baseline baseline;
  std::vector<Channel> channels;
  std::vector<ChartRecord> charts;
  std::vector<LabEvent> labs;
  std::vector<InterventionEvent> interventions;
  Outcome outcome;
};

/// Checks timestamp ranges and channel contents. Throws DataError.
void validate(const RawEpisode& episode);

RawEpisode read_episode(const std::filesystem::path& path);
void write_episode(const RawEpisode& episode, const std::filesystem::path& path);
std::string episode_to_json(const RawEpisode& episode);
RawEpisode episode_from_json(const std::string& text);

// ---------------------------------------------------------------------------
// Schema: variable lists, population defaults and standardization constants

struct VariableSpec {
  std::string name;
  double default_value = 0.0;  // population default before the first observation
  double scale = 1.0;          // standardized feature = (value - default) / scale
};

struct ChannelSpec {
  std::string name;
  ChannelKind kind = ChannelKind::kWaveform;
  double offset = 0.0;
  double scale = 1.0;
};

struct Schema {
  std::vector<ChannelSpec> channels;
  std::vector<VariableSpec> chart;
  std::vector<VariableSpec> labs;
  std::vector<std::string> genders;
  std::vector<std::string> ethnicities;

  /// One waveform channel ("ecg") and `n_vitals` minute-rate vitals.
  static Schema defaults(std::size_t n_vitals = 7);
  static Schema from_json(const std::string& text);
  std::string to_json() const;

  std::size_t chart_width() const { return 3 * chart.size(); }
  std::size_t lab_width() const { return 2 * labs.size(); }
  std::size_t feature_width() const { return chart_width() + lab_width(); }
  std::size_t baseline_width() const { return 1 + genders.size() + ethnicities.size(); }
};

struct IngestConfig {
  double step_hours = 1.0;
  double discard_hours = 1.0;
  std::size_t window = 12;       // W
  std::size_t stride = 12;       // non-overlapping by default
  double min_record_hours = 13.0;
  double min_age_years = 18.0;
  double decompensation_horizon_hours = 24.0;
  std::size_t waveform_bins = 0;  // block-mean waveform segments to this length; 0 keeps raw

  /// One-minute steps: the same step counts with minutes in place of hours.
  static IngestConfig fast();
};

// ---------------------------------------------------------------------------
// Step grid. Retained steps are numbered t = 1..n after the discarded prefix.

struct StepGrid {
  double step_seconds = kSecondsPerHour;
  std::size_t discard_steps = 1;
  std::size_t n_steps = 0;  // retained full steps

  static StepGrid for_episode(const RawEpisode& episode, const IngestConfig& config);
  /// 1-based retained step containing `time_s`, or nullopt if outside the grid.
  std::optional<std::size_t> step_of(double time_s) const;
  double step_end_s(std::size_t t) const;
};

struct StepInput {
  std::size_t step = 0;                        // 1-based retained step
  std::vector<std::vector<double>> segments;   // one raw segment per channel
  std::vector<bool> incomplete;                // segment had zero-filled samples
  std::vector<double> x_chart;                 // (min, mean, max) per chart variable
  std::vector<double> x_lab;                   // values then freshness flags
};

/// Block means of `segment` over `bins` near-equal consecutive ranges.
std::vector<double> bin_segment(std::span<const double> segment, std::size_t bins);

/// Splits every channel into per-step segments of round(rate * step) samples.
/// Throws DataError if a channel has no samples at all.
std::vector<StepInput> segment_episode(const RawEpisode& episode, const StepGrid& grid);

/// Per-step (min, mean, max) per schema variable with forward fill and
/// schema defaults before the first observation. Unknown variables throw.
std::vector<std::vector<double>> aggregate_chart(std::span<const ChartRecord> records,
                                                 const StepGrid& grid, const Schema& schema);

/// Lab values carried forward plus a flag for measurements inside step t.
std::vector<double> build_lab_vector(std::span<const LabEvent> labs, std::size_t t,
                                     const StepGrid& grid, const Schema& schema);

/// Binary 2 x min(t, W) matrix; row 0 marks lab steps, row 1 intervention
/// starts. Column j (1-based) is step max(t - W, 0) + j.
class GuidanceMatrix {
 public:
  GuidanceMatrix(std::size_t t, std::size_t window);

  std::size_t t() const { return t_; }
  std::size_t columns() const { return columns_; }
  std::size_t first_step() const { return t_ > window_ ? t_ - window_ + 1 : 1; }
  /// row in {0, 1}, j in [1, columns()]
  std::uint8_t at(std::size_t row, std::size_t j) const;
  void set(std::size_t row, std::size_t j, std::uint8_t value);
  std::vector<std::uint8_t> row(std::size_t r) const;

 private:
  std::size_t t_;
  std::size_t window_;
  std::size_t columns_;
  std::vector<std::uint8_t> cells_;
};

/// Guidance from per-step event flags (index 0 is step 1).
GuidanceMatrix build_guidance(std::span<const std::uint8_t> lab_steps,
                              std::span<const std::uint8_t> intervention_steps, std::size_t t,
                              std::size_t window);
GuidanceMatrix build_guidance(std::span<const LabEvent> labs,
                              std::span<const InterventionEvent> interventions, std::size_t t,
                              std::size_t window, const StepGrid& grid);

/// 1 iff death falls in (window_end, window_end + horizon].
int label_decompensation(const Outcome& outcome, double window_end_s, double horizon_hours = 24.0);
/// Remaining stay r days: ceil(r) for r <= 7, 8 for (7, 14], 9 beyond.
int label_los(const Outcome& outcome, double window_end_s);
int los_class_for_days(double remaining_days);

struct LabeledWindow {
  std::string episode_id;
  std::string patient_id;
  std::size_t window_index = 0;
  double end_time_s = 0.0;
  std::vector<StepInput> steps;
  std::vector<std::uint8_t> lab_steps;           // window-local event flags
  std::vector<std::uint8_t> intervention_steps;
  std::vector<GuidanceMatrix> guidance;          // G_tau for tau = 1..W
  Baseline baseline;
  int decompensation = 0;
  int los_class = 1;
  double remaining_days = 0.0;
};

enum class Eligibility { kEligible, kTooShort, kMinor };

Eligibility check_eligibility(const RawEpisode& episode, const IngestConfig& config);

/// Consecutive W-step windows after the discard, each labeled at its end.
/// Ineligible episodes yield an empty list.
std::vector<LabeledWindow> window_episode(const RawEpisode& episode, const IngestConfig& config,
                                          const Schema& schema);

// ---------------------------------------------------------------------------
// Model-ready samples

/// Standardized tensors for one window.
struct Sample {
  std::string episode_id;
  std::string patient_id;
  std::size_t window_index = 0;
  double end_time_s = 0.0;
  std::vector<ad::Tensor> channels;  // [T x segment_length] per channel
  ad::Tensor features;               // [T x (chart + lab)]
  ad::Tensor baseline;               // [baseline_width]
  std::vector<std::uint8_t> lab_steps;
  std::vector<std::uint8_t> intervention_steps;
  int decompensation = 0;
  int los_class = 1;
  double remaining_days = 0.0;

  std::size_t length() const { return lab_steps.size(); }
};

Sample assemble_sample(const LabeledWindow& window, const Schema& schema);
std::vector<double> encode_baseline(const Baseline& baseline, const Schema& schema);

struct IngestReport {
  std::size_t episodes = 0;
  std::size_t eligible = 0;
  std::size_t too_short = 0;
  std::size_t minors = 0;
  std::size_t rejected = 0;
  std::vector<std::string> rejected_files;
  std::size_t windows = 0;
  std::size_t positives = 0;
  std::map<int, std::size_t> los_histogram;

  double positive_rate() const;
  std::string to_json() const;
};

struct Dataset {
  std::vector<Sample> samples;
  IngestReport report;
};

/// Reads every episode file in `dir` (sorted by name). With skip_bad, malformed
/// files are recorded in the report instead of aborting.
Dataset ingest_directory(const std::filesystem::path& dir, const IngestConfig& config,
                         const Schema& schema, bool skip_bad);
void add_episode(Dataset& dataset, const RawEpisode& episode, const IngestConfig& config,
                 const Schema& schema);

/// Binary tensor container (dataset magic) plus a JSON-lines label sidecar.
void save_dataset(const Dataset& dataset, const std::filesystem::path& tensors_path,
                  const std::filesystem::path& sidecar_path);
Dataset load_dataset(const std::filesystem::path& tensors_path,
                     const std::filesystem::path& sidecar_path);

/// Deterministic split by patient id: `train_fraction` of shuffled patients.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
Split split_by_patient(std::span<const Sample> samples, double train_fraction, std::uint64_t seed);

}  // namespace raimkit::ingest
