#pragma once

#include <cstddef>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "raimkit/ingest.hpp"

namespace raimkit::synthgen {

enum class Profile { kFast, kPaper };

/// Rates are per step. In the fast profile a one-minute step stands in for
/// one hour of latent dynamics, so the same rates serve both profiles.
struct GeneratorConfig {
  std::uint64_t seed = 7;
  std::size_t n_episodes = 2000;
  Profile profile = Profile::kFast;
  double waveform_rate_hz = 50.0;
  std::size_t n_vitals = 7;
  std::size_t min_steps = 13;   // record length in steps, drawn uniformly
  std::size_t max_steps = 16;
  std::size_t window = 12;      // steps per labeled window (after the 1-step discard)

  double lambda_lab = 0.5;
  double lambda_int = 0.15;
  double lambda_artifact = 0.5;
  double delta = 1.0;           // severity shift per intervention
  double kappa = 1.0;           // intervention response to severity
  double rho = 0.6;             // decay of intervention and artifact responses
  double ar_phi = 0.8;          // latent drift autocorrelation
  double base_sd = 0.3;         // stationary sd of the drift
  double jump_min = 0.5;
  double jump_max = 1.5;
  double artifact_min = 1.0;
  double artifact_max = 2.5;

  double waveform_noise = 0.2;
  double vital_noise = 0.5;
  double chart_noise = 0.5;
  double lab_noise = 0.5;
  double risk_noise = 0.5;
  double chart_probability = 0.7;  // chance each chart variable is recorded in a step

  double target_positive_rate = 0.114;
  double theta = NAN;           // decompensation threshold; NaN calibrates to the target rate
  std::size_t calibration_draws = 20000;

  double los_log_mean = 1.1;    // log-days
  double los_log_sd = 0.8;
  double min_age = 18.0;
  double max_age = 90.0;

  double step_seconds() const { return profile == Profile::kFast ? 60.0 : 3600.0; }
  ingest::IngestConfig ingest_config() const;
  ingest::Schema schema() const;
  void validate() const;
};

/// Preset for the slower 125 Hz, one-hour-step profile.
GeneratorConfig paper_profile();

/// Per-step latent state for steps 0..L-1 (step 0 is the discarded one).
struct Latent {
  std::vector<double> base;
  std::vector<double> effect;       // decaying sum of intervention jumps
  std::vector<double> artifact;     // decaying sum of artifact bursts
  std::vector<std::uint32_t> interventions;  // count per step
  std::vector<std::uint32_t> bursts;
  std::vector<double> true_severity;  // base + delta * effect
  std::vector<double> observed;     // true severity + artifacts; drives every signal
  double risk = 0.0;
};

struct GeneratedEpisode {
  ingest::RawEpisode episode;
  Latent latent;
  bool positive = false;
};

/// Derived per-episode seed: seed xor index, mixed.
std::uint64_t episode_seed(std::uint64_t seed, std::size_t index);

/// Latent trajectory and risk of one episode of `steps` steps.
Latent simulate_latent(const GeneratorConfig& config, std::size_t steps, std::mt19937_64& rng);

/// Threshold putting `target_positive_rate` of simulated risks above it.
double calibrate_theta(const GeneratorConfig& config);

/// Deterministic in (config, index). `theta` must come from calibrate_theta
/// unless the config fixes it.
GeneratedEpisode generate_episode(const GeneratorConfig& config, std::size_t index, double theta);
ingest::RawEpisode generate_episode(const GeneratorConfig& config, std::size_t index);

struct CohortSummary {
  std::size_t episodes = 0;
  std::size_t positives = 0;
  double theta = 0.0;
  double interventions_mean = 0.0;
  double interventions_sd = 0.0;
  double labs_mean = 0.0;
  double steps_mean = 0.0;
  std::string config_hash;
};

/// Canonical JSON echo of every generator field.
std::string config_to_json(const GeneratorConfig& config);
GeneratorConfig config_from_json(const std::string& text);
std::string config_hash(const GeneratorConfig& config);

/// Writes n episode files and manifest.json. Refuses to touch an existing
/// cohort unless `force`.
CohortSummary generate_cohort(const GeneratorConfig& config, const std::filesystem::path& dir,
                              bool force);

/// Generates and ingests in memory, skipping the episode files.
ingest::Dataset generate_dataset(const GeneratorConfig& config, std::size_t waveform_bins,
                                 CohortSummary* summary = nullptr);

}  // namespace raimkit::synthgen
