#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "raimkit/config.hpp"
#include "raimkit/ingest.hpp"
#include "raimkit/metrics.hpp"
#include "raimkit/model.hpp"

// Glue shared by the command line tool and the Python module.
namespace raimkit::pipeline {

std::string ingest_config_to_json(const ingest::IngestConfig& config);
ingest::IngestConfig ingest_config_from_json(const std::string& text);

/// Schema matching a cohort directory: the manifest's vital count if there is
/// one, else the default schema.
ingest::Schema schema_for_episodes(const std::filesystem::path& dir);

struct DatasetBundle {
  ingest::Dataset dataset;
  ingest::Schema schema;
  ingest::IngestConfig ingest;
};

/// Windows every episode under `data.episodes`. Throws DataError when no
/// episode yields a window.
DatasetBundle ingest_episodes(const config::RunConfig& config);

/// dataset.bin, dataset.jsonl, schema.json, ingest.json and report.json.
void save_bundle(const DatasetBundle& bundle, const std::filesystem::path& dir);
DatasetBundle load_bundle(const std::filesystem::path& dir);

model::ModelConfig model_config_for(const config::RunConfig& config, const DatasetBundle& bundle);

struct SplitPlan {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

/// Patient-level split seeded by `seed`; validation patients are drawn from
/// the training side with `seed + 1`.
SplitPlan plan_split(std::span<const ingest::Sample> samples, double train_fraction,
                     double validation_fraction, std::uint64_t seed);

struct TrainRun {
  std::unique_ptr<model::Model> model;
  model::TrainResult result;
  SplitPlan split;
  bool diverged = false;  // parameters hold the last completed epoch
  std::string error;
};

TrainRun train_run(const config::RunConfig& config, const DatasetBundle& bundle,
                   const std::function<void(std::size_t, double)>& on_epoch = {});

/// Checkpoint context: schema, ingest settings and split parameters.
std::string training_context(const config::RunConfig& config, const DatasetBundle& bundle);

/// Final-step metrics over `index`. LOS regression maps predicted days to
/// classes before scoring.
metrics::EvalReport evaluate_model(model::Model& model, std::span<const ingest::Sample> samples,
                                   std::span<const std::size_t> index);

/// The held-out windows recorded in a checkpoint context.
std::vector<std::size_t> test_index_from_context(const std::string& context_json,
                                                 std::span<const ingest::Sample> samples);

/// One JSON line per step with the prediction and attention payload.
std::vector<std::string> prediction_lines(model::Model& model, const ingest::Sample& sample);

/// Channels as rows and window steps as columns, shaded by the final-step
/// attention map. Weights in [0.01, 0.02) and [0.02, 0.07] get their own
/// outline levels.
std::string attention_svg(model::Model& model, const ingest::Sample& sample,
                          const std::vector<std::string>& channel_names);

}  // namespace raimkit::pipeline
