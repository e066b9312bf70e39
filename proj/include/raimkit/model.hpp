#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "raimkit/attention.hpp"
#include "raimkit/embed.hpp"
#include "raimkit/ingest.hpp"
#include "raimkit/nn.hpp"

namespace raimkit::model {

enum class Variant { kCnnOnly, kCnnRnn, kCnnAttRnn, kRaim0, kRaim1, kRaim2, kRaim3 };
enum class Task { kDecompensation, kLengthOfStay };

Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);
Task parse_task(const std::string& name);
std::string task_name(Task t);
std::vector<Variant> all_variants();

bool uses_lab_guidance(Variant v);
bool uses_intervention_guidance(Variant v);

struct ModelConfig {
  Variant variant = Variant::kRaim3;
  Task task = Task::kDecompensation;
  bool regression = false;        // LOS only: predict remaining days
  std::size_t window = 12;        // W
  std::size_t n_lab = 2;          // N1
  std::size_t n_int = 2;          // N2
  std::size_t hidden = 32;
  std::size_t layers = 1;
  bool bidirectional = false;
  bool guided_beta = true;        // channel reweighting inside guided contexts
  bool concat_input = false;      // feed Z (+) a_t to the encoder
  bool guided_fallback = false;   // empty active set falls back to unguided attention
  embed::EmbedderConfig embedder;
  std::size_t feature_width = 0;  // |x|
  std::size_t baseline_width = 0; // |b|

  std::size_t classes() const;
  std::size_t encoder_input_width() const;
  void validate() const;
};

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

/// Desk-scale model for a schema: CNN on waveforms, linear on vitals.
ModelConfig desk_config(const ingest::Schema& schema, std::size_t waveform_length,
                        std::size_t vital_length, Variant variant, Task task);

struct LstmCell {
  ad::Tensor W;  // [4H x (in + H)], gate order i, f, g, o
  ad::Tensor b;  // [4H]
  std::size_t hidden = 0;
};

struct LstmState {
  ad::Tensor h;
  ad::Tensor c;
};

LstmCell make_lstm_cell(nn::ParamStore& store, const std::string& prefix, std::size_t input,
                        std::size_t hidden);
LstmState zero_state(std::size_t hidden);
LstmState lstm_step(const ad::Tensor& x, const LstmState& state, const LstmCell& cell);

/// Attention payload for one step, for export and inspection.
struct StepTrace {
  ad::Tensor alpha;   // time weights (CNN_ATT_RNN, RAIM0)
  ad::Tensor beta;    // channel weights
  ad::Tensor A;       // beta outer alpha
  ad::Tensor gamma_lab;
  ad::Tensor gamma_int;
  std::vector<std::size_t> active_lab;
  std::vector<std::size_t> active_int;
  std::optional<std::size_t> m;  // last intervention column
};

struct WindowOutput {
  std::vector<ad::Tensor> predictions;  // per step: probabilities or [1] regression value
  std::vector<ad::Tensor> hidden;       // per step encoder output
  std::vector<StepTrace> trace;         // empty unless requested
};

class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  nn::ParamStore& store() { return store_; }
  const nn::ParamStore& store() const { return store_; }

  std::vector<WindowOutput> forward(std::span<const ingest::Sample* const> batch, ad::Mode mode,
                                    bool trace = false);
  /// Mean over windows of the per-window loss summed over steps.
  ad::Tensor loss(std::span<const ingest::Sample* const> batch, ad::Mode mode);
  ad::Tensor window_loss(const WindowOutput& out, const ingest::Sample& sample) const;

  /// Final-step prediction: positive-class probability (binary), class
  /// distribution (multiclass) or predicted days (regression).
  std::vector<double> final_prediction(const ingest::Sample& sample);

 private:
  struct Head {
    ad::Tensor W_h, W_x, W_b, b;
  };

  WindowOutput encode(const ad::Tensor& embedded, const ingest::Sample& sample, bool trace);
  ad::Tensor predict_step(const ad::Tensor& h, const ad::Tensor& x, const ad::Tensor& b) const;

  ModelConfig config_;
  nn::ParamStore store_;
  std::optional<embed::Embedder> embedder_;
  attention::TimeParams time_;
  attention::ChannelParams channel_;
  attention::TimeParams lab_;
  attention::TimeParams int_;
  std::vector<LstmCell> forward_cells_;
  std::vector<LstmCell> backward_cells_;
  Head head_;
};

/// Writes parameters and buffers to `path` and the model config, plus the
/// caller's `context_json` object, to the sidecar `path` + ".json".
void save_model(const Model& model, const std::filesystem::path& path,
                const std::string& context_json = "{}");

struct LoadedModel {
  std::unique_ptr<Model> model;
  std::string context_json;
};

/// Rebuilds the model from the sidecar and loads its tensors. A missing or
/// unreadable sidecar is a CompatibilityError.
LoadedModel load_model(const std::filesystem::path& path);
std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);

/// Sum over steps of cross-entropy against `label` (or squared error).
ad::Tensor sequence_loss(std::span<const ad::Tensor> predictions, std::size_t label);
ad::Tensor sequence_squared_error(std::span<const ad::Tensor> predictions, double target);

/// Integer target of a sample for the configured task (0-based class).
std::size_t target_class(const ingest::Sample& sample, Task task);

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 3e-3;
  std::uint64_t seed = 1;
  std::size_t patience = 0;  // 0 disables early stopping
};

struct TrainResult {
  std::vector<double> train_loss;       // mean window loss per epoch
  std::vector<double> validation_loss;  // empty without a validation set
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

/// Mini-batch Adam over seeded shuffles. On a non-finite loss the parameters
/// are restored to the last completed epoch and NumericalError is thrown.
TrainResult train(Model& model, std::span<const ingest::Sample> samples,
                  std::span<const std::size_t> train_index,
                  std::span<const std::size_t> validation_index, const TrainConfig& config,
                  const std::function<void(std::size_t, double)>& on_epoch = {});

/// Mean window loss in eval mode.
double evaluate_loss(Model& model, std::span<const ingest::Sample> samples,
                     std::span<const std::size_t> index);

/// Final-step predictions for many windows, fanned out over worker threads.
std::vector<std::vector<double>> predict_all(Model& model, std::span<const ingest::Sample> samples,
                                             std::span<const std::size_t> index,
                                             std::size_t threads = 0);

/// Worker count from RAIMKIT_THREADS, else hardware concurrency.
std::size_t worker_threads();

}  // namespace raimkit::model
