#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "raimkit/ingest.hpp"
#include "raimkit/model.hpp"

namespace raimkit::verify {

struct SuiteEntry {
  std::string name;
  double max_error = 0.0;
  bool passed = false;
  std::vector<std::string> failing;  // tensors whose gradients disagreed
};

struct SuiteReport {
  std::vector<SuiteEntry> entries;
  double tolerance = 0.0;

  bool passed() const;
  std::string to_json() const;
};

/// Finite-difference check of every differentiable primitive, the encoder
/// pieces and the tiny end-to-end RAIM-3 model.
SuiteReport gradcheck_suite(double tolerance = 1e-4, std::uint64_t seed = 1);

/// K=2 (one CNN, one linear channel), d_emb=4, |h|=8, W=4, two classes.
model::ModelConfig tiny_model_config(model::Variant variant = model::Variant::kRaim3);

/// Random window shaped for tiny_model_config, with the given event steps.
ingest::Sample tiny_sample(std::uint64_t seed, std::size_t steps, std::vector<std::size_t> lab_steps,
                           std::vector<std::size_t> intervention_steps);

}  // namespace raimkit::verify
