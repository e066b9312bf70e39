#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <fstream>

#include "json.hpp"
#include "raimkit/config.hpp"
#include "raimkit/errors.hpp"
#include "raimkit/metrics.hpp"
#include "raimkit/model.hpp"
#include "raimkit/ops.hpp"
#include "raimkit/pipeline.hpp"
#include "raimkit/synthgen.hpp"
#include "raimkit/verify.hpp"

namespace py = pybind11;
using namespace raimkit;
using nlohmann::json;

namespace {

using Settings = std::map<std::string, std::string>;

config::RunConfig resolve(const Settings& settings) {
  config::RunConfig c;
  for (const auto& [k, v] : settings) c.set(k, v);
  return c;
}

std::string generate(const std::string& out, const Settings& settings, bool force) {
  auto c = resolve(settings);
  auto gc = c.generator;
  gc.seed = c.seed;
  auto s = synthgen::generate_cohort(gc, out, force);
  return json{{"episodes", s.episodes},
              {"positives", s.positives},
              {"theta", s.theta},
              {"config_hash", s.config_hash},
              {"interventions_mean", s.interventions_mean}}
      .dump();
}

std::string ingest_dir(const std::string& episodes, const std::string& out, const Settings& settings) {
  auto c = resolve(settings);
  c.data_episodes = episodes;
  auto b = pipeline::ingest_episodes(c);
  pipeline::save_bundle(b, out);
  config::write_resolved(c, out);
  return b.dataset.report.to_json();
}

std::string train_dir(const std::string& dataset, const std::string& out, const Settings& settings) {
  auto c = resolve(settings);
  c.data_dataset = dataset;
  auto b = pipeline::load_bundle(dataset);
  std::filesystem::create_directories(out);
  config::write_resolved(c, out);
  pipeline::TrainRun run;
  {
    py::gil_scoped_release release;
    run = pipeline::train_run(c, b);
  }
  const auto ckpt = std::filesystem::path(out) / "model.ckpt";
  model::save_model(*run.model, ckpt, pipeline::training_context(c, b));
  return json{{"checkpoint", ckpt.string()},
              {"train_loss", run.result.train_loss},
              {"validation_loss", run.result.validation_loss},
              {"best_epoch", run.result.best_epoch},
              {"stopped_early", run.result.stopped_early},
              {"diverged", run.diverged},
              {"error", run.error},
              {"split", {{"train", run.split.train.size()},
                         {"validation", run.split.validation.size()},
                         {"test", run.split.test.size()}}}}
      .dump();
}

std::string evaluate(const std::string& checkpoint, const std::string& dataset) {
  auto loaded = model::load_model(checkpoint);
  std::string path = dataset;
  if (path.empty()) path = json::parse(loaded.context_json).value("dataset", std::string());
  if (path.empty()) throw ConfigError("no dataset given and the checkpoint does not name one");
  auto b = pipeline::load_bundle(path);
  const auto index = pipeline::test_index_from_context(loaded.context_json, b.dataset.samples);
  return pipeline::evaluate_model(*loaded.model, b.dataset.samples, index).to_json();
}

std::vector<std::string> predict(const std::string& checkpoint, const std::string& episode_path) {
  auto loaded = model::load_model(checkpoint);
  const auto ctx = json::parse(loaded.context_json);
  if (!ctx.contains("schema") || !ctx.contains("ingest")) {
    throw CompatibilityError("checkpoint lacks schema and ingest settings");
  }
  const auto schema = ingest::Schema::from_json(ctx.at("schema").dump());
  const auto icfg = pipeline::ingest_config_from_json(ctx.at("ingest").dump());
  const auto windows = ingest::window_episode(ingest::read_episode(episode_path), icfg, schema);
  if (windows.empty()) throw DataError("episode is shorter than one window or ineligible");
  std::vector<std::string> lines;
  for (const auto& w : windows) {
    for (auto& l : pipeline::prediction_lines(*loaded.model, ingest::assemble_sample(w, schema))) {
      lines.push_back(std::move(l));
    }
  }
  return lines;
}

std::string gradcheck(double tolerance, std::uint64_t seed, const std::string& inject) {
  if (!inject.empty()) ad::debug::inject_sign_flip(inject);
  auto r = verify::gradcheck_suite(tolerance, seed);
  ad::debug::clear_faults();
  return r.to_json();
}

}  // namespace

PYBIND11_MODULE(_raimkit, m) {
  m.doc() = "raimkit native core";

  auto base = py::register_exception<Error>(m, "RaimkitError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
  py::register_exception<CompatibilityError>(m, "CompatibilityError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());

  m.def("resolved_config", [](const Settings& s) { return resolve(s).to_text(); }, py::arg("settings"));
  m.def("generate", &generate, py::arg("out"), py::arg("settings"), py::arg("force") = false);
  m.def("ingest", &ingest_dir, py::arg("episodes"), py::arg("out"), py::arg("settings"));
  m.def("train", &train_dir, py::arg("dataset"), py::arg("out"), py::arg("settings"));
  m.def("evaluate", &evaluate, py::arg("checkpoint"), py::arg("dataset") = "");
  m.def("predict", &predict, py::arg("checkpoint"), py::arg("episode"));
  m.def("gradcheck", &gradcheck, py::arg("tolerance") = 1e-4, py::arg("seed") = 1, py::arg("inject") = "");

  m.def("auc_roc", [](std::vector<double> s, std::vector<int> y) { return metrics::auc_roc(s, y); });
  m.def("auc_pr", [](std::vector<double> s, std::vector<int> y) { return metrics::auc_pr(s, y); });
  m.def("accuracy", [](std::vector<double> s, std::vector<int> y, double cutoff) { return metrics::accuracy(s, y, cutoff); },
        py::arg("scores"), py::arg("labels"), py::arg("cutoff") = 0.5);
  m.def("cohen_kappa", [](std::vector<int> p, std::vector<int> t) { return metrics::cohen_kappa(p, t).value; });
}
