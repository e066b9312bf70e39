// raimkit: generate, ingest, train, evaluate, predict, gradcheck.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "raimkit/config.hpp"
#include "raimkit/errors.hpp"
#include "raimkit/log.hpp"
#include "raimkit/ops.hpp"
#include "raimkit/pipeline.hpp"
#include "raimkit/synthgen.hpp"
#include "raimkit/verify.hpp"

using namespace raimkit;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kFailed = 1, kConfig = 2, kData = 3, kNumerical = 4, kCompat = 5 };

struct Options {
  std::string config_file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;  // config key -> value
  std::vector<std::string> checkpoints;
  std::string inject;
  double tolerance = 1e-4;
  bool force = false;
};

config::RunConfig resolve(const Options& o) {
  config::RunConfig c;
  if (!o.config_file.empty()) c.apply(config::read_key_values(o.config_file));
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    c.set(s.substr(0, eq), s.substr(eq + 1));
  }
  for (const auto& [k, v] : o.flags) c.set(k, v);
  return c;
}

fs::path out_dir(const config::RunConfig& c, const char* fallback) {
  return c.out.empty() ? fs::path(fallback) : fs::path(c.out);
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

int cmd_generate(const config::RunConfig& c, const Options& o) {
  auto gc = c.generator;
  gc.seed = c.seed;
  const auto dir = out_dir(c, "cohort");
  auto s = synthgen::generate_cohort(gc, dir, o.force);
  std::cout << "episodes      " << s.episodes << "\n"
            << "positives     " << s.positives << " (" << std::fixed << std::setprecision(3)
            << (s.episodes ? static_cast<double>(s.positives) / static_cast<double>(s.episodes) : 0.0) << ")\n"
            << "interventions " << s.interventions_mean << " per episode\n"
            << "theta         " << s.theta << "\n"
            << "config_hash   " << s.config_hash << "\n"
            << "written to    " << dir.string() << "\n";
  return kOk;
}

int cmd_ingest(const config::RunConfig& c) {
  auto b = pipeline::ingest_episodes(c);
  const auto dir = out_dir(c, "dataset");
  pipeline::save_bundle(b, dir);
  config::write_resolved(c, dir);
  const auto& r = b.dataset.report;
  std::cout << "episodes   " << r.episodes << " (eligible " << r.eligible << ", too short " << r.too_short
            << ", under age " << r.minors << ", rejected " << r.rejected << ")\n"
            << "windows    " << r.windows << "\n"
            << "positive   " << std::fixed << std::setprecision(4) << r.positive_rate() << "\n"
            << "los classes";
  for (const auto& [k, n] : r.los_histogram) std::cout << " " << k << ":" << n;
  std::cout << "\n";
  for (const auto& f : r.rejected_files) std::cout << "rejected   " << f << "\n";
  return kOk;
}

int cmd_train(config::RunConfig c) {
  if (c.data_dataset.empty()) throw ConfigError("data.dataset is not set (use --dataset)");
  auto b = pipeline::load_bundle(c.data_dataset);
  const auto dir = out_dir(c, "run");
  fs::create_directories(dir);
  config::write_resolved(c, dir);
  auto run = pipeline::train_run(c, b, [](std::size_t epoch, double loss) {
    log::info("epoch " + std::to_string(epoch) + " loss " + std::to_string(loss));
  });
  std::ostringstream csv;
  csv << "epoch,train_loss,validation_loss\n";
  csv << std::setprecision(17);
  for (std::size_t e = 0; e < run.result.train_loss.size(); ++e) {
    csv << e + 1 << "," << run.result.train_loss[e] << ",";
    if (e < run.result.validation_loss.size()) csv << run.result.validation_loss[e];
    csv << "\n";
  }
  write_file(dir / "loss_curve.csv", csv.str());
  model::save_model(*run.model, dir / "model.ckpt", pipeline::training_context(c, b));
  std::cout << "checkpoint " << (dir / "model.ckpt").string() << "\n"
            << "windows    train " << run.split.train.size() << ", validation " << run.split.validation.size()
            << ", test " << run.split.test.size() << "\n";
  if (run.diverged) {
    std::cerr << "error: " << run.error << "\n";
    return kNumerical;
  }
  if (!run.result.train_loss.empty()) std::cout << "final loss " << run.result.train_loss.back() << "\n";
  return kOk;
}

json report_row(const std::string& ckpt, const model::Model& m, const metrics::EvalReport& r) {
  auto j = json::parse(r.to_json());
  j["checkpoint"] = ckpt;
  j["variant"] = model::variant_name(m.config().variant);
  return j;
}

std::string opt(const std::optional<double>& v) {
  if (!v) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << *v;
  return os.str();
}

int cmd_evaluate(const config::RunConfig& c, const Options& o) {
  if (o.checkpoints.empty()) throw ConfigError("evaluate needs at least one --checkpoint");
  std::optional<pipeline::DatasetBundle> bundle;
  std::string bundle_path;
  json rows = json::array();
  std::ostringstream table;
  table << std::left << std::setw(14) << "variant" << std::setw(10) << "AUC-ROC" << std::setw(10) << "AUC-PR"
        << std::setw(10) << "accuracy" << std::setw(10) << "kappa" << "\n";
  for (const auto& ckpt : o.checkpoints) {
    auto loaded = model::load_model(ckpt);
    auto& m = *loaded.model;
    if (o.flags.count("model.task") && model::parse_task(c.model_task) != m.config().task) {
      throw CompatibilityError("checkpoint " + ckpt + " has a " + model::task_name(m.config().task) +
                               " head but --task " + c.model_task + " was requested");
    }
    const auto ctx = json::parse(loaded.context_json);
    std::string path = c.data_dataset;
    if (path.empty()) path = ctx.value("dataset", std::string());
    if (path.empty()) throw ConfigError("data.dataset is not set and the checkpoint does not name one");
    if (!bundle || bundle_path != path) {
      bundle = pipeline::load_bundle(path);
      bundle_path = path;
    }
    if (ctx.contains("schema") && json::parse(bundle->schema.to_json()) != ctx.at("schema")) {
      throw CompatibilityError("dataset " + path + " was ingested with a different schema than " + ckpt);
    }
    const auto index = pipeline::test_index_from_context(loaded.context_json, bundle->dataset.samples);
    if (index.empty()) throw DataError("held-out split of " + path + " is empty");
    auto r = pipeline::evaluate_model(m, bundle->dataset.samples, index);
    rows.push_back(report_row(ckpt, m, r));
    table << std::setw(14) << model::variant_name(m.config().variant) << std::setw(10) << opt(r.auc_roc)
          << std::setw(10) << opt(r.auc_pr) << std::setw(10) << opt(r.accuracy) << std::setw(10)
          << opt(r.kappa) << "\n";
  }
  const auto dir = out_dir(c, "evaluation");
  fs::create_directories(dir);
  if (rows.size() == 1) {
    write_file(dir / "evaluation.json", rows[0].dump(2) + "\n");
    std::cout << rows[0].dump(2) << "\n";
  } else {
    write_file(dir / "comparison.json", json{{"rows", rows}}.dump(2) + "\n");
    std::cout << table.str();
  }
  return kOk;
}

int cmd_predict(const config::RunConfig& c, const Options& o) {
  if (o.checkpoints.size() != 1) throw ConfigError("predict needs exactly one --checkpoint");
  if (c.predict_episode.empty()) throw ConfigError("predict.episode is not set (use --episode)");
  auto loaded = model::load_model(o.checkpoints.front());
  const auto ctx = json::parse(loaded.context_json);
  if (!ctx.contains("schema") || !ctx.contains("ingest")) {
    throw CompatibilityError("checkpoint lacks the schema and ingest settings needed for prediction");
  }
  const auto schema = ingest::Schema::from_json(ctx.at("schema").dump());
  const auto icfg = pipeline::ingest_config_from_json(ctx.at("ingest").dump());
  const auto episode = ingest::read_episode(c.predict_episode);
  ingest::validate(episode);
  const auto windows = ingest::window_episode(episode, icfg, schema);
  if (windows.empty()) {
    throw DataError("episode " + episode.episode_id + " is shorter than one window or ineligible");
  }
  const auto dir = out_dir(c, "prediction");
  fs::create_directories(dir);
  std::string lines;
  std::vector<ingest::Sample> samples;
  for (const auto& w : windows) {
    samples.push_back(ingest::assemble_sample(w, schema));
    for (const auto& l : pipeline::prediction_lines(*loaded.model, samples.back())) lines += l + "\n";
  }
  write_file(dir / "predictions.jsonl", lines);
  std::cout << "windows " << windows.size() << ", lines written to " << (dir / "predictions.jsonl").string() << "\n";
  if (!c.predict_svg.empty()) {
    if (c.predict_window >= samples.size()) {
      throw ConfigError("predict.window " + std::to_string(c.predict_window) + " but the episode has " +
                        std::to_string(samples.size()) + " windows");
    }
    std::vector<std::string> names;
    for (const auto& ch : schema.channels) names.push_back(ch.name);
    write_file(c.predict_svg, pipeline::attention_svg(*loaded.model, samples[c.predict_window], names));
    std::cout << "svg " << c.predict_svg << "\n";
  }
  return kOk;
}

int cmd_gradcheck(const config::RunConfig& c, const Options& o) {
  if (!o.inject.empty()) ad::debug::inject_sign_flip(o.inject);
  auto r = verify::gradcheck_suite(o.tolerance, c.seed);
  ad::debug::clear_faults();
  for (const auto& e : r.entries) {
    std::cout << (e.passed ? "ok   " : "FAIL ") << std::left << std::setw(24) << e.name << " max error "
              << std::scientific << std::setprecision(2) << e.max_error;
    if (!e.failing.empty()) {
      std::cout << "  failing:";
      for (const auto& n : e.failing) std::cout << " " << n;
    }
    std::cout << "\n";
  }
  if (!c.out.empty()) write_file(fs::path(c.out) / "gradcheck.json", r.to_json() + "\n");
  std::cout << (r.passed() ? "all checks passed" : "gradient check FAILED") << "\n";
  return r.passed() ? kOk : kFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"raimkit: multimodal ICU time-series models with guided attention"};
  app.require_subcommand(1);
  Options o;

  auto flag = [&](CLI::App* sub, const std::string& name, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(name, [&o, key](const std::string& v) { o.flags[key] = v; }, help);
  };
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_file, "key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--set", o.sets, "override one config key (key=value), repeatable");
    flag(sub, "--seed", "seed", "random seed");
    flag(sub, "--out", "out", "output directory");
  };

  auto* gen = app.add_subcommand("generate", "write a synthetic cohort");
  common(gen);
  flag(gen, "--n", "generator.n_episodes", "number of episodes");
  gen->add_flag("--force", o.force, "overwrite an existing cohort");

  auto* ing = app.add_subcommand("ingest", "window episodes into a dataset");
  common(ing);
  flag(ing, "--episodes", "data.episodes", "episode directory");
  ing->add_flag_callback("--skip-bad", [&o] { o.flags["ingest.skip_bad"] = "true"; },
                         "skip malformed episode files");

  auto* tr = app.add_subcommand("train", "train one model variant");
  common(tr);
  flag(tr, "--dataset", "data.dataset", "dataset directory from ingest");
  flag(tr, "--variant", "model.variant", "cnn_only|cnn_rnn|cnn_att_rnn|raim0..raim3");
  flag(tr, "--task", "model.task", "decomp|los");
  flag(tr, "--epochs", "train.epochs", "training epochs");

  auto* ev = app.add_subcommand("evaluate", "score checkpoints on their held-out split");
  common(ev);
  flag(ev, "--dataset", "data.dataset", "dataset directory (defaults to the one used in training)");
  flag(ev, "--task", "model.task", "expected task head");
  ev->add_option("--checkpoint", o.checkpoints, "checkpoint file, repeatable")->required();

  auto* pr = app.add_subcommand("predict", "per-step predictions and attention export");
  common(pr);
  pr->add_option("--checkpoint", o.checkpoints, "checkpoint file")->required();
  flag(pr, "--episode", "predict.episode", "episode JSON file");
  flag(pr, "--window", "predict.window", "window drawn in the SVG (0-based)");
  flag(pr, "--svg", "predict.svg", "SVG output path");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  common(gc);
  gc->add_option("--tolerance", o.tolerance, "max relative error");
  gc->add_option("--inject-sign-flip", o.inject, "flip the sign of one op's backward rule");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    model::worker_threads();  // validates RAIMKIT_THREADS up front
    const auto c = resolve(o);
    if (gen->parsed()) return cmd_generate(c, o);
    if (ing->parsed()) return cmd_ingest(c);
    if (tr->parsed()) return cmd_train(c);
    if (ev->parsed()) return cmd_evaluate(c, o);
    if (pr->parsed()) return cmd_predict(c, o);
    if (gc->parsed()) return cmd_gradcheck(c, o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const CompatibilityError& e) {
    std::cerr << "compatibility error: " << e.what() << "\n";
    return kCompat;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kFailed;
}
