// Command-line runner: gen, train, sweep, verify, report, print-defaults.
//
// Exit codes: 0 ok, 1 invalid input, 2 numeric failure, 3 verification failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "bcpkd/experiment.hpp"
#include "bcpkd/report.hpp"
#include "bcpkd/teachers.hpp"
#include "bcpkd/verify.hpp"

namespace fs = std::filesystem;
using namespace bcpkd;

namespace {

enum Exit { kOk = 0, kInvalid = 1, kNumeric = 2, kVerification = 3 };

PreparedData load_prepared(const ExperimentConfig& cfg, const std::string& data_path) {
  return prepare_data(load_dataset(data_path), cfg.task);
}

void save_teachers(const TeacherRegistry& reg, const fs::path& dir) {
  auto it = reg.teachers.find("teacher");
  if (it == reg.teachers.end()) return;
  fs::create_directories(dir);
  if (const auto* det = std::get_if<DeterministicTeacher>(&it->second))
    save_checkpoint((dir / "teacher.bin").string(), det->params);
  else if (const auto* ens = std::get_if<EnsembleTeacher>(&it->second))
    save_ensemble((dir / "ensemble.txt").string(), *ens);
}

int cmd_gen(const std::string& config_path, const std::string& out) {
  const auto cfg = load_experiment(config_path);
  const auto ds = generate_task_data(cfg.task);
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  save_dataset(out, ds);
  std::cout << "wrote " << out << " (" << ds.size() << " samples)\n";
  std::cout << "bayes_risk = " << format_double(bayes_risk(ds)) << '\n';
  return kOk;
}

int cmd_train(const std::string& config_path, const std::string& data_path, const std::string& out) {
  const auto cfg = load_experiment(config_path);
  const auto data = load_prepared(cfg, data_path);
  fs::create_directories(out);
  const auto teachers = build_teachers(cfg, data.train);
  save_teachers(teachers, fs::path(out) / "teacher");
  const auto run = run_single(cfg, data, &teachers, cfg.training.seed);
  save_trace_csv((fs::path(out) / "trace.csv").string(), run.result.trace);
  save_checkpoint((fs::path(out) / "model.bin").string(), run.result.params);
  write_key_values((fs::path(out) / "summary.txt").string(), run_summary(cfg, data, run));
  std::cout << "bayes_risk = " << format_double(data.bayes_risk) << '\n';
  if (run.result.failure) {
    std::cerr << "numeric failure at iteration " << run.result.failure_iteration.value_or(0) << ": "
              << *run.result.failure << " (partial trace kept)\n";
    return kNumeric;
  }
  std::cout << "final gen_error = " << format_double(run.metrics->final.gen_error)
            << ", accuracy = " << format_double(run.metrics->final.accuracy)
            << ", avg_gap = " << format_double(run.metrics->avg_gap) << '\n';
  return kOk;
}

int cmd_sweep(const std::string& config_path, const std::string& data_path, const std::string& out,
              std::size_t workers) {
  const auto cfg = load_experiment(config_path);
  if (!cfg.sweep) throw ConfigError(config_path + ": sweep needs a [sweep] table");
  const auto data = load_prepared(cfg, data_path);
  const auto result = run_sweep(cfg, data, workers);
  const fs::path dir(out);
  fs::create_directories(dir / "runs");
  {
    std::ofstream os(dir / "summary.csv");
    if (!os) throw IoError("cannot write summary.csv");
    write_sweep_csv(os, result);
  }
  write_key_values((dir / "summary.txt").string(), sweep_summary(cfg, result));
  std::size_t failed = 0;
  for (const auto& run : result.runs) {
    const auto name = "p" + std::to_string(run.point) + "_s" + std::to_string(run.seed_index);
    fs::create_directories(dir / "runs" / name);
    save_trace_csv((dir / "runs" / name / "trace.csv").string(), run.output.result.trace);
    auto point_cfg = apply_sweep_value(cfg, result.parameter, result.points[run.point].value);
    point_cfg.training.seed = run.seed;
    write_key_values((dir / "runs" / name / "summary.txt").string(), run_summary(point_cfg, data, run.output));
    failed += run.output.result.failure ? 1 : 0;
  }
  std::cout << "wrote " << result.points.size() << " points x " << cfg.sweep->seeds_per_point
            << " seeds to " << out << (failed ? " (" + std::to_string(failed) + " runs failed)" : "") << '\n';
  for (const auto& [k, v] : sweep_summary(cfg, result))
    if (k.rfind("fit_", 0) == 0) std::cout << k << " = " << v << '\n';
  return kOk;
}

int cmd_verify(const std::string& level, bool inject) {
  VerifyOptions opt;
  opt.level = level == "full" ? VerifyLevel::Full : VerifyLevel::Quick;
  opt.flip_backward_sign = inject;
  const auto results = run_verification(opt);
  std::size_t failures = 0;
  for (const auto& r : results) {
    std::printf("%s [%s] %s: measured %.6g, tolerance %.6g\n", r.passed ? "PASS" : "FAIL", r.module.c_str(),
                r.invariant.c_str(), r.measured, r.tolerance);
    failures += r.passed ? 0 : 1;
  }
  std::printf("%zu checks, %zu failed\n", results.size(), failures);
  return failures == 0 ? kOk : kVerification;
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& out) {
  const auto result = write_report(dirs, out);
  for (const auto& [name, fit] : result.fits)
    std::cout << name << ": c = " << format_double(fit.c) << ", R^2 = " << format_double(fit.r_squared) << '\n';
  for (const auto& f : result.files) std::cout << "wrote " << (fs::path(out) / f).string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Soft-label SGD experiments on a synthetic Gaussian-mixture task"};
  app.require_subcommand(1);

  std::string config_path, data_path, out, level = "quick";
  std::optional<std::size_t> workers;
  std::vector<std::string> run_dirs;
  bool inject = false;

  auto* gen = app.add_subcommand("gen", "Generate the dataset described by the [task] block");
  gen->add_option("--config", config_path, "Experiment config")->required();
  gen->add_option("--out", out, "Dataset file to write")->required();

  auto* tr = app.add_subcommand("train", "Train one student; writes trace.csv, model.bin, summary.txt");
  tr->add_option("--config", config_path, "Experiment config")->required();
  tr->add_option("--data", data_path, "Dataset from `gen`")->required();
  tr->add_option("--out", out, "Output directory")->required();

  auto* sw = app.add_subcommand("sweep", "Run the [sweep] block; writes summary.csv and per-run traces");
  sw->add_option("--config", config_path, "Experiment config")->required();
  sw->add_option("--data", data_path, "Dataset from `gen`")->required();
  sw->add_option("--out", out, "Output directory")->required();
  sw->add_option("--workers", workers, "Worker threads (default: $BCP_DISTILL_WORKERS, else all cores)")
      ->check(CLI::PositiveNumber);

  auto* ver = app.add_subcommand("verify", "Run the invariant checks");
  ver->add_option("--level", level, "quick or full")->check(CLI::IsMember({"quick", "full"}));
  ver->add_flag("--inject-backward-sign-flip", inject)->group("");

  auto* rep = app.add_subcommand("report", "SVG plots and a markdown summary from run directories");
  rep->add_option("run_dirs", run_dirs, "Directories written by train or sweep");
  rep->add_option("--out", out, "Output directory")->required();

  auto* defaults = app.add_subcommand("print-defaults", "Print a config with every default value");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    if (gen->parsed()) return cmd_gen(config_path, out);
    if (tr->parsed()) return cmd_train(config_path, data_path, out);
    if (sw->parsed()) return cmd_sweep(config_path, data_path, out, workers ? *workers : default_workers());
    if (ver->parsed()) return cmd_verify(level, inject);
    if (rep->parsed()) return cmd_report(run_dirs, out);
    if (defaults->parsed()) {
      std::cout << default_config_text();
      return kOk;
    }
  } catch (const NumericFailure& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  }
  return kInvalid;
}
