#pragma once

// Declarative experiments: config parsing, data preparation, teacher
// construction, single runs and parallel sweeps with deterministic
// aggregation.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "bcpkd/analysis.hpp"
#include "bcpkd/config.hpp"
#include "bcpkd/error.hpp"
#include "bcpkd/network.hpp"
#include "bcpkd/rng.hpp"
#include "bcpkd/supervision.hpp"
#include "bcpkd/synth.hpp"
#include "bcpkd/teachers.hpp"
#include "bcpkd/training.hpp"

namespace bcpkd {

struct TaskConfig {
  std::size_t num_classes = 5;
  std::size_t input_dim = 30;
  double noise_variance = 2.5;
  std::size_t samples = 50000;
  double train_fraction = 0.5;
  std::uint64_t data_seed = 0;
};

enum class TeacherSource { Oracle, Deterministic, Ensemble };

struct TeacherConfig {
  TeacherSource kind = TeacherSource::Ensemble;
  std::vector<std::size_t> hidden;
  std::size_t members = 5;
  double learning_rate = 2e-2;
  std::uint64_t iterations = 45000;
  std::uint64_t seed = 0;
};

enum class SweepParameter { Epsilon, Lambda, Members, LearningRate };

struct SweepConfig {
  SweepParameter parameter = SweepParameter::Epsilon;
  std::vector<double> values;
  std::size_t seeds_per_point = 5;
};

struct AnalysisConfig {
  std::uint64_t t0 = 20000;
  double tail_fraction = 0.2;
  std::size_t smoothing_window = 500;
  std::size_t noise_samples = 2000;
  std::size_t mc_draws = 200;
};

struct ExperimentConfig {
  TaskConfig task;
  std::vector<std::size_t> hidden;  // student
  TrainConfig training;             // includes the supervision spec
  bool track_distance = false;
  std::optional<TeacherConfig> teacher;
  std::optional<SweepConfig> sweep;
  AnalysisConfig analysis;

  Architecture student_architecture() const {
    return {task.input_dim, hidden, task.num_classes};
  }
};

inline std::string to_string(SweepParameter p) {
  switch (p) {
    case SweepParameter::Epsilon: return "epsilon";
    case SweepParameter::Lambda: return "lambda";
    case SweepParameter::Members: return "members";
    case SweepParameter::LearningRate: return "learning_rate";
  }
  return "?";
}

inline std::string to_string(TeacherSource s) {
  switch (s) {
    case TeacherSource::Oracle: return "oracle";
    case TeacherSource::Deterministic: return "deterministic";
    case TeacherSource::Ensemble: return "ensemble";
  }
  return "?";
}

namespace detail {

inline std::size_t as_count(const config::Document& doc, const std::string& key, double v,
                            bool allow_zero = false) {
  if (!(v >= (allow_zero ? 0.0 : 1.0)) || v != std::floor(v) || v > 1e12)
    doc.fail(doc.line_of(key), "field '" + key + "' must be a " +
                                   (allow_zero ? "non-negative" : "positive") + " integer");
  return static_cast<std::size_t>(v);
}

inline std::vector<std::size_t> widths(const config::Document& doc, const std::string& key) {
  std::vector<std::size_t> out;
  for (double v : doc.numbers(key, {})) out.push_back(as_count(doc, key, v));
  return out;
}

inline SupervisionSpec parse_supervision(const config::Document& doc, const std::string& table) {
  const auto kind_key = table + ".kind";
  const auto kind = doc.string(kind_key);
  const int line = doc.line_of(kind_key);
  SupervisionSpec spec;
  if (kind == "one_hot") {
    spec = SupervisionSpec::one_hot();
  } else if (kind == "true_bcp") {
    spec = SupervisionSpec::true_bcp();
  } else if (kind == "additive") {
    spec = SupervisionSpec::additive(doc.number(table + ".variance"));
  } else if (kind == "dirichlet") {
    spec = SupervisionSpec::dirichlet(doc.number(table + ".epsilon"));
  } else if (kind == "mixture") {
    if (!doc.has_table(table + ".soft")) doc.fail(line, "mixture needs a [" + table + ".soft] table");
    spec = SupervisionSpec::mixture(doc.number(table + ".lambda"),
                                    parse_supervision(doc, table + ".soft"));
  } else if (kind == "teacher") {
    spec = SupervisionSpec::teacher("teacher", doc.number(table + ".temperature", 1.0));
  } else {
    doc.fail(line, "unknown supervision kind '" + kind +
                       "' (one_hot, true_bcp, additive, dirichlet, mixture, teacher)");
  }
  try {
    spec.validate();
  } catch (const InvalidParameter& e) {
    doc.fail(line, e.what());
  }
  return spec;
}

inline bool uses_teacher(const SupervisionSpec& spec) {
  if (std::holds_alternative<supervision::Teacher>(spec.mode)) return true;
  if (const auto* mix = std::get_if<supervision::Mixture>(&spec.mode)) return uses_teacher(*mix->soft);
  return false;
}

}  // namespace detail

// Reads and validates an experiment. Seeds have no defaults: task.data_seed,
// training.seed and (when a teacher is trained) teacher.seed must be given.
inline ExperimentConfig parse_experiment(const config::Document& doc) {
  using detail::as_count;
  ExperimentConfig cfg;
  auto& t = cfg.task;
  t.num_classes = as_count(doc, "task.num_classes", doc.number("task.num_classes", 5));
  t.input_dim = as_count(doc, "task.input_dim", doc.number("task.input_dim", 30));
  t.noise_variance = doc.number("task.noise_variance");
  t.samples = as_count(doc, "task.samples", doc.number("task.samples", 50000));
  t.train_fraction = doc.number("task.train_fraction", 0.5);
  if (!doc.has("task.data_seed")) throw ConfigError(doc.source() + ": missing required seed 'task.data_seed'");
  t.data_seed = doc.integer("task.data_seed");
  if (t.num_classes < 2) doc.fail(doc.line_of("task.num_classes"), "task.num_classes must be >= 2");
  if (!(t.noise_variance > 0.0)) doc.fail(doc.line_of("task.noise_variance"), "task.noise_variance must be > 0");
  if (!(t.train_fraction > 0.0 && t.train_fraction < 1.0))
    doc.fail(doc.line_of("task.train_fraction"), "task.train_fraction must lie in (0, 1)");

  cfg.hidden = detail::widths(doc, "student.hidden");

  auto& tr = cfg.training;
  tr.learning_rate = doc.number("training.learning_rate", 5e-4);
  tr.iterations = doc.integer("training.iterations", 45000);
  tr.batch_size = as_count(doc, "training.batch_size", doc.number("training.batch_size", 1));
  tr.eval_interval = doc.integer("training.eval_interval", 100);
  tr.student_temperature = doc.number("training.student_temperature", 1.0);
  if (!doc.has("training.seed")) throw ConfigError(doc.source() + ": missing required seed 'training.seed'");
  tr.seed = doc.integer("training.seed");
  tr.freeze_noise = doc.boolean("training.freeze_noise", false);
  cfg.track_distance = doc.boolean("training.track_distance", false);
  if (!(tr.learning_rate > 0.0))
    doc.fail(doc.line_of("training.learning_rate"), "training.learning_rate must be > 0");
  if (tr.iterations > 0 && (tr.eval_interval == 0 || tr.eval_interval > tr.iterations))
    doc.fail(doc.line_of("training.eval_interval"), "training.eval_interval must lie in [1, iterations]");
  if (!(tr.student_temperature > 0.0))
    doc.fail(doc.line_of("training.student_temperature"), "training.student_temperature must be > 0");
  if (cfg.track_distance && !cfg.hidden.empty())
    doc.fail(doc.line_of("training.track_distance"),
             "track_distance needs a linear student (student.hidden = [])");

  tr.supervision = doc.has_table("supervision") ? detail::parse_supervision(doc, "supervision")
                                                : SupervisionSpec::true_bcp();

  if (doc.has_table("teacher")) {
    TeacherConfig tc;
    const auto kind = doc.string("teacher.kind", "ensemble");
    if (kind == "oracle") tc.kind = TeacherSource::Oracle;
    else if (kind == "deterministic") tc.kind = TeacherSource::Deterministic;
    else if (kind == "ensemble") tc.kind = TeacherSource::Ensemble;
    else doc.fail(doc.line_of("teacher.kind"), "unknown teacher kind '" + kind + "' (oracle, deterministic, ensemble)");
    tc.hidden = detail::widths(doc, "teacher.hidden");
    tc.members = as_count(doc, "teacher.members", doc.number("teacher.members", 5));
    tc.learning_rate = doc.number("teacher.learning_rate", 2e-2);
    tc.iterations = doc.integer("teacher.iterations", 45000);
    if (tc.kind != TeacherSource::Oracle) {
      if (!doc.has("teacher.seed")) throw ConfigError(doc.source() + ": missing required seed 'teacher.seed'");
      tc.seed = doc.integer("teacher.seed");
      if (tc.iterations == 0) doc.fail(doc.line_of("teacher.iterations"), "teacher.iterations must be > 0");
      if (!(tc.learning_rate > 0.0))
        doc.fail(doc.line_of("teacher.learning_rate"), "teacher.learning_rate must be > 0");
    } else if (doc.has("teacher.seed")) {
      tc.seed = doc.integer("teacher.seed");  // accepted, unused
    }
    cfg.teacher = tc;
  }
  if (detail::uses_teacher(tr.supervision) && !cfg.teacher)
    throw ConfigError(doc.source() + ": teacher supervision needs a [teacher] table");

  if (doc.has_table("sweep")) {
    SweepConfig sc;
    const auto p = doc.string("sweep.parameter");
    const int line = doc.line_of("sweep.parameter");
    if (p == "epsilon") sc.parameter = SweepParameter::Epsilon;
    else if (p == "lambda") sc.parameter = SweepParameter::Lambda;
    else if (p == "members") sc.parameter = SweepParameter::Members;
    else if (p == "learning_rate") sc.parameter = SweepParameter::LearningRate;
    else doc.fail(line, "unknown sweep parameter '" + p + "' (epsilon, lambda, members, learning_rate)");
    sc.values = doc.numbers("sweep.values");
    if (sc.values.empty()) doc.fail(doc.line_of("sweep.values"), "sweep.values must not be empty");
    sc.seeds_per_point = as_count(doc, "sweep.seeds_per_point", doc.number("sweep.seeds_per_point", 5));
    const auto& mode = tr.supervision.mode;
    const auto* mix = std::get_if<supervision::Mixture>(&mode);
    const bool has_eps = std::holds_alternative<supervision::Dirichlet>(mode) ||
                         (mix && std::holds_alternative<supervision::Dirichlet>(mix->soft->mode));
    if (sc.parameter == SweepParameter::Epsilon && !has_eps)
      doc.fail(line, "an epsilon sweep needs dirichlet supervision (directly or as the mixture's soft part)");
    if (sc.parameter == SweepParameter::Lambda && !mix)
      doc.fail(line, "a lambda sweep needs mixture supervision");
    if (sc.parameter == SweepParameter::Members &&
        !(cfg.teacher && cfg.teacher->kind == TeacherSource::Ensemble && detail::uses_teacher(tr.supervision)))
      doc.fail(line, "a members sweep needs an ensemble teacher used by the supervision");
    for (double v : sc.values) {
      const bool ok = sc.parameter == SweepParameter::Epsilon        ? v > 0.0
                      : sc.parameter == SweepParameter::Lambda       ? (v >= 0.0 && v <= 1.0)
                      : sc.parameter == SweepParameter::Members      ? (v >= 1.0 && v == std::floor(v))
                                                                     : v > 0.0;
      if (!ok || !std::isfinite(v)) doc.fail(doc.line_of("sweep.values"), "sweep value out of range for " + p);
    }
    cfg.sweep = sc;
  }

  auto& a = cfg.analysis;
  a.t0 = doc.integer("analysis.t0", 20000);
  a.tail_fraction = doc.number("analysis.tail_fraction", 0.2);
  a.smoothing_window = as_count(doc, "analysis.smoothing_window", doc.number("analysis.smoothing_window", 500));
  a.noise_samples = as_count(doc, "analysis.noise_samples", doc.number("analysis.noise_samples", 2000));
  a.mc_draws = as_count(doc, "analysis.mc_draws", doc.number("analysis.mc_draws", 200));
  if (!(a.tail_fraction > 0.0 && a.tail_fraction <= 1.0))
    doc.fail(doc.line_of("analysis.tail_fraction"), "analysis.tail_fraction must lie in (0, 1]");
  if (a.t0 > tr.iterations) doc.fail(doc.line_of("analysis.t0"), "analysis.t0 lies beyond training.iterations");

  const auto unused = doc.unused_keys();
  if (!unused.empty()) doc.fail(doc.line_of(unused.front()), "unknown field '" + unused.front() + "'");
  return cfg;
}

inline ExperimentConfig load_experiment(const std::string& path) {
  return parse_experiment(config::Document::parse_file(path));
}

// A complete config with every default spelled out. Seeds are placeholders
// that must stay explicit.
inline std::string default_config_text() {
  return R"(# Synthetic Gaussian-mixture task
[task]
num_classes = 5
input_dim = 30
noise_variance = 2.5
samples = 50000
train_fraction = 0.5
data_seed = 2024              # required

# Student network; [] is the linear-softmax classifier
[student]
hidden = []

[training]
learning_rate = 0.0005
iterations = 45000
batch_size = 1
eval_interval = 100
student_temperature = 1.0
seed = 1                      # required
freeze_noise = false          # true: one noisy target per sample, reused on every visit
track_distance = false        # log squared distance to the linear optimum (linear students only)

# kind = one_hot | true_bcp | additive (variance) | dirichlet (epsilon)
#      | mixture (lambda, plus a [supervision.soft] table) | teacher (temperature)
[supervision]
kind = "true_bcp"

# Optional. Needed by teacher supervision.
# [teacher]
# kind = "ensemble"           # oracle | deterministic | ensemble
# hidden = []
# members = 5
# learning_rate = 0.02
# iterations = 45000
# seed = 3                    # required unless kind = "oracle"

# Optional. Used by the sweep command.
# [sweep]
# parameter = "epsilon"       # epsilon | lambda | members | learning_rate
# values = [0.5, 1, 2, 5, 10, 20]
# seeds_per_point = 5

[analysis]
t0 = 20000
tail_fraction = 0.2
smoothing_window = 500        # rows; capped at the tail length
noise_samples = 2000
mc_draws = 200
)";
}

// Generates the full dataset (before splitting) for a task block.
inline Dataset generate_task_data(const TaskConfig& task) {
  const RngStream root(task.data_seed);
  RngStream task_rng = root.child("task");
  RngStream data_rng = root.child("data");
  const auto spec = sample_task(task.num_classes, task.input_dim, task.noise_variance, task_rng);
  return generate(spec, task.samples, data_rng);
}

struct PreparedData {
  Dataset train;
  Dataset test;
  double bayes_risk = 0.0;  // of the test split
  double oracle_risk = 0.0;
  NetworkParams optimum;    // linear-softmax optimum of the task
};

inline PreparedData prepare_data(const Dataset& full, const TaskConfig& task) {
  const auto& s = full.spec;
  if (s.num_classes != task.num_classes || s.input_dim != task.input_dim ||
      s.noise_variance != task.noise_variance || full.size() != task.samples)
    throw ConfigError("dataset does not match the [task] block of the config");
  RngStream split_rng = RngStream(task.data_seed).child("split");
  auto [train_set, test_set] = split(full, task.train_fraction, split_rng);
  PreparedData out;
  out.train = std::move(train_set);
  out.test = std::move(test_set);
  out.bayes_risk = bayes_risk(out.test);
  out.oracle_risk = oracle_risk(out.test);
  out.optimum = bayes_optimum_linear(s);
  return out;
}

inline TrainConfig teacher_train_config(const TeacherConfig& tc) {
  TrainConfig c;
  c.learning_rate = tc.learning_rate;
  c.iterations = tc.iterations;
  c.eval_interval = tc.iterations;
  c.seed = tc.seed;
  return c;
}

// Builds the teacher named "teacher". A deterministic teacher is member 0 of
// the ensemble the same teacher block would train.
inline TeacherRegistry build_teachers(const ExperimentConfig& cfg, const Dataset& train_set,
                                      std::optional<std::size_t> members = std::nullopt) {
  TeacherRegistry reg{train_set.spec, {}};
  if (!cfg.teacher) return reg;
  const auto& tc = *cfg.teacher;
  const Architecture arch{cfg.task.input_dim, tc.hidden, cfg.task.num_classes};
  switch (tc.kind) {
    case TeacherSource::Oracle:
      reg.teachers["teacher"] = OracleTeacher{};
      break;
    case TeacherSource::Deterministic:
      reg.teachers["teacher"] =
          DeterministicTeacher{train_ensemble(train_set, arch, teacher_train_config(tc), 1).members.front()};
      break;
    case TeacherSource::Ensemble:
      reg.teachers["teacher"] =
          train_ensemble(train_set, arch, teacher_train_config(tc), members.value_or(tc.members));
      break;
  }
  return reg;
}

struct RunMetrics {
  TailMetrics tail;
  double avg_gap = 0.0;
  Evaluation final;
};

inline RunMetrics run_metrics(const TrainingTrace& trace, const AnalysisConfig& a, double reference) {
  require(trace.size() > 0, "run_metrics: empty trace");
  const auto rows = trace.size();
  const auto tail_rows = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(a.tail_fraction * static_cast<double>(rows))), 1, rows);
  const auto w = std::min(a.smoothing_window, tail_rows);
  RunMetrics m;
  m.tail = tail_metrics(trace, tail_rows, w);
  m.avg_gap = avg_gap(trace, a.t0, reference);
  m.final = {trace.rows.back().gen_error, trace.rows.back().accuracy};
  return m;
}

struct RunOutput {
  TrainResult result;
  std::optional<RunMetrics> metrics;  // absent when the run failed
};

inline TrainConfig run_train_config(const ExperimentConfig& cfg, const PreparedData& data,
                                    std::uint64_t seed) {
  TrainConfig tc = cfg.training;
  tc.seed = seed;
  if (cfg.track_distance) tc.track_distance_to = data.optimum;
  return tc;
}

inline RunOutput run_single(const ExperimentConfig& cfg, const PreparedData& data,
                            const TeacherRegistry* teachers, std::uint64_t seed) {
  RunOutput out;
  out.result = train(data.train, data.test, cfg.student_architecture(),
                     run_train_config(cfg, data, seed), teachers);
  if (!out.result.failure) out.metrics = run_metrics(out.result.trace, cfg.analysis, data.bayes_risk);
  return out;
}

// Seed of run j within a sweep point; shared across points so that points
// differ only in the swept value.
inline std::uint64_t sweep_run_seed(std::uint64_t base, std::size_t j) {
  return RngStream(base).child("seed/" + std::to_string(j)).seed();
}

inline ExperimentConfig apply_sweep_value(ExperimentConfig cfg, SweepParameter p, double v) {
  auto& mode = cfg.training.supervision.mode;
  switch (p) {
    case SweepParameter::Epsilon:
      if (auto* d = std::get_if<supervision::Dirichlet>(&mode)) {
        d->epsilon = v;
      } else if (auto* mix = std::get_if<supervision::Mixture>(&mode)) {
        if (!std::holds_alternative<supervision::Dirichlet>(mix->soft->mode))
          throw ConfigError("epsilon sweep needs a dirichlet soft part");
        mix->soft = std::make_shared<const SupervisionSpec>(SupervisionSpec::dirichlet(v));
      } else {
        throw ConfigError("epsilon sweep needs dirichlet supervision");
      }
      break;
    case SweepParameter::Lambda:
      if (auto* mix = std::get_if<supervision::Mixture>(&mode)) mix->lambda = v;
      else throw ConfigError("lambda sweep needs mixture supervision");
      break;
    case SweepParameter::Members:
      if (!cfg.teacher) throw ConfigError("members sweep needs a teacher");
      cfg.teacher->members = static_cast<std::size_t>(v);
      break;
    case SweepParameter::LearningRate:
      cfg.training.learning_rate = v;
      break;
  }
  cfg.training.supervision.validate();
  return cfg;
}

// Dirichlet epsilon and mixing weight implied by a supervision spec; NaN
// when the spec has no such parameter. Non-mixture soft supervision counts
// as lambda = 1 and one-hot as lambda = 0.
inline double spec_epsilon(const SupervisionSpec& spec) {
  if (const auto* d = std::get_if<supervision::Dirichlet>(&spec.mode)) return d->epsilon;
  if (const auto* mix = std::get_if<supervision::Mixture>(&spec.mode)) return spec_epsilon(*mix->soft);
  return std::numeric_limits<double>::quiet_NaN();
}

inline double spec_lambda(const SupervisionSpec& spec) {
  if (std::holds_alternative<supervision::OneHot>(spec.mode)) return 0.0;
  if (const auto* mix = std::get_if<supervision::Mixture>(&spec.mode)) return mix->lambda;
  return 1.0;
}

struct SweepRun {
  std::size_t point = 0;
  std::size_t seed_index = 0;
  std::uint64_t seed = 0;
  RunOutput output;
};

struct SweepPoint {
  double value = 0.0;
  double epsilon = 0.0;
  double lambda = 0.0;
  MeanStd loss_avg, acc_avg, sigma_loss, sigma_acc, gap;
  double grad_noise_formula = 0.0;  // NaN without a closed form
  double grad_noise_mc = 0.0;
  std::size_t runs = 0;
  std::size_t failed = 0;
};

struct SweepResult {
  SweepParameter parameter = SweepParameter::Epsilon;
  std::vector<SweepPoint> points;  // ascending by value
  std::vector<SweepRun> runs;      // by point, then seed
  double bayes_risk = 0.0;
};

inline std::size_t default_workers() {
  if (const char* env = std::getenv("BCP_DISTILL_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<std::size_t>(v);
    throw ConfigError("BCP_DISTILL_WORKERS must be a positive integer");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs fn(i) for i in [0, n) on at most `workers` threads. Exceptions are
// rethrown after all workers stop (first index wins).
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline SweepResult run_sweep(const ExperimentConfig& cfg, const PreparedData& data, std::size_t workers) {
  if (!cfg.sweep) throw ConfigError("config has no [sweep] table");
  const auto& sw = *cfg.sweep;
  std::vector<double> values = sw.values;
  std::stable_sort(values.begin(), values.end());

  std::vector<ExperimentConfig> point_cfgs;
  for (double v : values) point_cfgs.push_back(apply_sweep_value(cfg, sw.parameter, v));

  // Teachers: trained once; a members sweep uses prefixes of the largest ensemble.
  std::vector<TeacherRegistry> registries;
  if (sw.parameter == SweepParameter::Members) {
    const auto largest = static_cast<std::size_t>(values.back());
    const auto full = build_teachers(cfg, data.train, largest);
    const auto& members = std::get<EnsembleTeacher>(full.teachers.at("teacher")).members;
    for (double v : values) {
      TeacherRegistry reg{full.task, {}};
      reg.teachers["teacher"] = EnsembleTeacher{
          {members.begin(), members.begin() + static_cast<std::ptrdiff_t>(v)}};
      registries.push_back(std::move(reg));
    }
  } else {
    registries.assign(1, build_teachers(cfg, data.train));
  }
  auto registry_for = [&](std::size_t p) -> const TeacherRegistry& {
    return registries.size() == 1 ? registries.front() : registries[p];
  };

  SweepResult result;
  result.parameter = sw.parameter;
  result.bayes_risk = data.bayes_risk;
  for (std::size_t p = 0; p < values.size(); ++p)
    for (std::size_t j = 0; j < sw.seeds_per_point; ++j)
      result.runs.push_back({p, j, sweep_run_seed(cfg.training.seed, j), {}});

  parallel_for(result.runs.size(), workers, [&](std::size_t i) {
    auto& run = result.runs[i];
    run.output = run_single(point_cfgs[run.point], data, &registry_for(run.point), run.seed);
  });

  // Gradient noise of each point's supervision at the linear optimum.
  const auto n_noise = std::min(cfg.analysis.noise_samples, data.test.size());
  std::vector<std::size_t> rows(n_noise);
  for (std::size_t i = 0; i < n_noise; ++i) rows[i] = i;
  const auto noise_set = subset(data.test, rows);
  const RngStream noise_root = RngStream(cfg.training.seed).child("grad-noise");

  for (std::size_t p = 0; p < values.size(); ++p) {
    SweepPoint pt;
    pt.value = values[p];
    const auto& spec = point_cfgs[p].training.supervision;
    pt.epsilon = spec_epsilon(spec);
    pt.lambda = spec_lambda(spec);
    std::vector<double> l, a, sl, sa, g;
    for (const auto& run : result.runs) {
      if (run.point != p) continue;
      ++pt.runs;
      if (!run.output.metrics) {
        ++pt.failed;
        continue;
      }
      const auto& m = *run.output.metrics;
      l.push_back(m.tail.loss_avg);
      a.push_back(m.tail.acc_avg);
      sl.push_back(m.tail.sigma_loss);
      sa.push_back(m.tail.sigma_acc);
      g.push_back(m.avg_gap);
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    auto agg = [&](const std::vector<double>& xs) { return xs.empty() ? MeanStd{nan, nan} : mean_std(xs); };
    pt.loss_avg = agg(l);
    pt.acc_avg = agg(a);
    pt.sigma_loss = agg(sl);
    pt.sigma_acc = agg(sa);
    pt.gap = agg(g);
    const auto formula = grad_noise_formula(spec, data.optimum, noise_set);
    pt.grad_noise_formula = formula ? formula->value : nan;
    RngStream mc_rng = noise_root.child(static_cast<std::uint64_t>(p));
    pt.grad_noise_mc =
        grad_noise_mc(spec, data.optimum, noise_set, cfg.analysis.mc_draws, mc_rng, &registry_for(p)).value;
    result.points.push_back(pt);
  }
  return result;
}

// Flat CSV: the nine analysis columns, then the swept value, across-seed
// standard deviations and run counts.
inline void write_sweep_csv(std::ostream& os, const SweepResult& r) {
  os << "epsilon,lambda,L_avg,ACC_avg,sigma_L,sigma_ACC,avg_gap,grad_noise_formula,grad_noise_mc,"
     << "sweep_" << to_string(r.parameter)
     << ",L_avg_std,ACC_avg_std,sigma_L_std,sigma_ACC_std,avg_gap_std,runs,failed\n";
  for (const auto& p : r.points) {
    for (double v : {p.epsilon, p.lambda, p.loss_avg.mean, p.acc_avg.mean, p.sigma_loss.mean,
                     p.sigma_acc.mean, p.gap.mean, p.grad_noise_formula, p.grad_noise_mc, p.value,
                     p.loss_avg.stddev, p.acc_avg.stddev, p.sigma_loss.stddev, p.sigma_acc.stddev,
                     p.gap.stddev})
      os << format_double(v) << ',';
    os << p.runs << ',' << p.failed << '\n';
  }
}

// Structured text: one "key = value" per line.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

inline void write_key_values(const std::string& path, const KeyValues& kv) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  for (const auto& [k, v] : kv) os << k << " = " << v << '\n';
}

inline std::map<std::string, std::string> read_key_values(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    out[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return out;
}

inline KeyValues run_summary(const ExperimentConfig& cfg, const PreparedData& data, const RunOutput& out) {
  KeyValues kv{{"supervision", describe(cfg.training.supervision)},
               {"seed", std::to_string(cfg.training.seed)},
               {"learning_rate", format_double(cfg.training.learning_rate)},
               {"iterations", std::to_string(cfg.training.iterations)},
               {"bayes_risk", format_double(data.bayes_risk)},
               {"oracle_risk", format_double(data.oracle_risk)},
               {"rows", std::to_string(out.result.trace.size())}};
  if (out.result.failure) {
    kv.emplace_back("status", "failed");
    kv.emplace_back("failure", *out.result.failure);
    kv.emplace_back("failure_iteration", std::to_string(out.result.failure_iteration.value_or(0)));
  } else {
    const auto& m = *out.metrics;
    kv.emplace_back("status", "ok");
    kv.emplace_back("final_gen_error", format_double(m.final.gen_error));
    kv.emplace_back("final_accuracy", format_double(m.final.accuracy));
    kv.emplace_back("avg_gap", format_double(m.avg_gap));
    kv.emplace_back("t0", std::to_string(cfg.analysis.t0));
    kv.emplace_back("L_avg", format_double(m.tail.loss_avg));
    kv.emplace_back("ACC_avg", format_double(m.tail.acc_avg));
    kv.emplace_back("sigma_L", format_double(m.tail.sigma_loss));
    kv.emplace_back("sigma_ACC", format_double(m.tail.sigma_acc));
    kv.emplace_back("tail_rows", std::to_string(m.tail.window));
    kv.emplace_back("smoothing_rows", std::to_string(m.tail.smoothing));
  }
  return kv;
}

inline KeyValues sweep_summary(const ExperimentConfig& cfg, const SweepResult& r) {
  std::size_t failed = 0;
  for (const auto& p : r.points) failed += p.failed;
  KeyValues kv{{"parameter", to_string(r.parameter)},
               {"supervision", describe(cfg.training.supervision)},
               {"points", std::to_string(r.points.size())},
               {"seeds_per_point", std::to_string(cfg.sweep->seeds_per_point)},
               {"runs", std::to_string(r.runs.size())},
               {"failed_runs", std::to_string(failed)},
               {"bayes_risk", format_double(r.bayes_risk)},
               {"t0", std::to_string(cfg.analysis.t0)}};
  if (r.parameter == SweepParameter::Epsilon && r.points.size() >= 2) {
    std::vector<EpsPoint> pts;
    for (const auto& p : r.points)
      if (std::isfinite(p.gap.mean)) pts.push_back({p.epsilon, p.gap.mean});
    if (pts.size() >= 2) {
      const auto fit = fit_inverse_eps(pts);
      kv.emplace_back("fit_c", format_double(fit.c));
      kv.emplace_back("fit_r_squared", format_double(fit.r_squared));
    }
  }
  return kv;
}

}  // namespace bcpkd
