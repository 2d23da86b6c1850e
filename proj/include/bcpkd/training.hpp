#pragma once

// Plain constant-step SGD, theta <- theta - alpha * grad f_xi(theta), over any
// supervision mode, with periodic held-out evaluation.
//
// All randomness in a run comes from children of the run seed: "init" for the
// student initialization, "batches" for the sampled indices, "noise" for the
// per-visit target noise and "frozen" for the fixed-per-sample alternative.
// Runs that differ only in supervision therefore share their initialization
// and batch sequence.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bcpkd/error.hpp"
#include "bcpkd/network.hpp"
#include "bcpkd/rng.hpp"
#include "bcpkd/supervision.hpp"
#include "bcpkd/synth.hpp"
#include "bcpkd/teachers.hpp"

namespace bcpkd {

struct TrainConfig {
  double learning_rate = 5e-4;
  std::uint64_t iterations = 45000;
  std::size_t batch_size = 1;
  std::uint64_t eval_interval = 100;
  double student_temperature = 1.0;
  SupervisionSpec supervision = SupervisionSpec::true_bcp();
  std::uint64_t seed = 0;
  // Draw each sample's noisy target once and reuse it on every visit.
  bool freeze_noise = false;
  // Start from these parameters instead of a He initialization.
  std::optional<NetworkParams> initial_params;
  // Log squared distance to this point (modulo the softmax shift) per row.
  std::optional<NetworkParams> track_distance_to;

  void validate(std::size_t train_size) const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw InvalidParameter("learning rate must be > 0");
    if (batch_size == 0) throw InvalidParameter("batch size must be positive");
    if (batch_size > train_size) throw InvalidParameter("batch size exceeds the training set");
    if (iterations > 0 && (eval_interval == 0 || eval_interval > iterations))
      throw InvalidParameter("eval_interval must lie in [1, iterations]");
    check_temperature(student_temperature);
    supervision.validate();
  }
};

struct TraceRow {
  std::uint64_t iteration = 0;
  double train_loss = std::numeric_limits<double>::quiet_NaN();
  double gen_error = 0.0;
  double accuracy = 0.0;
  std::optional<double> sq_dist;

  bool operator==(const TraceRow&) const = default;
};

struct TrainingTrace {
  std::vector<TraceRow> rows;

  std::size_t size() const noexcept { return rows.size(); }
  bool has_distance() const { return !rows.empty() && rows.front().sq_dist.has_value(); }
};

// Bitwise equality, so NaN train losses compare equal to themselves.
inline bool identical(const TrainingTrace& a, const TrainingTrace& b) {
  auto same = [](double x, double y) { return std::memcmp(&x, &y, sizeof(double)) == 0; };
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto &r = a.rows[i], &q = b.rows[i];
    if (r.iteration != q.iteration || !same(r.train_loss, q.train_loss) || !same(r.gen_error, q.gen_error) ||
        !same(r.accuracy, q.accuracy) || r.sq_dist.has_value() != q.sq_dist.has_value() ||
        (r.sq_dist && !same(*r.sq_dist, *q.sq_dist)))
      return false;
  }
  return true;
}

struct Evaluation {
  double gen_error = 0.0;
  double accuracy = 0.0;
};

// Mean one-hot CE and argmax accuracy (ties go to the lowest class index).
inline Evaluation evaluate(const NetworkParams& params, const Dataset& ds, double temperature = 1.0) {
  require(ds.size() > 0, "evaluate: empty dataset");
  Workspace ws;
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t n = 0; n < ds.size(); ++n) {
    const auto& p = forward(params, ds.input(n), temperature, ws);
    loss -= std::log(p[ds.labels[n]]);
    std::size_t best = 0;
    for (std::size_t k = 1; k < p.size(); ++k)
      if (p[k] > p[best]) best = k;
    correct += best == ds.labels[n] ? 1 : 0;
  }
  const double n = static_cast<double>(ds.size());
  return {loss / n, static_cast<double>(correct) / n};
}

// Reusable buffers for sgd_step.
struct StepBuffers {
  Workspace ws;
  Workspace teacher_ws;
  Vector grad;
  Vector target;
};

// Where the targets for a step come from: fresh draws, or a frozen table.
struct TargetSource {
  const SupervisionSpec* spec = nullptr;
  const TeacherRegistry* teachers = nullptr;
  const Vector* frozen = nullptr;  // N x K, used when non-null
};

// One SGD update on the given batch, in place. Returns the mean batch loss.
inline double sgd_step(NetworkParams& params, const Dataset& ds, std::span<const std::size_t> batch,
                       const TargetSource& source, double learning_rate, double temperature,
                       RngStream& noise_rng, StepBuffers& buf, std::uint64_t iteration = 0) {
  if (batch.empty()) throw InvalidParameter("sgd_step: empty batch");
  const auto K = ds.spec.num_classes;
  buf.grad.assign(params.size(), 0.0);
  buf.target.resize(K);
  const double scale = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (auto n : batch) {
    if (source.frozen != nullptr) {
      std::copy_n(source.frozen->begin() + static_cast<std::ptrdiff_t>(n * K), K, buf.target.begin());
    } else {
      next_target(*source.spec, Sample{ds.input(n), ds.labels[n], ds.bcp(n)}, source.teachers,
                  noise_rng, buf.teacher_ws, buf.target);
    }
    loss += scale * backward_accumulate(params, ds.input(n), buf.target, temperature, buf.ws,
                                        buf.grad, scale);
  }
  for (double g : buf.grad)
    if (!std::isfinite(g)) throw NumericFailure("non-finite gradient", iteration);
  auto theta = params.flat();
  for (std::size_t j = 0; j < theta.size(); ++j) theta[j] -= learning_rate * buf.grad[j];
  return loss;
}

// Functional form: returns the updated parameters.
inline NetworkParams sgd_step(const NetworkParams& params, const Dataset& ds,
                              std::span<const std::size_t> batch, const SupervisionSpec& spec,
                              double learning_rate, double temperature,
                              const TeacherRegistry* teachers, RngStream& noise_rng) {
  NetworkParams next = params;
  StepBuffers buf;
  sgd_step(next, ds, batch, TargetSource{&spec, teachers, nullptr}, learning_rate, temperature,
           noise_rng, buf);
  return next;
}

inline Vector frozen_targets(const Dataset& ds, const SupervisionSpec& spec,
                             const TeacherRegistry* teachers, const RngStream& frozen_root) {
  const auto K = ds.spec.num_classes;
  Vector table(ds.size() * K);
  Workspace ws;
  for (std::size_t n = 0; n < ds.size(); ++n) {
    RngStream rng = frozen_root.child(static_cast<std::uint64_t>(n));
    next_target(spec, Sample{ds.input(n), ds.labels[n], ds.bcp(n)}, teachers, rng, ws,
                std::span<double>(table).subspan(n * K, K));
  }
  return table;
}

struct TrainResult {
  NetworkParams params;
  TrainingTrace trace;
  // Set when a non-finite gradient aborted the run; the trace is partial.
  std::optional<std::string> failure;
  std::optional<std::uint64_t> failure_iteration;
};

inline TrainResult train(const Dataset& train_set, const Dataset& test_set, const Architecture& arch,
                         const TrainConfig& config, const TeacherRegistry* teachers = nullptr) {
  arch.validate();
  if (arch.input_dim != train_set.spec.input_dim || arch.num_classes != train_set.spec.num_classes)
    throw ShapeError("architecture does not match the dataset");
  config.validate(train_set.size());
  require(test_set.size() > 0, "train: empty evaluation set");

  const RngStream root(config.seed);
  TrainResult result;
  if (config.initial_params) {
    if (!(config.initial_params->architecture() == arch))
      throw ShapeError("initial parameters do not match the architecture");
    result.params = *config.initial_params;
  } else {
    RngStream init_rng = root.child("init");
    result.params = init_params(arch, init_rng);
  }
  RngStream batch_rng = root.child("batches");
  RngStream noise_rng = root.child("noise");

  std::optional<Vector> frozen;
  if (config.freeze_noise && config.supervision.is_stochastic())
    frozen = frozen_targets(train_set, config.supervision, teachers, root.child("frozen"));
  const TargetSource source{&config.supervision, teachers, frozen ? &*frozen : nullptr};

  auto record = [&](std::uint64_t iteration, double train_loss) {
    const auto ev = evaluate(result.params, test_set, 1.0);
    TraceRow row{iteration, train_loss, ev.gen_error, ev.accuracy, std::nullopt};
    if (config.track_distance_to) row.sq_dist = squared_distance(result.params, *config.track_distance_to);
    result.trace.rows.push_back(row);
  };

  record(0, std::numeric_limits<double>::quiet_NaN());
  StepBuffers buf;
  std::vector<std::size_t> batch(config.batch_size);
  double loss_sum = 0.0;
  std::uint64_t loss_count = 0;
  for (std::uint64_t t = 1; t <= config.iterations; ++t) {
    for (auto& n : batch) n = batch_rng.uniform_index(train_set.size());
    try {
      loss_sum += sgd_step(result.params, train_set, batch, source, config.learning_rate,
                           config.student_temperature, noise_rng, buf, t);
    } catch (const NumericFailure& e) {
      result.failure = e.what();
      result.failure_iteration = t;
      return result;
    }
    ++loss_count;
    if (t % config.eval_interval == 0) {
      record(t, loss_sum / static_cast<double>(loss_count));
      loss_sum = 0.0;
      loss_count = 0;
    }
  }
  return result;
}

// Trains a teacher with one-hot labels; evaluation uses the training set.
inline NetworkParams train_teacher(const Dataset& train_set, const Architecture& arch,
                                   TrainConfig config) {
  config.supervision = SupervisionSpec::one_hot();
  config.track_distance_to.reset();
  if (config.iterations > 0) config.eval_interval = config.iterations;
  auto result = train(train_set, train_set, arch, config);
  if (result.failure) throw NumericFailure("teacher training failed: " + *result.failure,
                                           result.failure_iteration.value_or(0));
  return result.params;
}

// S members trained from child seeds "member/<i>" of config.seed.
inline EnsembleTeacher train_ensemble(const Dataset& train_set, const Architecture& arch,
                                      const TrainConfig& config, std::size_t members) {
  require(members >= 1, "ensemble needs at least one member");
  EnsembleTeacher ens;
  const RngStream root(config.seed);
  for (std::size_t i = 0; i < members; ++i) {
    TrainConfig member_cfg = config;
    member_cfg.seed = root.child("member/" + std::to_string(i)).seed();
    ens.members.push_back(train_teacher(train_set, arch, member_cfg));
  }
  return ens;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// CSV: iteration,train_loss,gen_error,accuracy[,sq_dist]
inline void write_trace_csv(std::ostream& os, const TrainingTrace& trace) {
  const bool dist = trace.has_distance();
  os << "iteration,train_loss,gen_error,accuracy" << (dist ? ",sq_dist" : "") << '\n';
  for (const auto& r : trace.rows) {
    os << r.iteration << ',' << format_double(r.train_loss) << ',' << format_double(r.gen_error)
       << ',' << format_double(r.accuracy);
    if (dist) os << ',' << format_double(r.sq_dist.value_or(std::numeric_limits<double>::quiet_NaN()));
    os << '\n';
  }
}

inline void save_trace_csv(const std::string& path, const TrainingTrace& trace) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_trace_csv(os, trace);
}

inline TrainingTrace read_trace_csv(std::istream& is) {
  TrainingTrace trace;
  std::string line;
  if (!std::getline(is, line) || line.rfind("iteration,train_loss,gen_error,accuracy", 0) != 0)
    throw IoError("trace CSV: unexpected header");
  const bool dist = line.find(",sq_dist") != std::string::npos;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() != (dist ? 5u : 4u)) throw IoError("trace CSV: bad row '" + line + "'");
    TraceRow r;
    r.iteration = std::stoull(cells[0]);
    r.train_loss = std::strtod(cells[1].c_str(), nullptr);
    r.gen_error = std::strtod(cells[2].c_str(), nullptr);
    r.accuracy = std::strtod(cells[3].c_str(), nullptr);
    if (dist) r.sq_dist = std::strtod(cells[4].c_str(), nullptr);
    if (!trace.rows.empty() && r.iteration <= trace.rows.back().iteration)
      throw IoError("trace CSV: iterations must increase");
    trace.rows.push_back(r);
  }
  return trace;
}

inline TrainingTrace load_trace_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  return read_trace_csv(is);
}

}  // namespace bcpkd
