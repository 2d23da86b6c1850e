#pragma once

// Teacher models that supply soft labels.
//
// Oracle returns the true posterior (temperature is ignored: the oracle is
// the exact posterior, not a network with logits). Deterministic is one
// trained network. Ensemble averages member softmax outputs, the Monte-Carlo
// prediction average over S stochastic forward passes, realized here with
// independently trained members.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "bcpkd/error.hpp"
#include "bcpkd/network.hpp"
#include "bcpkd/synth.hpp"

namespace bcpkd {

struct OracleTeacher {};

struct DeterministicTeacher {
  NetworkParams params;
};

struct EnsembleTeacher {
  std::vector<NetworkParams> members;

  std::size_t size() const noexcept { return members.size(); }
};

using TeacherKind = std::variant<OracleTeacher, DeterministicTeacher, EnsembleTeacher>;

inline void validate_teacher(const TeacherKind& kind, const TaskSpec& task) {
  auto check_arch = [&](const NetworkParams& p) {
    const auto& a = p.architecture();
    if (a.input_dim != task.input_dim || a.num_classes != task.num_classes)
      throw ShapeError("teacher architecture does not match the task");
  };
  if (const auto* det = std::get_if<DeterministicTeacher>(&kind)) {
    check_arch(det->params);
  } else if (const auto* ens = std::get_if<EnsembleTeacher>(&kind)) {
    if (ens->members.empty()) throw InvalidParameter("ensemble teacher needs at least one member");
    for (const auto& m : ens->members) {
      if (!(m.architecture() == ens->members.front().architecture()))
        throw ShapeError("ensemble members must share one architecture");
      check_arch(m);
    }
  }
}

inline void predict(const TeacherKind& kind, const TaskSpec& task, std::span<const double> x,
                    double temperature, Workspace& ws, std::span<double> out) {
  check_temperature(temperature);
  if (out.size() != task.num_classes) throw ShapeError("teacher output size mismatch");
  if (std::holds_alternative<OracleTeacher>(kind)) {
    true_bcp(task, x, out);
  } else if (const auto* det = std::get_if<DeterministicTeacher>(&kind)) {
    const auto& p = forward(det->params, x, temperature, ws);
    std::copy(p.begin(), p.end(), out.begin());
  } else {
    const auto& members = std::get<EnsembleTeacher>(kind).members;
    if (members.empty()) throw InvalidParameter("ensemble teacher needs at least one member");
    std::fill(out.begin(), out.end(), 0.0);
    for (const auto& m : members) {
      const auto& p = forward(m, x, temperature, ws);
      for (std::size_t k = 0; k < out.size(); ++k) out[k] += p[k];
    }
    double total = 0.0;
    for (double v : out) total += v;
    for (double& v : out) v /= total;
  }
}

inline ProbVector predict(const TeacherKind& kind, const TaskSpec& task, std::span<const double> x,
                          double temperature = 1.0) {
  Workspace ws;
  ProbVector out(task.num_classes);
  predict(kind, task, x, temperature, ws, out);
  return out;
}

// Mean squared l2 distance between teacher output (T = 1) and the true
// posterior; the empirical counterpart of the additive noise level.
inline double teacher_quality(const TeacherKind& kind, const Dataset& ds) {
  require(ds.size() > 0, "teacher_quality: empty dataset");
  validate_teacher(kind, ds.spec);
  if (std::holds_alternative<OracleTeacher>(kind)) return 0.0;
  Workspace ws;
  ProbVector p(ds.spec.num_classes);
  double total = 0.0;
  for (std::size_t n = 0; n < ds.size(); ++n) {
    predict(kind, ds.spec, ds.input(n), 1.0, ws, p);
    const auto q = ds.bcp(n);
    for (std::size_t k = 0; k < p.size(); ++k) total += (p[k] - q[k]) * (p[k] - q[k]);
  }
  return total / static_cast<double>(ds.size());
}

// Named teachers available to supervision specs, plus the task the oracle
// answers for.
struct TeacherRegistry {
  TaskSpec task;
  std::map<std::string, TeacherKind> teachers;

  const TeacherKind& at(const std::string& name) const {
    auto it = teachers.find(name);
    if (it == teachers.end()) throw ConfigError("no teacher named '" + name + "' is registered");
    return it->second;
  }
};

// Ensemble manifest: first line "bcpkd-ensemble 1", then one member checkpoint
// path per line, relative to the manifest's directory.
inline void save_ensemble(const std::string& manifest_path, const EnsembleTeacher& ens) {
  const auto dir = std::filesystem::path(manifest_path).parent_path();
  const auto stem = std::filesystem::path(manifest_path).stem().string();
  std::ofstream os(manifest_path);
  if (!os) throw IoError("cannot open " + manifest_path + " for writing");
  os << "bcpkd-ensemble 1\n";
  for (std::size_t i = 0; i < ens.members.size(); ++i) {
    const auto file = stem + "_member" + std::to_string(i) + ".bin";
    save_checkpoint((dir / file).string(), ens.members[i]);
    os << file << '\n';
  }
}

inline EnsembleTeacher load_ensemble(const std::string& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw IoError("cannot open " + manifest_path);
  std::string line;
  if (!std::getline(is, line) || line != "bcpkd-ensemble 1")
    throw IoError(manifest_path + ": not an ensemble manifest");
  const auto dir = std::filesystem::path(manifest_path).parent_path();
  EnsembleTeacher ens;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    ens.members.push_back(load_checkpoint((dir / line).string()));
  }
  if (ens.members.empty()) throw IoError(manifest_path + ": no members listed");
  return ens;
}

}  // namespace bcpkd
