#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "bcpkd/teachers.hpp"
#include "bcpkd/training.hpp"

using namespace bcpkd;
namespace fs = std::filesystem;

namespace {

struct SmallTask {
  TaskSpec spec;
  Dataset train, test;
};

const SmallTask& small_task() {
  static const SmallTask task = [] {
    RngStream rng(31);
    SmallTask t;
    t.spec = sample_task(3, 6, 1.0, rng);
    t.train = generate(t.spec, 2000, rng);
    t.test = generate(t.spec, 2000, rng);
    return t;
  }();
  return task;
}

TrainConfig teacher_config(std::uint64_t seed, std::uint64_t iterations = 4000) {
  TrainConfig cfg;
  cfg.learning_rate = 2e-2;
  cfg.iterations = iterations;
  cfg.eval_interval = iterations > 0 ? iterations : 1;
  cfg.seed = seed;
  return cfg;
}

const Architecture kLinear{6, {}, 3};

}  // namespace

TEST(Teachers, OracleMatchesPosteriorAndHasZeroQuality) {
  const auto& t = small_task();
  for (std::size_t n = 0; n < 50; ++n) {
    const auto p = predict(OracleTeacher{}, t.spec, t.test.input(n));
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(p[k], t.test.bcp(n)[k]);
  }
  EXPECT_EQ(teacher_quality(OracleTeacher{}, t.test), 0.0);
}

TEST(Teachers, EnsembleOfIdenticalMembersEqualsMember) {
  const auto& t = small_task();
  RngStream rng(2);
  const auto member = init_params({6, {8}, 3}, rng);
  const EnsembleTeacher ens{{member, member, member}};
  for (std::size_t n = 0; n < 20; ++n)
    for (double temp : {1.0, 3.0}) {
      const auto a = predict(ens, t.spec, t.test.input(n), temp);
      const auto b = predict(DeterministicTeacher{member}, t.spec, t.test.input(n), temp);
      for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(a[k], b[k], 1e-15);
    }
}

// The ensemble averages probabilities after each member's softmax.
TEST(Teachers, EnsembleAveragesProbabilities) {
  const auto& t = small_task();
  RngStream rng(3);
  std::vector<NetworkParams> members;
  for (int i = 0; i < 4; ++i) members.push_back(init_params(kLinear, rng));
  const EnsembleTeacher ens{members};
  for (std::size_t n = 0; n < 20; ++n) {
    const auto x = t.test.input(n);
    Vector mean(3, 0.0);
    for (const auto& m : members) {
      const auto p = forward(m, x, 2.0);
      for (std::size_t k = 0; k < 3; ++k) mean[k] += p[k] / 4.0;
    }
    const auto q = predict(ens, t.spec, x, 2.0);
    double total = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_NEAR(q[k], mean[k], 1e-12);
      total += q[k];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Teachers, QualityIgnoresMemberOrder) {
  const auto& t = small_task();
  RngStream rng(4);
  std::vector<NetworkParams> members;
  for (int i = 0; i < 3; ++i) members.push_back(init_params(kLinear, rng));
  EnsembleTeacher a{members}, b{{members[2], members[0], members[1]}};
  EXPECT_NEAR(teacher_quality(a, t.test), teacher_quality(b, t.test), 1e-12);
}

TEST(Teachers, TrainingImprovesQuality) {
  const auto& t = small_task();
  const auto untrained = train_teacher(t.train, kLinear, teacher_config(5, 0));
  const auto trained = train_teacher(t.train, kLinear, teacher_config(5));
  const double q0 = teacher_quality(DeterministicTeacher{untrained}, t.test);
  const double q1 = teacher_quality(DeterministicTeacher{trained}, t.test);
  EXPECT_LT(q1, 0.5 * q0);
  EXPECT_GT(evaluate(trained, t.test).accuracy, 1.0 / 3.0 + 0.2);
}

TEST(Teachers, ZeroIterationsReturnsInitialization) {
  const auto& t = small_task();
  const auto cfg = teacher_config(6, 0);
  RngStream init = RngStream(cfg.seed).child("init");
  EXPECT_EQ(train_teacher(t.train, kLinear, cfg), init_params(kLinear, init));
}

TEST(Teachers, RetrainingIsBitIdentical) {
  const auto& t = small_task();
  const auto a = train_ensemble(t.train, kLinear, teacher_config(7, 500), 3);
  const auto b = train_ensemble(t.train, kLinear, teacher_config(7, 500), 3);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.members[i], b.members[i]);
  EXPECT_FALSE(a.members[0] == a.members[1]);
  // A prefix of a larger ensemble is the smaller ensemble.
  const auto one = train_ensemble(t.train, kLinear, teacher_config(7, 500), 1);
  EXPECT_EQ(one.members[0], a.members[0]);
}

TEST(Teachers, Validation) {
  const auto& t = small_task();
  EXPECT_THROW(validate_teacher(EnsembleTeacher{}, t.spec), InvalidParameter);
  EXPECT_THROW(predict(EnsembleTeacher{}, t.spec, t.test.input(0)), InvalidParameter);
  const auto wrong = NetworkParams::zeros({6, {}, 4});
  EXPECT_THROW(validate_teacher(DeterministicTeacher{wrong}, t.spec), ShapeError);
  const auto lin = NetworkParams::zeros(kLinear);
  const auto deep = NetworkParams::zeros({6, {4}, 3});
  EXPECT_THROW(validate_teacher(EnsembleTeacher{{lin, deep}}, t.spec), ShapeError);
  EXPECT_THROW(predict(OracleTeacher{}, t.spec, t.test.input(0), 0.0), InvalidParameter);
  EXPECT_THROW(train_ensemble(t.train, kLinear, teacher_config(1, 10), 0), InvalidParameter);
  TeacherRegistry reg{t.spec, {}};
  EXPECT_THROW(reg.at("teacher"), ConfigError);
}

TEST(Teachers, ManifestRoundTrip) {
  RngStream rng(8);
  EnsembleTeacher ens;
  for (int i = 0; i < 3; ++i) ens.members.push_back(init_params({6, {5}, 3}, rng));
  const auto dir = fs::temp_directory_path() / "bcpkd_teachers_manifest";
  fs::remove_all(dir);
  fs::create_directories(dir);
  save_ensemble((dir / "ensemble.txt").string(), ens);
  EXPECT_TRUE(fs::exists(dir / "ensemble_member2.bin"));
  const auto back = load_ensemble((dir / "ensemble.txt").string());
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(back.members[i], ens.members[i]);

  std::ofstream(dir / "bad.txt") << "not a manifest\n";
  EXPECT_THROW(load_ensemble((dir / "bad.txt").string()), IoError);
  std::ofstream(dir / "empty.txt") << "bcpkd-ensemble 1\n";
  EXPECT_THROW(load_ensemble((dir / "empty.txt").string()), IoError);
  std::ofstream(dir / "dangling.txt") << "bcpkd-ensemble 1\nnope.bin\n";
  EXPECT_THROW(load_ensemble((dir / "dangling.txt").string()), IoError);
  fs::remove_all(dir);
}
