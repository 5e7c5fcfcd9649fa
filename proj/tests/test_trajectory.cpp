// Copyright 2026 The ntpd-cascade Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <filesystem>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "ntpd/ensemble.hpp"
#include "ntpd/master.hpp"
#include "oracles.hpp"

namespace ntpd {
namespace {

struct Fixture {
  ModeLayout layout{{3, 3, 3}};
  ModelParams params;
  Fixture() { params.gammas = {1.0, 1.0, 1.0}; }
  GeneratorSet gens() const { return GeneratorSet(params, layout); }
  ObservableSet observables() const {
    ObservableSet obs(layout);
    for (std::size_t k = 0; k < 3; ++k) obs.add_diagonal("I" + std::to_string(k), occupation_values(layout, k));
    return obs;
  }
};

TEST(Rng, CounterStreamsAreDeterministicAndDistinct) {
  auto a = CounterRng::for_trajectory(5, 0), b = CounterRng::for_trajectory(5, 0), c = CounterRng::for_trajectory(5, 1);
  for (int i = 0; i < 100; ++i) {
    const auto x = a();
    EXPECT_EQ(x, b());
    EXPECT_NE(x, c());
  }
  auto u = CounterRng::for_trajectory(9, 3);
  double mean = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double v = u.uniform_open();
    ASSERT_GT(v, 0.0);
    ASSERT_LT(v, 1.0);
    mean += v / 20000.0;
  }
  EXPECT_NEAR(mean, 0.5, 0.01);
}

TEST(Trajectory, SameSeedSameRecord) {
  Fixture f;
  const auto gens = f.gens();
  const auto obs = f.observables();
  const TrajectoryGrid grid{0.01, 200, 10};
  const auto psi0 = StateVector::vacuum(f.layout);
  for (std::uint64_t i = 0; i < 5; ++i) {
    const auto a = evolve_trajectory(psi0, gens, grid, 11, i, obs);
    const auto b = evolve_trajectory(psi0, gens, grid, 11, i, obs);
    EXPECT_EQ(a.jumps, b.jumps);
    EXPECT_EQ(a.samples, b.samples);
    EXPECT_EQ(a.final_state_checksum, b.final_state_checksum);
  }
}

TEST(Trajectory, ResumeFromCheckpointIsExact) {
  Fixture f;
  f.params.g = 2.0;
  const auto gens = f.gens();
  const auto obs = f.observables();
  const TrajectoryGrid grid{0.01, 300, 10};
  const auto psi0 = StateVector::vacuum(f.layout);
  std::size_t with_jumps = 0;
  for (std::uint64_t i = 0; i < 8; ++i) {
    const auto full = evolve_trajectory(psi0, gens, grid, 4, i, obs);
    TrajectoryPropagator p(gens, obs, grid);
    p.start(psi0, 4, i);
    p.run_until(137);
    std::stringstream ss;
    write_checkpoint(ss, p.checkpoint());
    const auto resumed = resume_trajectory(read_checkpoint(ss), gens, grid, obs);
    EXPECT_EQ(full.jumps, resumed.jumps);
    EXPECT_EQ(full.samples, resumed.samples);
    EXPECT_EQ(full.final_state_checksum, resumed.final_state_checksum);
    with_jumps += !full.jumps.empty();
  }
  EXPECT_GT(with_jumps, 0u);
}

TEST(Trajectory, SinglePhotonJumpTimesAreExponential) {
  const ModeLayout l({2, 2, 2});
  ModelParams p;
  p.g = 0.0;
  p.gammas = {1.5, 0.0, 0.0};
  const GeneratorSet gens(p, l);
  ObservableSet obs(l);
  const TrajectoryGrid grid{0.01, 600, 50};
  const std::vector<int> occ{1, 0, 0};
  const auto psi0 = StateVector::basis(l, occ);
  double sum = 0.0;
  int n = 0;
  for (std::uint64_t i = 0; i < 2000; ++i) {
    const auto r = evolve_trajectory(psi0, gens, grid, 2, i, obs);
    ASSERT_LE(r.jumps.size(), 1u);
    if (!r.jumps.empty()) {
      EXPECT_EQ(r.jumps[0].channel, 1);
      sum += r.jumps[0].time;
      ++n;
    }
  }
  // Truncated exponential on [0, 6]: mean 1/g - 6 e^{-6 g} / (1 - e^{-6 g}).
  const double g = 1.5, expect = 1.0 / g - 6.0 * std::exp(-6.0 * g) / (1.0 - std::exp(-6.0 * g));
  EXPECT_NEAR(sum / n, expect, 4.0 * (1.0 / g) / std::sqrt(double(n)));
  EXPECT_NEAR(double(n) / 2000.0, 1.0 - std::exp(-9.0), 0.01);
}

TEST(RunningStats, MergeIsAssociativeAndMatchesDirect) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  std::vector<Vector> xs;
  for (int i = 0; i < 60; ++i) {
    Vector v(3);
    for (auto& c : v) c = Complex(nd(rng), nd(rng));
    xs.push_back(v);
  }
  RunningStats all(3), a(3), b(3), c(3);
  for (int i = 0; i < 60; ++i) {
    all.add(xs[i]);
    (i < 17 ? a : i < 40 ? b : c).add(xs[i]);
  }
  RunningStats left = a, right = b;
  left.merge(b);
  left.merge(c);
  right.merge(c);
  RunningStats other = a;
  other.merge(right);
  EXPECT_LT((left.mean - all.mean).norm(), 1e-13);
  EXPECT_LT((other.mean - all.mean).norm(), 1e-13);
  EXPECT_LT((left.standard_error() - all.standard_error()).norm(), 1e-13);
  EXPECT_EQ(left.n, all.n);
}

// For a linear statistic the jackknife reproduces the batch standard error.
TEST(Jackknife, LinearStatistic) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd(1.0, 2.0);
  std::vector<RunningStats> batches;
  RunningStats all(1);
  for (int b = 0; b < 20; ++b) {
    RunningStats s(1);
    for (int i = 0; i < 50; ++i) {
      Vector v(1);
      v[0] = nd(rng);
      s.add(v);
      all.add(v);
    }
    batches.push_back(s);
  }
  const auto [value, se] = jackknife(batches, [](const Vector& m) { return Eigen::VectorXd::Constant(1, m[0].real()); });
  EXPECT_NEAR(value[0], all.mean[0].real(), 1e-12);
  Eigen::VectorXd bm(20);
  for (int b = 0; b < 20; ++b) bm[b] = batches[b].mean[0].real();
  const double sd = std::sqrt((bm.array() - bm.mean()).square().sum() / 19.0);
  EXPECT_NEAR(se[0], sd / std::sqrt(20.0), 1e-10);
}

TEST(Ensemble, WorkerCountDoesNotChangeResults) {
  Fixture f;
  f.params.g = 1.5;
  const auto gens = f.gens();
  const auto obs = f.observables();
  const TrajectoryGrid grid{0.01, 100, 10};
  EnsembleOptions eo;
  eo.n_traj = 60;
  eo.batch_size = 7;
  eo.master_seed = 3;
  const auto a = run_ensemble(StateVector::vacuum(f.layout), gens, obs, grid, eo);
  eo.workers = 3;
  const auto b = run_ensemble(StateVector::vacuum(f.layout), gens, obs, grid, eo);
  EXPECT_EQ(a.n_traj, 60u);
  EXPECT_EQ(a.total.mean, b.total.mean);
  EXPECT_EQ(a.total.standard_error(), b.total.standard_error());
}

TEST(Ensemble, CheckpointResumesToIdenticalResult) {
  Fixture f;
  f.params.g = 1.5;
  const auto gens = f.gens();
  const auto obs = f.observables();
  const TrajectoryGrid grid{0.01, 100, 10};
  const auto path = (std::filesystem::temp_directory_path() / "ntpd_test_ensemble.ckpt").string();
  std::filesystem::remove(path);
  EnsembleOptions eo;
  eo.n_traj = 40;
  eo.batch_size = 10;
  const auto clean = run_ensemble(StateVector::vacuum(f.layout), gens, obs, grid, eo);
  eo.checkpoint_path = path;
  eo.progress = [](std::size_t done, std::size_t) {
    if (done == 20) throw std::runtime_error("interrupted");
  };
  EXPECT_THROW(run_ensemble(StateVector::vacuum(f.layout), gens, obs, grid, eo, {}, 99), std::runtime_error);
  eo.progress = nullptr;
  EXPECT_THROW(run_ensemble(StateVector::vacuum(f.layout), gens, obs, grid, eo, {}, 98), ValidationError);
  const auto resumed = run_ensemble(StateVector::vacuum(f.layout), gens, obs, grid, eo, {}, 99);
  EXPECT_EQ(clean.total.mean, resumed.total.mean);
  EXPECT_EQ(clean.batch_stats.size(), resumed.batch_stats.size());
  std::filesystem::remove(path);
}

// Trajectory means agree with the master equation within sampling error.
TEST(Ensemble, AgreesWithMasterEquation) {
  Fixture f;
  const auto gens = f.gens();
  const auto obs = f.observables();
  const TrajectoryGrid grid{0.02, 100, 10};
  EnsembleOptions eo;
  eo.n_traj = 400;
  const auto est = run_ensemble(StateVector::vacuum(f.layout), gens, obs, grid, eo).estimate();
  const auto n0 = make_ladder(f.layout, 0, LadderKind::number);
  integrate_master(DensityOperator::from_pure(StateVector::vacuum(f.layout)), gens, UniformGrid{0.0, 0.2, 11},
                   [&](std::size_t i, double, const DensityOperator& rho) {
                     if (i < 3) return;  // too few jumps for a meaningful error bar
                     const double exact = expectation(rho, n0).real();
                     EXPECT_NEAR(est.mean(Eigen::Index(i), 0).real(), exact, 5.0 * est.se(Eigen::Index(i), 0) + 1e-12);
                   });
}

}  // namespace
}  // namespace ntpd
