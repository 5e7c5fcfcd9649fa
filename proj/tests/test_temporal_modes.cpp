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

#include <gtest/gtest.h>

#include "ntpd/master.hpp"
#include "ntpd/temporal_modes.hpp"
#include "oracles.hpp"

namespace ntpd {
namespace {

CorrelationKernel analytic_kernel(double gamma, double t_max, std::size_t points) {
  CorrelationKernel k;
  k.grid = UniformGrid::spanning(t_max, points);
  k.gamma = gamma;
  const auto n = Eigen::Index(points);
  k.K.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) k.K(i, j) = oracle::decaying_kernel(1.0, gamma, k.grid.at(i), k.grid.at(j));
  return k;
}

TEST(Quadrature, IntegratesPolynomialsExactly) {
  for (std::size_t n : {5u, 7u, 50u}) {
    const auto w = quadrature_weights(n);
    const double dt = 1.0 / double(n - 1);
    double s0 = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double t = double(i) * dt;
      s0 += w[i] * dt;
      s2 += w[i] * dt * t * t;
    }
    EXPECT_NEAR(s0, 1.0, 1e-13);
    EXPECT_NEAR(s2, 1.0 / 3.0, 1e-13);
  }
  const std::vector<double> f(11, 2.0);
  EXPECT_NEAR(cumulative_integral(f, 0.1).back(), 2.0, 1e-12);
}

TEST(TemporalModes, DecayingKernelIsRankOne) {
  const double gamma = 1.3, t_max = 6.0;
  const auto d = decompose_kernel(analytic_kernel(gamma, t_max, 400));
  const double expect = 1.0 - std::exp(-gamma * t_max);
  EXPECT_NEAR(d.occupations[0], expect, 1e-6);
  EXPECT_LT(std::abs(d.occupations[1]), 1e-9);
  const auto& m = d.modes[0];
  EXPECT_NEAR(m.norm(), 1.0, 1e-9);
  // L2 distance to the normalized analytic mode.
  const auto w = quadrature_weights(m.samples.size());
  double err = 0.0;
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    const double ref = oracle::decaying_mode(gamma, m.grid.at(i)) / std::sqrt(expect);
    err += w[i] * std::norm(m.samples[i] - ref) * m.grid.dt;
  }
  EXPECT_LT(std::sqrt(err), 1e-3);
}

TEST(TemporalModes, VacuumKernelHasNoDominantMode) {
  auto k = analytic_kernel(1.0, 2.0, 20);
  k.K.setZero();
  EXPECT_THROW(most_populated_mode(k), NumericalGuardError);
}

TEST(TemporalModes, RegressionKernelOfSinglePhotonDecay) {
  const ModeLayout l({2, 2, 2});
  ModelParams p;
  p.g = 0.0;
  p.gammas = {0.9, 0.9, 0.9};
  const std::vector<int> occ{1, 0, 0};
  const auto grid = UniformGrid::spanning(4.0, 81);
  const auto ks = two_time_correlation(p, DensityOperator::from_pure(StateVector::basis(l, occ)), {0, 1}, grid);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < 81; ++i)
    for (Eigen::Index j = 0; j < 81; ++j)
      worst = std::max(worst, std::abs(ks[0].K(i, j) - oracle::decaying_kernel(1.0, 0.9, grid.at(i), grid.at(j))));
  EXPECT_LT(worst, 1e-7);
  EXPECT_LT(ks[1].K.cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((ks[0].K - ks[0].K.adjoint()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(TemporalModes, CouplingCapAndOnset) {
  const auto m = most_populated_mode(analytic_kernel(1.0, 8.0, 200));
  const auto s = coupling_from_mode(m, 3.0, 1e-3);
  EXPECT_EQ(s.values.front(), Complex(0.0));
  EXPECT_LE(s.max_abs(), 3.0 + 1e-12);
  EXPECT_LT(unclamped_fraction(m, s), 1.0);
  EXPECT_THROW(coupling_from_mode(m, 0.0, 0.0), ValidationError);
}

// A single photon leaving cavity 1 ends up in the virtual cavity that
// follows its mode.
TEST(TemporalModes, VirtualCavityCapturesTheMode) {
  const double gamma = 1.0, t_max = 10.0;
  const auto mode = most_populated_mode(analytic_kernel(gamma, t_max, 400));
  const auto sched = coupling_from_mode(mode, 50.0, 1e-6);
  ModelParams p;
  p.g = 0.0;
  p.gammas = {gamma, gamma, gamma};
  p.include_virtual = true;
  p.coupling = std::array<CouplingSchedule, 3>{sched, sched, sched};
  const ModeLayout l({2, 2, 2, 2, 2, 2});
  const GeneratorSet gens(p, l);
  const std::vector<int> occ{1, 0, 0, 0, 0, 0};
  const auto nv = make_ladder(l, 3, LadderKind::number);
  double captured = 0.0;
  integrate_master(DensityOperator::from_pure(StateVector::basis(l, occ)), gens, UniformGrid::spanning(t_max, 2),
                   [&](std::size_t i, double, const DensityOperator& rho) {
                     if (i == 1) captured = expectation(rho, nv).real();
                   });
  EXPECT_GT(captured, 0.99);
  EXPECT_LE(captured, 1.0 + 1e-9);
}

}  // namespace
}  // namespace ntpd
