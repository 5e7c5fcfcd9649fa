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

#include <random>

#include <gtest/gtest.h>

#include "ntpd/master.hpp"
#include "ntpd/verify.hpp"
#include "ntpd/witness.hpp"
#include "oracles.hpp"

namespace ntpd {
namespace {

StateVector random_state(std::mt19937_64& rng, const ModeLayout& l, double decay = 0.8) {
  std::normal_distribution<double> nd;
  Vector a(Eigen::Index(l.total_dim()));
  for (std::size_t i = 0; i < l.total_dim(); ++i) {
    int tot = 0;
    for (std::size_t k = 0; k < l.num_modes(); ++k) tot += l.occupation(i, k);
    a[Eigen::Index(i)] = Complex(nd(rng), nd(rng)) * std::exp(-decay * tot);
  }
  StateVector s(l, a);
  s.normalize();
  return s;
}

StateVector ghz_like(Complex c0, Complex c1, int d = 4) {
  const ModeLayout l({d, d, d});
  Vector a = Vector::Zero(Eigen::Index(l.total_dim()));
  a[Eigen::Index(l.flat_index(std::vector<int>{0, 0, 0}))] = c0;
  a[Eigen::Index(l.flat_index(std::vector<int>{1, 1, 1}))] = c1;
  StateVector s(l, a);
  s.normalize();
  return s;
}

// |000> - i gt e^{-i theta}|111>, theta = pi/2, normalized.
StateVector perturbative(double gt) { return ghz_like(1.0, Complex(-gt, 0.0) * Complex(0.0, 1.0) * std::exp(Complex(0.0, -std::numbers::pi / 2))); }

CriteriaReport report(const StateVector& s, int n) { return evaluate_criteria(accumulate_moments(s, {0, 1, 2}, n)); }

TEST(Moments, Vacuum) {
  const auto m = accumulate_moments(StateVector::vacuum(ModeLayout({3, 3, 3})), {0, 1, 2}, 1);
  for (const auto& p : m.part) {
    EXPECT_EQ(p.M1, Complex(0.0));
    EXPECT_EQ(p.M2, Complex(0.0));
    EXPECT_NEAR(p.N2, 0.0, 1e-15);
    EXPECT_NEAR(p.A1, 1.0, 1e-15);
    EXPECT_NEAR(p.C_k, 2.0, 1e-15);
    EXPECT_NEAR(p.C_lm, 2.0, 1e-15);
  }
  EXPECT_EQ(m.M3, Complex(0.0));
  const auto r = evaluate_criteria(m);
  EXPECT_FALSE(r.fully_inseparable_entanglement || r.fully_inseparable_steering || r.genuine_steering || r.genuine_entanglement);
}

TEST(Moments, GhzLikeState) {
  const Complex c0(0.8, 0.1), c1(0.2, -0.5);
  const auto s = ghz_like(c0, c1);
  const double nrm = std::norm(c0) + std::norm(c1);
  const auto m = accumulate_moments(s, {0, 1, 2}, 1);
  EXPECT_NEAR(std::abs(m.M3 - std::conj(c0) * c1 / nrm), 0.0, 1e-14);
  for (const auto& p : m.part) {
    EXPECT_NEAR(p.N1, std::norm(c1) / nrm, 1e-14);
    EXPECT_NEAR(p.N2, std::norm(c1) / nrm, 1e-14);
  }
}

TEST(Moments, CoherentProduct) {
  const ModeLayout l({12, 12, 12});
  const std::vector<Complex> beta{1.0, 1.0, 1.0};
  const auto m = accumulate_moments(coherent_state(l, beta).state, {0, 1, 2}, 1);
  EXPECT_NEAR(std::abs(m.part[0].M1 - 1.0), 0.0, 1e-3);
  EXPECT_NEAR(std::abs(m.part[0].M2 - 1.0), 0.0, 1e-3);
  EXPECT_NEAR(std::abs(m.M3 - 1.0), 0.0, 1e-3);
  const auto r = evaluate_criteria(m);
  EXPECT_TRUE(r.symmetric);
  EXPECT_LT(r.var_ent_f, 1e-9);
  EXPECT_LT(r.var_steer_f, 1e-9);
}

// Second-order commutator constants against their explicit diagonal forms.
TEST(Moments, OrderTwoCommutators) {
  std::mt19937_64 rng(4);
  const ModeLayout l({5, 5, 5});
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = random_state(rng, l);
    const auto m = accumulate_moments(s, {0, 1, 2}, 2);
    const RealVector pop = s.amplitudes.cwiseAbs2();
    for (std::size_t k = 0; k < 3; ++k) {
      const auto [lm, mm] = kPartners[k];
      double ck = 0.0, clm = 0.0;
      for (std::size_t i = 0; i < l.total_dim(); ++i) {
        const double nk = l.occupation(i, k), nl = l.occupation(i, lm), nm = l.occupation(i, mm);
        ck += pop[Eigen::Index(i)] * (8.0 * nk + 4.0);
        clm += pop[Eigen::Index(i)] * 2.0 * ((nl + 1) * (nl + 2) * (nm + 1) * (nm + 2) - nl * (nl - 1) * nm * (nm - 1));
      }
      EXPECT_NEAR(m.part[k].C_k, ck, 1e-8);
      EXPECT_NEAR(m.part[k].C_lm, clm, 1e-8);
    }
  }
}

TEST(Gains, ClosedFormMatchesNumericMinimizer) {
  std::mt19937_64 rng(8);
  const ModeLayout l({4, 4, 4});
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = accumulate_moments(random_state(rng, l), {0, 1, 2}, 1);
    for (const auto& p : m.part)
      for (Family f : {Family::steering, Family::entanglement, Family::genuine_entanglement}) {
        const auto q = gain_quadratic(p, f);
        if (q.c <= 1e-12) continue;
        const auto g = optimal_gain(p, f);
        EXPECT_FALSE(g.numeric);
        const double gn = golden_minimize(q, -10.0, 10.0, 1e-12);
        EXPECT_NEAR(g.g, gn, 1e-6);
        EXPECT_NEAR(q(g.g), q.a - q.b * q.b / q.c, 1e-8 * std::max(1.0, std::abs(q.a)));
      }
  }
}

TEST(Gains, ZeroCovarianceGivesZeroGain) {
  const auto m = accumulate_moments(StateVector::vacuum(ModeLayout({3, 3, 3})), {0, 1, 2}, 1);
  for (Family f : {Family::steering, Family::entanglement, Family::genuine_entanglement}) EXPECT_EQ(optimal_gain(m.part[0], f).g, 0.0);
}

TEST(Gains, DegenerateCurvatureFallsBackToBracketEnd) {
  const GainQuadratic q{1.0, 0.5, 0.0};
  EXPECT_NEAR(golden_minimize(q, -10.0, 10.0), -10.0, 1e-9);
  EXPECT_NEAR(golden_minimize(q, -2.0, 3.0), -2.0, 1e-9);
}

TEST(Closed, GenuineEntanglementThreshold) {
  for (double ratio : {0.9, 0.99, 1.01, 1.2}) {
    const double c0 = 1.0, c1 = 1.0 / (3.0 * ratio);
    EXPECT_EQ(report(ghz_like(c0, c1), 1).E_g > 0.0, oracle::ghz_like_genuine(c0, c1)) << ratio;
    EXPECT_EQ(report(ghz_like(c0, -c1), 1).E_g > 0.0, oracle::ghz_like_genuine(c0, c1)) << ratio;
  }
}

TEST(Closed, PerturbativeVacuumValues) {
  const double gt = 0.1;
  const auto r = report(perturbative(gt), 1);
  ASSERT_TRUE(r.symmetric);
  EXPECT_NEAR(r.E_g, oracle::genuine_entanglement_margin(gt), 0.1 * oracle::genuine_entanglement_margin(gt));
  EXPECT_NEAR(r.F_s, oracle::steering_bound_f(gt), 0.1 * oracle::steering_bound_f(gt));
  EXPECT_GT(r.S_f, 0.0);
  EXPECT_NEAR(r.G_s, oracle::steering_bound_g(), 0.1 * oracle::steering_bound_g());
  EXPECT_LT(r.S_g, 0.0);
  EXPECT_TRUE(r.fully_inseparable_steering);
  EXPECT_FALSE(r.genuine_steering);
}

TEST(Closed, VacuumReduction) {
  // With M1 = M2 = 0 the bounds only involve populations.
  const auto s = ghz_like(0.9, Complex(0.0, 0.2));
  const auto m = accumulate_moments(s, {0, 1, 2}, 1);
  const auto r = evaluate_criteria(m);
  const auto& p = m.part[0];
  EXPECT_NEAR(r.F_e, std::sqrt(p.N1 * p.N2), 1e-14);
  EXPECT_NEAR(r.G_e, 3.0 * std::sqrt(p.N1 * p.N2), 1e-14);
  EXPECT_NEAR(r.F_s, 0.5 * std::sqrt(p.N2 + p.A2) * std::sqrt(2.0 * p.N1), 1e-14);
  EXPECT_NEAR(r.G_s, 0.5 * std::sqrt(p.N2 + p.A2) * std::sqrt(2.0 * p.N1 + 2.0 / 3.0), 1e-14);
}

TEST(Closed, AsymmetricStatesSkipClosedForm) {
  std::mt19937_64 rng(9);
  const auto r = report(random_state(rng, ModeLayout({3, 3, 3})), 1);
  EXPECT_FALSE(r.symmetric);
  EXPECT_TRUE(std::isnan(r.E_g));
  EXPECT_FALSE(r.genuine_entanglement);
  EXPECT_TRUE(std::isfinite(r.var_ent_f));
}

// Fully-inseparable steering implies fully-inseparable entanglement, as
// margin ordering along an NTPD evolution.
TEST(Properties, HierarchyAlongEvolution) {
  const ModeLayout l({6, 6, 6});
  ModelParams p;
  p.gammas = {1.0, 1.0, 1.0};
  const GeneratorSet gens(p, l);
  integrate_master(DensityOperator::from_pure(StateVector::vacuum(l)), gens, UniformGrid{0.0, 0.05, 9},
                   [&](std::size_t, double, const DensityOperator& rho) {
                     for (int n : {1, 2}) {
                       const auto r = evaluate_criteria(accumulate_moments(rho, {0, 1, 2}, n));
                       EXPECT_LE(r.var_steer_f, r.var_ent_f + 1e-12);
                       if (r.symmetric) EXPECT_LE(r.S_f, r.E_f + 1e-12);
                     }
                   });
}

TEST(Properties, LocalPhaseInvariance) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
  const ModeLayout l({4, 4, 4});
  for (int trial = 0; trial < 5; ++trial) {
    auto s = trial % 2 ? random_state(rng, l) : ghz_like(0.9, Complex(0.1, 0.25));
    auto t = s;
    const std::array<double, 3> phi{u(rng), u(rng), u(rng)};
    for (std::size_t i = 0; i < l.total_dim(); ++i) {
      double ph = 0.0;
      for (std::size_t k = 0; k < 3; ++k) ph += phi[k] * l.occupation(i, k);
      t.amplitudes[Eigen::Index(i)] *= std::exp(Complex(0.0, ph));
    }
    for (int n : {1, 2}) {
      const auto a = criteria_values(report(s, n)), b = criteria_values(report(t, n));
      const auto cols = criteria_columns(n);
      for (std::size_t c = 0; c < a.size(); ++c) {
        if (cols[c].rfind("g_", 0) == 0) continue;  // gains are phase-referenced
        if (std::isnan(a[c])) {
          EXPECT_TRUE(std::isnan(b[c])) << cols[c];
          continue;
        }
        EXPECT_NEAR(a[c], b[c], 1e-10) << cols[c];
      }
    }
  }
}

TEST(Properties, SeparableStatesNeverFlag) {
  std::mt19937_64 rng(12);
  EXPECT_EQ(detail::separable_false_positives(rng), 0u);
}

TEST(Properties, ClosedAndVarianceGenuineSignsAgree) {
  const auto rep = verify_witness();
  for (const auto& c : rep.checks) EXPECT_TRUE(c.pass) << c.name << ": " << c.measured << " vs " << c.expected;
}

TEST(Columns, NamesMatchValues) {
  CriteriaReport r;
  EXPECT_EQ(criteria_columns(1).size(), criteria_values(r).size());
  EXPECT_EQ(criteria_columns(2).front(), "E_f2");
}

}  // namespace
}  // namespace ntpd
