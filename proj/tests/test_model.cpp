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
#include "ntpd/witness.hpp"
#include "oracles.hpp"

namespace ntpd {
namespace {

ModelParams cavity_only(double g, double gamma, double theta = std::numbers::pi / 2) {
  ModelParams p;
  p.g = g;
  p.theta = theta;
  p.gammas = {gamma, gamma, gamma};
  return p;
}

TEST(Hamiltonian, TripleCreationElement) {
  const ModeLayout l({3, 3, 3});
  for (double theta : {0.0, std::numbers::pi / 2, 1.1}) {
    const auto H = build_H_s(cavity_only(0.7, 0.0, theta), l);
    const std::vector<int> one{1, 1, 1}, zero{0, 0, 0};
    const Complex el = Matrix(H.matrix)(Eigen::Index(l.flat_index(one)), Eigen::Index(l.flat_index(zero)));
    EXPECT_NEAR(std::abs(el - 0.7 * std::exp(Complex(0.0, -theta))), 0.0, 1e-14);
    EXPECT_LT(H.hermiticity_residual(), 1e-14);
  }
}

TEST(Hamiltonian, ExchangeIsHermitianAndConnectsPartners) {
  ModelParams p = cavity_only(1.0, 1.0);
  p.include_virtual = true;
  const auto s = constant_coupling(1.5, UniformGrid::spanning(1.0, 2));
  p.coupling = std::array<CouplingSchedule, 3>{s, s, s};
  const ModeLayout l({2, 2, 2, 2, 2, 2});
  const auto H = build_H_ex(p, l, p.couplings_at(0.0));
  EXPECT_LT(H.hermiticity_residual(), 1e-14);
  const std::vector<int> cav{1, 0, 0, 0, 0, 0}, vir{0, 0, 0, 1, 0, 0};
  EXPECT_GT(std::abs(Matrix(H.matrix)(Eigen::Index(l.flat_index(vir)), Eigen::Index(l.flat_index(cav)))), 0.1);
}

TEST(Model, RejectsBadParameters) {
  ModelParams p;
  p.gammas = {1.0, -1.0, 0.0};
  EXPECT_THROW(p.validate(), ValidationError);
  ModelParams q;
  q.include_virtual = true;
  EXPECT_THROW(q.validate(), ValidationError);
  const ModeLayout l({3, 3});
  EXPECT_THROW(GeneratorSet(ModelParams{}, l), LayoutError);
}

// Adjoint consistency: Tr[O L(rho)] = Tr[L^dag(O) rho].
TEST(Liouvillian, AdjointConsistency) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  const ModeLayout l({3, 3, 3});
  const GeneratorSet gens(cavity_only(1.0, 0.6), l);
  const Liouvillian L(gens, Couplings{});
  const auto n = Eigen::Index(l.total_dim());
  Matrix a(n, n), o(n, n);
  for (Eigen::Index i = 0; i < n * n; ++i) a.data()[i] = Complex(nd(rng), nd(rng)), o.data()[i] = Complex(nd(rng), nd(rng));
  const Matrix rho = a * a.adjoint() / (a * a.adjoint()).trace();
  Matrix lr, lo;
  L.apply(rho, lr);
  L.apply_adjoint(o, lo);
  EXPECT_NEAR(std::abs((o * lr).trace() - (lo * rho).trace()), 0.0, 1e-10);
  EXPECT_NEAR(std::abs(lr.trace()), 0.0, 1e-11);
}

TEST(Master, SinglePhotonDecay) {
  const ModeLayout l({3, 2, 2});
  const double gamma = 0.8;
  ModelParams p = cavity_only(0.0, gamma);
  const GeneratorSet gens(p, l);
  const std::vector<int> occ{1, 0, 0};
  const auto n0 = make_ladder(l, 0, LadderKind::number);
  const auto diag = integrate_master(DensityOperator::from_pure(StateVector::basis(l, occ)), gens, UniformGrid{0.0, 0.25, 21},
                                     [&](std::size_t, double t, const DensityOperator& rho) {
                                       EXPECT_NEAR(expectation(rho, n0).real(), oracle::photon_survival(gamma, t), 1e-8);
                                     });
  EXPECT_LT(diag.max_trace_drift, 1e-10);
}

TEST(Master, TracePositivityUnderNtpd) {
  const ModeLayout l({4, 4, 4});
  const GeneratorSet gens(cavity_only(1.0, 2.0), l);
  integrate_master(DensityOperator::from_pure(StateVector::vacuum(l)), gens, UniformGrid{0.0, 0.1, 11},
                   [&](std::size_t, double, const DensityOperator& rho) {
                     EXPECT_NEAR(rho.trace().real(), 1.0, 1e-9);
                     Eigen::SelfAdjointEigenSolver<Matrix> es(rho.matrix(), Eigen::EigenvaluesOnly);
                     EXPECT_GT(es.eigenvalues().minCoeff(), -1e-9);
                   });
}

TEST(Master, RefusesHugeDenseProblems) {
  const ModeLayout l({17, 17, 17});
  const GeneratorSet gens(cavity_only(1.0, 0.0), l);
  EXPECT_THROW(integrate_master(DensityOperator::from_pure(StateVector::vacuum(l)), gens, UniformGrid{0.0, 0.1, 2},
                                [](std::size_t, double, const DensityOperator&) {}),
               ValidationError);
}

// The pump phase is a local rotation: witness margins do not depend on it.
TEST(Master, PumpPhaseInvariance) {
  const ModeLayout l({5, 5, 5});
  std::vector<CriteriaReport> a, b;
  for (double theta : {0.0, std::numbers::pi / 2}) {
    const GeneratorSet gens(cavity_only(1.0, 0.5, theta), l);
    auto& out = theta == 0.0 ? a : b;
    integrate_master(DensityOperator::from_pure(StateVector::vacuum(l)), gens, UniformGrid{0.0, 0.1, 4},
                     [&](std::size_t, double, const DensityOperator& rho) { out.push_back(evaluate_criteria(accumulate_moments(rho, {0, 1, 2}, 1))); });
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a[i].E_g, b[i].E_g, 1e-8);
    EXPECT_NEAR(a[i].S_f, b[i].S_f, 1e-8);
    EXPECT_NEAR(a[i].var_ent_f, b[i].var_ent_f, 1e-8);
  }
}

TEST(Integrator, DormandPrinceOnExponential) {
  using V = Vector;
  DormandPrince<V> dp;
  V y = V::Ones(1);
  double h = 0.1;
  const StepControl ctl{1e-10, 1e-12};
  auto make = [](double) { return [](const V& x, V& dx) { dx = -2.0 * x; }; };
  propagate_interval(y, 0.0, 1.5, h, ctl, make, dp);
  EXPECT_NEAR(std::abs(y[0] - std::exp(-3.0)), 0.0, 1e-9);
}

}  // namespace
}  // namespace ntpd
