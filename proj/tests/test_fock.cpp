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

#include "ntpd/fock.hpp"
#include "oracles.hpp"

namespace ntpd {
namespace {

TEST(ModeLayout, RowMajorWithFirstModeSlowest) {
  const ModeLayout l({3, 4, 2});
  EXPECT_EQ(l.total_dim(), 24u);
  EXPECT_EQ(l.stride(0), 8u);
  EXPECT_EQ(l.stride(2), 1u);
  const std::vector<int> occ{2, 1, 1};
  EXPECT_EQ(l.flat_index(occ), 2u * 8 + 1 * 2 + 1);
}

TEST(ModeLayout, IndexRoundTrip) {
  const ModeLayout l({3, 5, 2, 4});
  for (std::size_t i = 0; i < l.total_dim(); ++i) {
    const auto occ = l.multi_index(i);
    EXPECT_EQ(l.flat_index(occ), i);
    for (std::size_t k = 0; k < occ.size(); ++k) EXPECT_EQ(l.occupation(i, k), occ[k]);
  }
}

TEST(ModeLayout, RejectsBadShapes) {
  EXPECT_THROW(ModeLayout(std::vector<int>{}), LayoutError);
  EXPECT_THROW(ModeLayout({3, 1}), LayoutError);
  const ModeLayout l({3, 3});
  EXPECT_THROW(l.check_mode(2), LayoutError);
  const std::vector<int> bad{3, 0};
  EXPECT_THROW((void)l.flat_index(bad), LayoutError);
}

TEST(Ladder, TruncationBoundaryOfCommutator) {
  const ModeLayout l({3});
  const auto a = make_ladder(l, 0, LadderKind::lower);
  const auto ad = make_ladder(l, 0, LadderKind::raise);
  const Matrix c = Matrix(a.matrix * ad.matrix - ad.matrix * a.matrix);
  EXPECT_NEAR(c(0, 0).real(), 1.0, 1e-15);
  EXPECT_NEAR(c(1, 1).real(), 1.0, 1e-15);
  EXPECT_NEAR(c(2, 2).real(), -2.0, 1e-15);
}

TEST(Ladder, LowerActsOnFockStates) {
  const ModeLayout l({4, 3});
  const auto a = make_ladder(l, 0, LadderKind::lower);
  const std::vector<int> occ{3, 2};
  const Vector out = a.apply(StateVector::basis(l, occ).amplitudes);
  const std::vector<int> lower{2, 2};
  EXPECT_NEAR(std::abs(out[Eigen::Index(l.flat_index(lower))]), std::sqrt(3.0), 1e-14);
  EXPECT_NEAR(out.norm(), std::sqrt(3.0), 1e-14);
}

TEST(Ladder, NumberIsAdjointProduct) {
  const ModeLayout l({3, 4});
  for (std::size_t k = 0; k < 2; ++k) {
    const auto n = make_ladder(l, k, LadderKind::number);
    const auto prod = make_ladder(l, k, LadderKind::raise) * make_ladder(l, k, LadderKind::lower);
    EXPECT_LT(Matrix(n.matrix - prod.matrix).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LT(n.hermiticity_residual(), 1e-15);
  }
}

TEST(Coherent, EigenvalueUnderTruncation) {
  const ModeLayout l({10});
  const std::vector<Complex> beta{1.0};
  const auto s = coherent_state(l, beta);
  EXPECT_NEAR(std::abs(expectation(s.state, make_ladder(l, 0, LadderKind::lower)) - 1.0), 0.0, 1e-3);
  EXPECT_FALSE(s.any_unsafe());
}

TEST(Coherent, MatchesOracleAndFlagsUnsafeTruncation) {
  const Vector v = coherent_amplitudes(6, Complex(0.7, -0.3));
  const auto ref = oracle::coherent(6, {0.7, -0.3});
  EXPECT_LT((v - ref).norm(), 1e-14);
  const ModeLayout l({5, 5});
  const std::vector<Complex> beta{1.9, 0.5};
  const auto s = coherent_state(l, beta);
  EXPECT_TRUE(s.truncation_unsafe[0]);
  EXPECT_FALSE(s.truncation_unsafe[1]);
  EXPECT_NEAR(s.state.norm_sq(), 1.0, 1e-14);
}

TEST(DensityOperator, ValidatesInput) {
  const ModeLayout l({2});
  Matrix m = Matrix::Identity(2, 2);
  EXPECT_THROW(DensityOperator(l, m), ValidationError);  // trace 2
  m(0, 1) = 0.3;
  m *= 0.5;
  EXPECT_THROW(DensityOperator(l, m), ValidationError);  // not Hermitian
  Matrix neg = Matrix::Zero(2, 2);
  neg(0, 0) = 1.5;
  neg(1, 1) = -0.5;
  EXPECT_THROW(DensityOperator(l, neg), ValidationError);
}

// Partial trace keeps trace, Hermiticity and positivity, and matches the
// pure-state reducer.
TEST(PartialTrace, PropertiesOnRandomStates) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd;
  const ModeLayout l({3, 2, 4});
  for (int trial = 0; trial < 20; ++trial) {
    Vector a(Eigen::Index(l.total_dim()));
    for (auto& x : a) x = Complex(nd(rng), nd(rng));
    StateVector psi(l, a);
    psi.normalize();
    const auto rho = DensityOperator::from_pure(psi);
    for (const std::vector<std::size_t>& keep : {std::vector<std::size_t>{0}, {2, 0}, {1, 2}}) {
      const auto red = partial_trace(rho, keep);
      EXPECT_NEAR(red.trace().real(), 1.0, 1e-12);
      EXPECT_LT(red.hermiticity_residual(), 1e-14);
      Eigen::SelfAdjointEigenSolver<Matrix> es(red.matrix());
      EXPECT_GT(es.eigenvalues().minCoeff(), -1e-12);
      const StateReducer reducer(l, keep);
      EXPECT_LT((reducer.reduce(psi) - red.matrix()).cwiseAbs().maxCoeff(), 1e-13);
      EXPECT_LT((reducer.populations(psi) - red.matrix().diagonal().real()).cwiseAbs().maxCoeff(), 1e-13);
    }
  }
}

TEST(PartialTrace, ProductStateFactorizes) {
  const ModeLayout l({3, 3});
  const Vector f0 = oracle::coherent(3, 0.4), f1 = oracle::coherent(3, {0.0, 0.8});
  const auto psi = product_state(l, {f0, f1});
  const std::vector<std::size_t> keep{1};
  const auto red = partial_trace(DensityOperator::from_pure(psi), keep);
  EXPECT_LT((red.matrix() - f1 * f1.adjoint()).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_NEAR(purity(red), 1.0, 1e-13);
}

TEST(Expectation, PureAndMixedAgree) {
  const ModeLayout l({3, 3});
  const std::vector<Complex> beta{0.5, Complex(0.2, 0.3)};
  const auto psi = coherent_state(l, beta).state;
  const auto op = make_ladder(l, 0, LadderKind::raise) * make_ladder(l, 1, LadderKind::lower);
  EXPECT_NEAR(std::abs(expectation(psi, op) - expectation(DensityOperator::from_pure(psi), op)), 0.0, 1e-14);
}

TEST(TopLevel, PopulationsPerMode) {
  const ModeLayout l({3, 2});
  RealVector pop = RealVector::Zero(6);
  pop[l.flat_index(std::vector<int>{2, 0})] = 0.25;
  pop[l.flat_index(std::vector<int>{0, 1})] = 0.75;
  const auto top = top_level_populations(l, pop);
  EXPECT_DOUBLE_EQ(top[0], 0.25);
  EXPECT_DOUBLE_EQ(top[1], 0.75);
}

}  // namespace
}  // namespace ntpd
