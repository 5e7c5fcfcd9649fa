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

#include "ntpd/conditioner.hpp"
#include "oracles.hpp"

namespace ntpd {
namespace {

DensityOperator single_mode(const Matrix& m) { return DensityOperator(ModeLayout({int(m.rows())}), m); }

Matrix thermal(double nbar, int d) {
  const auto p = oracle::thermal_populations(nbar, d);
  Matrix m = Matrix::Zero(d, d);
  for (int n = 0; n < d; ++n) m(n, n) = p[n];
  return m / m.trace();
}

TEST(Projector, MatchesHermiteFunctions) {
  for (double x : {-3.1, -0.4, 0.0, 1.7, 4.5})
    for (int d : {1, 5, 24}) {
      const QuadratureProjector p(x, d);
      for (int n = 0; n < d; ++n) EXPECT_NEAR(p.v[n], oracle::hermite_function(n, x), 1e-12) << "x=" << x << " n=" << n;
    }
  EXPECT_THROW(QuadratureProjector(std::nan(""), 3), ValidationError);
}

TEST(Wigner, DisplacementElementsMatchLaguerre) {
  const Complex beta(0.8, -1.3);
  const Matrix D = displacement_elements(7, beta);
  for (int m = 0; m < 7; ++m)
    for (int n = 0; n < 7; ++n) EXPECT_NEAR(std::abs(D(m, n) - oracle::displacement_element(m, n, beta)), 0.0, 1e-12);
}

TEST(Wigner, SinglePhotonClosedForm) {
  Matrix one = Matrix::Zero(4, 4);
  one(1, 1) = 1.0;
  for (double x : {0.0, 0.3, -0.9, 1.4})
    for (double p : {0.0, 0.5, -1.1}) EXPECT_NEAR(wigner_at(one, Complex(x, p)), oracle::wigner_one_photon(x, p), 1e-13);
  const auto g = wigner(single_mode(one));
  EXPECT_NEAR(g.normalization, 1.0, 1e-6);
  EXPECT_NEAR(negativity(g), oracle::negativity_one_photon(), 0.01 * oracle::negativity_one_photon());
  EXPECT_NEAR(wigner_at(one, 0.0), -2.0 / oracle::pi, 1e-13);
}

// Independent route: Fourier transform of the characteristic function.
TEST(Wigner, AgreesWithCharacteristicFunction) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  Matrix a(5, 5);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = Complex(nd(rng), nd(rng));
  const Matrix rho = a * a.adjoint() / (a * a.adjoint()).trace();
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<Complex> alphas;
  for (int i = 0; i < 16; ++i) alphas.emplace_back(u(rng), u(rng));
  const auto ref = oracle::wigner_by_characteristic(rho, alphas);
  for (int i = 0; i < 16; ++i) EXPECT_NEAR(wigner_at(rho, alphas[i]), ref[i], 1e-8) << alphas[i];
}

TEST(Wigner, ThermalStateGaussianAndPurity) {
  const double nbar = 1.0;
  const auto rho = single_mode(thermal(nbar, 20));
  EXPECT_NEAR(purity(rho), oracle::thermal_purity(nbar), 1e-5);
  const auto g = wigner(rho, WignerSpec{6.0, 121, 3});
  double w2 = 0.0, worst = 0.0;
  for (std::size_t i = 0; i < g.x.size(); ++i)
    for (std::size_t j = 0; j < g.p.size(); ++j) {
      const double r2 = g.x[i] * g.x[i] + g.p[j] * g.p[j];
      const double ref = (2.0 / oracle::pi) / (2.0 * nbar + 1.0) * std::exp(-2.0 * r2 / (2.0 * nbar + 1.0));
      worst = std::max(worst, std::abs(g.W(Eigen::Index(i), Eigen::Index(j)) - ref));
      w2 += std::pow(g.W(Eigen::Index(i), Eigen::Index(j)), 2) * g.dx * g.dp;
    }
  EXPECT_LT(worst, 1e-5);
  // purity = pi * int W^2 dx dp in this convention
  EXPECT_NEAR(oracle::pi * w2, oracle::thermal_purity(nbar), 1e-4);
  EXPECT_LT(negativity(g), 1e-6);
}

TEST(Wigner, GridWidensWhenTooSmall) {
  Matrix coh = Matrix::Zero(12, 12);
  const Vector c = oracle::coherent(12, 2.0);
  coh = c * c.adjoint();
  const auto g = wigner(single_mode(coh), WignerSpec{2.0, 41, 3});
  EXPECT_GT(g.extensions, 0);
  EXPECT_NEAR(g.normalization, 1.0, 1e-3);
  EXPECT_THROW(wigner(single_mode(coh), WignerSpec{1.0, 21, 0}), NumericalGuardError);
}

TEST(Conditioning, GhzLikeStateAtZeroOutcome) {
  const ModeLayout l({3, 3, 3});
  Vector a = Vector::Zero(27);
  a[0] = 0.6;
  a[13] = Complex(0.0, 0.8);
  const auto c = condition_on_homodyne(DensityOperator::from_pure(StateVector(l, a)), 0.0, 0.0);
  // <0|x=0> = pi^-1/4, <1|x=0> = 0: only |000> survives.
  Vector zero = Vector::Zero(3);
  zero[0] = 1.0;
  EXPECT_NEAR(fidelity_with_pure(c.rho, zero), 1.0, 1e-12);
  EXPECT_NEAR(c.success_weight, 0.36 / oracle::pi, 1e-12);
}

TEST(Conditioning, OutcomeSelectsSuperposition) {
  const ModeLayout l({3, 3, 3});
  Vector a = Vector::Zero(27);
  a[0] = 0.6;
  a[13] = Complex(0.0, 0.8);
  const double x1 = 0.7, x2 = -0.4;
  const auto c = condition_on_homodyne(DensityOperator::from_pure(StateVector(l, a)), x1, x2);
  Vector ref = Vector::Zero(3);
  ref[0] = 0.6 * oracle::hermite_function(0, x1) * oracle::hermite_function(0, x2);
  ref[1] = Complex(0.0, 0.8) * oracle::hermite_function(1, x1) * oracle::hermite_function(1, x2);
  EXPECT_NEAR(c.success_weight, ref.squaredNorm(), 1e-12);
  EXPECT_NEAR(fidelity_with_pure(c.rho, ref / ref.norm()), 1.0, 1e-12);
  EXPECT_NEAR(c.rho.trace().real(), 1.0, 1e-13);
}

TEST(Conditioning, ProductStateIsUnchanged) {
  const ModeLayout l({4, 4, 4});
  const Vector f0 = oracle::coherent(4, 0.3), f1 = oracle::coherent(4, {0.1, 0.2}), f2 = oracle::coherent(4, {-0.4, 0.1});
  const auto c = condition_on_homodyne(DensityOperator::from_pure(product_state(l, {f0, f1, f2})), 1.2, -0.5);
  EXPECT_NEAR(fidelity_with_pure(c.rho, f2), 1.0, 1e-12);
}

TEST(Conditioning, RejectsBadInput) {
  const ModeLayout two({3, 3});
  EXPECT_THROW(condition_on_homodyne(DensityOperator::from_pure(StateVector::vacuum(two)), 0.0, 0.0), LayoutError);
  const ModeLayout l({3, 3, 3});
  const auto vac = DensityOperator::from_pure(StateVector::vacuum(l));
  EXPECT_THROW(condition_on_homodyne(vac, 0.0, 0.0, {0, 0}, 2), LayoutError);
  EXPECT_THROW(condition_on_homodyne(vac, 60.0, 0.0), NumericalGuardError);
}

}  // namespace
}  // namespace ntpd
