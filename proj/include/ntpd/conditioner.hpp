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

// Homodyne conditioning of one mode on outcomes of the other two, and the
// Wigner function of the result.

#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>
#include "json.hpp"

#include "ntpd/fock.hpp"

namespace ntpd {

/// <x|n> for the position eigenstate of (a + a^dag)/sqrt(2):
/// pi^{-1/4} (2^n n!)^{-1/2} e^{-x^2/2} H_n(x), by the stable three-term
/// recurrence of the normalized functions.
struct QuadratureProjector {
  double x = 0.0;
  int d = 0;
  RealVector v;

  QuadratureProjector(double outcome, int dim) : x(outcome), d(dim), v(dim) {
    if (dim < 1) throw LayoutError("projector dimension must be positive");
    if (!std::isfinite(outcome)) throw ValidationError("homodyne outcome must be finite");
    v[0] = std::pow(std::numbers::pi, -0.25) * std::exp(-0.5 * x * x);
    if (dim > 1) v[1] = std::sqrt(2.0) * x * v[0];
    for (int n = 1; n + 1 < dim; ++n) v[n + 1] = std::sqrt(2.0 / (n + 1)) * x * v[n] - std::sqrt(double(n) / (n + 1)) * v[n - 1];
  }
};

struct ConditionedState {
  DensityOperator rho;
  double success_weight = 0.0;  // probability density of (x1, x2)
};

/// <x1, x2| rho |x1, x2> / Tr for measured modes `measured` and kept mode
/// `kept` of a three-mode state.
inline ConditionedState condition_on_homodyne(const DensityOperator& rho3, double x1, double x2, std::array<std::size_t, 2> measured = {0, 1},
                                              std::size_t kept = 2) {
  const ModeLayout& L = rho3.layout();
  if (L.num_modes() != 3) throw LayoutError("condition_on_homodyne: expected a three-mode state");
  if (measured[0] == measured[1] || kept == measured[0] || kept == measured[1] || kept > 2 || measured[0] > 2 || measured[1] > 2)
    throw LayoutError("condition_on_homodyne: modes must be a permutation of 0, 1, 2");
  const QuadratureProjector p1(x1, L.dim(measured[0])), p2(x2, L.dim(measured[1]));
  const int dk = L.dim(kept);
  // w[a](i) = <x1, x2, a | i> restricted to the kept level a.
  const auto n = static_cast<Eigen::Index>(L.total_dim());
  Matrix w = Matrix::Zero(dk, n);
  for (std::size_t i = 0; i < L.total_dim(); ++i) {
    const int a = L.occupation(i, kept);
    w(a, static_cast<Eigen::Index>(i)) = p1.v[L.occupation(i, measured[0])] * p2.v[L.occupation(i, measured[1])];
  }
  Matrix rc = w * rho3.matrix() * w.transpose();
  const double tr = rc.trace().real();
  if (!(tr >= 1e-14)) throw NumericalGuardError("outcome has negligible density");
  rc /= tr;
  rc = 0.5 * (rc + rc.adjoint()).eval();
  Eigen::SelfAdjointEigenSolver<Matrix> es(rc, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-9) throw NumericalGuardError("conditioned state is not positive; input state is invalid");
  return {DensityOperator(ModeLayout({dk}), std::move(rc)), tr};
}

inline constexpr const char* kWignerConvention = "W(alpha), alpha = x + i p, sum W dx dp = 1, W = (2/pi) Tr[rho D(alpha) P D(alpha)^dag]";

struct WignerSpec {
  double extent = 5.0;  // grid covers [-extent, extent]^2
  int points = 256;
  int max_extensions = 3;
};

struct WignerGrid {
  std::vector<double> x, p;
  Eigen::MatrixXd W;  // W(i, j) at x[i], p[j]
  double dx = 0.0, dp = 0.0;
  double normalization = 0.0;
  std::string convention = kWignerConvention;
  int extensions = 0;
};

/// <m|D(beta)|n> for all m, n < d.
inline Matrix displacement_elements(int d, Complex beta) {
  Matrix D(d, d);
  const double r2 = std::norm(beta);
  const double env = std::exp(-0.5 * r2);
  for (int n = 0; n < d; ++n) {
    for (int m = n; m < d; ++m) {
      const int k = m - n;
      // Generalized Laguerre L_n^{(k)}(r2) by upward recurrence in the degree.
      double l0 = 1.0, l1 = 1.0 + k - r2;
      double lag = n == 0 ? l0 : l1;
      for (int j = 1; j < n; ++j) {
        const double l2 = ((2.0 * j + 1.0 + k - r2) * l1 - (j + k) * l0) / (j + 1.0);
        l0 = l1;
        l1 = l2;
        lag = l2;
      }
      double ratio = 1.0;  // sqrt(n!/m!)
      for (int j = n + 1; j <= m; ++j) ratio /= std::sqrt(double(j));
      const Complex bk = std::pow(beta, k);
      D(m, n) = ratio * bk * env * lag;
      if (m != n) D(n, m) = ratio * std::pow(-std::conj(beta), k) * env * lag;
    }
  }
  return D;
}

/// Displaced-parity Wigner function at alpha.
inline double wigner_at(const Matrix& rho, Complex alpha) {
  const int d = static_cast<int>(rho.rows());
  const Matrix D = displacement_elements(d, 2.0 * alpha);
  Complex s = 0.0;
  for (int n = 0; n < d; ++n) {
    const double sign = (n % 2) ? -1.0 : 1.0;
    for (int m = 0; m < d; ++m) s += sign * rho(n, m) * D(m, n);
  }
  return 2.0 / std::numbers::pi * s.real();
}

inline WignerGrid wigner_on(const DensityOperator& rho1, double extent, int points) {
  WignerGrid g;
  g.x.resize(points);
  g.p.resize(points);
  g.dx = g.dp = 2.0 * extent / (points - 1);
  for (int i = 0; i < points; ++i) g.x[i] = g.p[i] = -extent + i * g.dx;
  g.W.resize(points, points);
  for (int i = 0; i < points; ++i)
    for (int j = 0; j < points; ++j) g.W(i, j) = wigner_at(rho1.matrix(), Complex(g.x[i], g.p[j]));
  g.normalization = g.W.sum() * g.dx * g.dp;
  return g;
}

/// Wigner function on a square grid; widens the grid (keeping the spacing)
/// while the normalization misses 1 by more than 1e-3.
inline WignerGrid wigner(const DensityOperator& rho1, const WignerSpec& spec = {}) {
  if (rho1.layout().num_modes() != 1) throw LayoutError("wigner: expected a single-mode state");
  if (!(spec.extent > 0.0) || spec.points < 2) throw ValidationError("wigner: need a positive extent and at least two points");
  double extent = spec.extent;
  int points = spec.points;
  for (int e = 0;; ++e) {
    WignerGrid g = wigner_on(rho1, extent, points);
    g.extensions = e;
    if (std::abs(g.normalization - 1.0) <= 1e-3) return g;
    if (e == spec.max_extensions) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "wigner: grid too small (normalization %.6f); try extent %.3g", g.normalization, 1.5 * extent);
      throw NumericalGuardError(buf);
    }
    points = static_cast<int>(std::lround((points - 1) * 1.5)) + 1;
    extent *= 1.5;
  }
}

/// Riemann sum of |W| - W.
inline double negativity(const WignerGrid& g) { return (g.W.cwiseAbs() - g.W).sum() * g.dx * g.dp; }

inline double fidelity_with_pure(const DensityOperator& rho, const Vector& psi) { return (psi.adjoint() * rho.matrix() * psi)(0, 0).real(); }

inline void write_wigner_csv(const std::string& path, const WignerGrid& g) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  os << "x,p,W\n";
  char buf[96];
  for (std::size_t i = 0; i < g.x.size(); ++i)
    for (std::size_t j = 0; j < g.p.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", g.x[i], g.p[j], g.W(Eigen::Index(i), Eigen::Index(j)));
      os << buf;
    }
}

inline nlohmann::json wigner_sidecar(const WignerGrid& g) {
  return {{"convention", g.convention},
          {"negativity", negativity(g)},
          {"grid", {{"extent", g.x.empty() ? 0.0 : -g.x.front()}, {"points", g.x.size()}, {"dx", g.dx}, {"dp", g.dp}}},
          {"extensions", g.extensions},
          {"normalization_residual", g.normalization - 1.0}};
}

}  // namespace ntpd
