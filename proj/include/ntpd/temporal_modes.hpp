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

// Dominant temporal mode of an output field and the virtual-cavity coupling
// that captures it.

#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>
#include "json.hpp"

#include "ntpd/coupling.hpp"
#include "ntpd/master.hpp"

namespace ntpd {

/// Fourth-order Gregory end-corrected weights (in units of dt). Falls back
/// to Simpson or trapezoid weights on grids too short for the corrections.
inline std::vector<double> quadrature_weights(std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (n == 0) return w;
  if (n == 1) return {0.0};
  if (n < 6) {
    if (n % 2 == 1) {  // composite Simpson
      for (std::size_t i = 0; i < n; ++i) w[i] = (i == 0 || i == n - 1) ? 1.0 / 3.0 : (i % 2 ? 4.0 / 3.0 : 2.0 / 3.0);
    } else {
      w.front() = w.back() = 0.5;
    }
    return w;
  }
  constexpr double edge[3] = {3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0};
  for (std::size_t i = 0; i < 3; ++i) {
    w[i] = edge[i];
    w[n - 1 - i] = edge[i];
  }
  return w;
}

/// Cumulative integrals c_i = int_0^{t_i} f dt with the same rule on each
/// prefix grid.
inline std::vector<double> cumulative_integral(const std::vector<double>& f, double dt) {
  std::vector<double> c(f.size(), 0.0);
  for (std::size_t i = 1; i < f.size(); ++i) {
    const auto w = quadrature_weights(i + 1);
    double s = 0.0;
    for (std::size_t j = 0; j <= i; ++j) s += w[j] * f[j];
    c[i] = s * dt;
  }
  return c;
}

struct TemporalMode {
  UniformGrid grid;
  std::vector<Complex> samples;  // mu(t_i)
  double occupation = 0.0;
  std::size_t mode = 0;

  /// sum_i w_i |mu_i|^2 dt.
  double norm() const {
    const auto w = quadrature_weights(samples.size());
    double s = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) s += w[i] * std::norm(samples[i]);
    return s * grid.dt;
  }
};

/// All eigenmodes of the discretized kernel, occupations descending.
struct KernelDecomposition {
  std::vector<double> occupations;
  std::vector<TemporalMode> modes;
};

namespace detail {

inline void fix_phase(std::vector<Complex>& v) {
  std::size_t arg = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (std::abs(v[i]) > std::abs(v[arg]) * (1.0 + 1e-12)) arg = i;
  if (v.empty() || std::abs(v[arg]) == 0.0) return;
  const Complex phase = std::conj(v[arg]) / std::abs(v[arg]);
  for (auto& x : v) x *= phase;
  v[arg] = std::abs(v[arg]);
}

}  // namespace detail

/// Solves the quadrature-weighted Hermitian eigenproblem
///   sqrt(W) K sqrt(W) dt v = n v,   mu = v / sqrt(w dt).
inline KernelDecomposition decompose_kernel(const CorrelationKernel& kernel) {
  const auto n = kernel.K.rows();
  if (n != kernel.K.cols() || static_cast<std::size_t>(n) != kernel.grid.count)
    throw LayoutError("kernel: matrix does not match its grid");
  if (n < 2) throw ValidationError("kernel: need at least two grid points");
  const double dt = kernel.grid.dt;
  const auto w = quadrature_weights(static_cast<std::size_t>(n));
  RealVector sw(n);
  for (Eigen::Index i = 0; i < n; ++i) sw[i] = std::sqrt(w[static_cast<std::size_t>(i)] * dt);
  Matrix a = sw.asDiagonal() * kernel.K * sw.asDiagonal();
  a = 0.5 * (a + a.adjoint()).eval();
  Eigen::SelfAdjointEigenSolver<Matrix> es(a);
  if (es.info() != Eigen::Success) throw NumericalGuardError("kernel: eigen-decomposition failed");
  KernelDecomposition out;
  for (Eigen::Index c = n - 1; c >= 0; --c) {
    TemporalMode m;
    m.grid = kernel.grid;
    m.mode = kernel.mode;
    m.occupation = es.eigenvalues()[c];
    m.samples.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
      m.samples[static_cast<std::size_t>(i)] = sw[i] > 0.0 ? es.eigenvectors()(i, c) / sw[i] : Complex(0.0);
    detail::fix_phase(m.samples);
    out.occupations.push_back(m.occupation);
    out.modes.push_back(std::move(m));
  }
  return out;
}

inline TemporalMode most_populated_mode(const CorrelationKernel& kernel) {
  auto d = decompose_kernel(kernel);
  if (!(d.occupations.front() >= 1e-12)) throw NumericalGuardError("vacuum output, no dominant mode");
  return std::move(d.modes.front());
}

/// g_mu(t) = -mu^*(t) / sqrt(int_0^t |mu|^2), zero before the cumulative norm
/// reaches `onset`, magnitude clamped to `cap`.
inline CouplingSchedule coupling_from_mode(const TemporalMode& mode, double cap, double onset) {
  return matched_coupling(mode.grid, mode.samples, cap, onset);
}

/// Fraction of samples where the cap was not active.
inline double unclamped_fraction(const TemporalMode& mode, const CouplingSchedule& s) {
  if (s.cumulative.size() != mode.samples.size()) throw LayoutError("unclamped_fraction: schedule does not match the mode");
  std::size_t free = 0;
  for (std::size_t i = 0; i < mode.samples.size(); ++i) {
    const double c = s.cumulative[i];
    if (c < s.onset || c <= 0.0 || std::abs(mode.samples[i]) / std::sqrt(c) <= s.cap) ++free;
  }
  return mode.samples.empty() ? 1.0 : static_cast<double>(free) / static_cast<double>(mode.samples.size());
}

// Cache files: kernel CSV (i, j, re, im), mode CSV (t, re, im), JSON sidecar.

inline void write_kernel_csv(const std::string& path, const CorrelationKernel& k) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  os << "i,j,re,im\n";
  char buf[128];
  for (Eigen::Index i = 0; i < k.K.rows(); ++i)
    for (Eigen::Index j = 0; j < k.K.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%ld,%ld,%.17g,%.17g\n", static_cast<long>(i), static_cast<long>(j), k.K(i, j).real(),
                    k.K(i, j).imag());
      os << buf;
    }
}

inline CorrelationKernel read_kernel_csv(const std::string& path, const UniformGrid& grid, std::size_t mode, double gamma) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path);
  CorrelationKernel k;
  k.grid = grid;
  k.mode = mode;
  k.gamma = gamma;
  const auto n = static_cast<Eigen::Index>(grid.count);
  k.K = Matrix::Zero(n, n);
  std::string line;
  std::getline(is, line);
  long i, j;
  double re, im;
  while (std::getline(is, line)) {
    if (std::sscanf(line.c_str(), "%ld,%ld,%lf,%lf", &i, &j, &re, &im) != 4 || i < 0 || j < 0 || i >= n || j >= n)
      throw IoError("malformed kernel row in " + path);
    k.K(i, j) = Complex(re, im);
  }
  return k;
}

inline void write_mode_csv(const std::string& path, const TemporalMode& m) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  os << "t,re,im\n";
  char buf[96];
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", m.grid.at(i), m.samples[i].real(), m.samples[i].imag());
    os << buf;
  }
}

inline nlohmann::json mode_sidecar(const TemporalMode& m, const CouplingSchedule& s, double gamma, double g) {
  return {{"mode", m.mode},
          {"grid", {{"t0", m.grid.t0}, {"dt", m.grid.dt}, {"count", m.grid.count}}},
          {"gamma", gamma},
          {"g", g},
          {"occupation", m.occupation},
          {"norm", m.norm()},
          {"coupling", {{"cap", s.cap}, {"onset", s.onset}, {"unclamped_fraction", unclamped_fraction(m, s)}}}};
}

}  // namespace ntpd
