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

#pragma once

#include <cmath>
#include <complex>
#include <limits>
#include <vector>

#include "ntpd/errors.hpp"

namespace ntpd {

/// Uniform grid t_i = t0 + i*dt, i = 0..count-1.
struct UniformGrid {
  double t0 = 0.0;
  double dt = 0.0;
  std::size_t count = 0;

  double at(std::size_t i) const { return t0 + static_cast<double>(i) * dt; }
  double end() const { return at(count == 0 ? 0 : count - 1); }

  static UniformGrid spanning(double t_max, std::size_t points) {
    if (points < 2 || !(t_max > 0.0)) throw ValidationError("grid needs at least 2 points and t_max > 0");
    return {0.0, t_max / static_cast<double>(points - 1), points};
  }

  std::vector<double> times() const {
    std::vector<double> t(count);
    for (std::size_t i = 0; i < count; ++i) t[i] = at(i);
    return t;
  }
};

/// Virtual-cavity coupling g_mu(t) on a grid. Plain schedules interpolate
/// `values` linearly. Mode-matched schedules keep the mode amplitudes and
/// evaluate -mu^*(t) / sqrt(int_0^t |mu|^2) from the linear interpolant of mu,
/// which resolves the 1/sqrt(t) rise at the start of the mode.
struct CouplingSchedule {
  UniformGrid grid;
  std::vector<std::complex<double>> values;
  double cap = std::numeric_limits<double>::infinity();
  double onset = 0.0;
  bool constant = false;
  std::vector<std::complex<double>> mode;  // mu(t_i), mode-matched only
  std::vector<double> cumulative;          // int_0^{t_i} |mu|^2 of the interpolant

  std::complex<double> value_at(double t) const {
    if (values.empty()) return 0.0;
    if (constant || values.size() == 1) return values.front();
    const double u = (t - grid.t0) / grid.dt;
    if (u <= 0.0) return values.front();
    const auto last = values.size() - 1;
    if (u >= static_cast<double>(last)) return values.back();
    const auto i = static_cast<std::size_t>(u);
    const double f = u - static_cast<double>(i);
    if (!mode.empty()) return matched(i, f);
    return (1.0 - f) * values[i] + f * values[i + 1];
  }

  /// Longest substep over which a frozen value stays accurate: the sample
  /// spacing, graded geometrically near the start of a mode-matched schedule.
  double max_step(double t) const {
    if (constant || values.size() < 2) return std::numeric_limits<double>::infinity();
    if (mode.empty()) return grid.dt;
    return std::min(grid.dt, std::max(1e-3 * grid.dt, 0.1 * (t - grid.t0)));
  }

  double max_abs() const {
    double m = 0.0;
    for (auto v : values) m = std::max(m, std::abs(v));
    return m;
  }

  /// Value at t_i + f dt of a mode-matched schedule.
  std::complex<double> matched(std::size_t i, double f) const {
    const auto d = mode[i + 1] - mode[i];
    const auto mu = mode[i] + f * d;
    const double c = cumulative[i] + grid.dt * (f * std::norm(mode[i]) + f * f * std::real(std::conj(mode[i]) * d) + f * f * f * std::norm(d) / 3.0);
    if (c < onset || c <= 0.0) return 0.0;
    auto v = -std::conj(mu) / std::sqrt(c);
    if (std::abs(v) > cap) v *= cap / std::abs(v);
    return v;
  }
};

/// Mode-matched schedule for samples mu_i on `grid`.
inline CouplingSchedule matched_coupling(const UniformGrid& grid, std::vector<std::complex<double>> mode, double cap, double onset) {
  if (!(cap > 0.0) || !(onset >= 0.0)) throw ValidationError("coupling_from_mode: cap must be positive, onset non-negative");
  if (mode.size() != grid.count || mode.size() < 2) throw ValidationError("coupling_from_mode: mode does not match its grid");
  CouplingSchedule s;
  s.grid = grid;
  s.cap = cap;
  s.onset = onset;
  s.cumulative.assign(mode.size(), 0.0);
  for (std::size_t i = 0; i + 1 < mode.size(); ++i) {
    const auto d = mode[i + 1] - mode[i];
    s.cumulative[i + 1] = s.cumulative[i] + grid.dt * (std::norm(mode[i]) + std::real(std::conj(mode[i]) * d) + std::norm(d) / 3.0);
  }
  s.mode = std::move(mode);
  s.values.resize(s.mode.size());
  for (std::size_t i = 0; i + 1 < s.mode.size(); ++i) s.values[i] = s.matched(i, 0.0);
  s.values.back() = s.matched(s.mode.size() - 2, 1.0);
  return s;
}

/// Constant schedule with `value` at every grid sample.
inline CouplingSchedule constant_coupling(double value, const UniformGrid& grid) {
  if (!(value > 0.0)) throw ValidationError("constant coupling must be positive");
  CouplingSchedule s;
  s.grid = grid;
  s.values.assign(grid.count, value);
  s.cap = value;
  s.constant = true;
  return s;
}

}  // namespace ntpd
