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

// Desk-scale self-checks behind `ntpd verify`.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "ntpd/conditioner.hpp"
#include "ntpd/ensemble.hpp"
#include "ntpd/master.hpp"
#include "ntpd/witness.hpp"

namespace ntpd {

struct Check {
  std::string name;
  double measured = 0.0;
  double expected = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct SuiteReport {
  std::string suite;
  std::vector<Check> checks;
  bool pass() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return !checks.empty();
  }
  nlohmann::json json() const {
    nlohmann::json j;
    j["suite"] = suite;
    j["pass"] = pass();
    j["checks"] = nlohmann::json::array();
    for (const auto& c : checks)
      j["checks"].push_back(
          {{"name", c.name}, {"measured", c.measured}, {"expected", c.expected}, {"tolerance", c.tolerance}, {"pass", c.pass}});
    return j;
  }
};

struct VerifyOptions {
  std::size_t n_traj = 2000;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
};

namespace detail {

/// Fraction of (sample, observable) points where trajectory means lie
/// within 3 standard errors of the master-equation values.
inline double oracle_agreement(const GeneratorSet& gens, const StateVector& psi0, const std::vector<std::pair<std::string, SparseOperator>>& ops,
                               double t_max, std::size_t samples, const VerifyOptions& vo) {
  ObservableSet obs(gens.layout());
  for (const auto& [n, op] : ops) obs.add(n, op);
  const double dt = t_max / double(samples - 1);
  TrajectoryGrid tg{dt / 4.0, (samples - 1) * 4, 4};
  EnsembleOptions eo;
  eo.n_traj = vo.n_traj;
  eo.master_seed = vo.seed;
  eo.workers = vo.workers;
  TrajectoryOptions topt;
  topt.control.rtol = 1e-6;
  const auto est = run_ensemble(psi0, gens, obs, tg, eo, topt).estimate();
  std::size_t inside = 0, total = 0;
  integrate_master(DensityOperator::from_pure(psi0), gens, UniformGrid{0.0, dt, samples}, [&](std::size_t i, double, const DensityOperator& rho) {
    for (std::size_t k = 0; k < ops.size(); ++k) {
      const double exact = expectation(rho, ops[k].second).real();
      const double m = est.mean(Eigen::Index(i), Eigen::Index(k)).real(), se = est.se(Eigen::Index(i), Eigen::Index(k));
      ++total;
      if (std::abs(m - exact) <= 3.0 * se + 1e-12) ++inside;
    }
  });
  return double(inside) / double(total);
}

inline std::vector<std::pair<std::string, SparseOperator>> oracle_observables(const ModeLayout& l, std::size_t modes) {
  std::vector<std::pair<std::string, SparseOperator>> ops;
  for (std::size_t k = 0; k < modes; ++k) ops.emplace_back("I" + std::to_string(k), make_ladder(l, k, LadderKind::number));
  const SparseOperator t = make_ladder(l, 0, LadderKind::lower) * make_ladder(l, 1, LadderKind::lower) * make_ladder(l, 2, LadderKind::lower);
  ops.emplace_back("re_abc", Complex(0.5) * (t + t.adjoint()));
  ops.emplace_back("im_abc", Complex(0.0, -0.5) * (t - t.adjoint()));
  return ops;
}

/// Random single-mode vector with at most three photons.
inline Vector random_local(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> nd;
  Vector v = Vector::Zero(Eigen::Index(d));
  for (std::size_t n = 0; n <= 3 && n < d; ++n) v[Eigen::Index(n)] = Complex(nd(rng), nd(rng)) * std::exp(-0.5 * double(n));
  return v / v.norm();
}

inline Vector product_vector(const std::array<Vector, 3>& f) {
  Vector out(f[0].size() * f[1].size() * f[2].size());
  Eigen::Index i = 0;
  for (Eigen::Index a = 0; a < f[0].size(); ++a)
    for (Eigen::Index b = 0; b < f[1].size(); ++b)
      for (Eigen::Index c = 0; c < f[2].size(); ++c) out[i++] = f[0][a] * f[1][b] * f[2][c];
  return out;
}

/// Exact states carry no sampling error, so "beyond 3 sigma" reduces to the
/// rounding floor.
inline bool positive_beyond_floor(double margin, double scale) { return margin > 1e-9 * std::max(1.0, scale); }

/// Count of witness margins that fire on 200 product or classically mixed
/// states (half of them permutation symmetric).
inline std::size_t separable_false_positives(std::mt19937_64& rng) {
  const std::size_t d = 6;
  const ModeLayout l({d, d, d});
  std::uniform_int_distribution<int> parts(1, 4);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::size_t fp = 0;
  for (int s = 0; s < 200; ++s) {
    const bool sym = s % 2 == 0;
    const int terms = s < 100 ? 1 : parts(rng);
    Matrix rho = Matrix::Zero(Eigen::Index(l.total_dim()), Eigen::Index(l.total_dim()));
    double wsum = 0.0;
    for (int t = 0; t < terms; ++t) {
      std::array<Vector, 3> f;
      f[0] = random_local(rng, d);
      f[1] = sym ? f[0] : random_local(rng, d);
      f[2] = sym ? f[0] : random_local(rng, d);
      const Vector v = product_vector(f);
      const double w = u(rng);
      rho += w * v * v.adjoint();
      wsum += w;
    }
    const DensityOperator dm(l, rho / wsum);
    for (int n : {1, 2}) {
      const auto rep = evaluate_criteria(accumulate_moments(dm, {0, 1, 2}, n));
      double scale = 0.0;
      for (std::size_t k = 0; k < 3; ++k) scale = std::max({scale, std::abs(rep.C_k[k]), std::abs(rep.C_lm[k]), std::abs(rep.E[k])});
      std::vector<double> margins = {rep.var_ent_f, rep.var_steer_f, rep.var_steer_g};
      if (rep.symmetric) margins.insert(margins.end(), {rep.var_ent_g, rep.E_f, rep.E_g, rep.S_f, rep.S_g});
      for (double m : margins)
        if (positive_beyond_floor(m, scale)) ++fp;
    }
  }
  return fp;
}

}  // namespace detail

inline SuiteReport verify_oracle(const VerifyOptions& vo = {}) {
  SuiteReport r{"oracle", {}};
  ModelParams p;
  p.gammas = {1.0, 1.0, 1.0};
  {
    const ModeLayout l({3, 3, 3});
    const GeneratorSet gens(p, l);
    const double f = detail::oracle_agreement(gens, StateVector::vacuum(l), detail::oracle_observables(l, 3), 2.0, 41, vo);
    r.checks.push_back({"cavity d=3: fraction within 3 se", f, 1.0, 0.01, f >= 0.99});
  }
  {
    ModelParams q = p;
    q.include_virtual = true;
    const auto s = constant_coupling(1.5, UniformGrid::spanning(2.0, 2));
    q.coupling = std::array<CouplingSchedule, 3>{s, s, s};
    const ModeLayout l({3, 3, 3, 3, 3, 3});
    const GeneratorSet gens(q, l);
    const double f = detail::oracle_agreement(gens, StateVector::vacuum(l), detail::oracle_observables(l, 6), 2.0, 41, vo);
    r.checks.push_back({"cascade 3+3 d=3: fraction within 3 se", f, 1.0, 0.01, f >= 0.99});
  }
  return r;
}

inline SuiteReport verify_witness(const VerifyOptions& vo = {}) {
  SuiteReport r{"witness", {}};
  std::mt19937_64 rng(vo.seed);
  std::normal_distribution<double> nd;
  const ModeLayout l({6, 6, 6});
  std::size_t agree = 0, compared = 0;
  for (int s = 0; s < 200; ++s) {
    // Amplitudes depend only on the sorted occupation triple.
    std::map<std::array<int, 3>, Complex> amp;
    Vector a = Vector::Zero(Eigen::Index(l.total_dim()));
    for (std::size_t i = 0; i < l.total_dim(); ++i) {
      std::array<int, 3> occ{l.occupation(i, 0), l.occupation(i, 1), l.occupation(i, 2)};
      if (occ[0] > 3 || occ[1] > 3 || occ[2] > 3) continue;
      std::sort(occ.begin(), occ.end());
      auto it = amp.find(occ);
      if (it == amp.end()) it = amp.emplace(occ, Complex(nd(rng), nd(rng)) * std::exp(-0.7 * (occ[0] + occ[1] + occ[2]))).first;
      a[Eigen::Index(i)] = it->second;
    }
    StateVector psi(l, a);
    psi.normalize();
    for (int n : {1, 2}) {
      const auto rep = evaluate_criteria(accumulate_moments(psi, {0, 1, 2}, n));
      if (!rep.symmetric || std::abs(rep.var_ent_g) < 1e-9 || std::abs(rep.E_g) < 1e-9) continue;
      ++compared;
      if ((rep.var_ent_g > 0) == (rep.E_g > 0)) ++agree;
    }
  }
  r.checks.push_back({"symmetric states: genuine-entanglement sign agreement", double(agree), double(compared), 0.0, compared > 0 && agree == compared});
  const auto fp = detail::separable_false_positives(rng);
  r.checks.push_back({"separable states: false positives", double(fp), 0.0, 0.0, fp == 0});
  return r;
}

inline SuiteReport verify_conditioning(const VerifyOptions& = {}) {
  SuiteReport r{"conditioning", {}};
  {
    const ModeLayout l({3, 3, 3});
    Vector a = Vector::Zero(27);
    a[0] = 0.6;
    a[13] = Complex(0.0, 0.8);
    const auto c = condition_on_homodyne(DensityOperator::from_pure(StateVector(l, a)), 0.0, 0.0);
    Vector zero = Vector::Zero(3);
    zero[0] = 1.0;
    const double f = fidelity_with_pure(c.rho, zero);
    r.checks.push_back({"|000>+|111> at x=0: fidelity with |0>", f, 1.0, 1e-10, f > 1.0 - 1e-10});
  }
  {
    Matrix one = Matrix::Zero(4, 4);
    one(1, 1) = 1.0;
    const double n = negativity(wigner(DensityOperator(ModeLayout({4}), one)));
    const double expect = 2.0 * (2.0 * std::exp(-0.5) - 1.0);
    r.checks.push_back({"|1> negativity", n, expect, 0.01 * expect, std::abs(n - expect) <= 0.01 * expect});
  }
  {
    Matrix vac = Matrix::Zero(4, 4);
    vac(0, 0) = 1.0;
    const double n = negativity(wigner(DensityOperator(ModeLayout({4}), vac)));
    r.checks.push_back({"vacuum negativity", n, 0.0, 1e-6, n < 1e-6});
  }
  return r;
}

inline SuiteReport verify_suite(const std::string& name, const VerifyOptions& vo = {}) {
  if (name == "oracle") return verify_oracle(vo);
  if (name == "witness") return verify_witness(vo);
  if (name == "conditioning") return verify_conditioning(vo);
  throw ValidationError("unknown suite '" + name + "' (oracle, witness, conditioning)");
}

}  // namespace ntpd
