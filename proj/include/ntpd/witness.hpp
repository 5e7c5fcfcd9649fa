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

// Tripartite entanglement and steering witnesses built from high-order
// quadratures X^n = a^dag^n + a^n, Y^n = i(a^dag^n - a^n) and their two-mode
// analogues. Bipartition k pairs mode k against the other two.
//
// Two evaluation paths share one MomentSet:
//  * variance form: explicit quadrature-operator expectations, optimal
//    gains g = -h, bounds from the separable / LHS models (authoritative);
//  * closed form: |M3 - M1 M2| against bounds written with normally and
//    anti-normally ordered moments (cross-check).

#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ntpd/fock.hpp"

namespace ntpd {

/// Pairs (l, m) for bipartitions k = 0, 1, 2.
inline constexpr std::array<std::array<std::size_t, 2>, 3> kPartners{{{1, 2}, {0, 2}, {0, 1}}};

/// Expectation values for one bipartition {k, (l, m)} at order n, with
/// a = a_k^n and B = a_l^n a_m^n.
struct BipartitionMoments {
  double X = 0, Y = 0, XX = 0, YY = 0;          // single-mode quadratures
  double XL = 0, YL = 0, XLXL = 0, YLYL = 0;    // two-mode quadratures
  double XkXL = 0, YkYL = 0, XkYL = 0, YkXL = 0;
  double C_k = 0, C_lm = 0;                     // commutator expectations
  double N1 = 0, A1 = 0, N2 = 0, A2 = 0;        // <a^dag a>, <a a^dag>, <B^dag B>, <B B^dag>
  Complex M1 = 0.0, M2 = 0.0;                   // <a>, <B>
  double I_k = 0, I_lm = 0;                     // <I_k>, <I_l I_m>

  double var_sum_k() const { return (XX - X * X) + (YY - Y * Y); }
  double var_sum_lm() const { return (XLXL - XL * XL) + (YLYL - YL * YL); }
  /// Cov(X_k, X_lm) - Cov(Y_k, Y_lm) after the local phase rotation that
  /// makes it maximal; equals 4 |<a B> - <a><B>|.
  double cov_delta() const {
    const double re = (XkXL - X * XL) - (YkYL - Y * YL);
    const double im = (XkYL - X * YL) + (YkXL - Y * XL);
    return std::hypot(re, im);
  }
};

struct MomentSet {
  int order = 1;
  std::array<BipartitionMoments, 3> part{};
  Complex M3 = 0.0;  // <a_1^n a_2^n a_3^n>
  bool trusted = true;
};

inline constexpr std::size_t kMomentsPerPart = 22;
inline constexpr std::size_t kMomentCount = 3 * kMomentsPerPart + 1;

namespace detail {

/// Restriction P O P of an operator on a padded layout to the original one,
/// given the padded flat index of every original basis state.
inline SparseOperator restrict_to(const ModeLayout& layout, const SparseOperator& op, const std::vector<Eigen::Index>& embed) {
  std::vector<Eigen::Index> back(static_cast<std::size_t>(op.matrix.rows()), -1);
  for (std::size_t i = 0; i < embed.size(); ++i) back[static_cast<std::size_t>(embed[i])] = Eigen::Index(i);
  std::vector<Triplet> t;
  for (Eigen::Index row = 0; row < op.matrix.outerSize(); ++row) {
    const Eigen::Index r = back[static_cast<std::size_t>(row)];
    if (r < 0) continue;
    for (SparseMatrix::InnerIterator it(op.matrix, row); it; ++it) {
      const Eigen::Index c = back[static_cast<std::size_t>(it.col())];
      if (c >= 0) t.emplace_back(r, c, it.value());
    }
  }
  const auto n = Eigen::Index(layout.total_dim());
  SparseMatrix m(n, n);
  m.setFromTriplets(t.begin(), t.end());
  return {layout, std::move(m)};
}

}  // namespace detail

/// Sparse operators for every MomentSet entry on a layout, in the order read
/// back by moments_from_values. `modes` picks the three witness modes.
///
/// Products such as a^n a^dag^n leave a truncated space from its top n
/// levels. The operators are therefore built with n extra levels on each
/// witness mode and projected back, which makes every moment exact for
/// states supported on the original space.
inline std::vector<std::pair<std::string, SparseOperator>> moment_operators(const ModeLayout& original,
                                                                            const std::array<std::size_t, 3>& modes, int n) {
  if (n < 1) throw ValidationError("witness order must be positive");
  std::vector<int> dims = original.dims();
  for (std::size_t k : modes) {
    original.check_mode(k);
    dims[k] += n;
  }
  const ModeLayout layout(dims);
  std::vector<Eigen::Index> embed(original.total_dim());
  for (std::size_t i = 0; i < original.total_dim(); ++i) {
    const auto occ = original.multi_index(i);
    embed[i] = Eigen::Index(layout.flat_index(occ));
  }
  std::array<SparseOperator, 3> a, ad, num;
  for (std::size_t k = 0; k < 3; ++k) {
    a[k] = power(make_ladder(layout, modes[k], LadderKind::lower), n);
    ad[k] = a[k].adjoint();
    num[k] = make_ladder(layout, modes[k], LadderKind::number);
  }
  const SparseOperator one = SparseOperator::identity(layout);
  auto commutator_k = [&](std::size_t k) {
    if (n == 1) return Complex(2.0) * one;
    if (n == 2) return Complex(8.0) * num[k] + Complex(4.0) * one;
    return Complex(2.0) * (a[k] * ad[k] - ad[k] * a[k]);
  };
  auto commutator_lm = [&](std::size_t l, std::size_t m) {
    const SparseOperator& il = num[l];
    const SparseOperator& im = num[m];
    if (n == 1) return Complex(2.0) * (il + im + one);
    if (n == 2) {
      const SparseOperator inner = Complex(2.0) * one + il * (Complex(3.0) * one + il) + im * im * (one + Complex(2.0) * il) +
                                   im * (Complex(3.0) * one + Complex(4.0) * il + Complex(2.0) * il * il);
      return Complex(4.0) * inner;
    }
    const SparseOperator b = a[l] * a[m];
    return Complex(2.0) * (b * b.adjoint() - b.adjoint() * b);
  };
  std::vector<std::pair<std::string, SparseOperator>> ops;
  const std::string tag = "n" + std::to_string(n) + ".";
  for (std::size_t k = 0; k < 3; ++k) {
    const auto [l, m] = kPartners[k];
    const SparseOperator b = a[l] * a[m];
    const SparseOperator bd = b.adjoint();
    const SparseOperator x = ad[k] + a[k], y = kI * (ad[k] - a[k]);
    const SparseOperator xl = bd + b, yl = kI * (bd - b);
    const std::string p = tag + std::to_string(k + 1) + ".";
    ops.emplace_back(p + "X", x);
    ops.emplace_back(p + "Y", y);
    ops.emplace_back(p + "XX", x * x);
    ops.emplace_back(p + "YY", y * y);
    ops.emplace_back(p + "XL", xl);
    ops.emplace_back(p + "YL", yl);
    ops.emplace_back(p + "XLXL", xl * xl);
    ops.emplace_back(p + "YLYL", yl * yl);
    ops.emplace_back(p + "XkXL", x * xl);
    ops.emplace_back(p + "YkYL", y * yl);
    ops.emplace_back(p + "XkYL", x * yl);
    ops.emplace_back(p + "YkXL", y * xl);
    ops.emplace_back(p + "Ck", commutator_k(k));
    ops.emplace_back(p + "Clm", commutator_lm(l, m));
    ops.emplace_back(p + "N1", ad[k] * a[k]);
    ops.emplace_back(p + "A1", a[k] * ad[k]);
    ops.emplace_back(p + "N2", bd * b);
    ops.emplace_back(p + "A2", b * bd);
    ops.emplace_back(p + "M1", a[k]);
    ops.emplace_back(p + "M2", b);
    ops.emplace_back(p + "Ik", num[k]);
    ops.emplace_back(p + "Ilm", num[l] * num[m]);
  }
  ops.emplace_back(tag + "M3", a[0] * a[1] * a[2]);
  for (auto& [name, op] : ops) op = detail::restrict_to(original, op, embed);
  return ops;
}

/// Inverse of moment_operators: values in the same order.
inline MomentSet moments_from_values(int n, std::span<const Complex> v) {
  if (v.size() != kMomentCount) throw LayoutError("moment values: wrong count");
  MomentSet s;
  s.order = n;
  for (std::size_t k = 0; k < 3; ++k) {
    const Complex* q = v.data() + k * kMomentsPerPart;
    auto& p = s.part[k];
    p.X = q[0].real(), p.Y = q[1].real(), p.XX = q[2].real(), p.YY = q[3].real();
    p.XL = q[4].real(), p.YL = q[5].real(), p.XLXL = q[6].real(), p.YLYL = q[7].real();
    p.XkXL = q[8].real(), p.YkYL = q[9].real(), p.XkYL = q[10].real(), p.YkXL = q[11].real();
    p.C_k = q[12].real(), p.C_lm = q[13].real();
    p.N1 = q[14].real(), p.A1 = q[15].real(), p.N2 = q[16].real(), p.A2 = q[17].real();
    p.M1 = q[18], p.M2 = q[19];
    p.I_k = q[20].real(), p.I_lm = q[21].real();
  }
  s.M3 = v[kMomentCount - 1];
  return s;
}

/// Standard errors laid out like a MomentSet (complex entries carry the
/// error of the complex mean in their real part).
inline MomentSet moment_errors_from_values(int n, std::span<const double> se) {
  std::vector<Complex> v(se.begin(), se.end());
  return moments_from_values(n, v);
}

inline MomentSet accumulate_moments(const DensityOperator& rho, const std::array<std::size_t, 3>& modes, int n) {
  std::vector<Complex> v;
  for (const auto& [name, op] : moment_operators(rho.layout(), modes, n)) v.push_back(expectation(rho, op));
  return moments_from_values(n, v);
}

inline MomentSet accumulate_moments(const StateVector& psi, const std::array<std::size_t, 3>& modes, int n) {
  std::vector<Complex> v;
  for (const auto& [name, op] : moment_operators(psi.layout, modes, n)) v.push_back(expectation(psi, op));
  return moments_from_values(n, v);
}

enum class Family { steering, entanglement, genuine_entanglement };

/// Objective (value - bound) as a quadratic a + 2 b g + c g^2 in the gain.
struct GainQuadratic {
  double a = 0, b = 0, c = 0;
  double operator()(double g) const { return a + 2.0 * b * g + c * g * g; }
};

inline GainQuadratic gain_quadratic(const BipartitionMoments& p, Family f) {
  const double vk = p.var_sum_k(), vl = p.var_sum_lm(), cd = p.cov_delta();
  switch (f) {
    case Family::steering:  // S(g) - C_k
      return {vk - p.C_k, cd, vl};
    case Family::entanglement:  // S(g) - C_k - g^2 C_lm
      return {vk - p.C_k, cd, vl - p.C_lm};
    case Family::genuine_entanglement:  // 3 S(g) - (3 C_k + 3 g^2 C_lm + 4 g CovD)
      return {3.0 * (vk - p.C_k), cd, 3.0 * (vl - p.C_lm)};
  }
  return {};
}

/// Golden-section minimum of a unimodal function on [lo, hi].
template <class F>
double golden_minimize(F&& f, double lo, double hi, double tol = 1e-10) {
  const double r = 0.5 * (std::sqrt(5.0) - 1.0);
  const double lo0 = lo, hi0 = hi;
  double x1 = hi - r * (hi - lo), x2 = lo + r * (hi - lo);
  double f1 = f(x1), f2 = f(x2);
  while (hi - lo > tol) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - r * (hi - lo);
      f1 = f(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + r * (hi - lo);
      f2 = f(x2);
    }
  }
  const double xm = 0.5 * (lo + hi);
  // A non-convex objective runs to an end of the bracket.
  double best = xm, fb = f(xm);
  for (double e : {lo0, hi0})
    if (f(e) < fb) best = e, fb = f(e);
  return best;
}

struct Gain {
  double g = 0.0;  // h = -g
  bool numeric = false;
};

/// Closed-form optimum g = -b/c; numeric minimization over [-10, 10] when
/// the curvature is degenerate.
inline Gain optimal_gain(const BipartitionMoments& p, Family f) {
  const GainQuadratic q = gain_quadratic(p, f);
  if (q.c > 1e-12) return {-q.b / q.c, false};
  if (std::abs(q.b) == 0.0) return {0.0, false};
  return {golden_minimize(q, -10.0, 10.0), true};
}

inline std::array<Gain, 3> optimal_gains(const MomentSet& m, Family f) {
  return {optimal_gain(m.part[0], f), optimal_gain(m.part[1], f), optimal_gain(m.part[2], f)};
}

struct CriteriaReport {
  int order = 1;
  bool trusted = true;

  // Variance form, per bipartition.
  std::array<double, 3> steer_gain{}, ent_gain{}, gen_gain{};
  std::array<bool, 3> numeric_gain{};
  std::array<double, 3> S{};          // steering variance sums S_k^n
  std::array<double, 3> C_k{}, C_lm{};
  std::array<double, 3> E{};          // variance sums with entanglement gains
  std::array<double, 3> E_bound{};    // C_k + g^2 C_lm
  std::array<double, 3> gen_margin{}; // symmetric genuine-entanglement margin per bipartition
  double var_ent_f = 0;    // min_k (E_bound - E)
  double var_ent_g = 0;    // mean_k gen_margin
  double var_steer_f = 0;  // min_k (C_k - S_k)
  double var_steer_g = 0;  // min C - sum S

  // Closed form (bipartition 1), NaN when symmetry validation fails.
  bool symmetric = false;
  double D = 0;
  double F_e = 0, G_e = 0, F_s = 0, G_s = 0;
  double E_f = 0, E_g = 0, S_f = 0, S_g = 0;
  double F_e_alt = 0, G_e_alt = 0, E_f_alt = 0, E_g_alt = 0;  // factor 2 on |<B>|^2

  // Flags from the variance form.
  bool fully_inseparable_entanglement = false;
  bool genuine_entanglement = false;  // defined only when symmetric
  bool fully_inseparable_steering = false;
  bool genuine_steering = false;
};

struct CriteriaOptions {
  double symmetry_tolerance = 1e-6;  // relative, added to 3 sigma
  bool always_closed_form = false;   // fill closed-form margins even when not symmetric
};

/// Pairwise agreement of the per-mode moments across the three bipartitions.
inline bool symmetric_moments(const MomentSet& m, const MomentSet* se, double tol) {
  auto close = [&](double a, double b, double sa, double sb) {
    return std::abs(a - b) <= 3.0 * std::hypot(sa, sb) + tol * std::max(1.0, std::max(std::abs(a), std::abs(b)));
  };
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = i + 1; j < 3; ++j) {
      const auto& a = m.part[i];
      const auto& b = m.part[j];
      const BipartitionMoments z{};
      const auto& sa = se ? se->part[i] : z;
      const auto& sb = se ? se->part[j] : z;
      if (!close(a.N1, b.N1, sa.N1, sb.N1) || !close(a.A1, b.A1, sa.A1, sb.A1) || !close(a.N2, b.N2, sa.N2, sb.N2) ||
          !close(a.A2, b.A2, sa.A2, sb.A2) || !close(std::abs(a.M1), std::abs(b.M1), sa.M1.real(), sb.M1.real()) ||
          !close(std::abs(a.M2), std::abs(b.M2), sa.M2.real(), sb.M2.real()) || !close(a.I_k, b.I_k, sa.I_k, sb.I_k) ||
          !close(a.I_lm, b.I_lm, sa.I_lm, sb.I_lm) || !close(a.C_k, b.C_k, sa.C_k, sb.C_k))
        return false;
    }
  return true;
}

/// Variance-form sums and flags with the supplied gains.
inline void variance_criteria(const MomentSet& m, const std::array<Gain, 3>& steer, const std::array<Gain, 3>& ent,
                              const std::array<Gain, 3>& gen, CriteriaReport& r) {
  r.order = m.order;
  r.trusted = m.trusted;
  double min_c = std::numeric_limits<double>::infinity(), sum_s = 0.0, gen_sum = 0.0;
  r.var_ent_f = r.var_steer_f = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < 3; ++k) {
    const auto& p = m.part[k];
    r.steer_gain[k] = steer[k].g;
    r.ent_gain[k] = ent[k].g;
    r.gen_gain[k] = gen[k].g;
    r.numeric_gain[k] = steer[k].numeric || ent[k].numeric || gen[k].numeric;
    r.C_k[k] = p.C_k;
    r.C_lm[k] = p.C_lm;
    const double vk = p.var_sum_k(), vl = p.var_sum_lm(), cd = p.cov_delta();
    auto sum_at = [&](double g) { return vk + 2.0 * g * cd + g * g * vl; };
    r.S[k] = sum_at(steer[k].g);
    r.E[k] = sum_at(ent[k].g);
    r.E_bound[k] = p.C_k + ent[k].g * ent[k].g * p.C_lm;
    const double gg = gen[k].g;
    r.gen_margin[k] = (3.0 * p.C_k + 3.0 * gg * gg * p.C_lm + 4.0 * gg * cd) - 3.0 * sum_at(gg);
    r.var_ent_f = std::min(r.var_ent_f, r.E_bound[k] - r.E[k]);
    r.var_steer_f = std::min(r.var_steer_f, p.C_k - r.S[k]);
    min_c = std::min(min_c, p.C_k);
    sum_s += r.S[k];
    gen_sum += r.gen_margin[k];
  }
  r.var_steer_g = min_c - sum_s;
  r.var_ent_g = gen_sum / 3.0;
  r.fully_inseparable_entanglement = r.var_ent_f > 0.0;
  r.fully_inseparable_steering = r.var_steer_f > 0.0;
  r.genuine_steering = r.var_steer_g > 0.0;
}

namespace detail {
inline double sqrt0(double x) { return std::sqrt(std::max(0.0, x)); }
}  // namespace detail

/// Closed-form margins for bipartition 1.
inline void symmetric_criteria(const MomentSet& m, CriteriaReport& r) {
  const auto& p = m.part[0];
  const double m1 = std::norm(p.M1), m2 = std::norm(p.M2);
  r.D = std::abs(m.M3 - p.M1 * p.M2);
  const double pair_s = detail::sqrt0(p.N2 + p.A2 - 2.0 * m2);
  r.F_e = detail::sqrt0(p.N1 - m1) * detail::sqrt0(p.N2 - m2);
  r.G_e = 3.0 * r.F_e;
  r.F_e_alt = detail::sqrt0(p.N1 - m1) * detail::sqrt0(p.N2 - 2.0 * m2);
  r.G_e_alt = 3.0 * r.F_e_alt;
  r.F_s = 0.5 * pair_s * detail::sqrt0(p.N1 + p.A1 - 0.5 * p.C_k - 2.0 * m1);
  r.G_s = 0.5 * pair_s * detail::sqrt0(p.N1 + p.A1 - p.C_k / 6.0 - 2.0 * m1);
  r.E_f = r.D - r.F_e;
  r.E_g = r.D - r.G_e;
  r.S_f = r.D - r.F_s;
  r.S_g = r.D - r.G_s;
  r.E_f_alt = r.D - r.F_e_alt;
  r.E_g_alt = r.D - r.G_e_alt;
}

/// Full report with optimal gains. `se` (optional) feeds the symmetry check.
inline CriteriaReport evaluate_criteria(const MomentSet& m, const MomentSet* se = nullptr, const CriteriaOptions& opt = {}) {
  CriteriaReport r;
  variance_criteria(m, optimal_gains(m, Family::steering), optimal_gains(m, Family::entanglement),
                    optimal_gains(m, Family::genuine_entanglement), r);
  r.symmetric = symmetric_moments(m, se, opt.symmetry_tolerance);
  if (r.symmetric || opt.always_closed_form) symmetric_criteria(m, r);
  if (r.symmetric) {
    r.genuine_entanglement = r.var_ent_g > 0.0;
  } else if (!opt.always_closed_form) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    r.D = r.F_e = r.G_e = r.F_s = r.G_s = r.E_f = r.E_g = r.S_f = r.S_g = nan;
    r.F_e_alt = r.G_e_alt = r.E_f_alt = r.E_g_alt = nan;
    r.genuine_entanglement = false;
  }
  return r;
}

/// Numeric columns of a report, in witness CSV order (without the t column).
inline std::vector<std::string> criteria_columns(int n) {
  const std::string s = std::to_string(n);
  std::vector<std::string> c = {"E_f" + s,     "E_g" + s,     "S_f" + s,     "S_g" + s,       "E_f" + s + "_alt",
                                "E_g" + s + "_alt", "var_ent_f" + s, "var_ent_g" + s, "var_steer_f" + s, "var_steer_g" + s};
  for (int k = 1; k <= 3; ++k) {
    const std::string b = s + "_" + std::to_string(k);
    for (const char* f : {"S", "E", "E_bound", "C_k", "C_lm", "g_steer", "g_ent", "g_gen"}) c.push_back(std::string(f) + b);
  }
  return c;
}

inline std::vector<double> criteria_values(const CriteriaReport& r) {
  std::vector<double> v = {r.E_f, r.E_g, r.S_f, r.S_g, r.E_f_alt, r.E_g_alt, r.var_ent_f, r.var_ent_g, r.var_steer_f, r.var_steer_g};
  for (std::size_t k = 0; k < 3; ++k)
    for (double x : {r.S[k], r.E[k], r.E_bound[k], r.C_k[k], r.C_lm[k], r.steer_gain[k], r.ent_gain[k], r.gen_gain[k]})
      v.push_back(x);
  return v;
}

}  // namespace ntpd
