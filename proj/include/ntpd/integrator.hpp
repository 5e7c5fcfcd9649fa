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

// Dormand-Prince 5(4) stepper for Eigen dense states (vectors or matrices).

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include <Eigen/Dense>

#include "ntpd/errors.hpp"

namespace ntpd {

struct StepControl {
  double rtol = 1e-7;
  double atol = 1e-9;
  int max_rejections = 50;
  double safety = 0.9;
  double max_growth = 5.0;
  double min_shrink = 0.2;
};

template <class State>
class DormandPrince {
 public:
  /// One trial step of size h from y0 with k1 = f(y0) given. Writes y1 and
  /// returns the scaled error norm (<= 1 means acceptable). After the call
  /// k7() holds f(y1).
  template <class Rhs>
  double attempt(Rhs&& f, const State& y0, const State& k1, double h, State& y1, const StepControl& ctl) {
    constexpr double a21 = 1.0 / 5.0;
    constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
    constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
    constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0, a53 = 64448.0 / 6561.0, a54 = -212.0 / 729.0;
    constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0, a64 = 49.0 / 176.0,
                     a65 = -5103.0 / 18656.0;
    constexpr double b1 = 35.0 / 384.0, b3 = 500.0 / 1113.0, b4 = 125.0 / 192.0, b5 = -2187.0 / 6784.0, b6 = 11.0 / 84.0;
    constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0, e5 = -17253.0 / 339200.0,
                     e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;

    tmp_ = y0 + (h * a21) * k1;
    f(tmp_, k2_);
    tmp_ = y0 + h * (a31 * k1 + a32 * k2_);
    f(tmp_, k3_);
    tmp_ = y0 + h * (a41 * k1 + a42 * k2_ + a43 * k3_);
    f(tmp_, k4_);
    tmp_ = y0 + h * (a51 * k1 + a52 * k2_ + a53 * k3_ + a54 * k4_);
    f(tmp_, k5_);
    tmp_ = y0 + h * (a61 * k1 + a62 * k2_ + a63 * k3_ + a64 * k4_ + a65 * k5_);
    f(tmp_, k6_);
    y1 = y0 + h * (b1 * k1 + b3 * k3_ + b4 * k4_ + b5 * k5_ + b6 * k6_);
    f(y1, k7_);
    tmp_ = h * (e1 * k1 + e3 * k3_ + e4 * k4_ + e5 * k5_ + e6 * k6_ + e7 * k7_);

    // Global 2-norm (Frobenius) error relative to the state size.
    const double scale = ctl.atol + ctl.rtol * std::sqrt(std::max(y0.squaredNorm(), y1.squaredNorm()));
    const double err = tmp_.norm() / scale;
    return std::isfinite(err) ? err : 1e300;
  }

  const State& k7() const { return k7_; }

  static double next_step(double h, double err, bool accepted, const StepControl& ctl) {
    if (err <= 0.0) return h * ctl.max_growth;
    double factor = ctl.safety * std::pow(err, -0.2);
    factor = std::clamp(factor, ctl.min_shrink, accepted ? ctl.max_growth : 1.0);
    return h * factor;
  }

 private:
  State tmp_, k2_, k3_, k4_, k5_, k6_, k7_;
};

/// Exact diagonal decay factors exp(-r_i tau) with r_i = rc[i / nv] + rv[i % nv]
/// (outer-product structure of cavity and virtual decay rates).
struct DiagonalDecay {
  Eigen::VectorXd cavity_rates;
  Eigen::VectorXd virtual_rates;

  Eigen::Index size() const { return cavity_rates.size() * virtual_rates.size(); }

  void factors(double tau, Eigen::VectorXd& out) const {
    const Eigen::Index nv = virtual_rates.size();
    out.resize(size());
    const Eigen::VectorXd ev = (-tau * virtual_rates).array().exp();
    for (Eigen::Index c = 0; c < cavity_rates.size(); ++c) out.segment(c * nv, nv) = std::exp(-tau * cavity_rates[c]) * ev;
  }

  void apply(const Eigen::VectorXcd& in, Eigen::VectorXcd& out) const {
    const Eigen::Index nv = virtual_rates.size();
    out.resize(in.size());
    for (Eigen::Index c = 0; c < cavity_rates.size(); ++c)
      out.segment(c * nv, nv).array() = in.segment(c * nv, nv).array() * (cavity_rates[c] + virtual_rates.array());
  }
};

/// Integrating-factor (Lawson) Dormand-Prince 5(4) for y' = -R y + f(y) with
/// R diagonal. Stages are combined in the frame comoving with exp(-R t), so
/// stiff damping of sparsely populated levels does not limit the step.
class LawsonDormandPrince {
 public:
  using Vec = Eigen::VectorXcd;

  /// k1 = f(y0). After the call k7() = f(y1) and the comoving-frame data for
  /// dense output are kept.
  template <class Rhs>
  double attempt(Rhs&& f, const DiagonalDecay& decay, const Vec& y0, const Vec& k1, double h, Vec& y1,
                 const StepControl& ctl) {
    constexpr double c2 = 1.0 / 5.0, c3 = 3.0 / 10.0, c4 = 4.0 / 5.0, c5 = 8.0 / 9.0;
    constexpr double a21 = 1.0 / 5.0;
    constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
    constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
    constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0, a53 = 64448.0 / 6561.0, a54 = -212.0 / 729.0;
    constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0, a64 = 49.0 / 176.0,
                     a65 = -5103.0 / 18656.0;
    constexpr double b1 = 35.0 / 384.0, b3 = 500.0 / 1113.0, b4 = 125.0 / 192.0, b5 = -2187.0 / 6784.0, b6 = 11.0 / 84.0;
    constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0, e5 = -17253.0 / 339200.0,
                     e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;
    h_ = h;
    y0_ = &y0;
    K1_ = k1;
    // Stage k_i is evaluated at psi_i = E(c_i h) phi_i and stored in the
    // comoving frame as K_i = E(-c_i h) k_i.
    auto stage = [&](double ci, const auto& phi, Vec& K) {
      decay.factors(ci * h, fwd_);
      stage_ = phi.cwiseProduct(fwd_);
      f(stage_, K);
      K.array() /= fwd_.array();
    };
    stage(c2, y0 + (h * a21) * K1_, K2_);
    stage(c3, y0 + h * (a31 * K1_ + a32 * K2_), K3_);
    stage(c4, y0 + h * (a41 * K1_ + a42 * K2_ + a43 * K3_), K4_);
    stage(c5, y0 + h * (a51 * K1_ + a52 * K2_ + a53 * K3_ + a54 * K4_), K5_);
    stage(1.0, y0 + h * (a61 * K1_ + a62 * K2_ + a63 * K3_ + a64 * K4_ + a65 * K5_), K6_);
    phi1_ = y0 + h * (b1 * K1_ + b3 * K3_ + b4 * K4_ + b5 * K5_ + b6 * K6_);
    decay.factors(h, end_);
    y1 = phi1_.cwiseProduct(end_);
    f(y1, k7_);
    K7_ = k7_.cwiseQuotient(end_);
    const double err_norm =
        (h * (e1 * K1_ + e3 * K3_ + e4 * K4_ + e5 * K5_ + e6 * K6_ + e7 * K7_)).cwiseProduct(end_).norm();
    const double scale = ctl.atol + ctl.rtol * std::sqrt(std::max(y0.squaredNorm(), y1.squaredNorm()));
    const double err = err_norm / scale;
    return std::isfinite(err) ? err : 1e300;
  }

  const Vec& k7() const { return k7_; }

  /// State at y0 + s*h (0 <= s <= 1) from the last attempt: cubic Hermite in
  /// the comoving frame, mapped back with the exact decay.
  void dense(const DiagonalDecay& decay, double s, Vec& out) {
    const double s2 = s * s, s3 = s2 * s;
    const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s, h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
    decay.factors(s * h_, fwd_);
    out = (h00 * (*y0_) + (h10 * h_) * K1_ + h01 * phi1_ + (h11 * h_) * K7_).cwiseProduct(fwd_);
  }

 private:
  double h_ = 0.0;
  const Vec* y0_ = nullptr;
  Vec K1_, K2_, K3_, K4_, K5_, K6_, K7_;
  Vec k7_, stage_, phi1_;
  Eigen::VectorXd fwd_, end_;
};

/// Adaptive propagation of y over [t0, t1]. make_rhs(t_mid) returns the
/// right-hand side frozen at the substep midpoint. h carries the step
/// estimate in and out; step_limit(t) bounds substeps where the frozen
/// right-hand side would hide time dependence from the error estimate.
template <class State, class MakeRhs>
void propagate_interval(State& y, double t0, double t1, double& h, const StepControl& ctl, MakeRhs&& make_rhs,
                        DormandPrince<State>& dp, const std::function<double(double)>& step_limit = {}) {
  double t = t0;
  State k1, y1;
  int rejections = 0;
  const double span = t1 - t0;
  if (!(h > 0.0)) h = span;
  while (t1 - t > 1e-14 * std::max(1.0, std::abs(t1))) {
    const double step = std::min({h, step_limit ? step_limit(t) : h, t1 - t});
    auto f = make_rhs(t + 0.5 * step);
    f(y, k1);
    const double err = dp.attempt(f, y, k1, step, y1, ctl);
    if (err <= 1.0) {
      y.swap(y1);
      t += step;
      const double grown = DormandPrince<State>::next_step(step, err, true, ctl);
      h = step < h ? std::max(h, grown) : grown;
      rejections = 0;
    } else {
      h = DormandPrince<State>::next_step(step, err, false, ctl);
      if (++rejections > ctl.max_rejections || h < 1e-14 * std::max(1.0, span))
        throw NumericalGuardError("integrator: step rejection overflow near t = " + std::to_string(t) +
                                  "; reduce dt or loosen tolerances");
    }
  }
}

}  // namespace ntpd
