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

#include <array>
#include <numbers>
#include <optional>

#include "ntpd/coupling.hpp"
#include "ntpd/integrator.hpp"
#include "ntpd/fock.hpp"

namespace ntpd {

inline constexpr std::size_t kCavityModes = 3;

/// Cavity mode k is layout mode k; its virtual partner is mode 3 + k.
inline constexpr std::size_t cavity_mode(std::size_t k) { return k; }
inline constexpr std::size_t virtual_mode(std::size_t k) { return kCavityModes + k; }

using Couplings = std::array<Complex, kCavityModes>;

struct ModelParams {
  double g = 1.0;
  double theta = std::numbers::pi / 2.0;
  std::array<double, kCavityModes> gammas{0.0, 0.0, 0.0};
  bool include_virtual = false;
  std::optional<std::array<CouplingSchedule, kCavityModes>> coupling;

  void validate() const {
    if (!(g >= 0.0) || !std::isfinite(g)) throw ValidationError("model: g must be finite and non-negative");
    if (!std::isfinite(theta)) throw ValidationError("model: theta must be finite");
    for (double gm : gammas)
      if (!(gm >= 0.0) || !std::isfinite(gm)) throw ValidationError("model: decay rates must be finite and non-negative");
    if (include_virtual && !coupling) throw ValidationError("model: virtual cavities need a coupling schedule");
  }

  bool time_dependent() const {
    if (!include_virtual || !coupling) return false;
    for (const auto& s : *coupling)
      if (!s.constant) return true;
    return false;
  }

  Couplings couplings_at(double t) const {
    Couplings c{0.0, 0.0, 0.0};
    if (include_virtual && coupling)
      for (std::size_t k = 0; k < kCavityModes; ++k) c[k] = (*coupling)[k].value_at(t);
    return c;
  }
};

namespace detail {

inline void check_model_layout(const ModelParams& p, const ModeLayout& layout) {
  if (layout.num_modes() < kCavityModes) throw LayoutError("model: layout needs at least three cavity modes");
  if (p.include_virtual && layout.num_modes() != 2 * kCavityModes)
    throw LayoutError("model: cascaded layout must hold three cavity and three virtual modes");
}

}  // namespace detail

/// g (e^{i theta} b1 b2 b3 + e^{-i theta} b1^dag b2^dag b3^dag).
inline SparseOperator build_H_s(const ModelParams& p, const ModeLayout& layout) {
  detail::check_model_layout(p, layout);
  const auto b1 = make_ladder(layout, 0, LadderKind::lower);
  const auto b2 = make_ladder(layout, 1, LadderKind::lower);
  const auto b3 = make_ladder(layout, 2, LadderKind::lower);
  const SparseOperator down = b1 * b2 * b3;
  const Complex phase = std::polar(1.0, p.theta);
  return (p.g * phase) * down + (p.g * std::conj(phase)) * down.adjoint();
}

/// (i/2) sum_k (sqrt(gamma_k) g_k^* b_k^dag b_mu_k - h.c.).
inline SparseOperator build_H_ex(const ModelParams& p, const ModeLayout& layout, const Couplings& c) {
  detail::check_model_layout(p, layout);
  if (!p.include_virtual) throw ValidationError("build_H_ex: model has no virtual cavities");
  SparseOperator h = SparseOperator::zero(layout);
  for (std::size_t k = 0; k < kCavityModes; ++k) {
    const auto bdag = make_ladder(layout, cavity_mode(k), LadderKind::raise);
    const auto bmu = make_ladder(layout, virtual_mode(k), LadderKind::lower);
    const SparseOperator term = (std::sqrt(p.gammas[k]) * std::conj(c[k])) * (bdag * bmu);
    h = h + (0.5 * kI) * (term - term.adjoint());
  }
  return h;
}

/// J_k = sqrt(gamma_k) b_k + g_k^* b_mu_k.
inline std::array<SparseOperator, kCavityModes> build_jumps(const ModelParams& p, const ModeLayout& layout, const Couplings& c) {
  detail::check_model_layout(p, layout);
  std::array<SparseOperator, kCavityModes> j;
  for (std::size_t k = 0; k < kCavityModes; ++k) {
    j[k] = Complex(std::sqrt(p.gammas[k])) * make_ladder(layout, cavity_mode(k), LadderKind::lower);
    if (p.include_virtual) j[k] = j[k] + std::conj(c[k]) * make_ladder(layout, virtual_mode(k), LadderKind::lower);
  }
  return j;
}

/// Reference assembly H_s + H_ex(t) - (i/2) sum J^dag J, straight from the definition.
inline SparseOperator build_H_eff(const ModelParams& p, const ModeLayout& layout, double t) {
  const Couplings c = p.couplings_at(t);
  SparseOperator h = build_H_s(p, layout);
  if (p.include_virtual) h = h + build_H_ex(p, layout, c);
  for (const auto& j : build_jumps(p, layout, c)) h = h - (0.5 * kI) * (j.adjoint() * j);
  return h;
}

/// Cached generator pieces. The effective Hamiltonian is applied in the
/// reduced cascaded form
///   H_s - (i/2) sum_k [gamma_k I_k + |g_k|^2 I_mu_k] - i sum_k sqrt(gamma_k) g_k b_mu_k^dag b_k.
class GeneratorSet {
 public:
  GeneratorSet(ModelParams params, ModeLayout layout) : params_(std::move(params)), layout_(std::move(layout)) {
    params_.validate();
    detail::check_model_layout(params_, layout_);
    H_s_ = build_H_s(params_, layout_);
    for (std::size_t k = 0; k < kCavityModes; ++k) b_[k] = make_ladder(layout_, cavity_mode(k), LadderKind::lower);
    RealVector damping = RealVector::Zero(static_cast<Eigen::Index>(layout_.total_dim()));
    for (std::size_t k = 0; k < kCavityModes; ++k) damping += params_.gammas[k] * occupation_values(layout_, cavity_mode(k));
    H0_ = H_s_ - (0.5 * kI) * SparseOperator::diagonal(layout_, damping);
    if (params_.include_virtual) {
      for (std::size_t k = 0; k < kCavityModes; ++k) {
        bmu_[k] = make_ladder(layout_, virtual_mode(k), LadderKind::lower);
        nmu_[k] = occupation_values(layout_, virtual_mode(k));
        transfer_[k] = bmu_[k].adjoint() * b_[k];
      }
    }
    cavity_dim_ = 1;
    for (std::size_t k = 0; k < kCavityModes; ++k) cavity_dim_ *= static_cast<std::size_t>(layout_.dim(k));
    const std::size_t rest = layout_.total_dim() / cavity_dim_;
    cavity_rates_ = RealVector::Zero(static_cast<Eigen::Index>(cavity_dim_));
    for (std::size_t i = 0; i < cavity_dim_; ++i)
      for (std::size_t k = 0; k < kCavityModes; ++k)
        cavity_rates_[static_cast<Eigen::Index>(i)] += 0.5 * params_.gammas[k] * layout_.occupation(i * rest, k);
    if (params_.include_virtual) {
      const ModeLayout vl({layout_.dim(3), layout_.dim(4), layout_.dim(5)});
      for (std::size_t k = 0; k < kCavityModes; ++k) virtual_occ_[k] = occupation_values(vl, k);
    }
    if (!params_.time_dependent()) {
      const Couplings c = params_.couplings_at(0.0);
      fixed_couplings_ = c;
      fixed_H_eff_ = effective_hamiltonian(c);
      fixed_coherent_ = coherent_part(c);
      fixed_decay_ = decay(c);
    }
  }

  /// Diagonal damping R of H_eff = N - i R, split into cavity and virtual
  /// factors (the flat index is cavity-major).
  DiagonalDecay decay(const Couplings& c) const {
    if (fixed_decay_ && c == fixed_couplings_) return *fixed_decay_;
    DiagonalDecay d;
    d.cavity_rates = cavity_rates_;
    const auto rest = static_cast<Eigen::Index>(layout_.total_dim() / cavity_dim_);
    d.virtual_rates = RealVector::Zero(rest);
    if (params_.include_virtual)
      for (std::size_t k = 0; k < kCavityModes; ++k) d.virtual_rates += 0.5 * std::norm(c[k]) * virtual_occ_[k];
    return d;
  }

  /// Non-diagonal part N = H_s - i sum_k sqrt(gamma_k) g_k b_mu_k^dag b_k.
  SparseOperator coherent_part(const Couplings& c) const {
    if (fixed_coherent_ && c == fixed_couplings_) return *fixed_coherent_;
    SparseOperator n = H_s_;
    if (params_.include_virtual)
      for (std::size_t k = 0; k < kCavityModes; ++k) n = n + (-kI * std::sqrt(params_.gammas[k]) * c[k]) * transfer_[k];
    return n;
  }

  /// out = N(c) * in.
  void apply_coherent(const Couplings& c, const Vector& in, Vector& out) const {
    if (fixed_coherent_) {
      out.noalias() = fixed_coherent_->matrix * in;
      return;
    }
    out.noalias() = H_s_.matrix * in;
    if (params_.include_virtual)
      for (std::size_t k = 0; k < kCavityModes; ++k) {
        const Complex t = -kI * std::sqrt(params_.gammas[k]) * c[k];
        if (t != 0.0) out.noalias() += t * (transfer_[k].matrix * in);
      }
  }

  const ModelParams& params() const { return params_; }
  const ModeLayout& layout() const { return layout_; }
  const SparseOperator& H_s() const { return H_s_; }
  const SparseOperator& lowering(std::size_t k) const { return b_[k]; }

  bool time_dependent() const { return !fixed_H_eff_.has_value(); }
  bool has_virtual() const { return params_.include_virtual; }
  bool dissipative() const {
    if (params_.include_virtual) return true;
    for (double gm : params_.gammas)
      if (gm > 0.0) return true;
    return false;
  }

  Couplings couplings_at(double t) const { return params_.couplings_at(t); }

  /// Substep bound for frozen couplings at time t (infinite when constant).
  double max_step(double t) const {
    double h = std::numeric_limits<double>::infinity();
    if (time_dependent())
      for (const auto& sch : *params_.coupling) h = std::min(h, sch.max_step(t));
    return h;
  }

  SparseOperator H_ex(const Couplings& c) const { return build_H_ex(params_, layout_, c); }

  std::array<SparseOperator, kCavityModes> jumps(const Couplings& c) const {
    std::array<SparseOperator, kCavityModes> j;
    for (std::size_t k = 0; k < kCavityModes; ++k) {
      j[k] = Complex(std::sqrt(params_.gammas[k])) * b_[k];
      if (params_.include_virtual) j[k] = j[k] + std::conj(c[k]) * bmu_[k];
    }
    return j;
  }

  /// Assembled H_eff for frozen couplings.
  SparseOperator effective_hamiltonian(const Couplings& c) const {
    if (fixed_H_eff_ && c == fixed_couplings_) return *fixed_H_eff_;
    SparseOperator h = H0_;
    if (params_.include_virtual) {
      RealVector d = RealVector::Zero(static_cast<Eigen::Index>(layout_.total_dim()));
      for (std::size_t k = 0; k < kCavityModes; ++k) {
        d += std::norm(c[k]) * nmu_[k];
        h = h + (-kI * std::sqrt(params_.gammas[k]) * c[k]) * transfer_[k];
      }
      h = h - (0.5 * kI) * SparseOperator::diagonal(layout_, d);
    }
    return h;
  }

  /// out = H_eff(c) * in.
  void apply_effective(const Couplings& c, const Vector& in, Vector& out) const {
    if (fixed_H_eff_) {
      out.noalias() = fixed_H_eff_->matrix * in;
      return;
    }
    out.noalias() = H0_.matrix * in;
    for (std::size_t k = 0; k < kCavityModes; ++k) {
      const Complex a = -0.5 * kI * std::norm(c[k]);
      const Complex t = -kI * std::sqrt(params_.gammas[k]) * c[k];
      out.array() += a * nmu_[k].array() * in.array();
      if (t != 0.0) out.noalias() += t * (transfer_[k].matrix * in);
    }
  }

  /// J_k psi for a single channel.
  Vector apply_jump(std::size_t k, const Couplings& c, const Vector& psi) const {
    Vector out = std::sqrt(params_.gammas[k]) * (b_[k].matrix * psi);
    if (params_.include_virtual) out.noalias() += std::conj(c[k]) * (bmu_[k].matrix * psi);
    return out;
  }

 private:
  ModelParams params_;
  ModeLayout layout_;
  SparseOperator H_s_;
  SparseOperator H0_;
  std::array<SparseOperator, kCavityModes> b_;
  std::array<SparseOperator, kCavityModes> bmu_;
  std::array<SparseOperator, kCavityModes> transfer_;
  std::array<RealVector, kCavityModes> nmu_;
  std::optional<SparseOperator> fixed_H_eff_;
  std::optional<SparseOperator> fixed_coherent_;
  std::optional<DiagonalDecay> fixed_decay_;
  Couplings fixed_couplings_{};
  std::size_t cavity_dim_ = 1;
  RealVector cavity_rates_;
  std::array<RealVector, kCavityModes> virtual_occ_;
};

}  // namespace ntpd
