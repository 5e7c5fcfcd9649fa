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

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "ntpd/integrator.hpp"
#include "ntpd/model.hpp"

namespace ntpd {

/// Lindblad generator with frozen couplings acting on dense matrices.
class Liouvillian {
 public:
  Liouvillian(const GeneratorSet& gens, const Couplings& c) : H_(gens.effective_hamiltonian(c).matrix) {
    Hdag_ = SparseMatrix(H_.adjoint());
    for (auto& j : gens.jumps(c)) {
      if (j.matrix.nonZeros() == 0) continue;
      J_.push_back(j.matrix);
      Jdag_.push_back(SparseMatrix(j.matrix.adjoint()));
    }
  }

  /// out = -i (H rho - rho H^dag) + sum_k J rho J^dag.
  void apply(const Matrix& rho, Matrix& out) const {
    out.noalias() = -kI * (H_ * rho);
    Matrix tmp = H_ * rho.adjoint();
    out.noalias() += kI * tmp.adjoint();
    for (const auto& j : J_) {
      Matrix y = j * rho;
      Matrix z = j * y.adjoint();
      out.noalias() += z.adjoint();
    }
  }

  /// Heisenberg picture: out = i (H^dag O - O H) + sum_k J^dag O J.
  void apply_adjoint(const Matrix& op, Matrix& out) const {
    out.noalias() = kI * (Hdag_ * op);
    Matrix tmp = Hdag_ * op.adjoint();
    out.noalias() -= kI * tmp.adjoint();
    for (const auto& jd : Jdag_) {
      Matrix y = jd * op;
      Matrix z = jd * y.adjoint();
      out.noalias() += z.adjoint();
    }
  }

 private:
  SparseMatrix H_, Hdag_;
  std::vector<SparseMatrix> J_, Jdag_;
};

struct MasterOptions {
  StepControl control{1e-9, 1e-11};
  std::size_t max_dim = 4096;
};

struct MasterDiagnostics {
  double max_trace_drift = 0.0;
  std::size_t grid_points = 0;
};

inline void check_master_dim(std::size_t dim, const MasterOptions& opt) {
  if (dim > opt.max_dim)
    throw ValidationError("master equation: total_dim " + std::to_string(dim) + " exceeds the dense limit " +
                          std::to_string(opt.max_dim) + "; use the trajectory solver");
}

/// Integrates the master equation over the grid, calling observe(i, t, rho)
/// at every grid point (including t0).
inline MasterDiagnostics integrate_master(const DensityOperator& rho0, const GeneratorSet& gens, const UniformGrid& grid,
                                         const std::function<void(std::size_t, double, const DensityOperator&)>& observe,
                                         const MasterOptions& opt = {}) {
  require_same_layout(rho0.layout(), gens.layout(), "integrate_master");
  check_master_dim(gens.layout().total_dim(), opt);
  MasterDiagnostics diag;
  diag.grid_points = grid.count;
  Matrix rho = rho0.matrix();
  const Complex tr0 = rho.trace();
  DormandPrince<Matrix> dp;
  double h = grid.dt;
  std::optional<Liouvillian> fixed;
  std::function<double(double)> limit;
  if (!gens.time_dependent())
    fixed.emplace(gens, gens.couplings_at(0.0));
  else
    limit = [&gens](double t) { return gens.max_step(t); };
  auto make_rhs = [&](double t_mid) {
    if (fixed) return std::function<void(const Matrix&, Matrix&)>([&](const Matrix& r, Matrix& out) { fixed->apply(r, out); });
    auto l = std::make_shared<Liouvillian>(gens, gens.couplings_at(t_mid));
    return std::function<void(const Matrix&, Matrix&)>([l](const Matrix& r, Matrix& out) { l->apply(r, out); });
  };
  for (std::size_t i = 0; i < grid.count; ++i) {
    if (i > 0) {
      propagate_interval(rho, grid.at(i - 1), grid.at(i), h, opt.control, make_rhs, dp, limit);
      rho = 0.5 * (rho + rho.adjoint()).eval();
    }
    diag.max_trace_drift = std::max(diag.max_trace_drift, std::abs(rho.trace() - tr0));
    observe(i, grid.at(i), DensityOperator::unchecked(rho0.layout(), rho));
  }
  return diag;
}

/// Full series; only for small dimensions.
inline std::vector<DensityOperator> integrate_master(const DensityOperator& rho0, const GeneratorSet& gens, const UniformGrid& grid,
                                                     const MasterOptions& opt = {}) {
  std::vector<DensityOperator> out;
  out.reserve(grid.count);
  integrate_master(rho0, gens, grid, [&](std::size_t, double, const DensityOperator& r) { out.push_back(r); }, opt);
  return out;
}

/// First-order coherence kernel K[i][j] = gamma <b^dag(t_j) b(t_i)> of one
/// cavity output on a uniform grid.
struct CorrelationKernel {
  UniformGrid grid;
  Matrix K;
  std::size_t mode = 0;
  double gamma = 0.0;
};

/// Two-time kernels via the regression theorem on the intracavity generator
/// (virtual cavities removed). One adjoint propagation per mode.
inline std::vector<CorrelationKernel> two_time_correlation(const ModelParams& params, const DensityOperator& rho0,
                                                           const std::vector<std::size_t>& modes, const UniformGrid& grid,
                                                           const MasterOptions& opt = {}) {
  ModelParams intracavity = params;
  intracavity.include_virtual = false;
  intracavity.coupling.reset();
  const ModeLayout& layout = rho0.layout();
  const GeneratorSet gens(intracavity, layout);
  check_master_dim(layout.total_dim(), opt);
  const std::size_t n = grid.count;
  const double bytes = double(n) * double(layout.total_dim()) * double(layout.total_dim()) * 16.0;
  if (bytes > 3.0e9) throw ValidationError("two_time_correlation: state history needs too much memory; use fewer kernel points");
  for (auto k : modes)
    if (k >= kCavityModes) throw LayoutError("two_time_correlation: mode must be a cavity mode");

  std::vector<Matrix> history;  // transposed states
  history.reserve(n);
  integrate_master(rho0, gens, grid, [&](std::size_t, double, const DensityOperator& r) { history.push_back(r.matrix().transpose()); }, opt);

  const Liouvillian liou(gens, Couplings{});
  std::vector<CorrelationKernel> out;
  for (auto k : modes) {
    CorrelationKernel ker;
    ker.grid = grid;
    ker.mode = k;
    ker.gamma = params.gammas[k];
    ker.K = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    const SparseMatrix& b = gens.lowering(k).matrix;
    Matrix op = Matrix(SparseMatrix(b.adjoint()));
    DormandPrince<Matrix> dp;
    double h = grid.dt;
    auto make_rhs = [&](double) { return [&](const Matrix& o, Matrix& d) { liou.apply_adjoint(o, d); }; };
    for (std::size_t m = 0; m < n; ++m) {
      if (m > 0) propagate_interval(op, grid.at(m - 1), grid.at(m), h, opt.control, make_rhs, dp);
      const Matrix ob = op * b;
      for (std::size_t i = 0; i + m < n; ++i) {
        const Complex v = ker.gamma * (ob.array() * history[i].array()).sum();
        ker.K(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i + m)) = v;
      }
    }
    for (Eigen::Index i = 0; i < ker.K.rows(); ++i) {
      ker.K(i, i) = ker.K(i, i).real();
      for (Eigen::Index j = i + 1; j < ker.K.cols(); ++j) ker.K(j, i) = std::conj(ker.K(i, j));
    }
    out.push_back(std::move(ker));
  }
  return out;
}

}  // namespace ntpd
