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

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ntpd/errors.hpp"

namespace ntpd {

using Complex = std::complex<double>;
using Vector = Eigen::VectorXcd;
using RealVector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXcd;
using SparseMatrix = Eigen::SparseMatrix<Complex, Eigen::RowMajor>;
using Triplet = Eigen::Triplet<Complex>;

inline constexpr Complex kI{0.0, 1.0};

/// Row-major tensor layout of truncated bosonic modes. Mode 0 is the slowest
/// index. Cascaded models use (cavity 1..3, virtual 1..3).
class ModeLayout {
 public:
  ModeLayout() = default;

  explicit ModeLayout(std::vector<int> dims) : dims_(std::move(dims)) {
    if (dims_.empty()) throw LayoutError("ModeLayout: at least one mode is required");
    strides_.assign(dims_.size(), 1);
    total_ = 1;
    for (std::size_t k = dims_.size(); k-- > 0;) {
      if (dims_[k] < 2) throw LayoutError("ModeLayout: every mode needs d >= 2");
      strides_[k] = total_;
      total_ *= static_cast<std::size_t>(dims_[k]);
    }
  }

  std::size_t num_modes() const { return dims_.size(); }
  std::size_t total_dim() const { return total_; }
  const std::vector<int>& dims() const { return dims_; }

  int dim(std::size_t mode) const {
    check_mode(mode);
    return dims_[mode];
  }
  std::size_t stride(std::size_t mode) const {
    check_mode(mode);
    return strides_[mode];
  }

  int occupation(std::size_t flat, std::size_t mode) const {
    return static_cast<int>((flat / strides_[mode]) % static_cast<std::size_t>(dims_[mode]));
  }

  std::size_t flat_index(std::span<const int> occ) const {
    if (occ.size() != dims_.size()) throw LayoutError("flat_index: wrong number of occupations");
    std::size_t flat = 0;
    for (std::size_t k = 0; k < occ.size(); ++k) {
      if (occ[k] < 0 || occ[k] >= dims_[k]) throw LayoutError("flat_index: occupation out of range");
      flat += static_cast<std::size_t>(occ[k]) * strides_[k];
    }
    return flat;
  }

  std::vector<int> multi_index(std::size_t flat) const {
    if (flat >= total_) throw LayoutError("multi_index: flat index out of range");
    std::vector<int> occ(dims_.size());
    for (std::size_t k = 0; k < dims_.size(); ++k) occ[k] = occupation(flat, k);
    return occ;
  }

  /// Layout of a subset of modes, kept in ascending order.
  ModeLayout sub_layout(std::span<const std::size_t> modes) const {
    std::vector<int> d;
    for (auto m : modes) d.push_back(dim(m));
    return ModeLayout(std::move(d));
  }

  bool operator==(const ModeLayout& other) const { return dims_ == other.dims_; }

  void check_mode(std::size_t mode) const {
    if (mode >= dims_.size())
      throw LayoutError("mode index " + std::to_string(mode) + " out of range for " +
                        std::to_string(dims_.size()) + " modes");
  }

 private:
  std::vector<int> dims_;
  std::vector<std::size_t> strides_;
  std::size_t total_ = 0;
};

inline void require_same_layout(const ModeLayout& a, const ModeLayout& b, const char* where) {
  if (!(a == b)) throw LayoutError(std::string(where) + ": layout mismatch");
}

/// Sparse operator on a ModeLayout.
struct SparseOperator {
  ModeLayout layout;
  SparseMatrix matrix;

  SparseOperator() = default;
  SparseOperator(ModeLayout l, SparseMatrix m) : layout(std::move(l)), matrix(std::move(m)) {
    const auto n = static_cast<Eigen::Index>(layout.total_dim());
    if (matrix.rows() != n || matrix.cols() != n) throw LayoutError("SparseOperator: shape mismatch");
    matrix.makeCompressed();
  }

  static SparseOperator zero(const ModeLayout& l) {
    const auto n = static_cast<Eigen::Index>(l.total_dim());
    return {l, SparseMatrix(n, n)};
  }
  static SparseOperator identity(const ModeLayout& l) {
    const auto n = static_cast<Eigen::Index>(l.total_dim());
    SparseMatrix m(n, n);
    m.setIdentity();
    return {l, std::move(m)};
  }
  static SparseOperator diagonal(const ModeLayout& l, const RealVector& d) {
    const auto n = static_cast<Eigen::Index>(l.total_dim());
    if (d.size() != n) throw LayoutError("SparseOperator::diagonal: size mismatch");
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
      if (d[i] != 0.0) t.emplace_back(i, i, d[i]);
    SparseMatrix m(n, n);
    m.setFromTriplets(t.begin(), t.end());
    return {l, std::move(m)};
  }

  SparseOperator adjoint() const { return {layout, SparseMatrix(matrix.adjoint())}; }

  /// Largest element of |A - A^dagger|.
  double hermiticity_residual() const {
    SparseMatrix diff = matrix - SparseMatrix(matrix.adjoint());
    double worst = 0.0;
    for (Eigen::Index k = 0; k < diff.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(diff, k); it; ++it) worst = std::max(worst, std::abs(it.value()));
    return worst;
  }

  Vector apply(const Vector& v) const { return matrix * v; }
};

inline SparseOperator operator*(const SparseOperator& a, const SparseOperator& b) {
  require_same_layout(a.layout, b.layout, "operator product");
  return {a.layout, SparseMatrix((a.matrix * b.matrix).pruned())};
}
inline SparseOperator operator+(const SparseOperator& a, const SparseOperator& b) {
  require_same_layout(a.layout, b.layout, "operator sum");
  return {a.layout, SparseMatrix(a.matrix + b.matrix)};
}
inline SparseOperator operator-(const SparseOperator& a, const SparseOperator& b) {
  require_same_layout(a.layout, b.layout, "operator difference");
  return {a.layout, SparseMatrix(a.matrix - b.matrix)};
}
inline SparseOperator operator*(Complex s, const SparseOperator& a) { return {a.layout, SparseMatrix(s * a.matrix)}; }

/// Integer power of an operator, O^n with O^0 = identity.
inline SparseOperator power(const SparseOperator& op, int n) {
  SparseOperator out = SparseOperator::identity(op.layout);
  for (int i = 0; i < n; ++i) out = out * op;
  return out;
}

enum class LadderKind { lower, raise, number };

/// Single-mode ladder or number operator embedded in the full layout.
inline SparseOperator make_ladder(const ModeLayout& layout, std::size_t mode, LadderKind kind) {
  layout.check_mode(mode);
  const std::size_t n = layout.total_dim();
  const std::size_t s = layout.stride(mode);
  const int d = layout.dim(mode);
  std::vector<Triplet> t;
  t.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int occ = layout.occupation(i, mode);
    switch (kind) {
      case LadderKind::lower:
        if (occ > 0) t.emplace_back(static_cast<int>(i - s), static_cast<int>(i), std::sqrt(double(occ)));
        break;
      case LadderKind::raise:
        if (occ + 1 < d) t.emplace_back(static_cast<int>(i + s), static_cast<int>(i), std::sqrt(double(occ + 1)));
        break;
      case LadderKind::number:
        if (occ > 0) t.emplace_back(static_cast<int>(i), static_cast<int>(i), double(occ));
        break;
    }
  }
  SparseMatrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  m.setFromTriplets(t.begin(), t.end());
  return {layout, std::move(m)};
}

/// Occupation of `mode` at every basis index.
inline RealVector occupation_values(const ModeLayout& layout, std::size_t mode) {
  layout.check_mode(mode);
  RealVector v(static_cast<Eigen::Index>(layout.total_dim()));
  for (std::size_t i = 0; i < layout.total_dim(); ++i) v[static_cast<Eigen::Index>(i)] = layout.occupation(i, mode);
  return v;
}

/// Pure state, possibly unnormalized inside the waiting-time propagator.
struct StateVector {
  ModeLayout layout;
  Vector amplitudes;

  StateVector() = default;
  StateVector(ModeLayout l, Vector a) : layout(std::move(l)), amplitudes(std::move(a)) {
    if (amplitudes.size() != static_cast<Eigen::Index>(layout.total_dim()))
      throw LayoutError("StateVector: amplitude count does not match layout");
  }

  static StateVector basis(const ModeLayout& l, std::span<const int> occ) {
    Vector a = Vector::Zero(static_cast<Eigen::Index>(l.total_dim()));
    a[static_cast<Eigen::Index>(l.flat_index(occ))] = 1.0;
    return {l, std::move(a)};
  }
  static StateVector vacuum(const ModeLayout& l) {
    std::vector<int> occ(l.num_modes(), 0);
    return basis(l, occ);
  }

  double norm_sq() const { return amplitudes.squaredNorm(); }

  void normalize() {
    const double n = amplitudes.norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw NumericalGuardError("StateVector::normalize: zero or non-finite norm");
    amplitudes /= n;
  }
  StateVector normalized() const {
    StateVector s = *this;
    s.normalize();
    return s;
  }
};

struct DensityTolerance {
  double hermiticity = 1e-10;
  double trace = 1e-8;
  double eigenvalue = 1e-8;
  /// Positivity is checked by diagonalization up to this dimension.
  std::size_t max_eigen_dim = 1024;
};

/// Density matrix. The public constructor validates Hermiticity, trace and,
/// for moderate sizes, positivity.
class DensityOperator {
 public:
  DensityOperator() = default;
  DensityOperator(ModeLayout l, Matrix m, const DensityTolerance& tol = {}) : layout_(std::move(l)), matrix_(std::move(m)) {
    check_shape();
    validate(tol);
  }

  static DensityOperator unchecked(ModeLayout l, Matrix m) {
    DensityOperator r;
    r.layout_ = std::move(l);
    r.matrix_ = std::move(m);
    r.check_shape();
    return r;
  }

  static DensityOperator from_pure(const StateVector& psi) {
    const StateVector s = psi.normalized();
    return unchecked(s.layout, s.amplitudes * s.amplitudes.adjoint());
  }

  const ModeLayout& layout() const { return layout_; }
  const Matrix& matrix() const { return matrix_; }
  Matrix& mutable_matrix() { return matrix_; }

  Complex trace() const { return matrix_.trace(); }

  double hermiticity_residual() const { return (matrix_ - matrix_.adjoint()).cwiseAbs().maxCoeff(); }

  void validate(const DensityTolerance& tol = {}) const {
    const double herm = hermiticity_residual();
    if (herm > tol.hermiticity)
      throw ValidationError("DensityOperator: not Hermitian (residual " + std::to_string(herm) + ")");
    const Complex tr = trace();
    if (std::abs(tr - 1.0) > tol.trace)
      throw ValidationError("DensityOperator: trace " + std::to_string(tr.real()) + " differs from 1");
    if (layout_.total_dim() <= tol.max_eigen_dim) {
      Eigen::SelfAdjointEigenSolver<Matrix> es(matrix_, Eigen::EigenvaluesOnly);
      if (es.eigenvalues().minCoeff() < -tol.eigenvalue)
        throw ValidationError("DensityOperator: negative eigenvalue " + std::to_string(es.eigenvalues().minCoeff()));
    }
  }

 private:
  void check_shape() const {
    const auto n = static_cast<Eigen::Index>(layout_.total_dim());
    if (matrix_.rows() != n || matrix_.cols() != n) throw LayoutError("DensityOperator: shape mismatch");
  }

  ModeLayout layout_;
  Matrix matrix_;
};

struct PreparedState {
  StateVector state;
  /// Per mode: |beta|^2 lies within 3 of the truncation edge d-1.
  std::vector<bool> truncation_unsafe;
  /// Per mode: population of the top Fock level after renormalization.
  std::vector<double> top_level_population;

  bool any_unsafe() const { return std::find(truncation_unsafe.begin(), truncation_unsafe.end(), true) != truncation_unsafe.end(); }
};

/// Truncated single-mode coherent amplitudes, renormalized.
inline Vector coherent_amplitudes(int d, Complex beta) {
  Vector c(d);
  c[0] = std::exp(-0.5 * std::norm(beta));
  for (int n = 1; n < d; ++n) c[n] = c[n - 1] * beta / std::sqrt(double(n));
  c /= c.norm();
  return c;
}

/// Product state from single-mode factors.
inline StateVector product_state(const ModeLayout& layout, const std::vector<Vector>& factors) {
  if (factors.size() != layout.num_modes()) throw LayoutError("product_state: one factor per mode required");
  for (std::size_t k = 0; k < factors.size(); ++k)
    if (factors[k].size() != layout.dim(k)) throw LayoutError("product_state: factor dimension mismatch");
  Vector a(static_cast<Eigen::Index>(layout.total_dim()));
  for (std::size_t i = 0; i < layout.total_dim(); ++i) {
    Complex v = 1.0;
    for (std::size_t k = 0; k < factors.size(); ++k) v *= factors[k][layout.occupation(i, k)];
    a[static_cast<Eigen::Index>(i)] = v;
  }
  return {layout, std::move(a)};
}

inline PreparedState coherent_state(const ModeLayout& layout, std::span<const Complex> betas) {
  if (betas.size() != layout.num_modes()) throw LayoutError("coherent_state: one amplitude per mode required");
  PreparedState out;
  std::vector<Vector> factors;
  for (std::size_t k = 0; k < betas.size(); ++k) {
    const int d = layout.dim(k);
    factors.push_back(coherent_amplitudes(d, betas[k]));
    out.truncation_unsafe.push_back(double(d - 1) - std::norm(betas[k]) < 3.0 && std::abs(betas[k]) > 0.0);
    out.top_level_population.push_back(std::norm(factors.back()[d - 1]));
  }
  out.state = product_state(layout, factors);
  out.state.normalize();
  return out;
}

inline Complex expectation(const StateVector& psi, const SparseOperator& op) {
  require_same_layout(psi.layout, op.layout, "expectation");
  const double n = psi.norm_sq();
  if (!(n > 0.0)) throw NumericalGuardError("expectation: zero state");
  return psi.amplitudes.dot(op.matrix * psi.amplitudes) / n;
}

inline Complex expectation(const DensityOperator& rho, const SparseOperator& op) {
  require_same_layout(rho.layout(), op.layout, "expectation");
  const Matrix& r = rho.matrix();
  Complex acc = 0.0;
  for (Eigen::Index row = 0; row < op.matrix.outerSize(); ++row)
    for (SparseMatrix::InnerIterator it(op.matrix, row); it; ++it) acc += it.value() * r(it.col(), row);
  return acc;
}

/// Expectation of a diagonal observable given basis populations.
inline double diagonal_expectation(const RealVector& populations, const RealVector& diag) { return populations.dot(diag); }

namespace detail {

inline std::vector<std::size_t> normalized_keep(const ModeLayout& layout, std::span<const std::size_t> keep) {
  if (keep.empty()) throw LayoutError("partial_trace: keep set is empty");
  std::vector<std::size_t> k(keep.begin(), keep.end());
  std::sort(k.begin(), k.end());
  if (std::adjacent_find(k.begin(), k.end()) != k.end()) throw LayoutError("partial_trace: duplicate mode in keep set");
  for (auto m : k) layout.check_mode(m);
  return k;
}

/// Flat indices arranged as [kept index][traced index].
struct SplitIndex {
  ModeLayout kept_layout;
  std::size_t kept_dim = 0;
  std::size_t traced_dim = 0;
  std::vector<std::size_t> full;  // kept-major

  SplitIndex(const ModeLayout& layout, const std::vector<std::size_t>& keep) {
    std::vector<std::size_t> traced;
    for (std::size_t m = 0; m < layout.num_modes(); ++m)
      if (!std::binary_search(keep.begin(), keep.end(), m)) traced.push_back(m);
    kept_layout = layout.sub_layout(keep);
    kept_dim = kept_layout.total_dim();
    traced_dim = layout.total_dim() / kept_dim;
    full.resize(layout.total_dim());
    for (std::size_t i = 0; i < layout.total_dim(); ++i) {
      std::size_t ki = 0, ti = 0;
      for (auto m : keep) ki = ki * static_cast<std::size_t>(layout.dim(m)) + static_cast<std::size_t>(layout.occupation(i, m));
      for (auto m : traced) ti = ti * static_cast<std::size_t>(layout.dim(m)) + static_cast<std::size_t>(layout.occupation(i, m));
      full[ki * traced_dim + ti] = i;
    }
  }
};

}  // namespace detail

/// Reduced state on the kept modes (ascending mode order).
inline DensityOperator partial_trace(const DensityOperator& rho, std::span<const std::size_t> keep) {
  const auto k = detail::normalized_keep(rho.layout(), keep);
  const detail::SplitIndex split(rho.layout(), k);
  const Matrix& r = rho.matrix();
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(split.kept_dim), static_cast<Eigen::Index>(split.kept_dim));
  for (std::size_t a = 0; a < split.kept_dim; ++a)
    for (std::size_t b = 0; b < split.kept_dim; ++b) {
      Complex acc = 0.0;
      for (std::size_t t = 0; t < split.traced_dim; ++t)
        acc += r(static_cast<Eigen::Index>(split.full[a * split.traced_dim + t]),
                 static_cast<Eigen::Index>(split.full[b * split.traced_dim + t]));
      out(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = acc;
    }
  return DensityOperator::unchecked(split.kept_layout, std::move(out));
}

/// Reduces pure states onto a fixed mode subset; precomputes the index split.
class StateReducer {
 public:
  StateReducer(const ModeLayout& layout, std::span<const std::size_t> keep)
      : layout_(layout), keep_(detail::normalized_keep(layout, keep)), split_(layout, keep_) {
    contiguous_tail_ = true;
    for (std::size_t j = 0; j < keep_.size(); ++j)
      if (keep_[j] != layout.num_modes() - keep_.size() + j) contiguous_tail_ = false;
    contiguous_head_ = true;
    for (std::size_t j = 0; j < keep_.size(); ++j)
      if (keep_[j] != j) contiguous_head_ = false;
  }

  const ModeLayout& kept_layout() const { return split_.kept_layout; }
  bool keeps_everything() const { return keep_.size() == layout_.num_modes(); }

  /// rho_keep = Tr_rest |psi><psi| / <psi|psi>.
  Matrix reduce(const StateVector& psi) const {
    require_same_layout(psi.layout, layout_, "StateReducer");
    const auto kd = static_cast<Eigen::Index>(split_.kept_dim);
    const auto td = static_cast<Eigen::Index>(split_.traced_dim);
    const double n = psi.norm_sq();
    Matrix out(kd, kd);
    if (contiguous_tail_) {
      // flat = traced * kd + kept; column-major view is (kd x td)
      Eigen::Map<const Matrix> view(psi.amplitudes.data(), kd, td);
      out.noalias() = view * view.adjoint();
    } else if (contiguous_head_) {
      // flat = kept * td + traced; column-major view is (td x kd)
      Eigen::Map<const Matrix> view(psi.amplitudes.data(), td, kd);
      out.noalias() = view.transpose() * view.conjugate();
    } else {
      Matrix psi_mat(kd, td);
      for (Eigen::Index a = 0; a < kd; ++a)
        for (Eigen::Index t = 0; t < td; ++t)
          psi_mat(a, t) = psi.amplitudes[static_cast<Eigen::Index>(split_.full[static_cast<std::size_t>(a * td + t)])];
      out.noalias() = psi_mat * psi_mat.adjoint();
    }
    out /= n;
    return out;
  }

  /// Basis populations of the kept modes.
  RealVector populations(const StateVector& psi) const {
    const auto kd = static_cast<Eigen::Index>(split_.kept_dim);
    const auto td = static_cast<std::size_t>(split_.traced_dim);
    RealVector p = RealVector::Zero(kd);
    for (Eigen::Index a = 0; a < kd; ++a)
      for (std::size_t t = 0; t < td; ++t)
        p[a] += std::norm(psi.amplitudes[static_cast<Eigen::Index>(split_.full[static_cast<std::size_t>(a) * td + t])]);
    return p / psi.norm_sq();
  }

 private:
  ModeLayout layout_;
  std::vector<std::size_t> keep_;
  detail::SplitIndex split_;
  bool contiguous_tail_ = false;
  bool contiguous_head_ = false;
};

/// Top-level Fock population of each mode.
inline std::vector<double> top_level_populations(const ModeLayout& layout, const RealVector& populations) {
  std::vector<double> top(layout.num_modes(), 0.0);
  for (std::size_t i = 0; i < layout.total_dim(); ++i)
    for (std::size_t k = 0; k < layout.num_modes(); ++k)
      if (layout.occupation(i, k) == layout.dim(k) - 1) top[k] += populations[static_cast<Eigen::Index>(i)];
  return top;
}

inline double purity(const DensityOperator& rho) { return rho.matrix().squaredNorm(); }

}  // namespace ntpd
