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

// Trajectory ensembles: fixed contiguous batches, each reduced in index
// order, merged in batch order. The result does not depend on the worker
// count or on interruption/resume.

#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "ntpd/trajectory.hpp"

namespace ntpd {

/// Running mean and sum of squared deviations of a complex vector
/// (Welford update, Chan merge). Squared deviations use |x - mean|^2.
struct RunningStats {
  std::uint64_t n = 0;
  Vector mean;
  RealVector m2;

  explicit RunningStats(Eigen::Index size = 0) : mean(Vector::Zero(size)), m2(RealVector::Zero(size)) {}

  Eigen::Index size() const { return mean.size(); }

  void add(const Vector& x) {
    if (x.size() != size()) throw LayoutError("RunningStats: sample size mismatch");
    ++n;
    const Vector delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2.array() += (delta.conjugate().array() * (x - mean).array()).real();
  }

  void merge(const RunningStats& o) {
    if (o.n == 0) return;
    if (n == 0) {
      *this = o;
      return;
    }
    if (o.size() != size()) throw LayoutError("RunningStats: merge size mismatch");
    const double na = static_cast<double>(n), nb = static_cast<double>(o.n), nt = na + nb;
    const Vector delta = o.mean - mean;
    mean += delta * (nb / nt);
    m2 += o.m2 + delta.cwiseAbs2() * (na * nb / nt);
    n += o.n;
  }

  /// Standard error of the mean: sample std / sqrt(n).
  RealVector standard_error() const {
    if (n < 2) return RealVector::Constant(size(), std::numeric_limits<double>::quiet_NaN());
    return (m2.array() / (static_cast<double>(n - 1) * static_cast<double>(n))).max(0.0).sqrt();
  }
};

/// Per observable and sample time: mean, standard error, n_traj.
struct EnsembleEstimate {
  std::vector<std::string> names;
  std::vector<double> times;
  std::size_t n_traj = 0;
  Matrix mean;        // [sample][observable]
  Eigen::MatrixXd se;

  Complex at(std::size_t sample, std::size_t obs) const {
    return mean(static_cast<Eigen::Index>(sample), static_cast<Eigen::Index>(obs));
  }
  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    throw LayoutError("EnsembleEstimate: unknown observable " + name);
  }
};

namespace detail {

inline Vector flatten_samples(const std::vector<std::vector<Complex>>& samples) {
  const std::size_t ns = samples.size(), no = ns ? samples.front().size() : 0;
  Vector v(static_cast<Eigen::Index>(ns * no));
  for (std::size_t s = 0; s < ns; ++s) {
    if (samples[s].size() != no) throw LayoutError("trajectory record: ragged samples");
    for (std::size_t o = 0; o < no; ++o) v[static_cast<Eigen::Index>(s * no + o)] = samples[s][o];
  }
  return v;
}

inline EnsembleEstimate make_estimate(const RunningStats& st, std::vector<std::string> names, std::vector<double> times) {
  EnsembleEstimate e;
  const auto ns = static_cast<Eigen::Index>(times.size()), no = static_cast<Eigen::Index>(names.size());
  if (st.size() != ns * no) throw LayoutError("ensemble estimate: statistics do not match the grid");
  e.names = std::move(names);
  e.times = std::move(times);
  e.n_traj = st.n;
  e.mean = Eigen::Map<const Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(st.mean.data(), ns, no);
  const RealVector se = st.standard_error();
  e.se = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(se.data(), ns, no);
  return e;
}

}  // namespace detail

/// Mean and standard error over records sharing one grid. Reduction is a
/// balanced pairwise merge, so the result does not depend on grouping
/// beyond rounding.
inline EnsembleEstimate ensemble_average(const std::vector<TrajectoryRecord>& records, std::vector<std::string> names,
                                         std::vector<double> times) {
  if (records.size() < 2) throw ValidationError("ensemble_average: need at least two records");
  std::vector<RunningStats> level;
  for (const auto& r : records) {
    if (r.samples.size() != times.size() || (!r.samples.empty() && r.samples.front().size() != names.size()))
      throw LayoutError("ensemble_average: record grid mismatch");
    RunningStats s(static_cast<Eigen::Index>(times.size() * names.size()));
    s.add(detail::flatten_samples(r.samples));
    level.push_back(std::move(s));
  }
  while (level.size() > 1) {
    std::vector<RunningStats> next;
    for (std::size_t i = 0; i + 1 < level.size(); i += 2) {
      next.push_back(level[i]);
      next.back().merge(level[i + 1]);
    }
    if (level.size() % 2) next.push_back(level.back());
    level.swap(next);
  }
  return detail::make_estimate(level.front(), std::move(names), std::move(times));
}

struct EnsembleOptions {
  std::size_t n_traj = 2000;
  std::uint64_t master_seed = 1;
  std::size_t batch_size = 50;
  std::size_t workers = 1;
  /// Group of the ObservableSet whose reduced density matrix is averaged per
  /// sample (0 = none).
  std::size_t density_group = 0;
  bool density_final_only = false;  // average only the last sample's density
  bool keep_records = false;
  std::string checkpoint_path;  // empty = no checkpoints
  std::function<void(std::size_t done, std::size_t total)> progress;
};

/// Everything a batch contributes.
struct BatchResult {
  std::size_t index = 0;
  RunningStats samples;                // flattened [sample][observable]
  RunningStats jumps;                  // per-channel jump counts (3)
  std::vector<Matrix> density_sum;     // per sample, summed over trajectories
  RunningStats top_levels;             // flattened [sample][mode]
  std::vector<TrajectoryRecord> records;
};

struct EnsembleResult {
  std::vector<std::string> names;
  std::vector<double> times;
  std::size_t n_traj = 0;
  RunningStats total;
  std::vector<RunningStats> batch_stats;  // for the jackknife
  RunningStats jumps;
  std::vector<Matrix> mean_density;  // per sample (empty when not captured)
  std::vector<Matrix> density_sum;   // per sample, summed; checkpointed so a resume is bit-exact
  RunningStats top_levels;           // flattened [sample][mode]
  std::vector<double> max_top_level;  // per mode, of the ensemble mean over samples
  std::vector<TrajectoryRecord> records;

  EnsembleEstimate estimate() const { return detail::make_estimate(total, names, times); }
};

/// Leave-one-batch-out jackknife of a nonlinear statistic f(flattened means).
/// Returns f at the full mean and its standard error.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> jackknife(const std::vector<RunningStats>& batches,
                                                             const std::function<Eigen::VectorXd(const Vector&)>& f) {
  if (batches.empty()) throw ValidationError("jackknife: no batches");
  RunningStats all;
  for (const auto& b : batches) all.merge(b);
  const Eigen::VectorXd full = f(all.mean);
  Eigen::VectorXd se = Eigen::VectorXd::Constant(full.size(), std::numeric_limits<double>::quiet_NaN());
  const std::size_t nb = batches.size();
  if (nb < 2) return {full, se};
  const Vector sum = all.mean * static_cast<double>(all.n);
  std::vector<Eigen::VectorXd> theta;
  theta.reserve(nb);
  Eigen::VectorXd avg = Eigen::VectorXd::Zero(full.size());
  for (const auto& b : batches) {
    const double rest = static_cast<double>(all.n - b.n);
    const Vector loo = (sum - b.mean * static_cast<double>(b.n)) / rest;
    theta.push_back(f(loo));
    avg += theta.back();
  }
  avg /= static_cast<double>(nb);
  Eigen::VectorXd var = Eigen::VectorXd::Zero(full.size());
  for (const auto& t : theta) var.array() += (t - avg).array().square();
  se = (var * (static_cast<double>(nb - 1) / static_cast<double>(nb))).array().sqrt();
  return {full, se};
}

inline constexpr char kEnsembleMagic[8] = {'N', 'T', 'P', 'D', 'E', 'N', 'S', 'B'};
inline constexpr std::uint32_t kEnsembleVersion = 3;

namespace detail {

inline void put_stats(std::ostream& os, const RunningStats& s) {
  io::put<std::uint64_t>(os, s.n);
  io::put<std::uint64_t>(os, static_cast<std::uint64_t>(s.size()));
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    io::put_complex(os, s.mean[i]);
    io::put<double>(os, s.m2[i]);
  }
}

inline RunningStats get_stats(std::istream& is) {
  const auto n = io::get<std::uint64_t>(is);
  const auto size = static_cast<Eigen::Index>(io::get<std::uint64_t>(is));
  RunningStats s(size);
  s.n = n;
  for (Eigen::Index i = 0; i < size; ++i) {
    s.mean[i] = io::get_complex(is);
    s.m2[i] = io::get<double>(is);
  }
  return s;
}

}  // namespace detail

/// Merged prefix of batches; what an ensemble checkpoint holds.
struct EnsembleProgress {
  std::uint64_t config_hash = 0;
  std::size_t batches_done = 0;
  EnsembleResult partial;
};

inline void save_ensemble_checkpoint(const std::string& path, const EnsembleProgress& p) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp);
    os.write(kEnsembleMagic, 8);
    io::put<std::uint32_t>(os, kEnsembleVersion);
    io::put<std::uint64_t>(os, p.config_hash);
    io::put<std::uint64_t>(os, p.batches_done);
    const auto& r = p.partial;
    io::put<std::uint64_t>(os, r.n_traj);
    detail::put_stats(os, r.total);
    detail::put_stats(os, r.jumps);
    io::put<std::uint64_t>(os, r.batch_stats.size());
    for (const auto& b : r.batch_stats) detail::put_stats(os, b);
    detail::put_stats(os, r.top_levels);
    io::put<std::uint64_t>(os, r.density_sum.size());
    for (const auto& m : r.density_sum) {
      io::put<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
      for (Eigen::Index i = 0; i < m.size(); ++i) io::put_complex(os, m.data()[i]);
    }
    if (!os) throw IoError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline std::optional<EnsembleProgress> load_ensemble_checkpoint(const std::string& path, std::uint64_t config_hash) {
  std::ifstream is(path, std::ios::binary);
  if (!is) return std::nullopt;
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kEnsembleMagic, 8) != 0) throw IoError("not an ensemble checkpoint: " + path);
  if (io::get<std::uint32_t>(is) != kEnsembleVersion) throw IoError("unsupported ensemble checkpoint version");
  EnsembleProgress p;
  p.config_hash = io::get<std::uint64_t>(is);
  if (p.config_hash != config_hash) throw ValidationError("checkpoint " + path + " belongs to a different configuration");
  p.batches_done = io::get<std::uint64_t>(is);
  auto& r = p.partial;
  r.n_traj = io::get<std::uint64_t>(is);
  r.total = detail::get_stats(is);
  r.jumps = detail::get_stats(is);
  const auto nb = io::get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < nb; ++i) r.batch_stats.push_back(detail::get_stats(is));
  r.top_levels = detail::get_stats(is);
  const auto nd = io::get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < nd; ++i) {
    const auto d = static_cast<Eigen::Index>(io::get<std::uint64_t>(is));
    Matrix m(d, d);
    for (Eigen::Index j = 0; j < m.size(); ++j) m.data()[j] = io::get_complex(is);
    r.density_sum.push_back(std::move(m));
  }
  if (!is) throw IoError("truncated ensemble checkpoint: " + path);
  return p;
}

/// Runs trajectories index 0..n_traj-1. Batch b holds indices
/// [b*batch_size, min((b+1)*batch_size, n_traj)).
inline EnsembleResult run_ensemble(const StateVector& psi0, const GeneratorSet& gens, const ObservableSet& obs,
                                   const TrajectoryGrid& grid, const EnsembleOptions& opt, const TrajectoryOptions& topt = {},
                                   std::uint64_t config_hash = 0) {
  if (opt.n_traj < 2) throw ValidationError("ensemble: need at least two trajectories");
  if (opt.batch_size == 0) throw ValidationError("ensemble: batch size must be positive");
  grid.validate();
  const std::size_t n_batches = (opt.n_traj + opt.batch_size - 1) / opt.batch_size;
  const std::size_t ns = grid.sample_count(), no = obs.size();
  const auto flat = static_cast<Eigen::Index>(ns * no);
  const std::size_t modes = gens.layout().num_modes();
  const bool capture = opt.density_group != 0;
  if (capture && !obs.captures(opt.density_group)) throw ValidationError("ensemble: density group does not capture");

  EnsembleResult result;
  result.names = obs.names();
  result.times = grid.sample_times();
  result.total = RunningStats(flat);
  result.jumps = RunningStats(kCavityModes);
  result.top_levels = RunningStats(static_cast<Eigen::Index>(ns * modes));
  std::size_t merged = 0;
  if (!opt.checkpoint_path.empty()) {
    if (auto p = load_ensemble_checkpoint(opt.checkpoint_path, config_hash)) {
      merged = p->batches_done;
      auto names = std::move(result.names);
      auto times = std::move(result.times);
      result = std::move(p->partial);
      result.names = std::move(names);
      result.times = std::move(times);
      if (result.total.size() != flat) throw ValidationError("checkpoint does not match the observable layout");
    }
  }
  if (opt.keep_records) result.records.resize(opt.n_traj);

  auto run_batch = [&](std::size_t b) {
    BatchResult br;
    br.index = b;
    br.samples = RunningStats(flat);
    br.jumps = RunningStats(kCavityModes);
    br.top_levels = RunningStats(static_cast<Eigen::Index>(ns * modes));
    if (capture) {
      const auto d = static_cast<Eigen::Index>(obs.group_layout(opt.density_group).total_dim());
      br.density_sum.assign(ns, Matrix());
      for (std::size_t q = opt.density_final_only ? ns - 1 : 0; q < ns; ++q) br.density_sum[q] = Matrix::Zero(d, d);
    }
    TrajectoryPropagator prop(gens, obs, grid, topt);
    if (capture)
      prop.set_reduced_sink(
          [&](std::size_t s, std::size_t group, const Matrix& rho) {
            if (group == opt.density_group) br.density_sum[s] += rho;
          },
          opt.density_final_only ? std::optional<std::size_t>(ns - 1) : std::nullopt);
    const std::size_t lo = b * opt.batch_size, hi = std::min(opt.n_traj, lo + opt.batch_size);
    for (std::size_t i = lo; i < hi; ++i) {
      prop.start(psi0, opt.master_seed, i);
      TrajectoryRecord rec = prop.finish();
      br.samples.add(detail::flatten_samples(rec.samples));
      Vector counts = Vector::Zero(kCavityModes);
      for (const auto& j : rec.jumps) counts[j.channel - 1] += 1.0;
      br.jumps.add(counts);
      Vector top(static_cast<Eigen::Index>(ns * modes));
      for (std::size_t q = 0; q < ns; ++q)
        for (std::size_t k = 0; k < modes; ++k) top[static_cast<Eigen::Index>(q * modes + k)] = rec.top_levels[q][k];
      br.top_levels.add(top);
      if (opt.keep_records) br.records.push_back(std::move(rec));
    }
    return br;
  };

  std::mutex mu;
  std::map<std::size_t, BatchResult> pending;
  std::exception_ptr failure;
  std::vector<Matrix>& density_sum = result.density_sum;
  if (capture && density_sum.empty()) {
    const auto d = static_cast<Eigen::Index>(obs.group_layout(opt.density_group).total_dim());
    density_sum.assign(ns, Matrix());
    for (std::size_t q = opt.density_final_only ? ns - 1 : 0; q < ns; ++q) density_sum[q] = Matrix::Zero(d, d);
  }

  // Caller holds mu. Folds finished batches into the result in batch order.
  auto fold = [&]() {
    bool advanced = false;
    for (auto it = pending.find(merged); it != pending.end(); it = pending.find(merged)) {
      BatchResult& br = it->second;
      result.total.merge(br.samples);
      result.jumps.merge(br.jumps);
      result.batch_stats.push_back(br.samples);
      result.top_levels.merge(br.top_levels);
      for (std::size_t s = 0; s < density_sum.size(); ++s) density_sum[s] += br.density_sum[s];
      result.n_traj += br.samples.n;
      if (opt.keep_records)
        for (auto& r : br.records) result.records[r.index] = std::move(r);
      pending.erase(it);
      ++merged;
      advanced = true;
    }
    if (advanced) {
      if (capture) {
        result.mean_density.resize(ns);
        for (std::size_t s = 0; s < ns; ++s) result.mean_density[s] = density_sum[s] / static_cast<double>(result.n_traj);
      }
      if (!opt.checkpoint_path.empty()) save_ensemble_checkpoint(opt.checkpoint_path, {config_hash, merged, result});
      if (opt.progress) opt.progress(result.n_traj, opt.n_traj);
    }
  };

  std::atomic<std::size_t> next{merged};
  auto worker = [&]() {
    for (;;) {
      const std::size_t b = next.fetch_add(1);
      if (b >= n_batches) return;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (failure) return;
      }
      try {
        BatchResult br = run_batch(b);
        std::lock_guard<std::mutex> lock(mu);
        pending.emplace(b, std::move(br));
        fold();
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  const std::size_t nw = std::max<std::size_t>(1, std::min(opt.workers, n_batches));
  if (nw == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < nw; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  if (merged != n_batches) throw NumericalGuardError("ensemble: not all batches completed");
  if (capture && result.n_traj > 0) {
    result.mean_density.resize(ns);
    for (std::size_t s = 0; s < ns; ++s) result.mean_density[s] = density_sum[s] / static_cast<double>(result.n_traj);
  }
  // Leakage is judged on the ensemble state, not on single trajectories.
  result.max_top_level.assign(modes, 0.0);
  for (std::size_t q = 0; q < ns; ++q)
    for (std::size_t k = 0; k < modes; ++k)
      result.max_top_level[k] = std::max(result.max_top_level[k], result.top_levels.mean[static_cast<Eigen::Index>(q * modes + k)].real());
  return result;
}

}  // namespace ntpd
