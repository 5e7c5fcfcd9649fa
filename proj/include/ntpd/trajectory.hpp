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

// Waiting-time (norm threshold) unraveling of the cascaded master equation.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ntpd/integrator.hpp"
#include "ntpd/model.hpp"
#include "ntpd/rng.hpp"
#include "ntpd/snapshot.hpp"

namespace ntpd {

/// Named expectation values evaluated on normalized pure states. Group 0 is
/// the full layout; further groups act on reduced states of mode subsets.
class ObservableSet {
 public:
  explicit ObservableSet(ModeLayout layout) : layout_(std::move(layout)) {
    groups_.push_back(Group{{}, std::nullopt, layout_, {}, false});
    for (std::size_t m = 0; m < layout_.num_modes(); ++m) groups_[0].keep.push_back(m);
    top_masks_.resize(layout_.num_modes());
    for (std::size_t k = 0; k < layout_.num_modes(); ++k) {
      top_masks_[k] = RealVector::Zero(static_cast<Eigen::Index>(layout_.total_dim()));
      for (std::size_t i = 0; i < layout_.total_dim(); ++i)
        if (layout_.occupation(i, k) == layout_.dim(k) - 1) top_masks_[k][static_cast<Eigen::Index>(i)] = 1.0;
    }
  }

  const ModeLayout& layout() const { return layout_; }

  /// New group over `keep` modes (ascending order); returns its id.
  std::size_t add_group(std::vector<std::size_t> keep, bool capture_density = false) {
    std::sort(keep.begin(), keep.end());
    std::optional<StateReducer> reducer;
    if (keep.size() != layout_.num_modes()) reducer.emplace(layout_, keep);  // full layout needs no reduction
    Group g{keep, std::move(reducer), layout_.sub_layout(keep), {}, capture_density};
    groups_.push_back(std::move(g));
    return groups_.size() - 1;
  }

  const ModeLayout& group_layout(std::size_t group) const { return groups_.at(group).layout; }

  void add(std::string name, SparseOperator op, std::size_t group = 0) {
    auto& g = groups_.at(group);
    require_same_layout(g.layout, op.layout, "ObservableSet::add");
    g.entries.push_back(Entry{names_.size(), std::move(op), {}, false});
    names_.push_back(std::move(name));
  }

  void add_diagonal(std::string name, RealVector diag, std::size_t group = 0) {
    auto& g = groups_.at(group);
    if (diag.size() != static_cast<Eigen::Index>(g.layout.total_dim())) throw LayoutError("ObservableSet: diagonal size mismatch");
    g.entries.push_back(Entry{names_.size(), {}, std::move(diag), true});
    names_.push_back(std::move(name));
  }

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t group_count() const { return groups_.size(); }
  bool captures(std::size_t group) const { return groups_.at(group).capture; }

  using DensitySink = std::function<void(std::size_t group, const Matrix& rho)>;

  /// Fills out[0..size()) for a normalized state.
  void evaluate(const StateVector& psi, std::span<Complex> out, const DensitySink* sink = nullptr) const {
    for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
      const auto& g = groups_[gi];
      if (g.entries.empty() && !(g.capture && sink)) continue;
      if (!g.reducer) {
        RealVector pop;
        for (const auto& e : g.entries) {
          if (e.diagonal) {
            if (pop.size() == 0) pop = psi.amplitudes.cwiseAbs2();
            out[e.slot] = pop.dot(e.diag);
          } else {
            out[e.slot] = psi.amplitudes.dot(e.op.matrix * psi.amplitudes);
          }
        }
        if (g.capture && sink) (*sink)(gi, psi.amplitudes * psi.amplitudes.adjoint());
        continue;
      }
      bool need_rho = g.capture && sink;
      for (const auto& e : g.entries) need_rho = need_rho || !e.diagonal;
      if (need_rho) {
        const Matrix rho = g.reducer->reduce(psi);
        const RealVector pop = rho.diagonal().real();
        for (const auto& e : g.entries) {
          if (e.diagonal) {
            out[e.slot] = pop.dot(e.diag);
          } else {
            Complex acc = 0.0;
            for (Eigen::Index row = 0; row < e.op.matrix.outerSize(); ++row)
              for (SparseMatrix::InnerIterator it(e.op.matrix, row); it; ++it) acc += it.value() * rho(it.col(), row);
            out[e.slot] = acc;
          }
        }
        if (g.capture && sink) (*sink)(gi, rho);
      } else {
        const RealVector pop = g.reducer->populations(psi);
        for (const auto& e : g.entries) out[e.slot] = pop.dot(e.diag);
      }
    }
  }

  /// Top Fock-level population of each mode for a normalized state.
  std::vector<double> top_level(const StateVector& psi) const {
    const RealVector pop = psi.amplitudes.cwiseAbs2();
    std::vector<double> top(layout_.num_modes());
    for (std::size_t k = 0; k < top.size(); ++k) top[k] = pop.dot(top_masks_[k]);
    return top;
  }

 private:
  struct Entry {
    std::size_t slot;
    SparseOperator op;
    RealVector diag;
    bool diagonal;
  };
  struct Group {
    std::vector<std::size_t> keep;
    std::optional<StateReducer> reducer;
    ModeLayout layout;
    std::vector<Entry> entries;
    bool capture;
  };

  ModeLayout layout_;
  std::vector<Group> groups_;
  std::vector<std::string> names_;
  std::vector<RealVector> top_masks_;
};

/// Propagation grid with observable sampling every `sample_every` steps.
struct TrajectoryGrid {
  double dt = 2e-3;
  std::size_t steps = 0;
  std::size_t sample_every = 1;

  std::size_t sample_count() const { return steps / sample_every + 1; }
  double sample_time(std::size_t s) const { return static_cast<double>(s * sample_every) * dt; }
  std::vector<double> sample_times() const {
    std::vector<double> t(sample_count());
    for (std::size_t s = 0; s < t.size(); ++s) t[s] = sample_time(s);
    return t;
  }
  void validate() const {
    if (!(dt > 0.0)) throw ValidationError("grid: dt must be positive");
    if (steps == 0) throw ValidationError("grid: need at least one step");
    if (sample_every == 0 || steps % sample_every != 0)
      throw ValidationError("grid: sample interval must divide the number of steps");
  }
};

struct JumpEvent {
  double time = 0.0;
  int channel = 0;  // 1..3
  bool operator==(const JumpEvent&) const = default;
};

struct TrajectoryRecord {
  std::uint64_t master_seed = 0;
  std::uint64_t index = 0;
  std::uint64_t seed = 0;  // per-trajectory stream key
  std::vector<JumpEvent> jumps;
  std::vector<std::vector<Complex>> samples;  // [sample][observable]
  std::vector<std::vector<double>> top_levels;  // [sample][mode] top Fock-level population
  std::uint64_t final_state_checksum = 0;
};

struct TrajectoryOptions {
  StepControl control{};
  double jump_time_tolerance = 1e-6;  // relative to dt
  double underflow = 1e-300;
};

/// FNV-1a over little-endian (re, im) doubles.
inline std::uint64_t state_checksum(const Vector& a) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    feed(a[i].real());
    feed(a[i].imag());
  }
  return h;
}

struct TrajectoryCheckpoint {
  std::uint64_t master_seed = 0;
  std::uint64_t index = 0;
  std::uint64_t next_step = 0;
  double threshold = 0.0;
  std::uint64_t rng_key = 0;
  std::uint64_t rng_counter = 0;
  double step_estimate = 0.0;
  std::vector<JumpEvent> jumps;
  std::vector<std::vector<Complex>> samples;
  std::vector<std::vector<double>> top_levels;
  StateVector state;  // unnormalized
};

inline constexpr char kCheckpointMagic[8] = {'N', 'T', 'P', 'D', 'T', 'R', 'J', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 2;

inline void write_checkpoint(std::ostream& os, const TrajectoryCheckpoint& c) {
  os.write(kCheckpointMagic, 8);
  io::put<std::uint32_t>(os, kCheckpointVersion);
  io::put<std::uint64_t>(os, c.master_seed);
  io::put<std::uint64_t>(os, c.index);
  io::put<std::uint64_t>(os, c.next_step);
  io::put<double>(os, c.threshold);
  io::put<std::uint64_t>(os, c.rng_key);
  io::put<std::uint64_t>(os, c.rng_counter);
  io::put<double>(os, c.step_estimate);
  io::put<std::uint64_t>(os, c.jumps.size());
  for (const auto& j : c.jumps) {
    io::put<double>(os, j.time);
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(j.channel));
  }
  io::put<std::uint64_t>(os, c.top_levels.size());
  io::put<std::uint64_t>(os, c.top_levels.empty() ? 0 : c.top_levels.front().size());
  for (const auto& row : c.top_levels)
    for (double v : row) io::put<double>(os, v);
  io::put<std::uint64_t>(os, c.samples.size());
  io::put<std::uint64_t>(os, c.samples.empty() ? 0 : c.samples.front().size());
  for (const auto& row : c.samples)
    for (auto v : row) io::put_complex(os, v);
  write_snapshot(os, c.state);
}

inline TrajectoryCheckpoint read_checkpoint(std::istream& is) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw IoError("not a trajectory checkpoint");
  if (io::get<std::uint32_t>(is) != kCheckpointVersion) throw IoError("unsupported checkpoint version");
  TrajectoryCheckpoint c;
  c.master_seed = io::get<std::uint64_t>(is);
  c.index = io::get<std::uint64_t>(is);
  c.next_step = io::get<std::uint64_t>(is);
  c.threshold = io::get<double>(is);
  c.rng_key = io::get<std::uint64_t>(is);
  c.rng_counter = io::get<std::uint64_t>(is);
  c.step_estimate = io::get<double>(is);
  const auto nj = io::get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < nj; ++i) {
    JumpEvent e;
    e.time = io::get<double>(is);
    e.channel = static_cast<int>(io::get<std::uint32_t>(is));
    c.jumps.push_back(e);
  }
  const auto nt = io::get<std::uint64_t>(is);
  const auto nm = io::get<std::uint64_t>(is);
  c.top_levels.assign(nt, std::vector<double>(nm));
  for (auto& row : c.top_levels)
    for (auto& v : row) v = io::get<double>(is);
  const auto ns = io::get<std::uint64_t>(is);
  const auto no = io::get<std::uint64_t>(is);
  c.samples.assign(ns, std::vector<Complex>(no));
  for (auto& row : c.samples)
    for (auto& v : row) v = io::get_complex(is);
  auto snap = read_snapshot(is);
  if (!std::holds_alternative<StateVector>(snap)) throw IoError("checkpoint: embedded snapshot is not a state vector");
  c.state = std::get<StateVector>(std::move(snap));
  return c;
}

inline void save_checkpoint(const std::string& path, const TrajectoryCheckpoint& c) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp);
    write_checkpoint(os, c);
    if (!os) throw IoError("write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot move checkpoint into place: " + path);
}

inline TrajectoryCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path);
  return read_checkpoint(is);
}

/// Single-trajectory propagator with checkpoint/resume.
class TrajectoryPropagator {
 public:
  TrajectoryPropagator(const GeneratorSet& gens, const ObservableSet& obs, TrajectoryGrid grid, TrajectoryOptions opt = {})
      : gens_(gens), obs_(obs), grid_(grid), opt_(opt) {
    grid_.validate();
    require_same_layout(gens.layout(), obs.layout(), "TrajectoryPropagator");
  }

  /// Observer for reduced density matrices: (sample index, group, rho).
  using ReducedSink = std::function<void(std::size_t, std::size_t, const Matrix&)>;
  /// With `only`, the observer sees that sample index alone.
  void set_reduced_sink(ReducedSink sink, std::optional<std::size_t> only = std::nullopt) {
    reduced_sink_ = std::move(sink);
    sink_only_ = only;
  }

  void start(const StateVector& psi0, std::uint64_t master_seed, std::uint64_t index) {
    require_same_layout(psi0.layout, gens_.layout(), "evolve_trajectory");
    if (std::abs(psi0.norm_sq() - 1.0) > 1e-10) throw ValidationError("evolve_trajectory: initial state must be normalized");
    psi_ = psi0;
    rng_ = CounterRng::for_trajectory(master_seed, index);
    record_ = TrajectoryRecord{};
    record_.master_seed = master_seed;
    record_.index = index;
    record_.seed = rng_.key();
    threshold_ = rng_.uniform_open();
    h_ = grid_.dt;
    next_step_ = 0;
    k1_valid_ = false;
    sample(0);
  }

  void restore(const TrajectoryCheckpoint& c) {
    require_same_layout(c.state.layout, gens_.layout(), "resume_trajectory");
    psi_ = c.state;
    rng_ = CounterRng(c.rng_key, c.rng_counter);
    record_ = TrajectoryRecord{};
    record_.master_seed = c.master_seed;
    record_.index = c.index;
    record_.seed = c.rng_key;
    record_.jumps = c.jumps;
    record_.samples = c.samples;
    record_.top_levels = c.top_levels;
    threshold_ = c.threshold;
    h_ = c.step_estimate;
    next_step_ = c.next_step;
    k1_valid_ = false;
  }

  TrajectoryCheckpoint checkpoint() const {
    TrajectoryCheckpoint c;
    c.master_seed = record_.master_seed;
    c.index = record_.index;
    c.next_step = next_step_;
    c.threshold = threshold_;
    c.rng_key = rng_.key();
    c.rng_counter = rng_.counter();
    c.step_estimate = h_;
    c.jumps = record_.jumps;
    c.samples = record_.samples;
    c.top_levels = record_.top_levels;
    c.state = psi_;
    return c;
  }

  std::size_t next_step() const { return next_step_; }
  bool finished() const { return next_step_ >= grid_.steps; }

  /// Propagates grid steps until `stop_step`, rounded up to a sample
  /// boundary: samples are the only forced step bounds, which keeps resumed
  /// runs bit-identical to uninterrupted ones.
  void run_until(std::size_t stop_step) {
    stop_step = (stop_step + grid_.sample_every - 1) / grid_.sample_every * grid_.sample_every;
    stop_step = std::min(stop_step, grid_.steps);
    while (next_step_ < stop_step) {
      const std::size_t to = next_step_ + grid_.sample_every - next_step_ % grid_.sample_every;
      propagate(static_cast<double>(next_step_) * grid_.dt, static_cast<double>(to) * grid_.dt);
      next_step_ = to;
      sample(next_step_ / grid_.sample_every);
    }
  }

  TrajectoryRecord finish() {
    run_until(grid_.steps);
    record_.final_state_checksum = state_checksum(psi_.normalized().amplitudes);
    return record_;
  }

  const StateVector& state() const { return psi_; }

 private:
  void sample(std::size_t s) {
    const StateVector psi = psi_.normalized();
    std::vector<Complex> row(obs_.size());
    ObservableSet::DensitySink sink;
    const bool observe = reduced_sink_ && (!sink_only_ || *sink_only_ == s);
    if (observe) sink = [&](std::size_t group, const Matrix& rho) { reduced_sink_(s, group, rho); };
    obs_.evaluate(psi, row, observe ? &sink : nullptr);
    record_.samples.push_back(std::move(row));
    record_.top_levels.push_back(obs_.top_level(psi));
  }

  void propagate(double ta, double tb) {
    double t = ta;
    int rejections = 0;
    const bool dissipative = gens_.dissipative();
    const bool fixed = !gens_.time_dependent();
    while (tb - t > 1e-14 * std::max(1.0, tb)) {
      // Couplings are frozen at each substep midpoint; GeneratorSet::max_step
      // keeps substeps short enough to resolve the schedule.
      const double step = std::min({h_, gens_.max_step(t), tb - t});
      const Couplings c = gens_.couplings_at(t + 0.5 * step);
      const DiagonalDecay decay = gens_.decay(c);
      auto f = [&](const Vector& y, Vector& dy) {
        gens_.apply_coherent(c, y, dy);
        dy *= -kI;
      };
      // First-same-as-last: with a frozen generator f(y1) of the last accepted
      // step is f(y0) of this one.
      if (!(fixed && k1_valid_)) f(psi_.amplitudes, k1_);
      k1_valid_ = false;
      const double err = dp_.attempt(f, decay, psi_.amplitudes, k1_, step, y1_, opt_.control);
      if (err > 1.0) {
        h_ = DormandPrince<Vector>::next_step(step, err, false, opt_.control);
        k1_valid_ = fixed;
        if (++rejections > opt_.control.max_rejections || h_ < 1e-14 * grid_.dt)
          throw NumericalGuardError("trajectory " + std::to_string(record_.index) + ": step rejection overflow near t = " +
                                    std::to_string(t) + "; try a smaller dt (e.g. " + std::to_string(grid_.dt / 4) + ")");
        continue;
      }
      rejections = 0;
      const double grown = DormandPrince<Vector>::next_step(step, err, true, opt_.control);
      if (dissipative && y1_.squaredNorm() <= threshold_) {
        const double tau = locate_crossing(decay, step);
        const Couplings cj = gens_.couplings_at(t + 0.5 * tau);
        const DiagonalDecay dj = gens_.decay(cj);
        auto fj = [&](const Vector& y, Vector& dy) {
          gens_.apply_coherent(cj, y, dy);
          dy *= -kI;
        };
        fj(psi_.amplitudes, k1_);
        dp_.attempt(fj, dj, psi_.amplitudes, k1_, tau, y1_, opt_.control);
        psi_.amplitudes.swap(y1_);
        t += tau;
        jump(t);
        continue;
      }
      psi_.amplitudes.swap(y1_);
      k1_ = dp_.k7();
      k1_valid_ = fixed;
      t += step;
      h_ = step < h_ ? std::max(h_, grown) : grown;
      if (psi_.norm_sq() < opt_.underflow)
        throw NumericalGuardError("trajectory " + std::to_string(record_.index) + ": norm underflow at t = " + std::to_string(t));
    }
  }

  /// Bisection for |psi(s)|^2 = threshold on the dense output of the last
  /// accepted step.
  double locate_crossing(const DiagonalDecay& decay, double step) {
    double lo = 0.0, hi = 1.0;
    const double tol = opt_.jump_time_tolerance * grid_.dt / step;
    while (hi - lo > tol) {
      const double s = 0.5 * (lo + hi);
      dp_.dense(decay, s, interp_);
      if (interp_.squaredNorm() > threshold_)
        lo = s;
      else
        hi = s;
    }
    return std::max(hi * step, 1e-15 * grid_.dt);
  }

  void jump(double t) {
    const Couplings c = gens_.couplings_at(t);
    std::array<Vector, kCavityModes> out;
    std::array<double, kCavityModes> w{};
    double total = 0.0;
    for (std::size_t k = 0; k < kCavityModes; ++k) {
      out[k] = gens_.apply_jump(k, c, psi_.amplitudes);
      w[k] = out[k].squaredNorm();
      total += w[k];
    }
    if (!(total > 0.0)) {
      // Crossing caused by integration drift with no jump weight; redraw.
      threshold_ = rng_.uniform_open();
      return;
    }
    const double u = rng_.uniform_open() * total;
    std::size_t k = 0;
    double acc = w[0];
    while (k + 1 < kCavityModes && (u > acc || w[k] == 0.0)) acc += w[++k];
    psi_.amplitudes = out[k] / std::sqrt(w[k]);
    if (!record_.jumps.empty() && !(t > record_.jumps.back().time)) t = std::nextafter(record_.jumps.back().time, 1e300);
    record_.jumps.push_back(JumpEvent{t, static_cast<int>(k + 1)});
    threshold_ = rng_.uniform_open();
  }

  const GeneratorSet& gens_;
  const ObservableSet& obs_;
  TrajectoryGrid grid_;
  TrajectoryOptions opt_;
  ReducedSink reduced_sink_;
  std::optional<std::size_t> sink_only_;
  StateVector psi_;
  CounterRng rng_;
  TrajectoryRecord record_;
  double threshold_ = 0.0;
  double h_ = 0.0;
  std::size_t next_step_ = 0;
  LawsonDormandPrince dp_;
  Vector k1_, y1_, interp_;
  bool k1_valid_ = false;
};

inline TrajectoryRecord evolve_trajectory(const StateVector& psi0, const GeneratorSet& gens, const TrajectoryGrid& grid,
                                          std::uint64_t master_seed, std::uint64_t index, const ObservableSet& obs,
                                          const TrajectoryOptions& opt = {}) {
  TrajectoryPropagator p(gens, obs, grid, opt);
  p.start(psi0, master_seed, index);
  return p.finish();
}

inline TrajectoryRecord resume_trajectory(const TrajectoryCheckpoint& c, const GeneratorSet& gens, const TrajectoryGrid& grid,
                                          const ObservableSet& obs, const TrajectoryOptions& opt = {}) {
  TrajectoryPropagator p(gens, obs, grid, opt);
  p.restore(c);
  return p.finish();
}

}  // namespace ntpd
