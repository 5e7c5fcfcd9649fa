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

// Scenario orchestration: coupling schedules, the trajectory ensemble (or the
// master equation for small spaces), witness series, conditioning, and
// atomic emission of all artifacts.

#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ntpd/conditioner.hpp"
#include "ntpd/ensemble.hpp"
#include "ntpd/master.hpp"
#include "ntpd/scenario.hpp"
#include "ntpd/snapshot.hpp"
#include "ntpd/temporal_modes.hpp"
#include "ntpd/witness.hpp"

#ifndef NTPD_VERSION
#define NTPD_VERSION "unknown"
#endif

namespace ntpd {

namespace fs = std::filesystem;

/// Environment variable naming the default output root.
inline constexpr const char* kOutputRootEnv = "NTPD_OUTPUT_ROOT";

struct OrderSeries {
  int order = 1;
  std::vector<std::string> columns;
  std::vector<CriteriaReport> reports;  // per sample
  Eigen::MatrixXd values, se;           // [sample][column]
};

/// Summary of one margin series.
struct MarginSummary {
  std::string name;
  double max = 0.0;
  double t_at_max = 0.0;
  double duration = 0.0;  // total measure of {t : margin > 0}
  double plateau = 0.0;   // mean over the final quarter
  double plateau_se = 0.0;
  double drift = 0.0;     // |fitted change over the final quarter| / |plateau|
  bool steady = false;
};

struct ConditioningResult {
  double x1 = 0.0, x2 = 0.0;
  double success_weight = 0.0;
  double negativity = 0.0;
  double purity = 0.0;
  std::uint64_t checksum = 0;
  std::optional<DensityOperator> rho;
  WignerGrid wigner;
};

struct RunReport {
  ScenarioConfig config;
  std::string version = NTPD_VERSION;
  std::vector<double> times;
  std::vector<OrderSeries> orders;
  std::vector<std::string> photon_names;
  Eigen::MatrixXd photons, photons_se;  // [sample][name]
  std::vector<double> purity;           // of the mean witness-mode state
  std::optional<ConditioningResult> conditioning;
  std::string conditioning_error;  // set when the outcome tripped a numerical guard
  std::vector<MarginSummary> summary;
  std::vector<double> max_top_level;
  bool trusted = true;
  std::size_t n_traj = 0;
  std::array<double, 3> mean_jumps{};
  double wall_seconds = 0.0;
  std::string output_dir;
  std::optional<DensityOperator> final_state;  // witness modes at t_max

  const OrderSeries& order(int n) const {
    for (const auto& o : orders)
      if (o.order == n) return o;
    throw ValidationError("order " + std::to_string(n) + " was not evaluated");
  }
  /// Witness column by full name, e.g. "E_g1" or "var_steer_f2".
  std::vector<double> series(const std::string& column) const {
    for (const auto& o : orders)
      for (std::size_t c = 0; c < o.columns.size(); ++c)
        if (o.columns[c] == column) {
          const auto col = o.values.col(Eigen::Index(c));
          return {col.data(), col.data() + col.size()};
        }
    throw ValidationError("no witness column " + column);
  }
  const MarginSummary& margin(const std::string& name) const {
    for (const auto& m : summary)
      if (m.name == name) return m;
    throw ValidationError("no margin summary " + name);
  }
};

struct RunOptions {
  std::string output_dir;  // overrides config and environment
  bool write_files = true;
  std::function<void(std::size_t, std::size_t)> progress;
};

// ---------------------------------------------------------------------------
// Model assembly.

inline ModeLayout scenario_layout(const ScenarioConfig& c) {
  std::vector<int> dims(3, c.truncation.cavity);
  if (c.model.include_virtual) dims.insert(dims.end(), 3, c.truncation.virtual_modes);
  return ModeLayout(dims);
}

inline ModelParams intracavity_params(const ScenarioConfig& c) {
  ModelParams p;
  p.g = c.g_internal();
  p.theta = c.model.theta;
  for (std::size_t k = 0; k < 3; ++k) p.gammas[k] = c.gamma_internal(k);
  return p;
}

inline StateVector initial_state(const ScenarioConfig& c, const ModeLayout& layout) {
  std::vector<Complex> betas(layout.num_modes(), 0.0);
  for (std::size_t k = 0; k < 3; ++k) betas[k] = c.model.beta[k];
  return coherent_state(layout, betas).state;
}

struct ModeStage {
  std::vector<CorrelationKernel> kernels;
  std::vector<TemporalMode> modes;
  std::array<CouplingSchedule, 3> schedules;
};

/// Regression-theorem kernels of the intracavity system, dominant temporal
/// modes, and the virtual-cavity couplings that capture them.
inline ModeStage extract_modes(const ScenarioConfig& c) {
  const ModelParams p = intracavity_params(c);
  const ModeLayout layout(std::vector<int>(3, c.truncation.cavity));
  const DensityOperator rho0 = DensityOperator::from_pure(initial_state(c, layout));
  const UniformGrid grid = UniformGrid::spanning(c.grid.t_max, c.grid.kernel_points);
  ModeStage s;
  s.kernels = two_time_correlation(p, rho0, {0, 1, 2}, grid);
  for (std::size_t k = 0; k < 3; ++k) {
    try {
      s.modes.push_back(most_populated_mode(s.kernels[k]));
    } catch (const NumericalGuardError& e) {
      throw NumericalGuardError("mode " + std::to_string(k + 1) + ": " + e.what() + "; use a constant coupling");
    }
    s.schedules[k] = coupling_from_mode(s.modes.back(), c.coupling.cap, c.coupling.onset);
  }
  return s;
}

inline ModelParams scenario_params(const ScenarioConfig& c, const ModeStage* stage) {
  ModelParams p = intracavity_params(c);
  p.include_virtual = c.model.include_virtual;
  if (!p.include_virtual) return p;
  if (c.coupling.kind == "constant") {
    const auto grid = UniformGrid::spanning(c.grid.t_max, c.grid.kernel_points);
    const auto s = constant_coupling(c.coupling_internal(), grid);
    p.coupling = std::array<CouplingSchedule, 3>{s, s, s};
  } else {
    if (!stage) throw ValidationError("most-populated coupling needs the mode stage");
    p.coupling = stage->schedules;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Series post-processing.

namespace detail {

inline bool is_margin_column(const std::string& col, int n) {
  const std::string s = std::to_string(n);
  for (const char* b : {"E_f", "E_g", "S_f", "S_g", "var_ent_f", "var_ent_g", "var_steer_f", "var_steer_g"})
    if (col == std::string(b) + s) return true;
  return false;
}

inline std::size_t window_start(const std::vector<double>& t) {
  const double t0 = t.front() + 0.75 * (t.back() - t.front());
  std::size_t i = 0;
  while (i < t.size() && t[i] < t0 - 1e-12) ++i;
  return std::min(i, t.size() - 1);
}

/// Measure of {t : y(t) > 0} under linear interpolation.
inline double positive_measure(const std::vector<double>& t, const Eigen::VectorXd& y) {
  double m = 0.0;
  for (std::size_t i = 0; i + 1 < t.size(); ++i) {
    const double a = y[Eigen::Index(i)], b = y[Eigen::Index(i + 1)], h = t[i + 1] - t[i];
    if (!std::isfinite(a) || !std::isfinite(b)) continue;
    if (a > 0 && b > 0)
      m += h;
    else if (a > 0 && b <= 0)
      m += h * a / (a - b);
    else if (a <= 0 && b > 0)
      m += h * b / (b - a);
  }
  return m;
}

inline MarginSummary summarize(const std::string& name, const std::vector<double>& t, const Eigen::VectorXd& y, double plateau_se) {
  MarginSummary s;
  s.name = name;
  s.max = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (std::isfinite(y[i]) && y[i] > s.max) s.max = y[i], s.t_at_max = t[std::size_t(i)];
  if (!std::isfinite(s.max)) s.max = std::numeric_limits<double>::quiet_NaN();
  s.duration = positive_measure(t, y);
  const std::size_t w = window_start(t);
  const std::size_t n = t.size() - w;
  double st = 0, sy = 0;
  for (std::size_t i = w; i < t.size(); ++i) st += t[i], sy += y[Eigen::Index(i)];
  const double mt = st / double(n), my = sy / double(n);
  double sxy = 0, sxx = 0;
  for (std::size_t i = w; i < t.size(); ++i) {
    sxy += (t[i] - mt) * (y[Eigen::Index(i)] - my);
    sxx += (t[i] - mt) * (t[i] - mt);
  }
  const double slope = sxx > 0 ? sxy / sxx : 0.0;
  s.plateau = my;
  s.plateau_se = plateau_se;
  s.drift = std::abs(slope * (t.back() - t[w])) / std::abs(my);
  s.steady = std::isfinite(s.drift) && s.drift < 0.05;
  return s;
}

inline std::uint64_t matrix_checksum(const Matrix& m) {
  return state_checksum(Eigen::Map<const Vector>(m.data(), m.size()));
}

}  // namespace detail

/// Conditioning of the third witness mode on outcomes of the first two.
inline ConditioningResult condition_state(const DensityOperator& rho3, double x1, double x2, const WignerSpec& spec) {
  ConditioningResult r;
  r.x1 = x1;
  r.x2 = x2;
  auto c = condition_on_homodyne(rho3, x1, x2);
  r.success_weight = c.success_weight;
  r.purity = purity(c.rho);
  r.checksum = detail::matrix_checksum(c.rho.matrix());
  r.wigner = wigner(c.rho, spec);
  r.negativity = negativity(r.wigner);
  r.rho = std::move(c.rho);
  return r;
}

// ---------------------------------------------------------------------------
// Output.

namespace detail {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_text(const fs::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw IoError("cannot write " + p.string());
  os << s;
  if (!os) throw IoError("write failed for " + p.string());
}

inline void write_witness_csv(const fs::path& p, const RunReport& r) {
  std::string s = "t";
  for (const auto& o : r.orders) {
    for (const auto& c : o.columns) s += "," + c;
    for (const auto& c : o.columns) s += ",se_" + c;
    const std::string n = std::to_string(o.order);
    s += ",symmetric" + n + ",fi_ent" + n + ",gen_ent" + n + ",fi_steer" + n + ",gen_steer" + n + ",trusted" + n;
  }
  s += "\n";
  for (std::size_t i = 0; i < r.times.size(); ++i) {
    s += fmt(r.times[i]);
    for (const auto& o : r.orders) {
      const auto row = Eigen::Index(i);
      for (Eigen::Index c = 0; c < o.values.cols(); ++c) s += "," + fmt(o.values(row, c));
      for (Eigen::Index c = 0; c < o.se.cols(); ++c) s += "," + fmt(o.se(row, c));
      const auto& q = o.reports[i];
      for (bool b : {q.symmetric, q.fully_inseparable_entanglement, q.genuine_entanglement, q.fully_inseparable_steering, q.genuine_steering,
                     q.trusted})
        s += b ? ",1" : ",0";
    }
    s += "\n";
  }
  write_text(p, s);
}

inline void write_photons_csv(const fs::path& p, const RunReport& r) {
  std::string s = "t";
  for (const auto& n : r.photon_names) s += "," + n;
  for (const auto& n : r.photon_names) s += ",se_" + n;
  s += "\n";
  for (std::size_t i = 0; i < r.times.size(); ++i) {
    s += fmt(r.times[i]);
    for (Eigen::Index c = 0; c < r.photons.cols(); ++c) s += "," + fmt(r.photons(Eigen::Index(i), c));
    for (Eigen::Index c = 0; c < r.photons_se.cols(); ++c) s += "," + fmt(r.photons_se(Eigen::Index(i), c));
    s += "\n";
  }
  write_text(p, s);
}

inline void write_purity_csv(const fs::path& p, const RunReport& r) {
  std::string s = "t,purity\n";
  for (std::size_t i = 0; i < r.times.size(); ++i) s += fmt(r.times[i]) + "," + fmt(r.purity[i]) + "\n";
  write_text(p, s);
}

inline void write_density_csv(const fs::path& p, const Matrix& m) {
  std::string s = "m,n,re,im\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      s += std::to_string(i) + "," + std::to_string(j) + "," + fmt(m(i, j).real()) + "," + fmt(m(i, j).imag()) + "\n";
  write_text(p, s);
}

inline nlohmann::json summary_json(const MarginSummary& m) {
  return {{"max", m.max},           {"t_at_max", m.t_at_max}, {"duration", m.duration}, {"plateau", m.plateau},
          {"plateau_se", m.plateau_se}, {"drift", m.drift},       {"steady", m.steady}};
}

inline void write_conditioning(const fs::path& dir, const ConditioningResult& c) {
  write_density_csv(dir / "conditioned_rho.csv", c.rho->matrix());
  write_wigner_csv((dir / "wigner.csv").string(), c.wigner);
  nlohmann::json w = wigner_sidecar(c.wigner);
  write_text(dir / "wigner.json", w.dump(2) + "\n");
}

inline nlohmann::json conditioning_json(const ConditioningResult& c) {
  char cs[20];
  std::snprintf(cs, sizeof cs, "%016llx", static_cast<unsigned long long>(c.checksum));
  return {{"x1", c.x1},
          {"x2", c.x2},
          {"success_weight", c.success_weight},
          {"negativity", c.negativity},
          {"purity", c.purity},
          {"rho_checksum", cs},
          {"wigner_normalization_residual", c.wigner.normalization - 1.0},
          {"convention", c.wigner.convention}};
}

inline nlohmann::json report_json(const RunReport& r) {
  nlohmann::json j;
  j["config"] = to_json(r.config);
  j["version"] = r.version;
  j["n_traj"] = r.n_traj;
  j["solver"] = r.config.ensemble.solver;
  j["wall_seconds"] = r.wall_seconds;
  j["trusted"] = r.trusted;
  j["max_top_level"] = r.max_top_level;
  j["mean_jumps"] = r.mean_jumps;
  j["time_unit"] = r.config.model.g > 0.0 ? "gt" : "t";
  nlohmann::json m = nlohmann::json::object();
  for (const auto& s : r.summary) m[s.name] = summary_json(s);
  j["margins"] = m;
  j["purity_final"] = r.purity.empty() ? 0.0 : r.purity.back();
  if (r.conditioning) j["conditioning"] = conditioning_json(*r.conditioning);
  if (!r.conditioning_error.empty()) j["conditioning_error"] = r.conditioning_error;
  j["files"] = {"witness.csv", "photons.csv", "purity.csv"};
  return j;
}

inline bool wants(const ScenarioConfig& c, const char* f) {
  return std::find(c.output.formats.begin(), c.output.formats.end(), f) != c.output.formats.end();
}

}  // namespace detail

inline std::string resolve_output_dir(const ScenarioConfig& c, const std::string& override_dir = {}) {
  if (!override_dir.empty()) return override_dir;
  if (!c.output.directory.empty()) return c.output.directory;
  const char* root = std::getenv(kOutputRootEnv);
  return (fs::path(root && *root ? root : "runs") / c.name).string();
}

inline void write_mode_stage(const fs::path& dir, const ModeStage& s, const ScenarioConfig& c) {
  fs::create_directories(dir);
  for (std::size_t k = 0; k < s.modes.size(); ++k) {
    const std::string id = std::to_string(k + 1);
    write_kernel_csv((dir / ("kernel_" + id + ".csv")).string(), s.kernels[k]);
    write_mode_csv((dir / ("mode_" + id + ".csv")).string(), s.modes[k]);
    const auto side = mode_sidecar(s.modes[k], s.schedules[k], c.gamma_internal(k), c.g_internal());
    detail::write_text(dir / ("mode_" + id + ".json"), side.dump(2) + "\n");
  }
}

/// Writes every artifact of a finished run into `dir`.
inline void write_run(const fs::path& dir, const RunReport& r, const ModeStage* stage) {
  fs::create_directories(dir);
  detail::write_witness_csv(dir / "witness.csv", r);
  detail::write_photons_csv(dir / "photons.csv", r);
  detail::write_purity_csv(dir / "purity.csv", r);
  if (stage) write_mode_stage(dir / "modes", *stage, r.config);
  if (r.conditioning) detail::write_conditioning(dir, *r.conditioning);
  if (r.final_state && detail::wants(r.config, "snapshot")) save_snapshot((dir / "final_state.snap").string(), *r.final_state);
  detail::write_text(dir / "scenario.json", to_json(r.config).dump(2) + "\n");
  detail::write_text(dir / "report.json", detail::report_json(r).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Running.

namespace detail {

/// Criteria for every sample and order from flattened means, plus plateau
/// means of the margin columns. Layout: per order, [sample][column] then
/// one plateau value per column.
struct SeriesEvaluator {
  std::vector<int> orders;
  std::vector<std::size_t> slots;  // first observable of each order
  std::size_t n_obs = 0, n_samples = 0, window = 0;
  double symmetry_tolerance = 0.0;

  std::size_t columns(int n) const { return criteria_columns(n).size(); }

  Eigen::VectorXd operator()(const Vector& flat) const {
    std::vector<double> out;
    CriteriaOptions opt;
    opt.always_closed_form = true;
    opt.symmetry_tolerance = symmetry_tolerance;
    for (std::size_t o = 0; o < orders.size(); ++o) {
      const std::size_t nc = columns(orders[o]);
      std::vector<double> plateau(nc, 0.0);
      for (std::size_t s = 0; s < n_samples; ++s) {
        const Complex* row = flat.data() + s * n_obs + slots[o];
        const MomentSet m = moments_from_values(orders[o], std::span<const Complex>(row, kMomentCount));
        const auto v = criteria_values(evaluate_criteria(m, nullptr, opt));
        out.insert(out.end(), v.begin(), v.end());
        if (s >= window)
          for (std::size_t c = 0; c < nc; ++c) plateau[c] += v[c] / double(n_samples - window);
      }
      out.insert(out.end(), plateau.begin(), plateau.end());
    }
    return Eigen::Map<Eigen::VectorXd>(out.data(), Eigen::Index(out.size()));
  }
};

inline void fill_summaries(RunReport& r, const std::vector<Eigen::VectorXd>& plateau_se) {
  for (std::size_t o = 0; o < r.orders.size(); ++o) {
    const auto& os = r.orders[o];
    for (std::size_t c = 0; c < os.columns.size(); ++c) {
      if (!is_margin_column(os.columns[c], os.order)) continue;
      const double pse = plateau_se.empty() ? 0.0 : plateau_se[o][Eigen::Index(c)];
      r.summary.push_back(summarize(os.columns[c], r.times, os.values.col(Eigen::Index(c)), pse));
    }
  }
}

inline std::array<std::size_t, 3> witness_modes(const ScenarioConfig& c) {
  return c.virtual_witness() ? std::array<std::size_t, 3>{3, 4, 5} : std::array<std::size_t, 3>{0, 1, 2};
}

inline void run_master(const ScenarioConfig& c, const GeneratorSet& gens, const StateVector& psi0, RunReport& r) {
  const ModeLayout& layout = gens.layout();
  const std::size_t ns = c.steps() / c.grid.sample_every + 1;
  const UniformGrid grid{0.0, c.grid.dt * double(c.grid.sample_every), ns};
  const auto wm = witness_modes(c);
  std::vector<std::vector<SparseOperator>> ops;  // per order
  std::vector<std::size_t> keep(wm.begin(), wm.end());
  const ModeLayout wl = layout.sub_layout(keep);
  for (int n : c.witness.orders) {
    std::vector<SparseOperator> v;
    for (auto& [name, op] : moment_operators(wl, {0, 1, 2}, n)) v.push_back(std::move(op));
    ops.push_back(std::move(v));
  }
  std::vector<RealVector> occ;
  for (std::size_t k = 0; k < layout.num_modes(); ++k) occ.push_back(occupation_values(layout, k));
  r.photons.resize(Eigen::Index(ns), Eigen::Index(occ.size()));
  r.photons_se = Eigen::MatrixXd::Zero(Eigen::Index(ns), Eigen::Index(occ.size()));
  r.max_top_level.assign(layout.num_modes(), 0.0);
  r.purity.resize(ns);
  for (std::size_t o = 0; o < c.witness.orders.size(); ++o) r.orders[o].reports.resize(ns);
  CriteriaOptions copt;
  copt.symmetry_tolerance = c.witness.symmetry_tolerance;
  MasterOptions mopt;
  mopt.control.rtol = std::min(1e-9, c.ensemble.rtol);
  mopt.control.atol = std::min(1e-11, c.ensemble.atol);
  integrate_master(DensityOperator::from_pure(psi0), gens, grid, [&](std::size_t i, double, const DensityOperator& rho) {
    const RealVector pop = rho.matrix().diagonal().real();
    for (std::size_t k = 0; k < occ.size(); ++k) r.photons(Eigen::Index(i), Eigen::Index(k)) = pop.dot(occ[k]);
    const auto top = top_level_populations(layout, pop);
    for (std::size_t k = 0; k < top.size(); ++k) r.max_top_level[k] = std::max(r.max_top_level[k], top[k]);
    const DensityOperator red = keep.size() == layout.num_modes() ? rho : partial_trace(rho, keep);
    r.purity[i] = purity(red);
    for (std::size_t o = 0; o < ops.size(); ++o) {
      std::vector<Complex> v;
      for (const auto& op : ops[o]) v.push_back(expectation(red, op));
      MomentSet m = moments_from_values(c.witness.orders[o], v);
      r.orders[o].reports[i] = evaluate_criteria(m, nullptr, copt);
    }
    if (i + 1 == ns) r.final_state = red;
  }, mopt);
  for (auto& os : r.orders) {
    os.values.resize(Eigen::Index(ns), Eigen::Index(os.columns.size()));
    for (std::size_t i = 0; i < ns; ++i) {
      const auto v = criteria_values(os.reports[i]);
      for (std::size_t k = 0; k < v.size(); ++k) os.values(Eigen::Index(i), Eigen::Index(k)) = v[k];
    }
    os.se = Eigen::MatrixXd::Zero(os.values.rows(), os.values.cols());
  }
  r.n_traj = 0;
  fill_summaries(r, {});
}

inline void run_trajectories(const ScenarioConfig& c, const GeneratorSet& gens, const StateVector& psi0, RunReport& r,
                             const RunOptions& ro, const std::string& checkpoint) {
  const ModeLayout& layout = gens.layout();
  ObservableSet obs(layout);
  const auto wm = witness_modes(c);
  const std::size_t wg = obs.add_group(std::vector<std::size_t>(wm.begin(), wm.end()), true);
  const ModeLayout& wl = obs.group_layout(wg);
  SeriesEvaluator ev;
  ev.orders = c.witness.orders;
  ev.symmetry_tolerance = c.witness.symmetry_tolerance;
  for (int n : c.witness.orders) {
    ev.slots.push_back(obs.size());
    for (auto& [name, op] : moment_operators(wl, {0, 1, 2}, n)) obs.add(name, std::move(op), wg);
  }
  const std::size_t photon_slot = obs.size();
  for (std::size_t k = 0; k < layout.num_modes(); ++k) obs.add_diagonal(r.photon_names[k], occupation_values(layout, k), 0);

  TrajectoryGrid tg{c.grid.dt, c.steps(), c.grid.sample_every};
  TrajectoryOptions topt;
  topt.control.rtol = c.ensemble.rtol;
  topt.control.atol = c.ensemble.atol;
  EnsembleOptions eo;
  eo.n_traj = c.ensemble.n_traj;
  eo.master_seed = c.ensemble.master_seed;
  eo.batch_size = c.ensemble.batch_size;
  eo.workers = c.ensemble.workers;
  // Per-sample densities feed purity.csv; above ~256 MB only the final one is
  // kept, and above ~1 GB none unless conditioning or a snapshot needs it.
  const double dw = double(wl.total_dim()), bytes = dw * dw * 16.0;
  const bool need_final = c.conditioning.enabled || wants(c, "snapshot");
  if (need_final && bytes > 1e9) throw ValidationError("witness-mode density too large for conditioning or snapshot; lower the truncation");
  eo.density_group = bytes > 1e9 ? 0 : wg;
  eo.density_final_only = double(c.steps() / c.grid.sample_every + 1) * bytes > 2.56e8;
  eo.checkpoint_path = checkpoint;
  eo.progress = ro.progress;
  const EnsembleResult er = run_ensemble(psi0, gens, obs, tg, eo, topt, config_hash(c));

  const EnsembleEstimate est = er.estimate();
  const std::size_t ns = est.times.size();
  r.n_traj = er.n_traj;
  for (std::size_t k = 0; k < 3; ++k) r.mean_jumps[k] = er.jumps.mean[Eigen::Index(k)].real();
  r.max_top_level = er.max_top_level;
  r.photons.resize(Eigen::Index(ns), Eigen::Index(layout.num_modes()));
  r.photons_se.resize(r.photons.rows(), r.photons.cols());
  for (std::size_t i = 0; i < ns; ++i)
    for (std::size_t k = 0; k < layout.num_modes(); ++k) {
      r.photons(Eigen::Index(i), Eigen::Index(k)) = est.mean(Eigen::Index(i), Eigen::Index(photon_slot + k)).real();
      r.photons_se(Eigen::Index(i), Eigen::Index(k)) = est.se(Eigen::Index(i), Eigen::Index(photon_slot + k));
    }
  r.purity.assign(ns, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < er.mean_density.size(); ++i)
    if (er.mean_density[i].size()) r.purity[i] = er.mean_density[i].squaredNorm();
  if (!er.mean_density.empty())
    r.final_state = DensityOperator::unchecked(wl, 0.5 * (er.mean_density.back() + er.mean_density.back().adjoint()));

  // Point values with symmetry gating, then jackknife errors.
  ev.n_obs = obs.size();
  ev.n_samples = ns;
  ev.window = window_start(est.times);
  CriteriaOptions copt;
  copt.symmetry_tolerance = c.witness.symmetry_tolerance;
  const bool trusted = *std::max_element(r.max_top_level.begin(), r.max_top_level.end()) < 1e-3;
  for (std::size_t o = 0; o < ev.orders.size(); ++o) {
    auto& os = r.orders[o];
    os.reports.resize(ns);
    os.values.resize(Eigen::Index(ns), Eigen::Index(os.columns.size()));
    for (std::size_t i = 0; i < ns; ++i) {
      std::vector<Complex> mv(kMomentCount);
      std::vector<double> sv(kMomentCount);
      for (std::size_t q = 0; q < kMomentCount; ++q) {
        mv[q] = est.mean(Eigen::Index(i), Eigen::Index(ev.slots[o] + q));
        sv[q] = est.se(Eigen::Index(i), Eigen::Index(ev.slots[o] + q));
      }
      MomentSet m = moments_from_values(ev.orders[o], mv);
      m.trusted = trusted;
      const MomentSet se = moment_errors_from_values(ev.orders[o], sv);
      os.reports[i] = evaluate_criteria(m, &se, copt);
      const auto v = criteria_values(os.reports[i]);
      for (std::size_t k = 0; k < v.size(); ++k) os.values(Eigen::Index(i), Eigen::Index(k)) = v[k];
    }
  }
  const auto [full, se] = jackknife(er.batch_stats, [&](const Vector& flat) { return ev(flat); });
  std::vector<Eigen::VectorXd> plateau_se;
  std::size_t off = 0;
  for (std::size_t o = 0; o < ev.orders.size(); ++o) {
    auto& os = r.orders[o];
    const auto nc = Eigen::Index(os.columns.size());
    os.se.resize(Eigen::Index(ns), nc);
    for (std::size_t i = 0; i < ns; ++i, off += std::size_t(nc)) os.se.row(Eigen::Index(i)) = se.segment(Eigen::Index(off), nc).transpose();
    plateau_se.push_back(se.segment(Eigen::Index(off), nc));
    off += std::size_t(nc);
  }
  fill_summaries(r, plateau_se);
}

}  // namespace detail

/// Full pipeline. Artifacts go to `<out>.partial` and are renamed to `<out>`
/// only when complete; an interrupted run resumes from the checkpoint there.
inline RunReport run_scenario(const ScenarioConfig& config, const RunOptions& ro = {}) {
  validate(config);
  const auto t_start = std::chrono::steady_clock::now();
  RunReport r;
  r.config = config;
  const ScenarioConfig& c = config;

  fs::path out, partial;
  if (ro.write_files) {
    out = resolve_output_dir(c, ro.output_dir);
    partial = out;
    partial += ".partial";
    fs::create_directories(partial);
    r.output_dir = out.string();
  }

  std::optional<ModeStage> stage;
  if (c.model.include_virtual && c.coupling.kind == "most_populated") stage = extract_modes(c);
  const ModelParams params = scenario_params(c, stage ? &*stage : nullptr);
  const ModeLayout layout = scenario_layout(c);
  const GeneratorSet gens(params, layout);
  const StateVector psi0 = initial_state(c, layout);

  for (std::size_t k = 0; k < layout.num_modes(); ++k)
    r.photon_names.push_back(k < 3 ? "I_" + std::to_string(k + 1) : "I_mu" + std::to_string(k - 2));
  for (int n : c.witness.orders) {
    OrderSeries os;
    os.order = n;
    os.columns = criteria_columns(n);
    r.orders.push_back(std::move(os));
  }
  const std::size_t ns = c.steps() / c.grid.sample_every + 1;
  for (std::size_t i = 0; i < ns; ++i) r.times.push_back(double(i * c.grid.sample_every) * c.grid.dt);

  if (c.ensemble.solver == "master")
    detail::run_master(c, gens, psi0, r);
  else
    detail::run_trajectories(c, gens, psi0, r, ro, ro.write_files ? (partial / "ensemble.ckpt").string() : std::string());

  r.trusted = *std::max_element(r.max_top_level.begin(), r.max_top_level.end()) < 1e-3;
  // A failed outcome keeps the run; the error is reported alongside it.
  if (c.conditioning.enabled && r.final_state) {
    try {
      r.conditioning = condition_state(*r.final_state, c.conditioning.x1, c.conditioning.x2, c.conditioning.wigner);
    } catch (const NumericalGuardError& e) {
      r.conditioning_error = e.what();
    }
  }
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

  if (ro.write_files) {
    write_run(partial, r, stage ? &*stage : nullptr);
    fs::remove(partial / "ensemble.ckpt");
    if (fs::exists(out)) fs::remove_all(out);
    fs::rename(partial, out);
  }
  return r;
}

/// Kernel and temporal-mode extraction only.
inline ModeStage run_modes(const ScenarioConfig& c, const std::string& out_dir) {
  validate(c);
  if (!c.model.include_virtual) throw ValidationError("modes: scenario has no virtual cavities");
  ModeStage s = extract_modes(c);
  fs::path partial = out_dir;
  partial += ".partial";
  write_mode_stage(partial, s, c);
  if (fs::exists(out_dir)) fs::remove_all(out_dir);
  fs::rename(partial, out_dir);
  return s;
}

/// Re-conditions the final state saved by a run.
inline ConditioningResult condition_run(const std::string& run_dir, double x1, double x2, const WignerSpec& spec = {}) {
  const fs::path snap = fs::path(run_dir) / "final_state.snap";
  if (!fs::exists(snap)) throw IoError(snap.string() + " not found; rerun with output.formats including 'snapshot'");
  const Snapshot s = load_snapshot(snap.string());
  const auto* rho = std::get_if<DensityOperator>(&s);
  if (!rho) throw IoError(snap.string() + " does not hold a density matrix");
  ConditioningResult c = condition_state(*rho, x1, x2, spec);
  char name[96];
  std::snprintf(name, sizeof name, "condition_%g_%g", x1, x2);
  const fs::path dir = fs::path(run_dir) / name;
  fs::create_directories(dir);
  detail::write_conditioning(dir, c);
  detail::write_text(dir / "conditioning.json", detail::conditioning_json(c).dump(2) + "\n");
  return c;
}

// ---------------------------------------------------------------------------
// Sweeps.

enum class SweepAxis { beta, gamma, g };

inline SweepAxis parse_axis(const std::string& s) {
  if (s == "beta") return SweepAxis::beta;
  if (s == "gamma") return SweepAxis::gamma;
  if (s == "g") return SweepAxis::g;
  throw ValidationError("sweep axis must be beta, gamma or g");
}

inline ScenarioConfig with_axis(ScenarioConfig c, SweepAxis axis, double v) {
  switch (axis) {
    case SweepAxis::beta:
      c.model.beta = {v, v, v};
      break;
    case SweepAxis::gamma:
      c.model.gamma = {v, v, v};
      break;
    case SweepAxis::g:
      c.model.g = v;
      break;
  }
  return c;
}

struct SweepResult {
  std::vector<double> values;
  std::vector<RunReport> runs;
};

namespace detail {

inline void write_sweep_summary(const fs::path& p, const std::string& axis, const SweepResult& s) {
  if (s.runs.empty()) return;
  std::string h = axis;
  for (const auto& m : s.runs.front().summary)
    for (const char* f : {"max", "t_at_max", "duration", "plateau", "plateau_se", "drift", "steady"}) h += "," + m.name + "_" + f;
  h += ",purity_final,negativity\n";
  for (std::size_t i = 0; i < s.runs.size(); ++i) {
    const auto& r = s.runs[i];
    h += fmt(s.values[i]);
    for (const auto& m : r.summary)
      h += "," + fmt(m.max) + "," + fmt(m.t_at_max) + "," + fmt(m.duration) + "," + fmt(m.plateau) + "," + fmt(m.plateau_se) + "," +
           fmt(m.drift) + "," + (m.steady ? "1" : "0");
    h += "," + fmt(r.purity.empty() ? 0.0 : r.purity.back());
    h += "," + (r.conditioning ? fmt(r.conditioning->negativity) : std::string("nan"));
    h += "\n";
  }
  const fs::path tmp = p.string() + ".tmp";
  write_text(tmp, h);
  fs::rename(tmp, p);
}

}  // namespace detail

/// Runs one scenario per value (ascending) into `<out>/<axis>_<value>` and
/// keeps `<out>/summary.csv` current after every finished run.
inline SweepResult sweep(const ScenarioConfig& base, const std::string& axis_name, std::vector<double> values, const RunOptions& ro = {}) {
  const SweepAxis axis = parse_axis(axis_name);
  if (values.empty()) throw ValidationError("sweep: no values");
  for (double v : values)
    if (!std::isfinite(v)) throw ValidationError("sweep: values must be finite");
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  const fs::path root = resolve_output_dir(base, ro.output_dir);
  if (ro.write_files) fs::create_directories(root);
  SweepResult s;
  for (double v : values) {
    ScenarioConfig c = with_axis(base, axis, v);
    char tag[64];
    std::snprintf(tag, sizeof tag, "%s_%g", axis_name.c_str(), v);
    c.name = base.name + "_" + tag;
    RunOptions sub = ro;
    sub.output_dir = (root / tag).string();
    s.runs.push_back(run_scenario(c, sub));
    s.values.push_back(v);
    if (ro.write_files) detail::write_sweep_summary(root / "summary.csv", axis_name, s);
  }
  return s;
}

}  // namespace ntpd
