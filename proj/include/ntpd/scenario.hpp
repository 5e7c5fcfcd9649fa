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

// Scenario files: JSON, schema 1, unknown keys rejected. Rates are given in
// physical units and rescaled so that g = 1 internally; times are gt.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ntpd/conditioner.hpp"
#include "ntpd/errors.hpp"
#include "ntpd/fock.hpp"

namespace ntpd {

inline constexpr int kScenarioSchema = 1;

struct ScenarioConfig {
  std::string name = "scenario";

  struct Model {
    double g = 1.0;
    double theta = std::numbers::pi / 2.0;
    std::array<double, 3> gamma{0.0, 0.0, 0.0};
    std::array<Complex, 3> beta{0.0, 0.0, 0.0};
    bool include_virtual = false;
  } model;

  struct Truncation {
    int cavity = 6;
    int virtual_modes = 5;
  } truncation;

  struct Grid {
    double t_max = 1.0;  // gt
    double dt = 2e-3;
    std::size_t sample_every = 10;
    std::size_t kernel_points = 200;
  } grid;

  struct Ensemble {
    std::size_t n_traj = 2000;
    std::uint64_t master_seed = 1;
    std::size_t batch_size = 50;
    std::size_t workers = 1;
    double rtol = 1e-5;
    double atol = 1e-9;
    std::string solver = "trajectory";  // or "master"
  } ensemble;

  struct Coupling {
    std::string kind = "constant";  // or "most_populated"
    double value = 1.5;             // g_mu / sqrt(g)
    double cap = 50.0;
    double onset = 1e-6;
  } coupling;

  struct Witness {
    std::vector<int> orders{1, 2};
    double symmetry_tolerance = 1e-6;
    std::string modes = "cavity";  // or "virtual"
  } witness;

  struct Conditioning {
    bool enabled = false;
    double x1 = 5.0, x2 = 5.0;
    WignerSpec wigner;
  } conditioning;

  struct Output {
    std::string directory;  // empty: <root>/<name>
    std::vector<std::string> formats{"csv", "json"};
  } output;

  /// Internal rate unit: g, or 1 when g = 0.
  double unit() const { return model.g > 0.0 ? model.g : 1.0; }
  double g_internal() const { return model.g / unit(); }
  double gamma_internal(std::size_t k) const { return model.gamma[k] / unit(); }
  double coupling_internal() const { return coupling.value / std::sqrt(unit()); }
  std::size_t steps() const { return static_cast<std::size_t>(std::llround(grid.t_max / grid.dt)); }
  bool virtual_witness() const { return witness.modes == "virtual"; }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ValidationError("scenario: '" + where + "' must be an object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ValidationError("scenario: unknown key '" + (where.empty() ? k : where + "." + k) + "'");
}

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError("scenario: bad value for '" + where + "." + key + "'");
  }
}

inline Complex read_complex(const nlohmann::json& v, const std::string& where) {
  if (v.is_number()) return v.get<double>();
  if (v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number()) return {v[0].get<double>(), v[1].get<double>()};
  throw ValidationError("scenario: '" + where + "' must be a number or [re, im]");
}

/// Scalar (applied to all three modes) or a three-element array.
template <class T, class Read>
std::array<T, 3> read_triple(const nlohmann::json& v, const std::string& where, Read&& one) {
  if (v.is_array() && v.size() == 3) {
    return {one(v[0], where + "[0]"), one(v[1], where + "[1]"), one(v[2], where + "[2]")};
  }
  const T x = one(v, where);
  return {x, x, x};
}

}  // namespace detail

inline nlohmann::json to_json(const ScenarioConfig& c) {
  using nlohmann::json;
  json beta = json::array();
  for (auto b : c.model.beta) beta.push_back({b.real(), b.imag()});
  return {
      {"schema", kScenarioSchema},
      {"name", c.name},
      {"model",
       {{"g", c.model.g},
        {"theta", c.model.theta},
        {"gamma", c.model.gamma},
        {"beta", beta},
        {"include_virtual", c.model.include_virtual}}},
      {"truncation", {{"cavity", c.truncation.cavity}, {"virtual", c.truncation.virtual_modes}}},
      {"grid",
       {{"t_max", c.grid.t_max}, {"dt", c.grid.dt}, {"sample_every", c.grid.sample_every}, {"kernel_points", c.grid.kernel_points}}},
      {"ensemble",
       {{"n_traj", c.ensemble.n_traj},
        {"master_seed", c.ensemble.master_seed},
        {"batch_size", c.ensemble.batch_size},
        {"workers", c.ensemble.workers},
        {"rtol", c.ensemble.rtol},
        {"atol", c.ensemble.atol},
        {"solver", c.ensemble.solver}}},
      {"coupling", {{"kind", c.coupling.kind}, {"value", c.coupling.value}, {"cap", c.coupling.cap}, {"onset", c.coupling.onset}}},
      {"witness", {{"orders", c.witness.orders}, {"symmetry_tolerance", c.witness.symmetry_tolerance}, {"modes", c.witness.modes}}},
      {"conditioning",
       {{"enabled", c.conditioning.enabled},
        {"x1", c.conditioning.x1},
        {"x2", c.conditioning.x2},
        {"wigner", {{"extent", c.conditioning.wigner.extent}, {"points", c.conditioning.wigner.points}}}}},
      {"output", {{"directory", c.output.directory}, {"formats", c.output.formats}}},
  };
}

inline ScenarioConfig scenario_from_json(const nlohmann::json& j) {
  using detail::read_opt;
  detail::reject_unknown(j, "", {"schema", "name", "model", "truncation", "grid", "ensemble", "coupling", "witness", "conditioning", "output"});
  if (!j.contains("schema") || !j["schema"].is_number_integer() || j["schema"].get<int>() != kScenarioSchema)
    throw ValidationError("scenario: 'schema' must be " + std::to_string(kScenarioSchema));
  ScenarioConfig c;
  read_opt(j, "name", c.name, "");
  if (j.contains("model")) {
    const auto& m = j["model"];
    detail::reject_unknown(m, "model", {"g", "theta", "gamma", "beta", "include_virtual"});
    read_opt(m, "g", c.model.g, "model");
    read_opt(m, "theta", c.model.theta, "model");
    read_opt(m, "include_virtual", c.model.include_virtual, "model");
    if (m.contains("gamma"))
      c.model.gamma = detail::read_triple<double>(m["gamma"], "model.gamma", [](const nlohmann::json& v, const std::string& w) {
        if (!v.is_number()) throw ValidationError("scenario: '" + w + "' must be a number");
        return v.get<double>();
      });
    if (m.contains("beta")) {
      const auto& b = m["beta"];
      // [re, im] alone is one amplitude for all modes.
      if (b.is_array() && b.size() == 3)
        c.model.beta = {detail::read_complex(b[0], "model.beta[0]"), detail::read_complex(b[1], "model.beta[1]"),
                        detail::read_complex(b[2], "model.beta[2]")};
      else {
        const Complex x = detail::read_complex(b, "model.beta");
        c.model.beta = {x, x, x};
      }
    }
  }
  if (j.contains("truncation")) {
    const auto& t = j["truncation"];
    detail::reject_unknown(t, "truncation", {"cavity", "virtual"});
    read_opt(t, "cavity", c.truncation.cavity, "truncation");
    read_opt(t, "virtual", c.truncation.virtual_modes, "truncation");
  }
  if (j.contains("grid")) {
    const auto& g = j["grid"];
    detail::reject_unknown(g, "grid", {"t_max", "dt", "sample_every", "kernel_points"});
    read_opt(g, "t_max", c.grid.t_max, "grid");
    read_opt(g, "dt", c.grid.dt, "grid");
    read_opt(g, "sample_every", c.grid.sample_every, "grid");
    read_opt(g, "kernel_points", c.grid.kernel_points, "grid");
  }
  if (j.contains("ensemble")) {
    const auto& e = j["ensemble"];
    detail::reject_unknown(e, "ensemble", {"n_traj", "master_seed", "batch_size", "workers", "rtol", "atol", "solver"});
    read_opt(e, "n_traj", c.ensemble.n_traj, "ensemble");
    read_opt(e, "master_seed", c.ensemble.master_seed, "ensemble");
    read_opt(e, "batch_size", c.ensemble.batch_size, "ensemble");
    read_opt(e, "workers", c.ensemble.workers, "ensemble");
    read_opt(e, "rtol", c.ensemble.rtol, "ensemble");
    read_opt(e, "atol", c.ensemble.atol, "ensemble");
    read_opt(e, "solver", c.ensemble.solver, "ensemble");
  }
  if (j.contains("coupling")) {
    const auto& k = j["coupling"];
    detail::reject_unknown(k, "coupling", {"kind", "value", "cap", "onset"});
    read_opt(k, "kind", c.coupling.kind, "coupling");
    read_opt(k, "value", c.coupling.value, "coupling");
    read_opt(k, "cap", c.coupling.cap, "coupling");
    read_opt(k, "onset", c.coupling.onset, "coupling");
  }
  if (j.contains("witness")) {
    const auto& w = j["witness"];
    detail::reject_unknown(w, "witness", {"orders", "symmetry_tolerance", "modes"});
    read_opt(w, "orders", c.witness.orders, "witness");
    read_opt(w, "symmetry_tolerance", c.witness.symmetry_tolerance, "witness");
    read_opt(w, "modes", c.witness.modes, "witness");
  }
  if (j.contains("conditioning")) {
    const auto& k = j["conditioning"];
    detail::reject_unknown(k, "conditioning", {"enabled", "x1", "x2", "wigner"});
    read_opt(k, "enabled", c.conditioning.enabled, "conditioning");
    read_opt(k, "x1", c.conditioning.x1, "conditioning");
    read_opt(k, "x2", c.conditioning.x2, "conditioning");
    if (k.contains("wigner")) {
      const auto& w = k["wigner"];
      detail::reject_unknown(w, "conditioning.wigner", {"extent", "points"});
      read_opt(w, "extent", c.conditioning.wigner.extent, "conditioning.wigner");
      read_opt(w, "points", c.conditioning.wigner.points, "conditioning.wigner");
    }
  }
  if (j.contains("output")) {
    const auto& o = j["output"];
    detail::reject_unknown(o, "output", {"directory", "formats"});
    read_opt(o, "directory", c.output.directory, "output");
    read_opt(o, "formats", c.output.formats, "output");
  }
  return c;
}

inline ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read scenario " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("scenario " + path + ": " + e.what());
  }
  return scenario_from_json(j);
}

/// Static checks, including the stability guard and the truncation-leakage
/// projection of the initial coherent amplitudes.
inline void validate(const ScenarioConfig& c) {
  auto fail = [](const std::string& m) { throw ValidationError("scenario: " + m); };
  auto finite = [](double x) { return std::isfinite(x); };
  if (c.name.empty() || c.name.find('/') != std::string::npos) fail("name must be non-empty and contain no '/'");
  if (!finite(c.model.g) || c.model.g < 0.0) fail("model.g must be finite and non-negative");
  if (!finite(c.model.theta)) fail("model.theta must be finite");
  for (double gm : c.model.gamma)
    if (!finite(gm) || gm < 0.0) fail("model.gamma must be finite and non-negative");
  for (auto b : c.model.beta)
    if (!finite(b.real()) || !finite(b.imag())) fail("model.beta must be finite");
  if (c.truncation.cavity < 2 || c.truncation.cavity > 32) fail("truncation.cavity must lie in [2, 32]");
  if (c.model.include_virtual && (c.truncation.virtual_modes < 2 || c.truncation.virtual_modes > 16))
    fail("truncation.virtual must lie in [2, 16]");
  if (!finite(c.grid.t_max) || c.grid.t_max <= 0.0) fail("grid.t_max must be positive");
  if (!finite(c.grid.dt) || c.grid.dt <= 0.0) fail("grid.dt must be positive");
  if (std::abs(c.grid.t_max / c.grid.dt - double(c.steps())) > 1e-6 * double(c.steps()) || c.steps() == 0)
    fail("grid.t_max must be a whole number of dt steps");
  if (c.grid.sample_every == 0 || c.steps() % c.grid.sample_every != 0) fail("grid.sample_every must divide the step count");
  if (c.grid.kernel_points < 6) fail("grid.kernel_points must be at least 6");
  if (c.ensemble.solver != "trajectory" && c.ensemble.solver != "master") fail("ensemble.solver must be 'trajectory' or 'master'");
  if (c.ensemble.solver == "trajectory" && c.ensemble.n_traj < 2) fail("ensemble.n_traj must be at least 2");
  if (c.ensemble.batch_size == 0) fail("ensemble.batch_size must be positive");
  if (c.ensemble.workers == 0) fail("ensemble.workers must be positive");
  if (!(c.ensemble.rtol > 0.0 && c.ensemble.rtol < 1e-2) || !(c.ensemble.atol > 0.0)) fail("ensemble tolerances out of range");
  if (c.coupling.kind != "constant" && c.coupling.kind != "most_populated") fail("coupling.kind must be 'constant' or 'most_populated'");
  if (c.model.include_virtual) {
    if (c.coupling.kind == "constant" && !(c.coupling.value > 0.0 && finite(c.coupling.value))) fail("coupling.value must be positive");
    if (!(c.coupling.cap > 0.0) || !(c.coupling.onset >= 0.0)) fail("coupling.cap must be positive and coupling.onset non-negative");
  }
  if (c.witness.orders.empty()) fail("witness.orders must not be empty");
  for (int n : c.witness.orders)
    if (n < 1 || n > 4) fail("witness.orders entries must lie in [1, 4]");
  if (c.witness.modes != "cavity" && c.witness.modes != "virtual") fail("witness.modes must be 'cavity' or 'virtual'");
  if (c.virtual_witness() && !c.model.include_virtual) fail("witness.modes 'virtual' needs model.include_virtual");
  if (!(c.witness.symmetry_tolerance >= 0.0)) fail("witness.symmetry_tolerance must be non-negative");
  if (c.conditioning.enabled) {
    if (!finite(c.conditioning.x1) || !finite(c.conditioning.x2)) fail("conditioning outcomes must be finite");
    if (!(c.conditioning.wigner.extent > 0.0) || c.conditioning.wigner.points < 2) fail("conditioning.wigner grid is invalid");
  }
  for (const auto& f : c.output.formats)
    if (f != "csv" && f != "json" && f != "snapshot") fail("output.formats entries must be 'csv', 'json' or 'snapshot'");

  // Stability guard on the sample grid, in internal units.
  double rate = std::max(c.g_internal(), 1e-300);
  for (std::size_t k = 0; k < 3; ++k) rate = std::max(rate, c.gamma_internal(k));
  if (c.model.include_virtual && c.coupling.kind == "constant") rate = std::max(rate, std::pow(c.coupling_internal(), 2));
  if (!(c.grid.dt < 0.1 / rate)) {
    std::ostringstream m;
    m << "grid.dt = " << c.grid.dt << " violates the stability guard dt < 0.1 / " << rate << "; use dt <= " << 0.05 / rate;
    fail(m.str());
  }

  // Truncation leakage of the initial coherent state.
  for (std::size_t k = 0; k < 3; ++k) {
    const Vector v = coherent_amplitudes(c.truncation.cavity, c.model.beta[k]);
    const double top = std::norm(v[c.truncation.cavity - 1]);
    if (top > 1e-3) {
      std::ostringstream m;
      m << "initial coherent amplitude of mode " << k + 1 << " puts " << top << " on the top Fock level; raise truncation.cavity";
      fail(m.str());
    }
  }
}

/// FNV-1a over the canonical JSON of everything that affects results.
inline std::uint64_t config_hash(const ScenarioConfig& c) {
  nlohmann::json j = to_json(c);
  j["ensemble"].erase("workers");
  j.erase("output");
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace ntpd
