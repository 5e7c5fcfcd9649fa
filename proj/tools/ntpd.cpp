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

// Command-line front end. Exit codes: 0 success, 1 other failure,
// 2 validation failure, 3 numerical guard failure.

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ntpd/ntpd.hpp"

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> traj;
  std::optional<std::size_t> workers;
  std::string out;

  void apply(ntpd::ScenarioConfig& c) const {
    if (seed) c.ensemble.master_seed = *seed;
    if (traj) c.ensemble.n_traj = *traj;
    if (workers) c.ensemble.workers = *workers;
  }
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--seed", o.seed, "Master seed");
  cmd->add_option("--traj", o.traj, "Number of trajectories");
  cmd->add_option("--workers", o.workers, "Worker threads");
  cmd->add_option("--out", o.out, "Output directory (default: $NTPD_OUTPUT_ROOT/<name> or runs/<name>)");
}

ntpd::RunOptions run_options(const Overrides& o) {
  ntpd::RunOptions ro;
  ro.output_dir = o.out;
  ro.progress = [](std::size_t done, std::size_t total) { std::fprintf(stderr, "\r%zu/%zu trajectories", done, total), std::fflush(stderr); };
  return ro;
}

int report_run(const ntpd::RunReport& r) {
  std::fprintf(stderr, "\n");
  std::printf("wrote %s (%zu trajectories, %.1f s)\n", r.output_dir.c_str(), r.n_traj, r.wall_seconds);
  for (const auto& m : r.summary)
    std::printf("  %-14s max %+.6g  duration %.4g  plateau %+.6g +- %.2g%s\n", m.name.c_str(), m.max, m.duration, m.plateau, m.plateau_se,
                m.steady ? "  steady" : "");
  if (r.conditioning) std::printf("  conditioned negativity %.6g\n", r.conditioning->negativity);
  if (!r.conditioning_error.empty()) {
    std::fprintf(stderr, "error: conditioning failed: %s\n", r.conditioning_error.c_str());
    return 3;
  }
  if (!r.trusted) {
    std::fprintf(stderr, "error: truncation leakage (top-level population up to %.3g > 1e-3); raise the truncation\n",
                 *std::max_element(r.max_top_level.begin(), r.max_top_level.end()));
    return 3;
  }
  return 0;
}

std::vector<double> parse_values(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ntpd::ValidationError("--values: cannot parse '" + item + "'");
    }
  }
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cascaded triple-photon downconversion simulator"};
  app.set_version_flag("--version", NTPD_VERSION);
  app.require_subcommand(1);

  Overrides o;
  std::string config, axis, values, suite = "all", run_dir;
  double x1 = 5.0, x2 = 5.0, extent = 5.0;
  int points = 256;

  auto* run = app.add_subcommand("run", "Run a scenario");
  run->add_option("config", config, "Scenario file")->required()->check(CLI::ExistingFile);
  add_common(run, o);

  auto* sw = app.add_subcommand("sweep", "Sweep one parameter of a scenario");
  sw->add_option("config", config, "Scenario file")->required()->check(CLI::ExistingFile);
  sw->add_option("--axis", axis, "beta, gamma or g")->required()->check(CLI::IsMember({"beta", "gamma", "g"}));
  sw->add_option("--values", values, "Comma-separated values")->required();
  add_common(sw, o);

  auto* ver = app.add_subcommand("verify", "Run self-check suites");
  ver->add_option("--suite", suite, "oracle, witness, conditioning or all")->check(CLI::IsMember({"oracle", "witness", "conditioning", "all"}));
  add_common(ver, o);

  auto* modes = app.add_subcommand("modes", "Extract kernels and temporal modes only");
  modes->add_option("config", config, "Scenario file")->required()->check(CLI::ExistingFile);
  add_common(modes, o);

  auto* cond = app.add_subcommand("condition", "Condition the final state of a run on homodyne outcomes");
  cond->add_option("run-dir", run_dir, "Finished run directory")->required()->check(CLI::ExistingDirectory);
  cond->add_option("--x1", x1, "Outcome on the first witness mode");
  cond->add_option("--x2", x2, "Outcome on the second witness mode");
  cond->add_option("--extent", extent, "Wigner grid half-width");
  cond->add_option("--points", points, "Wigner grid points per axis");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      auto c = ntpd::load_scenario(config);
      o.apply(c);
      return report_run(ntpd::run_scenario(c, run_options(o)));
    }
    if (*sw) {
      auto c = ntpd::load_scenario(config);
      o.apply(c);
      const auto s = ntpd::sweep(c, axis, parse_values(values), run_options(o));
      int code = 0;
      for (const auto& r : s.runs) code = std::max(code, report_run(r));
      return code;
    }
    if (*ver) {
      ntpd::VerifyOptions vo;
      if (o.seed) vo.seed = *o.seed;
      if (o.traj) vo.n_traj = *o.traj;
      if (o.workers) vo.workers = *o.workers;
      nlohmann::json out = nlohmann::json::array();
      bool pass = true;
      for (const char* s : {"oracle", "witness", "conditioning"}) {
        if (suite != "all" && suite != s) continue;
        const auto rep = ntpd::verify_suite(s, vo);
        pass = pass && rep.pass();
        out.push_back(rep.json());
      }
      std::cout << out.dump(2) << "\n";
      return pass ? 0 : 1;
    }
    if (*modes) {
      auto c = ntpd::load_scenario(config);
      o.apply(c);
      const std::string dir = o.out.empty() ? ntpd::resolve_output_dir(c) + "_modes" : o.out;
      const auto s = ntpd::run_modes(c, dir);
      for (std::size_t k = 0; k < s.modes.size(); ++k)
        std::printf("mode %zu: occupation %.8g  norm %.8g\n", k + 1, s.modes[k].occupation, s.modes[k].norm());
      std::printf("wrote %s\n", dir.c_str());
      return 0;
    }
    if (*cond) {
      ntpd::WignerSpec spec;
      spec.extent = extent;
      spec.points = points;
      const auto r = ntpd::condition_run(run_dir, x1, x2, spec);
      std::printf("success weight %.6g  negativity %.6g  purity %.6g\n", r.success_weight, r.negativity, r.purity);
      return 0;
    }
  } catch (const ntpd::ValidationError& e) {
    std::fprintf(stderr, "\nvalidation error: %s\n", e.what());
    return 2;
  } catch (const ntpd::LayoutError& e) {
    std::fprintf(stderr, "\nvalidation error: %s\n", e.what());
    return 2;
  } catch (const ntpd::NumericalGuardError& e) {
    std::fprintf(stderr, "\nnumerical guard: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "\nerror: %s\n", e.what());
    return 1;
  }
  return 1;
}
