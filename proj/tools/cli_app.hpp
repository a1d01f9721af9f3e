#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "stopline/config.hpp"
#include "stopline/format.hpp"
#include "stopline/model.hpp"
#include "stopline/model_io.hpp"
#include "stopline/pde.hpp"
#include "stopline/reward.hpp"
#include "stopline/simulator.hpp"
#include "stopline/stopping.hpp"
#include "stopline/verify.hpp"

namespace stopline::cli {

enum Exit : int { ok = 0, failed = 1, usage = 2, no_convergence = 3 };

struct Options {
  std::string command;
  std::string config;
  std::vector<std::string> overrides;
  unsigned threads = 0;
  std::string out;
  std::string rule;             // value
  std::vector<double> start;    // value, simulate
  bool samples = false;         // value
  std::vector<double> points;   // verify
};

/// Collects result files under one directory; names only, never paths.
class OutputDir {
public:
  explicit OutputDir(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

  void write(const std::string& name, const std::string& content) {
    if (name.find('/') != std::string::npos || name.find('\\') != std::string::npos || name == ".." || name.empty())
      throw std::logic_error("output name must be a plain file name: " + name);
    std::ofstream os(dir_ / name, std::ios::binary);
    os << content;
    if (!os)
      throw std::runtime_error("cannot write " + (dir_ / name).string());
    files_.push_back(name);
  }
  void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }

  [[nodiscard]] const std::filesystem::path& dir() const { return dir_; }
  [[nodiscard]] const std::vector<std::string>& files() const { return files_; }

private:
  std::filesystem::path dir_;
  std::vector<std::string> files_;
};

namespace detail {

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string host_name() {
  char buf[256] = {};
  return gethostname(buf, sizeof buf - 1) == 0 ? std::string(buf) : std::string("unknown");
}

template <class F>
std::string to_text(F&& write) {
  std::ostringstream os;
  write(os);
  return os.str();
}

inline bool mentions_contact(const json& rule) { return rule.dump().find("\"contact_set\"") != std::string::npos; }

inline std::shared_ptr<const ValueGrid> solve_and_store(const RunConfig& c, OutputDir& out) {
  auto grid = std::make_shared<const ValueGrid>(solve(c.model, c.solver));
  out.write("grid.csv", to_text([&](std::ostream& os) { write_grid_csv(os, *grid); }));
  json log = solver_log_json(*grid);
  log["settings"] = to_json(c.solver);
  out.write_json("solver_log.json", log);
  return grid;
}

} // namespace detail

inline int cmd_check(const RunConfig& c, OutputDir& out, std::ostream& os) {
  const auto grid = sample_grid(c.model.dimension, c.solver.x_lo, c.solver.x_hi, 201);
  const auto mr = moment_report(c.model, 0.0, grid);
  const auto as = assumption_summary(c.model, grid);
  json j{{"model_hash", model_fingerprint(c.model)},
         {"moment_report", to_json(mr)},
         {"assumptions", to_json(as)},
         {"default_t_cut", default_t_cut(c.model)},
         {"gamma", c.model.gamma},
         {"gamma_condition", mr.unique_below_bound}};
  out.write_json("check.json", j);
  os << "M = " << fmt_short(mr.M) << ", M_bar = " << fmt_short(mr.M_bar) << " (ell = " << mr.M_bar_argmax << ")\n";
  os << "value bound = " << fmt_short(mr.value_bound) << ", gamma threshold = " << fmt_short(mr.gamma_threshold)
     << ", gamma = " << fmt_short(c.model.gamma) << '\n';
  if (!mr.unique_below_bound)
    os << "warning: gamma does not exceed the uniqueness threshold\n";
  for (const auto& w : as.warnings)
    os << "warning: " << w << '\n';
  for (const auto& v : as.hard_violations)
    os << "violation: " << v << '\n';
  return as.ok() ? Exit::ok : Exit::failed;
}

inline int cmd_solve(const RunConfig& c, OutputDir& out, std::ostream& os) {
  const auto grid = detail::solve_and_store(c, out);
  for (const auto& l : grid->log)
    os << "level " << l.level << ": " << l.outer.size() << " outer iterations, fixed-point residual "
       << fmt_short(l.fixed_point_residual) << '\n';
  return Exit::ok;
}

inline int cmd_simulate(const RunConfig& c, OutputDir& out, std::ostream& os) {
  SimulationSettings set;
  set.horizon = c.simulate.horizon;
  set.dt = c.simulate.dt;
  set.seed = c.simulate.seed;
  set.stride = c.simulate.stride;
  set.k_max = c.mc.k_max;
  const auto rec = simulate_forest(c.model, Label{}, c.simulate.start, set);
  out.write("forest.csv", detail::to_text([&](std::ostream& s) { write_forest_csv(s, rec); }));
  out.write("paths.csv", detail::to_text([&](std::ostream& s) { write_paths_csv(s, rec); }));
  out.write_json("simulate.json", json{{"model_hash", model_fingerprint(c.model)},
                                      {"seed", set.seed},
                                      {"horizon", set.horizon},
                                      {"dt", set.dt},
                                      {"particles", rec.particles.size()},
                                      {"alive_at_horizon", population_count(rec, set.horizon)},
                                      {"proposals", rec.proposals},
                                      {"rejections", rec.rejections}});
  os << rec.particles.size() << " particles, " << population_count(rec, set.horizon) << " alive at t = "
     << fmt_short(set.horizon) << '\n';
  return Exit::ok;
}

inline int cmd_value(const RunConfig& c, OutputDir& out, std::ostream& os) {
  std::shared_ptr<const ValueGrid> grid;
  if (detail::mentions_contact(c.value.rule))
    grid = detail::solve_and_store(c, out);
  json rj = c.value.rule;
  if (!rj.contains("cut_policy"))
    rj["cut_policy"] = to_string(c.cut_policy);
  const auto rule = rule_from_json(rj, c.cut(), grid);
  const auto e = mc_value(c.model, rule, {Label{}, c.value.start}, c.mc);
  json j = to_json(e);
  j["rule"] = to_json(rule);
  j["start"] = c.value.start;
  j["model_hash"] = model_fingerprint(c.model);
  j["dt"] = c.mc.dt;
  out.write_json("value.json", j);
  if (c.value.samples_csv)
    out.write("samples.csv", detail::to_text([&](std::ostream& s) { write_samples_csv(s, e); }));
  os << rule_name(rule) << ": " << fmt_short(e.mean) << " +- " << fmt_short(e.std_error) << " (" << e.reps
     << " reps)\n";
  return Exit::ok;
}

inline int cmd_verify(const RunConfig& c, OutputDir& out, std::ostream& os) {
  const auto grid = detail::solve_and_store(c, out);
  const auto& vc = c.verify;
  std::vector<double> points = vc.points;
  if (points.empty())
    points.push_back(0.5 * (c.solver.x_lo + c.solver.x_hi));
  auto rep = cross_validate(c.model, grid, points, vc.settings);
  const auto& dpp_points = vc.dpp_points.empty() ? points : vc.dpp_points;
  for (const auto& theta : vc.dpp)
    for (double x : dpp_points)
      rep.dpp.push_back(dpp_consistency(c.model, grid, rule_from_json(theta, c.cut()).kind, x, vc.settings));
  if (vc.branching && supremum(c.model.branch_rate) > 0)
    rep.branching = branching_property_test(c.model, vc.branching_start, *vc.branching);
  out.write_json("verify.json", to_json(rep));
  for (const auto& p : rep.points)
    os << "x = " << fmt_short(p.x) << ": v = " << fmt_short(p.optimal.v_pde) << ", J = "
       << fmt_short(p.optimal.estimate.mean) << " +- " << fmt_short(p.optimal.estimate.std_error)
       << ", z = " << fmt_short(p.optimal.z) << (p.optimal.pass ? "" : "  FAIL") << '\n';
  for (const auto& d : rep.dpp)
    os << "dpp " << d.theta << " at " << fmt_short(d.x) << ": z = " << fmt_short(d.comparison.z)
       << (d.comparison.pass ? "" : "  FAIL") << '\n';
  if (rep.branching)
    os << "branching: KS p = " << fmt_short(rep.branching->ks.p_value)
       << (rep.branching->insufficient ? " (too few branches)" : "") << '\n';
  os << (rep.pass() ? "verification passed\n" : "verification FAILED\n");
  return rep.pass() ? Exit::ok : Exit::failed;
}

inline int dispatch(const Options& o, std::ostream& os, std::ostream& es) {
  RunConfig c;
  try {
    c = load_config(o.config, o.overrides);
    if (!o.rule.empty())
      c.value.rule = json::parse(o.rule);
    if (!o.start.empty())
      c.value.start = c.simulate.start = o.start;
    if (!o.points.empty())
      c.verify.points = o.points;
    if (o.samples)
      c.value.samples_csv = true;
  } catch (const std::exception& e) {
    es << "error: " << e.what() << '\n';
    return Exit::usage;
  }
  const unsigned threads = resolve_threads(o.threads);
  c.mc.threads = threads;
  c.verify.settings.mc.threads = threads;

  const auto started = detail::utc_now();
  const auto t0 = std::chrono::steady_clock::now();
  OutputDir out(o.out.empty() ? c.outputs : std::filesystem::path(o.out));
  int code = Exit::ok;
  std::string error;
  try {
    if (o.command == "check")
      code = cmd_check(c, out, os);
    else if (o.command == "solve")
      code = cmd_solve(c, out, os);
    else if (o.command == "simulate")
      code = cmd_simulate(c, out, os);
    else if (o.command == "value")
      code = cmd_value(c, out, os);
    else
      code = cmd_verify(c, out, os);
  } catch (const ConvergenceError& e) {
    error = e.what();
    code = Exit::no_convergence;
  } catch (const ConfigError& e) {
    error = e.what();
    code = Exit::usage;
  } catch (const std::exception& e) {
    error = e.what();
    code = Exit::failed;
  }
  if (!error.empty())
    es << "error: " << error << '\n';
  json meta{{"command", o.command},
            {"config", o.config},
            {"overrides", o.overrides},
            {"started_utc", started},
            {"finished_utc", detail::utc_now()},
            {"elapsed_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()},
            {"host", detail::host_name()},
            {"threads", threads},
            {"files", out.files()},
            {"exit_code", code}};
  if (!error.empty())
    meta["error"] = error;
  out.write_json("meta.json", meta);
  return code;
}

/// Entry point shared by the executable and the tests.
inline int run(int argc, const char* const* argv, std::ostream& os, std::ostream& es) {
  CLI::App app{"Branching diffusion optimal stopping: simulate, solve, cross-validate."};
  app.require_subcommand(1, 1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", o.config, "run configuration (JSON)")->required();
    sub->add_option("--set", o.overrides, "override a config field, key.sub=value")->take_all();
    sub->add_option("--threads", o.threads, "worker threads (default: STOPLINE_THREADS, then all cores)");
    sub->add_option("-o,--out", o.out, "output directory (default: config 'outputs')");
    return sub;
  };
  common(app.add_subcommand("check", "moment report and assumption checks"));
  common(app.add_subcommand("solve", "solve the obstacle problem on the grid"));
  auto* sim = common(app.add_subcommand("simulate", "simulate one forest and dump it"));
  sim->add_option("--start", o.start, "initial position");
  auto* val = common(app.add_subcommand("value", "Monte Carlo value of a stopping rule"));
  val->add_option("--rule", o.rule, "rule as JSON, e.g. {\"kind\":\"fixed_time\",\"t\":1}");
  val->add_option("--start", o.start, "initial position");
  val->add_flag("--samples", o.samples, "also write per-replication rewards");
  auto* ver = common(app.add_subcommand("verify", "cross-validate grid and Monte Carlo"));
  ver->add_option("--point", o.points, "start point (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    os << app.help();
    return Exit::ok;
  } catch (const CLI::CallForAllHelp&) {
    os << app.help("", CLI::AppFormatMode::All);
    return Exit::ok;
  } catch (const CLI::ParseError& e) {
    es << "usage error: " << e.what() << '\n' << app.help();
    return Exit::usage;
  }
  o.command = app.get_subcommands().front()->get_name();
  return dispatch(o, os, es);
}

} // namespace stopline::cli
