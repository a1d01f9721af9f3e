#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "stopline/model.hpp"
#include "stopline/model_io.hpp"
#include "stopline/pde.hpp"
#include "stopline/reward.hpp"
#include "stopline/simulator.hpp"
#include "stopline/stopping.hpp"
#include "stopline/verify.hpp"

namespace stopline {

/// Malformed or missing configuration.
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

struct SimulateConfig {
  double horizon = 1;
  double dt = 1e-2;
  std::uint64_t seed = 1;
  std::size_t stride = 1;
  Point start{0.0};
};

struct ValueConfig {
  json rule = json{{"kind", "contact_set"}};
  Point start{0.0};
  bool samples_csv = false;
};

struct VerifyConfig {
  VerifySettings settings;
  std::vector<double> points;
  std::vector<json> dpp;     // theta rules
  std::vector<double> dpp_points;
  std::optional<BranchingSettings> branching;
  Point branching_start{0.0};
};

struct RunConfig {
  json source;  // after overrides
  ModelSpec model;
  SolverSettings solver;
  McSettings mc;
  double t_cut = 0; // 0: default_t_cut(model)
  CutPolicy cut_policy = CutPolicy::abandon;
  SimulateConfig simulate;
  ValueConfig value;
  VerifyConfig verify;
  std::filesystem::path outputs = "out";

  [[nodiscard]] double cut() const { return t_cut > 0 ? t_cut : default_t_cut(model); }
};

namespace config_detail {

inline json parse_scalar(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);
  }
}

inline Point point_of(const json& j) { return j.is_number() ? Point{j.get<double>()} : j.get<Point>(); }

template <class T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j[key].is_null())
    out = j[key].get<T>();
}

inline Boundary boundary_from_string(const std::string& s) {
  if (s == "obstacle")
    return Boundary::obstacle;
  if (s == "far_field")
    return Boundary::far_field;
  throw ConfigError("unknown boundary '" + s + "'");
}

inline LinearSolver solver_from_string(const std::string& s) {
  if (s == "howard")
    return LinearSolver::howard;
  if (s == "psor")
    return LinearSolver::psor;
  throw ConfigError("unknown linear solver '" + s + "'");
}

} // namespace config_detail

/// Applies `key.sub=value`; the value is parsed as JSON when it parses, else kept as a string.
inline void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like key=value: '" + assignment + "'");
  const std::string path = assignment.substr(0, eq);
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty())
      throw ConfigError("empty key in override '" + assignment + "'");
    if (!node->is_object())
      throw ConfigError("override '" + assignment + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[key] = config_detail::parse_scalar(assignment.substr(eq + 1));
      return;
    }
    node = &(*node)[key];
    if (node->is_null())
      *node = json::object();
    start = dot + 1;
  }
}

inline json read_json_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in)
    throw ConfigError("cannot open " + p.string());
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

/// Builds a RunConfig from parsed JSON; `base` resolves relative model files.
inline RunConfig config_from_json(json j, const std::filesystem::path& base = {}) {
  using namespace config_detail;
  RunConfig c;
  try {
    if (!j.is_object())
      throw ConfigError("config must be a JSON object");
    if (j.contains("model_file")) {
      const std::filesystem::path mp = j["model_file"].get<std::string>();
      j["model"] = read_json_file(mp.is_absolute() ? mp : base / mp);
      j.erase("model_file");
    }
    if (!j.contains("model"))
      throw ConfigError("config has no model");
    c.model = model_from_json(j["model"]);

    const json s = j.value("solver", json::object());
    if (s.contains("domain")) {
      const auto d = s["domain"].get<std::vector<double>>();
      if (d.size() != 2)
        throw ConfigError("solver.domain must be [lo, hi]");
      c.solver.x_lo = d[0];
      c.solver.x_hi = d[1];
    }
    get_if(s, "n_cells", c.solver.n_cells);
    get_if(s, "tol_fp", c.solver.tol_fp);
    get_if(s, "tol_lin", c.solver.tol_lin);
    get_if(s, "k_max", c.solver.k_max);
    get_if(s, "omega", c.solver.omega);
    get_if(s, "max_sweeps", c.solver.max_sweeps);
    get_if(s, "max_outer", c.solver.max_outer);
    if (s.contains("method"))
      c.solver.method = solver_from_string(s["method"].get<std::string>());
    if (s.contains("lower"))
      c.solver.lower = boundary_from_string(s["lower"].get<std::string>());
    if (s.contains("upper"))
      c.solver.upper = boundary_from_string(s["upper"].get<std::string>());
    if (!(c.solver.x_lo < c.solver.x_hi) || c.solver.n_cells < 2)
      throw ConfigError("solver domain must be nonempty with at least 2 cells");

    const json m = j.value("mc", json::object());
    if (!m.contains("seed"))
      throw ConfigError("mc.seed is required");
    get_if(m, "reps", c.mc.reps);
    get_if(m, "dt", c.mc.dt);
    get_if(m, "seed", c.mc.seed);
    get_if(m, "k_max", c.mc.k_max);
    get_if(m, "t_cut", c.t_cut);
    if (m.contains("cut_policy"))
      c.cut_policy = cut_policy_from_string(m["cut_policy"].get<std::string>());
    if (m.contains("discount"))
      c.mc.discount = discount_from_string(m["discount"].get<std::string>());
    if (c.mc.reps < 2 || !(c.mc.dt > 0) || c.t_cut < 0)
      throw ConfigError("mc needs reps >= 2, dt > 0 and t_cut >= 0");

    const json sim = j.value("simulate", json::object());
    c.simulate.seed = c.mc.seed;
    c.simulate.dt = c.mc.dt;
    get_if(sim, "horizon", c.simulate.horizon);
    get_if(sim, "dt", c.simulate.dt);
    get_if(sim, "seed", c.simulate.seed);
    get_if(sim, "stride", c.simulate.stride);
    if (sim.contains("start"))
      c.simulate.start = point_of(sim["start"]);

    const json v = j.value("value", json::object());
    if (v.contains("rule"))
      c.value.rule = v["rule"];
    if (v.contains("start"))
      c.value.start = point_of(v["start"]);
    get_if(v, "samples_csv", c.value.samples_csv);

    const json ver = j.value("verify", json::object());
    auto& vs = c.verify.settings;
    vs.mc = c.mc;
    vs.t_cut = c.t_cut;
    vs.cut_policy = c.cut_policy;
    get_if(ver, "points", c.verify.points);
    get_if(ver, "epsilon", vs.epsilon);
    get_if(ver, "z_threshold", vs.z_threshold);
    get_if(ver, "abs_tol", vs.abs_tol);
    get_if(ver, "ks_alpha", vs.ks_alpha);
    get_if(ver, "sweep_times", vs.sweep_times);
    if (ver.contains("dpp"))
      for (const auto& d : ver["dpp"])
        c.verify.dpp.push_back(d);
    get_if(ver, "dpp_points", c.verify.dpp_points);
    if (ver.contains("branching") && !ver["branching"].is_null()) {
      const auto& b = ver["branching"];
      BranchingSettings bs;
      bs.seed = c.mc.seed;
      bs.dt = c.mc.dt;
      bs.ks_alpha = vs.ks_alpha;
      get_if(b, "samples", bs.samples);
      get_if(b, "s", bs.s);
      get_if(b, "seed", bs.seed);
      get_if(b, "first_horizon", bs.first_horizon);
      if (b.contains("start"))
        c.verify.branching_start = point_of(b["start"]);
      c.verify.branching = bs;
    }

    if (j.contains("outputs"))
      c.outputs = j["outputs"].get<std::string>();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  c.source = std::move(j);
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  json j = read_json_file(path);
  for (const auto& o : overrides)
    apply_override(j, o);
  return config_from_json(std::move(j), path.parent_path());
}

} // namespace stopline
