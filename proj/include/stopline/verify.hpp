#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "stopline/model.hpp"
#include "stopline/model_io.hpp"
#include "stopline/reward.hpp"
#include "stopline/simulator.hpp"
#include "stopline/stats.hpp"
#include "stopline/stopping.hpp"
#include "stopline/value_grid.hpp"

namespace stopline {

struct VerifySettings {
  McSettings mc;
  double t_cut = 0;         // 0: default_t_cut(spec)
  CutPolicy cut_policy = CutPolicy::abandon;
  double epsilon = 1e-9;    // contact threshold
  double z_threshold = 3;
  double abs_tol = 1e-6;    // interpolation and solver error allowance
  double ks_alpha = 0.01;
  std::vector<double> sweep_times{0.0, 0.25, 1.0, 4.0};
};

struct Comparison {
  double v_pde = 0;
  McEstimate estimate;
  double gap = 0; // v_pde - mean
  double z = 0;
  bool pass = false;
};

struct SweepEntry {
  std::string rule;
  McEstimate estimate;
  double margin = 0; // v_pde - mean
  bool pass = false;
};

struct PointReport {
  double x = 0;
  Comparison optimal;
  std::vector<SweepEntry> suboptimal;
};

struct DppCheck {
  std::string theta;
  double x = 0;
  Comparison comparison;
};

struct BranchingTest {
  KsResult ks;
  std::size_t samples_a = 0;
  std::size_t samples_b = 0;
  std::size_t forests = 0;
  bool insufficient = false;
  bool identical = false; // samples equal elementwise (positive control)
  bool pass = false;
  bool control = false;
  double s = 0;
  std::uint64_t seed = 0;
  std::vector<double> a, b;
};

struct VerificationReport {
  std::string model_hash;
  std::vector<PointReport> points;
  std::vector<DppCheck> dpp;
  std::optional<BranchingTest> branching;
  VerifySettings settings;

  [[nodiscard]] bool pass() const {
    for (const auto& p : points) {
      if (!p.optimal.pass)
        return false;
      for (const auto& s : p.suboptimal)
        if (!s.pass)
          return false;
    }
    for (const auto& d : dpp)
      if (!d.comparison.pass)
        return false;
    return !branching || branching->pass || branching->insufficient;
  }
};

namespace verify_detail {

inline Comparison compare(double v, McEstimate e, const VerifySettings& set) {
  Comparison c;
  c.v_pde = v;
  c.gap = v - e.mean;
  if (e.std_error > 0)
    c.z = c.gap / e.std_error;
  else
    c.z = std::abs(c.gap) <= set.abs_tol ? 0.0 : std::copysign(kInf, c.gap);
  c.pass = std::abs(c.gap) <= set.z_threshold * e.std_error + set.abs_tol;
  c.estimate = std::move(e);
  return c;
}

inline void check_grid(const ModelSpec& spec, const ValueGrid& grid) {
  if (!grid.solved || grid.model_hash != model_fingerprint(spec))
    throw std::invalid_argument("verify: value grid was solved for a different model");
}

inline double t_cut(const ModelSpec& spec, const VerifySettings& set) {
  return set.t_cut > 0 ? set.t_cut : default_t_cut(spec);
}

} // namespace verify_detail

/// Contact-set line against the grid value, plus the suboptimality sweep.
inline VerificationReport cross_validate(const ModelSpec& spec, std::shared_ptr<const ValueGrid> grid,
                                         const std::vector<double>& points, const VerifySettings& set) {
  verify_detail::check_grid(spec, *grid);
  VerificationReport rep;
  rep.model_hash = grid->model_hash;
  rep.settings = set;
  const double cut = verify_detail::t_cut(spec, set);
  const auto tau_star = contact_set_rule(grid, set.epsilon, cut, set.cut_policy);

  std::vector<StoppingRule> sweep;
  for (double t : set.sweep_times)
    if (t <= cut)
      sweep.push_back({rules::FixedTime{t}, cut, set.cut_policy});
  sweep.push_back({rules::Never{}, cut, set.cut_policy});
  sweep.push_back({rules::TrivialRoot{}, cut, set.cut_policy});
  sweep.push_back({rules::FirstBranch{}, cut, set.cut_policy});

  for (double x : points) {
    if (!(x >= grid->x_lo && x <= grid->x_hi))
      throw std::invalid_argument("cross_validate: point outside the grid domain");
    PointReport pr;
    pr.x = x;
    const std::pair<Label, Point> start{Label{}, Point{x}};
    const double v = grid->value(0, x);
    pr.optimal = verify_detail::compare(v, mc_value(spec, tau_star, start, set.mc), set);
    for (const auto& rule : sweep) {
      SweepEntry e;
      e.rule = rule_name(rule);
      e.estimate = mc_value(spec, rule, start, set.mc);
      e.margin = v - e.estimate.mean;
      e.pass = e.margin >= -(set.z_threshold * e.estimate.std_error + set.abs_tol);
      pr.suboptimal.push_back(std::move(e));
    }
    rep.points.push_back(std::move(pr));
  }
  return rep;
}

/// Dynamic programming identity at one point: theta against the contact line.
inline DppCheck dpp_consistency(const ModelSpec& spec, std::shared_ptr<const ValueGrid> grid, RuleKind theta,
                                double x, const VerifySettings& set) {
  verify_detail::check_grid(spec, *grid);
  const double cut = verify_detail::t_cut(spec, set);
  const StoppingRule th{std::move(theta), cut, set.cut_policy};
  const auto tau = contact_set_rule(grid, set.epsilon, cut, set.cut_policy);
  DppCheck d;
  d.theta = rule_name(th);
  d.x = x;
  d.comparison =
      verify_detail::compare(grid->value(0, x), dpp_rhs(spec, th, tau, *grid, {Label{}, Point{x}}, set.mc), set);
  return d;
}

struct BranchingSettings {
  std::size_t samples = 10000;
  double s = 0.5;             // functional: fixed_time(birth + s) on the subtree
  double dt = 1e-2;
  std::uint64_t seed = 1;
  double first_horizon = 200; // give up on a forest whose root has not branched by then
  bool control = false;       // reuse the A streams, birth times and positions for B
  double ks_alpha = 0.01;
};

/// Branching property: the subtree of the first child at the first branch,
/// re-rooted at its birth, against fresh forests from resampled positions.
inline BranchingTest branching_property_test(const ModelSpec& spec, const Point& x0, const BranchingSettings& set) {
  if (supremum(spec.branch_rate) <= 0)
    throw std::invalid_argument("branching_property_test: model never branches");
  BranchingTest out;
  out.control = set.control;
  out.s = set.s;
  out.seed = set.seed;

  PruneHook root_only;
  root_only.deadline = [](const Label&, bool is_root, double birth) { return is_root ? kInf : birth; };
  const Label child{0};
  auto functional = [&](const Point& x, double birth, std::uint64_t seed) {
    SimulationSettings ss;
    ss.start_time = birth;
    ss.horizon = birth + set.s;
    ss.dt = set.dt;
    ss.seed = seed;
    const StoppingRule rule{rules::FixedTime{birth + set.s}, birth + set.s, CutPolicy::abandon};
    const StoppingRule rs[1] = {rule};
    const auto hook = prune_hook(rs);
    const auto rec = simulate_forest(spec, {{child, x}}, ss, &hook);
    const auto o = evaluate_lines(rec, rs);
    return reward_of_outcome(spec, o, Discount::per_lineage);
  };

  std::vector<double> births;
  std::vector<Point> xs;
  std::vector<std::uint64_t> seeds;
  const std::size_t max_forests = 100 * set.samples;
  for (std::size_t r = 0; out.samples_a < set.samples && r < max_forests; ++r) {
    ++out.forests;
    SimulationSettings ss;
    ss.horizon = set.first_horizon;
    ss.dt = set.dt;
    ss.seed = replication_seed(set.seed, r);
    const auto rec = simulate_forest(spec, Label{}, x0, ss, &root_only);
    const auto& root = rec.particles.front();
    if (root.end_kind != EndKind::branched || root.offspring == 0)
      continue;
    const auto xb = root.last_position(spec.dimension);
    const Point x(xb.begin(), xb.end());
    out.a.push_back(functional(x, root.end_time, ss.seed));
    births.push_back(root.end_time);
    xs.push_back(x);
    seeds.push_back(ss.seed);
    ++out.samples_a;
  }

  std::mt19937_64 pick(mix64(set.seed ^ 0x5bd1e995ULL));
  std::uniform_int_distribution<std::size_t> which(0, xs.empty() ? 0 : xs.size() - 1);
  for (std::size_t r = 0; r < out.samples_a; ++r) {
    if (set.control)
      out.b.push_back(functional(xs[r], births[r], seeds[r]));
    else
      out.b.push_back(functional(xs[which(pick)], 0.0, replication_seed(mix64(set.seed) + 1, r)));
  }
  out.samples_b = out.b.size();
  out.insufficient = out.samples_a < 100;
  if (!out.a.empty()) {
    out.ks = ks_two_sample(out.a, out.b);
    out.identical = out.a == out.b;
  }
  out.pass = !out.insufficient && out.ks.p_value >= set.ks_alpha;
  return out;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline json to_json(const Comparison& c) {
  return json{{"v_pde", c.v_pde}, {"j_mc", to_json(c.estimate)}, {"gap", c.gap}, {"z_score", c.z}, {"pass", c.pass}};
}

inline json to_json(const BranchingTest& b) {
  return json{{"ks_stat", b.ks.statistic},
              {"p_value", b.ks.p_value},
              {"samples_a", b.samples_a},
              {"samples_b", b.samples_b},
              {"forests", b.forests},
              {"insufficient", b.insufficient},
              {"identical", b.identical},
              {"control", b.control},
              {"s", b.s},
              {"seed", b.seed},
              {"pass", b.pass}};
}

inline json to_json(const VerificationReport& r) {
  json points = json::array();
  for (const auto& p : r.points) {
    json sweep = json::array();
    for (const auto& s : p.suboptimal)
      sweep.push_back({{"rule", s.rule}, {"estimate", to_json(s.estimate)}, {"margin", s.margin}, {"pass", s.pass}});
    json pj = to_json(p.optimal);
    pj["x"] = p.x;
    pj["suboptimal"] = sweep;
    points.push_back(pj);
  }
  json dpp = json::array();
  for (const auto& d : r.dpp) {
    json dj = to_json(d.comparison);
    dj["theta"] = d.theta;
    dj["x"] = d.x;
    dpp.push_back(dj);
  }
  json out{{"model_hash", r.model_hash},
           {"thresholds", {{"z", r.settings.z_threshold}, {"abs_tol", r.settings.abs_tol}, {"ks_alpha", r.settings.ks_alpha}}},
           {"epsilon", r.settings.epsilon},
           {"points", points},
           {"dpp", dpp},
           {"pass", r.pass()}};
  if (r.branching)
    out["branching_test"] = to_json(*r.branching);
  return out;
}

} // namespace stopline
