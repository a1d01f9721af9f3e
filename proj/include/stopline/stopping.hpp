#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "stopline/format.hpp"
#include "stopline/label.hpp"
#include "stopline/model.hpp"
#include "stopline/model_io.hpp"
#include "stopline/simulator.hpp"
#include "stopline/value_grid.hpp"

namespace stopline {

enum class CutPolicy { abandon, force_stop };

inline const char* to_string(CutPolicy c) { return c == CutPolicy::abandon ? "abandon" : "force_stop"; }

inline CutPolicy cut_policy_from_string(const std::string& s) {
  if (s == "abandon")
    return CutPolicy::abandon;
  if (s == "force_stop")
    return CutPolicy::force_stop;
  throw std::invalid_argument("unknown cut policy '" + s + "'");
}

/// Cut-off beyond which every stop contributes at most cut_tol * K_g.
inline double default_t_cut(const ModelSpec& s, double cut_tol = 1e-4) {
  return (std::log(s.k_g) + std::log(1.0 / cut_tol)) / s.gamma;
}

namespace rules {
struct TrivialRoot {};
struct FixedTime {
  double t = 0;
};
struct FirstBranch {};
struct ExitBall {
  Point center{0.0};
  double radius = 1;
  double cap_t = kInf;
};
struct ContactSet {
  std::shared_ptr<const ValueGrid> grid;
  double epsilon = 1e-9;
};
struct Never {};
} // namespace rules

struct StoppingRule;
namespace rules {
struct MinOf {
  std::vector<StoppingRule> parts;
};
} // namespace rules

using RuleKind = std::variant<rules::TrivialRoot, rules::FixedTime, rules::FirstBranch, rules::ExitBall,
                              rules::ContactSet, rules::Never, rules::MinOf>;

struct StoppingRule {
  RuleKind kind = rules::Never{};
  double t_cut = kInf;
  CutPolicy cut_policy = CutPolicy::abandon;
};

inline std::string rule_name(const StoppingRule& r);

inline std::string rule_name(const RuleKind& k) {
  return std::visit(overloaded{
                        [](const rules::TrivialRoot&) -> std::string { return "trivial_root"; },
                        [](const rules::FixedTime& f) -> std::string { return "fixed_time(" + fmt_short(f.t) + ")"; },
                        [](const rules::FirstBranch&) -> std::string { return "first_branch"; },
                        [](const rules::ExitBall& e) -> std::string { return "exit_ball(" + fmt_short(e.radius) + ")"; },
                        [](const rules::ContactSet&) -> std::string { return "contact_set"; },
                        [](const rules::Never&) -> std::string { return "never"; },
                        [](const rules::MinOf& m) -> std::string {
                          std::string s = "min(";
                          for (std::size_t i = 0; i < m.parts.size(); ++i)
                            s += (i ? "," : "") + rule_name(m.parts[i]);
                          return s + ")";
                        },
                    },
                    k);
}

inline std::string rule_name(const StoppingRule& r) { return rule_name(r.kind); }

/// Stopping rule firing where v_n <= g_n + epsilon, n the particle's generation.
inline StoppingRule contact_set_rule(std::shared_ptr<const ValueGrid> grid, double epsilon, double t_cut,
                                     CutPolicy policy = CutPolicy::abandon) {
  if (!grid || !grid->solved)
    throw std::invalid_argument("contact_set_rule: grid must be solved");
  if (!(epsilon > 0))
    throw std::invalid_argument("contact_set_rule: epsilon must be > 0");
  return {rules::ContactSet{std::move(grid), epsilon}, t_cut, policy};
}

// ---------------------------------------------------------------------------
// Per-particle firing
// ---------------------------------------------------------------------------

struct Firing {
  double tau;
  Point x;
};

namespace stop_detail {

inline Point sample_point(const ParticleRecord& p, std::size_t k, std::size_t d) {
  auto s = p.position(k, d);
  return {s.begin(), s.end()};
}

/// Position at time t by linear interpolation between stored samples.
inline Point interpolate(const ParticleRecord& p, double t, std::size_t d) {
  auto it = std::lower_bound(p.times.begin(), p.times.end(), t);
  if (it == p.times.end())
    throw std::logic_error("stopping: no sample covers the firing time of " + p.label.to_string());
  const auto k = static_cast<std::size_t>(it - p.times.begin());
  if (*it == t || k == 0)
    return sample_point(p, k, d);
  const double w = (t - p.times[k - 1]) / (p.times[k] - p.times[k - 1]);
  Point out(d);
  for (std::size_t c = 0; c < d; ++c)
    out[c] = (1 - w) * p.positions[(k - 1) * d + c] + w * p.positions[k * d + c];
  return out;
}

inline bool ball_exit(const rules::ExitBall& e, std::span<const double> x) {
  double r2 = 0;
  for (std::size_t c = 0; c < x.size(); ++c) {
    const double dc = x[c] - (e.center.size() == 1 ? e.center[0] : e.center[c]);
    r2 += dc * dc;
  }
  return r2 >= e.radius * e.radius;
}

inline bool in_contact(const rules::ContactSet& c, std::size_t generation, std::span<const double> x) {
  const double p = x[0];
  if (!c.grid->covers(p))
    return true;
  return c.grid->gap(generation, p) <= c.epsilon;
}

/// Scheduled firing time (fixed-time part of a rule), +inf if none.
inline double scheduled(const RuleKind& k, bool is_root, double birth) {
  return std::visit(overloaded{
                        [&](const rules::TrivialRoot&) { return is_root ? birth : kInf; },
                        [&](const rules::FixedTime& f) { return std::max(f.t, birth); },
                        [&](const rules::FirstBranch&) { return is_root ? kInf : birth; },
                        [&](const rules::ExitBall& e) { return std::max(e.cap_t, birth); },
                        [&](const rules::ContactSet&) { return kInf; },
                        [&](const rules::Never&) { return kInf; },
                        [&](const rules::MinOf& m) {
                          double t = kInf;
                          for (const auto& part : m.parts)
                            t = std::min(t, scheduled(part.kind, is_root, birth));
                          return t;
                        },
                    },
                    k);
}

/// Whether a path predicate of the rule holds at a sample.
inline bool triggers(const RuleKind& k, std::size_t generation, std::span<const double> x) {
  return std::visit(overloaded{
                        [&](const rules::ExitBall& e) { return ball_exit(e, x); },
                        [&](const rules::ContactSet& c) { return in_contact(c, generation, x); },
                        [&](const rules::MinOf& m) {
                          return std::any_of(m.parts.begin(), m.parts.end(),
                                             [&](const StoppingRule& r) { return triggers(r.kind, generation, x); });
                        },
                        [](const auto&) { return false; },
                    },
                    k);
}

inline bool has_predicate(const RuleKind& k) {
  return std::visit(overloaded{
                        [](const rules::ExitBall&) { return true; },
                        [](const rules::ContactSet&) { return true; },
                        [](const rules::MinOf& m) {
                          return std::any_of(m.parts.begin(), m.parts.end(),
                                             [](const StoppingRule& r) { return has_predicate(r.kind); });
                        },
                        [](const auto&) { return false; },
                    },
                    k);
}

} // namespace stop_detail

/// First time in [birth, min(S_i, t_cut)] (strictly before S_i) at which the
/// rule fires for this particle, resolved at sample resolution.
inline std::optional<Firing> first_firing(const RuleKind& k, const ParticleRecord& p, bool is_root, double t_cut,
                                          std::size_t d) {
  const double S = p.end_time;
  const double limit = std::min(S, t_cut);
  const double sched = stop_detail::scheduled(k, is_root, p.birth_time);
  std::optional<Firing> best;
  if (stop_detail::has_predicate(k)) {
    const auto gen = p.label.generation();
    for (std::size_t s = 0; s < p.samples(); ++s) {
      const double t = p.times[s];
      if (t > limit || t >= S || t > sched)
        break;
      if (stop_detail::triggers(k, gen, p.position(s, d))) {
        best = Firing{t, stop_detail::sample_point(p, s, d)};
        break;
      }
    }
  }
  if (!best && sched <= limit && sched < S) {
    // Pruned earlier by another rule; evaluate_lines rejects unresolved particles.
    if (p.end_kind == EndKind::truncated && sched > p.times.back())
      return std::nullopt;
    best = Firing{sched, stop_detail::interpolate(p, sched, d)};
  }
  return best;
}

// ---------------------------------------------------------------------------
// Line outcomes
// ---------------------------------------------------------------------------

enum class Role : unsigned char { outside, stopped, descendant, passed, alive_at_cut, beyond_cut };

struct Stop {
  Label label;
  double tau;
  Point x;
  std::size_t generation;
  std::size_t rule; // index of the claiming rule
};

struct LineOutcome {
  std::vector<Stop> stops;
  std::vector<Label> passed_alive; // abandoned at t_cut
  std::vector<Role> roles;         // per record particle
  double lineage_time = 0;         // total length of the tree before resolution
  double t_cut = kInf;
  CutPolicy cut_policy = CutPolicy::abandon;
  const GenealogyRecord* source = nullptr;
};

/// Walks the record once with several rules; the earliest firing claims the
/// particle and ties go to the lower index. `roots` overrides the starting
/// particles (record indices) for subtree evaluation.
inline LineOutcome evaluate_lines(const GenealogyRecord& rec, std::span<const StoppingRule> rs,
                                  const std::string& model_hash = {},
                                  std::optional<std::vector<std::size_t>> roots = std::nullopt) {
  if (rs.empty())
    throw std::invalid_argument("evaluate_lines: need at least one rule");
  const double t_cut = std::min_element(rs.begin(), rs.end(), [](auto& a, auto& b) { return a.t_cut < b.t_cut; })->t_cut;
  if (t_cut > rec.horizon)
    throw std::invalid_argument("evaluate_lines: t_cut exceeds the record horizon");
  for (const auto& r : rs)
    if (auto* c = std::get_if<rules::ContactSet>(&r.kind); c && !model_hash.empty() && c->grid->model_hash != model_hash)
      throw std::invalid_argument("evaluate_lines: value grid was solved for a different model");

  LineOutcome out;
  out.t_cut = t_cut;
  out.cut_policy = rs.front().cut_policy;
  out.source = &rec;
  out.roles.assign(rec.particles.size(), Role::outside);
  const std::size_t d = rec.dimension;

  auto mark = [&](std::size_t idx, Role role, auto&& self) -> void {
    out.roles[idx] = role;
    for (auto c : rec.children[idx])
      self(c, role, self);
  };

  std::vector<std::size_t> stack;
  const auto& start = roots ? *roots : rec.roots;
  for (auto it = start.rbegin(); it != start.rend(); ++it)
    stack.push_back(*it);
  std::vector<char> is_root(rec.particles.size(), 0);
  for (auto r : start)
    is_root.at(r) = 1;

  while (!stack.empty()) {
    const auto idx = stack.back();
    stack.pop_back();
    const auto& p = rec.particles[idx];

    std::optional<Firing> best;
    std::size_t who = 0;
    for (std::size_t r = 0; r < rs.size(); ++r) {
      auto f = first_firing(rs[r].kind, p, is_root[idx], t_cut, d);
      if (f && (!best || f->tau < best->tau)) {
        best = std::move(f);
        who = r;
      }
    }
    if (best) {
      out.stops.push_back({p.label, best->tau, std::move(best->x), p.label.generation(), who});
      out.lineage_time += best->tau - p.birth_time;
      out.roles[idx] = Role::stopped;
      for (auto c : rec.children[idx])
        mark(c, Role::descendant, mark);
      continue;
    }
    if (p.end_time <= t_cut) {
      out.roles[idx] = Role::passed;
      out.lineage_time += p.end_time - p.birth_time;
      for (auto it = rec.children[idx].rbegin(); it != rec.children[idx].rend(); ++it)
        stack.push_back(*it);
      continue;
    }
    if (p.end_kind == EndKind::truncated && p.times.back() < t_cut)
      throw std::logic_error("evaluate_lines: record was pruned before " + p.label.to_string() + " resolved");
    out.lineage_time += t_cut - p.birth_time;
    if (out.cut_policy == CutPolicy::force_stop) {
      out.stops.push_back({p.label, t_cut, stop_detail::interpolate(p, t_cut, d), p.label.generation(), rs.size()});
      out.roles[idx] = Role::stopped;
      for (auto c : rec.children[idx])
        mark(c, Role::descendant, mark);
    } else {
      out.passed_alive.push_back(p.label);
      out.roles[idx] = Role::alive_at_cut;
      for (auto c : rec.children[idx])
        mark(c, Role::beyond_cut, mark);
    }
  }
  return out;
}

inline LineOutcome evaluate_line(const GenealogyRecord& rec, const StoppingRule& rule,
                                 const std::string& model_hash = {}) {
  return evaluate_lines(rec, std::span<const StoppingRule>(&rule, 1), model_hash);
}

inline bool validate_line_property(const std::vector<Label>& stops) { return is_antichain(stops); }

inline bool validate_line_property(const LineOutcome& o) {
  std::vector<Label> ls;
  ls.reserve(o.stops.size());
  for (const auto& s : o.stops)
    ls.push_back(s.label);
  return is_antichain(std::move(ls));
}

/// Prune hook that stops simulating each particle once any of the rules has
/// resolved it, so Monte Carlo runs never simulate pruned subtrees.
inline PruneHook prune_hook(std::span<const StoppingRule> rs) {
  std::vector<StoppingRule> copy(rs.begin(), rs.end());
  double t_cut = kInf;
  for (const auto& r : copy)
    t_cut = std::min(t_cut, r.t_cut);
  PruneHook h;
  h.deadline = [copy, t_cut](const Label&, bool is_root, double birth) {
    double t = t_cut;
    for (const auto& r : copy)
      t = std::min(t, stop_detail::scheduled(r.kind, is_root, birth));
    return t;
  };
  const bool any_predicate =
      std::any_of(copy.begin(), copy.end(), [](const StoppingRule& r) { return stop_detail::has_predicate(r.kind); });
  if (any_predicate)
    h.stop_here = [copy](const Label& l, bool, double, std::span<const double> x) {
      for (const auto& r : copy)
        if (stop_detail::triggers(r.kind, l.generation(), x))
          return true;
      return false;
    };
  return h;
}

// ---------------------------------------------------------------------------
// Serialisation
// ---------------------------------------------------------------------------

inline void write_outcome_csv(std::ostream& os, const LineOutcome& o, std::size_t d) {
  os << "label,tau";
  for (std::size_t c = 0; c < d; ++c)
    os << ",x_" << c;
  os << ",generation\n";
  for (const auto& s : o.stops) {
    os << s.label.to_string() << ',' << fmt(s.tau);
    for (double v : s.x)
      os << ',' << fmt(v);
    os << ',' << s.generation << '\n';
  }
}

/// Rule from JSON. contact_set rules need the grid attached by the caller.
inline StoppingRule rule_from_json(const json& j, double default_cut, std::shared_ptr<const ValueGrid> grid = nullptr) {
  StoppingRule r;
  r.t_cut = j.contains("t_cut") && !j["t_cut"].is_null() ? j["t_cut"].get<double>() : default_cut;
  r.cut_policy = cut_policy_from_string(j.value("cut_policy", std::string("abandon")));
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "trivial_root")
    r.kind = rules::TrivialRoot{};
  else if (kind == "fixed_time")
    r.kind = rules::FixedTime{j.at("t").get<double>()};
  else if (kind == "first_branch")
    r.kind = rules::FirstBranch{};
  else if (kind == "exit_ball") {
    const auto& c = j.at("center");
    r.kind = rules::ExitBall{c.is_number() ? Point{c.get<double>()} : c.get<Point>(), j.at("radius").get<double>(),
                             j.value("cap_t", kInf)};
  } else if (kind == "contact_set") {
    if (!grid)
      throw std::invalid_argument("contact_set rule needs a solved value grid");
    r = contact_set_rule(std::move(grid), j.value("epsilon", 1e-9), r.t_cut, r.cut_policy);
  } else if (kind == "never")
    r.kind = rules::Never{};
  else if (kind == "min") {
    rules::MinOf m;
    for (const auto& part : j.at("of"))
      m.parts.push_back(rule_from_json(part, r.t_cut, grid));
    r.kind = std::move(m);
  } else
    throw std::invalid_argument("unknown stopping rule kind '" + kind + "'");
  return r;
}

inline json to_json(const StoppingRule& r) {
  json j = std::visit(overloaded{
                          [](const rules::TrivialRoot&) { return json{{"kind", "trivial_root"}}; },
                          [](const rules::FixedTime& f) { return json{{"kind", "fixed_time"}, {"t", f.t}}; },
                          [](const rules::FirstBranch&) { return json{{"kind", "first_branch"}}; },
                          [](const rules::ExitBall& e) {
                            json o{{"kind", "exit_ball"}, {"center", e.center}, {"radius", e.radius}};
                            if (std::isfinite(e.cap_t))
                              o["cap_t"] = e.cap_t;
                            return o;
                          },
                          [](const rules::ContactSet& c) {
                            return json{{"kind", "contact_set"}, {"epsilon", c.epsilon}, {"grid", c.grid->model_hash}};
                          },
                          [](const rules::Never&) { return json{{"kind", "never"}}; },
                          [](const rules::MinOf& m) {
                            json parts = json::array();
                            for (const auto& p : m.parts)
                              parts.push_back(to_json(p));
                            return json{{"kind", "min"}, {"of", parts}};
                          },
                      },
                      r.kind);
  j["t_cut"] = r.t_cut;
  j["cut_policy"] = to_string(r.cut_policy);
  return j;
}

} // namespace stopline
