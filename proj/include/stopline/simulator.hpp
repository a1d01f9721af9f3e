#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "stopline/format.hpp"
#include "stopline/label.hpp"
#include "stopline/model.hpp"
#include "stopline/rng.hpp"

namespace stopline {

enum class EndKind { branched, alive_at_horizon, truncated };

inline const char* to_string(EndKind k) {
  switch (k) {
  case EndKind::branched:
    return "branched";
  case EndKind::alive_at_horizon:
    return "alive_at_horizon";
  default:
    return "truncated";
  }
}

struct ParticleRecord {
  Label label;
  std::optional<Label> parent;
  double birth_time = 0;
  double end_time = kInf; // S_i; +inf when alive at the horizon or truncated
  EndKind end_kind = EndKind::alive_at_horizon;
  unsigned offspring = 0;
  std::vector<double> times;
  std::vector<double> positions; // times.size() * d, row-major

  [[nodiscard]] std::size_t samples() const noexcept { return times.size(); }
  [[nodiscard]] std::span<const double> position(std::size_t k, std::size_t d) const {
    return {positions.data() + k * d, d};
  }
  [[nodiscard]] std::span<const double> first_position(std::size_t d) const { return position(0, d); }
  [[nodiscard]] std::span<const double> last_position(std::size_t d) const { return position(samples() - 1, d); }
};

struct SimulationSettings {
  double horizon = 1.0;
  double dt = 1e-2;
  std::uint64_t seed = 0;
  unsigned k_max = 64;
  std::size_t stride = 1;  // keep every stride-th Euler sample
  double start_time = 0.0; // birth time of the initial particles
};

struct GenealogyRecord {
  std::size_t dimension = 1;
  std::vector<ParticleRecord> particles; // depth-first preorder, roots in input order
  std::vector<std::vector<std::size_t>> children;
  std::vector<std::size_t> roots;
  std::unordered_map<Label, std::size_t, LabelHash> index;
  std::vector<std::pair<Label, Point>> initial;
  double horizon = 0;
  double dt = 0;
  double start_time = 0;
  std::uint64_t seed = 0;
  std::uint64_t proposals = 0;
  std::uint64_t rejections = 0;

  [[nodiscard]] const ParticleRecord* find(const Label& l) const {
    auto it = index.find(l);
    return it == index.end() ? nullptr : &particles[it->second];
  }
  [[nodiscard]] const ParticleRecord& at(const Label& l) const {
    if (auto* p = find(l))
      return *p;
    throw std::out_of_range("GenealogyRecord: no particle " + l.to_string());
  }
};

/// Lets a caller stop simulating a particle once its fate no longer matters
/// (a stopping rule has fired). The particle is then recorded as truncated,
/// without children. Every sample kept before that point is identical to the
/// unpruned simulation because each particle owns its random stream.
struct PruneHook {
  /// Earliest time the particle must be followed to; the first kept sample at
  /// or after it ends the particle.
  std::function<double(const Label&, bool is_root, double birth)> deadline;
  /// Checked on every kept sample strictly before the next event.
  std::function<bool(const Label&, bool is_root, double t, std::span<const double> x)> stop_here;
};

namespace sim_detail {

struct Pending {
  Label label;
  std::optional<Label> parent;
  double birth;
  Point x;
};

inline void euler_step(const ModelSpec& s, Engine& eng, std::normal_distribution<double>& normal, Point& x, double h,
                       std::vector<double>& b, std::vector<double>& sig) {
  s.drift_at(x, b);
  s.diffusion_at(x, sig);
  const double sq = std::sqrt(h);
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double z = normal(eng);
    x[k] += b[k] * h + sig[k] * sq * z;
  }
}

} // namespace sim_detail

/// Simulates the forest started from `initial` (an antichain of labels with
/// positions). Each particle draws from its own stream keyed on (seed, label);
/// Euler steps are anchored at the particle's birth, events are exact.
inline GenealogyRecord simulate_forest(const ModelSpec& spec, const std::vector<std::pair<Label, Point>>& initial,
                                       const SimulationSettings& set, const PruneHook* hook = nullptr) {
  if (!(set.horizon > set.start_time))
    throw std::invalid_argument("simulate_forest: horizon must exceed the start time");
  if (!(set.dt > 0) || !(set.dt < set.horizon - set.start_time))
    throw std::invalid_argument("simulate_forest: need 0 < dt < horizon");
  if (set.stride < 1 || set.k_max < 1)
    throw std::invalid_argument("simulate_forest: stride and k_max must be >= 1");
  {
    std::vector<Label> ls;
    for (const auto& [l, x] : initial) {
      if (x.size() != spec.dimension)
        throw std::invalid_argument("simulate_forest: initial position has the wrong dimension");
      ls.push_back(l);
    }
    if (!is_antichain(ls))
      throw std::invalid_argument("simulate_forest: initial labels must form an antichain");
  }

  GenealogyRecord rec;
  rec.dimension = spec.dimension;
  rec.initial = initial;
  rec.horizon = set.horizon;
  rec.dt = set.dt;
  rec.start_time = set.start_time;
  rec.seed = set.seed;

  const std::size_t d = spec.dimension;
  std::vector<double> b(d), sig(d);
  std::exponential_distribution<double> clock(spec.alpha_bar);
  std::normal_distribution<double> normal;

  std::vector<sim_detail::Pending> stack;
  std::vector<std::size_t> parent_slot; // parallel to stack
  for (auto it = initial.rbegin(); it != initial.rend(); ++it) {
    stack.push_back({it->first, std::nullopt, set.start_time, it->second});
    parent_slot.push_back(SIZE_MAX);
  }

  while (!stack.empty()) {
    auto cur = std::move(stack.back());
    const auto pslot = parent_slot.back();
    stack.pop_back();
    parent_slot.pop_back();

    Engine eng = particle_engine(set.seed, cur.label);
    clock.reset();
    normal.reset();

    ParticleRecord p;
    p.label = cur.label;
    p.parent = cur.parent;
    p.birth_time = cur.birth;
    Point x = cur.x;
    auto keep = [&](double t) {
      p.times.push_back(t);
      p.positions.insert(p.positions.end(), x.begin(), x.end());
    };
    const bool is_root = !cur.parent.has_value();
    const double deadline = (hook && hook->deadline) ? hook->deadline(cur.label, is_root, cur.birth) : kInf;
    auto prune_now = [&](double at) {
      if (!hook)
        return false;
      return at >= deadline || (hook->stop_here && hook->stop_here(cur.label, is_root, at, x));
    };
    keep(cur.birth);
    bool truncated = prune_now(cur.birth);

    double t = cur.birth;
    std::size_t step = 0;     // index of the last Euler grid point reached
    bool pending_keep = false; // a decimated grid sample awaits an event check
    double pending_t = 0;
    Point pending_x;
    while (!truncated) {
      const double event = t + clock(eng);
      const double stop_at = std::min(event, set.horizon);
      while (t < stop_at && !truncated) {
        const double grid = cur.birth + double(step + 1) * set.dt;
        const double to = std::min(grid, stop_at);
        sim_detail::euler_step(spec, eng, normal, x, to - t, b, sig);
        t = to;
        if (to == grid) {
          ++step;
          if (step % set.stride == 0 || to == stop_at) {
            keep(t);
            pending_keep = false;
            truncated = t < event && prune_now(t);
          } else {
            pending_keep = true;
            pending_t = t;
            pending_x = x;
          }
        }
      }
      if (truncated)
        break;
      if (event >= set.horizon) {
        if (pending_keep && pending_t < t) {
          p.times.push_back(pending_t);
          p.positions.insert(p.positions.end(), pending_x.begin(), pending_x.end());
        }
        if (p.times.back() != t)
          keep(t);
        p.end_time = kInf;
        p.end_kind = EndKind::alive_at_horizon;
        break;
      }
      ++rec.proposals;
      const double u = spec.alpha_bar * std::generate_canonical<double, 53>(eng);
      const double a = spec.alpha(x);
      if (u >= a) {
        ++rec.rejections;
        continue;
      }
      if (pending_keep && pending_t < t) {
        // Keep the last grid sample before the event.
        p.times.push_back(pending_t);
        p.positions.insert(p.positions.end(), pending_x.begin(), pending_x.end());
      }
      if (p.times.back() != t)
        keep(t);
      if (t > deadline) {
        truncated = true;
        break;
      }
      p.end_time = t;
      p.end_kind = EndKind::branched;
      p.offspring = draw_offspring(spec.offspring, x, u / a, set.k_max);
      break;
    }
    if (truncated) {
      p.end_time = kInf;
      p.end_kind = EndKind::truncated;
    }

    const std::size_t slot = rec.particles.size();
    rec.index.emplace(p.label, slot);
    if (pslot == SIZE_MAX)
      rec.roots.push_back(slot);
    else
      rec.children[pslot].push_back(slot);
    rec.children.emplace_back();
    const auto k = p.end_kind == EndKind::branched ? p.offspring : 0u;
    const double end = p.end_time;
    const Label label = p.label;
    rec.particles.push_back(std::move(p));
    for (unsigned c = k; c-- > 0;) {
      stack.push_back({label.child(c), label, end, x});
      parent_slot.push_back(slot);
    }
  }
  return rec;
}

inline GenealogyRecord simulate_forest(const ModelSpec& spec, const Label& label, const Point& x,
                                       const SimulationSettings& set, const PruneHook* hook = nullptr) {
  return simulate_forest(spec, {{label, x}}, set, hook);
}

namespace sim_detail {
inline void check_time(const GenealogyRecord& r, double t) {
  if (!(t >= r.start_time && t <= r.horizon))
    throw std::out_of_range("time outside [start, horizon]");
}
} // namespace sim_detail

/// |{i : birth_i <= t < S_i}|.
inline std::size_t population_count(const GenealogyRecord& r, double t) {
  sim_detail::check_time(r, t);
  std::size_t n = 0;
  for (const auto& p : r.particles)
    n += (p.birth_time <= t && t < p.end_time) ? 1 : 0;
  return n;
}

/// |{i : birth_i <= t}|, the count of every particle alive at some time <= t.
inline std::size_t total_born(const GenealogyRecord& r, double t) {
  sim_detail::check_time(r, t);
  std::size_t n = 0;
  for (const auto& p : r.particles)
    n += p.birth_time <= t ? 1 : 0;
  return n;
}

struct MomentBoundCheck {
  double empirical_mean = 0;
  double bound = 0;
  double log_bound = 0; // log(K v 1) exp(alpha_bar M_bar t); finite when bound overflows
  double M_bar = 0;
  std::size_t reps = 0;
  bool pass = false;
};

/// Sample mean of K^{Nbar_t} against (K v 1)^{exp(alpha_bar M_bar t)}.
inline MomentBoundCheck empirical_moment_bound_check(const ModelSpec& spec, double K, double t, std::size_t reps,
                                                     std::uint64_t seed, double dt = 1e-2) {
  if (!(K > 0))
    throw std::invalid_argument("empirical_moment_bound_check: K must be > 0");
  if (reps < 100)
    throw std::invalid_argument("empirical_moment_bound_check: reps must be >= 100");
  const auto grid = sample_grid(spec.dimension, -10.0, 10.0, 201);
  const auto mr = moment_report(spec, 2.0, grid);
  MomentBoundCheck c;
  c.M_bar = mr.M_bar;
  c.reps = reps;
  SimulationSettings set;
  set.horizon = t;
  set.dt = std::min(dt, t / 2);
  double mean = 0;
  for (std::size_t r = 0; r < reps; ++r) {
    set.seed = replication_seed(seed, r);
    const auto rec = simulate_forest(spec, Label{}, Point(spec.dimension, 0.0), set);
    const double v = std::pow(K, double(total_born(rec, t)));
    mean += (v - mean) / double(r + 1);
  }
  c.empirical_mean = mean;
  c.log_bound = K <= 1 ? 0.0 : std::log(K) * std::exp(spec.alpha_bar * mr.M_bar * t);
  c.bound = std::exp(c.log_bound);
  c.pass = mean <= c.bound;
  return c;
}

// ---------------------------------------------------------------------------
// CSV dumps
// ---------------------------------------------------------------------------

inline void write_forest_csv(std::ostream& os, const GenealogyRecord& r) {
  const auto d = r.dimension;
  os << "label,parent,birth_time,end_time,end_kind,k";
  for (std::size_t k = 0; k < d; ++k)
    os << ",x_birth_" << k;
  for (std::size_t k = 0; k < d; ++k)
    os << ",x_end_" << k;
  os << '\n';
  for (const auto& p : r.particles) {
    os << p.label.to_string() << ',' << (p.parent ? p.parent->to_string() : "") << ',' << fmt(p.birth_time) << ','
       << fmt(p.end_time) << ',' << to_string(p.end_kind) << ',' << p.offspring;
    for (double v : p.first_position(d))
      os << ',' << fmt(v);
    for (double v : p.last_position(d))
      os << ',' << fmt(v);
    os << '\n';
  }
}

inline void write_paths_csv(std::ostream& os, const GenealogyRecord& r) {
  const auto d = r.dimension;
  os << "label,t";
  for (std::size_t k = 0; k < d; ++k)
    os << ",x_" << k;
  os << '\n';
  for (const auto& p : r.particles)
    for (std::size_t s = 0; s < p.samples(); ++s) {
      os << p.label.to_string() << ',' << fmt(p.times[s]);
      for (double v : p.position(s, d))
        os << ',' << fmt(v);
      os << '\n';
    }
}

} // namespace stopline
