#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "stopline/format.hpp"
#include "stopline/model.hpp"
#include "stopline/model_io.hpp"
#include "stopline/rng.hpp"
#include "stopline/simulator.hpp"
#include "stopline/stopping.hpp"
#include "stopline/value_grid.hpp"

namespace stopline {

/// per_stop: prod_j e^{-gamma tau_j} g(X_j), every stop discounted by its own
/// time. per_lineage: e^{-gamma L} prod_j g(X_j) with L the total branch
/// length of the tree up to the line, i.e. killing at rate gamma along every
/// branch; this is the functional whose value solves the obstacle equation.
enum class Discount { per_stop, per_lineage };

inline const char* to_string(Discount d) { return d == Discount::per_stop ? "per_stop" : "per_lineage"; }

inline Discount discount_from_string(const std::string& s) {
  if (s == "per_stop")
    return Discount::per_stop;
  if (s == "per_lineage")
    return Discount::per_lineage;
  throw std::invalid_argument("unknown discount '" + s + "'");
}

namespace reward_detail {

/// Accumulates a product of nonnegative factors in log space.
struct LogProduct {
  double log = 0;
  bool zero = false;
  void times(double f) {
    if (zero)
      return;
    if (f <= 0)
      zero = true;
    else
      log += std::log(f);
  }
  void discount(double rate_times_time) { log -= rate_times_time; }
  [[nodiscard]] double value() const { return zero ? 0.0 : std::exp(log); }
};

} // namespace reward_detail

/// Reward of a line; `factor(stop)` supplies the non-discount factor.
template <class Factor>
double line_reward(const ModelSpec& spec, const LineOutcome& o, Discount d, Factor&& factor) {
  reward_detail::LogProduct prod;
  for (const auto& s : o.stops) {
    prod.times(factor(s));
    if (d == Discount::per_stop)
      prod.discount(spec.gamma * s.tau);
    if (prod.zero)
      return 0.0;
  }
  if (d == Discount::per_lineage)
    prod.discount(spec.gamma * o.lineage_time);
  return prod.value();
}

inline double reward_of_outcome(const ModelSpec& spec, const LineOutcome& o, Discount d = Discount::per_lineage) {
  return line_reward(spec, o, d, [&](const Stop& s) { return spec.reward(s.generation, s.x); });
}

// ---------------------------------------------------------------------------
// Estimates
// ---------------------------------------------------------------------------

/// Running mean and sum of squared deviations; merge() is Chan's pairwise
/// update, so any grouping of the same values gives the same moments up to
/// rounding.
struct Welford {
  std::size_t n = 0;
  double mean = 0;
  double m2 = 0;

  void add(double v) {
    ++n;
    const double delta = v - mean;
    mean += delta / double(n);
    m2 += delta * (v - mean);
  }
  void merge(const Welford& o) {
    if (o.n == 0)
      return;
    if (n == 0) {
      *this = o;
      return;
    }
    const double N = double(n + o.n);
    const double delta = o.mean - mean;
    mean += delta * double(o.n) / N;
    m2 += o.m2 + delta * delta * double(n) * double(o.n) / N;
    n += o.n;
  }
  [[nodiscard]] double variance() const { return n > 1 ? m2 / double(n - 1) : 0.0; }
  [[nodiscard]] double std_error() const { return n > 1 ? std::sqrt(variance() / double(n)) : 0.0; }
};

struct McEstimate {
  double mean = 0;
  double std_error = 0;
  std::size_t reps = 0;
  std::uint64_t seed = 0;
  double t_cut = 0;
  CutPolicy cut_policy = CutPolicy::abandon;
  Discount discount = Discount::per_lineage;
  std::vector<double> samples; // per replication, in replication order
};

inline json to_json(const McEstimate& e) {
  return json{{"mean", e.mean},           {"stderr", e.std_error},
              {"reps", e.reps},           {"seed", e.seed},
              {"t_cut", e.t_cut},         {"cut_policy", to_string(e.cut_policy)},
              {"discount", to_string(e.discount)}};
}

struct McSettings {
  std::size_t reps = 1000;
  double dt = 1e-2;
  std::uint64_t seed = 1;
  unsigned k_max = 64;
  unsigned threads = 0; // 0: STOPLINE_THREADS, then hardware concurrency
  Discount discount = Discount::per_lineage;
};

inline unsigned resolve_threads(unsigned requested) {
  if (requested > 0)
    return requested;
  if (const char* env = std::getenv("STOPLINE_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0)
      return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs body(r) for r in [0, n) on up to `threads` workers, contiguous blocks.
inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& body) {
  threads = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads), std::max<std::size_t>(n, 1)));
  if (threads == 1) {
    for (std::size_t r = 0; r < n; ++r)
      body(r);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (unsigned w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t r = n * w / threads; r < n * (w + 1) / threads; ++r)
          body(r);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool)
    t.join();
  for (auto& e : errors)
    if (e)
      std::rethrow_exception(e);
}

inline McEstimate summarise(std::vector<double> samples, const McSettings& set, double t_cut, CutPolicy policy) {
  Welford w;
  for (double v : samples)
    w.add(v);
  McEstimate e;
  e.mean = w.mean;
  e.std_error = w.std_error();
  e.reps = w.n;
  e.seed = set.seed;
  e.t_cut = t_cut;
  e.cut_policy = policy;
  e.discount = set.discount;
  e.samples = std::move(samples);
  return e;
}

namespace reward_detail {

inline SimulationSettings sim_settings(const McSettings& set, double t_cut, std::uint64_t rep) {
  if (!std::isfinite(t_cut))
    throw std::invalid_argument("Monte Carlo estimates need a finite t_cut");
  SimulationSettings s;
  s.dt = set.dt;
  s.k_max = set.k_max;
  s.horizon = std::max(t_cut, 2 * set.dt);
  s.seed = replication_seed(set.seed, rep);
  return s;
}

} // namespace reward_detail

/// Mean of the line reward over independent forests from `start`.
inline McEstimate mc_value(const ModelSpec& spec, const StoppingRule& rule, const std::pair<Label, Point>& start,
                           const McSettings& set) {
  if (set.reps < 2)
    throw std::invalid_argument("mc_value: reps must be >= 2");
  const auto hash = model_fingerprint(spec);
  const StoppingRule rs[1] = {rule};
  const auto hook = prune_hook(rs);
  std::vector<double> out(set.reps);
  parallel_for(set.reps, resolve_threads(set.threads), [&](std::size_t r) {
    const auto rec = simulate_forest(spec, {start}, reward_detail::sim_settings(set, rule.t_cut, r), &hook);
    out[r] = reward_of_outcome(spec, evaluate_lines(rec, rs, hash), set.discount);
  });
  return summarise(std::move(out), set, rule.t_cut, rule.cut_policy);
}

/// Right-hand side of the dynamic programming identity: both lines are walked
/// on the same forest, the earlier one claims each particle (ties to theta);
/// theta-stops contribute v from the grid, tau-stops contribute g.
inline McEstimate dpp_rhs(const ModelSpec& spec, const StoppingRule& theta, const StoppingRule& tau,
                          const ValueGrid& grid, const std::pair<Label, Point>& start, const McSettings& set) {
  if (set.reps < 2)
    throw std::invalid_argument("dpp_rhs: reps must be >= 2");
  const auto hash = model_fingerprint(spec);
  if (!grid.solved || grid.model_hash != hash)
    throw std::invalid_argument("dpp_rhs: value grid was solved for a different model");
  const StoppingRule rs[2] = {theta, tau};
  const double t_cut = std::min(theta.t_cut, tau.t_cut);
  const auto hook = prune_hook(rs);
  auto v_factor = [&](const Stop& s) {
    if (s.rule == 0 && grid.covers(s.x[0]))
      return grid.value(s.generation, s.x[0]);
    return spec.reward(s.generation, s.x);
  };
  std::vector<double> out(set.reps);
  parallel_for(set.reps, resolve_threads(set.threads), [&](std::size_t r) {
    const auto rec = simulate_forest(spec, {start}, reward_detail::sim_settings(set, t_cut, r), &hook);
    out[r] = line_reward(spec, evaluate_lines(rec, rs, hash), set.discount, v_factor);
  });
  return summarise(std::move(out), set, t_cut, theta.cut_policy);
}

inline void write_samples_csv(std::ostream& os, const McEstimate& e) {
  os << "rep,reward\n";
  for (std::size_t r = 0; r < e.samples.size(); ++r)
    os << r << ',' << fmt(e.samples[r]) << '\n';
}

} // namespace stopline
