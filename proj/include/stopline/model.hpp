#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace stopline {

using Point = std::vector<double>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

// ---------------------------------------------------------------------------
// Coefficient catalog. Closed on purpose: every entry has an analytic
// Lipschitz constant and an exact JSON form.
// ---------------------------------------------------------------------------

namespace coef {

/// c (one entry broadcasts to every component).
struct Constant {
  std::vector<double> value{0.0};
};
/// offset + slope * x, componentwise.
struct Affine {
  std::vector<double> offset{0.0};
  double slope = 0.0;
};
/// rate * x, componentwise (GBM-style).
struct Linear {
  double rate = 0.0;
};

struct ConstantRate {
  double value = 0.0;
};
/// max / (1 + exp(-(x0 - center) / width)).
struct LogisticRate {
  double max = 1.0;
  double center = 0.0;
  double width = 1.0;
};

struct Deterministic {
  unsigned k = 1;
};
struct Binary {
  double p0 = 0.5;
  double p2 = 0.5;
};
using Rate = std::variant<ConstantRate, LogisticRate>;
struct Poisson {
  Rate lambda = ConstantRate{0.5};
};

struct ConstantReward {
  double value = 1.0;
};
/// min(K_g, max(strike - x0, 0)).
struct PutReward {
  double strike = 1.0;
};
/// amplitude * exp(-|x - center|^2 / width^2).
struct BumpReward {
  double amplitude = 1.0;
  double center = 0.0;
  double width = 1.0;
};

} // namespace coef

/// Drift b or the diagonal of the diffusion matrix sigma (m = d).
using VectorField = std::variant<coef::Constant, coef::Affine, coef::Linear>;
using Rate = coef::Rate;
using Offspring = std::variant<coef::Deterministic, coef::Binary, coef::Poisson>;
using RewardFn = std::variant<coef::ConstantReward, coef::PutReward, coef::BumpReward>;

namespace detail {
inline double pick(const std::vector<double>& v, std::size_t k) {
  return v.size() == 1 ? v[0] : v.at(k);
}
} // namespace detail

inline double component(const VectorField& f, std::span<const double> x, std::size_t k) {
  return std::visit(overloaded{
                        [&](const coef::Constant& c) { return detail::pick(c.value, k); },
                        [&](const coef::Affine& a) { return detail::pick(a.offset, k) + a.slope * x[k]; },
                        [&](const coef::Linear& l) { return l.rate * x[k]; },
                    },
                    f);
}

inline double lipschitz_constant(const VectorField& f) {
  return std::visit(overloaded{
                        [](const coef::Constant&) { return 0.0; },
                        [](const coef::Affine& a) { return std::abs(a.slope); },
                        [](const coef::Linear& l) { return std::abs(l.rate); },
                    },
                    f);
}

inline std::size_t declared_size(const VectorField& f) {
  return std::visit(overloaded{
                        [](const coef::Constant& c) { return c.value.size(); },
                        [](const coef::Affine& a) { return a.offset.size(); },
                        [](const coef::Linear&) { return std::size_t{1}; },
                    },
                    f);
}

inline double evaluate(const Rate& r, std::span<const double> x) {
  return std::visit(overloaded{
                        [](const coef::ConstantRate& c) { return c.value; },
                        [&](const coef::LogisticRate& l) {
                          return l.max / (1.0 + std::exp(-(x[0] - l.center) / l.width));
                        },
                    },
                    r);
}

inline double supremum(const Rate& r) {
  return std::visit(overloaded{
                        [](const coef::ConstantRate& c) { return c.value; },
                        [](const coef::LogisticRate& l) { return l.max; },
                    },
                    r);
}

inline double infimum(const Rate& r) {
  return std::visit(overloaded{
                        [](const coef::ConstantRate& c) { return c.value; },
                        [](const coef::LogisticRate&) { return 0.0; },
                    },
                    r);
}

inline double lipschitz_constant(const Rate& r) {
  return std::visit(overloaded{
                        [](const coef::ConstantRate&) { return 0.0; },
                        [](const coef::LogisticRate& l) { return std::abs(l.max) / (4.0 * l.width); },
                    },
                    r);
}

// ---------------------------------------------------------------------------
// Offspring laws
// ---------------------------------------------------------------------------

inline double offspring_probability(const Offspring& law, std::span<const double> x, unsigned k) {
  return std::visit(overloaded{
                        [&](const coef::Deterministic& d) { return d.k == k ? 1.0 : 0.0; },
                        [&](const coef::Binary& b) { return k == 0 ? b.p0 : (k == 2 ? b.p2 : 0.0); },
                        [&](const coef::Poisson& p) {
                          const double lam = evaluate(p.lambda, x);
                          if (lam == 0.0)
                            return k == 0 ? 1.0 : 0.0;
                          return std::exp(k * std::log(lam) - lam - std::lgamma(k + 1.0));
                        },
                    },
                    law);
}

/// Largest k with p_k > 0 anywhere, if bounded.
inline std::optional<unsigned> support_bound(const Offspring& law) {
  return std::visit(overloaded{
                        [](const coef::Deterministic& d) -> std::optional<unsigned> { return d.k; },
                        [](const coef::Binary& b) -> std::optional<unsigned> { return b.p2 > 0 ? 2u : 0u; },
                        [](const coef::Poisson&) -> std::optional<unsigned> { return std::nullopt; },
                    },
                    law);
}

/// Inverse CDF over p_k(x) truncated at k_max; mass beyond k_max goes to
/// k_max. `v` is uniform on [0, 1).
inline unsigned draw_offspring(const Offspring& law, std::span<const double> x, double v, unsigned k_max) {
  return std::visit(overloaded{
                        [&](const coef::Deterministic& d) { return std::min(d.k, k_max); },
                        [&](const coef::Binary& b) { return v < b.p0 ? 0u : std::min(2u, k_max); },
                        [&](const coef::Poisson& p) {
                          const double lam = evaluate(p.lambda, x);
                          double term = std::exp(-lam);
                          double cdf = term;
                          unsigned k = 0;
                          while (v >= cdf && k < k_max) {
                            ++k;
                            term *= lam / k;
                            cdf += term;
                          }
                          return k;
                        },
                    },
                    law);
}

/// Raw moment sum_k k^ell p_k(x); ell = 0 gives 1.
inline double offspring_moment(const Offspring& law, std::span<const double> x, unsigned ell) {
  if (ell == 0)
    return 1.0;
  return std::visit(overloaded{
                        [&](const coef::Deterministic& d) { return std::pow(double(d.k), double(ell)); },
                        [&](const coef::Binary& b) { return b.p2 * std::pow(2.0, double(ell)); },
                        [&](const coef::Poisson& p) {
                          // Touchard recurrence m_{l+1} = lam * sum_j C(l, j) m_j.
                          const double lam = evaluate(p.lambda, x);
                          std::vector<double> m{1.0};
                          for (unsigned l = 0; l < ell; ++l) {
                            double s = 0.0, binom = 1.0;
                            for (unsigned j = 0; j <= l; ++j) {
                              s += binom * m[j];
                              binom = binom * (l - j) / (j + 1);
                            }
                            m.push_back(lam * s);
                          }
                          return m.back();
                        },
                    },
                    law);
}

// ---------------------------------------------------------------------------
// Rewards
// ---------------------------------------------------------------------------

inline double evaluate(const RewardFn& g, std::span<const double> x, double k_g) {
  return std::visit(overloaded{
                        [](const coef::ConstantReward& c) { return c.value; },
                        [&](const coef::PutReward& p) { return std::min(k_g, std::max(p.strike - x[0], 0.0)); },
                        [&](const coef::BumpReward& b) {
                          double r2 = 0.0;
                          for (double xi : x)
                            r2 += (xi - b.center) * (xi - b.center);
                          return b.amplitude * std::exp(-r2 / (b.width * b.width));
                        },
                    },
                    g);
}

inline double lipschitz_constant(const RewardFn& g) {
  return std::visit(overloaded{
                        [](const coef::ConstantReward&) { return 0.0; },
                        [](const coef::PutReward&) { return 1.0; },
                        [](const coef::BumpReward& b) {
                          return std::abs(b.amplitude) * std::sqrt(2.0) * std::exp(-0.5) / b.width;
                        },
                    },
                    g);
}

// ---------------------------------------------------------------------------
// ModelSpec
// ---------------------------------------------------------------------------

struct ModelSpec {
  std::size_t dimension = 1;
  VectorField drift = coef::Constant{{0.0}};
  VectorField diffusion = coef::Constant{{0.0}};
  Rate branch_rate = coef::ConstantRate{0.0};
  double alpha_bar = 1.0;
  Offspring offspring = coef::Deterministic{1};
  double gamma = 1.0;
  /// g_0 .. g_D; g_n = g_D for n >= D.
  std::vector<RewardFn> rewards{coef::ConstantReward{1.0}};
  double k_g = 1.0;

  [[nodiscard]] std::size_t depth() const noexcept { return rewards.size() - 1; }

  [[nodiscard]] const RewardFn& reward_level(std::size_t generation) const {
    return rewards[std::min(generation, depth())];
  }

  [[nodiscard]] double reward(std::size_t generation, std::span<const double> x) const {
    return evaluate(reward_level(generation), x, k_g);
  }

  [[nodiscard]] double alpha(std::span<const double> x) const { return evaluate(branch_rate, x); }

  void drift_at(std::span<const double> x, std::span<double> out) const {
    for (std::size_t k = 0; k < dimension; ++k)
      out[k] = component(drift, x, k);
  }
  void diffusion_at(std::span<const double> x, std::span<double> out) const {
    for (std::size_t k = 0; k < dimension; ++k)
      out[k] = component(diffusion, x, k);
  }

  // Scalar views for the one-dimensional solver.
  [[nodiscard]] double drift1(double x) const { return component(drift, std::span<const double>(&x, 1), 0); }
  [[nodiscard]] double sigma1(double x) const {
    return component(diffusion, std::span<const double>(&x, 1), 0);
  }
  [[nodiscard]] double alpha1(double x) const { return alpha(std::span<const double>(&x, 1)); }
  [[nodiscard]] double reward1(std::size_t n, double x) const {
    return reward(n, std::span<const double>(&x, 1));
  }
};

/// Structural checks that make a model unusable (wrong sizes, nonpositive
/// constants). Assumption-level checks live in assumption_summary().
inline void validate_structure(const ModelSpec& s) {
  auto fail = [](const std::string& m) { throw std::invalid_argument("ModelSpec: " + m); };
  if (s.dimension < 1)
    fail("dimension must be >= 1");
  for (const VectorField* f : {&s.drift, &s.diffusion}) {
    const auto n = declared_size(*f);
    if (n != 1 && n != s.dimension)
      fail("coefficient vector size must be 1 or the dimension");
  }
  if (!(s.alpha_bar > 0))
    fail("alpha_bar must be > 0");
  if (!(s.gamma > 0))
    fail("gamma must be > 0");
  if (!(s.k_g >= 1))
    fail("k_g must be >= 1");
  if (s.rewards.empty())
    fail("at least one reward level is required");
  auto check_rate = [&](const Rate& r) {
    if (auto* l = std::get_if<coef::LogisticRate>(&r); l && !(l->width > 0))
      fail("logistic width must be > 0");
    if (!(infimum(r) >= 0))
      fail("rates must be nonnegative");
  };
  check_rate(s.branch_rate);
  if (auto* p = std::get_if<coef::Poisson>(&s.offspring))
    check_rate(p->lambda);
  if (auto* b = std::get_if<coef::Binary>(&s.offspring); b && (b->p0 < 0 || b->p2 < 0))
    fail("binary probabilities must be nonnegative");
  for (const auto& g : s.rewards)
    if (auto* b = std::get_if<coef::BumpReward>(&g); b && !(b->width > 0))
      fail("bump width must be > 0");
}

// ---------------------------------------------------------------------------
// Offspring statistics
// ---------------------------------------------------------------------------

inline double mean_offspring(const ModelSpec& s, std::span<const double> x) {
  return offspring_moment(s.offspring, x, 1);
}

/// Truncated generating function sum_{k <= k_max} p_k(x) w^k.
inline double generating_function(const ModelSpec& s, std::span<const double> x, double w, unsigned k_max) {
  if (w < 0)
    throw std::invalid_argument("generating_function: w must be >= 0");
  if (k_max < 1)
    throw std::invalid_argument("generating_function: k_max must be >= 1");
  return std::visit(overloaded{
                        [&](const coef::Deterministic& d) { return d.k <= k_max ? std::pow(w, double(d.k)) : 0.0; },
                        [&](const coef::Binary& b) { return b.p0 + (k_max >= 2 ? b.p2 * w * w : 0.0); },
                        [&](const coef::Poisson& p) {
                          const double lam = evaluate(p.lambda, x);
                          double term = std::exp(-lam);
                          double sum = term;
                          for (unsigned k = 1; k <= k_max; ++k) {
                            term *= lam * w / k;
                            sum += term;
                          }
                          return sum;
                        },
                    },
                    s.offspring);
}

inline double generating_function(const ModelSpec& s, double x, double w, unsigned k_max) {
  return generating_function(s, std::span<const double>(&x, 1), w, k_max);
}

/// Derivative in w of the truncated generating function.
inline double generating_function_slope(const ModelSpec& s, double x, double w, unsigned k_max) {
  const std::span<const double> xs(&x, 1);
  return std::visit(overloaded{
                        [&](const coef::Deterministic& d) {
                          return (d.k >= 1 && d.k <= k_max) ? d.k * std::pow(w, double(d.k) - 1) : 0.0;
                        },
                        [&](const coef::Binary& b) { return k_max >= 2 ? 2.0 * b.p2 * w : 0.0; },
                        [&](const coef::Poisson& p) {
                          const double lam = evaluate(p.lambda, xs);
                          double term = std::exp(-lam) * lam; // k = 1 term of k p_k w^{k-1}
                          double sum = term;
                          for (unsigned k = 2; k <= k_max; ++k) {
                            term *= lam * w / (k - 1);
                            sum += term;
                          }
                          return sum;
                        },
                    },
                    s.offspring);
}

/// Generic tail estimate from the moment bound sum_k p_k R^k <= C sqrt(R),
/// C >= sup_l 2^l M_l, shifted to k > k_max through R' = max(R^2, 2R).
inline double moment_tail_bound(double m_bar, double R, unsigned k_max) {
  if (!(R > 0))
    throw std::invalid_argument("moment_tail_bound: R must be > 0");
  if (!std::isfinite(m_bar))
    throw std::domain_error("moment_tail_bound: moment constant unavailable (unbounded)");
  const double Rp = std::max(R * R, 2.0 * R);
  return std::pow(R / Rp, double(k_max) + 1.0) * m_bar * std::sqrt(Rp);
}

/// Upper bound on sum_{k > k_max} p_k(x) R^k, uniform in x. Exact for
/// bounded-support families; for Poisson uses e^{-lam_min} sum (lam_max R)^k/k!.
inline double series_tail_bound(const ModelSpec& s, double R, unsigned k_max) {
  if (!(R > 0))
    throw std::invalid_argument("series_tail_bound: R must be > 0");
  return std::visit(overloaded{
                        [&](const coef::Deterministic& d) { return d.k > k_max ? std::pow(R, double(d.k)) : 0.0; },
                        [&](const coef::Binary& b) { return k_max < 2 ? b.p2 * R * R : 0.0; },
                        [&](const coef::Poisson& p) {
                          const double lam_hi = supremum(p.lambda);
                          const double lam_lo = infimum(p.lambda);
                          const double z = lam_hi * R;
                          if (z == 0)
                            return 0.0;
                          // log of the first omitted term, then sum while terms matter.
                          double log_term = (k_max + 1.0) * std::log(z) - std::lgamma(k_max + 2.0);
                          double sum = 0.0;
                          for (unsigned k = k_max + 1;; ++k) {
                            const double t = std::exp(log_term);
                            sum += t;
                            if (k > z && t <= sum * 1e-17)
                              break;
                            log_term += std::log(z) - std::log(k + 1.0);
                          }
                          return std::exp(-lam_lo) * sum;
                        },
                    },
                    s.offspring);
}

// ---------------------------------------------------------------------------
// Moment report and the value bound
// ---------------------------------------------------------------------------

struct MomentReport {
  double M = 0;                  // sup_x sum k p_k
  std::vector<double> M_ell;     // ell = 1..L_max
  double M_bar = 0;              // sup_{ell <= L_max} 2^ell M_ell (ell = 0 included)
  unsigned M_bar_argmax = 0;
  bool M_bar_attained = false;   // argmax strictly below L_max
  unsigned L_max = 20;
  double C = 0;
  double gamma_threshold = 0;    // alpha_bar (M_bar C/(C-1) - 1)
  double value_bound = 0;        // exp(log K_g * K_g^{alpha_bar M_bar / gamma})
  bool unique_below_bound = false;
};

/// exp(log(K_g) K_g^{alpha_bar M_bar / gamma}); +inf when it overflows.
inline double value_bound(double k_g, double alpha_bar, double m_bar, double gamma) {
  if (k_g == 1.0)
    return 1.0;
  const double lk = std::log(k_g);
  return std::exp(lk * std::exp(alpha_bar * m_bar / gamma * lk));
}

inline double gamma_threshold(double alpha_bar, double m_bar, double C) {
  if (!(C > 1))
    return kInf;
  const double ratio = std::isinf(C) ? 1.0 : C / (C - 1.0);
  return alpha_bar * (m_bar * ratio - 1.0);
}

/// Closed-form moments, maximised over `grid`. C = 0 selects C = value bound.
inline MomentReport moment_report(const ModelSpec& s, double C, std::span<const Point> grid, unsigned L_max = 20) {
  if (grid.empty())
    throw std::invalid_argument("moment_report: sample grid must be nonempty");
  if (C != 0 && !(C > 1))
    throw std::invalid_argument("moment_report: C must be > 1 (or 0 for the value bound)");
  MomentReport r;
  r.L_max = L_max;
  r.M_ell.assign(L_max, 0.0);
  for (const auto& x : grid)
    for (unsigned l = 1; l <= L_max; ++l)
      r.M_ell[l - 1] = std::max(r.M_ell[l - 1], offspring_moment(s.offspring, x, l));
  r.M = L_max ? r.M_ell[0] : 0.0;
  r.M_bar = 1.0; // ell = 0
  r.M_bar_argmax = 0;
  for (unsigned l = 1; l <= L_max; ++l) {
    const double v = std::ldexp(r.M_ell[l - 1], int(l));
    if (v > r.M_bar) {
      r.M_bar = v;
      r.M_bar_argmax = l;
    }
  }
  r.M_bar_attained = r.M_bar_argmax < L_max;
  r.value_bound = value_bound(s.k_g, s.alpha_bar, r.M_bar, s.gamma);
  r.C = C == 0 ? r.value_bound : C;
  r.gamma_threshold = gamma_threshold(s.alpha_bar, r.M_bar, r.C);
  r.unique_below_bound = s.gamma > r.gamma_threshold;
  return r;
}

// ---------------------------------------------------------------------------
// Assumption summary
// ---------------------------------------------------------------------------

struct LipschitzEntry {
  std::string coefficient;
  double constant;
  std::string validity; // domain on which the constant holds
};

struct AssumptionSummary {
  double alpha_sup_sampled = 0;
  double alpha_sup_declared = 0;
  double probability_defect = 0;   // max |sum_k p_k(x) - 1|
  double reward_min = kInf;
  double reward_max = -kInf;
  double poisson_lambda_max = 0;   // 0 for non-Poisson families
  std::vector<LipschitzEntry> lipschitz;
  double alpha_modulus = 0;        // max |alpha(x) - alpha(x')| / |x - x'| on neighbours
  double offspring_modulus = 0;    // same for p_0 .. p_8
  std::vector<std::string> hard_violations;
  std::vector<std::string> warnings;

  [[nodiscard]] bool ok() const noexcept { return hard_violations.empty(); }
};

inline AssumptionSummary assumption_summary(const ModelSpec& s, std::span<const Point> grid) {
  AssumptionSummary a;
  a.alpha_sup_declared = supremum(s.branch_rate);
  for (const auto& x : grid) {
    a.alpha_sup_sampled = std::max(a.alpha_sup_sampled, s.alpha(x));
    double total = 0.0;
    const unsigned kmax = support_bound(s.offspring).value_or(0);
    if (kmax > 0 || !std::holds_alternative<coef::Poisson>(s.offspring)) {
      for (unsigned k = 0; k <= kmax; ++k)
        total += offspring_probability(s.offspring, x, k);
    } else {
      const double lam = evaluate(std::get<coef::Poisson>(s.offspring).lambda, x);
      const unsigned K = 64 + static_cast<unsigned>(20 * lam);
      for (unsigned k = 0; k <= K; ++k)
        total += offspring_probability(s.offspring, x, k);
    }
    a.probability_defect = std::max(a.probability_defect, std::abs(total - 1.0));
    for (std::size_t n = 0; n <= s.depth(); ++n) {
      const double g = s.reward(n, x);
      a.reward_min = std::min(a.reward_min, g);
      a.reward_max = std::max(a.reward_max, g);
    }
  }
  for (std::size_t k = 1; k < grid.size(); ++k) {
    double dist = 0.0;
    for (std::size_t c = 0; c < grid[k].size(); ++c)
      dist += (grid[k][c] - grid[k - 1][c]) * (grid[k][c] - grid[k - 1][c]);
    dist = std::sqrt(dist);
    if (dist == 0)
      continue;
    a.alpha_modulus = std::max(a.alpha_modulus, std::abs(s.alpha(grid[k]) - s.alpha(grid[k - 1])) / dist);
    for (unsigned j = 0; j <= 8; ++j)
      a.offspring_modulus =
          std::max(a.offspring_modulus, std::abs(offspring_probability(s.offspring, grid[k], j) -
                                                 offspring_probability(s.offspring, grid[k - 1], j)) /
                                            dist);
  }

  a.lipschitz.push_back({"drift", lipschitz_constant(s.drift), "global"});
  a.lipschitz.push_back({"diffusion", lipschitz_constant(s.diffusion), "global"});
  a.lipschitz.push_back({"branch_rate", lipschitz_constant(s.branch_rate), "global"});
  for (std::size_t n = 0; n <= s.depth(); ++n)
    a.lipschitz.push_back({"reward[" + std::to_string(n) + "]", lipschitz_constant(s.rewards[n]), "global"});

  if (a.alpha_sup_sampled > s.alpha_bar || a.alpha_sup_declared > s.alpha_bar)
    a.hard_violations.push_back("branch rate exceeds alpha_bar");
  if (a.probability_defect > 1e-12)
    a.hard_violations.push_back("offspring probabilities do not sum to one");
  if (a.reward_min < 0 || a.reward_max > s.k_g)
    a.hard_violations.push_back("reward outside [0, k_g]");
  if (auto* p = std::get_if<coef::Poisson>(&s.offspring)) {
    a.poisson_lambda_max = supremum(p->lambda);
    if (a.poisson_lambda_max > 0.5)
      a.warnings.push_back("Poisson offspring intensity exceeds 1/2");
  }
  return a;
}

/// Evenly spaced sample points along the first axis (other coordinates 0).
inline std::vector<Point> sample_grid(std::size_t dimension, double lo, double hi, std::size_t n) {
  std::vector<Point> pts;
  pts.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    Point p(dimension, 0.0);
    p[0] = n == 1 ? lo : lo + (hi - lo) * double(k) / double(n - 1);
    pts.push_back(std::move(p));
  }
  return pts;
}

} // namespace stopline
