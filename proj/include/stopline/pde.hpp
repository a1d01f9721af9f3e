#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "stopline/model.hpp"
#include "stopline/model_io.hpp"
#include "stopline/value_grid.hpp"

namespace stopline {

class ConvergenceError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class Boundary { obstacle, far_field };
enum class LinearSolver { howard, psor };

inline const char* to_string(Boundary b) { return b == Boundary::obstacle ? "obstacle" : "far_field"; }
inline const char* to_string(LinearSolver s) { return s == LinearSolver::howard ? "howard" : "psor"; }

struct SolverSettings {
  double x_lo = -1;
  double x_hi = 1;
  std::size_t n_cells = 200;
  double tol_fp = 1e-8;
  double tol_lin = 1e-10;
  unsigned k_max = 64;
  LinearSolver method = LinearSolver::howard;
  double omega = 1.5;
  std::size_t max_sweeps = 100000;
  std::size_t max_outer = 200;
  Boundary lower = Boundary::obstacle;
  Boundary upper = Boundary::obstacle;
  double far_field_extent = 100; // tail length in units of the domain width
  double far_field_growth = 1.05;
};

inline json to_json(const SolverSettings& s) {
  return json{{"x_lo", s.x_lo},
              {"x_hi", s.x_hi},
              {"n_cells", s.n_cells},
              {"tol_fp", s.tol_fp},
              {"tol_lin", s.tol_lin},
              {"k_max", s.k_max},
              {"method", to_string(s.method)},
              {"omega", s.omega},
              {"max_sweeps", s.max_sweeps},
              {"max_outer", s.max_outer},
              {"lower", to_string(s.lower)},
              {"upper", to_string(s.upper)},
              {"far_field_extent", s.far_field_extent},
              {"far_field_growth", s.far_field_growth}};
}

/// (1/2) sigma^2 m + b q + alpha G(x, w) - (alpha + gamma) r at a point of the line.
inline double apply_operator(const ModelSpec& s, double x, double r, double q, double m, double next_gen_value,
                             unsigned k_max = 64) {
  if (s.dimension != 1)
    throw std::invalid_argument("apply_operator: only dimension 1 is supported");
  const double sig = s.sigma1(x);
  const double a = s.alpha1(x);
  return 0.5 * sig * sig * m + s.drift1(x) * q + a * generating_function(s, x, next_gen_value, k_max) - (a + s.gamma) * r;
}

// ---------------------------------------------------------------------------
// Discretisation
// ---------------------------------------------------------------------------

/// Rows of A v = -(1/2 sigma^2 v'' + b v') + (alpha + gamma) v; first and last
/// rows are the identity (Dirichlet).
struct Tridiagonal {
  std::vector<double> lo, di, up;
};

inline std::vector<double> build_nodes(const SolverSettings& set, std::size_t& core_begin, std::size_t& core_end) {
  const double h = (set.x_hi - set.x_lo) / double(set.n_cells);
  const double width = set.x_hi - set.x_lo;
  std::vector<double> left, core, right;
  for (std::size_t j = 0; j <= set.n_cells; ++j)
    core.push_back(j == set.n_cells ? set.x_hi : set.x_lo + h * double(j));
  if (set.upper == Boundary::far_field) {
    double p = set.x_hi, step = h;
    while (p < set.x_hi + set.far_field_extent * width) {
      step *= set.far_field_growth;
      p += step;
      right.push_back(p);
    }
  }
  if (set.lower == Boundary::far_field) {
    double p = set.x_lo, step = h;
    while (p > set.x_lo - set.far_field_extent * width) {
      step *= set.far_field_growth;
      p -= step;
      left.push_back(p);
    }
  }
  std::vector<double> x(left.rbegin(), left.rend());
  core_begin = x.size();
  x.insert(x.end(), core.begin(), core.end());
  core_end = x.size() - 1;
  x.insert(x.end(), right.begin(), right.end());
  return x;
}

/// Central second difference, upwind first difference. Throws if the result
/// is not an M-matrix (a monotone scheme is what the solvers rely on).
inline Tridiagonal assemble(const ModelSpec& s, const std::vector<double>& x) {
  const std::size_t n = x.size();
  Tridiagonal A{std::vector<double>(n, 0.0), std::vector<double>(n, 1.0), std::vector<double>(n, 0.0)};
  for (std::size_t j = 1; j + 1 < n; ++j) {
    const double hm = x[j] - x[j - 1], hp = x[j + 1] - x[j];
    const double sig = s.sigma1(x[j]);
    const double s2 = sig * sig;
    const double am = s2 / (hm * (hm + hp)), ap = s2 / (hp * (hm + hp));
    const double b = s.drift1(x[j]);
    const double c = s.alpha1(x[j]) + s.gamma;
    double lo = -am, up = -ap, di = am + ap + c;
    if (b > 0) {
      up -= b / hp;
      di += b / hp;
    } else {
      lo += b / hm;
      di -= b / hm;
    }
    if (lo > 0 || up > 0 || di < -(lo + up))
      throw std::logic_error("assemble: discretisation is not monotone");
    A.lo[j] = lo;
    A.di[j] = di;
    A.up[j] = up;
  }
  return A;
}

inline std::vector<double> multiply(const Tridiagonal& A, const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<double> out(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = A.di[j] * v[j];
    if (j > 0)
      s += A.lo[j] * v[j - 1];
    if (j + 1 < n)
      s += A.up[j] * v[j + 1];
    out[j] = s;
  }
  return out;
}

/// Thomas algorithm; rows flagged in `fixed` are replaced by v = rhs.
inline std::vector<double> thomas(const Tridiagonal& A, const std::vector<double>& rhs,
                                  const std::vector<std::uint8_t>& fixed) {
  const std::size_t n = rhs.size();
  std::vector<double> c(n), d(n), v(n);
  auto row = [&](std::size_t j, double& lo, double& di, double& up) {
    if (fixed[j] || j == 0 || j + 1 == n) {
      lo = 0;
      di = 1;
      up = 0;
    } else {
      lo = A.lo[j];
      di = A.di[j];
      up = A.up[j];
    }
  };
  double lo, di, up;
  row(0, lo, di, up);
  c[0] = up / di;
  d[0] = rhs[0] / di;
  for (std::size_t j = 1; j < n; ++j) {
    row(j, lo, di, up);
    const double m = di - lo * c[j - 1];
    c[j] = up / m;
    d[j] = (rhs[j] - lo * d[j - 1]) / m;
  }
  v[n - 1] = d[n - 1];
  for (std::size_t j = n - 1; j-- > 0;)
    v[j] = d[j] - c[j] * v[j + 1];
  return v;
}

struct LcpResult {
  std::vector<double> v;
  std::vector<std::uint8_t> contact;
  std::size_t iterations = 0;
};

/// min(A v - f, v - g) = 0 by policy iteration. `active` warm-starts the
/// contact set; end nodes are always Dirichlet.
inline LcpResult solve_lcp_howard(const Tridiagonal& A, const std::vector<double>& f, const std::vector<double>& g,
                                  std::vector<std::uint8_t> active) {
  const std::size_t n = f.size();
  active.resize(n, 0);
  active.front() = active.back() = 1;
  const std::size_t cap = 2 * n + 10;
  for (std::size_t it = 1; it <= cap; ++it) {
    std::vector<double> rhs(n);
    for (std::size_t j = 0; j < n; ++j)
      rhs[j] = active[j] ? g[j] : f[j];
    auto v = thomas(A, rhs, active);
    const auto Av = multiply(A, v);
    std::vector<std::uint8_t> next(n, 0);
    next.front() = next.back() = 1;
    for (std::size_t j = 1; j + 1 < n; ++j)
      next[j] = (v[j] - g[j]) <= (Av[j] - f[j]) ? 1 : 0;
    if (next == active)
      return {std::move(v), std::move(active), it};
    active = std::move(next);
  }
  throw ConvergenceError("policy iteration did not settle");
}

/// Projected SOR for the same problem, started from `v0`.
inline LcpResult solve_lcp_psor(const Tridiagonal& A, const std::vector<double>& f, const std::vector<double>& g,
                                std::vector<double> v, double omega, double tol, std::size_t max_sweeps) {
  const std::size_t n = f.size();
  v.resize(n, 0.0);
  v.front() = g.front();
  v.back() = g.back();
  for (std::size_t sweep = 1; sweep <= max_sweeps; ++sweep) {
    double change = 0;
    for (std::size_t j = 1; j + 1 < n; ++j) {
      const double gs = (f[j] - A.lo[j] * v[j - 1] - A.up[j] * v[j + 1]) / A.di[j];
      const double nv = std::max(g[j], (1 - omega) * v[j] + omega * gs);
      change = std::max(change, std::abs(nv - v[j]));
      v[j] = nv;
    }
    if (change < tol) {
      std::vector<std::uint8_t> contact(n, 0);
      contact.front() = contact.back() = 1;
      for (std::size_t j = 1; j + 1 < n; ++j)
        contact[j] = v[j] - g[j] <= tol ? 1 : 0;
      return {std::move(v), std::move(contact), sweep};
    }
  }
  throw ConvergenceError("projected SOR exceeded " + std::to_string(max_sweeps) + " sweeps");
}

// ---------------------------------------------------------------------------
// Solvers
// ---------------------------------------------------------------------------

namespace pde_detail {

struct Problem {
  std::vector<double> x;
  std::size_t core_begin = 0, core_end = 0;
  Tridiagonal A;
  std::vector<double> alpha;
  double vbar = 1;
  double tail = 0;
  std::string model_hash, settings_hash;
  std::vector<std::string> warnings;
};

inline Problem prepare(const ModelSpec& s, const SolverSettings& set) {
  if (s.dimension != 1)
    throw std::invalid_argument("pde: only dimension 1 is supported");
  if (!(set.x_hi > set.x_lo) || set.n_cells < 2)
    throw std::invalid_argument("pde: need x_lo < x_hi and at least two cells");
  if (!(set.tol_fp > 0) || !(set.tol_lin > 0) || set.k_max < 1)
    throw std::invalid_argument("pde: tolerances must be > 0 and k_max >= 1");
  if (!(set.omega > 0 && set.omega < 2))
    throw std::invalid_argument("pde: omega must lie in (0, 2)");
  if (!(set.far_field_growth >= 1) || !(set.far_field_extent > 0))
    throw std::invalid_argument("pde: far-field growth must be >= 1 and extent > 0");
  Problem p;
  p.x = build_nodes(set, p.core_begin, p.core_end);
  p.A = assemble(s, p.x);
  for (double xi : p.x)
    p.alpha.push_back(s.alpha1(xi));

  std::vector<Point> pts;
  for (std::size_t j = p.core_begin; j <= p.core_end; ++j)
    pts.push_back({p.x[j]});
  const auto mr = moment_report(s, 0.0, pts);
  p.vbar = mr.value_bound;
  if (!mr.unique_below_bound)
    p.warnings.push_back("gamma does not exceed the uniqueness threshold " + fmt(mr.gamma_threshold));
  if (!mr.M_bar_attained)
    p.warnings.push_back("moment supremum not attained below L_max; M_bar is a truncated estimate");
  if (!std::isfinite(p.vbar)) {
    p.warnings.push_back("value bound is not finite; iteration starts from k_g");
    p.vbar = s.k_g;
  }
  p.tail = series_tail_bound(s, std::max(p.vbar, 1.0), set.k_max);
  p.model_hash = model_fingerprint(s);
  p.settings_hash = hex64(fnv1a64(to_json(set).dump()));
  return p;
}

inline std::vector<double> source(const ModelSpec& s, const Problem& p, const std::vector<double>& w, unsigned k_max) {
  std::vector<double> f(p.x.size());
  for (std::size_t j = 0; j < f.size(); ++j)
    f[j] = p.alpha[j] == 0 ? 0.0 : p.alpha[j] * generating_function(s, p.x[j], w[j], k_max);
  return f;
}

inline LcpResult linear_solve(const Problem& p, const SolverSettings& set, const std::vector<double>& f,
                              const std::vector<double>& g, const LcpResult* warm) {
  if (set.method == LinearSolver::howard)
    return solve_lcp_howard(p.A, f, g, warm ? warm->contact : std::vector<std::uint8_t>{});
  return solve_lcp_psor(p.A, f, g, warm ? warm->v : g, set.omega, set.tol_lin, set.max_sweeps);
}

inline double complementarity(const Tridiagonal& A, const std::vector<double>& v, const std::vector<double>& f,
                              const std::vector<double>& g, std::vector<double>& residual) {
  residual = multiply(A, v);
  double worst = 0;
  for (std::size_t j = 0; j < v.size(); ++j) {
    residual[j] -= f[j];
    if (j > 0 && j + 1 < v.size())
      worst = std::max(worst, std::abs(std::min(residual[j], v[j] - g[j])));
  }
  return worst;
}

struct LevelSolution {
  LcpResult lcp;
  std::vector<double> g, residual;
  LevelLog log;
};

/// Picard iteration w -> solution of the linear obstacle problem with
/// source alpha G(x, w), started from the value bound.
inline LevelSolution solve_fixed_point(const ModelSpec& s, const Problem& p, const SolverSettings& set,
                                       std::size_t level) {
  LevelSolution out;
  out.log.level = level;
  out.g.resize(p.x.size());
  for (std::size_t j = 0; j < p.x.size(); ++j)
    out.g[j] = s.reward1(level, p.x[j]);
  std::vector<double> w(p.x.size(), std::max(p.vbar, *std::max_element(out.g.begin(), out.g.end())));
  const bool constant_source = std::all_of(p.alpha.begin(), p.alpha.end(), [](double a) { return a == 0; });
  double prev = 0;
  LcpResult cur;
  bool have = false;
  for (std::size_t m = 0; m < set.max_outer; ++m) {
    const auto f = source(s, p, w, set.k_max);
    cur = linear_solve(p, set, f, out.g, have ? &cur : nullptr);
    have = true;
    OuterStep st;
    st.linear_iterations = cur.iterations;
    for (std::size_t j = 0; j < w.size(); ++j) {
      st.step = std::max(st.step, std::abs(cur.v[j] - w[j]));
      if (cur.v[j] > w[j] + 1e-14)
        st.monotone = false;
    }
    st.ratio = prev > 0 ? st.step / prev : 0.0;
    prev = st.step;
    out.log.outer.push_back(st);
    w = cur.v;
    if (st.step < set.tol_fp || constant_source) {
      const auto fin = source(s, p, w, set.k_max);
      out.log.linear_residual = complementarity(p.A, w, fin, out.g, out.residual);
      out.log.fixed_point_residual = constant_source ? 0.0 : st.step;
      out.lcp = std::move(cur);
      return out;
    }
  }
  throw ConvergenceError("fixed-point iteration exceeded " + std::to_string(set.max_outer) + " iterations");
}

inline ValueGrid make_grid(const Problem& p, const SolverSettings& set, std::size_t levels) {
  ValueGrid g;
  g.x = p.x;
  g.core_begin = p.core_begin;
  g.core_end = p.core_end;
  g.x_lo = set.x_lo;
  g.x_hi = set.x_hi;
  g.n_cells = set.n_cells;
  g.values.resize(levels);
  g.obstacle.resize(levels);
  g.residual.resize(levels);
  g.contact.resize(levels);
  g.model_hash = p.model_hash;
  g.settings_hash = p.settings_hash;
  g.value_bound = p.vbar;
  g.tail_budget = p.tail;
  g.warnings = p.warnings;
  return g;
}

inline void store(ValueGrid& g, std::size_t level, LevelSolution&& sol) {
  g.values[level] = std::move(sol.lcp.v);
  g.contact[level] = std::move(sol.lcp.contact);
  g.obstacle[level] = std::move(sol.g);
  g.residual[level] = std::move(sol.residual);
  g.log.push_back(std::move(sol.log));
}

} // namespace pde_detail

/// Single-level solve with g = g_D (the equal-reward reduction).
inline ValueGrid solve_scalar(const ModelSpec& s, const SolverSettings& set) {
  auto p = pde_detail::prepare(s, set);
  auto grid = pde_detail::make_grid(p, set, 1);
  pde_detail::store(grid, 0, pde_detail::solve_fixed_point(s, p, set, s.depth()));
  grid.solved = true;
  return grid;
}

/// Levels 0..D: level D by the fixed point, then one linear obstacle solve per
/// level with source alpha G(x, v_{n+1}).
inline ValueGrid solve_generation_system(const ModelSpec& s, const SolverSettings& set) {
  auto p = pde_detail::prepare(s, set);
  const std::size_t D = s.depth();
  auto grid = pde_detail::make_grid(p, set, D + 1);
  auto deep = pde_detail::solve_fixed_point(s, p, set, D);
  LcpResult warm = deep.lcp;
  pde_detail::store(grid, D, std::move(deep));
  for (std::size_t n = D; n-- > 0;) {
    pde_detail::LevelSolution sol;
    sol.log.level = n;
    sol.g.resize(p.x.size());
    for (std::size_t j = 0; j < p.x.size(); ++j)
      sol.g[j] = s.reward1(n, p.x[j]);
    const auto f = pde_detail::source(s, p, grid.values[n + 1], set.k_max);
    sol.lcp = pde_detail::linear_solve(p, set, f, sol.g, &warm);
    sol.log.outer.push_back({0.0, 0.0, true, sol.lcp.iterations});
    sol.log.linear_residual = pde_detail::complementarity(p.A, sol.lcp.v, f, sol.g, sol.residual);
    warm = sol.lcp;
    pde_detail::store(grid, n, std::move(sol));
  }
  std::reverse(grid.log.begin(), grid.log.end());
  grid.solved = true;
  return grid;
}

/// Solves every level; a depth-0 model gives the scalar solve.
inline ValueGrid solve(const ModelSpec& s, const SolverSettings& set) {
  return s.depth() == 0 ? solve_scalar(s, set) : solve_generation_system(s, set);
}

/// Contraction bound alpha_bar M_bar C / ((alpha_bar + gamma)(C - 1)) at C = V_bar.
inline double contraction_bound(const ModelSpec& s, const MomentReport& mr) {
  const double C = mr.value_bound;
  if (!(C > 1) || !std::isfinite(C))
    return kInf;
  return s.alpha_bar * mr.M_bar * C / ((s.alpha_bar + s.gamma) * (C - 1));
}

inline json solver_log_json(const ValueGrid& g) {
  json levels = json::array();
  const auto res = g.solved ? residual_report(g) : std::vector<LevelResiduals>{};
  for (std::size_t k = 0; k < g.log.size(); ++k) {
    const auto& l = g.log[k];
    json steps = json::array();
    for (const auto& st : l.outer)
      steps.push_back({{"step", st.step}, {"ratio", st.ratio}, {"monotone", st.monotone},
                       {"linear_iterations", st.linear_iterations}});
    json lj{{"level", l.level},
            {"outer_iterations", l.outer.size()},
            {"iterations", steps},
            {"linear_residual", l.linear_residual},
            {"fixed_point_residual", l.fixed_point_residual}};
    for (const auto& r : res)
      if (r.level == l.level) {
        lj["max_obstacle_violation"] = r.max_obstacle_violation;
        lj["max_free_residual"] = r.max_free_residual;
        lj["min_contact_residual"] = r.min_contact_residual;
        lj["contact_nodes"] = r.contact_nodes;
      }
    levels.push_back(lj);
  }
  return json{{"model_hash", g.model_hash},
              {"settings_hash", g.settings_hash},
              {"nodes", g.x.size()},
              {"value_bound", g.value_bound},
              {"series_tail_budget", g.tail_budget},
              {"levels", levels},
              {"warnings", g.warnings}};
}

} // namespace stopline
