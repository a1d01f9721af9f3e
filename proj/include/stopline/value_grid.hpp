#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "stopline/format.hpp"

namespace stopline {

struct OuterStep {
  double step = 0;   // sup |w^{m+1} - w^m|
  double ratio = 0;  // step / previous step (0 on the first iteration)
  bool monotone = true;
  std::size_t linear_iterations = 0;
};

struct LevelLog {
  std::size_t level = 0;
  std::vector<OuterStep> outer; // one entry for a single linear solve
  double linear_residual = 0;   // max |min(Av - f, v - g)|
  double fixed_point_residual = 0;
};

/// Solution of the one-dimensional obstacle system on a (possibly stretched)
/// node set. Nodes [core_begin, core_end] cover the requested domain; nodes
/// outside that range belong to far-field tails.
struct ValueGrid {
  std::vector<double> x;
  std::size_t core_begin = 0;
  std::size_t core_end = 0;
  double x_lo = 0;
  double x_hi = 0;
  std::size_t n_cells = 0;

  std::vector<std::vector<double>> values;   // per generation 0..D
  std::vector<std::vector<double>> obstacle; // g_n at the nodes
  std::vector<std::vector<double>> residual; // (A v - f) at the nodes
  std::vector<std::vector<std::uint8_t>> contact;

  std::string model_hash;
  std::string settings_hash;
  double value_bound = 0;
  double tail_budget = 0;
  std::vector<LevelLog> log;
  std::vector<std::string> warnings;
  bool solved = false;

  [[nodiscard]] std::size_t depth() const noexcept { return values.empty() ? 0 : values.size() - 1; }
  [[nodiscard]] std::size_t level_of(std::size_t generation) const noexcept { return std::min(generation, depth()); }
  [[nodiscard]] bool covers(double p) const noexcept { return !x.empty() && p >= x.front() && p <= x.back(); }
  [[nodiscard]] double core_step() const noexcept { return (x_hi - x_lo) / double(n_cells); }

  /// Piecewise-linear interpolation of a nodal field; the caller checks covers().
  [[nodiscard]] double interpolate(const std::vector<double>& f, double p) const {
    auto it = std::upper_bound(x.begin(), x.end(), p);
    if (it == x.begin())
      return f.front();
    if (it == x.end())
      return f.back();
    const auto j = static_cast<std::size_t>(it - x.begin());
    const double w = (p - x[j - 1]) / (x[j] - x[j - 1]);
    return (1 - w) * f[j - 1] + w * f[j];
  }

  [[nodiscard]] double value(std::size_t generation, double p) const {
    return interpolate(values.at(level_of(generation)), p);
  }
  [[nodiscard]] double gap(std::size_t generation, double p) const {
    const auto n = level_of(generation);
    return interpolate(values.at(n), p) - interpolate(obstacle.at(n), p);
  }
};

struct LevelResiduals {
  std::size_t level = 0;
  double max_obstacle_violation = 0;   // max (g - v)^+
  double max_free_residual = 0;        // max |A v - f| off the contact set
  double min_contact_residual = 0;     // min (A v - f) on the contact set
  std::size_t contact_nodes = 0;
  std::size_t contact_core_nodes = 0;
};

/// Complementarity statistics per level; Dirichlet end nodes are excluded
/// from the residual terms since their rows are v = g by construction.
inline std::vector<LevelResiduals> residual_report(const ValueGrid& g) {
  if (!g.solved)
    throw std::logic_error("residual_report: grid has not been solved");
  std::vector<LevelResiduals> out;
  const std::size_t n = g.x.size();
  for (std::size_t l = 0; l < g.values.size(); ++l) {
    LevelResiduals r;
    r.level = l;
    r.min_contact_residual = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      const double v = g.values[l][j], ob = g.obstacle[l][j];
      r.max_obstacle_violation = std::max(r.max_obstacle_violation, ob - v);
      if (g.contact[l][j]) {
        ++r.contact_nodes;
        if (j >= g.core_begin && j <= g.core_end)
          ++r.contact_core_nodes;
      }
      if (j == 0 || j + 1 == n)
        continue;
      const double res = g.residual[l][j];
      if (g.contact[l][j])
        r.min_contact_residual = std::min(r.min_contact_residual, res);
      else
        r.max_free_residual = std::max(r.max_free_residual, std::abs(res));
    }
    if (r.min_contact_residual == std::numeric_limits<double>::infinity())
      r.min_contact_residual = 0;
    out.push_back(r);
  }
  return out;
}

/// Columns n, x, v, g, contact; one row per node and level.
inline void write_grid_csv(std::ostream& os, const ValueGrid& g) {
  os << "n,x,v,g,contact\n";
  for (std::size_t l = 0; l < g.values.size(); ++l)
    for (std::size_t j = 0; j < g.x.size(); ++j)
      os << l << ',' << fmt(g.x[j]) << ',' << fmt(g.values[l][j]) << ',' << fmt(g.obstacle[l][j]) << ','
         << int(g.contact[l][j]) << '\n';
}

} // namespace stopline
