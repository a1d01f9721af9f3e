#pragma once

#include <cmath>

#include "stopline/model.hpp"
#include "stopline/pde.hpp"

namespace testmodels {

using namespace stopline;

inline ModelSpec still(double a, Offspring law, RewardFn g, double gamma = 1.0, double alpha_bar = 0) {
  ModelSpec s;
  s.branch_rate = coef::ConstantRate{a};
  s.alpha_bar = alpha_bar > 0 ? alpha_bar : std::max(a, 1.0);
  s.offspring = law;
  s.rewards = {g};
  s.gamma = gamma;
  return s;
}

inline ModelSpec yule(double a = 1.0) { return still(a, coef::Deterministic{2}, coef::ConstantReward{1.0}); }

inline ModelSpec pure_death(double a, double c, double gamma) {
  return still(a, coef::Deterministic{0}, coef::ConstantReward{c}, gamma);
}

inline ModelSpec poisson_example() {
  auto s = still(0.3, coef::Poisson{coef::ConstantRate{0.5}}, coef::ConstantReward{1.0}, 1.0, 0.3);
  return s;
}

inline constexpr double kPutR = 0.05;
inline constexpr double kPutS = 0.4;

inline ModelSpec put_model() {
  ModelSpec s;
  s.drift = coef::Linear{kPutR};
  s.diffusion = coef::Linear{kPutS};
  s.branch_rate = coef::ConstantRate{0.0};
  s.alpha_bar = 1.0;
  s.offspring = coef::Deterministic{1};
  s.gamma = kPutR;
  s.rewards = {coef::PutReward{1.0}};
  s.k_g = 1.0;
  return s;
}

inline SolverSettings put_settings() {
  SolverSettings set;
  set.x_lo = 1e-3;
  set.x_hi = 4.0;
  set.n_cells = 2000;
  set.upper = Boundary::far_field;
  return set;
}

/// Perpetual American put: (K - x*)(x/x*)^{-beta} above x*, K - x below.
struct PutOracle {
  double K = 1.0;
  double beta = 2 * kPutR / (kPutS * kPutS);
  double x_star = beta * K / (beta + 1);
  double operator()(double x) const { return x <= x_star ? K - x : (K - x_star) * std::pow(x / x_star, -beta); }
};

inline ModelSpec bump_model(double gamma = 0.5, double k_g = 1.0, double alpha = 1.0) {
  ModelSpec s;
  s.drift = coef::Constant{{0.0}};
  s.diffusion = coef::Constant{{0.5}};
  s.branch_rate = coef::ConstantRate{alpha};
  s.alpha_bar = alpha;
  s.offspring = coef::Binary{0.5, 0.5};
  s.gamma = gamma;
  s.rewards = {coef::BumpReward{0.8, 0.0, 1.0}};
  s.k_g = k_g;
  return s;
}

inline SolverSettings bump_settings() {
  SolverSettings set;
  set.x_lo = -6;
  set.x_hi = 6;
  set.n_cells = 600;
  return set;
}

} // namespace testmodels
