// Solves the Gaussian-bump obstacle problem for binary branching Brownian
// motion and compares the grid value with Monte Carlo estimates of the
// contact-set rule and a few fixed rules.

#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "stopline/format.hpp"
#include "stopline/pde.hpp"
#include "stopline/reward.hpp"
#include "stopline/stopping.hpp"

using namespace stopline;

int main(int argc, char** argv) {
  const std::size_t reps = argc > 1 ? std::stoul(argv[1]) : 4000;

  ModelSpec s;
  s.drift = coef::Constant{{0.0}};
  s.diffusion = coef::Constant{{0.5}};
  s.branch_rate = coef::ConstantRate{1.0};
  s.alpha_bar = 1.0;
  s.offspring = coef::Binary{0.5, 0.5};
  s.gamma = 0.5;
  s.rewards = {coef::BumpReward{0.8, 0.0, 1.0}};

  SolverSettings set;
  set.x_lo = -6;
  set.x_hi = 6;
  set.n_cells = 600;
  const auto grid = std::make_shared<const ValueGrid>(solve(s, set));
  std::cout << "picard iterations: " << grid->log[0].outer.size() << '\n';

  McSettings mc;
  mc.reps = reps;
  mc.seed = 42;
  const double cut = default_t_cut(s);
  const std::vector<StoppingRule> rs{contact_set_rule(grid, 1e-9, cut),
                                     {rules::TrivialRoot{}, cut},
                                     {rules::FirstBranch{}, cut},
                                     {rules::FixedTime{1.0}, cut}};

  for (double x : {-2.0, -1.0, 0.0, 1.0, 2.0}) {
    std::cout << "x = " << fmt_short(x) << "  v = " << fmt_short(grid->value(0, x))
              << (grid->value(0, x) <= s.reward1(0, x) + 1e-9 ? "  (contact)" : "") << '\n';
    for (const auto& r : rs) {
      const auto e = mc_value(s, r, {Label{}, {x}}, mc);
      std::cout << "    " << rule_name(r) << ": " << fmt_short(e.mean) << " +- " << fmt_short(e.std_error) << '\n';
    }
  }
}
