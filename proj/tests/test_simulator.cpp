#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <sstream>
#include <vector>

#include "models.hpp"
#include "stopline/simulator.hpp"

using namespace stopline;

namespace {

struct Moments {
  double mean = 0, var = 0, se = 0;
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  for (double x : v)
    m.mean += x;
  m.mean /= double(v.size());
  for (double x : v)
    m.var += (x - m.mean) * (x - m.mean);
  m.var /= double(v.size() - 1);
  m.se = std::sqrt(m.var / double(v.size()));
  return m;
}

SimulationSettings settings(double horizon, std::uint64_t seed, double dt = 1e-2) {
  SimulationSettings s;
  s.horizon = horizon;
  s.dt = dt;
  s.seed = seed;
  return s;
}

bool antichain_at(const GenealogyRecord& r, double t) {
  std::vector<Label> alive;
  for (const auto& p : r.particles)
    if (p.birth_time <= t && t < p.end_time)
      alive.push_back(p.label);
  return is_antichain(alive);
}

} // namespace

TEST(Simulator, NoBranchingSingleParticle) {
  auto s = testmodels::still(0.0, coef::Deterministic{2}, coef::ConstantReward{1.0});
  const auto r = simulate_forest(s, Label{}, {0.0}, settings(5.0, 3));
  ASSERT_EQ(r.particles.size(), 1u);
  EXPECT_EQ(r.particles[0].end_kind, EndKind::alive_at_horizon);
  for (double t : {0.0, 1.0, 4.99, 5.0})
    EXPECT_EQ(population_count(r, t), 1u);
}

TEST(Simulator, ExponentialDeathTime) {
  const auto s = testmodels::pure_death(1.0, 1.0, 1.0);
  std::vector<double> ends;
  for (std::uint64_t k = 0; k < 10000; ++k) {
    const auto r = simulate_forest(s, Label{}, {0.0}, settings(200.0, replication_seed(7, k), 1.0));
    ASSERT_EQ(r.particles.size(), 1u);
    ASSERT_EQ(r.particles[0].end_kind, EndKind::branched);
    ends.push_back(r.particles[0].end_time);
    EXPECT_EQ(total_born(r, std::min(200.0, r.particles[0].end_time + 1)), 1u);
  }
  const auto m = moments(ends);
  EXPECT_LE(std::abs(m.mean - 1.0), 3 * m.se);
}

TEST(Simulator, YuleMean) {
  const auto s = testmodels::yule(1.0);
  std::vector<double> n;
  for (std::uint64_t k = 0; k < 10000; ++k)
    n.push_back(double(population_count(simulate_forest(s, Label{}, {0.0}, settings(1.0, replication_seed(11, k))), 1.0)));
  const auto m = moments(n);
  EXPECT_LE(std::abs(m.mean - std::exp(1.0)), 3 * m.se) << m.mean;
}

TEST(Simulator, CountsAfterOneBranch) {
  const auto s = testmodels::yule(1.0);
  for (std::uint64_t k = 0; k < 500; ++k) {
    const auto r = simulate_forest(s, Label{}, {0.0}, settings(1.0, k));
    if (r.particles.size() != 3)
      continue;
    const double b = r.particles[0].end_time;
    EXPECT_EQ(population_count(r, b), 2u);
    EXPECT_EQ(total_born(r, b), 3u);
    EXPECT_EQ(total_born(r, 1.0), 3u);
    return;
  }
  FAIL() << "no forest with exactly one branch";
}

TEST(Simulator, CountRangeChecked) {
  const auto r = simulate_forest(testmodels::yule(), Label{}, {0.0}, settings(1.0, 1));
  EXPECT_THROW(population_count(r, -0.1), std::out_of_range);
  EXPECT_THROW(total_born(r, 1.1), std::out_of_range);
}

TEST(Simulator, ThinningRejectionFraction) {
  auto full = testmodels::still(2.0, coef::Deterministic{1}, coef::ConstantReward{1.0}, 1.0, 2.0);
  auto half = testmodels::still(1.0, coef::Deterministic{1}, coef::ConstantReward{1.0}, 1.0, 2.0);
  std::uint64_t prop = 0, rej = 0;
  for (std::uint64_t k = 0; prop < 100000; ++k) {
    const auto r = simulate_forest(full, Label{}, {0.0}, settings(100.0, k, 1.0));
    prop += r.proposals;
    rej += r.rejections;
  }
  EXPECT_EQ(rej, 0u);
  prop = rej = 0;
  for (std::uint64_t k = 0; prop < 100000; ++k) {
    const auto r = simulate_forest(half, Label{}, {0.0}, settings(100.0, k, 1.0));
    prop += r.proposals;
    rej += r.rejections;
  }
  const double f = double(rej) / double(prop);
  EXPECT_LE(std::abs(f - 0.5), 3 * std::sqrt(0.25 / double(prop))) << f;
}

TEST(Simulator, BinaryOffspringChiSquare) {
  auto s = testmodels::still(1.0, coef::Binary{0.5, 0.5}, coef::ConstantReward{1.0});
  std::vector<double> obs(3, 0);
  std::size_t events = 0;
  for (std::uint64_t k = 0; events < 200000; ++k) {
    const auto r = simulate_forest(s, Label{}, {0.0}, settings(3.0, replication_seed(13, k)));
    for (const auto& q : r.particles)
      if (q.end_kind == EndKind::branched) {
        obs.at(q.offspring) += 1;
        ++events;
      }
  }
  const double e = double(events) / 2;
  const double chi = (obs[0] - e) * (obs[0] - e) / e + (obs[2] - e) * (obs[2] - e) / e;
  EXPECT_EQ(obs[1], 0);
  EXPECT_LT(chi, boost::math::quantile(boost::math::chi_squared(1), 0.99));
}

TEST(Simulator, PoissonOffspringChiSquare) {
  const double lam = 0.5;
  auto s = testmodels::still(1.0, coef::Poisson{coef::ConstantRate{lam}}, coef::ConstantReward{1.0});
  // Cells {0}, {1}, {2}, {>=3}; probabilities from the pmf recurrence.
  std::vector<double> pk{std::exp(-lam)};
  for (int k = 1; k < 3; ++k)
    pk.push_back(pk.back() * lam / k);
  pk.push_back(1 - pk[0] - pk[1] - pk[2]);
  std::vector<double> obs(4, 0);
  std::size_t events = 0;
  for (std::uint64_t k = 0; events < 20000; ++k) {
    const auto r = simulate_forest(s, Label{}, {0.0}, settings(5.0, replication_seed(17, k)));
    for (const auto& q : r.particles)
      if (q.end_kind == EndKind::branched) {
        obs[std::min(q.offspring, 3u)] += 1;
        ++events;
      }
  }
  double chi = 0;
  for (std::size_t c = 0; c < 4; ++c) {
    const double e = pk[c] * double(events);
    chi += (obs[c] - e) * (obs[c] - e) / e;
  }
  EXPECT_LT(chi, boost::math::quantile(boost::math::chi_squared(3), 0.99)) << chi;
}

TEST(Simulator, EulerWeakError) {
  auto s = testmodels::still(0.0, coef::Deterministic{1}, coef::ConstantReward{1.0});
  s.drift = coef::Constant{{0.3}};
  s.diffusion = coef::Constant{{0.7}};
  const double t = 1.0, x0 = 0.5;
  for (double dt : {1e-2, 1e-3}) {
    std::vector<double> xs;
    for (std::uint64_t k = 0; k < 4000; ++k) {
      const auto r = simulate_forest(s, Label{}, {x0}, settings(t, replication_seed(19, k), dt));
      xs.push_back(r.particles[0].last_position(1)[0]);
      ASSERT_DOUBLE_EQ(r.particles[0].times.back(), t);
    }
    const auto m = moments(xs);
    EXPECT_LE(std::abs(m.mean - (x0 + 0.3 * t)), 3 * m.se);
    // Var of the sample variance for Gaussian data: 2 sigma^4 / (n - 1).
    const double v = 0.49 * t;
    EXPECT_LE(std::abs(m.var - v), 3 * std::sqrt(2 * v * v / double(xs.size() - 1)));
  }
}

TEST(Simulator, GridAnchoredAtBirth) {
  auto s = testmodels::yule(2.0);
  s.diffusion = coef::Constant{{1.0}};
  const auto r = simulate_forest(s, Label{}, {0.0}, settings(2.0, 23, 0.1));
  for (const auto& p : r.particles) {
    ASSERT_GE(p.samples(), 1u);
    EXPECT_DOUBLE_EQ(p.times.front(), p.birth_time);
    for (std::size_t k = 1; k + 1 < p.samples(); ++k)
      EXPECT_NEAR(p.times[k] - p.birth_time, 0.1 * double(k), 1e-9);
    if (p.parent) {
      const auto& m = r.at(*p.parent);
      EXPECT_DOUBLE_EQ(p.birth_time, m.end_time);
      EXPECT_DOUBLE_EQ(p.first_position(1)[0], m.last_position(1)[0]);
    }
  }
}

TEST(Simulator, Deterministic) {
  auto s = testmodels::bump_model();
  const auto a = simulate_forest(s, Label{}, {0.2}, settings(3.0, 99));
  const auto b = simulate_forest(s, Label{}, {0.2}, settings(3.0, 99));
  std::ostringstream fa, fb, pa, pb;
  write_forest_csv(fa, a);
  write_forest_csv(fb, b);
  write_paths_csv(pa, a);
  write_paths_csv(pb, b);
  EXPECT_EQ(fa.str(), fb.str());
  EXPECT_EQ(pa.str(), pb.str());
  const auto c = simulate_forest(s, Label{}, {0.2}, settings(3.0, 100));
  std::ostringstream fc;
  write_paths_csv(fc, c);
  EXPECT_NE(pa.str(), fc.str());
}

TEST(Simulator, SubtreeIndependentOfSiblings) {
  // The first child's subtree depends only on its own streams and birth state.
  auto s = testmodels::bump_model();
  for (std::uint64_t k = 0; k < 50; ++k) {
    const auto r = simulate_forest(s, Label{}, {0.0}, settings(4.0, k));
    const auto* c = r.find(Label{0});
    if (!c)
      continue;
    SimulationSettings ss = settings(4.0, k);
    ss.start_time = c->birth_time;
    if (ss.horizon - ss.start_time <= ss.dt)
      continue;
    const auto sub = simulate_forest(s, Label{0}, Point{c->first_position(1)[0]}, ss);
    for (const auto& p : sub.particles) {
      const auto& q = r.at(p.label);
      EXPECT_EQ(p.end_time, q.end_time);
      EXPECT_EQ(p.positions, q.positions);
    }
  }
}

TEST(Simulator, AntichainAtEveryEvent) {
  auto s = testmodels::still(1.5, coef::Poisson{coef::ConstantRate{0.5}}, coef::ConstantReward{1.0}, 1.0, 1.5);
  for (std::uint64_t k = 0; k < 100; ++k) {
    const auto r = simulate_forest(s, {{Label{0}, {0.0}}, {Label{1, 2}, {1.0}}}, settings(2.0, k));
    for (const auto& p : r.particles)
      if (p.end_time <= 2.0)
        EXPECT_TRUE(antichain_at(r, p.end_time));
  }
}

TEST(Simulator, RejectsBadInput) {
  auto s = testmodels::yule();
  EXPECT_THROW(simulate_forest(s, {{Label{0}, {0.0}}, {Label{0, 1}, {0.0}}}, settings(1.0, 1)),
               std::invalid_argument);
  EXPECT_THROW(simulate_forest(s, Label{}, {0.0}, settings(1.0, 1, 1.0)), std::invalid_argument);
  EXPECT_THROW(simulate_forest(s, Label{}, {0.0}, settings(0.0, 1)), std::invalid_argument);
}

TEST(Simulator, StrideKeepsEventSamples) {
  auto s = testmodels::yule(2.0);
  s.diffusion = coef::Constant{{1.0}};
  auto set = settings(2.0, 31, 0.01);
  const auto full = simulate_forest(s, Label{}, {0.0}, set);
  set.stride = 7;
  const auto thin = simulate_forest(s, Label{}, {0.0}, set);
  ASSERT_EQ(full.particles.size(), thin.particles.size());
  for (std::size_t i = 0; i < full.particles.size(); ++i) {
    const auto& a = full.particles[i];
    const auto& b = thin.particles[i];
    EXPECT_EQ(a.end_time, b.end_time);
    EXPECT_LT(b.samples(), a.samples() + 1);
    EXPECT_EQ(a.times.front(), b.times.front());
    EXPECT_EQ(a.times.back(), b.times.back());
    EXPECT_EQ(a.last_position(1)[0], b.last_position(1)[0]);
  }
}

TEST(Simulator, PrunedRecordMatchesFullUpToDeadline) {
  auto s = testmodels::bump_model();
  PruneHook hook;
  hook.deadline = [](const Label&, bool, double birth) { return birth + 0.5; };
  for (std::uint64_t k = 0; k < 30; ++k) {
    const auto full = simulate_forest(s, Label{}, {0.0}, settings(3.0, k));
    const auto cut = simulate_forest(s, Label{}, {0.0}, settings(3.0, k), &hook);
    for (const auto& p : cut.particles) {
      const auto& q = full.at(p.label);
      ASSERT_LE(p.samples(), q.samples());
      for (std::size_t j = 0; j < p.samples(); ++j) {
        EXPECT_EQ(p.times[j], q.times[j]);
        EXPECT_EQ(p.positions[j], q.positions[j]);
      }
      if (p.end_kind == EndKind::truncated)
        EXPECT_GE(p.times.back(), p.birth_time + 0.5 - 1e-12);
    }
  }
}

TEST(Simulator, MomentBoundTrivialCases) {
  const auto s = testmodels::poisson_example();
  const auto one = empirical_moment_bound_check(s, 1.0, 1.0, 200, 3);
  EXPECT_DOUBLE_EQ(one.empirical_mean, 1.0);
  EXPECT_DOUBLE_EQ(one.bound, 1.0);
  EXPECT_TRUE(one.pass);
  const auto half = empirical_moment_bound_check(s, 0.5, 1.0, 200, 3);
  EXPECT_LE(half.empirical_mean, 1.0);
  EXPECT_DOUBLE_EQ(half.bound, 1.0);
  EXPECT_TRUE(half.pass);
}

TEST(Simulator, ForestCsvColumns) {
  const auto r = simulate_forest(testmodels::yule(), Label{}, {0.0}, settings(1.0, 2));
  std::ostringstream os;
  write_forest_csv(os, r);
  const auto head = os.str().substr(0, os.str().find('\n'));
  EXPECT_EQ(head, "label,parent,birth_time,end_time,end_kind,k,x_birth_0,x_end_0");
}
