#include "doctest.h"

#include <cmath>
#include <set>
#include <sstream>

#include "dvlab/errors.hpp"
#include "dvlab/finite_oracle.hpp"
#include "dvlab/io.hpp"
#include "dvlab/rds_core.hpp"
#include "dvlab/rng.hpp"
#include "test_support.hpp"

using namespace dvlab;

namespace {

RandomSystem scalar_system(StepFunction step, double lip) {
  return RandomSystem{RdsMap{euclidean_space("R", 2.0), std::move(step), lip},
                      NoiseSource{"uniform[0,1)", [](Rng& r) { return NoiseSample{r.uniform()}; }}};
}

}  // namespace

TEST_CASE("philox matches the Random123 known-answer vectors") {
  const auto zero = Philox::generate({0, 0, 0, 0}, {0, 0});
  CHECK(zero[0] == 0x6627e8d5u);
  CHECK(zero[1] == 0xe169c58du);
  CHECK(zero[2] == 0xbc57ac4cu);
  CHECK(zero[3] == 0x9b00dbd8u);
  const auto pi = Philox::generate({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
  CHECK(pi[0] == 0xd16cfe09u);
  CHECK(pi[1] == 0x94fdccebu);
  CHECK(pi[2] == 0x5001e420u);
  CHECK(pi[3] == 0x24126ea1u);
}

TEST_CASE("streams are reproducible and distinct") {
  Rng a(7, 3), b(7, 3), c(7, 4);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 100; ++i) {
    const auto x = a();
    CHECK(x == b());
    seen.insert(c());
  }
  CHECK(seen.size() == 100);
  Rng u(1, 1);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("simulate_trajectory: identity and pure-noise maps") {
  const auto ident = scalar_system([](std::span<const double> x, std::span<const double>) {
    return std::vector<double>(x.begin(), x.end());
  }, 1.0);
  const Point x0 = make_point({0.25}, "R");
  const auto traj = simulate_trajectory(ident.map, ident.noise, x0, 5, 11);
  REQUIRE(traj.size() == 5);
  for (const auto& p : traj) CHECK(p == x0);

  const auto noise_only = scalar_system([](std::span<const double>, std::span<const double> z) {
    return std::vector<double>{z[0]};
  }, 0.0);
  const auto t2 = simulate_trajectory(noise_only.map, noise_only.noise, x0, 3, 42);
  Rng stream(42, 0);
  for (const auto& p : t2) CHECK(p.coords[0] == stream.uniform());
}

TEST_CASE("simulate_trajectory rejects bad input and reports blow-up step") {
  const auto blow = scalar_system([](std::span<const double> x, std::span<const double>) {
    return std::vector<double>{x[0] * 1e200};
  }, 1e200);
  const Point x0 = make_point({1.0}, "R");
  CHECK_THROWS_AS(simulate_trajectory(blow.map, blow.noise, x0, 0, 1), InvalidArgument);
  try {
    simulate_trajectory(blow.map, blow.noise, x0, 5, 1);
    FAIL("expected blow-up");
  } catch (const SimulationError& e) {
    CHECK(e.step() == 2);
  }
  CHECK_THROWS_AS(make_point({std::nan("")}, "R"), InvalidArgument);
  CHECK_THROWS_AS(simulate_trajectory(blow.map, blow.noise, make_point({1.0}, "S"), 3, 1), InvalidArgument);
}

TEST_CASE("two-state chain visit frequency matches the stationary mass") {
  const auto chain = test_support::bundled_chain();
  const auto sys = chain.as_random_system();
  const long n = 100000;
  const auto traj = simulate_trajectory(sys.map, sys.noise, chain.state(0), n, 2024);
  long visits = 0;
  for (const auto& p : traj) visits += chain.index_of(p) == 0;
  const double freq = static_cast<double>(visits) / n;
  // pi solves pi P = pi: pi = (4/7, 3/7). Asymptotic variance of the visit
  // frequency for a two-state chain: pi1 pi2 (1 + r) / (1 - r) / n, r = 0.3.
  const double pi1 = 4.0 / 7.0;
  const double r = 0.3;
  const double se = std::sqrt(pi1 * (1 - pi1) * (1 + r) / (1 - r) / n);
  CHECK(std::abs(freq - pi1) < 3 * se);
}

TEST_CASE("empirical_distribution coalesces equal states") {
  const Point a = make_point({0.0}, "R"), b = make_point({1.0}, "R");
  const std::vector<Point> traj{a, b, a};
  const auto m = empirical_distribution(traj);
  CHECK(m.atoms().size() == 2);
  CHECK(m.mass_at(a.coords) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(m.mass_at(b.coords) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(std::abs(m.total_weight() - 1.0) <= 1e-12);

  const auto single = empirical_distribution(std::vector<Point>{a});
  CHECK(single.atoms().size() == 1);
  CHECK(single.total_weight() == 1.0);

  CHECK_THROWS_AS(empirical_distribution(std::vector<Point>{}), InvalidArgument);
}

TEST_CASE("empirical weights sum to one on long chains") {
  const auto chain = test_support::random_chain(5, 99);
  const auto sys = chain.as_random_system();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto traj = simulate_trajectory(sys.map, sys.noise, chain.state(0), 9973, seed);
    CHECK(std::abs(empirical_distribution(traj).total_weight() - 1.0) <= 1e-12);
  }
}

TEST_CASE("dual_lipschitz_distance basics") {
  const auto space = euclidean_space("R", 2.0);
  const Point a = make_point({0.5}, "R"), b = make_point({-1.0}, "R");
  ObservableDictionary dict;
  dict.entries.push_back({"dist_to_b", [&](const Point& p) { return space.distance(p, b); }, 1.0 + space.diameter});
  const auto ma = empirical_distribution(std::vector<Point>{a});
  const auto mb = empirical_distribution(std::vector<Point>{b});
  CHECK(dual_lipschitz_distance(ma, ma, dict) == 0.0);
  CHECK(dual_lipschitz_distance(ma, mb, dict) == doctest::Approx(1.5 / 3.0).epsilon(1e-15));
  CHECK(dual_lipschitz_distance(mb, ma, dict) == dual_lipschitz_distance(ma, mb, dict));

  // Monotone as the dictionary grows.
  ObservableDictionary bigger = dict;
  bigger.entries.push_back({"x", [](const Point& p) { return std::sin(p.coords[0]); }, 2.0});
  CHECK(dual_lipschitz_distance(ma, mb, bigger) >= dual_lipschitz_distance(ma, mb, dict));
  CHECK(audit_dictionary(bigger, space, std::vector<Point>{a, b, make_point({0.0}, "R")}) <= 1.0);

  const auto other = empirical_distribution(std::vector<Point>{make_point({0.5}, "S")});
  CHECK_THROWS_AS(dual_lipschitz_distance(ma, other, dict), InvalidArgument);
  CHECK_THROWS_AS(dual_lipschitz_distance(ma, mb, ObservableDictionary{}), InvalidArgument);
}

TEST_CASE("long-run empirical measures from different starts are close") {
  const auto chain = test_support::bundled_chain();
  const auto sys = chain.as_random_system();
  const auto t0 = simulate_trajectory(sys.map, sys.noise, chain.state(0), 100000, 5);
  const auto t1 = simulate_trajectory(sys.map, sys.noise, chain.state(1), 100000, 6);
  ObservableDictionary dict;
  for (int s = 0; s < 2; ++s)
    dict.entries.push_back({"1_" + std::to_string(s), [&chain, s](const Point& p) { return chain.index_of(p) == s ? 1.0 : 0.0; },
                            1.0 + 1.0});
  CHECK(dual_lipschitz_distance(empirical_distribution(t0), empirical_distribution(t1), dict) <= 5e-2);
}

TEST_CASE("irreducibility probe") {
  SUBCASE("fixed map hits its fixed point with probability one") {
    const auto fixed = scalar_system([](std::span<const double>, std::span<const double>) {
      return std::vector<double>{0.3};
    }, 0.0);
    const std::vector<Point> xs{make_point({-1.0}, "R"), make_point({1.0}, "R")};
    const std::vector<Point> ys{make_point({0.3}, "R")};
    const auto rep = irreducibility_probe(fixed, xs, ys, 1e-6, 1, 20, 3);
    CHECK(rep.min_hit == 1.0);
  }
  SUBCASE("pure noise map reaches every ball") {
    const auto noise_only = scalar_system([](std::span<const double>, std::span<const double> z) {
      return std::vector<double>{z[0]};
    }, 0.0);
    const std::vector<Point> xs{make_point({0.0}, "R")};
    const std::vector<Point> ys{make_point({0.1}, "R"), make_point({0.5}, "R"), make_point({0.9}, "R")};
    const long trials = 20000;
    const auto rep = irreducibility_probe(noise_only, xs, ys, 0.05, 1, trials, 4);
    for (double p : rep.hit[0]) {
      CHECK(p > 0.0);
      CHECK(std::abs(p - 0.1) < 3 * std::sqrt(0.1 * 0.9 / trials));
    }
  }
  SUBCASE("finite chain with positive P, N = 1") {
    const auto chain = test_support::random_chain(3, 17);
    const auto sys = chain.as_random_system();
    std::vector<Point> states;
    for (int i = 0; i < 3; ++i) states.push_back(chain.state(i));
    const long trials = 20000;
    // eps below the smallest distance: the ball is the singleton.
    const auto rep = irreducibility_probe(sys, states, states, 0.5, 1, trials, 8);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        const double p = chain.transition()(i, j);
        CHECK(std::abs(rep.hit[i][j] - p) < 3 * std::sqrt(p * (1 - p) / trials) + 1e-12);
      }
  }
}

TEST_CASE("lipschitz audit catches understated constants") {
  const auto contraction = scalar_system([](std::span<const double> x, std::span<const double> z) {
    return std::vector<double>{0.5 * x[0] + z[0]};
  }, 0.5);
  std::vector<std::pair<Point, Point>> pairs{{make_point({0.0}, "R"), make_point({1.0}, "R")},
                                             {make_point({0.2}, "R"), make_point({0.21}, "R")}};
  auto audit = audit_map_lipschitz(contraction, pairs, 50, 1);
  CHECK(audit.violations == 0);
  CHECK(audit.max_quotient == doctest::Approx(0.5));
  auto understated = contraction;
  understated.map.lip_bound = 0.4;
  CHECK(audit_map_lipschitz(understated, pairs, 50, 1).violations == 100);
}

TEST_CASE("trajectory and measure CSV carry full precision") {
  const std::vector<Point> traj{make_point({0.1, 1.0 / 3.0}, "R2"), make_point({2.0, -1e-17}, "R2")};
  std::ostringstream os;
  write_trajectory_csv(os, traj);
  CHECK(os.str() == "k,x_0,x_1\n1,0.10000000000000001,0.33333333333333331\n2,2,-1.0000000000000001e-17\n");
  std::ostringstream ms;
  write_measure_csv(ms, empirical_distribution(traj));
  CHECK(ms.str().rfind("weight,x_0,x_1\n0.5,", 0) == 0);
  CHECK(std::stod(format_double(1.0 / 7.0)) == 1.0 / 7.0);
}
