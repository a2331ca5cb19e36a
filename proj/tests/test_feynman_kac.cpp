#include "doctest.h"

#include <cmath>
#include <sstream>

#include "dvlab/feynman_kac.hpp"
#include "test_support.hpp"

using namespace dvlab;
using namespace dvlab::fk;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

StateFunction one() {
  return [](const Point&) { return 1.0; };
}

StateFunction from_vector(const finite::FiniteChain& chain, Eigen::VectorXd values) {
  return [&chain, values](const Point& p) { return values(chain.index_of(p)); };
}

// Perron data from a full eigen-decomposition (independent of perron_triple).
struct EigenOracle {
  double lambda;
  Eigen::VectorXd h;   // normalized with <h, mu> = 1
  Eigen::VectorXd mu;  // probability vector
};

EigenOracle eigen_oracle(const Eigen::MatrixXd& Q) {
  auto dominant = [](const Eigen::MatrixXd& A) {
    Eigen::EigenSolver<Eigen::MatrixXd> es(A);
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < es.eigenvalues().size(); ++i)
      if (es.eigenvalues()(i).real() > es.eigenvalues()(best).real()) best = i;
    Eigen::VectorXd v = es.eigenvectors().col(best).real();
    if (v.sum() < 0) v = -v;
    return std::make_pair(es.eigenvalues()(best).real(), v);
  };
  auto [lambda, h] = dominant(Q);
  auto [lt, mu] = dominant(Q.transpose());
  (void)lt;
  mu /= mu.sum();
  h /= h.dot(mu);
  return {lambda, h, mu};
}

}  // namespace

TEST_CASE("fk_apply: trivial cases") {
  const Kernel k(test_support::random_chain(3, 2));
  for (auto backend : {Backend::exact, Backend::mc}) {
    const auto t = fk_apply(k, Potential::constant(0.0), one(), 7, backend, {}, McOptions{50, 1, 1});
    for (std::size_t i = 0; i < 3; ++i) CHECK(t.value(i) == doctest::Approx(1.0).epsilon(1e-14));
  }
  const Eigen::VectorXd f = vec({0.5, -2.0, 3.0});
  const auto t0 = fk_apply(k, Potential::on_chain(k.chain(), vec({1, 2, 3})), from_vector(k.chain(), f), 0,
                           Backend::exact);
  for (std::size_t i = 0; i < 3; ++i) CHECK(t0.value(i) == f(static_cast<Eigen::Index>(i)));
}

TEST_CASE("fk_apply: exact backend against brute force, semigroup law and positivity") {
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const auto chain = test_support::random_chain(3, s);
    const Kernel k(chain);
    const Eigen::VectorXd v = test_support::random_vector(3, 10 + s, -1, 1);
    const Eigen::VectorXd f = test_support::random_vector(3, 20 + s, 0.1, 1);
    const auto V = Potential::on_chain(chain, v);
    const auto t6 = fk_apply(k, V, from_vector(chain, f), 6, Backend::exact);
    for (int x = 0; x < 3; ++x) {
      const double bf = finite::brute_force_fk(chain, v, f, x, 6);
      CHECK(std::abs(t6.value(static_cast<std::size_t>(x)) - bf) <= 1e-12 * bf);
      CHECK(t6.value(static_cast<std::size_t>(x)) > 0.0);
    }
    // Q_{4+6} f = Q_4 (Q_6 f)
    Eigen::VectorXd q6(3);
    for (int x = 0; x < 3; ++x) q6(x) = t6.value(static_cast<std::size_t>(x));
    const auto composed = fk_apply(k, V, from_vector(chain, q6), 4, Backend::exact);
    const auto direct = fk_apply(k, V, from_vector(chain, f), 10, Backend::exact);
    for (std::size_t x = 0; x < 3; ++x)
      CHECK(std::abs(composed.value(x) - direct.value(x)) <= 1e-10 * direct.value(x));
  }
}

TEST_CASE("fk_apply: log-space accumulation survives huge potentials") {
  const auto chain = test_support::bundled_chain();
  const Kernel k(chain);
  const auto t = fk_apply(k, Potential::on_chain(chain, vec({50, 49})), one(), 100, Backend::exact);
  CHECK(std::isinf(t.value(0)));
  CHECK(t.log_scale[0] + std::log(t.mantissa[0]) > 4900.0);
  CHECK(t.log_scale[0] + std::log(t.mantissa[0]) < 5000.0);
  const auto tm = fk_apply(k, Potential::on_chain(chain, vec({50, 49})), one(), 100, Backend::mc, {},
                           McOptions{200, 3, 1});
  CHECK(std::isfinite(tm.log_scale[0]));
  CHECK(tm.log_scale[0] + std::log(tm.mantissa[0]) > 4900.0);
}

TEST_CASE("fk_apply: Monte Carlo within 4 standard errors of brute force") {
  const auto chain = test_support::random_chain(3, 31);
  const Kernel k(chain);
  const Eigen::VectorXd v = vec({0.4, -0.3, 0.8});
  const Eigen::VectorXd f = vec({1.0, 2.0, 0.5});
  const auto t = fk_apply(k, Potential::on_chain(chain, v), from_vector(chain, f), 6, Backend::mc, {},
                          McOptions{20000, 99, 1});
  for (int x = 0; x < 3; ++x) {
    const double bf = finite::brute_force_fk(chain, v, f, x, 6);
    const auto i = static_cast<std::size_t>(x);
    CHECK(std::abs(t.value(i) - bf) <= 4 * t.error(i));
    CHECK(t.effective_samples[i] > 1000.0);
  }
}

TEST_CASE("Monte Carlo results do not depend on the worker count") {
  const auto chain = test_support::random_chain(4, 8);
  const Kernel k(chain);
  const auto V = Potential::on_chain(chain, test_support::random_vector(4, 9, -1, 1));
  const auto a = fk_apply(k, V, one(), 9, Backend::mc, {}, McOptions{1000, 5, 1});
  const auto b = fk_apply(k, V, one(), 9, Backend::mc, {}, McOptions{1000, 5, 3});
  CHECK(a.mantissa == b.mantissa);
  CHECK(a.std_error == b.std_error);
}

TEST_CASE("fk_lambda1") {
  const auto chain = test_support::bundled_chain();
  const Kernel k(chain);
  const auto c = fk_lambda1(k, Potential::constant(0.35), 64, Backend::exact);
  for (double a : c.a) CHECK(a == doctest::Approx(0.35).epsilon(1e-14));
  CHECK(c.certificate == doctest::Approx(std::exp(0.35)).epsilon(1e-14));
  CHECK(fk_lambda1(k, Potential::constant(0.0), 16, Backend::exact).certificate ==
        doctest::Approx(1.0).epsilon(1e-14));

  const auto V = Potential::on_chain(chain, vec({0, 1}));
  const auto r = fk_lambda1(k, V, 4096, Backend::exact);
  const auto oracle = eigen_oracle(finite::tilted_kernel(chain, vec({0, 1})).Q);
  CHECK(std::abs(r.extrapolated - oracle.lambda) < 1e-6);
  CHECK(r.certificate >= oracle.lambda * (1 - 1e-14));
  CHECK(r.n.back() == 4096);
  for (std::size_t i = 1; i < r.a.size(); ++i) CHECK(r.a[i] <= r.a[i - 1] + 1e-12);

  CHECK_THROWS_AS(fk_lambda1(k, V, 3, Backend::exact), InvalidArgument);

  const auto mc = fk_lambda1(k, V, 32, Backend::mc, {}, McOptions{20000, 4, 1});
  CHECK(std::abs(std::log(mc.extrapolated) - std::log(oracle.lambda)) < 3 * mc.log_band);
}

TEST_CASE("bootstrap_log: trivial cases and boundedness of M_n") {
  const auto chain = test_support::random_chain(3, 21);
  const Kernel k(chain);
  const auto pairs = all_state_pairs(chain);
  const auto flat = bootstrap_log(k, Potential::constant(0.0), one(), pairs, 20, 1.0, Backend::exact);
  for (const auto& r : flat.rows) {
    CHECK(r.Ln == 0.0);
    CHECK(r.Mn == doctest::Approx(1.0).epsilon(1e-14));
  }
  CHECK(flat.rows[0].Mn == 1.0);
  CHECK_THROWS_AS(bootstrap_log(k, Potential::constant(0.0), one(), pairs, 20, 0.0, Backend::exact),
                  InvalidArgument);

  const Eigen::VectorXd v = test_support::random_vector(3, 22, -1, 1);
  const auto V = Potential::on_chain(chain, v);
  const double lambda1 = fk_lambda1(k, V, 4096, Backend::exact).extrapolated;
  const auto log = bootstrap_log(k, V, one(), pairs, 1000, lambda1, Backend::exact);
  CHECK(log.rows.size() == 1001);
  CHECK(log.rows[0].Mn == 1.0);
  for (std::size_t i = 1; i < log.rows.size(); ++i) CHECK(log.rows[i].Mn >= log.rows[i - 1].Mn);
  CHECK(log.rows[1000].Mn / log.rows[10].Mn <= 10.0);
  CHECK_FALSE(log.violation);

  // lambda^{-n} Q_n 1 -> <1, mu> h = h, so the sup converges to max h.
  const auto oracle = eigen_oracle(finite::tilted_kernel(chain, v).Q);
  const double limit = oracle.h.maxCoeff();
  CHECK(log.rows[1000].qn1_sup / std::pow(lambda1, 1000) == doctest::Approx(limit).epsilon(1e-6));
  CHECK(log.rows[1000].fk_error < 1e-9);

  // Geometric series sum ||Q_n 1|| / lambda^n rho^n converges: ratio test.
  for (double rho : {0.5, 0.9, 0.99}) {
    const double t1 = log.rows[999].Mn * std::pow(rho, 999);
    const double t2 = log.rows[1000].Mn * std::pow(rho, 1000);
    CHECK(t2 / t1 <= rho + 1e-9);
  }
}

TEST_CASE("bootstrap_log: growth flag and Monte Carlo backend") {
  const auto chain = test_support::random_chain(3, 23);
  const Kernel k(chain);
  const auto pairs = all_state_pairs(chain);
  const auto V = Potential::on_chain(chain, vec({0.2, -0.5, 0.1}));
  const double lambda1 = fk_lambda1(k, V, 4096, Backend::exact).extrapolated;
  // Rescaling by a lambda well below lambda_1 makes M_n explode.
  const auto bad = bootstrap_log(k, V, one(), pairs, 200, 0.9 * lambda1, Backend::exact);
  CHECK(bad.violation);

  const Eigen::VectorXd f = vec({1.0, 0.2, 0.6});
  const auto ex = bootstrap_log(k, V, from_vector(chain, f), pairs, 12, lambda1, Backend::exact);
  const auto mc = bootstrap_log(k, V, from_vector(chain, f), pairs, 12, lambda1, Backend::mc, {},
                                McOptions{20000, 17, 1});
  REQUIRE(mc.rows.size() == ex.rows.size());
  for (std::size_t i = 0; i < ex.rows.size(); ++i) {
    CHECK(mc.rows[i].Mn == doctest::Approx(ex.rows[i].Mn).epsilon(0.03));
    CHECK(std::isnan(mc.rows[i].fk_error));
  }
}

TEST_CASE("uniform Feller witness: normalized Q_n f has bounded Lipschitz quotients") {
  const auto chain = test_support::random_chain(4, 50);
  const Kernel k(chain);
  const auto V = Potential::on_chain(chain, test_support::random_vector(4, 51, -1, 1));
  const Eigen::VectorXd f = test_support::random_vector(4, 52, 0.1, 1.0);
  double worst = 0.0;
  for (long n : {1, 5, 25, 125, 625}) {
    const auto t = fk_apply(k, V, from_vector(chain, f), n, Backend::exact);
    double sup = 0.0;
    for (std::size_t i = 0; i < 4; ++i) sup = std::max(sup, std::abs(t.mantissa[i]));
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j)
        worst = std::max(worst, std::abs(t.mantissa[static_cast<std::size_t>(i)] -
                                         t.mantissa[static_cast<std::size_t>(j)]) /
                                    sup / chain.metric()(i, j));
  }
  CHECK(worst <= 2.0);
}

TEST_CASE("eigenmeasure_fixed_point") {
  const auto chain = test_support::bundled_chain();
  const Kernel k(chain);
  const auto e0 = eigenmeasure_fixed_point(k, Potential::constant(0.0));
  CHECK(e0.lambda2 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(e0.mu(0) == doctest::Approx(4.0 / 7.0).epsilon(1e-10));
  CHECK(eigenmeasure_fixed_point(k, Potential::constant(-0.4)).lambda2 ==
        doctest::Approx(std::exp(-0.4)).epsilon(1e-12));

  const auto e = eigenmeasure_fixed_point(k, Potential::on_chain(chain, vec({0, 1})));
  const auto oracle = eigen_oracle(finite::tilted_kernel(chain, vec({0, 1})).Q);
  CHECK(std::abs(e.lambda2 - oracle.lambda) < 1e-10);
  CHECK((e.mu - oracle.mu).cwiseAbs().maxCoeff() < 1e-10);

  Eigen::MatrixXd flip(2, 2);
  flip << 0.0, 1.0, 1.0, 0.0;
  const Kernel periodic{finite::FiniteChain(flip)};
  try {
    eigenmeasure_fixed_point(periodic, Potential::on_chain(periodic.chain(), vec({0.0, 0.5})), 1e-12, 1000);
    FAIL("expected oscillation");
  } catch (const FixedPointError& err) {
    CHECK((err.previous() - err.last()).cwiseAbs().maxCoeff() > 0.01);
  }
}

TEST_CASE("fk_convergence_certificate") {
  const auto chain = test_support::random_chain(4, 60);
  const Kernel k(chain);
  const Eigen::VectorXd v = test_support::random_vector(4, 61, -1, 1);
  const auto V = Potential::on_chain(chain, v);
  const auto oracle = eigen_oracle(finite::tilted_kernel(chain, v).Q);

  const auto on_h = fk_convergence_certificate(k, V, from_vector(chain, oracle.h), 50);
  for (double err : on_h.error) CHECK(err < 1e-10);
  CHECK(on_h.success);

  const auto markov = fk_convergence_certificate(k, Potential::constant(0.0), one(), 10);
  for (double err : markov.error) CHECK(err < 1e-12);

  for (std::uint64_t s = 1; s <= 5; ++s) {
    const auto c = test_support::random_chain(4, 70 + s, 0.0);
    const Eigen::VectorXd w = test_support::random_vector(4, 80 + s, -1, 1);
    const Eigen::VectorXd f = test_support::random_vector(4, 90 + s, 0, 1);
    const auto rep = fk_convergence_certificate(Kernel(c), Potential::on_chain(c, w), from_vector(c, f), 60);
    const Eigen::MatrixXd Q = finite::tilted_kernel(c, w).Q;
    const double bound = test_support::second_modulus(Q) / test_support::dominant_eigenvalue(Q) + 0.05;
    CHECK(rep.success);
    CHECK(rep.ratio <= bound);
  }

  Eigen::MatrixXd flip(2, 2);
  flip << 0.0, 1.0, 1.0, 0.0;
  const Kernel periodic{finite::FiniteChain(flip)};
  const auto rep = fk_convergence_certificate(periodic, Potential::constant(0.0),
                                              from_vector(periodic.chain(), vec({1.0, 0.0})), 20);
  CHECK_FALSE(rep.success);
}

TEST_CASE("bootstrap CSV columns") {
  const auto chain = test_support::bundled_chain();
  const Kernel k(chain);
  std::ostringstream os;
  write_bootstrap_csv(os, bootstrap_log(k, Potential::constant(0.0), one(), all_state_pairs(chain), 2, 1.0,
                                        Backend::exact));
  CHECK(os.str().rfind("n,qn1_sup,lambda1_hat,Mn,Ln,fk_error\n0,1,1,1,0,", 0) == 0);
}
