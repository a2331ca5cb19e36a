#pragma once

// Shared fixtures and independent oracles for the test suites. Nothing here
// calls the library routine that the corresponding oracle checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "dvlab/finite_oracle.hpp"
#include "dvlab/rng.hpp"

namespace test_support {

/// P = [[0.7, 0.3], [0.4, 0.6]], discrete metric.
inline dvlab::finite::FiniteChain bundled_chain() {
  Eigen::MatrixXd P(2, 2);
  P << 0.7, 0.3, 0.4, 0.6;
  return dvlab::finite::FiniteChain(P);
}

/// Strictly positive random stochastic matrix with entries bounded away from 0.
inline dvlab::finite::FiniteChain random_chain(int m, std::uint64_t seed, double floor = 0.05) {
  dvlab::Rng rng(seed, 0xC4A1);
  Eigen::MatrixXd P(m, m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) P(i, j) = floor + rng.uniform();
    P.row(i) /= P.row(i).sum();
    // Re-balance the last entry so the row sums to 1 up to one rounding.
    double rest = 0.0;
    for (int j = 0; j + 1 < m; ++j) rest += P(i, j);
    P(i, m - 1) = 1.0 - rest;
  }
  return dvlab::finite::FiniteChain(P);
}

inline Eigen::VectorXd random_vector(int m, std::uint64_t seed, double lo, double hi) {
  dvlab::Rng rng(seed, 0x5EED);
  Eigen::VectorXd v(m);
  for (int i = 0; i < m; ++i) v(i) = lo + (hi - lo) * rng.uniform();
  return v;
}

inline Eigen::VectorXd random_probability(int m, std::uint64_t seed) {
  Eigen::VectorXd v = random_vector(m, seed, 0.0, 1.0);
  return v / v.sum();
}

/// Dominant eigenvalue of a nonnegative matrix from a full eigen-decomposition.
inline double dominant_eigenvalue(const Eigen::MatrixXd& Q) {
  Eigen::EigenSolver<Eigen::MatrixXd> es(Q);
  double best = -1.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
    best = std::max(best, es.eigenvalues()(i).real());
  return best;
}

/// Second largest eigenvalue modulus.
inline double second_modulus(const Eigen::MatrixXd& Q) {
  Eigen::EigenSolver<Eigen::MatrixXd> es(Q);
  std::vector<double> mods;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) mods.push_back(std::abs(es.eigenvalues()(i)));
  std::sort(mods.rbegin(), mods.rend());
  return mods.size() > 1 ? mods[1] : 0.0;
}

/// Q^n f by plain repeated multiplication.
inline Eigen::VectorXd matrix_power_apply(const Eigen::MatrixXd& Q, Eigen::VectorXd f, int n) {
  for (int k = 0; k < n; ++k) f = Q * f;
  return f;
}

/// Fekete-limit oracle for the pressure: (1/n) log ||Q^n 1||_inf for
/// n = 2^6..2^12 by repeated squaring (with renormalization), Richardson
/// extrapolated on the dyadic sequence.
inline double pressure_by_squaring(const Eigen::MatrixXd& Q) {
  Eigen::MatrixXd A = Q;
  double log_scale = 0.0;  // A_true = A * exp(log_scale)
  std::vector<double> seq;
  for (int k = 1; k <= 12; ++k) {
    A = A * A;
    log_scale *= 2;
    const double s = A.maxCoeff();
    A /= s;
    log_scale += std::log(s);
    if (k >= 6) {
      const double n = std::ldexp(1.0, k);
      seq.push_back((log_scale + std::log(A.rowwise().sum().maxCoeff())) / n);
    }
  }
  return 2 * seq.back() - seq[seq.size() - 2];
}

}  // namespace test_support
