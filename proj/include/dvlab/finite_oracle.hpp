#pragma once

// Exact computations on finite state spaces: tilted kernels, the Perron
// eigen-triple, pressure, both variational formulas for the rate function,
// brute-force Feynman-Kac path sums, and exact occupation-time tails.

#include <cmath>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "dvlab/rds_core.hpp"

namespace dvlab::finite {

/// Row-stochastic m x m matrix with state labels and a metric.
class FiniteChain {
 public:
  /// Validates stochasticity (rows sum to 1 within 1e-12, entries >= 0) and
  /// the metric axioms (exhaustively for m <= 64).
  FiniteChain(Eigen::MatrixXd transition, std::vector<std::string> labels, Eigen::MatrixXd metric);

  /// Labels "1".."m" and the discrete metric d(x,y) = 1 for x != y.
  explicit FiniteChain(Eigen::MatrixXd transition);

  /// {labels, P, metric}; P and metric are row-major, either flat or nested.
  /// metric and labels are optional.
  static FiniteChain from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;

  int size() const { return static_cast<int>(transition_.rows()); }
  const Eigen::MatrixXd& transition() const { return transition_; }
  const Eigen::MatrixXd& metric() const { return metric_; }
  const std::vector<std::string>& labels() const { return labels_; }
  double diameter() const { return metric_.maxCoeff(); }

  /// Strong connectivity of the transition graph.
  bool irreducible() const;

  /// Solves pi P = pi, sum pi = 1.
  Eigen::VectorXd stationary() const;

  std::string space_tag() const;
  Point state(int i) const;
  int index_of(const Point& p) const;
  MetricSpace metric_space() const;

  /// Inverse-CDF transition: the successor of x for a uniform draw u.
  int next_state(int x, double u) const;

  /// The chain as an RDS: x_{k+1} = inverse CDF of row x_k at a uniform draw.
  RandomSystem as_random_system() const;

 private:
  Eigen::MatrixXd transition_;
  std::vector<std::string> labels_;
  Eigen::MatrixXd metric_;
};

struct TiltedKernel {
  Eigen::MatrixXd Q;  // Q(x,y) = P(x,y) e^{V(y)}
  Eigen::VectorXd V;
};

TiltedKernel tilted_kernel(const FiniteChain& chain, const Eigen::VectorXd& V);

/// Perron eigen-triple of a nonnegative irreducible matrix:
/// Q h = lambda h, Q^T mu = lambda mu, sum mu = 1, <h, mu> = 1.
struct PerronTriple {
  double lambda = 0.0;
  Eigen::VectorXd h;
  Eigen::VectorXd mu;
  double eigen_residual = 0.0;  // ||Q h - lambda h||_inf / ||h||_inf
  double dual_residual = 0.0;   // ||Q^T mu - lambda mu||_inf / ||mu||_inf
  int iterations = 0;
};

/// Power iteration on Q + 1e-3 I followed by shifted inverse-iteration
/// refinement on Q. Throws InvalidArgument for reducible Q and
/// ConvergenceError when the residual stays above tol.
PerronTriple perron_triple(const TiltedKernel& kernel, double tol = 1e-12, int iteration_cap = 1'000'000);
PerronTriple perron_triple(const Eigen::MatrixXd& Q, double tol = 1e-12, int iteration_cap = 1'000'000);

/// Lambda(V) = log lambda_V.
double pressure_exact(const FiniteChain& chain, const Eigen::VectorXd& V);

/// Equilibrium density d Lambda / dV = h * mu (pointwise), a probability vector.
Eigen::VectorXd pressure_gradient(const FiniteChain& chain, const Eigen::VectorXd& V);

struct LegendreResult {
  double value = 0.0;
  Eigen::VectorXd maximizer;
  /// Some coordinate of the maximizer sits on the box with the gradient
  /// pointing outward: the supremum may not be attained inside the box.
  bool at_boundary = false;
  int iterations = 0;
};

/// I(sigma) = sup_{V in [-box, box]^m} <V,sigma> - Lambda(V).
LegendreResult rate_function_legendre(const FiniteChain& chain, const Eigen::VectorXd& sigma,
                                      double theta_box = 20.0);

struct DvResult {
  double value = 0.0;
  Eigen::VectorXd log_f;  // minimizing u = log f, normalized u_0 = 0
  double gradient_norm = 0.0;
  int iterations = 0;
};

/// I(sigma) = -inf_{f > 0} sum_x sigma(x) log(Pf(x)/f(x)), minimized over
/// u = log f.
DvResult rate_function_dv(const FiniteChain& chain, const Eigen::VectorXd& sigma,
                          double gradient_tol = 1e-10, int iteration_cap = 100'000);

/// Exact path sum over all m^n trajectories from x0 of
/// f(x_n) exp(V(x_1)+...+V(x_n)) prod P(x_{i-1}, x_i). Requires m^n <= 1e7.
double brute_force_fk(const FiniteChain& chain, const Eigen::VectorXd& V, const Eigen::VectorXd& f,
                      int x0, int n);

/// log P_{x0}( (1/n) #{1 <= k <= n : x_k = target} >= a ), by dynamic
/// programming over (state, visit count) in log space.
double ldp_tail_exact_log(const FiniteChain& chain, int target, double a, int n, int x0);

inline double ldp_tail_exact(const FiniteChain& chain, int target, double a, int n, int x0) {
  return std::exp(ldp_tail_exact_log(chain, target, a, n, x0));
}

/// inf { I(sigma) : sigma(target) >= a }. Two-state chains use a golden
/// section search along the edge of the simplex; larger chains use the
/// contraction identity sup_{theta >= 0} (theta a - Lambda(theta 1_target)).
double level_set_infimum(const FiniteChain& chain, int target, double a, double theta_box = 20.0);

/// All probability vectors with entries k_i / denominator.
std::vector<Eigen::VectorXd> simplex_lattice(int m, int denominator);

struct RateTableRow {
  Eigen::VectorXd sigma;
  double legendre = 0.0;
  double dv = 0.0;
  Eigen::VectorXd maximizer;
  bool at_boundary = false;
};

std::vector<RateTableRow> rate_table(const FiniteChain& chain, const std::vector<Eigen::VectorXd>& grid,
                                     double theta_box = 20.0);

/// Columns: sigma_0..sigma_{m-1}, I_legendre, I_dv, V_0..V_{m-1}.
void write_rate_table_csv(std::ostream& out, const std::vector<RateTableRow>& rows);

}  // namespace dvlab::finite
