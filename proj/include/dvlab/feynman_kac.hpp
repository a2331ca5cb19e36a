#pragma once

// Feynman-Kac semigroups Q_n^V f(x) = E_x f(x_n) exp(V(x_1) + ... + V(x_n))
// over finite chains (exact) or general random systems (Monte Carlo), with
// the lambda_1 scale, the bootstrap sequences M_n / L_n, the dual
// eigenmeasure iteration and geometric convergence reports.

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dvlab/errors.hpp"
#include "dvlab/finite_oracle.hpp"
#include "dvlab/rds_core.hpp"

namespace dvlab {

/// A one-step Markov kernel: a finite chain (exact backends available) or a
/// random dynamical system (Monte Carlo only).
class Kernel {
 public:
  explicit Kernel(finite::FiniteChain chain);
  explicit Kernel(RandomSystem system);

  bool is_finite() const { return chain_.has_value(); }
  /// Throws InvalidArgument for non-finite kernels.
  const finite::FiniteChain& chain() const;
  const RandomSystem& system() const { return system_; }
  const MetricSpace& space() const { return system_.map.space; }

  /// One transition. Finite kernels use a single uniform draw per step.
  Point step(const Point& x, Rng& rng) const;

 private:
  std::optional<finite::FiniteChain> chain_;
  RandomSystem system_;
};

namespace fk {

/// Bounded Lipschitz observable with its tracked bounds.
struct Potential {
  StateFunction eval;
  double sup_bound = 0.0;
  double inf_bound = 0.0;
  double lip_bound = 0.0;

  static Potential constant(double c);
  /// V(i) on a finite chain; bounds and Lipschitz constant from the metric.
  static Potential on_chain(const finite::FiniteChain& chain, const Eigen::VectorXd& values);
};

/// Values on the chain's states (throws if the potential leaves its bounds).
Eigen::VectorXd tabulate(const Potential& V, const finite::FiniteChain& chain);

enum class Backend { exact, mc };

struct McOptions {
  long samples = 1000;
  std::uint64_t seed = 0;
  unsigned workers = 1;
};

Backend parse_backend(const std::string& name);

/// Q_n^V f tabulated at a list of states. The value at state i is
/// mantissa[i] * exp(log_scale[i]); std_error is on the same scale as the
/// mantissa (zero for the exact backend).
struct FkTable {
  std::vector<Point> states;
  std::vector<double> mantissa;
  std::vector<double> log_scale;
  std::vector<double> std_error;
  std::vector<double> effective_samples;

  double value(std::size_t i) const;
  double error(std::size_t i) const;
};

/// Per-(state, step) weighted moments of an ensemble of trajectories: for
/// each evaluation state x and k = 0..n_max, the sample mean of exp(S_k) and
/// of f(x_k) exp(S_k), S_k = V(x_1) + ... + V(x_k), kept in log scale.
/// Replicas are reduced in fixed blocks, so results do not depend on the
/// worker count.
class PathEnsemble {
 public:
  PathEnsemble();

  const std::vector<Point>& states() const { return states_; }
  long n_max() const { return n_max_; }
  long replicas() const { return replicas_; }

  /// log of the sample mean of exp(S_k) from state i.
  double log_mean_weight(std::size_t i, long k) const;
  /// Standard error of that mean divided by the mean.
  double weight_relative_error(std::size_t i, long k) const;
  /// Kish effective sample size (sum w)^2 / sum w^2.
  double effective_samples(std::size_t i, long k) const;
  /// (mantissa, log_scale) of the sample mean of f(x_k) exp(S_k).
  std::pair<double, double> f_value(std::size_t i, long k) const;
  /// Standard error of the f mean, on the mantissa scale.
  double f_std_error(std::size_t i, long k) const;

 private:
  friend PathEnsemble path_ensemble(const Kernel&, const Potential&, const StateFunction&,
                                    std::span<const Point>, long, const McOptions&);
  struct Impl;
  std::shared_ptr<Impl> impl_;
  std::vector<Point> states_;
  long n_max_ = 0;
  long replicas_ = 0;
};

/// Replica r from evaluation state i draws from stream (stream_id(seed, i), r).
PathEnsemble path_ensemble(const Kernel& kernel, const Potential& V, const StateFunction& f,
                           std::span<const Point> states, long n_max, const McOptions& mc);

/// Exact backend: every state of the chain (states argument ignored when
/// empty). Monte Carlo: `samples` trajectories per evaluation state, each on
/// its own (seed, state, replica) substream.
FkTable fk_apply(const Kernel& kernel, const Potential& V, const StateFunction& f, long n, Backend backend,
                 std::span<const Point> states = {}, const McOptions& mc = {});

/// Fekete sequence a_n = (1/n) log ||Q_n 1||_inf.
struct Lambda1Result {
  /// exp(min_n a_n): an upper bound on lambda_1 on exact backends.
  double certificate = 0.0;
  /// Richardson extrapolation 2 a_N - a_{N/2} over the last dyadic pair.
  double extrapolated = 0.0;
  /// Half-width of the uncertainty on log lambda_1 (MC noise plus the
  /// distance between the last two sequence points).
  double log_band = 0.0;
  std::vector<long> n;
  std::vector<double> a;
  std::vector<double> a_std_error;
};

/// Exact backend: repeated squaring of the normalized tilted matrix at
/// n = 1, 2, 4, ..., n_max (n_max must be >= 4). Monte Carlo: the same dyadic
/// n with the sup taken over `states`.
Lambda1Result fk_lambda1(const Kernel& kernel, const Potential& V, long n_max, Backend backend,
                         std::span<const Point> states = {}, const McOptions& mc = {});

struct BootstrapRow {
  long n = 0;
  double qn1_sup = 0.0;      // ||Q_n 1||_inf
  double lambda1_hat = 0.0;  // the lambda_1 used for rescaling
  double Mn = 0.0;           // sup_{k <= n} lambda^{-k} ||Q_k 1||_inf
  double Ln = 0.0;           // lambda^{-n} max_pairs |Q_n f(x) - Q_n f(x')| / d(x,x')
  double fk_error = 0.0;     // ||lambda^{-n} Q_n f - <f,mu> h||_inf, NaN when unknown
};

struct BootstrapLog {
  std::vector<BootstrapRow> rows;
  double growth_limit = 10.0;
  long reference_n = 10;
  /// M_n / M_reference exceeded growth_limit for some n.
  bool violation = false;
};

struct BootstrapOptions {
  double growth_limit = 10.0;
  long reference_n = 10;
};

/// lambda1 must come from a previous fk_lambda1 call (or the Perron value);
/// a non-positive lambda1 is rejected. The exact backend records every
/// n = 0..n_max; the Monte Carlo backend reuses one path ensemble per state.
BootstrapLog bootstrap_log(const Kernel& kernel, const Potential& V, const StateFunction& f,
                           std::span<const std::pair<Point, Point>> probe_pairs, long n_max, double lambda1,
                           Backend backend, const BootstrapOptions& options = {}, const McOptions& mc = {});

/// All unordered pairs of distinct states.
std::vector<std::pair<Point, Point>> all_state_pairs(const finite::FiniteChain& chain);

/// Thrown when the dual iteration keeps moving; carries the last two iterates.
class FixedPointError : public ConvergenceError {
 public:
  FixedPointError(double residual, Eigen::VectorXd previous, Eigen::VectorXd last)
      : ConvergenceError("eigenmeasure iteration did not settle", residual),
        previous_(std::move(previous)),
        last_(std::move(last)) {}
  const Eigen::VectorXd& previous() const { return previous_; }
  const Eigen::VectorXd& last() const { return last_; }

 private:
  Eigen::VectorXd previous_;
  Eigen::VectorXd last_;
};

struct Eigenmeasure {
  double lambda2 = 0.0;
  Eigen::VectorXd mu;
  int iterations = 0;
  double residual = 0.0;
};

/// Iterates sigma -> Q^T sigma / (Q^T sigma)(X) from the uniform measure
/// (finite kernels only). Throws if lambda2 exceeds the lambda_1
/// certificate by more than tol.
Eigenmeasure eigenmeasure_fixed_point(const Kernel& kernel, const Potential& V, double tol = 1e-13,
                                      int iteration_cap = 100'000);

struct ConvergenceReport {
  std::vector<long> n;
  std::vector<double> error;
  double lambda = 0.0;
  /// exp(slope) of log error against n over the points above the round-off
  /// floor; 0 when the error is at round-off from the start.
  double ratio = 0.0;
  double r_squared = 1.0;
  bool success = false;
};

/// ||lambda^{-n} Q_n f - <f,mu> h||_inf for n = 1..n_max on a finite kernel.
ConvergenceReport fk_convergence_certificate(const Kernel& kernel, const Potential& V, const StateFunction& f,
                                             long n_max);

/// Columns n, qn1_sup, lambda1_hat, Mn, Ln, fk_error.
void write_bootstrap_csv(std::ostream& out, const BootstrapLog& log);

/// Columns n, fk_error, ratio_fit (the fitted ratio repeated on each row).
void write_convergence_csv(std::ostream& out, const ConvergenceReport& report);

}  // namespace fk
}  // namespace dvlab
