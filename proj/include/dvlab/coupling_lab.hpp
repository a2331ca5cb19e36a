#pragma once

// Coupled pairs of trajectories, the event partition
//   A_k = {d_{k+1} <= q d_k},  B_k = A_0 ... A_{k-1},  C_k = B_k \ A_k,
// squeezing estimates, the conditional bound on C_k, and the good/bad split
// of Q_n f(x) - Q_n f(x').

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "dvlab/feynman_kac.hpp"
#include "dvlab/finite_oracle.hpp"
#include "dvlab/rds_core.hpp"
#include "dvlab/stats.hpp"

namespace dvlab::coupling {

using CoupleFn = std::function<std::pair<Point, Point>(const Point&, const Point&, Rng&)>;

struct CouplingOperator {
  std::string name;
  MetricSpace space;
  CoupleFn couple;
  double q_claim = 0.9;
  double C_claim = 1.0;
};

/// Couples with probability equal to the overlap sum_y min(P(x,y), P(x',y)),
/// otherwise draws the two normalized residuals independently.
CouplingOperator maximal_coupling(const finite::FiniteChain& chain, double q_claim, double C_claim);

/// Independent draws from P(x,.) and P(x',.) (equal states stay equal).
CouplingOperator independent_coupling(const finite::FiniteChain& chain, double q_claim, double C_claim);

/// Both copies driven by the same noise sample.
CouplingOperator synchronous_coupling(const RandomSystem& system, double q_claim, double C_claim);

/// Joint law J(y, y') of one coupled step from (x, x').
Eigen::MatrixXd maximal_coupling_law(const finite::FiniteChain& chain, int x, int x2);
Eigen::MatrixXd independent_coupling_law(const finite::FiniteChain& chain, int x, int x2);

/// P(d(y,y') > q d(x,x')) under a joint law.
double violation_probability(const finite::FiniteChain& chain, const Eigen::MatrixXd& joint, int x, int x2,
                             double q);

/// Smallest C with P(violation from (x,x')) <= C d(x,x') for all x != x'
/// under the maximal coupling.
double exact_squeezing_constant(const finite::FiniteChain& chain, double q);

struct CouplingTrace {
  std::vector<std::pair<Point, Point>> pairs;  // k = 0..n
  std::vector<double> dists;                   // d_k, k = 0..n
  std::vector<bool> event_a;                   // A_k, k = 0..n-1
  /// First k with A_k violated: the trace lies in C_k. None: the trace is in B_n.
  std::optional<long> first_bad;
  double q = 0.0;

  std::string label() const;
};

/// Labels each step with A_k for q = q_claim.
CouplingTrace run_coupled(const CouplingOperator& op, const Point& x0, const Point& x0b, long n, Rng& rng);
/// Uses stream (seed, 0).
CouplingTrace run_coupled(const CouplingOperator& op, const Point& x0, const Point& x0b, long n,
                          std::uint64_t seed);

struct SqueezingRow {
  Point x;
  Point x2;
  double distance = 0.0;
  long violations = 0;
  long trials = 0;
  double frequency = 0.0;
  Interval ci;  // Wilson, z = 4
};

struct SqueezingReport {
  double q = 0.0;
  std::vector<SqueezingRow> rows;
  /// max over pairs of frequency / distance.
  double C_hat = 0.0;
  /// Smallest q on a 0.01 grid of [0, 1] with C_hat(q) <= C_cap; NaN if none.
  double q_min = 0.0;
  double C_cap = 0.0;
};

/// Trial t for pair i draws from stream (stream_id(seed, i), t).
SqueezingReport estimate_squeezing(const CouplingOperator& op,
                                   std::span<const std::pair<Point, Point>> pair_grid, long trials,
                                   std::uint64_t seed, double C_cap = 1.0, unsigned workers = 1);

enum class CheckStatus { pass, fail, insufficient };
std::string to_string(CheckStatus s);

struct ConditionalRow {
  long k = 0;
  long survivors = 0;   // traces in B_k
  long violations = 0;  // traces in C_k
  double frequency = 0.0;
  Interval ci;          // Wilson, z = 4
  double bound = 0.0;   // C q^k d(x0, x0')
  CheckStatus status = CheckStatus::insufficient;
};

/// Per k = 0..n-1: frequency of C_k among traces in B_k against C_claim q^k d0.
/// Rows with fewer than min_survivors traces are marked insufficient; a row
/// fails when the whole Wilson interval lies above the bound.
std::vector<ConditionalRow> conditional_bound_check(const CouplingOperator& op, const Point& x0,
                                                    const Point& x0b, long n, long trials, std::uint64_t seed,
                                                    long min_survivors = 100, unsigned workers = 1);

struct Estimate {
  double mean = 0.0;
  double std_error = 0.0;
};

struct Decomposition {
  long n = 0;
  long trials = 0;
  Estimate good;            // E 1_{B_n} [f(x_n) e^{S_n} - f(x_n') e^{S_n'}]
  std::vector<Estimate> bad;  // same on C_k, k = 0..n-1
  Estimate total;           // over all traces
  /// 2 C e^{sup V} ||f|| ||Q_{n-k-1} 1|| ||Q_k 1|| q^k d0 (finite kernels;
  /// empty otherwise).
  std::vector<double> bad_bound;
  /// Q_n f(x0) - Q_n f(x0') from the exact backend (finite kernels) or NaN.
  double exact_difference = 0.0;
  /// |J_bad,k| <= bound_k + 4 se for every k.
  bool bounds_hold = true;
};

Decomposition lipschitz_decomposition(const CouplingOperator& op, const Kernel& kernel, const fk::Potential& V,
                                      const StateFunction& f, const Point& x0, const Point& x0b, long n,
                                      long trials, std::uint64_t seed, unsigned workers = 1);

/// Columns k, d_k, event (A / notA, empty on the last row), class (B or C_k).
void write_trace_csv(std::ostream& out, const CouplingTrace& trace);
void write_squeezing_csv(std::ostream& out, const SqueezingReport& report);
void write_conditional_csv(std::ostream& out, const std::vector<ConditionalRow>& rows);
nlohmann::json decomposition_json(const Decomposition& d);

}  // namespace dvlab::coupling
