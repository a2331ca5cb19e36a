#pragma once

// Monte Carlo pressure, scalar rate functions I_phi(s) = sup_theta
// (theta s - Lambda(theta phi)), occupation-time tail exponents and
// dual-Lipschitz mixing-rate fits on any kernel.

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dvlab/feynman_kac.hpp"
#include "dvlab/rds_core.hpp"
#include "dvlab/stats.hpp"

namespace dvlab::ldp {

struct PressureOptions {
  long replicas = 10'000;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  /// A per-n value is reliable when its Kish effective sample size is at
  /// least max(ess_floor, ess_fraction * replicas).
  double ess_fraction = 0.01;
  double ess_floor = 50.0;
  /// Seed for the random initial distribution on finite kernels.
  std::uint64_t mu_seed = 1;
};

struct PressureRow {
  long n = 0;
  double estimate = 0.0;   // mean over x0 of (1/n) log mean e^{S_n}
  double std_error = 0.0;  // largest per-x0 standard error
  double spread = 0.0;     // max - min over x0
  double min_ess = 0.0;
  bool reliable = true;
};

struct PressureEstimate {
  std::string V_id;
  std::vector<Point> x0;
  long replicas = 0;
  std::vector<PressureRow> rows;  // n = 1..n_max
  /// per_x0[i][n - 1] = (1/n) log mean e^{S_n} from x0[i].
  std::vector<std::vector<double>> per_x0;
  /// Extrapolated value per initial state over its reliable dyadic prefix.
  std::vector<double> extrapolated_x0;
  std::vector<double> band_x0;
  /// Mean of extrapolated_x0.
  double value = 0.0;
  /// Largest per-x0 band: sqrt(se^2 + (Aitken - Richardson)^2) with the
  /// Richardson standard error sqrt(4 se_N^2 + se_{N/2}^2).
  double band = 0.0;
  /// max - min of extrapolated_x0: the uniformity-in-x0 diagnostic.
  double x0_spread = 0.0;
  /// Largest dyadic n used in the extrapolation (smallest over x0).
  long n_used = 0;
  /// Some requested n collapsed below the effective-sample-size threshold.
  bool ess_collapse = false;
  /// "aitken" or "richardson" (fallback when the dyadic differences are not
  /// geometric), the most conservative choice over x0.
  std::string method;
  /// Finite kernels with x0 covering every state: (1/n_used) log of the
  /// mu-mixture of the per-state means for a random mu; NaN otherwise.
  double random_mu_estimate = 0.0;
};

/// Replica r from x0[i] draws from stream (stream_id(seed, i), r). n >= 4;
/// replicas >= 100.
PressureEstimate pressure_mc(const Kernel& kernel, const fk::Potential& V, std::span<const Point> x0, long n,
                             const PressureOptions& options, std::string V_id = "V");

/// Aitken extrapolation of three successive dyadic values a_{N/4}, a_{N/2},
/// a_N; returns false when the differences are not geometric with ratio in
/// (0, 1) (the caller falls back to Richardson).
bool aitken(double a1, double a2, double a3, double& out);

enum class LevelStatus { inside, outside_domain, infinite };
std::string to_string(LevelStatus s);

struct ScalarRateCurve {
  std::string phi_id;
  std::vector<double> s;
  std::vector<double> I;
  std::vector<double> theta_star;
  std::vector<LevelStatus> status;
  /// Lambda'(0) = <phi, mu*>.
  double mean = 0.0;
  bool degenerate = false;  // phi constant on the kernel's support
};

struct RateOptions {
  double theta_box = 20.0;
  fk::Backend backend = fk::Backend::exact;
  /// Monte Carlo backend: Lambda(theta phi) from pressure_mc at this n on a
  /// theta grid, common random numbers across theta.
  long mc_n = 32;
  int mc_theta_points = 41;
  PressureOptions mc;
  std::vector<Point> mc_x0;
};

/// Exact backend: bisection on theta -> Lambda'(theta phi) (finite kernels).
/// Monte Carlo backend: discrete maximization over the theta grid.
ScalarRateCurve rate_legendre_parametric(const Kernel& kernel, const fk::Potential& phi,
                                         std::span<const double> s_grid, const RateOptions& options,
                                         std::string phi_id = "phi");

struct CurveCheck {
  bool convex = true;        // second divided differences >= -1e-8 on finite levels
  bool zero_at_mean = true;  // I <= tol at the grid point nearest the mean
  double min_value = 0.0;
};

CurveCheck check_curve(const ScalarRateCurve& curve, double zero_tol = 1e-8);

struct TailRow {
  long n = 0;
  long hits = 0;
  long replicas = 0;
  double p_hat = 0.0;
  Interval p_ci;            // Clopper-Pearson, level 1 - alpha
  double estimate = 0.0;    // -(1/n) log p_hat; the lower bound when zero_hit
  double ci_lo = 0.0;
  double ci_hi = 0.0;       // infinity when zero_hit
  bool zero_hit = false;
  bool few_hits = false;    // fewer than 10 hits
};

struct TailReport {
  std::string phi_id;
  double threshold = 0.0;
  std::vector<TailRow> rows;
  /// Distances to the reference rate shrink along n up to the confidence
  /// intervals; true when no reference is given.
  bool trend_toward_reference = true;
  double reference = 0.0;
};

struct TailOptions {
  long replicas = 100'000;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  double alpha = 0.05;
  /// NaN: no trend check.
  double reference_rate = std::numeric_limits<double>::quiet_NaN();
};

/// P_{x0}(<phi, L_n> >= a) for every n in n_list; replica r uses stream
/// (seed, r) and one trajectory serves every n.
TailReport ldp_tail_mc(const Kernel& kernel, const fk::Potential& phi, const Point& x0, double a,
                       std::span<const long> n_list, const TailOptions& options, std::string phi_id = "phi");

struct MixingRow {
  long n = 0;
  double distance = 0.0;   // max over pairs and entries of |<f, m> - <f, m'>| / ||f||_L
  double std_error = 0.0;  // of the maximizing entry's paired difference
  bool significant = false;  // distance > 3 standard errors
};

struct MixingReport {
  std::vector<MixingRow> rows;
  double gamma = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  long points_used = 0;
  bool success = false;
  std::string note;
};

struct MixingOptions {
  long replicas = 1000;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  double significance = 3.0;
};

/// Empirical laws of x_n from each initial state with common random numbers:
/// replica r uses stream (seed, r) for every x0. log distance is fitted
/// against n over the leading run of significant rows; gamma = -slope.
MixingReport mixing_rate(const Kernel& kernel, std::span<const Point> x0_list, const ObservableDictionary& dict,
                         long n_max, const MixingOptions& options);

/// Columns n, estimate, ci_lo, ci_hi (ci at +-1.96 standard errors).
void write_pressure_csv(std::ostream& out, const PressureEstimate& e);
nlohmann::json pressure_json(const PressureEstimate& e);
/// Columns s, I, theta_star.
void write_rate_curve_csv(std::ostream& out, const ScalarRateCurve& c);
/// Columns n, estimate, ci_lo, ci_hi.
void write_tail_csv(std::ostream& out, const TailReport& r);
/// Columns n, estimate, ci_lo, ci_hi (distance +- 1.96 se).
void write_mixing_csv(std::ostream& out, const MixingReport& r);
nlohmann::json mixing_json(const MixingReport& r);

}  // namespace dvlab::ldp
