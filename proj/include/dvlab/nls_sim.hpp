#pragma once

// Spectral Galerkin simulator for the damped, kicked NLS on the torus
//   i u_t + u_xx + i a(x) u = |u|^{p-1} u + eta(t, x),
// with eta = chi(x) sum_{j,k} b_{j,k} (theta1 + i theta2) alpha_j(t) e_k(x),
// e_k(x) = e^{ikx} / sqrt(2 pi). States are Fourier coefficient vectors
// u(x) = sum_{|k| <= K} u_k e_k(x), so ||u||_{H^s}^2 = sum <k>^{2s} |u_k|^2.

#include <complex>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dvlab/rds_core.hpp"
#include "dvlab/rng.hpp"

namespace dvlab::nls {

using cplx = std::complex<double>;

struct NlsConfig {
  int n_modes = 32;
  int p = 3;
  double dt = 1.0 / 256.0;
  double sigma = 1.0;
  double B = 1.0;
  int N_active = 8;
  double a0 = 1.0;
  /// Arc lengths of the damping and cutoff bumps. An arc of 2 pi or more
  /// makes the profile constant (a = a0, chi = 1).
  double damping_arc = 1.5707963267948966;
  double chi_arc = 3.141592653589793;
  std::uint64_t seed = 0;

  // Not part of the config file.
  double damping_center = 1.5707963267948966;
  double chi_center = 4.71238898038469;
  int time_modes = 4;
  bool nonlinear = true;
  double h1_cap = 1e6;

  /// Throws InvalidArgument naming the offending field. The model needs
  /// a0 > 0; undamped runs (a0 = 0) are accepted only on request.
  void validate(bool allow_undamped = false) const;
  /// Steps per unit time (1/dt, which must be an integer).
  int steps() const;
  /// Physical grid size: the smallest power of two above (p + 1) n_modes,
  /// which makes the degree-p nonlinearity alias-free.
  int grid_size() const;
};

/// Smooth bump of the given arc length centred at `center`, equal to 1 at the
/// centre; constant 1 when arc >= 2 pi.
double bump(double x, double center, double arc);

double damping(const NlsConfig& cfg, double x);
double cutoff(const NlsConfig& cfg, double x);

/// Raised-cosine density (1 + cos(pi s)) / 2 on [-1, 1].
double theta_density(double s);
double theta_cdf(double s);
/// Inverse-CDF draw.
double sample_theta(Rng& rng);

/// Orthonormal cosine basis of L^2(0,1): alpha_1 = 1, alpha_{j+1} = sqrt 2 cos(j pi t).
double time_basis(int j, double t);

struct NoiseSpec {
  int time_modes = 4;  // J
  int n_modes = 32;    // K
  int N_active = 8;  // negative: no non-degeneracy requirement
  double sigma = 1.0;
  double B = 1.0;
  /// b(j-1, k+K), j = 1..J, |k| <= K.
  Eigen::MatrixXd b;

  /// c <k>^{-(1 + sigma + 0.1)} / (1 + j)^2 on |k| <= N_active, zero elsewhere,
  /// with c chosen so the weighted sum equals B.
  static NoiseSpec defaults(const NlsConfig& cfg);
  /// All coefficients zero.
  static NoiseSpec zero(const NlsConfig& cfg);

  double coefficient(int j, int k) const { return b(j - 1, k + n_modes); }
  /// sum_{j,k} b_{j,k}^2 <k>^{2(1+sigma)}.
  double weighted_sum() const;
  /// Checks nonnegativity, the B bound and non-degeneracy on |k| <= N_active.
  void validate() const;
  /// Number of theta draws per kick: 2 per nonzero b_{j,k}.
  std::size_t theta_count() const;
};

/// Independent theta draws for one kick, ordered by (j, k, l) over the
/// nonzero coefficients. Every entry lies in [-1, 1].
std::vector<double> draw_theta(const NoiseSpec& spec, Rng& rng);

/// One realization of eta on [0, 1): per time-basis index j the spatial field
/// chi(x) g_j(x), g_j = sum_k b_{j,k} (theta1 + i theta2) e_k, on the solver grid.
class Forcing {
 public:
  Forcing(const NlsConfig& cfg, const NoiseSpec& spec, std::span<const double> theta);

  /// eta(t, x) on the grid x_m = 2 pi m / M.
  void physical(double t, std::vector<cplx>& out) const;
  /// Fourier coefficients of eta(t, .) for |k| <= K (index k + K).
  std::vector<cplx> coefficients(double t) const;
  int grid() const { return grid_; }
  bool is_zero() const { return zero_; }
  /// int_0^1 ||zeta(t)||_{H^{1+sigma}}^2 dt for the field before the cutoff,
  /// i.e. sum b^2 <k>^{2(1+sigma)} (theta1^2 + theta2^2) <= 2B.
  double energy() const { return energy_; }

 private:
  int grid_;
  int n_modes_;
  bool zero_ = true;
  double energy_ = 0.0;
  std::vector<std::vector<cplx>> fields_;  // [j][m]
};

/// Forcing from the (seed, 0) stream.
Forcing noise_sample(const NlsConfig& cfg, const NoiseSpec& spec, std::uint64_t seed);

class NlsState {
 public:
  NlsState() = default;
  /// coefficients indexed k + K for |k| <= K.
  NlsState(std::vector<cplx> coefficients, double sigma);
  static NlsState zero(int n_modes, double sigma);
  static NlsState single_mode(int n_modes, double sigma, int k, cplx value);

  int n_modes() const { return static_cast<int>(fourier_.size() / 2); }
  double sigma() const { return sigma_; }
  const std::vector<cplx>& fourier() const { return fourier_; }
  cplx mode(int k) const { return fourier_.at(static_cast<std::size_t>(k + n_modes())); }

  double l2() const { return l2_; }
  double h1() const { return h1_; }
  double h1s() const { return h1s_; }  // H^{1+sigma}

  /// Interleaved (Re, Im) for k = -K..K, tagged "H1(T)/K".
  Point to_point() const;
  static NlsState from_point(const Point& p, double sigma);

 private:
  std::vector<cplx> fourier_;
  double sigma_ = 1.0;
  double l2_ = 0.0, h1_ = 0.0, h1s_ = 0.0;
};

double sobolev_norm(std::span<const cplx> coefficients, double s);
double h1_distance(const NlsState& a, const NlsState& b);
std::string space_tag(int n_modes);
/// The H^1 metric on interleaved coordinate vectors.
MetricSpace h1_space(int n_modes, double diameter);

/// Bounded Lipschitz functionals on H^1 states (interleaved coordinates):
/// sin(Re u_k), sin(Im u_k) for |k| <= max_mode and 1 / (1 + ||u||_{L^2}),
/// each with sup + Lip <= 2 in the H^1 metric.
ObservableDictionary nls_dictionary(int n_modes, int max_mode);

/// Strang-split time integrator. Not thread-safe: use one per thread.
class Solver {
 public:
  explicit Solver(const NlsConfig& cfg);
  ~Solver();
  Solver(const Solver&) = delete;
  Solver& operator=(const Solver&) = delete;

  /// u(1) from u0 under the given forcing. Throws SimulationError with the
  /// 1-based substep index when the H^1 norm exceeds h1_cap or turns non-finite.
  NlsState time1(const NlsState& u0, const Forcing& eta) const;

  const NlsConfig& config() const { return cfg_; }

 private:
  struct Impl;
  NlsConfig cfg_;
  std::unique_ptr<Impl> impl_;
};

/// time1 with the forcing drawn from `seed`.
NlsState time1_map(const NlsConfig& cfg, const NoiseSpec& spec, const NlsState& u0, std::uint64_t seed);

/// The time-1 map as a random system over interleaved coordinates; the noise
/// sample is a theta vector. Solvers are pooled per thread.
RandomSystem as_random_system(const NlsConfig& cfg, const NoiseSpec& spec);

/// e^{-n^2 t} u0.
cplx linear_heat_mode_decay(int n, double t, cplx u0_hat);
/// e^{-(i n^2 + a) t} u0: modulus e^{-a t} |u0| for every n.
cplx linear_schrodinger_decay(int n, double a, double t, cplx u0_hat);

struct AttainableSample {
  std::vector<std::vector<NlsState>> layers;  // layers[0] = {0}
  std::vector<double> max_h1s;                // per depth
  double slope = 0.0;                         // max norm vs depth, later half
  double slope_std_error = 0.0;
  /// slope <= 2 standard errors: no growth trend.
  bool bounded = true;

  std::vector<NlsState> union_of_layers() const;
};

/// Layer d holds `breadth` states, each the time-1 image of a uniformly chosen
/// parent in layer d-1 under fresh noise; state i of layer d draws from
/// stream (stream_id(seed, d), i).
AttainableSample attainable_sample(const NlsConfig& cfg, const NoiseSpec& spec, int depth, int breadth,
                                   std::uint64_t seed, unsigned workers = 1);

/// Interleaved (Re u_k, Im u_k) columns for k = -K..K, one row per state.
void write_states_csv(std::ostream& out, std::span<const NlsState> states);

}  // namespace dvlab::nls
