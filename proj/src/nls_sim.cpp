#include "dvlab/nls_sim.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numbers>
#include <ostream>

#include "dvlab/errors.hpp"
#include "dvlab/io.hpp"
#include "dvlab/parallel.hpp"
#include "dvlab/stats.hpp"

namespace dvlab::nls {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;
const double kSqrtTwoPi = std::sqrt(kTwoPi);

// FFTW planning is not thread-safe; execution on distinct plans is.
std::mutex& fftw_mutex() {
  static std::mutex m;
  return m;
}

double bracket(int k) { return std::sqrt(1.0 + static_cast<double>(k) * k); }

std::size_t wrap(int k, int m) { return static_cast<std::size_t>(((k % m) + m) % m); }

// e^{2 pi i r / M}, r = 0..M-1.
std::vector<cplx> roots_of_unity(int m) {
  std::vector<cplx> w(static_cast<std::size_t>(m));
  for (int r = 0; r < m; ++r) w[static_cast<std::size_t>(r)] = std::polar(1.0, kTwoPi * r / m);
  return w;
}

double circular_distance(double x, double c) {
  double d = std::fmod(std::abs(x - c), kTwoPi);
  return std::min(d, kTwoPi - d);
}

}  // namespace

void NlsConfig::validate(bool allow_undamped) const {
  auto bad = [](const std::string& field, const std::string& why) {
    throw InvalidArgument("invalid NLS config field '" + field + "': " + why);
  };
  if (n_modes < 1) bad("n_modes", "must be >= 1");
  if (p < 3 || p % 2 == 0) bad("p", "must be an odd integer >= 3");
  if (!(dt > 0.0) || dt > 1.0) bad("dt", "must lie in (0, 1]");
  if (std::abs(1.0 / dt - std::round(1.0 / dt)) > 1e-9 * (1.0 / dt)) bad("dt", "must divide 1");
  if (!(sigma > 0.0)) bad("sigma", "must be > 0");
  if (!(B > 0.0) || !std::isfinite(B)) bad("B", "must be > 0");
  if (N_active < 0 || N_active > n_modes) bad("N_active", "must lie in [0, n_modes]");
  if (!std::isfinite(a0) || a0 < 0.0) bad("a0", "must be >= 0");
  if (a0 == 0.0 && !allow_undamped) bad("a0", "damping must not vanish identically");
  if (!(damping_arc > 0.0)) bad("damping_arc", "must be > 0");
  if (!(chi_arc > 0.0)) bad("chi_arc", "must be > 0");
  if (time_modes < 1) bad("time_modes", "must be >= 1");
  if (!(h1_cap > 0.0)) bad("h1_cap", "must be > 0");
}

int NlsConfig::steps() const { return static_cast<int>(std::lround(1.0 / dt)); }

int NlsConfig::grid_size() const {
  int m = 1;
  while (m <= (p + 1) * n_modes) m *= 2;
  return m;
}

double bump(double x, double center, double arc) {
  if (arc >= kTwoPi) return 1.0;
  const double r = circular_distance(x, center) / (0.5 * arc);
  if (r >= 1.0) return 0.0;
  return std::exp(1.0 - 1.0 / (1.0 - r * r));
}

double damping(const NlsConfig& cfg, double x) { return cfg.a0 * bump(x, cfg.damping_center, cfg.damping_arc); }

double cutoff(const NlsConfig& cfg, double x) { return bump(x, cfg.chi_center, cfg.chi_arc); }

double theta_density(double s) { return std::abs(s) > 1.0 ? 0.0 : 0.5 * (1.0 + std::cos(kPi * s)); }

double theta_cdf(double s) {
  if (s <= -1.0) return 0.0;
  if (s >= 1.0) return 1.0;
  return 0.5 * (s + 1.0) + std::sin(kPi * s) / kTwoPi;
}

double sample_theta(Rng& rng) {
  const double u = rng.uniform_open();
  double lo = -1.0, hi = 1.0, s = 2.0 * u - 1.0;
  for (int it = 0; it < 100; ++it) {
    const double g = theta_cdf(s) - u;
    if (std::abs(g) < 1e-15) break;
    if (g > 0) hi = s;
    else lo = s;
    const double d = theta_density(s);
    double next = d > 0.0 ? s - g / d : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - s) < 1e-16) break;
    s = next;
  }
  return s;
}

double time_basis(int j, double t) {
  if (j < 1) throw InvalidArgument("time basis index must be >= 1");
  if (j == 1) return 1.0;
  return std::numbers::sqrt2 * std::cos((j - 1) * kPi * t);
}

NoiseSpec NoiseSpec::zero(const NlsConfig& cfg) {
  NoiseSpec s;
  s.time_modes = cfg.time_modes;
  s.n_modes = cfg.n_modes;
  s.N_active = -1;
  s.sigma = cfg.sigma;
  s.B = cfg.B;
  s.b = Eigen::MatrixXd::Zero(cfg.time_modes, 2 * cfg.n_modes + 1);
  return s;
}

NoiseSpec NoiseSpec::defaults(const NlsConfig& cfg) {
  cfg.validate(true);
  NoiseSpec s = zero(cfg);
  s.N_active = cfg.N_active;
  for (int j = 1; j <= s.time_modes; ++j)
    for (int k = -s.N_active; k <= s.N_active; ++k)
      s.b(j - 1, k + s.n_modes) = std::pow(bracket(k), -(1.0 + s.sigma + 0.1)) / ((1.0 + j) * (1.0 + j));
  const double w = s.weighted_sum();
  if (w > 0.0) s.b *= std::sqrt(s.B / w);
  return s;
}

double NoiseSpec::weighted_sum() const {
  double total = 0.0;
  for (int j = 0; j < b.rows(); ++j)
    for (int k = -n_modes; k <= n_modes; ++k) {
      const double v = b(j, k + n_modes);
      total += v * v * std::pow(bracket(k), 2.0 * (1.0 + sigma));
    }
  return total;
}

void NoiseSpec::validate() const {
  if (b.rows() != time_modes || b.cols() != 2 * n_modes + 1)
    throw InvalidArgument("noise coefficients must be a time_modes x (2 n_modes + 1) array");
  for (int j = 0; j < b.rows(); ++j)
    for (int c = 0; c < b.cols(); ++c)
      if (!std::isfinite(b(j, c)) || b(j, c) < 0.0)
        throw InvalidArgument("noise coefficient b(" + std::to_string(j + 1) + ", " +
                              std::to_string(c - n_modes) + ") must be finite and >= 0");
  if (weighted_sum() > B * (1.0 + 1e-12))
    throw InvalidArgument("noise coefficients violate the bound sum b^2 <k>^{2(1+sigma)} <= B");
  for (int j = 0; j < b.rows(); ++j)
    for (int k = -N_active; k <= N_active; ++k)
      if (!(b(j, k + n_modes) > 0.0))
        throw InvalidArgument("noise is degenerate: b(" + std::to_string(j + 1) + ", " + std::to_string(k) +
                              ") = 0 inside the active range");
}

std::size_t NoiseSpec::theta_count() const {
  return 2 * static_cast<std::size_t>((b.array() > 0.0).count());
}

std::vector<double> draw_theta(const NoiseSpec& spec, Rng& rng) {
  std::vector<double> theta(spec.theta_count());
  for (double& t : theta) t = sample_theta(rng);
  return theta;
}

Forcing::Forcing(const NlsConfig& cfg, const NoiseSpec& spec, std::span<const double> theta)
    : grid_(cfg.grid_size()), n_modes_(cfg.n_modes) {
  if (spec.n_modes != cfg.n_modes) throw InvalidArgument("noise spec and config disagree on n_modes");
  if (theta.size() != spec.theta_count())
    throw InvalidArgument("expected " + std::to_string(spec.theta_count()) + " theta values, got " +
                          std::to_string(theta.size()));
  for (double t : theta)
    if (!(std::abs(t) <= 1.0)) throw InvalidArgument("theta values must lie in [-1, 1]");

  const auto M = static_cast<std::size_t>(grid_);
  const std::vector<cplx> w = roots_of_unity(grid_);
  std::vector<double> chi(M);
  for (std::size_t m = 0; m < M; ++m) chi[m] = cutoff(cfg, kTwoPi * static_cast<double>(m) / grid_);

  fields_.assign(static_cast<std::size_t>(spec.time_modes), std::vector<cplx>(M, cplx{}));
  std::size_t next = 0;
  for (int j = 0; j < spec.time_modes; ++j) {
    auto& field = fields_[static_cast<std::size_t>(j)];
    for (int k = -n_modes_; k <= n_modes_; ++k) {
      const double bjk = spec.b(j, k + n_modes_);
      if (!(bjk > 0.0)) continue;
      const cplx c = bjk * cplx(theta[next], theta[next + 1]) / kSqrtTwoPi;
      energy_ += bjk * bjk * std::pow(bracket(k), 2.0 * (1.0 + spec.sigma)) *
                 (theta[next] * theta[next] + theta[next + 1] * theta[next + 1]);
      next += 2;
      if (c == cplx{}) continue;
      zero_ = false;
      for (std::size_t m = 0; m < M; ++m) field[m] += c * w[wrap(static_cast<int>((k * static_cast<long>(m)) % grid_), grid_)];
    }
    for (std::size_t m = 0; m < M; ++m) field[m] *= chi[m];
  }
}

void Forcing::physical(double t, std::vector<cplx>& out) const {
  out.assign(static_cast<std::size_t>(grid_), cplx{});
  if (zero_) return;
  for (std::size_t j = 0; j < fields_.size(); ++j) {
    const double a = time_basis(static_cast<int>(j) + 1, t);
    const auto& f = fields_[j];
    for (std::size_t m = 0; m < f.size(); ++m) out[m] += a * f[m];
  }
}

std::vector<cplx> Forcing::coefficients(double t) const {
  std::vector<cplx> field;
  physical(t, field);
  const std::vector<cplx> w = roots_of_unity(grid_);
  std::vector<cplx> out(static_cast<std::size_t>(2 * n_modes_ + 1));
  const double scale = kSqrtTwoPi / grid_;
  for (int k = -n_modes_; k <= n_modes_; ++k) {
    cplx s{};
    for (int m = 0; m < grid_; ++m) s += field[static_cast<std::size_t>(m)] * std::conj(w[wrap(static_cast<int>((k * static_cast<long>(m)) % grid_), grid_)]);
    out[static_cast<std::size_t>(k + n_modes_)] = s * scale;
  }
  return out;
}

Forcing noise_sample(const NlsConfig& cfg, const NoiseSpec& spec, std::uint64_t seed) {
  Rng rng(seed, 0);
  const std::vector<double> theta = draw_theta(spec, rng);
  return Forcing(cfg, spec, theta);
}

double sobolev_norm(std::span<const cplx> c, double s) {
  const int K = static_cast<int>(c.size() / 2);
  double total = 0.0;
  for (int k = -K; k <= K; ++k) total += std::pow(bracket(k), 2.0 * s) * std::norm(c[static_cast<std::size_t>(k + K)]);
  return std::sqrt(total);
}

NlsState::NlsState(std::vector<cplx> coefficients, double sigma) : fourier_(std::move(coefficients)), sigma_(sigma) {
  if (fourier_.size() % 2 != 1) throw InvalidArgument("Fourier vector must have odd length 2K + 1");
  l2_ = sobolev_norm(fourier_, 0.0);
  h1_ = sobolev_norm(fourier_, 1.0);
  h1s_ = sobolev_norm(fourier_, 1.0 + sigma_);
}

NlsState NlsState::zero(int n_modes, double sigma) {
  return NlsState(std::vector<cplx>(static_cast<std::size_t>(2 * n_modes + 1)), sigma);
}

NlsState NlsState::single_mode(int n_modes, double sigma, int k, cplx value) {
  if (std::abs(k) > n_modes) throw InvalidArgument("mode index outside the truncation");
  std::vector<cplx> c(static_cast<std::size_t>(2 * n_modes + 1));
  c[static_cast<std::size_t>(k + n_modes)] = value;
  return NlsState(std::move(c), sigma);
}

std::string space_tag(int n_modes) { return "H1(T)/K=" + std::to_string(n_modes); }

Point NlsState::to_point() const {
  std::vector<double> coords;
  coords.reserve(2 * fourier_.size());
  for (const cplx& c : fourier_) {
    coords.push_back(c.real());
    coords.push_back(c.imag());
  }
  return make_point(std::move(coords), space_tag(n_modes()));
}

NlsState NlsState::from_point(const Point& p, double sigma) {
  if (p.coords.size() % 4 != 2) throw InvalidArgument("point does not hold 2K + 1 interleaved coefficients");
  const int K = static_cast<int>(p.coords.size() / 4);
  if (p.space != space_tag(K)) throw InvalidArgument("point from space '" + p.space + "' is not an NLS state");
  std::vector<cplx> c(static_cast<std::size_t>(2 * K + 1));
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = {p.coords[2 * i], p.coords[2 * i + 1]};
  return NlsState(std::move(c), sigma);
}

double h1_distance(const NlsState& a, const NlsState& b) {
  if (a.n_modes() != b.n_modes()) throw InvalidArgument("states with different truncations");
  std::vector<cplx> d(a.fourier().size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = a.fourier()[i] - b.fourier()[i];
  return sobolev_norm(d, 1.0);
}

MetricSpace h1_space(int n_modes, double diameter) {
  std::vector<double> weight(static_cast<std::size_t>(4 * n_modes + 2));
  for (int k = -n_modes; k <= n_modes; ++k) {
    const double w = 1.0 + static_cast<double>(k) * k;
    weight[static_cast<std::size_t>(2 * (k + n_modes))] = w;
    weight[static_cast<std::size_t>(2 * (k + n_modes) + 1)] = w;
  }
  return MetricSpace{space_tag(n_modes),
                     [weight](std::span<const double> a, std::span<const double> b) {
                       if (a.size() != weight.size() || b.size() != weight.size())
                         throw InvalidArgument("coordinate vector has the wrong length for this truncation");
                       double s = 0.0;
                       for (std::size_t i = 0; i < a.size(); ++i) s += weight[i] * (a[i] - b[i]) * (a[i] - b[i]);
                       return std::sqrt(s);
                     },
                     diameter};
}

ObservableDictionary nls_dictionary(int n_modes, int max_mode) {
  if (max_mode < 0 || max_mode > n_modes) throw InvalidArgument("max_mode must lie in [0, n_modes]");
  ObservableDictionary dict;
  for (int k = -max_mode; k <= max_mode; ++k)
    for (int part = 0; part < 2; ++part) {
      const auto at = static_cast<std::size_t>(2 * (k + n_modes) + part);
      dict.entries.push_back({(part == 0 ? "sin_re_" : "sin_im_") + std::to_string(k),
                              [at](const Point& x) { return std::sin(x.coords.at(at)); }, 2.0});
    }
  dict.entries.push_back({"inv_mass", [](const Point& x) {
                            double s = 0.0;
                            for (double c : x.coords) s += c * c;
                            return 1.0 / (1.0 + std::sqrt(s));
                          },
                          2.0});
  return dict;
}

struct Solver::Impl {
  int K = 0;
  int M = 0;
  fftw_complex* buf = nullptr;
  fftw_plan forward = nullptr;
  fftw_plan backward = nullptr;
  std::vector<double> a;           // damping on the grid
  std::vector<cplx> half_linear;   // e^{-i k^2 dt / 2}
  std::vector<cplx> eta;           // forcing workspace
  std::vector<cplx> u;             // physical workspace

  cplx* data() { return reinterpret_cast<cplx*>(buf); }

  // d/dt u = -a u - i |u|^{p-1} u - i eta, projected onto |k| <= K.
  void rhs(const NlsConfig& cfg, const Forcing& f, double t, const std::vector<cplx>& in, std::vector<cplx>& out) {
    cplx* z = data();
    std::fill(z, z + M, cplx{});
    for (int k = -K; k <= K; ++k) z[wrap(k, M)] = in[static_cast<std::size_t>(k + K)];
    fftw_execute(backward);
    const bool forced = !f.is_zero();
    if (forced) f.physical(t, eta);
    const int half = (cfg.p - 1) / 2;
    for (int m = 0; m < M; ++m) {
      const cplx v = z[m] / kSqrtTwoPi;
      cplx r = -a[static_cast<std::size_t>(m)] * v;
      if (cfg.nonlinear) {
        const double n2 = std::norm(v);
        double g = n2;
        for (int e = 1; e < half; ++e) g *= n2;
        r -= cplx(0.0, g) * v;
      }
      if (forced) r -= cplx(0.0, 1.0) * eta[static_cast<std::size_t>(m)];
      z[m] = r;
    }
    fftw_execute(forward);
    const double scale = kSqrtTwoPi / M;
    for (int k = -K; k <= K; ++k) out[static_cast<std::size_t>(k + K)] = z[wrap(k, M)] * scale;
  }

  ~Impl() {
    std::lock_guard<std::mutex> lock(fftw_mutex());
    if (forward) fftw_destroy_plan(forward);
    if (backward) fftw_destroy_plan(backward);
    if (buf) fftw_free(buf);
  }
};

Solver::Solver(const NlsConfig& cfg) : cfg_(cfg), impl_(std::make_unique<Impl>()) {
  cfg_.validate(true);
  Impl& s = *impl_;
  s.K = cfg_.n_modes;
  s.M = cfg_.grid_size();
  {
    std::lock_guard<std::mutex> lock(fftw_mutex());
    s.buf = fftw_alloc_complex(static_cast<std::size_t>(s.M));
    s.forward = fftw_plan_dft_1d(s.M, s.buf, s.buf, FFTW_FORWARD, FFTW_ESTIMATE);
    s.backward = fftw_plan_dft_1d(s.M, s.buf, s.buf, FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  if (!s.buf || !s.forward || !s.backward) throw Error("FFTW planning failed");
  s.a.resize(static_cast<std::size_t>(s.M));
  for (int m = 0; m < s.M; ++m) s.a[static_cast<std::size_t>(m)] = damping(cfg_, kTwoPi * m / s.M);
  s.half_linear.resize(static_cast<std::size_t>(2 * s.K + 1));
  for (int k = -s.K; k <= s.K; ++k)
    s.half_linear[static_cast<std::size_t>(k + s.K)] = std::polar(1.0, -0.5 * cfg_.dt * k * k);
}

Solver::~Solver() = default;

NlsState Solver::time1(const NlsState& u0, const Forcing& eta) const {
  Impl& s = *impl_;
  if (u0.n_modes() != s.K) throw InvalidArgument("initial state truncation differs from the solver's");
  if (eta.grid() != s.M) throw InvalidArgument("forcing grid differs from the solver's");
  const auto n = static_cast<std::size_t>(2 * s.K + 1);
  std::vector<cplx> u = u0.fourier(), k1(n), k2(n), k3(n), k4(n), tmp(n);
  for (const cplx& c : u)
    if (!std::isfinite(c.real()) || !std::isfinite(c.imag())) throw SimulationError("non-finite initial state", 0);
  const double h = cfg_.dt;
  const int steps = cfg_.steps();
  for (int step = 0; step < steps; ++step) {
    const double t = step * h;
    for (std::size_t i = 0; i < n; ++i) u[i] *= s.half_linear[i];
    s.rhs(cfg_, eta, t, u, k1);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = u[i] + 0.5 * h * k1[i];
    s.rhs(cfg_, eta, t + 0.5 * h, tmp, k2);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = u[i] + 0.5 * h * k2[i];
    s.rhs(cfg_, eta, t + 0.5 * h, tmp, k3);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = u[i] + h * k3[i];
    s.rhs(cfg_, eta, t + h, tmp, k4);
    for (std::size_t i = 0; i < n; ++i) {
      u[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
      u[i] *= s.half_linear[i];
    }
    const double norm = sobolev_norm(u, 1.0);
    if (!std::isfinite(norm)) throw SimulationError("non-finite NLS state", step + 1);
    if (norm > cfg_.h1_cap)
      throw SimulationError("H1 norm " + format_double(norm) + " exceeds the cap " + format_double(cfg_.h1_cap),
                            step + 1);
  }
  return NlsState(std::move(u), cfg_.sigma);
}

NlsState time1_map(const NlsConfig& cfg, const NoiseSpec& spec, const NlsState& u0, std::uint64_t seed) {
  Solver solver(cfg);
  return solver.time1(u0, noise_sample(cfg, spec, seed));
}

namespace {

// Solvers handed out to whichever thread asks; returned on scope exit.
class SolverPool {
 public:
  explicit SolverPool(NlsConfig cfg) : cfg_(std::move(cfg)) {}

  class Lease {
   public:
    Lease(SolverPool& pool, std::unique_ptr<Solver> s) : pool_(pool), solver_(std::move(s)) {}
    ~Lease() {
      std::lock_guard<std::mutex> lock(pool_.mutex_);
      pool_.free_.push_back(std::move(solver_));
    }
    Lease(const Lease&) = delete;
    Lease& operator=(const Lease&) = delete;
    const Solver& operator*() const { return *solver_; }

   private:
    SolverPool& pool_;
    std::unique_ptr<Solver> solver_;
  };

  Lease acquire() {
    {
      std::lock_guard<std::mutex> lock(mutex_);
      if (!free_.empty()) {
        auto s = std::move(free_.back());
        free_.pop_back();
        return Lease(*this, std::move(s));
      }
    }
    return Lease(*this, std::make_unique<Solver>(cfg_));
  }

 private:
  NlsConfig cfg_;
  std::mutex mutex_;
  std::vector<std::unique_ptr<Solver>> free_;
};

}  // namespace

RandomSystem as_random_system(const NlsConfig& cfg, const NoiseSpec& spec) {
  cfg.validate(true);
  spec.validate();
  auto pool = std::make_shared<SolverPool>(cfg);
  auto shared_spec = std::make_shared<const NoiseSpec>(spec);
  const double sigma = cfg.sigma;
  const int K = cfg.n_modes;
  StepFunction step = [pool, shared_spec, cfg, sigma, K](std::span<const double> x, std::span<const double> theta) {
    Point p{std::vector<double>(x.begin(), x.end()), space_tag(K)};
    const NlsState u0 = NlsState::from_point(p, sigma);
    const Forcing eta(cfg, *shared_spec, theta);
    auto lease = pool->acquire();
    return (*lease).time1(u0, eta).to_point().coords;
  };
  NoiseSource noise{"theta in [-1,1]^" + std::to_string(spec.theta_count()),
                    [shared_spec](Rng& rng) { return draw_theta(*shared_spec, rng); }};
  return RandomSystem{RdsMap{h1_space(K, std::numeric_limits<double>::infinity()), std::move(step),
                             std::numeric_limits<double>::infinity()},
                      std::move(noise)};
}

cplx linear_heat_mode_decay(int n, double t, cplx u0_hat) {
  if (t < 0.0) throw InvalidArgument("time must be >= 0");
  return std::exp(-static_cast<double>(n) * n * t) * u0_hat;
}

cplx linear_schrodinger_decay(int n, double a, double t, cplx u0_hat) {
  if (t < 0.0) throw InvalidArgument("time must be >= 0");
  if (a < 0.0) throw InvalidArgument("damping must be >= 0");
  return std::polar(std::exp(-a * t), -static_cast<double>(n) * n * t) * u0_hat;
}

std::vector<NlsState> AttainableSample::union_of_layers() const {
  std::vector<NlsState> all;
  for (const auto& layer : layers) all.insert(all.end(), layer.begin(), layer.end());
  return all;
}

AttainableSample attainable_sample(const NlsConfig& cfg, const NoiseSpec& spec, int depth, int breadth,
                                   std::uint64_t seed, unsigned workers) {
  if (depth < 0) throw InvalidArgument("depth must be >= 0");
  if (breadth < 1) throw InvalidArgument("breadth must be >= 1");
  cfg.validate(true);
  spec.validate();
  SolverPool pool(cfg);
  AttainableSample out;
  out.layers.push_back({NlsState::zero(cfg.n_modes, cfg.sigma)});
  out.max_h1s.push_back(0.0);
  for (int d = 1; d <= depth; ++d) {
    const auto& parents = out.layers.back();
    std::vector<NlsState> layer(static_cast<std::size_t>(breadth));
    parallel_for(layer.size(), workers, [&](std::size_t i) {
      Rng rng(stream_id(seed, static_cast<std::uint64_t>(d)), i);
      const auto parent = static_cast<std::size_t>(rng.uniform() * static_cast<double>(parents.size()));
      const std::vector<double> theta = draw_theta(spec, rng);
      const Forcing eta(cfg, spec, theta);
      auto lease = pool.acquire();
      layer[i] = (*lease).time1(parents[std::min(parent, parents.size() - 1)], eta);
    });
    double mx = 0.0;
    for (const auto& s : layer) mx = std::max(mx, s.h1s());
    out.max_h1s.push_back(mx);
    out.layers.push_back(std::move(layer));
  }
  const int first = depth / 2 + 1;
  if (depth - first + 1 >= 3) {
    std::vector<double> x, y;
    for (int d = first; d <= depth; ++d) {
      x.push_back(d);
      y.push_back(out.max_h1s[static_cast<std::size_t>(d)]);
    }
    const LinearFit fit = fit_line(x, y);
    out.slope = fit.slope;
    out.slope_std_error = fit.slope_std_error;
    const double scale = *std::max_element(y.begin(), y.end());
    out.bounded = fit.slope <= 2.0 * fit.slope_std_error + 1e-12 * scale;
  }
  return out;
}

void write_states_csv(std::ostream& out, std::span<const NlsState> states) {
  if (states.empty()) throw InvalidArgument("no states to write");
  const int K = states.front().n_modes();
  std::vector<std::string> header;
  for (int k = -K; k <= K; ++k) {
    header.push_back("re_" + std::to_string(k));
    header.push_back("im_" + std::to_string(k));
  }
  CsvWriter csv(out, header);
  for (const auto& s : states) {
    if (s.n_modes() != K) throw InvalidArgument("states with different truncations");
    for (const cplx& c : s.fourier()) csv.cell(c.real()).cell(c.imag());
    csv.end_row();
  }
}

}  // namespace dvlab::nls
