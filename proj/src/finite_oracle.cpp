#include "dvlab/finite_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <sstream>

#include "dvlab/errors.hpp"
#include "dvlab/io.hpp"
#include "dvlab/stats.hpp"

namespace dvlab::finite {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::string describe_row(const std::vector<std::string>& labels, int i) {
  std::ostringstream os;
  os << "row " << i;
  if (i < static_cast<int>(labels.size())) os << " (label '" << labels[static_cast<std::size_t>(i)] << "')";
  return os.str();
}

bool strongly_connected(const Eigen::MatrixXd& A) {
  const int m = static_cast<int>(A.rows());
  auto reach_all = [&](bool transpose) {
    std::vector<char> seen(static_cast<std::size_t>(m), 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    int count = 1;
    while (!stack.empty()) {
      const int x = stack.back();
      stack.pop_back();
      for (int y = 0; y < m; ++y) {
        const double w = transpose ? A(y, x) : A(x, y);
        if (w > 0.0 && !seen[static_cast<std::size_t>(y)]) {
          seen[static_cast<std::size_t>(y)] = 1;
          ++count;
          stack.push_back(y);
        }
      }
    }
    return count == m;
  };
  return m > 0 && reach_all(false) && reach_all(true);
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& node, int m, const char* name) {
  Eigen::MatrixXd out(m, m);
  if (!node.is_array()) throw InvalidArgument(std::string("chain field '") + name + "' must be an array");
  if (!node.empty() && node.front().is_array()) {
    if (static_cast<int>(node.size()) != m)
      throw InvalidArgument(std::string("chain field '") + name + "' must have " + std::to_string(m) + " rows");
    for (int i = 0; i < m; ++i) {
      const auto& row = node[static_cast<std::size_t>(i)];
      if (!row.is_array() || static_cast<int>(row.size()) != m)
        throw InvalidArgument(std::string("chain field '") + name + "' row " + std::to_string(i) +
                              " must have " + std::to_string(m) + " entries");
      for (int j = 0; j < m; ++j) out(i, j) = row[static_cast<std::size_t>(j)].get<double>();
    }
  } else {
    if (static_cast<int>(node.size()) != m * m)
      throw InvalidArgument(std::string("chain field '") + name + "' must hold m*m = " +
                            std::to_string(m * m) + " row-major entries");
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) out(i, j) = node[static_cast<std::size_t>(i * m + j)].get<double>();
  }
  return out;
}

}  // namespace

FiniteChain::FiniteChain(Eigen::MatrixXd transition, std::vector<std::string> labels, Eigen::MatrixXd metric)
    : transition_(std::move(transition)), labels_(std::move(labels)), metric_(std::move(metric)) {
  const int m = static_cast<int>(transition_.rows());
  if (m < 1 || transition_.cols() != m) throw InvalidArgument("transition matrix must be square and non-empty");
  if (static_cast<int>(labels_.size()) != m) throw InvalidArgument("need one label per state");
  if (metric_.rows() != m || metric_.cols() != m) throw InvalidArgument("metric must be m x m");
  for (int i = 0; i < m; ++i) {
    double sum = 0.0;
    for (int j = 0; j < m; ++j) {
      const double p = transition_(i, j);
      if (!std::isfinite(p) || p < 0.0)
        throw InvalidArgument(describe_row(labels_, i) + " of P has a negative or non-finite entry");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12)
      throw InvalidArgument(describe_row(labels_, i) + " of P sums to " + format_double(sum) + ", not 1");
  }
  for (int i = 0; i < m; ++i) {
    if (metric_(i, i) != 0.0) throw InvalidArgument("metric has a nonzero diagonal at " + describe_row(labels_, i));
    for (int j = 0; j < m; ++j) {
      if (!std::isfinite(metric_(i, j)) || metric_(i, j) < 0.0 || metric_(i, j) != metric_(j, i))
        throw InvalidArgument("metric is not symmetric and nonnegative at (" + std::to_string(i) + ", " +
                              std::to_string(j) + ")");
      if (i != j && metric_(i, j) == 0.0)
        throw InvalidArgument("metric does not separate states " + std::to_string(i) + " and " + std::to_string(j));
    }
  }
  if (m <= 64) {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j)
        for (int k = 0; k < m; ++k)
          if (metric_(i, k) > metric_(i, j) + metric_(j, k) + 1e-12 * metric_.maxCoeff())
            throw InvalidArgument("metric violates the triangle inequality at (" + std::to_string(i) + ", " +
                                  std::to_string(j) + ", " + std::to_string(k) + ")");
  }
}

FiniteChain::FiniteChain(Eigen::MatrixXd transition)
    : FiniteChain(
          transition,
          [&] {
            std::vector<std::string> l;
            for (int i = 0; i < transition.rows(); ++i) l.push_back(std::to_string(i + 1));
            return l;
          }(),
          [&] {
            const auto m = transition.rows();
            Eigen::MatrixXd d = Eigen::MatrixXd::Ones(m, m);
            d.diagonal().setZero();
            return d;
          }()) {}

FiniteChain FiniteChain::from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("P")) throw InvalidArgument("chain document needs a 'P' field");
  const auto& p = doc.at("P");
  if (!p.is_array() || p.empty()) throw InvalidArgument("chain field 'P' must be a non-empty array");
  int m = 0;
  if (p.front().is_array()) {
    m = static_cast<int>(p.size());
  } else {
    m = static_cast<int>(std::lround(std::sqrt(static_cast<double>(p.size()))));
    if (m * m != static_cast<int>(p.size())) throw InvalidArgument("flat 'P' length is not a perfect square");
  }
  std::vector<std::string> labels;
  if (doc.contains("labels")) {
    labels = doc.at("labels").get<std::vector<std::string>>();
  } else {
    for (int i = 0; i < m; ++i) labels.push_back(std::to_string(i + 1));
  }
  Eigen::MatrixXd metric;
  if (doc.contains("metric")) {
    metric = matrix_from_json(doc.at("metric"), m, "metric");
  } else {
    metric = Eigen::MatrixXd::Ones(m, m);
    metric.diagonal().setZero();
  }
  return FiniteChain(matrix_from_json(p, m, "P"), std::move(labels), std::move(metric));
}

nlohmann::json FiniteChain::to_json() const {
  nlohmann::json doc;
  doc["labels"] = labels_;
  std::vector<double> p, d;
  for (int i = 0; i < size(); ++i)
    for (int j = 0; j < size(); ++j) {
      p.push_back(transition_(i, j));
      d.push_back(metric_(i, j));
    }
  doc["P"] = p;
  doc["metric"] = d;
  return doc;
}

bool FiniteChain::irreducible() const { return strongly_connected(transition_); }

Eigen::VectorXd FiniteChain::stationary() const {
  const int m = size();
  Eigen::MatrixXd A(m + 1, m);
  A.topRows(m) = transition_.transpose() - Eigen::MatrixXd::Identity(m, m);
  A.row(m).setOnes();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(m + 1);
  b(m) = 1.0;
  Eigen::VectorXd pi = A.colPivHouseholderQr().solve(b);
  return pi;
}

std::string FiniteChain::space_tag() const { return "finite:" + std::to_string(size()); }

Point FiniteChain::state(int i) const {
  if (i < 0 || i >= size()) throw InvalidArgument("state index " + std::to_string(i) + " out of range");
  return Point{{static_cast<double>(i)}, space_tag()};
}

int FiniteChain::index_of(const Point& p) const {
  if (p.space != space_tag() || p.coords.size() != 1)
    throw InvalidArgument("point does not belong to this finite chain");
  const double v = p.coords[0];
  const int i = static_cast<int>(v);
  if (i < 0 || i >= size() || static_cast<double>(i) != v)
    throw InvalidArgument("point coordinate is not a state index");
  return i;
}

MetricSpace FiniteChain::metric_space() const {
  return MetricSpace{space_tag(),
                     [d = metric_](std::span<const double> a, std::span<const double> b) {
                       return d(static_cast<Eigen::Index>(a[0]), static_cast<Eigen::Index>(b[0]));
                     },
                     diameter()};
}

int FiniteChain::next_state(int x, double u) const {
  const int m = size();
  double c = 0.0;
  int last = 0;
  for (int j = 0; j < m; ++j) {
    const double p = transition_(x, j);
    if (p <= 0.0) continue;
    c += p;
    last = j;
    if (u < c) return j;
  }
  return last;
}

RandomSystem FiniteChain::as_random_system() const {
  const int m = size();
  double min_gap = std::numeric_limits<double>::infinity();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      if (i != j) min_gap = std::min(min_gap, metric_(i, j));
  RdsMap map{metric_space(),
             [chain = *this](std::span<const double> x, std::span<const double> noise) {
               return std::vector<double>{static_cast<double>(chain.next_state(static_cast<int>(x[0]), noise[0]))};
             },
             m > 1 ? diameter() / min_gap : 0.0};
  NoiseSource noise{"uniform[0,1)", [](Rng& rng) { return NoiseSample{rng.uniform()}; }};
  return RandomSystem{std::move(map), std::move(noise)};
}

TiltedKernel tilted_kernel(const FiniteChain& chain, const Eigen::VectorXd& V) {
  if (V.size() != chain.size())
    throw InvalidArgument("potential has " + std::to_string(V.size()) + " entries for a chain of size " +
                          std::to_string(chain.size()));
  TiltedKernel k{chain.transition(), V};
  for (int y = 0; y < chain.size(); ++y) k.Q.col(y) *= std::exp(V(y));
  return k;
}

PerronTriple perron_triple(const TiltedKernel& kernel, double tol, int iteration_cap) {
  return perron_triple(kernel.Q, tol, iteration_cap);
}

PerronTriple perron_triple(const Eigen::MatrixXd& Q, double tol, int iteration_cap) {
  if (!(tol > 0.0)) throw InvalidArgument("perron_triple needs tol > 0");
  const Eigen::Index m = Q.rows();
  if (m < 1 || Q.cols() != m) throw InvalidArgument("perron_triple needs a square matrix");
  if ((Q.array() < 0.0).any() || !Q.allFinite()) throw InvalidArgument("perron_triple needs a finite nonnegative matrix");
  if (!strongly_connected(Q)) throw InvalidArgument("kernel is reducible; Perron theory does not apply");

  const double scale = Q.rowwise().sum().maxCoeff();
  const Eigen::MatrixXd A = Q + 1e-3 * scale * Eigen::MatrixXd::Identity(m, m);

  PerronTriple t;
  Eigen::VectorXd h = Eigen::VectorXd::Ones(m);
  Eigen::VectorXd mu = Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m));
  int it = 0;
  for (; it < iteration_cap; ++it) {
    Eigen::VectorXd h_next = A * h;
    h_next /= h_next.maxCoeff();
    Eigen::VectorXd mu_next = A.transpose() * mu;
    mu_next /= mu_next.sum();
    const double change = std::max((h_next - h).cwiseAbs().maxCoeff(), (mu_next - mu).cwiseAbs().maxCoeff() * m);
    h = std::move(h_next);
    mu = std::move(mu_next);
    if (change < 1e-11) break;
  }
  t.iterations = it + 1;

  auto rayleigh = [&](const Eigen::VectorXd& hv, const Eigen::VectorXd& mv) {
    return mv.dot(Q * hv) / mv.dot(hv);
  };
  double lambda = rayleigh(h, mu);

  // Shifted inverse iteration on Q itself.
  for (int r = 0; r < 3; ++r) {
    const double shift = lambda * (1.0 + 1e-10);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(Q - shift * Eigen::MatrixXd::Identity(m, m));
    Eigen::VectorXd h_ref = lu.solve(h);
    Eigen::VectorXd mu_ref = lu.transpose().solve(mu);
    if (!h_ref.allFinite() || !mu_ref.allFinite()) break;
    // The Perron vectors are positive; entries that come back with the wrong
    // sign are round-off on components many orders below the largest one.
    h_ref = (h_ref / h_ref.sum()).cwiseAbs();
    mu_ref = (mu_ref / mu_ref.sum()).cwiseAbs();
    if (!(h_ref.maxCoeff() > 0.0) || !(mu_ref.maxCoeff() > 0.0)) break;
    h = h_ref / h_ref.maxCoeff();
    mu = mu_ref;
    lambda = rayleigh(h, mu);
  }

  mu /= mu.sum();
  h /= h.dot(mu);
  t.lambda = lambda;
  t.h = h;
  t.mu = mu;
  t.eigen_residual = (Q * h - lambda * h).cwiseAbs().maxCoeff() / h.cwiseAbs().maxCoeff();
  t.dual_residual = (Q.transpose() * mu - lambda * mu).cwiseAbs().maxCoeff() / mu.cwiseAbs().maxCoeff();
  if (!(t.eigen_residual <= tol * scale) || !(t.dual_residual <= tol * scale))
    throw ConvergenceError("Perron iteration did not converge", std::max(t.eigen_residual, t.dual_residual));
  return t;
}

double pressure_exact(const FiniteChain& chain, const Eigen::VectorXd& V) {
  if (!chain.irreducible()) throw InvalidArgument("pressure_exact needs an irreducible chain");
  // Shift by max V so the tilted matrix stays O(1); Lambda(V + c) = Lambda(V) + c.
  const double c = V.size() ? V.maxCoeff() : 0.0;
  const Eigen::VectorXd shifted = V.array() - c;
  return std::log(perron_triple(tilted_kernel(chain, shifted)).lambda) + c;
}

Eigen::VectorXd pressure_gradient(const FiniteChain& chain, const Eigen::VectorXd& V) {
  const Eigen::VectorXd shifted = V.array() - V.maxCoeff();
  const auto t = perron_triple(tilted_kernel(chain, shifted));
  Eigen::VectorXd pi = t.h.cwiseProduct(t.mu);
  return pi / pi.sum();
}

namespace {

void check_probability_vector(const FiniteChain& chain, const Eigen::VectorXd& sigma) {
  if (sigma.size() != chain.size()) throw InvalidArgument("sigma has the wrong dimension");
  if ((sigma.array() < 0.0).any() || std::abs(sigma.sum() - 1.0) > 1e-9)
    throw InvalidArgument("sigma is not a probability vector");
}

// Solves H d = g on the non-degenerate eigenspace of the symmetric matrix H.
Eigen::VectorXd pseudo_solve(const Eigen::MatrixXd& H, const Eigen::VectorXd& g) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (H + H.transpose()));
  const auto& ev = es.eigenvalues();
  const double cut = 1e-13 * std::max(1e-300, ev.cwiseAbs().maxCoeff());
  Eigen::VectorXd coeff = es.eigenvectors().transpose() * g;
  for (Eigen::Index k = 0; k < ev.size(); ++k) coeff(k) = ev(k) > cut ? coeff(k) / ev(k) : 0.0;
  return es.eigenvectors() * coeff;
}

void cap_step(Eigen::VectorXd& d, double cap) {
  const double n = d.cwiseAbs().maxCoeff();
  if (n > cap) d *= cap / n;
}

}  // namespace

LegendreResult rate_function_legendre(const FiniteChain& chain, const Eigen::VectorXd& sigma, double theta_box) {
  check_probability_vector(chain, sigma);
  if (!(theta_box > 0.0)) throw InvalidArgument("theta_box must be positive");
  const int m = chain.size();
  LegendreResult res;
  if (m == 1) {
    res.maximizer = Eigen::VectorXd::Zero(1);
    return res;
  }
  auto objective = [&](const Eigen::VectorXd& V) { return sigma.dot(V) - pressure_exact(chain, V); };
  // Shift-invariance: centre V so both box faces have equal room, then clip.
  auto project = [&](Eigen::VectorXd V) {
    const double mid = 0.5 * (V.maxCoeff() + V.minCoeff());
    V.array() -= mid;
    return Eigen::VectorXd(V.cwiseMax(-theta_box).cwiseMin(theta_box));
  };

  Eigen::VectorXd V = Eigen::VectorXd::Zero(m);
  double value = objective(V);
  const double edge = theta_box * (1.0 - 1e-12);
  for (int it = 0; it < 500; ++it) {
    res.iterations = it + 1;
    const Eigen::VectorXd grad = sigma - pressure_gradient(chain, V);
    std::vector<int> free;
    for (int i = 0; i < m; ++i) {
      const bool pinned = (V(i) <= -edge && grad(i) < 0.0) || (V(i) >= edge && grad(i) > 0.0);
      if (!pinned) free.push_back(i);
    }
    double pg = 0.0;
    for (int i : free) pg = std::max(pg, std::abs(grad(i)));
    if (pg < 1e-13 || free.empty()) break;

    // Finite-difference Hessian of Lambda on the free coordinates.
    const int nf = static_cast<int>(free.size());
    Eigen::MatrixXd H(nf, nf);
    const double delta = 1e-5;
    for (int b = 0; b < nf; ++b) {
      Eigen::VectorXd up = V, dn = V;
      up(free[static_cast<std::size_t>(b)]) += delta;
      dn(free[static_cast<std::size_t>(b)]) -= delta;
      const Eigen::VectorXd diff = (pressure_gradient(chain, up) - pressure_gradient(chain, dn)) / (2 * delta);
      for (int a = 0; a < nf; ++a) H(a, b) = diff(free[static_cast<std::size_t>(a)]);
    }
    Eigen::VectorXd gf(nf);
    for (int a = 0; a < nf; ++a) gf(a) = grad(free[static_cast<std::size_t>(a)]);
    Eigen::VectorXd df = pseudo_solve(H, gf);
    if (df.dot(gf) <= 0.0) df = gf;
    cap_step(df, 5.0);
    Eigen::VectorXd dir = Eigen::VectorXd::Zero(m);
    for (int a = 0; a < nf; ++a) dir(free[static_cast<std::size_t>(a)]) = df(a);

    bool improved = false;
    for (int attempt = 0; attempt < 2 && !improved; ++attempt) {
      if (attempt == 1) {
        dir.setZero();
        for (int i : free) dir(i) = grad(i);
        cap_step(dir, 1.0);
      }
      double t = 1.0;
      for (int bt = 0; bt < 40; ++bt, t *= 0.5) {
        const Eigen::VectorXd trial = project(V + t * dir);
        const double tv = objective(trial);
        if (tv > value + 1e-4 * grad.dot(trial - V) && tv > value) {
          V = trial;
          value = tv;
          improved = true;
          break;
        }
      }
    }
    if (!improved) break;
  }
  // When the objective saturates in floating point before V reaches the box,
  // push the coordinates that still carry gradient onto the box face.
  {
    const Eigen::VectorXd grad = sigma - pressure_gradient(chain, V);
    Eigen::VectorXd dir = Eigen::VectorXd::Zero(m);
    for (int i = 0; i < m; ++i)
      if (grad(i) != 0.0) dir(i) = grad(i) > 0.0 ? 2 * theta_box : -2 * theta_box;
    if (dir.cwiseAbs().maxCoeff() > 0.0) {
      const Eigen::VectorXd trial = project(V + dir);
      const double tv = objective(trial);
      if (tv >= value - 1e-12 * std::max(1.0, std::abs(value))) {
        V = trial;
        value = std::max(value, tv);
      }
    }
  }
  res.value = std::max(0.0, value);
  res.maximizer = V;
  const Eigen::VectorXd grad = sigma - pressure_gradient(chain, V);
  for (int i = 0; i < m; ++i)
    if ((V(i) <= -edge && grad(i) < 0.0) || (V(i) >= edge && grad(i) > 0.0)) res.at_boundary = true;
  return res;
}

DvResult rate_function_dv(const FiniteChain& chain, const Eigen::VectorXd& sigma, double gradient_tol,
                          int iteration_cap) {
  check_probability_vector(chain, sigma);
  if (!chain.irreducible()) throw InvalidArgument("rate_function_dv needs an irreducible chain");
  const int m = chain.size();
  const Eigen::MatrixXd& P = chain.transition();
  Eigen::MatrixXd logP(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) logP(i, j) = P(i, j) > 0.0 ? std::log(P(i, j)) : kNegInf;

  // G(u) = sum_x sigma_x [log (P e^u)_x - u_x]; I = -inf G.
  struct Eval {
    double G;
    Eigen::VectorXd grad;
    Eigen::MatrixXd hess;
  };
  auto evaluate = [&](const Eigen::VectorXd& u, bool with_hessian) {
    Eval e{0.0, Eigen::VectorXd::Zero(m), Eigen::MatrixXd::Zero(m, m)};
    std::vector<double> terms(static_cast<std::size_t>(m));
    for (int x = 0; x < m; ++x) {
      if (sigma(x) == 0.0) continue;
      for (int y = 0; y < m; ++y) terms[static_cast<std::size_t>(y)] = logP(x, y) + u(y);
      const double lse = log_sum_exp(terms);
      e.G += sigma(x) * (lse - u(x));
      Eigen::VectorXd w(m);
      for (int y = 0; y < m; ++y) w(y) = std::exp(terms[static_cast<std::size_t>(y)] - lse);
      e.grad += sigma(x) * w;
      e.grad(x) -= sigma(x);
      if (with_hessian) {
        e.hess.diagonal() += sigma(x) * w;
        e.hess -= sigma(x) * w * w.transpose();
      }
    }
    return e;
  };

  DvResult res;
  Eigen::VectorXd u = Eigen::VectorXd::Zero(m);
  if (m == 1) {
    res.log_f = u;
    return res;
  }
  Eval cur = evaluate(u, true);
  auto free_norm = [&](const Eigen::VectorXd& g) { return g.tail(m - 1).cwiseAbs().maxCoeff(); };
  int it = 0;
  for (; it < iteration_cap; ++it) {
    if (free_norm(cur.grad) < gradient_tol) break;
    const Eigen::VectorXd g = cur.grad.tail(m - 1);
    const Eigen::MatrixXd H = cur.hess.bottomRightCorner(m - 1, m - 1);
    Eigen::VectorXd d = pseudo_solve(H, g);
    if (d.dot(g) <= 0.0) d = g;
    cap_step(d, 5.0);

    bool improved = false;
    for (int attempt = 0; attempt < 2 && !improved; ++attempt) {
      if (attempt == 1) {
        d = g;
        cap_step(d, 1.0);
      }
      double t = 1.0;
      for (int bt = 0; bt < 50; ++bt, t *= 0.5) {
        Eigen::VectorXd trial = u;
        trial.tail(m - 1) -= t * d;
        Eval next = evaluate(trial, true);
        // Near the optimum G is flat to round-off, so a clear drop in the
        // gradient also counts as progress.
        const bool armijo = next.G < cur.G - 1e-4 * t * g.dot(d);
        const bool flat = next.G <= cur.G + 1e-15 * std::abs(cur.G) && free_norm(next.grad) < 0.5 * free_norm(cur.grad);
        if (armijo || flat) {
          u = std::move(trial);
          cur = std::move(next);
          improved = true;
          break;
        }
      }
    }
    if (!improved) break;
  }
  res.iterations = it;
  res.gradient_norm = free_norm(cur.grad);
  res.log_f = u;
  res.value = std::max(0.0, -cur.G);
  if (!(res.gradient_norm < gradient_tol)) {
    // A stalled line search at round-off level is accepted; a large gradient is not.
    if (res.gradient_norm > 1e-7)
      throw ConvergenceError("Donsker-Varadhan minimization did not converge", res.gradient_norm);
  }
  return res;
}

double brute_force_fk(const FiniteChain& chain, const Eigen::VectorXd& V, const Eigen::VectorXd& f, int x0,
                      int n) {
  const int m = chain.size();
  if (V.size() != m || f.size() != m) throw InvalidArgument("brute_force_fk: V and f need one entry per state");
  if (x0 < 0 || x0 >= m) throw InvalidArgument("brute_force_fk: x0 out of range");
  if (n < 0) throw InvalidArgument("brute_force_fk: n must be nonnegative");
  if (std::pow(static_cast<double>(m), n) > 1e7)
    throw InvalidArgument("brute_force_fk: m^n exceeds the 1e7 path budget");
  if (n == 0) return f(x0);

  Eigen::MatrixXd step(m, m);
  for (int x = 0; x < m; ++x)
    for (int y = 0; y < m; ++y) step(x, y) = chain.transition()(x, y) * std::exp(V(y));

  // Neumaier-compensated sum over leaves of a depth-first enumeration.
  double sum = 0.0, comp = 0.0;
  auto add = [&](double term) {
    const double t = sum + term;
    if (std::abs(sum) >= std::abs(term))
      comp += (sum - t) + term;
    else
      comp += (term - t) + sum;
    sum = t;
  };
  std::function<void(int, int, double)> walk = [&](int x, int depth, double weight) {
    for (int y = 0; y < m; ++y) {
      const double w = weight * step(x, y);
      if (w == 0.0) continue;
      if (depth + 1 == n)
        add(w * f(y));
      else
        walk(y, depth + 1, w);
    }
  };
  walk(x0, 0, 1.0);
  return sum + comp;
}

double ldp_tail_exact_log(const FiniteChain& chain, int target, double a, int n, int x0) {
  const int m = chain.size();
  if (target < 0 || target >= m || x0 < 0 || x0 >= m) throw InvalidArgument("ldp_tail_exact: state out of range");
  if (n < 1 || n > 10'000) throw InvalidArgument("ldp_tail_exact: need 1 <= n <= 1e4");
  const long threshold = std::max(0L, static_cast<long>(std::ceil(a * n - 1e-9)));
  if (threshold <= 0) return 0.0;
  if (threshold > n) return kNegInf;

  Eigen::MatrixXd logP(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      logP(i, j) = chain.transition()(i, j) > 0 ? std::log(chain.transition()(i, j)) : kNegInf;

  const std::size_t width = static_cast<std::size_t>(n) + 1;
  std::vector<double> cur(static_cast<std::size_t>(m) * width, kNegInf), next(cur.size());
  cur[static_cast<std::size_t>(x0) * width] = 0.0;
  for (int k = 1; k <= n; ++k) {
    std::fill(next.begin(), next.end(), kNegInf);
    for (int x = 0; x < m; ++x) {
      for (int y = 0; y < m; ++y) {
        const double lp = logP(x, y);
        if (lp == kNegInf) continue;
        const int bump = y == target ? 1 : 0;
        const double* src = &cur[static_cast<std::size_t>(x) * width];
        double* dst = &next[static_cast<std::size_t>(y) * width];
        for (int c = 0; c < k; ++c) {
          if (src[c] == kNegInf) continue;
          dst[c + bump] = log_add_exp(dst[c + bump], src[c] + lp);
        }
      }
    }
    std::swap(cur, next);
  }
  double total = kNegInf;
  for (int x = 0; x < m; ++x)
    for (long c = threshold; c <= n; ++c)
      total = log_add_exp(total, cur[static_cast<std::size_t>(x) * width + static_cast<std::size_t>(c)]);
  return std::min(0.0, total);
}

double level_set_infimum(const FiniteChain& chain, int target, double a, double theta_box) {
  const int m = chain.size();
  if (target < 0 || target >= m) throw InvalidArgument("level_set_infimum: target out of range");
  if (a > 1.0) return std::numeric_limits<double>::infinity();
  const Eigen::VectorXd pi = chain.stationary();
  if (a <= pi(target)) return 0.0;
  if (m == 1) return 0.0;

  if (m == 2) {
    const int other = 1 - target;
    auto rate_at = [&](double t) {
      Eigen::VectorXd s(2);
      s(target) = t;
      s(other) = 1.0 - t;
      return rate_function_legendre(chain, s, theta_box).value;
    };
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double lo = a, hi = 1.0;
    double c = hi - gr * (hi - lo), d = lo + gr * (hi - lo);
    double fc = rate_at(c), fd = rate_at(d);
    while (hi - lo > 1e-9) {
      if (fc <= fd) {
        hi = d;
        d = c;
        fd = fc;
        c = hi - gr * (hi - lo);
        fc = rate_at(c);
      } else {
        lo = c;
        c = d;
        fc = fd;
        d = lo + gr * (hi - lo);
        fd = rate_at(d);
      }
    }
    return std::min({fc, fd, rate_at(a), rate_at(1.0)});
  }

  // sup_{theta in [0, box]} theta a - Lambda(theta 1_target); derivative
  // a - pi_theta(target) is decreasing in theta.
  auto slope = [&](double theta) {
    Eigen::VectorXd V = Eigen::VectorXd::Zero(m);
    V(target) = theta;
    return a - pressure_gradient(chain, V)(target);
  };
  double lo = 0.0, hi = theta_box;
  if (slope(hi) > 0.0) {
    lo = hi;
  } else {
    for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
      const double mid = 0.5 * (lo + hi);
      (slope(mid) > 0.0 ? lo : hi) = mid;
    }
  }
  Eigen::VectorXd V = Eigen::VectorXd::Zero(m);
  V(target) = lo;
  return lo * a - pressure_exact(chain, V);
}

std::vector<Eigen::VectorXd> simplex_lattice(int m, int denominator) {
  if (m < 1 || denominator < 1) throw InvalidArgument("simplex_lattice needs m >= 1 and denominator >= 1");
  std::vector<Eigen::VectorXd> out;
  std::vector<int> k(static_cast<std::size_t>(m), 0);
  std::function<void(int, int)> fill = [&](int idx, int left) {
    if (idx == m - 1) {
      k[static_cast<std::size_t>(idx)] = left;
      Eigen::VectorXd s(m);
      for (int i = 0; i < m; ++i) s(i) = static_cast<double>(k[static_cast<std::size_t>(i)]) / denominator;
      out.push_back(std::move(s));
      return;
    }
    for (int v = 0; v <= left; ++v) {
      k[static_cast<std::size_t>(idx)] = v;
      fill(idx + 1, left - v);
    }
  };
  fill(0, denominator);
  return out;
}

std::vector<RateTableRow> rate_table(const FiniteChain& chain, const std::vector<Eigen::VectorXd>& grid,
                                     double theta_box) {
  std::vector<RateTableRow> rows;
  rows.reserve(grid.size());
  for (const auto& s : grid) {
    const auto leg = rate_function_legendre(chain, s, theta_box);
    const auto dv = rate_function_dv(chain, s);
    rows.push_back({s, leg.value, dv.value, leg.maximizer, leg.at_boundary});
  }
  return rows;
}

void write_rate_table_csv(std::ostream& out, const std::vector<RateTableRow>& rows) {
  const Eigen::Index m = rows.empty() ? 0 : rows.front().sigma.size();
  std::vector<std::string> header;
  for (Eigen::Index i = 0; i < m; ++i) header.push_back("sigma_" + std::to_string(i));
  header.insert(header.end(), {"I_legendre", "I_dv"});
  for (Eigen::Index i = 0; i < m; ++i) header.push_back("V_" + std::to_string(i));
  CsvWriter csv(out, header);
  for (const auto& r : rows) {
    for (Eigen::Index i = 0; i < m; ++i) csv.cell(r.sigma(i));
    csv.cell(r.legendre).cell(r.dv);
    for (Eigen::Index i = 0; i < m; ++i) csv.cell(r.maximizer(i));
    csv.end_row();
  }
}

}  // namespace dvlab::finite
