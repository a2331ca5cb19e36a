#include "dvlab/feynman_kac.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>

#include "dvlab/io.hpp"
#include "dvlab/parallel.hpp"
#include "dvlab/stats.hpp"

namespace dvlab {

Kernel::Kernel(finite::FiniteChain chain) : chain_(std::move(chain)), system_(chain_->as_random_system()) {}

Kernel::Kernel(RandomSystem system) : system_(std::move(system)) {}

const finite::FiniteChain& Kernel::chain() const {
  if (!chain_) throw InvalidArgument("this operation needs a finite-chain kernel");
  return *chain_;
}

Point Kernel::step(const Point& x, Rng& rng) const {
  if (chain_) return chain_->state(chain_->next_state(chain_->index_of(x), rng.uniform()));
  const NoiseSample z = system_.noise.sample(rng);
  return system_.map.apply(x, z);
}

namespace fk {

Potential Potential::constant(double c) {
  return Potential{[c](const Point&) { return c; }, c, c, 0.0};
}

Potential Potential::on_chain(const finite::FiniteChain& chain, const Eigen::VectorXd& values) {
  if (values.size() != chain.size()) throw InvalidArgument("potential needs one value per state");
  if (!values.allFinite()) throw InvalidArgument("potential values must be finite");
  double lip = 0.0;
  for (int x = 0; x < chain.size(); ++x)
    for (int y = 0; y < chain.size(); ++y)
      if (x != y) lip = std::max(lip, std::abs(values(x) - values(y)) / chain.metric()(x, y));
  return Potential{[values, tag = chain.space_tag()](const Point& p) {
                     if (p.space != tag) throw InvalidArgument("potential evaluated outside its chain");
                     return values(static_cast<Eigen::Index>(p.coords[0]));
                   },
                   values.maxCoeff(), values.minCoeff(), lip};
}

Eigen::VectorXd tabulate(const Potential& V, const finite::FiniteChain& chain) {
  Eigen::VectorXd v(chain.size());
  for (int i = 0; i < chain.size(); ++i) {
    v(i) = V.eval(chain.state(i));
    if (!(v(i) <= V.sup_bound + 1e-12 && v(i) >= V.inf_bound - 1e-12))
      throw InvalidArgument("potential leaves its declared bounds at state " + std::to_string(i));
  }
  return v;
}

namespace {

Eigen::VectorXd tabulate_function(const StateFunction& f, const finite::FiniteChain& chain) {
  Eigen::VectorXd v(chain.size());
  for (int i = 0; i < chain.size(); ++i) v(i) = f(chain.state(i));
  return v;
}

// Rescales v in place so its largest modulus is 1; returns the log of the
// factor removed (0 for the zero vector).
double renormalize(Eigen::VectorXd& v) {
  const double s = v.cwiseAbs().maxCoeff();
  if (!(s > 0.0)) return 0.0;
  v /= s;
  return std::log(s);
}

// Weighted sums of exp(S - max_log) over a block of replicas, mergeable.
struct Moments {
  double max_log = -std::numeric_limits<double>::infinity();
  double sw = 0.0, sw2 = 0.0, sfw = 0.0, sfw2 = 0.0;
  long count = 0;

  void rescale(double to) {
    if (max_log == to) return;
    const double r = std::exp(max_log - to);
    sw *= r;
    sfw *= r;
    sw2 *= r * r;
    sfw2 *= r * r;
    max_log = to;
  }
  void add(double log_w, double f) {
    if (log_w > max_log) rescale(log_w);
    const double w = std::exp(log_w - max_log);
    sw += w;
    sw2 += w * w;
    sfw += f * w;
    sfw2 += f * f * w * w;
    ++count;
  }
  void merge(Moments o) {
    if (o.count == 0) return;
    const double to = std::max(max_log, o.max_log);
    if (count > 0) rescale(to);
    o.rescale(to);
    max_log = to;
    sw += o.sw;
    sw2 += o.sw2;
    sfw += o.sfw;
    sfw2 += o.sfw2;
    count += o.count;
  }
};

constexpr long kBlock = 256;

}  // namespace

struct PathEnsemble::Impl {
  // moments[state][k], k = 0..n_max
  std::vector<std::vector<Moments>> moments;
};

PathEnsemble::PathEnsemble() : impl_(std::make_shared<Impl>()) {}

PathEnsemble path_ensemble(const Kernel& kernel, const Potential& V, const StateFunction& f,
                           std::span<const Point> states, long n_max, const McOptions& mc) {
  if (mc.samples < 1) throw InvalidArgument("Monte Carlo backend needs samples >= 1");
  if (n_max < 0) throw InvalidArgument("n must be nonnegative");
  if (states.empty()) throw InvalidArgument("no evaluation states");
  PathEnsemble ens;
  ens.states_.assign(states.begin(), states.end());
  ens.n_max_ = n_max;
  ens.replicas_ = mc.samples;
  const std::size_t ns = states.size();
  const long blocks = (mc.samples + kBlock - 1) / kBlock;
  const std::size_t kcount = static_cast<std::size_t>(n_max) + 1;
  std::vector<std::vector<Moments>> partial(ns * static_cast<std::size_t>(blocks));

  const bool fast = kernel.is_finite();
  Eigen::VectorXd vtab, ftab;
  if (fast) {
    vtab = tabulate(V, kernel.chain());
    ftab = tabulate_function(f, kernel.chain());
  }

  parallel_for(ns * static_cast<std::size_t>(blocks), mc.workers, [&](std::size_t job) {
    const std::size_t si = job / static_cast<std::size_t>(blocks);
    const long b = static_cast<long>(job % static_cast<std::size_t>(blocks));
    std::vector<Moments> acc(kcount);
    const long r_end = std::min(mc.samples, (b + 1) * kBlock);
    for (long r = b * kBlock; r < r_end; ++r) {
      Rng rng(stream_id(mc.seed, si), static_cast<std::uint64_t>(r));
      double S = 0.0;
      if (fast) {
        const auto& chain = kernel.chain();
        int x = chain.index_of(states[si]);
        acc[0].add(0.0, ftab(x));
        for (long k = 1; k <= n_max; ++k) {
          x = chain.next_state(x, rng.uniform());
          S += vtab(x);
          acc[static_cast<std::size_t>(k)].add(S, ftab(x));
        }
      } else {
        Point x = states[si];
        acc[0].add(0.0, f(x));
        for (long k = 1; k <= n_max; ++k) {
          x = kernel.step(x, rng);
          S += V.eval(x);
          if (!std::isfinite(S)) throw SimulationError("potential sum is not finite", k);
          acc[static_cast<std::size_t>(k)].add(S, f(x));
        }
      }
    }
    partial[job] = std::move(acc);
  });

  ens.impl_->moments.assign(ns, std::vector<Moments>(kcount));
  for (std::size_t si = 0; si < ns; ++si)
    for (long b = 0; b < blocks; ++b) {
      const auto& part = partial[si * static_cast<std::size_t>(blocks) + static_cast<std::size_t>(b)];
      for (std::size_t k = 0; k < kcount; ++k) ens.impl_->moments[si][k].merge(part[k]);
    }
  return ens;
}

namespace {

const Moments& moments_at(const std::vector<std::vector<Moments>>& m, std::size_t i, long k, long n_max) {
  if (i >= m.size() || k < 0 || k > n_max) throw InvalidArgument("path ensemble index out of range");
  return m[i][static_cast<std::size_t>(k)];
}

}  // namespace

double PathEnsemble::log_mean_weight(std::size_t i, long k) const {
  const auto& m = moments_at(impl_->moments, i, k, n_max_);
  return m.max_log + std::log(m.sw / static_cast<double>(m.count));
}

double PathEnsemble::weight_relative_error(std::size_t i, long k) const {
  const auto& m = moments_at(impl_->moments, i, k, n_max_);
  const double R = static_cast<double>(m.count);
  const double mean = m.sw / R;
  if (m.count < 2) return std::numeric_limits<double>::infinity();
  const double var = std::max(0.0, (m.sw2 / R - mean * mean) * R / (R - 1.0));
  return std::sqrt(var / R) / mean;
}

double PathEnsemble::effective_samples(std::size_t i, long k) const {
  const auto& m = moments_at(impl_->moments, i, k, n_max_);
  return m.sw * m.sw / m.sw2;
}

std::pair<double, double> PathEnsemble::f_value(std::size_t i, long k) const {
  const auto& m = moments_at(impl_->moments, i, k, n_max_);
  return {m.sfw / static_cast<double>(m.count), m.max_log};
}

double PathEnsemble::f_std_error(std::size_t i, long k) const {
  const auto& m = moments_at(impl_->moments, i, k, n_max_);
  const double R = static_cast<double>(m.count);
  if (m.count < 2) return std::numeric_limits<double>::infinity();
  const double mean = m.sfw / R;
  const double var = std::max(0.0, (m.sfw2 / R - mean * mean) * R / (R - 1.0));
  return std::sqrt(var / R);
}

Backend parse_backend(const std::string& name) {
  if (name == "exact") return Backend::exact;
  if (name == "mc") return Backend::mc;
  throw InvalidArgument("unknown backend '" + name + "' (expected exact or mc)");
}

double FkTable::value(std::size_t i) const { return mantissa.at(i) * std::exp(log_scale.at(i)); }
double FkTable::error(std::size_t i) const { return std_error.at(i) * std::exp(log_scale.at(i)); }

namespace {

std::vector<Point> all_states(const finite::FiniteChain& chain) {
  std::vector<Point> s;
  for (int i = 0; i < chain.size(); ++i) s.push_back(chain.state(i));
  return s;
}

// Q with the potential shifted by c = max V, so entries stay O(1).
Eigen::MatrixXd shifted_tilt(const finite::FiniteChain& chain, const Eigen::VectorXd& v, double& c) {
  c = v.maxCoeff();
  return finite::tilted_kernel(chain, (v.array() - c).matrix()).Q;
}

}  // namespace

FkTable fk_apply(const Kernel& kernel, const Potential& V, const StateFunction& f, long n, Backend backend,
                 std::span<const Point> states, const McOptions& mc) {
  if (n < 0) throw InvalidArgument("fk_apply needs n >= 0");
  FkTable t;
  if (backend == Backend::exact) {
    const auto& chain = kernel.chain();
    std::vector<Point> eval = states.empty() ? all_states(chain) : std::vector<Point>(states.begin(), states.end());
    double c = 0.0;
    const Eigen::MatrixXd Q = shifted_tilt(chain, tabulate(V, chain), c);
    Eigen::VectorXd v = tabulate_function(f, chain);
    double log_scale = 0.0;
    for (long k = 0; k < n; ++k) {
      v = Q * v;
      log_scale += c + renormalize(v);
    }
    for (const auto& p : eval) {
      t.states.push_back(p);
      t.mantissa.push_back(v(chain.index_of(p)));
      t.log_scale.push_back(log_scale);
      t.std_error.push_back(0.0);
      t.effective_samples.push_back(std::numeric_limits<double>::infinity());
    }
    return t;
  }
  std::vector<Point> eval;
  if (states.empty()) {
    if (!kernel.is_finite()) throw InvalidArgument("Monte Carlo fk_apply needs evaluation states");
    eval = all_states(kernel.chain());
  } else {
    eval.assign(states.begin(), states.end());
  }
  const PathEnsemble ens = path_ensemble(kernel, V, f, eval, n, mc);
  for (std::size_t i = 0; i < eval.size(); ++i) {
    const auto [mant, ls] = ens.f_value(i, n);
    t.states.push_back(eval[i]);
    t.mantissa.push_back(mant);
    t.log_scale.push_back(ls);
    t.std_error.push_back(ens.f_std_error(i, n));
    t.effective_samples.push_back(ens.effective_samples(i, n));
  }
  return t;
}

Lambda1Result fk_lambda1(const Kernel& kernel, const Potential& V, long n_max, Backend backend,
                         std::span<const Point> states, const McOptions& mc) {
  if (n_max < 4) throw InvalidArgument("fk_lambda1 needs n_max >= 4");
  Lambda1Result r;
  if (backend == Backend::exact) {
    const auto& chain = kernel.chain();
    double c = 0.0;
    Eigen::MatrixXd A = shifted_tilt(chain, tabulate(V, chain), c);
    double log_scale = 0.0;  // true power = A * exp(log_scale)
    for (long n = 1; n <= n_max; n *= 2) {
      if (n > 1) {
        A = A * A;
        log_scale *= 2;
        const double s = A.maxCoeff();
        A /= s;
        log_scale += std::log(s);
      }
      r.n.push_back(n);
      r.a.push_back((log_scale + std::log(A.rowwise().sum().maxCoeff())) / static_cast<double>(n) + c);
      r.a_std_error.push_back(0.0);
    }
  } else {
    std::vector<Point> eval;
    if (states.empty()) {
      if (!kernel.is_finite()) throw InvalidArgument("Monte Carlo fk_lambda1 needs evaluation states");
      eval = all_states(kernel.chain());
    } else {
      eval.assign(states.begin(), states.end());
    }
    const PathEnsemble ens = path_ensemble(kernel, V, [](const Point&) { return 1.0; }, eval, n_max, mc);
    for (long n = 1; n <= n_max; n *= 2) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < eval.size(); ++i)
        if (ens.log_mean_weight(i, n) > ens.log_mean_weight(best, n)) best = i;
      r.n.push_back(n);
      r.a.push_back(ens.log_mean_weight(best, n) / static_cast<double>(n));
      // Delta method: se(log mean) ~ relative error of the mean.
      r.a_std_error.push_back(ens.weight_relative_error(best, n) / static_cast<double>(n));
    }
  }
  const std::size_t N = r.a.size();
  r.certificate = std::exp(*std::min_element(r.a.begin(), r.a.end()));
  const double last = r.a[N - 1], prev = r.a[N - 2];
  r.extrapolated = std::exp(2 * last - prev);
  r.log_band = std::hypot(std::abs(last - prev), 2 * r.a_std_error[N - 1] + r.a_std_error[N - 2]);
  return r;
}

std::vector<std::pair<Point, Point>> all_state_pairs(const finite::FiniteChain& chain) {
  std::vector<std::pair<Point, Point>> pairs;
  for (int i = 0; i < chain.size(); ++i)
    for (int j = i + 1; j < chain.size(); ++j) pairs.emplace_back(chain.state(i), chain.state(j));
  return pairs;
}

namespace {

void finish_bootstrap(BootstrapLog& log) {
  double running = 0.0;
  for (auto& row : log.rows) {
    running = std::max(running, row.Mn);
    row.Mn = running;
  }
  const auto ref = std::find_if(log.rows.begin(), log.rows.end(),
                                [&](const BootstrapRow& r) { return r.n >= log.reference_n; });
  if (ref == log.rows.end()) return;
  for (auto it = ref; it != log.rows.end(); ++it)
    if (it->Mn > log.growth_limit * ref->Mn) log.violation = true;
}

}  // namespace

BootstrapLog bootstrap_log(const Kernel& kernel, const Potential& V, const StateFunction& f,
                           std::span<const std::pair<Point, Point>> probe_pairs, long n_max, double lambda1,
                           Backend backend, const BootstrapOptions& options, const McOptions& mc) {
  if (!(lambda1 > 0.0) || !std::isfinite(lambda1))
    throw InvalidArgument("bootstrap_log needs lambda_1 from fk_lambda1 first");
  if (n_max < 0) throw InvalidArgument("bootstrap_log needs n_max >= 0");
  const MetricSpace& space = kernel.space();
  for (const auto& [x, y] : probe_pairs)
    if (!(space.distance(x, y) > 0.0)) throw InvalidArgument("probe pairs must be distinct states");
  BootstrapLog log;
  log.growth_limit = options.growth_limit;
  log.reference_n = options.reference_n;
  const double log_lambda = std::log(lambda1);

  if (backend == Backend::exact) {
    const auto& chain = kernel.chain();
    const Eigen::VectorXd vtab = tabulate(V, chain);
    double c = 0.0;
    const Eigen::MatrixXd Q = shifted_tilt(chain, vtab, c);
    const auto triple = finite::perron_triple(Q);
    const Eigen::VectorXd ftab = tabulate_function(f, chain);
    const double f_mu = ftab.dot(triple.mu);
    Eigen::VectorXd one = Eigen::VectorXd::Ones(chain.size()), g = ftab;
    Eigen::VectorXd g_eigen = ftab;  // (Q / lambda)^n f on the shifted scale
    double s1 = 0.0, sf = 0.0;
    for (long n = 0; n <= n_max; ++n) {
      if (n > 0) {
        one = Q * one;
        g = Q * g;
        g_eigen = Q * g_eigen / triple.lambda;
        s1 += c + renormalize(one);
        sf += c + renormalize(g);
      }
      BootstrapRow row;
      row.n = n;
      row.lambda1_hat = lambda1;
      const double log_q1 = s1 + std::log(one.maxCoeff());
      row.qn1_sup = std::exp(log_q1);
      row.Mn = std::exp(log_q1 - static_cast<double>(n) * log_lambda);
      double lip = 0.0;
      for (const auto& [x, y] : probe_pairs) {
        const int i = chain.index_of(x), j = chain.index_of(y);
        lip = std::max(lip, std::abs(g(i) - g(j)) / space.distance(x, y));
      }
      row.Ln = lip * std::exp(sf - static_cast<double>(n) * log_lambda);
      row.fk_error = (g_eigen - f_mu * triple.h).cwiseAbs().maxCoeff();
      log.rows.push_back(row);
    }
    finish_bootstrap(log);
    return log;
  }

  // Evaluation states: the distinct points among the probe pairs.
  std::vector<Point> eval;
  auto index_of = [&](const Point& p) {
    for (std::size_t i = 0; i < eval.size(); ++i)
      if (eval[i] == p) return i;
    eval.push_back(p);
    return eval.size() - 1;
  };
  std::vector<std::pair<std::size_t, std::size_t>> idx;
  for (const auto& [x, y] : probe_pairs) {
    const auto a = index_of(x);
    const auto b = index_of(y);
    idx.emplace_back(a, b);
  }
  if (eval.empty()) throw InvalidArgument("Monte Carlo bootstrap_log needs probe pairs");
  const PathEnsemble ens = path_ensemble(kernel, V, f, eval, n_max, mc);
  for (long n = 0; n <= n_max; ++n) {
    BootstrapRow row;
    row.n = n;
    row.lambda1_hat = lambda1;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < eval.size(); ++i) best = std::max(best, ens.log_mean_weight(i, n));
    row.qn1_sup = std::exp(best);
    row.Mn = std::exp(best - static_cast<double>(n) * log_lambda);
    double lip = 0.0;
    for (std::size_t p = 0; p < idx.size(); ++p) {
      const auto [ma, la] = ens.f_value(idx[p].first, n);
      const auto [mb, lb] = ens.f_value(idx[p].second, n);
      const double diff = ma * std::exp(la - static_cast<double>(n) * log_lambda) -
                          mb * std::exp(lb - static_cast<double>(n) * log_lambda);
      lip = std::max(lip, std::abs(diff) / space.distance(probe_pairs[p].first, probe_pairs[p].second));
    }
    row.Ln = lip;
    row.fk_error = std::numeric_limits<double>::quiet_NaN();
    log.rows.push_back(row);
  }
  finish_bootstrap(log);
  return log;
}

Eigenmeasure eigenmeasure_fixed_point(const Kernel& kernel, const Potential& V, double tol, int iteration_cap) {
  if (!(tol > 0.0)) throw InvalidArgument("eigenmeasure_fixed_point needs tol > 0");
  const auto& chain = kernel.chain();
  const int m = chain.size();
  double c = 0.0;
  const Eigen::MatrixXd Qt = shifted_tilt(chain, tabulate(V, chain), c).transpose();
  Eigen::VectorXd sigma = Eigen::VectorXd::Constant(m, 1.0 / m), prev = sigma;
  Eigenmeasure res;
  double mass = 0.0;
  for (int it = 0; it < iteration_cap; ++it) {
    Eigen::VectorXd next = Qt * sigma;
    mass = next.sum();
    next /= mass;
    res.residual = (next - sigma).lpNorm<1>();
    prev = std::move(sigma);
    sigma = std::move(next);
    res.iterations = it + 1;
    if (res.residual < tol) break;
  }
  if (!(res.residual < tol)) throw FixedPointError(res.residual, prev, sigma);
  res.lambda2 = mass * std::exp(c);
  res.mu = sigma;
  if ((res.mu.array() <= 0.0).any()) throw ConvergenceError("eigenmeasure lost full support", res.mu.minCoeff());
  const double lambda1 = fk_lambda1(kernel, V, 4096, Backend::exact).certificate;
  if (res.lambda2 > lambda1 * (1 + 1e-10) + tol)
    throw ConvergenceError("eigenmeasure mass exceeds the lambda_1 certificate", res.lambda2 - lambda1);
  return res;
}

ConvergenceReport fk_convergence_certificate(const Kernel& kernel, const Potential& V, const StateFunction& f,
                                             long n_max) {
  if (n_max < 1) throw InvalidArgument("fk_convergence_certificate needs n_max >= 1");
  const auto& chain = kernel.chain();
  double c = 0.0;
  const Eigen::MatrixXd Q = shifted_tilt(chain, tabulate(V, chain), c);
  const auto t = finite::perron_triple(Q);
  const Eigen::VectorXd ftab = tabulate_function(f, chain);
  const Eigen::VectorXd limit = ftab.dot(t.mu) * t.h;
  const double floor = 1e-11 * std::max({1.0, ftab.cwiseAbs().maxCoeff(), limit.cwiseAbs().maxCoeff()});
  ConvergenceReport rep;
  rep.lambda = t.lambda * std::exp(c);
  Eigen::VectorXd g = ftab;
  std::vector<double> xs, ys;
  bool above = true;
  for (long n = 1; n <= n_max; ++n) {
    g = Q * g / t.lambda;
    const double err = (g - limit).cwiseAbs().maxCoeff();
    rep.n.push_back(n);
    rep.error.push_back(err);
    if (above && err > floor) {
      xs.push_back(static_cast<double>(n));
      ys.push_back(std::log(err));
    } else {
      above = false;
    }
  }
  if (xs.size() >= 3) {
    const auto fit = fit_line(xs, ys);
    rep.ratio = std::exp(fit.slope);
    rep.r_squared = fit.r_squared;
  } else if (xs.size() == 2) {
    rep.ratio = std::exp(ys[1] - ys[0]);
  } else {
    rep.ratio = 0.0;
  }
  rep.success = rep.ratio < 1.0;
  return rep;
}

void write_bootstrap_csv(std::ostream& out, const BootstrapLog& log) {
  CsvWriter w(out, {"n", "qn1_sup", "lambda1_hat", "Mn", "Ln", "fk_error"});
  for (const auto& r : log.rows) {
    w.cell(r.n).cell(r.qn1_sup).cell(r.lambda1_hat).cell(r.Mn).cell(r.Ln).cell(r.fk_error);
    w.end_row();
  }
}

void write_convergence_csv(std::ostream& out, const ConvergenceReport& report) {
  CsvWriter w(out, {"n", "fk_error", "ratio_fit"});
  for (std::size_t i = 0; i < report.n.size(); ++i) {
    w.cell(report.n[i]).cell(report.error[i]).cell(report.ratio);
    w.end_row();
  }
}

}  // namespace fk
}  // namespace dvlab
