#include "dvlab/ldp_estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "dvlab/errors.hpp"
#include "dvlab/io.hpp"
#include "dvlab/parallel.hpp"

namespace dvlab::ldp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr long kBlock = 256;

fk::Potential scaled(const fk::Potential& phi, double theta) {
  return fk::Potential{[f = phi.eval, theta](const Point& x) { return theta * f(x); },
                       theta >= 0 ? theta * phi.sup_bound : theta * phi.inf_bound,
                       theta >= 0 ? theta * phi.inf_bound : theta * phi.sup_bound, std::abs(theta) * phi.lip_bound};
}

// -(1/n) log p, with +0 for p = 1.
double rate_of(double p, long n) {
  if (p >= 1.0) return 0.0;
  if (p <= 0.0) return kInf;
  return -std::log(p) / static_cast<double>(n);
}

struct Extrapolation {
  double value = 0.0;
  double band = 0.0;
  long n_used = 0;
  std::string method;
};

// a[k-1], se[k-1], ess[k-1] for k = 1..n.
Extrapolation extrapolate(const std::vector<double>& a, const std::vector<double>& se, const std::vector<double>& ess,
                          double ess_threshold) {
  std::vector<long> dyadic;
  for (long k = 1; k <= static_cast<long>(a.size()); k *= 2) {
    if (ess[static_cast<std::size_t>(k - 1)] < ess_threshold) break;
    dyadic.push_back(k);
  }
  Extrapolation out;
  if (dyadic.empty()) dyadic.push_back(1);
  auto at = [&](std::size_t j) { return a[static_cast<std::size_t>(dyadic[j] - 1)]; };
  auto err = [&](std::size_t j) { return se[static_cast<std::size_t>(dyadic[j] - 1)]; };
  const std::size_t last = dyadic.size() - 1;
  out.n_used = dyadic[last];
  if (dyadic.size() < 2) {
    out.value = at(last);
    out.band = err(last) + std::abs(at(last));
    out.method = "none";
    return out;
  }
  const double richardson = 2.0 * at(last) - at(last - 1);
  const double se_r = std::sqrt(4.0 * err(last) * err(last) + err(last - 1) * err(last - 1));
  out.value = richardson;
  out.method = "richardson";
  double discrepancy = 0.0;
  if (dyadic.size() >= 3) {
    double ait = 0.0;
    const double d1 = at(last - 1) - at(last - 2);
    const double noise = std::hypot(err(last - 1), err(last - 2));
    if (std::abs(d1) > 3.0 * noise && aitken(at(last - 2), at(last - 1), at(last), ait)) {
      out.value = ait;
      out.method = "aitken";
      discrepancy = ait - richardson;
    } else {
      // Distance between the last two extrapolants measures the leftover bias.
      discrepancy = richardson - (2.0 * at(last - 1) - at(last - 2));
    }
  }
  out.band = std::hypot(se_r, discrepancy);
  return out;
}

}  // namespace

bool aitken(double a1, double a2, double a3, double& out) {
  const double d1 = a2 - a1;
  const double d2 = a3 - a2;
  if (d1 == 0.0 || d2 == d1) return false;
  const double ratio = d2 / d1;
  if (!(ratio > 0.0 && ratio < 1.0)) return false;
  out = a3 - d2 * d2 / (d2 - d1);
  return std::isfinite(out);
}

PressureEstimate pressure_mc(const Kernel& kernel, const fk::Potential& V, std::span<const Point> x0, long n,
                             const PressureOptions& options, std::string V_id) {
  if (x0.empty()) throw InvalidArgument("pressure_mc needs at least one initial state");
  if (n < 4) throw InvalidArgument("pressure_mc needs n >= 4");
  if (options.replicas < 100) throw InvalidArgument("pressure_mc needs at least 100 replicas");

  const fk::McOptions mc{options.replicas, options.seed, options.workers};
  const fk::PathEnsemble ens = fk::path_ensemble(kernel, V, [](const Point&) { return 1.0; }, x0, n, mc);
  const double threshold = std::max(options.ess_floor, options.ess_fraction * static_cast<double>(options.replicas));

  PressureEstimate out;
  out.V_id = std::move(V_id);
  out.x0.assign(x0.begin(), x0.end());
  out.replicas = options.replicas;
  const std::size_t nx = x0.size();
  std::vector<std::vector<double>> se(nx), ess(nx);
  out.per_x0.assign(nx, {});
  for (std::size_t i = 0; i < nx; ++i)
    for (long k = 1; k <= n; ++k) {
      const double dk = static_cast<double>(k);
      out.per_x0[i].push_back(ens.log_mean_weight(i, k) / dk);
      se[i].push_back(ens.weight_relative_error(i, k) / dk);
      ess[i].push_back(ens.effective_samples(i, k));
    }

  for (long k = 1; k <= n; ++k) {
    const auto kk = static_cast<std::size_t>(k - 1);
    PressureRow row;
    row.n = k;
    double lo = kInf, hi = -kInf, sum = 0.0;
    row.min_ess = kInf;
    for (std::size_t i = 0; i < nx; ++i) {
      const double v = out.per_x0[i][kk];
      sum += v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      row.std_error = std::max(row.std_error, se[i][kk]);
      row.min_ess = std::min(row.min_ess, ess[i][kk]);
    }
    row.estimate = sum / static_cast<double>(nx);
    row.spread = hi - lo;
    row.reliable = row.min_ess >= threshold;
    if (!row.reliable) out.ess_collapse = true;
    out.rows.push_back(row);
  }

  out.n_used = n;
  std::vector<std::string> methods;
  for (std::size_t i = 0; i < nx; ++i) {
    const Extrapolation e = extrapolate(out.per_x0[i], se[i], ess[i], threshold);
    out.extrapolated_x0.push_back(e.value);
    out.band_x0.push_back(e.band);
    out.n_used = std::min(out.n_used, e.n_used);
    methods.push_back(e.method);
  }
  auto used = [&](const char* m) { return std::find(methods.begin(), methods.end(), m) != methods.end(); };
  out.method = used("none") ? "none" : used("richardson") ? "richardson" : "aitken";
  double sum = 0.0;
  for (double v : out.extrapolated_x0) sum += v;
  out.value = sum / static_cast<double>(nx);
  out.band = *std::max_element(out.band_x0.begin(), out.band_x0.end());
  const auto [mn, mx] = std::minmax_element(out.extrapolated_x0.begin(), out.extrapolated_x0.end());
  out.x0_spread = *mx - *mn;

  out.random_mu_estimate = kNaN;
  if (kernel.is_finite() && static_cast<int>(nx) == kernel.chain().size()) {
    const auto& chain = kernel.chain();
    std::vector<int> index(nx);
    std::vector<bool> seen(nx, false);
    bool covers = true;
    for (std::size_t i = 0; i < nx && covers; ++i) {
      index[i] = chain.index_of(x0[i]);
      covers = !seen[static_cast<std::size_t>(index[i])];
      seen[static_cast<std::size_t>(index[i])] = true;
    }
    if (covers) {
      Rng rng(options.mu_seed, 0);
      std::vector<double> logs(nx), mu(nx);
      double total = 0.0;
      for (double& m : mu) total += (m = -std::log(rng.uniform_open()));
      for (std::size_t i = 0; i < nx; ++i) logs[i] = std::log(mu[i] / total) + ens.log_mean_weight(i, out.n_used);
      out.random_mu_estimate = log_sum_exp(logs) / static_cast<double>(out.n_used);
    }
  }
  return out;
}

std::string to_string(LevelStatus s) {
  switch (s) {
    case LevelStatus::inside: return "inside";
    case LevelStatus::outside_domain: return "outside effective domain sampled";
    case LevelStatus::infinite: return "infinite";
  }
  return "?";
}

ScalarRateCurve rate_legendre_parametric(const Kernel& kernel, const fk::Potential& phi,
                                         std::span<const double> s_grid, const RateOptions& options,
                                         std::string phi_id) {
  if (!(options.theta_box > 0.0)) throw InvalidArgument("theta_box must be > 0");
  ScalarRateCurve c;
  c.phi_id = std::move(phi_id);
  c.s.assign(s_grid.begin(), s_grid.end());

  double phi_min = phi.inf_bound, phi_max = phi.sup_bound;
  Eigen::VectorXd values;
  if (kernel.is_finite()) {
    values = fk::tabulate(phi, kernel.chain());
    phi_min = values.minCoeff();
    phi_max = values.maxCoeff();
  }
  c.degenerate = phi_max - phi_min <= 1e-12 * std::max(1.0, std::abs(phi_max));
  auto push = [&](double I, double theta, LevelStatus st) {
    c.I.push_back(I);
    c.theta_star.push_back(theta);
    c.status.push_back(st);
  };

  if (c.degenerate) {
    c.mean = phi_max;
    for (double s : c.s) {
      if (std::abs(s - c.mean) <= 1e-12 * std::max(1.0, std::abs(c.mean))) push(0.0, 0.0, LevelStatus::inside);
      else push(kInf, kNaN, LevelStatus::infinite);
    }
    return c;
  }

  const double box = options.theta_box;
  if (options.backend == fk::Backend::exact) {
    const auto& chain = kernel.chain();
    auto Lambda = [&](double t) { return finite::pressure_exact(chain, t * values); };
    auto dLambda = [&](double t) { return finite::pressure_gradient(chain, t * values).dot(values); };
    c.mean = dLambda(0.0);
    const double d_lo = dLambda(-box), d_hi = dLambda(box);
    for (double s : c.s) {
      if (s < phi_min - 1e-12 || s > phi_max + 1e-12) {
        push(kInf, kNaN, LevelStatus::infinite);
        continue;
      }
      if (s <= d_lo || s >= d_hi) {
        const double t = s <= d_lo ? -box : box;
        push(t * s - Lambda(t), t, LevelStatus::outside_domain);
        continue;
      }
      double lo = -box, hi = box;
      if (s == c.mean) lo = hi = 0.0;
      for (int it = 0; it < 200 && hi - lo > 1e-14 * std::max(1.0, std::abs(hi)); ++it) {
        const double mid = 0.5 * (lo + hi);
        if (dLambda(mid) < s) lo = mid;
        else hi = mid;
      }
      const double t = 0.5 * (lo + hi);
      push(std::max(0.0, t * s - Lambda(t)), t, LevelStatus::inside);
    }
    return c;
  }

  // Monte Carlo: common random numbers across the theta grid.
  if (options.mc_theta_points < 3) throw InvalidArgument("need at least 3 theta grid points");
  std::vector<Point> x0 = options.mc_x0;
  if (x0.empty()) {
    if (!kernel.is_finite()) throw InvalidArgument("Monte Carlo rate curve needs initial states");
    x0.push_back(kernel.chain().state(0));
  }
  const int m = options.mc_theta_points | 1;  // odd, so theta = 0 is on the grid
  std::vector<double> theta(static_cast<std::size_t>(m)), lam(theta.size());
  for (int j = 0; j < m; ++j) {
    theta[static_cast<std::size_t>(j)] = -box + 2.0 * box * j / (m - 1);
    if (j == m / 2) theta[static_cast<std::size_t>(j)] = 0.0;
    lam[static_cast<std::size_t>(j)] =
        pressure_mc(kernel, scaled(phi, theta[static_cast<std::size_t>(j)]), x0, options.mc_n, options.mc).value;
  }
  const auto mid = static_cast<std::size_t>(m / 2);
  c.mean = (lam[mid + 1] - lam[mid - 1]) / (theta[mid + 1] - theta[mid - 1]);
  for (double s : c.s) {
    if (s < phi_min - 1e-12 || s > phi_max + 1e-12) {
      push(kInf, kNaN, LevelStatus::infinite);
      continue;
    }
    std::size_t best = 0;
    double val = -kInf;
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double v = theta[j] * s - lam[j];
      if (v > val) {
        val = v;
        best = j;
      }
    }
    const bool edge = best == 0 || best + 1 == theta.size();
    push(std::max(0.0, val), theta[best], edge ? LevelStatus::outside_domain : LevelStatus::inside);
  }
  return c;
}

CurveCheck check_curve(const ScalarRateCurve& curve, double zero_tol) {
  CurveCheck out;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < curve.s.size(); ++i)
    if (std::isfinite(curve.I[i])) idx.push_back(i);
  for (std::size_t j = 1; j + 1 < idx.size(); ++j) {
    const std::size_t a = idx[j - 1], b = idx[j], c = idx[j + 1];
    const double left = (curve.I[b] - curve.I[a]) / (curve.s[b] - curve.s[a]);
    const double right = (curve.I[c] - curve.I[b]) / (curve.s[c] - curve.s[b]);
    if (right - left < -1e-8) out.convex = false;
  }
  if (idx.empty()) {
    out.zero_at_mean = false;
    out.min_value = kInf;
    return out;
  }
  std::size_t argmin = idx[0], nearest = idx[0];
  for (std::size_t i : idx) {
    if (curve.I[i] < curve.I[argmin]) argmin = i;
    if (std::abs(curve.s[i] - curve.mean) < std::abs(curve.s[nearest] - curve.mean)) nearest = i;
  }
  out.min_value = curve.I[argmin];
  const bool adjacent = (argmin > nearest ? argmin - nearest : nearest - argmin) <= 1;
  const bool on_grid = std::abs(curve.s[nearest] - curve.mean) <= 1e-12 * std::max(1.0, std::abs(curve.mean));
  out.zero_at_mean = adjacent && out.min_value >= -zero_tol && (!on_grid || curve.I[nearest] <= zero_tol);
  return out;
}

TailReport ldp_tail_mc(const Kernel& kernel, const fk::Potential& phi, const Point& x0, double a,
                       std::span<const long> n_list, const TailOptions& options, std::string phi_id) {
  if (n_list.empty()) throw InvalidArgument("ldp_tail_mc needs at least one n");
  if (options.replicas < 1) throw InvalidArgument("ldp_tail_mc needs replicas >= 1");
  if (!(options.alpha > 0.0 && options.alpha < 1.0)) throw InvalidArgument("alpha must lie in (0, 1)");
  std::vector<long> ns(n_list.begin(), n_list.end());
  for (long n : ns)
    if (n < 1) throw InvalidArgument("ldp_tail_mc needs n >= 1");
  const long n_max = *std::max_element(ns.begin(), ns.end());
  std::vector<char> wanted(static_cast<std::size_t>(n_max) + 1, 0);
  for (long n : ns) wanted[static_cast<std::size_t>(n)] = 1;

  const bool finite = kernel.is_finite();
  Eigen::VectorXd table;
  int start = 0;
  if (finite) {
    table = fk::tabulate(phi, kernel.chain());
    start = kernel.chain().index_of(x0);
  }

  const long blocks = (options.replicas + kBlock - 1) / kBlock;
  std::vector<std::vector<long>> partial(static_cast<std::size_t>(blocks),
                                         std::vector<long>(static_cast<std::size_t>(n_max) + 1, 0));
  parallel_for(static_cast<std::size_t>(blocks), options.workers, [&](std::size_t b) {
    auto& hits = partial[b];
    const long r_end = std::min(options.replicas, static_cast<long>(b + 1) * kBlock);
    for (long r = static_cast<long>(b) * kBlock; r < r_end; ++r) {
      Rng rng(options.seed, static_cast<std::uint64_t>(r));
      double sum = 0.0;
      int xi = start;
      Point x = x0;
      for (long k = 1; k <= n_max; ++k) {
        if (finite) {
          xi = kernel.chain().next_state(xi, rng.uniform());
          sum += table(xi);
        } else {
          x = kernel.step(x, rng);
          sum += phi.eval(x);
        }
        if (wanted[static_cast<std::size_t>(k)] && sum >= a * static_cast<double>(k) - 1e-9)
          ++hits[static_cast<std::size_t>(k)];
      }
    }
  });
  std::vector<long> hits(static_cast<std::size_t>(n_max) + 1, 0);
  for (const auto& p : partial)
    for (std::size_t k = 0; k < p.size(); ++k) hits[k] += p[k];

  TailReport rep;
  rep.phi_id = std::move(phi_id);
  rep.threshold = a;
  rep.reference = options.reference_rate;
  for (long n : ns) {
    TailRow row;
    row.n = n;
    row.replicas = options.replicas;
    row.hits = hits[static_cast<std::size_t>(n)];
    row.p_hat = static_cast<double>(row.hits) / static_cast<double>(row.replicas);
    row.p_ci = clopper_pearson(static_cast<std::size_t>(row.hits), static_cast<std::size_t>(row.replicas),
                               options.alpha);
    row.zero_hit = row.hits == 0;
    row.few_hits = row.hits < 10;
    row.ci_lo = rate_of(row.p_ci.hi, n);
    row.ci_hi = rate_of(row.p_ci.lo, n);
    row.estimate = row.zero_hit ? row.ci_lo : rate_of(row.p_hat, n);
    rep.rows.push_back(row);
  }

  if (std::isfinite(rep.reference)) {
    const TailRow* prev = nullptr;
    for (const TailRow& row : rep.rows) {
      if (row.zero_hit) continue;
      if (prev) {
        const double d_prev = std::abs(prev->estimate - rep.reference);
        const double d_cur = std::abs(row.estimate - rep.reference);
        const double slack = 0.5 * ((prev->ci_hi - prev->ci_lo) + (row.ci_hi - row.ci_lo));
        if (d_cur > d_prev + slack) rep.trend_toward_reference = false;
      }
      prev = &row;
    }
  }
  return rep;
}

MixingReport mixing_rate(const Kernel& kernel, std::span<const Point> x0_list, const ObservableDictionary& dict,
                         long n_max, const MixingOptions& options) {
  if (x0_list.size() < 2) throw InvalidArgument("mixing_rate needs at least two initial states");
  if (dict.entries.empty()) throw InvalidArgument("mixing_rate needs a non-empty dictionary");
  if (n_max < 1) throw InvalidArgument("mixing_rate needs n_max >= 1");
  if (options.replicas < 2) throw InvalidArgument("mixing_rate needs at least two replicas");
  for (const auto& e : dict.entries)
    if (!(e.lip_norm > 0.0)) throw InvalidArgument("dictionary entry '" + e.name + "' has a non-positive norm");

  const std::size_t X = x0_list.size(), E = dict.entries.size(), N = static_cast<std::size_t>(n_max);
  const auto R = static_cast<std::size_t>(options.replicas);
  // values[((r * X + i) * N + (n - 1)) * E + e]
  std::vector<double> values(R * X * N * E);
  parallel_for(R, options.workers, [&](std::size_t r) {
    for (std::size_t i = 0; i < X; ++i) {
      Rng rng(options.seed, r);
      Point x = x0_list[i];
      for (std::size_t n = 0; n < N; ++n) {
        x = kernel.step(x, rng);
        double* slot = &values[((r * X + i) * N + n) * E];
        for (std::size_t e = 0; e < E; ++e) slot[e] = dict.entries[e].f(x);
      }
    }
  });

  MixingReport rep;
  for (std::size_t n = 0; n < N; ++n) {
    MixingRow row;
    row.n = static_cast<long>(n) + 1;
    for (std::size_t i = 0; i < X; ++i)
      for (std::size_t j = i + 1; j < X; ++j)
        for (std::size_t e = 0; e < E; ++e) {
          RunningStats diff;
          for (std::size_t r = 0; r < R; ++r)
            diff.add(values[((r * X + i) * N + n) * E + e] - values[((r * X + j) * N + n) * E + e]);
          const double norm = dict.entries[e].lip_norm;
          const double d = std::abs(diff.mean()) / norm;
          if (d > row.distance || (d == row.distance && row.std_error == 0.0)) {
            row.distance = d;
            row.std_error = diff.std_error() / norm;
          }
        }
    row.significant = row.distance > 0.0 && row.distance > options.significance * row.std_error;
    rep.rows.push_back(row);
  }

  std::vector<double> xs, ys;
  for (const auto& row : rep.rows) {
    if (!row.significant) break;
    xs.push_back(static_cast<double>(row.n));
    ys.push_back(std::log(row.distance));
  }
  rep.points_used = static_cast<long>(xs.size());
  if (xs.size() < 3) {
    rep.note = "fewer than three significant rows; no decay fitted";
    return rep;
  }
  const LinearFit fit = fit_line(xs, ys);
  rep.intercept = fit.intercept;
  rep.r_squared = fit.r_squared;
  if (!(fit.slope < 0.0)) {
    rep.note = "distance does not decay";
    return rep;
  }
  rep.gamma = -fit.slope;
  rep.success = true;
  return rep;
}

void write_pressure_csv(std::ostream& out, const PressureEstimate& e) {
  CsvWriter csv(out, {"n", "estimate", "ci_lo", "ci_hi"});
  for (const auto& row : e.rows)
    csv.cell(row.n).cell(row.estimate).cell(row.estimate - 1.96 * row.std_error).cell(row.estimate + 1.96 * row.std_error).end_row();
}

nlohmann::json pressure_json(const PressureEstimate& e) {
  nlohmann::json j;
  j["V"] = e.V_id;
  j["replicas"] = e.replicas;
  j["value"] = e.value;
  j["band"] = e.band;
  j["method"] = e.method;
  j["n_used"] = e.n_used;
  j["x0_spread"] = e.x0_spread;
  j["ess_collapse"] = e.ess_collapse;
  j["extrapolated_x0"] = e.extrapolated_x0;
  j["band_x0"] = e.band_x0;
  j["random_mu_estimate"] = std::isfinite(e.random_mu_estimate) ? nlohmann::json(e.random_mu_estimate) : nlohmann::json();
  return j;
}

void write_rate_curve_csv(std::ostream& out, const ScalarRateCurve& c) {
  CsvWriter csv(out, {"s", "I", "theta_star"});
  for (std::size_t i = 0; i < c.s.size(); ++i) csv.cell(c.s[i]).cell(c.I[i]).cell(c.theta_star[i]).end_row();
}

void write_tail_csv(std::ostream& out, const TailReport& r) {
  CsvWriter csv(out, {"n", "estimate", "ci_lo", "ci_hi"});
  for (const auto& row : r.rows) csv.cell(row.n).cell(row.estimate).cell(row.ci_lo).cell(row.ci_hi).end_row();
}

void write_mixing_csv(std::ostream& out, const MixingReport& r) {
  CsvWriter csv(out, {"n", "estimate", "ci_lo", "ci_hi"});
  for (const auto& row : r.rows)
    csv.cell(row.n)
        .cell(row.distance)
        .cell(std::max(0.0, row.distance - 1.96 * row.std_error))
        .cell(row.distance + 1.96 * row.std_error)
        .end_row();
}

nlohmann::json mixing_json(const MixingReport& r) {
  return nlohmann::json{{"gamma", r.gamma},         {"intercept", r.intercept}, {"r_squared", r.r_squared},
                        {"points_used", r.points_used}, {"success", r.success},   {"note", r.note}};
}

}  // namespace dvlab::ldp
