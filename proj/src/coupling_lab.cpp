#include "dvlab/coupling_lab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "dvlab/errors.hpp"
#include "dvlab/io.hpp"
#include "dvlab/parallel.hpp"

namespace dvlab::coupling {

namespace {

int sample_index(const Eigen::VectorXd& probs, double u) {
  double c = 0.0;
  int last = 0;
  for (Eigen::Index j = 0; j < probs.size(); ++j) {
    if (probs(j) <= 0.0) continue;
    c += probs(j);
    last = static_cast<int>(j);
    if (u < c) return last;
  }
  return last;
}

struct Split {
  Eigen::VectorXd common;  // min(P(x,.), P(x',.))
  Eigen::VectorXd rest_x;
  Eigen::VectorXd rest_x2;
  double overlap = 0.0;
};

Split split_rows(const finite::FiniteChain& chain, int x, int x2) {
  Split s;
  const auto& P = chain.transition();
  s.common = P.row(x).cwiseMin(P.row(x2)).transpose();
  s.overlap = std::min(1.0, s.common.sum());
  s.rest_x = (P.row(x).transpose() - s.common).cwiseMax(0.0);
  s.rest_x2 = (P.row(x2).transpose() - s.common).cwiseMax(0.0);
  return s;
}

void check_claims(double q, double C) {
  if (!(q >= 0.0 && q < 1.0)) throw InvalidArgument("q_claim must lie in [0, 1)");
  if (!(C >= 0.0)) throw InvalidArgument("C_claim must be nonnegative");
}

}  // namespace

CouplingOperator maximal_coupling(const finite::FiniteChain& chain, double q_claim, double C_claim) {
  check_claims(q_claim, C_claim);
  CoupleFn fn = [chain](const Point& a, const Point& b, Rng& rng) {
    const int x = chain.index_of(a), x2 = chain.index_of(b);
    if (x == x2) {
      const Point y = chain.state(chain.next_state(x, rng.uniform()));
      return std::make_pair(y, y);
    }
    const Split s = split_rows(chain, x, x2);
    if (rng.uniform() < s.overlap) {
      const Point y = chain.state(sample_index(s.common / s.overlap, rng.uniform()));
      return std::make_pair(y, y);
    }
    const double r = 1.0 - s.overlap;
    const int y = sample_index(s.rest_x / r, rng.uniform());
    const int y2 = sample_index(s.rest_x2 / r, rng.uniform());
    return std::make_pair(chain.state(y), chain.state(y2));
  };
  return CouplingOperator{"maximal", chain.metric_space(), std::move(fn), q_claim, C_claim};
}

CouplingOperator independent_coupling(const finite::FiniteChain& chain, double q_claim, double C_claim) {
  check_claims(q_claim, C_claim);
  CoupleFn fn = [chain](const Point& a, const Point& b, Rng& rng) {
    const int x = chain.index_of(a), x2 = chain.index_of(b);
    const int y = chain.next_state(x, rng.uniform());
    const int y2 = x == x2 ? y : chain.next_state(x2, rng.uniform());
    return std::make_pair(chain.state(y), chain.state(y2));
  };
  return CouplingOperator{"independent", chain.metric_space(), std::move(fn), q_claim, C_claim};
}

CouplingOperator synchronous_coupling(const RandomSystem& system, double q_claim, double C_claim) {
  check_claims(q_claim, C_claim);
  CoupleFn fn = [system](const Point& a, const Point& b, Rng& rng) {
    const NoiseSample z = system.noise.sample(rng);
    return std::make_pair(system.map.apply(a, z), system.map.apply(b, z));
  };
  return CouplingOperator{"synchronous", system.map.space, std::move(fn), q_claim, C_claim};
}

Eigen::MatrixXd maximal_coupling_law(const finite::FiniteChain& chain, int x, int x2) {
  const int m = chain.size();
  if (x < 0 || x >= m || x2 < 0 || x2 >= m) throw InvalidArgument("state index out of range");
  if (x == x2) return Eigen::MatrixXd(chain.transition().row(x).asDiagonal());
  const Split s = split_rows(chain, x, x2);
  Eigen::MatrixXd J = s.common.asDiagonal();
  if (s.overlap < 1.0) J += s.rest_x * s.rest_x2.transpose() / (1.0 - s.overlap);
  return J;
}

Eigen::MatrixXd independent_coupling_law(const finite::FiniteChain& chain, int x, int x2) {
  const int m = chain.size();
  if (x < 0 || x >= m || x2 < 0 || x2 >= m) throw InvalidArgument("state index out of range");
  if (x == x2) return Eigen::MatrixXd(chain.transition().row(x).asDiagonal());
  return chain.transition().row(x).transpose() * chain.transition().row(x2);
}

double violation_probability(const finite::FiniteChain& chain, const Eigen::MatrixXd& joint, int x, int x2,
                             double q) {
  const double limit = q * chain.metric()(x, x2);
  double p = 0.0;
  for (int y = 0; y < chain.size(); ++y)
    for (int y2 = 0; y2 < chain.size(); ++y2)
      if (chain.metric()(y, y2) > limit) p += joint(y, y2);
  return p;
}

double exact_squeezing_constant(const finite::FiniteChain& chain, double q) {
  double C = 0.0;
  for (int x = 0; x < chain.size(); ++x)
    for (int x2 = 0; x2 < chain.size(); ++x2)
      if (x != x2)
        C = std::max(C, violation_probability(chain, maximal_coupling_law(chain, x, x2), x, x2, q) /
                            chain.metric()(x, x2));
  return C;
}

std::string CouplingTrace::label() const {
  return first_bad ? "C_" + std::to_string(*first_bad) : std::string("B");
}

CouplingTrace run_coupled(const CouplingOperator& op, const Point& x0, const Point& x0b, long n, Rng& rng) {
  if (n < 0) throw InvalidArgument("run_coupled needs n >= 0");
  CouplingTrace t;
  t.q = op.q_claim;
  t.pairs.emplace_back(x0, x0b);
  t.dists.push_back(op.space.distance(x0, x0b));
  for (long k = 0; k < n; ++k) {
    auto next = op.couple(t.pairs.back().first, t.pairs.back().second, rng);
    for (const Point* p : {&next.first, &next.second})
      for (double c : p->coords)
        if (!std::isfinite(c)) throw SimulationError("coupled trajectory left the finite range", k + 1);
    const double d = op.space.distance(next.first, next.second);
    const bool a = d <= op.q_claim * t.dists.back();
    t.event_a.push_back(a);
    if (!a && !t.first_bad) t.first_bad = k;
    if (t.pairs.back().first == t.pairs.back().second && !(next.first == next.second))
      throw SimulationError("coupling separated equal states", k + 1);
    t.pairs.push_back(std::move(next));
    t.dists.push_back(d);
  }
  return t;
}

CouplingTrace run_coupled(const CouplingOperator& op, const Point& x0, const Point& x0b, long n,
                          std::uint64_t seed) {
  Rng rng(seed, 0);
  return run_coupled(op, x0, x0b, n, rng);
}

SqueezingReport estimate_squeezing(const CouplingOperator& op, std::span<const std::pair<Point, Point>> pair_grid,
                                   long trials, std::uint64_t seed, double C_cap, unsigned workers) {
  if (trials < 1) throw InvalidArgument("estimate_squeezing needs trials >= 1");
  if (pair_grid.empty()) throw InvalidArgument("estimate_squeezing needs at least one pair");
  const std::size_t np = pair_grid.size();
  // ratios[i][t] = d(y, y') / d(x, x')
  std::vector<std::vector<double>> ratios(np, std::vector<double>(static_cast<std::size_t>(trials)));
  std::vector<double> dist(np);
  for (std::size_t i = 0; i < np; ++i) {
    dist[i] = op.space.distance(pair_grid[i].first, pair_grid[i].second);
    if (!(dist[i] > 0.0)) throw InvalidArgument("squeezing pairs must be distinct");
  }
  parallel_for(np, workers, [&](std::size_t i) {
    for (long t = 0; t < trials; ++t) {
      Rng rng(stream_id(seed, i), static_cast<std::uint64_t>(t));
      const auto [y, y2] = op.couple(pair_grid[i].first, pair_grid[i].second, rng);
      ratios[i][static_cast<std::size_t>(t)] = op.space.distance(y, y2) / dist[i];
    }
  });
  SqueezingReport rep;
  rep.q = op.q_claim;
  rep.C_cap = C_cap;
  auto C_for = [&](double q) {
    double C = 0.0;
    for (std::size_t i = 0; i < np; ++i) {
      const auto v = std::count_if(ratios[i].begin(), ratios[i].end(), [q](double r) { return r > q; });
      C = std::max(C, static_cast<double>(v) / static_cast<double>(trials) / dist[i]);
    }
    return C;
  };
  for (std::size_t i = 0; i < np; ++i) {
    SqueezingRow row{pair_grid[i].first, pair_grid[i].second, dist[i], 0, trials, 0.0, {}};
    row.violations = std::count_if(ratios[i].begin(), ratios[i].end(), [&](double r) { return r > op.q_claim; });
    row.frequency = static_cast<double>(row.violations) / static_cast<double>(trials);
    row.ci = wilson_interval(static_cast<std::size_t>(row.violations), static_cast<std::size_t>(trials), 4.0);
    rep.C_hat = std::max(rep.C_hat, row.frequency / dist[i]);
    rep.rows.push_back(std::move(row));
  }
  rep.q_min = std::numeric_limits<double>::quiet_NaN();
  for (int g = 0; g <= 100; ++g) {
    const double q = g / 100.0;
    if (C_for(q) <= C_cap) {
      rep.q_min = q;
      break;
    }
  }
  return rep;
}

std::string to_string(CheckStatus s) {
  switch (s) {
    case CheckStatus::pass:
      return "pass";
    case CheckStatus::fail:
      return "fail";
    case CheckStatus::insufficient:
      return "insufficient data";
  }
  return "?";
}

namespace {

// Class index of each trace: first_bad, or n for B_n.
std::vector<long> trace_classes(const CouplingOperator& op, const Point& x0, const Point& x0b, long n, long trials,
                                std::uint64_t seed, unsigned workers) {
  std::vector<long> cls(static_cast<std::size_t>(trials));
  parallel_for(static_cast<std::size_t>(trials), workers, [&](std::size_t t) {
    Rng rng(seed, t);
    const auto tr = run_coupled(op, x0, x0b, n, rng);
    cls[t] = tr.first_bad.value_or(n);
  });
  return cls;
}

}  // namespace

std::vector<ConditionalRow> conditional_bound_check(const CouplingOperator& op, const Point& x0, const Point& x0b,
                                                    long n, long trials, std::uint64_t seed, long min_survivors,
                                                    unsigned workers) {
  if (n < 1 || trials < 1) throw InvalidArgument("conditional_bound_check needs n >= 1 and trials >= 1");
  const double d0 = op.space.distance(x0, x0b);
  const auto cls = trace_classes(op, x0, x0b, n, trials, seed, workers);
  std::vector<ConditionalRow> rows;
  long survivors = trials;
  for (long k = 0; k < n; ++k) {
    ConditionalRow row;
    row.k = k;
    row.survivors = survivors;
    row.violations = std::count(cls.begin(), cls.end(), k);
    row.bound = op.C_claim * std::pow(op.q_claim, static_cast<double>(k)) * d0;
    if (survivors >= min_survivors) {
      row.frequency = static_cast<double>(row.violations) / static_cast<double>(survivors);
      row.ci = wilson_interval(static_cast<std::size_t>(row.violations), static_cast<std::size_t>(survivors), 4.0);
      row.status = row.ci.lo <= row.bound ? CheckStatus::pass : CheckStatus::fail;
    } else {
      row.frequency = survivors > 0 ? static_cast<double>(row.violations) / static_cast<double>(survivors) : 0.0;
      row.status = CheckStatus::insufficient;
    }
    rows.push_back(row);
    survivors -= row.violations;
  }
  return rows;
}

Decomposition lipschitz_decomposition(const CouplingOperator& op, const Kernel& kernel, const fk::Potential& V,
                                      const StateFunction& f, const Point& x0, const Point& x0b, long n,
                                      long trials, std::uint64_t seed, unsigned workers) {
  if (n < 1 || trials < 2) throw InvalidArgument("lipschitz_decomposition needs n >= 1 and trials >= 2");
  const double shift = static_cast<double>(n) * V.sup_bound;  // weights are e^{S - shift} <= 1
  if (shift > 700.0)
    throw InvalidArgument("n sup V exceeds 700: the weight difference cannot be represented");
  std::vector<long> cls(static_cast<std::size_t>(trials));
  std::vector<double> diff(static_cast<std::size_t>(trials));
  parallel_for(static_cast<std::size_t>(trials), workers, [&](std::size_t t) {
    Rng rng(seed, t);
    const auto tr = run_coupled(op, x0, x0b, n, rng);
    double s = 0.0, s2 = 0.0;
    for (long k = 1; k <= n; ++k) {
      s += V.eval(tr.pairs[static_cast<std::size_t>(k)].first);
      s2 += V.eval(tr.pairs[static_cast<std::size_t>(k)].second);
    }
    const auto& last = tr.pairs.back();
    diff[t] = f(last.first) * std::exp(s - shift) - f(last.second) * std::exp(s2 - shift);
    cls[t] = tr.first_bad.value_or(n);
  });

  const double scale = std::exp(shift);
  auto estimate = [&](long which) {  // which = -1: every trace
    RunningStats st;
    for (std::size_t t = 0; t < diff.size(); ++t) st.add(which < 0 || cls[t] == which ? diff[t] : 0.0);
    return Estimate{st.mean() * scale, st.std_error() * scale};
  };
  Decomposition d;
  d.n = n;
  d.trials = trials;
  d.good = estimate(n);
  for (long k = 0; k < n; ++k) d.bad.push_back(estimate(k));
  d.total = estimate(-1);
  d.exact_difference = std::numeric_limits<double>::quiet_NaN();

  if (kernel.is_finite()) {
    const auto& chain = kernel.chain();
    const auto exact = fk::fk_apply(kernel, V, f, n, fk::Backend::exact);
    d.exact_difference = exact.value(static_cast<std::size_t>(chain.index_of(x0))) -
                         exact.value(static_cast<std::size_t>(chain.index_of(x0b)));
    double f_sup = 0.0;
    for (int i = 0; i < chain.size(); ++i) f_sup = std::max(f_sup, std::abs(f(chain.state(i))));
    std::vector<double> q1(static_cast<std::size_t>(n) + 1);
    const auto ones = [](const Point&) { return 1.0; };
    for (long k = 0; k <= n; ++k) {
      const auto t = fk::fk_apply(kernel, V, ones, k, fk::Backend::exact);
      double sup = 0.0;
      for (std::size_t i = 0; i < t.states.size(); ++i) sup = std::max(sup, t.value(i));
      q1[static_cast<std::size_t>(k)] = sup;
    }
    const double d0 = op.space.distance(x0, x0b);
    for (long k = 0; k < n; ++k) {
      const double b = 2.0 * op.C_claim * std::exp(V.sup_bound) * f_sup * q1[static_cast<std::size_t>(n - k - 1)] *
                       q1[static_cast<std::size_t>(k)] * std::pow(op.q_claim, static_cast<double>(k)) * d0;
      d.bad_bound.push_back(b);
      if (std::abs(d.bad[static_cast<std::size_t>(k)].mean) > b + 4 * d.bad[static_cast<std::size_t>(k)].std_error)
        d.bounds_hold = false;
    }
  }
  return d;
}

void write_trace_csv(std::ostream& out, const CouplingTrace& trace) {
  CsvWriter w(out, {"k", "d_k", "event", "class"});
  const std::string cls = trace.label();
  for (std::size_t k = 0; k < trace.dists.size(); ++k) {
    w.cell(static_cast<long>(k)).cell(trace.dists[k]);
    w.cell(k < trace.event_a.size() ? (trace.event_a[k] ? "A" : "notA") : "");
    w.cell(cls);
    w.end_row();
  }
}

void write_squeezing_csv(std::ostream& out, const SqueezingReport& report) {
  CsvWriter w(out, {"distance", "violations", "trials", "frequency", "ci_lo", "ci_hi", "q"});
  for (const auto& r : report.rows) {
    w.cell(r.distance).cell(r.violations).cell(r.trials).cell(r.frequency).cell(r.ci.lo).cell(r.ci.hi).cell(report.q);
    w.end_row();
  }
}

void write_conditional_csv(std::ostream& out, const std::vector<ConditionalRow>& rows) {
  CsvWriter w(out, {"k", "survivors", "violations", "frequency", "ci_lo", "ci_hi", "bound", "status"});
  for (const auto& r : rows) {
    w.cell(r.k).cell(r.survivors).cell(r.violations).cell(r.frequency).cell(r.ci.lo).cell(r.ci.hi).cell(r.bound);
    w.cell(to_string(r.status));
    w.end_row();
  }
}

nlohmann::json decomposition_json(const Decomposition& d) {
  auto est = [](const Estimate& e) { return nlohmann::json{{"mean", e.mean}, {"std_error", e.std_error}}; };
  nlohmann::json j;
  j["n"] = d.n;
  j["trials"] = d.trials;
  j["J_good"] = est(d.good);
  j["J_bad"] = nlohmann::json::array();
  for (std::size_t k = 0; k < d.bad.size(); ++k) {
    auto e = est(d.bad[k]);
    e["k"] = k;
    if (k < d.bad_bound.size()) e["bound"] = d.bad_bound[k];
    j["J_bad"].push_back(e);
  }
  j["total"] = est(d.total);
  if (std::isfinite(d.exact_difference)) j["exact_difference"] = d.exact_difference;
  j["bounds_hold"] = d.bounds_hold;
  return j;
}

}  // namespace dvlab::coupling
