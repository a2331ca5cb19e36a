#include "dvlab/cli.hpp"

#include <algorithm>
#include <chrono>
#include <climits>
#include <cmath>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>

#include "CLI11.hpp"
#include "json.hpp"

#include "dvlab/config.hpp"
#include "dvlab/coupling_lab.hpp"
#include "dvlab/feynman_kac.hpp"
#include "dvlab/finite_oracle.hpp"
#include "dvlab/io.hpp"
#include "dvlab/ldp_estimator.hpp"
#include "dvlab/nls_sim.hpp"
#include "dvlab/rng.hpp"

namespace dvlab::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class OutputError : public Error {
 public:
  using Error::Error;
};

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Context {
  Config cfg;
  fs::path out_dir;
  unsigned workers = 1;
  std::uint64_t seed = 0;
  std::vector<std::string> outputs;
  json checks = json::object();
  json extra = json::object();

  void write(const std::string& name, const std::function<void(std::ostream&)>& body) {
    const fs::path path = out_dir / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw OutputError("cannot open " + path.string() + " for writing");
    body(out);
    out.flush();
    if (!out) throw OutputError("failed writing " + path.string());
    outputs.push_back(name);
  }

  void write_json(const std::string& name, const json& doc) {
    write(name, [&](std::ostream& os) { os << doc.dump(2) << '\n'; });
  }

  void check(const std::string& name, bool pass) { checks[name] = pass; }
};

const std::set<std::string> kChainKeys{"P", "labels", "metric", "seed"};

std::set<std::string> with_chain_keys(std::initializer_list<std::string> extra) {
  std::set<std::string> keys = kChainKeys;
  keys.insert(extra.begin(), extra.end());
  return keys;
}

int get_int(Config& cfg, const std::string& key, int fallback) {
  const long v = cfg.get_long(key, fallback);
  if (v < INT_MIN || v > INT_MAX) cfg.fail(key, "integer out of range");
  return static_cast<int>(v);
}

long get_positive(Config& cfg, const std::string& key, long fallback) {
  const long v = cfg.get_long(key, fallback);
  if (v < 1) cfg.fail(key, "must be >= 1");
  return v;
}

finite::FiniteChain load_chain(Config& cfg) {
  const Eigen::MatrixXd P = cfg.require_matrix("P");
  const int m = static_cast<int>(P.rows());
  if (P.cols() != m) cfg.fail("P", "transition matrix must be square");
  std::vector<std::string> fallback;
  for (int i = 0; i < m; ++i) fallback.push_back(std::to_string(i + 1));
  const auto labels = cfg.get_strings("labels", fallback);
  if (static_cast<int>(labels.size()) != m) cfg.fail("labels", "need one label per state");
  Eigen::MatrixXd metric = Eigen::MatrixXd::Ones(m, m) - Eigen::MatrixXd::Identity(m, m);
  if (cfg.has("metric")) metric = cfg.require_matrix("metric");
  try {
    return finite::FiniteChain(P, labels, metric);
  } catch (const InvalidArgument& e) {
    const std::string what = e.what();
    cfg.fail(what.find("metric") != std::string::npos ? "metric" : "P", what);
  }
}

Eigen::VectorXd chain_vector(Config& cfg, const std::string& key, const Eigen::VectorXd& fallback) {
  const std::vector<double> fb(fallback.data(), fallback.data() + fallback.size());
  const auto v = cfg.get_doubles(key, fb);
  if (v.size() != static_cast<std::size_t>(fallback.size()))
    cfg.fail(key, "need " + std::to_string(fallback.size()) + " values, one per state");
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Eigen::VectorXd last_indicator(int m) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(m);
  v(m - 1) = 1.0;
  return v;
}

int state_index(Config& cfg, const std::string& key, int fallback, int m) {
  const int i = get_int(cfg, key, fallback);
  if (i < 0 || i >= m) cfg.fail(key, "state index must lie in [0, " + std::to_string(m - 1) + "]");
  return i;
}

fk::Backend backend_of(Config& cfg, const std::string& key) {
  const std::string name = cfg.get_string(key, "exact");
  if (name != "exact" && name != "mc") cfg.fail(key, "expected 'exact' or 'mc'");
  return fk::parse_backend(name);
}

json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

// Indicators of single states; sup 1 plus Lipschitz 1 / (smallest distance).
ObservableDictionary indicator_dictionary(const finite::FiniteChain& chain) {
  double dmin = INFINITY;
  for (int i = 0; i < chain.size(); ++i)
    for (int j = 0; j < chain.size(); ++j)
      if (i != j) dmin = std::min(dmin, chain.metric()(i, j));
  const double lip = std::isfinite(dmin) ? 1.0 + 1.0 / dmin : 1.0;
  ObservableDictionary d;
  for (int j = 0; j < chain.size(); ++j)
    d.entries.push_back({"1_" + chain.labels()[static_cast<std::size_t>(j)],
                         [chain, j](const Point& x) { return chain.index_of(x) == j ? 1.0 : 0.0; }, lip});
  return d;
}

void cmd_oracle(Context& ctx) {
  Config& cfg = ctx.cfg;
  cfg.require_known(with_chain_keys(
      {"V", "rate_denominator", "theta_box", "pressure_n_max", "tail_target", "tail_level", "tail_n", "tail_x0"}));
  const auto chain = load_chain(cfg);
  const int m = chain.size();
  const Eigen::VectorXd V = chain_vector(cfg, "V", last_indicator(m));
  const int denominator = get_int(cfg, "rate_denominator", 20);
  if (denominator < 1) cfg.fail("rate_denominator", "must be >= 1");
  const double box = cfg.get_double("theta_box", 20.0);
  if (!(box > 0.0)) cfg.fail("theta_box", "must be > 0");
  const long pressure_n = cfg.get_long("pressure_n_max", 64);
  if (pressure_n < 4) cfg.fail("pressure_n_max", "must be >= 4");
  const int target = state_index(cfg, "tail_target", m - 1, m);
  const double level = cfg.get_double("tail_level", 0.6);
  const auto tail_n = cfg.get_longs("tail_n", {50, 100, 200, 400});
  for (long n : tail_n)
    if (n < 1 || n > INT_MAX) cfg.fail("tail_n", "every n must be >= 1");
  const int x0 = state_index(cfg, "tail_x0", 0, m);
  if (!chain.irreducible()) cfg.fail("P", "the chain must be irreducible");

  const auto rows = finite::rate_table(chain, finite::simplex_lattice(m, denominator), box);
  ctx.write("rate_table.csv", [&](std::ostream& os) { finite::write_rate_table_csv(os, rows); });
  double discrepancy = 0.0;
  long boundary_rows = 0;
  for (const auto& r : rows) {
    if (r.at_boundary) {
      ++boundary_rows;
      continue;
    }
    discrepancy = std::max(discrepancy, std::abs(r.legendre - r.dv));
  }

  const Kernel kernel(chain);
  const auto V_fn = fk::Potential::on_chain(chain, V);
  const auto fekete = fk::fk_lambda1(kernel, V_fn, pressure_n, fk::Backend::exact);
  ctx.write("pressure.csv", [&](std::ostream& os) {
    CsvWriter w(os, {"n", "estimate", "ci_lo", "ci_hi"});
    for (std::size_t i = 0; i < fekete.n.size(); ++i)
      w.cell(fekete.n[i]).cell(fekete.a[i]).cell(fekete.a[i]).cell(fekete.a[i]).end_row();
  });

  ctx.write("tails.csv", [&](std::ostream& os) {
    CsvWriter w(os, {"n", "estimate", "ci_lo", "ci_hi"});
    for (long n : tail_n) {
      const double lp = finite::ldp_tail_exact_log(chain, target, level, static_cast<int>(n), x0);
      const double rate = lp >= 0.0 ? 0.0 : -lp / static_cast<double>(n);
      w.cell(n).cell(rate).cell(rate).cell(rate).end_row();
    }
  });

  const double pressure = finite::pressure_exact(chain, V);
  json summary;
  summary["pressure"] = pressure;
  summary["pressure_gradient"] = vector_json(finite::pressure_gradient(chain, V));
  summary["stationary"] = vector_json(chain.stationary());
  summary["level_set_infimum"] = finite::level_set_infimum(chain, target, level, box);
  summary["rate_formula_discrepancy"] = discrepancy;
  summary["boundary_rows"] = boundary_rows;
  summary["fekete_certificate"] = std::log(fekete.certificate);
  ctx.write_json("oracle.json", summary);
  ctx.check("rate_formulas_agree", discrepancy <= 1e-6);
  ctx.check("fekete_above_pressure", std::log(fekete.certificate) >= pressure - 1e-9);
}

void cmd_fk(Context& ctx) {
  Config& cfg = ctx.cfg;
  cfg.require_known(with_chain_keys({"V", "f", "backend", "lambda_n", "bootstrap_n", "convergence_n", "mc_samples",
                                     "growth_limit", "reference_n"}));
  const auto chain = load_chain(cfg);
  const int m = chain.size();
  const Eigen::VectorXd V = chain_vector(cfg, "V", last_indicator(m));
  const Eigen::VectorXd f = chain_vector(cfg, "f", Eigen::VectorXd::Ones(m));
  const fk::Backend backend = backend_of(cfg, "backend");
  const long lambda_n = cfg.get_long("lambda_n", 1024);
  if (lambda_n < 4) cfg.fail("lambda_n", "must be >= 4");
  const long bootstrap_n = get_positive(cfg, "bootstrap_n", 100);
  const long convergence_n = get_positive(cfg, "convergence_n", 60);
  fk::McOptions mc;
  mc.samples = get_positive(cfg, "mc_samples", 10'000);
  mc.seed = ctx.seed;
  mc.workers = ctx.workers;
  fk::BootstrapOptions bo;
  bo.growth_limit = cfg.get_double("growth_limit", 10.0);
  bo.reference_n = get_positive(cfg, "reference_n", 10);
  if (!chain.irreducible()) cfg.fail("P", "the chain must be irreducible");

  const Kernel kernel(chain);
  const auto V_fn = fk::Potential::on_chain(chain, V);
  const auto f_fn = fk::Potential::on_chain(chain, f);
  std::vector<Point> states;
  for (int i = 0; i < m; ++i) states.push_back(chain.state(i));

  const auto conv = fk::fk_convergence_certificate(kernel, V_fn, f_fn.eval, convergence_n);
  ctx.write("fk_convergence.csv", [&](std::ostream& os) { fk::write_convergence_csv(os, conv); });

  const auto lambda = fk::fk_lambda1(kernel, V_fn, lambda_n, backend, states, mc);
  const auto pairs = fk::all_state_pairs(chain);
  const double lambda1 = lambda.extrapolated;
  const auto boot = fk::bootstrap_log(kernel, V_fn, f_fn.eval, pairs, bootstrap_n, lambda1, backend, bo, mc);
  ctx.write("bootstrap.csv", [&](std::ostream& os) { fk::write_bootstrap_csv(os, boot); });
  ctx.write("fekete.csv", [&](std::ostream& os) {
    CsvWriter w(os, {"n", "estimate", "ci_lo", "ci_hi"});
    for (std::size_t i = 0; i < lambda.n.size(); ++i) {
      const double se = lambda.a_std_error.empty() ? 0.0 : lambda.a_std_error[i];
      w.cell(lambda.n[i]).cell(lambda.a[i]).cell(lambda.a[i] - 1.96 * se).cell(lambda.a[i] + 1.96 * se).end_row();
    }
  });

  const auto perron = finite::perron_triple(finite::tilted_kernel(chain, V));
  const auto eig = fk::eigenmeasure_fixed_point(kernel, V_fn);
  json summary;
  summary["backend"] = backend == fk::Backend::exact ? "exact" : "mc";
  summary["perron_lambda"] = perron.lambda;
  summary["perron_h"] = vector_json(perron.h);
  summary["perron_mu"] = vector_json(perron.mu);
  summary["lambda1_certificate"] = lambda.certificate;
  summary["lambda1_extrapolated"] = lambda.extrapolated;
  summary["log_lambda1_band"] = lambda.log_band;
  summary["eigenmeasure_lambda2"] = eig.lambda2;
  summary["eigenmeasure_mu"] = vector_json(eig.mu);
  summary["eigenmeasure_residual"] = eig.residual;
  summary["convergence_ratio"] = conv.ratio;
  summary["convergence_r_squared"] = conv.r_squared;
  summary["bootstrap_violation"] = boot.violation;
  ctx.write_json("fk.json", summary);
  ctx.check("geometric_convergence", conv.success && conv.ratio < 1.0);
  ctx.check("bootstrap_bounded", !boot.violation);
}

void cmd_couple(Context& ctx) {
  Config& cfg = ctx.cfg;
  cfg.require_known(with_chain_keys({"V", "f", "coupling", "q", "C", "C_cap", "x0", "x0b", "n", "trials",
                                     "squeezing_trials", "min_survivors"}));
  const auto chain = load_chain(cfg);
  const int m = chain.size();
  if (m < 2) cfg.fail("P", "coupling needs at least two states");
  const Eigen::VectorXd V = chain_vector(cfg, "V", last_indicator(m));
  const Eigen::VectorXd f = chain_vector(cfg, "f", V);
  const std::string kind = cfg.get_string("coupling", "maximal");
  if (kind != "maximal" && kind != "independent") cfg.fail("coupling", "expected 'maximal' or 'independent'");
  const double q = cfg.get_double("q", 0.5);
  if (!(q > 0.0 && q < 1.0)) cfg.fail("q", "must lie in (0, 1)");
  const double C = cfg.get_double("C", coupling::exact_squeezing_constant(chain, q));
  if (!(C > 0.0)) cfg.fail("C", "must be > 0");
  const double C_cap = cfg.get_double("C_cap", 1.0);
  const int x0 = state_index(cfg, "x0", 0, m);
  const int x0b = state_index(cfg, "x0b", 1, m);
  if (x0 == x0b) cfg.fail("x0b", "must differ from x0");
  const long n = get_positive(cfg, "n", 10);
  const long trials = get_positive(cfg, "trials", 100'000);
  const long squeezing_trials = get_positive(cfg, "squeezing_trials", 100'000);
  const long min_survivors = get_positive(cfg, "min_survivors", 100);

  const auto op = kind == "maximal" ? coupling::maximal_coupling(chain, q, C)
                                    : coupling::independent_coupling(chain, q, C);
  const Kernel kernel(chain);
  const auto V_fn = fk::Potential::on_chain(chain, V);
  const auto f_fn = fk::Potential::on_chain(chain, f);
  const Point a = chain.state(x0), b = chain.state(x0b);

  const auto trace = coupling::run_coupled(op, a, b, n, stream_id(ctx.seed, 0));
  ctx.write("coupling_trace.csv", [&](std::ostream& os) { coupling::write_trace_csv(os, trace); });
  const auto pairs = fk::all_state_pairs(chain);
  const auto sq = coupling::estimate_squeezing(op, pairs, squeezing_trials, stream_id(ctx.seed, 1), C_cap,
                                               ctx.workers);
  ctx.write("squeezing.csv", [&](std::ostream& os) { coupling::write_squeezing_csv(os, sq); });
  const auto cond = coupling::conditional_bound_check(op, a, b, n, trials, stream_id(ctx.seed, 2), min_survivors,
                                                      ctx.workers);
  ctx.write("conditional.csv", [&](std::ostream& os) { coupling::write_conditional_csv(os, cond); });
  const auto dec = coupling::lipschitz_decomposition(op, kernel, V_fn, f_fn.eval, a, b, n, trials,
                                                     stream_id(ctx.seed, 3), ctx.workers);
  json doc = coupling::decomposition_json(dec);
  doc["coupling"] = kind;
  doc["q"] = q;
  doc["C_claim"] = C;
  doc["C_hat"] = sq.C_hat;
  doc["q_min"] = sq.q_min;
  ctx.write_json("decomposition.json", doc);
  ctx.check("conditional_bound",
            std::none_of(cond.begin(), cond.end(),
                         [](const auto& r) { return r.status == coupling::CheckStatus::fail; }));
  ctx.check("bad_terms_bounded", dec.bounds_hold);
}

void cmd_nls(Context& ctx) {
  Config& cfg = ctx.cfg;
  cfg.require_known({"n_modes", "p", "dt", "sigma", "B", "N_active", "a0", "damping_arc", "chi_arc", "seed", "noise",
                     "steps", "depth", "breadth", "init_mode", "init_amplitude"});
  nls::NlsConfig nc;
  nc.n_modes = get_int(cfg, "n_modes", nc.n_modes);
  nc.p = get_int(cfg, "p", nc.p);
  nc.dt = cfg.get_double("dt", nc.dt);
  nc.sigma = cfg.get_double("sigma", nc.sigma);
  nc.B = cfg.get_double("B", nc.B);
  nc.N_active = get_int(cfg, "N_active", nc.N_active);
  nc.a0 = cfg.get_double("a0", nc.a0);
  nc.damping_arc = cfg.get_double("damping_arc", nc.damping_arc);
  nc.chi_arc = cfg.get_double("chi_arc", nc.chi_arc);
  nc.seed = ctx.seed;
  try {
    nc.validate();
  } catch (const InvalidArgument& e) {
    const std::string what = e.what();
    const auto q1 = what.find('\''), q2 = what.find('\'', q1 + 1);
    cfg.fail(q1 != std::string::npos && q2 != std::string::npos ? what.substr(q1 + 1, q2 - q1 - 1) : "n_modes",
             what);
  }
  const std::string noise = cfg.get_string("noise", "default");
  if (noise != "default" && noise != "zero") cfg.fail("noise", "expected 'default' or 'zero'");
  const long steps = cfg.get_long("steps", 10);
  if (steps < 0) cfg.fail("steps", "must be >= 0");
  const int depth = get_int(cfg, "depth", 10);
  if (depth < 0) cfg.fail("depth", "must be >= 0");
  const int breadth = get_int(cfg, "breadth", 20);
  if (breadth < 1) cfg.fail("breadth", "must be >= 1");
  const int init_mode = get_int(cfg, "init_mode", 1);
  if (std::abs(init_mode) > nc.n_modes) cfg.fail("init_mode", "must satisfy |k| <= n_modes");
  const double amplitude = cfg.get_double("init_amplitude", 1.0);

  const nls::NoiseSpec spec = noise == "zero" ? nls::NoiseSpec::zero(nc) : nls::NoiseSpec::defaults(nc);
  spec.validate();

  std::vector<nls::NlsState> traj{nls::NlsState::single_mode(nc.n_modes, nc.sigma, init_mode, amplitude)};
  const std::uint64_t traj_seed = stream_id(ctx.seed, 0);
  for (long k = 0; k < steps; ++k)
    traj.push_back(nls::time1_map(nc, spec, traj.back(), stream_id(traj_seed, static_cast<std::uint64_t>(k))));
  ctx.write("nls_trajectory.csv", [&](std::ostream& os) {
    CsvWriter w(os, {"k", "l2", "h1", "h1s"});
    for (std::size_t k = 0; k < traj.size(); ++k)
      w.cell(k).cell(traj[k].l2()).cell(traj[k].h1()).cell(traj[k].h1s()).end_row();
  });
  ctx.write("nls_states.csv", [&](std::ostream& os) { nls::write_states_csv(os, traj); });

  const auto att = nls::attainable_sample(nc, spec, depth, breadth, stream_id(ctx.seed, 1), ctx.workers);
  ctx.write("attainable_norms.csv", [&](std::ostream& os) {
    CsvWriter w(os, {"depth", "max_h1s", "mean_h1s", "max_h1"});
    for (std::size_t d = 0; d < att.layers.size(); ++d) {
      double mean = 0.0, max_h1 = 0.0;
      for (const auto& s : att.layers[d]) {
        mean += s.h1s();
        max_h1 = std::max(max_h1, s.h1());
      }
      mean /= static_cast<double>(att.layers[d].size());
      w.cell(d).cell(att.max_h1s[d]).cell(mean).cell(max_h1).end_row();
    }
  });
  ctx.write("attainable_states.csv", [&](std::ostream& os) { nls::write_states_csv(os, att.layers.back()); });

  json summary;
  summary["noise"] = noise;
  summary["noise_weighted_sum"] = spec.weighted_sum();
  summary["initial_h1"] = traj.front().h1();
  summary["final_h1"] = traj.back().h1();
  summary["attainable_slope"] = att.slope;
  summary["attainable_slope_std_error"] = att.slope_std_error;
  summary["attainable_bounded"] = att.bounded;
  ctx.write_json("nls.json", summary);
  ctx.extra["truncation"] = {{"n_modes", nc.n_modes}, {"p", nc.p}, {"dt", nc.dt},
                             {"grid_size", nc.grid_size()}, {"time_modes", nc.time_modes}};
  if (noise == "zero" && steps > 0 && traj.front().h1() > 0.0)
    ctx.check("dissipation", traj.back().h1() < traj.front().h1());
}

void cmd_ldp(Context& ctx) {
  Config& cfg = ctx.cfg;
  cfg.require_known(with_chain_keys({"V", "phi", "s_grid", "theta_box", "rate_backend", "rate_mc_n",
                                     "pressure_n", "pressure_replicas", "tail_level", "tail_n", "tail_x0",
                                     "tail_replicas", "alpha", "mixing_n", "mixing_replicas"}));
  const auto chain = load_chain(cfg);
  const int m = chain.size();
  const Eigen::VectorXd V = chain_vector(cfg, "V", last_indicator(m));
  const Eigen::VectorXd phi = chain_vector(cfg, "phi", last_indicator(m));
  const double lo = phi.minCoeff(), hi = phi.maxCoeff();
  std::vector<double> fallback_grid;
  for (int i = 0; i <= 40; ++i) fallback_grid.push_back(lo + (hi - lo) * i / 40.0);
  const auto s_grid = cfg.get_doubles("s_grid", fallback_grid);
  if (s_grid.empty()) cfg.fail("s_grid", "needs at least one level");
  ldp::RateOptions ro;
  ro.theta_box = cfg.get_double("theta_box", 20.0);
  if (!(ro.theta_box > 0.0)) cfg.fail("theta_box", "must be > 0");
  ro.backend = backend_of(cfg, "rate_backend");
  ro.mc_n = cfg.get_long("rate_mc_n", 32);
  if (ro.mc_n < 4) cfg.fail("rate_mc_n", "must be >= 4");
  ldp::PressureOptions po;
  po.replicas = cfg.get_long("pressure_replicas", 10'000);
  if (po.replicas < 100) cfg.fail("pressure_replicas", "must be >= 100");
  po.seed = stream_id(ctx.seed, 0);
  po.workers = ctx.workers;
  const long pressure_n = cfg.get_long("pressure_n", 64);
  if (pressure_n < 4) cfg.fail("pressure_n", "must be >= 4");
  ro.mc = po;
  ro.mc.seed = stream_id(ctx.seed, 1);
  ldp::TailOptions to;
  to.replicas = get_positive(cfg, "tail_replicas", 100'000);
  to.alpha = cfg.get_double("alpha", 0.05);
  if (!(to.alpha > 0.0 && to.alpha < 1.0)) cfg.fail("alpha", "must lie in (0, 1)");
  to.seed = stream_id(ctx.seed, 2);
  to.workers = ctx.workers;
  const auto tail_n = cfg.get_longs("tail_n", {10, 20, 40, 80});
  for (long n : tail_n)
    if (n < 1) cfg.fail("tail_n", "every n must be >= 1");
  const int x0 = state_index(cfg, "tail_x0", 0, m);
  ldp::MixingOptions mo;
  mo.replicas = get_positive(cfg, "mixing_replicas", 1000);
  mo.seed = stream_id(ctx.seed, 3);
  mo.workers = ctx.workers;
  const long mixing_n = get_positive(cfg, "mixing_n", 30);
  if (!chain.irreducible()) cfg.fail("P", "the chain must be irreducible");

  const Kernel kernel(chain);
  std::vector<Point> states;
  for (int i = 0; i < m; ++i) states.push_back(chain.state(i));
  ro.mc_x0 = states;
  const auto V_fn = fk::Potential::on_chain(chain, V);
  const auto phi_fn = fk::Potential::on_chain(chain, phi);

  const auto pressure = ldp::pressure_mc(kernel, V_fn, states, pressure_n, po);
  ctx.write("pressure_mc.csv", [&](std::ostream& os) { ldp::write_pressure_csv(os, pressure); });

  const auto curve = ldp::rate_legendre_parametric(kernel, phi_fn, s_grid, ro);
  ctx.write("rate_curve.csv", [&](std::ostream& os) { ldp::write_rate_curve_csv(os, curve); });
  const auto curve_check = ldp::check_curve(curve, ro.backend == fk::Backend::exact ? 1e-8 : 0.05);

  const double level = cfg.get_double("tail_level", curve.mean + 0.25 * (hi - curve.mean));
  if (level > lo && level < hi) {
    const std::vector<double> at{level};
    ldp::RateOptions exact = ro;
    exact.backend = fk::Backend::exact;
    to.reference_rate = ldp::rate_legendre_parametric(kernel, phi_fn, at, exact).I.front();
  }
  const auto tails = ldp::ldp_tail_mc(kernel, phi_fn, chain.state(x0), level, tail_n, to);
  ctx.write("tails_mc.csv", [&](std::ostream& os) { ldp::write_tail_csv(os, tails); });

  const auto mixing = ldp::mixing_rate(kernel, states, indicator_dictionary(chain), mixing_n, mo);
  ctx.write("mixing.csv", [&](std::ostream& os) { ldp::write_mixing_csv(os, mixing); });

  json summary;
  summary["pressure"] = ldp::pressure_json(pressure);
  summary["pressure_exact"] = finite::pressure_exact(chain, V);
  summary["rate_mean"] = curve.mean;
  summary["rate_convex"] = curve_check.convex;
  summary["rate_zero_at_mean"] = curve_check.zero_at_mean;
  summary["tail_level"] = level;
  summary["tail_reference_rate"] = std::isnan(to.reference_rate) ? json(nullptr) : json(to.reference_rate);
  summary["tail_trend_toward_reference"] = tails.trend_toward_reference;
  summary["mixing"] = ldp::mixing_json(mixing);
  ctx.write_json("ldp.json", summary);
  ctx.check("rate_convex", curve_check.convex);
  if (!curve.degenerate && curve.mean >= s_grid.front() && curve.mean <= s_grid.back())
    ctx.check("rate_zero_at_mean", curve_check.zero_at_mean);
}

const std::map<std::string, std::function<void(Context&)>>& commands() {
  static const std::map<std::string, std::function<void(Context&)>> table{
      {"oracle", cmd_oracle}, {"fk", cmd_fk}, {"couple", cmd_couple}, {"nls", cmd_nls}, {"ldp", cmd_ldp}};
  return table;
}

}  // namespace

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"oracle", "fk", "couple", "nls", "ldp"};
  return names;
}

int run_command(const std::string& subcommand, const RunOptions& options, std::ostream& err) {
  const auto it = commands().find(subcommand);
  if (it == commands().end()) {
    err << "error: unknown subcommand '" << subcommand << "'\n";
    return kInvalidConfig;
  }
  const std::string started = utc_now();
  Context ctx;
  ctx.out_dir = options.out_dir;
  ctx.workers = std::max(1u, options.workers);
  try {
    ctx.cfg = Config::load(options.config);
    if (options.seed) ctx.cfg.set("seed", std::to_string(*options.seed));
    ctx.seed = ctx.cfg.get_u64("seed", 0);
    std::error_code ec;
    fs::create_directories(ctx.out_dir, ec);
    if (ec) throw OutputError("cannot create output directory " + ctx.out_dir.string() + ": " + ec.message());
    it->second(ctx);
  } catch (const OutputError& e) {
    err << "error: " << e.what() << '\n';
    return kOutputFailure;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return kInvalidConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }

  bool pass = true;
  for (const auto& [name, ok] : ctx.checks.items()) {
    if (!ok.get<bool>()) {
      err << "check failed: " << name << '\n';
      pass = false;
    }
  }
  const int code = pass ? kOk : kCheckFailed;
  json manifest;
  manifest["subcommand"] = subcommand;
  manifest["config_path"] = options.config.string();
  manifest["config"] = ctx.cfg.resolved();
  manifest["seed"] = ctx.seed;
  manifest["workers"] = ctx.workers;
  manifest["code_version"] = code_version();
  manifest["started"] = started;
  manifest["finished"] = utc_now();
  manifest["outputs"] = ctx.outputs;
  manifest["checks"] = ctx.checks;
  for (const auto& [k, v] : ctx.extra.items()) manifest[k] = v;
  manifest["exit_code"] = code;
  std::ofstream out(ctx.out_dir / "manifest.json", std::ios::binary);
  out << manifest.dump(2) << '\n';
  if (!out) {
    err << "error: cannot write manifest.json\n";
    return kOutputFailure;
  }
  return code;
}

int main(int argc, char** argv) {
  CLI::App app{"dvlab: large-deviation and Feynman-Kac laboratory"};
  app.require_subcommand(1);
  std::map<std::string, RunOptions> opts;
  std::map<std::string, std::uint64_t> seeds;
  for (const auto& name : subcommands()) {
    auto& o = opts[name];
    CLI::App* sub = app.add_subcommand(name, "run the " + name + " pipeline");
    sub->add_option("--config", o.config, "config file")->required();
    sub->add_option("--seed", seeds[name], "override the config seed");
    sub->add_option("--out-dir", o.out_dir, "output directory (created if missing)");
    sub->add_option("--workers", o.workers, "maximum parallel width")->check(CLI::PositiveNumber);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalidConfig;
  }
  for (const auto& name : subcommands()) {
    CLI::App* sub = app.get_subcommand(name);
    if (!sub->parsed()) continue;
    RunOptions o = opts[name];
    if (sub->count("--seed")) o.seed = seeds[name];
    return run_command(name, o, std::cerr);
  }
  return kInvalidConfig;
}

}  // namespace dvlab::cli
