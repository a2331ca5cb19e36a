#include "dvlab/rds_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "dvlab/errors.hpp"

namespace dvlab {

namespace {

bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace

Point make_point(std::vector<double> coords, std::string space) {
  if (!all_finite(coords)) throw InvalidArgument("point in space '" + space + "' has non-finite coordinates");
  return Point{std::move(coords), std::move(space)};
}

double MetricSpace::distance(const Point& a, const Point& b) const {
  if (a.space != tag || b.space != tag)
    throw InvalidArgument("distance between points of spaces '" + a.space + "' and '" + b.space +
                          "' requested in space '" + tag + "'");
  return metric(a.coords, b.coords);
}

MetricSpace euclidean_space(std::string tag, double diameter) {
  return MetricSpace{std::move(tag),
                     [](std::span<const double> a, std::span<const double> b) {
                       double s = 0.0;
                       for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
                       return std::sqrt(s);
                     },
                     diameter};
}

Point RdsMap::apply(const Point& x, std::span<const double> noise) const {
  if (x.space != space.tag)
    throw InvalidArgument("state from space '" + x.space + "' fed to a map on '" + space.tag + "'");
  return Point{step(x.coords, noise), space.tag};
}

std::vector<Point> simulate_trajectory(const RdsMap& map, const NoiseSource& noise, const Point& x0,
                                       long n, Rng& rng) {
  if (n < 1) throw InvalidArgument("simulate_trajectory needs n >= 1");
  if (x0.space != map.space.tag) throw InvalidArgument("initial state is not in the map's space");
  std::vector<Point> traj;
  traj.reserve(static_cast<std::size_t>(n));
  const Point* prev = &x0;
  for (long k = 1; k <= n; ++k) {
    const NoiseSample zeta = noise.sample(rng);
    Point next = map.apply(*prev, zeta);
    if (!all_finite(next.coords)) throw SimulationError("non-finite state produced", k);
    traj.push_back(std::move(next));
    prev = &traj.back();
  }
  return traj;
}

std::vector<Point> simulate_trajectory(const RdsMap& map, const NoiseSource& noise, const Point& x0,
                                       long n, std::uint64_t seed) {
  Rng rng(seed, 0);
  return simulate_trajectory(map, noise, x0, n, rng);
}

EmpiricalMeasure::EmpiricalMeasure(std::string space, std::vector<Atom> atoms) : space_(std::move(space)) {
  std::map<std::vector<double>, std::size_t> index;
  for (auto& atom : atoms) {
    if (!(atom.weight > 0.0) || !std::isfinite(atom.weight))
      throw InvalidArgument("empirical measure atoms need finite positive weights");
    auto [it, inserted] = index.emplace(atom.coords, atoms_.size());
    if (inserted)
      atoms_.push_back(std::move(atom));
    else
      atoms_[it->second].weight += atom.weight;
  }
  // Compensated sum so probability measures total 1 to rounding.
  double sum = 0.0, carry = 0.0;
  for (const auto& a : atoms_) {
    const double y = a.weight - carry;
    const double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
  total_weight_ = sum;
}

double EmpiricalMeasure::integrate(const std::function<double(const Point&)>& f) const {
  double s = 0.0;
  Point p{{}, space_};
  for (const auto& a : atoms_) {
    p.coords = a.coords;
    s += a.weight * f(p);
  }
  return s;
}

double EmpiricalMeasure::mass_at(std::span<const double> coords) const {
  for (const auto& a : atoms_)
    if (std::equal(a.coords.begin(), a.coords.end(), coords.begin(), coords.end())) return a.weight;
  return 0.0;
}

EmpiricalMeasure empirical_distribution(std::span<const Point> trajectory) {
  if (trajectory.empty()) throw InvalidArgument("empirical distribution of an empty trajectory");
  const std::string& space = trajectory.front().space;
  std::map<std::vector<double>, long> counts;
  std::vector<const std::vector<double>*> order;
  for (const auto& x : trajectory) {
    if (x.space != space) throw InvalidArgument("trajectory mixes states of different spaces");
    auto [it, inserted] = counts.emplace(x.coords, 0);
    if (inserted) order.push_back(&it->first);
    ++it->second;
  }
  const double n = static_cast<double>(trajectory.size());
  std::vector<Atom> atoms;
  atoms.reserve(order.size());
  for (const auto* c : order) atoms.push_back({*c, static_cast<double>(counts.at(*c)) / n});
  return EmpiricalMeasure(space, std::move(atoms));
}

double dual_lipschitz_distance(const EmpiricalMeasure& m1, const EmpiricalMeasure& m2,
                               const ObservableDictionary& dict) {
  if (m1.space() != m2.space())
    throw InvalidArgument("dual-Lipschitz distance between measures on '" + m1.space() + "' and '" +
                          m2.space() + "'");
  if (dict.entries.empty()) throw InvalidArgument("observable dictionary is empty");
  double best = 0.0;
  for (const auto& e : dict.entries) {
    if (!(e.lip_norm > 0.0)) throw InvalidArgument("dictionary entry '" + e.name + "' has lip_norm <= 0");
    best = std::max(best, std::abs(m1.integrate(e.f) - m2.integrate(e.f)) / e.lip_norm);
  }
  return best;
}

double audit_dictionary(const ObservableDictionary& dict, const MetricSpace& space,
                        std::span<const Point> states) {
  double worst = 0.0;
  for (const auto& e : dict.entries) {
    std::vector<double> values;
    values.reserve(states.size());
    for (const auto& s : states) values.push_back(e.f(s));
    for (std::size_t i = 0; i < states.size(); ++i) {
      worst = std::max(worst, std::abs(values[i]) / e.lip_norm);
      for (std::size_t j = i + 1; j < states.size(); ++j) {
        const double d = space.distance(states[i], states[j]);
        if (d <= 0.0) continue;
        const double q = std::abs(values[i] - values[j]) / d +
                         std::max(std::abs(values[i]), std::abs(values[j]));
        worst = std::max(worst, q / e.lip_norm);
      }
    }
  }
  return worst;
}

IrreducibilityReport irreducibility_probe(const RandomSystem& system, std::span<const Point> x_list,
                                          std::span<const Point> y_list, double eps, long steps,
                                          long trials, std::uint64_t seed) {
  if (!(eps > 0.0)) throw InvalidArgument("irreducibility probe needs eps > 0");
  if (trials < 1 || steps < 1) throw InvalidArgument("irreducibility probe needs trials >= 1 and N >= 1");
  IrreducibilityReport report;
  report.trials = trials;
  report.hit.assign(x_list.size(), std::vector<double>(y_list.size(), 0.0));
  report.min_hit = y_list.empty() || x_list.empty() ? 0.0 : 1.0;
  for (std::size_t i = 0; i < x_list.size(); ++i) {
    std::vector<long> hits(y_list.size(), 0);
    for (long t = 0; t < trials; ++t) {
      Rng rng(seed, stream_id(i, static_cast<std::uint64_t>(t)));
      const auto traj = simulate_trajectory(system.map, system.noise, x_list[i], steps, rng);
      for (std::size_t j = 0; j < y_list.size(); ++j)
        if (system.map.space.distance(traj.back(), y_list[j]) < eps) ++hits[j];
    }
    for (std::size_t j = 0; j < y_list.size(); ++j) {
      report.hit[i][j] = static_cast<double>(hits[j]) / static_cast<double>(trials);
      report.min_hit = std::min(report.min_hit, report.hit[i][j]);
    }
  }
  return report;
}

LipschitzAudit audit_map_lipschitz(const RandomSystem& system,
                                   std::span<const std::pair<Point, Point>> pairs, long draws,
                                   std::uint64_t seed) {
  LipschitzAudit audit;
  Rng rng(seed, 0);
  const auto& space = system.map.space;
  for (long t = 0; t < draws; ++t) {
    const NoiseSample zeta = system.noise.sample(rng);
    for (const auto& [x, y] : pairs) {
      const double d0 = space.distance(x, y);
      if (d0 <= 0.0) continue;
      const double d1 = space.distance(system.map.apply(x, zeta), system.map.apply(y, zeta));
      const double q = d1 / d0;
      audit.max_quotient = std::max(audit.max_quotient, q);
      if (q > system.map.lip_bound * (1.0 + 1e-9) + 1e-12) ++audit.violations;
      ++audit.checked;
    }
  }
  return audit;
}

}  // namespace dvlab
