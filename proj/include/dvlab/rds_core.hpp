#pragma once

// Random dynamical systems x_k = S(x_{k-1}, zeta_{k-1}) over numerically
// represented metric spaces, their empirical measures, and the probes used to
// look at irreducibility and mixing.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dvlab/rng.hpp"

namespace dvlab {

/// A state: finite coordinates tagged with the space they belong to.
struct Point {
  std::vector<double> coords;
  std::string space;

  bool operator==(const Point&) const = default;
};

/// Builds a point, rejecting non-finite coordinates.
Point make_point(std::vector<double> coords, std::string space);

using Metric = std::function<double(std::span<const double>, std::span<const double>)>;

struct MetricSpace {
  std::string tag;
  Metric metric;
  /// Diameter of the (compact avatar of the) space; infinity when unknown.
  double diameter = 0.0;

  /// d(a, b); throws InvalidArgument if either point lives elsewhere.
  double distance(const Point& a, const Point& b) const;
};

MetricSpace euclidean_space(std::string tag, double diameter);

using NoiseSample = std::vector<double>;
using StepFunction =
    std::function<std::vector<double>(std::span<const double> state, std::span<const double> noise)>;

struct RdsMap {
  MetricSpace space;
  StepFunction step;
  /// Uniform Lipschitz constant of step in its first argument.
  double lip_bound = 0.0;

  Point apply(const Point& x, std::span<const double> noise) const;
};

struct NoiseSource {
  std::string support;
  std::function<NoiseSample(Rng&)> sample;
};

struct RandomSystem {
  RdsMap map;
  NoiseSource noise;
};

/// x_1..x_n with zeta drawn from the (seed, 0) stream. Throws SimulationError
/// carrying the step index when a non-finite state appears.
std::vector<Point> simulate_trajectory(const RdsMap& map, const NoiseSource& noise, const Point& x0,
                                       long n, std::uint64_t seed);

/// Same, drawing noise from a caller-owned stream.
std::vector<Point> simulate_trajectory(const RdsMap& map, const NoiseSource& noise, const Point& x0,
                                       long n, Rng& rng);

struct Atom {
  std::vector<double> coords;
  double weight = 0.0;
};

/// Finite atomic measure. Atoms with equal coordinates are coalesced.
class EmpiricalMeasure {
 public:
  EmpiricalMeasure() = default;
  EmpiricalMeasure(std::string space, std::vector<Atom> atoms);

  const std::string& space() const { return space_; }
  const std::vector<Atom>& atoms() const { return atoms_; }
  double total_weight() const { return total_weight_; }

  /// <f, m> as a finite sum.
  double integrate(const std::function<double(const Point&)>& f) const;

  /// Weight of the atom at `coords`, 0 if absent.
  double mass_at(std::span<const double> coords) const;

 private:
  std::string space_;
  std::vector<Atom> atoms_;
  double total_weight_ = 0.0;
};

/// L_n = (1/n) sum delta_{x_k}.
EmpiricalMeasure empirical_distribution(std::span<const Point> trajectory);

using StateFunction = std::function<double(const Point&)>;

struct DictionaryEntry {
  std::string name;
  StateFunction f;
  /// ||f||_L = sup|f| + Lip(f), or an upper bound on it.
  double lip_norm = 1.0;
};

struct ObservableDictionary {
  std::vector<DictionaryEntry> entries;
};

/// max over the dictionary of |<f,m1> - <f,m2>| / ||f||_L. A lower bound on
/// the dual-Lipschitz distance.
double dual_lipschitz_distance(const EmpiricalMeasure& m1, const EmpiricalMeasure& m2,
                               const ObservableDictionary& dict);

/// Largest ratio (|f(x)-f(y)|/d(x,y) + max(|f(x)|,|f(y)|)) / lip_norm over
/// the supplied states and every entry; <= 1 means no observed violation.
double audit_dictionary(const ObservableDictionary& dict, const MetricSpace& space,
                        std::span<const Point> states);

struct IrreducibilityReport {
  /// hit[i][j]: fraction of trials with x_N in B(y_j, eps) starting from x_i.
  std::vector<std::vector<double>> hit;
  double min_hit = 0.0;
  long trials = 0;
};

IrreducibilityReport irreducibility_probe(const RandomSystem& system, std::span<const Point> x_list,
                                          std::span<const Point> y_list, double eps, long steps,
                                          long trials, std::uint64_t seed);

struct LipschitzAudit {
  double max_quotient = 0.0;
  long violations = 0;
  long checked = 0;
};

/// Samples d(S(x,z),S(x',z)) / d(x,x') over the given pairs and `draws` shared
/// noise samples; a violation exceeds lip_bound by more than 1e-9 relative.
LipschitzAudit audit_map_lipschitz(const RandomSystem& system,
                                   std::span<const std::pair<Point, Point>> pairs, long draws,
                                   std::uint64_t seed);

}  // namespace dvlab
