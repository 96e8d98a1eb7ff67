#pragma once

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tailchain/rng.hpp"
#include "tailchain/vecmath.hpp"

namespace tailchain {

// Tail index alpha > 0.
class TailIndex {
 public:
  explicit TailIndex(double a);
  double value() const { return a_; }

 private:
  double a_;
};

// Point on the unit sphere S^{d-1}; construction normalizes and rejects
// vectors whose norm is zero or not within 1e-6 of 1 before normalization.
class UnitVector {
 public:
  static UnitVector of(Vec coords);           // requires ||coords|| ~ 1
  static UnitVector normalized(Vec coords);   // normalizes any nonzero vector
  const Vec& coords() const { return c_; }
  int dim() const { return static_cast<int>(c_.size()); }

 private:
  explicit UnitVector(Vec c) : c_(std::move(c)) {}
  Vec c_;
};

// Polar decomposition x = r * theta with r > 0.
std::pair<UnitVector, double> polar(std::span<const double> x);

// Inverse-CDF Pareto sample: u in (0, 1] -> u^(-1/alpha).
double sample_pareto(const TailIndex& alpha, double u);

// One atom of a discrete measure on S^{d-1} x R^d. m may be the zero vector.
struct Atom {
  Vec s;     // unit sphere coordinate
  Vec m;     // second coordinate, any vector including 0
  double w;  // nonnegative weight
};

// Discrete probability measure on S^{d-1} x R^d. Canonical form: atoms merged
// by coordinate equality after rounding to 12 decimal digits, sorted
// lexicographically by (s, m), tiny weights dropped, weights summing to
// exactly 1. All measure-level ops require canonical inputs.
struct AtomMeasure {
  int d = 0;
  std::vector<Atom> atoms;
};

// Round one coordinate to the 12-decimal-digit merge grid.
double round12(double x);

// Validates weights/dimensions, merges duplicates, sorts, renormalizes.
// Order-independent: the same atom multiset in any order yields identical bytes.
AtomMeasure canonicalize(const AtomMeasure& raw);

bool is_canonical(const AtomMeasure& p);

// Componentwise comparison of canonical measures: same atom count, coordinates
// and weights within tol position by position.
bool measures_close(const AtomMeasure& a, const AtomMeasure& b, double tol);

// Tolerant comparison: atoms matched by rounded key, then by nearest coordinates
// within tol; matched weights must agree within tol and unmatched atoms must
// weigh at most tol. Robust to atoms split across a rounding boundary.
bool measures_equivalent(const AtomMeasure& a, const AtomMeasure& b, double tol);

// JSON round-trip, schema {"d": int, "atoms": [{"s": [..], "m": [..], "w": x}]}.
// Loading canonicalizes; serialization emits shortest round-trip doubles.
AtomMeasure measure_from_json(const std::string& text);
std::string measure_to_json(const AtomMeasure& p);

// Distribution of angles on S^{d-1}: atomic, uniform, or a density w.r.t. the
// uniform probability measure on the sphere (sampled by rejection).
class SpectralMeasure {
 public:
  enum class Kind { Atomic, Uniform, Density };

  static SpectralMeasure atomic(int d, std::vector<std::pair<Vec, double>> atoms);
  static SpectralMeasure uniform(int d);
  static SpectralMeasure density(int d, std::function<double(std::span<const double>)> g,
                                 double sup_g);

  Kind kind() const { return kind_; }
  int dim() const { return d_; }
  bool is_atomic() const { return kind_ == Kind::Atomic; }
  const std::vector<std::pair<Vec, double>>& atoms() const;

  // Probability mass at a sphere point (atomic only; rounded-key lookup).
  double mass_at(std::span<const double> s) const;

  // Density w.r.t. the uniform probability measure (uniform/density kinds).
  double density_at(std::span<const double> s) const;

  Vec sample(RngStream& rng) const;

 private:
  SpectralMeasure() = default;
  Kind kind_ = Kind::Uniform;
  int d_ = 0;
  std::vector<std::pair<Vec, double>> atoms_;
  std::vector<double> cdf_;  // atomic sampling table
  std::function<double(std::span<const double>)> g_;
  double sup_g_ = 1.0;
};

// Uniform point on S^{d-1}.
Vec sample_uniform_sphere(int d, RngStream& rng);

}  // namespace tailchain
