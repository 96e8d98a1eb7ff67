#pragma once

#include <functional>
#include <span>

#include "tailchain/measures.hpp"

namespace tailchain {

struct AdmissibilityReport {
  bool admissible = false;
  // min over candidate sphere singletons of (marginal mass - pushed alpha-mass);
  // admissible iff this is >= -tol.
  double worst_set_slack = 0.0;
  // integral of ||m||^alpha, always <= 1 for admissible measures.
  double alpha_moment = 0.0;
};

// Checks the defining inequality on the finite family of sphere singletons
// (sufficient for atomic measures: both sides are atomic in the sphere
// coordinate, and countable additivity reduces Borel sets to points).
// Requires canonical input. tol 1e-12 for exact inputs, 1e-9 for JSON inputs.
AdmissibilityReport is_admissible(const AtomMeasure& p, const TailIndex& alpha,
                                  double tol = 1e-12);

// The adjoint measure: each atom (s, m, w) with m != 0 maps to
// (m/||m||, s/||m||, w * ||m||^alpha); the per-point admissibility slack
// becomes the zero-atom mass at each sphere point. Output is canonical.
// Throws NotAdmissible if any slack is below -tol, NotCanonical on
// non-canonical input.
AtomMeasure adjoint(const AtomMeasure& p, const TailIndex& alpha, double tol = 1e-12);

// E[f(S*, M*)] under the adjoint without constructing it:
// sum of w * ||m||^alpha * f(m/||m||, s/||m||) over atoms with m != 0.
double adjoint_expectation(
    const std::function<double(std::span<const double>, std::span<const double>)>& f,
    const AtomMeasure& p, const TailIndex& alpha);

// A validated adjoint pair: equal sphere marginals, mutually adjoint, both
// admissible. check_pair throws (NotAdmissible / KernelMismatch) on violation.
struct AdjointPair {
  AtomMeasure p;
  AtomMeasure p_star;
  double alpha;
};

AdjointPair check_pair(const AtomMeasure& p, const AtomMeasure& p_star,
                       const TailIndex& alpha, double tol = 1e-10);

// Random admissible measure for property tests: draws a pool of sphere
// points, atoms whose m-directions stay inside the pool, then rescales all
// m-vectors by a common factor until the slack is strictly positive.
// Deterministic given the stream.
AtomMeasure random_admissible(int d, int max_atoms, const TailIndex& alpha, RngStream& rng);

}  // namespace tailchain
