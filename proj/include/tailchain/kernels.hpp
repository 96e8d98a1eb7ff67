#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tailchain/admissible.hpp"
#include "tailchain/measures.hpp"
#include "tailchain/rng.hpp"

namespace tailchain {

// Conditional law of the next tail-chain value given the current angle.
// Immutable after construction; samplers must be thread-safe to share.
class TailKernel {
 public:
  enum class Kind { AtomicConditional, ModelAnalytic };

  static TailKernel analytic(int d,
                             std::function<Vec(std::span<const double>, RngStream&)> sampler);

  Kind kind() const { return kind_; }
  int dim() const { return d_; }

  // Draw m given the current angle s (a unit vector).
  Vec sample(std::span<const double> s, RngStream& rng) const;

  // Atomic kernels expose their conditional table; throws UnknownAngle for
  // angles without mass and DomainError for analytic kernels.
  const std::vector<std::pair<Vec, double>>& conditional_at(std::span<const double> s) const;

  // Sphere angles carrying conditional mass (atomic only).
  std::vector<Vec> support() const;

 private:
  friend TailKernel kernel_from_atoms(const AtomMeasure& p);
  TailKernel() = default;
  Kind kind_ = Kind::ModelAnalytic;
  int d_ = 0;
  std::function<Vec(std::span<const double>, RngStream&)> sampler_;
  // angle key -> (representative angle, conditional atoms with cdf)
  struct Row {
    Vec angle;
    std::vector<std::pair<Vec, double>> atoms;
    std::vector<double> cdf;
  };
  const Row* find_row(std::span<const double> s) const;
  std::map<std::vector<double>, Row> table_;
};

// Conditional decomposition of an atomic joint law: given a sphere atom of P,
// draws m from the normalized conditional weights.
TailKernel kernel_from_atoms(const AtomMeasure& p);

// Window of tail-chain values M_{-s}, ..., M_t. values is row-major with
// row k holding M_{k-s}; M_0 is always a unit vector and 0 is absorbing in
// both time directions.
struct TailChainPath {
  int s = 0;
  int t = 0;
  int d = 0;
  std::vector<double> values;
  std::optional<int> absorbed_back;  // first backward time index (< 0) equal to 0
  std::optional<int> absorbed_fwd;   // first forward time index (> 0) equal to 0

  std::span<const double> at(int j) const;  // j in [-s, t]
};

// View over s+1+t consecutive d-blocks handed to test functionals.
class PathWindow {
 public:
  PathWindow(const double* data, int blocks, int d) : data_(data), blocks_(blocks), d_(d) {}
  int blocks() const { return blocks_; }
  int dim() const { return d_; }
  std::span<const double> block(int k) const {
    return std::span<const double>(data_ + static_cast<std::size_t>(k) * d_, d_);
  }
  bool block_is_zero(int k) const {
    for (double v : block(k))
      if (v != 0.0) return false;
    return true;
  }

 private:
  const double* data_;
  int blocks_;
  int d_;
};

// Bounded functional on (R^d)^{s+1+t} vanishing when the first block is 0.
// The wrapper multiplies by 1{block(0) != 0}, so the vanishing invariant holds
// by construction; values beyond the declared bound throw UnboundedFunctional.
class TestFunctional {
 public:
  TestFunctional(std::string name, double bound, std::function<double(const PathWindow&)> fn);
  double operator()(const PathWindow& w) const;
  const std::string& name() const { return name_; }
  double bound() const { return bound_; }

 private:
  std::string name_;
  double bound_;
  std::function<double(const PathWindow&)> fn_;
};

// Fixed battery used by the family-equality checks and the CLI: indicators and
// clipped norms of the window endpoints.
std::vector<TestFunctional> standard_functionals();

// Back-and-forth tail chain: initial angle law plus forward/backward kernels
// whose induced one-step joint laws are mutually adjoint. Construction runs
// the adjointness gate: exact comparison when everything is atomic, a
// statistical gate (zero-mass check plus energy-distance permutation test at
// level 0.001 on n = 10^4 draws) otherwise. Throws KernelMismatch.
class BftcSpec {
 public:
  static BftcSpec checked(const TailIndex& alpha, SpectralMeasure m0, TailKernel forward,
                          TailKernel backward, RngStream& gate_stream);

  double alpha() const { return alpha_; }
  int dim() const { return m0_.dim(); }
  const SpectralMeasure& m0_law() const { return m0_; }
  const TailKernel& forward() const { return fwd_; }
  const TailKernel& backward() const { return bwd_; }

  // Same spec with the time direction reversed.
  BftcSpec reversed() const;

 private:
  BftcSpec(double alpha, SpectralMeasure m0, TailKernel fwd, TailKernel bwd)
      : alpha_(alpha), m0_(std::move(m0)), fwd_(std::move(fwd)), bwd_(std::move(bwd)) {}
  double alpha_;
  SpectralMeasure m0_;
  TailKernel fwd_;
  TailKernel bwd_;
};

// Forward half-path M_0 = m0, M_j = phi(M_{j-1}, eps_j) via the homogeneous
// extension phi(v, e) = ||v|| phi(v/||v||, e), phi(0, e) = 0.
TailChainPath forward_chain(
    const UnitVector& m0,
    const std::function<Vec(std::span<const double>, const Vec&)>& phi,
    const std::function<Vec(RngStream&)>& noise, int t, RngStream& stream);

// One BFTC path: M_0 from the angle law, t forward steps, s backward steps,
// forward and backward extensions independent given M_0.
TailChainPath sample_bftc(const BftcSpec& spec, int s, int t, RngStream& stream);

struct GapEstimate {
  double estimate = 0.0;
  double ci_halfwidth = 0.0;  // normal approximation, level 0.99
};

// All s+1 members of the weighted-expectation family
//   E[f(M_{-s+i}/||M_i||, ..., M_{t+i}/||M_i||) ||M_i||^alpha 1{M_i != 0}]
// estimated on shared paths (backward s, forward t+s) with common random
// numbers: replicate r draws from stream.child(r) regardless of threading.
std::vector<GapEstimate> timechange_family(const TestFunctional& f, const BftcSpec& spec, int s,
                                           int t, long n, RngStream& stream);
std::vector<GapEstimate> timechange_family_serial(const TestFunctional& f, const BftcSpec& spec,
                                                  int s, int t, long n, RngStream& stream);

// The i-th family member alone.
GapEstimate timechange_gap(const TestFunctional& f, const BftcSpec& spec, int s, int t, int i,
                           long n, RngStream& stream);

// Batch of BFTC paths flattened to rows of (s+1+t)*d values (row-major,
// earliest time first); used by distributional comparisons.
std::vector<double> sample_bftc_rows(const BftcSpec& spec, int s, int t, long n,
                                     RngStream& stream);

}  // namespace tailchain
