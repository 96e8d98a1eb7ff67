#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tailchain/measures.hpp"
#include "tailchain/rng.hpp"
#include "tailchain/vecmath.hpp"

namespace tailchain {

// A Markov recursion X_t = Phi(X_{t-1}, e_t) together with its large-radius
// scaling limit phi(s, e) = lim x^{-1} Phi(x s, e) and the tail index of the
// stationary law. Noise values are flat vectors whose layout the model owns.
struct ModelSpec {
  int d = 1;
  double alpha = 1.0;
  std::string name;
  std::function<Vec(RngStream&)> draw_noise;
  std::function<Vec(std::span<const double>, std::span<const double>)> transition;  // Phi(x, e)
  std::function<Vec(std::span<const double>, std::span<const double>)> tail_map;    // phi(s, e)
  std::function<Vec(RngStream&)> init;
  long default_burn_in = 10000;
  // Author's declaration that sup over the ball ||y|| <= x of ||Phi(y, e)||
  // grows at most linearly in x; sanity-checked by sup_growth_probe.
  bool sup_linear_growth = true;
  double overflow_cap = 1e150;
};

// Row-major n x d matrix of consecutive states.
struct Trajectory {
  int d = 0;
  long n = 0;
  Vec data;

  std::span<const double> row(long i) const {
    return {data.data() + i * d, static_cast<std::size_t>(d)};
  }
  double row_norm(long i) const { return norm2(row(i)); }
};

// Trajectory slice around one exceedance of the threshold x, re-scaled by the
// norm of the exceeding state: rows X_{j-s}/||X_j|| .. X_{j+t}/||X_j||, with
// y = ||X_j||/x > 1 and a unit middle row.
struct ExtremeWindow {
  double y = 0.0;
  int s = 0;
  int t = 0;
  int d = 1;
  Vec normalized;  // (s + t + 1) rows of d entries

  std::span<const double> at(int j) const {  // j in [-s, t]
    return {normalized.data() + static_cast<std::size_t>(j + s) * d,
            static_cast<std::size_t>(d)};
  }
};

// Runs the recursion from model.init, discards burn_in steps, then emits the
// next n states. Throws NumericOverflow when a state norm passes the cap.
Trajectory simulate(const ModelSpec& model, long n, long burn_in, std::uint64_t seed);
Trajectory simulate_with(const ModelSpec& model, long n, long burn_in, RngStream& stream);

std::vector<double> trajectory_norms(const Trajectory& traj);

// Threshold at the given percentile (e.g. 99.9) of the norm sample.
double threshold_at_percentile(std::vector<double> norms, double percentile);

// All full windows centered at indices with ||X_j|| > x; overlapping windows
// are kept. Throws NoExceedances when no index qualifies.
std::vector<ExtremeWindow> extract_windows(const Trajectory& traj, double x, int s, int t);

// Gap ||Phi(x s, e)/x - phi(s, e)|| at each radius; decreasing gaps certify
// the model's tail map on the probed ray.
std::vector<double> phi_limit_probe(const ModelSpec& model, const UnitVector& s,
                                    std::span<const double> e, std::span<const double> radii);

// Lattice estimate of sup_{||y|| <= x} ||Phi(y, e)|| at two radii; the growth
// is accepted as linear when the max scales by at most 4x the radius ratio.
struct SupGrowthProbe {
  double radius_small = 0.0;
  double radius_large = 0.0;
  double max_small = 0.0;
  double max_large = 0.0;
  bool linear_growth = false;
};

SupGrowthProbe sup_growth_probe(const ModelSpec& model, std::span<const double> e,
                                double x_small, double x_large);

// Hill estimator: reciprocal of the mean log-spacing of the top k order
// statistics. Throws DegenerateSample on nonpositive top values or when more
// than half of the top k + 1 values are tied.
double hill_alpha(std::vector<double> norms, std::size_t k);

// First-half vs second-half norm quantiles; large relative gaps indicate the
// burn-in did not reach stationarity.
struct StationarityReport {
  std::vector<double> levels;
  std::vector<double> first_half;
  std::vector<double> second_half;
  double max_rel_gap = 0.0;
};

StationarityReport stationarity_diagnostic(const Trajectory& traj);

}  // namespace tailchain
