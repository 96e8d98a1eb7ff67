#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tailchain/rng.hpp"
#include "tailchain/vecmath.hpp"

namespace tailchain {

// Result of a two-sample test, serializable as one JSON record.
struct TwoSampleResult {
  std::string test;
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t n1 = 0;
  std::size_t n2 = 0;
  std::uint64_t seed = 0;
};

std::string two_sample_to_json(const TwoSampleResult& r);

// Energy distance between samples given as row-major matrices (n x d):
//   2 E||X - Y|| - E||X - X'|| - E||Y - Y'||
// with within-sample means over all n^2 ordered pairs (the i = j terms are
// identically zero and skipped). Nonnegative; zero iff the empirical laws
// coincide. Serial reference, blocked OpenMP kernel, and an O(n log n)
// sorted-prefix path for d = 1; the dispatcher picks the fastest valid one.
double energy_distance_serial(std::span<const double> x, std::size_t n1,
                              std::span<const double> y, std::size_t n2, int d);
double energy_distance_parallel(std::span<const double> x, std::size_t n1,
                                std::span<const double> y, std::size_t n2, int d);
double energy_distance_1d(std::span<const double> x, std::span<const double> y);
double energy_distance(std::span<const double> x, std::size_t n1,
                       std::span<const double> y, std::size_t n2, int d);

// Two-sided permutation test for an arbitrary two-sample statistic; rows are
// pooled and relabeled n_perm times, p = (1 + #{perm >= observed}) / (n_perm + 1).
// Replicate k draws its randomness from stream.child(k + 1), so the result is
// independent of thread count.
TwoSampleResult permutation_test(
    std::span<const double> x, std::size_t n1, std::span<const double> y, std::size_t n2, int d,
    const std::function<double(std::span<const double>, std::size_t,
                               std::span<const double>, std::size_t, int)>& statistic,
    int n_perm, RngStream& stream);

// Permutation test specialized to the energy statistic. d = 1 runs the exact
// O(n) per-replicate sorted path on the full samples; d > 1 deterministically
// subsamples to max_points per side and precomputes the pooled distance
// matrix. Returns the critical value of the permutation distribution at
// `level` in crit_out when non-null.
TwoSampleResult energy_permutation_test(std::span<const double> x, std::size_t n1,
                                        std::span<const double> y, std::size_t n2, int d,
                                        int n_perm, RngStream& stream,
                                        std::size_t max_points = 2000, double level = 0.01,
                                        double* crit_out = nullptr);

// Percentile bootstrap CI from moving blocks of rows. Requires at least five
// complete blocks; replicate k uses stream.child(k).
struct BootstrapCi {
  double lo = 0.0;
  double hi = 0.0;
};

BootstrapCi block_bootstrap_ci(
    std::span<const double> rows, std::size_t n, int row_width,
    const std::function<double(std::span<const double>, std::size_t)>& statistic,
    std::size_t block_len, int n_boot, double level, RngStream& stream);

// Kolmogorov-Smirnov, d = 1 only.
struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

KsResult ks_test_one_sample(std::vector<double> sample,
                            const std::function<double(double)>& cdf);
KsResult ks_test_two_sample(std::vector<double> x, std::vector<double> y);

// Inverse standard normal CDF (Acklam), |error| < 1.2e-9.
double normal_quantile(double p);

// Normal-approximation CI half-width around a sample mean.
struct MeanCi {
  double mean = 0.0;
  double half = 0.0;
};
MeanCi mean_ci(std::span<const double> values, double level);

// Score-style binomial check: |count/n - p0| <= z * sqrt(p0 (1 - p0) / n).
bool binomial_ci_contains(double p0, std::uint64_t count, std::uint64_t n, double level);

// Type-7 empirical quantile of a sorted sample.
double empirical_quantile(std::span<const double> sorted, double q);

// k draws with replacement, probability proportional to weights; used to turn
// weighted samples into plain ones.
std::vector<std::size_t> multinomial_resample(std::span<const double> weights, std::size_t k,
                                              RngStream& rng);

}  // namespace tailchain
