#include "tailchain/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "tailchain/errors.hpp"
#include "tailchain/parallel.hpp"

namespace tailchain {

std::string two_sample_to_json(const TwoSampleResult& r) {
  nlohmann::json j;
  j["test"] = r.test;
  j["statistic"] = r.statistic;
  j["p_value"] = r.p_value;
  j["n1"] = r.n1;
  j["n2"] = r.n2;
  j["seed"] = r.seed;
  return j.dump();
}

namespace {

void check_energy_inputs(std::span<const double> x, std::size_t n1,
                         std::span<const double> y, std::size_t n2, int d) {
  if (d < 1) throw DimensionMismatch("sample dimension must be at least 1");
  if (n1 == 0 || n2 == 0) throw DegenerateSample("energy distance needs nonempty samples");
  if (x.size() != n1 * static_cast<std::size_t>(d) || y.size() != n2 * static_cast<std::size_t>(d))
    throw DimensionMismatch("sample buffer size does not match n * d");
}

// Mean over the n^2 ordered within-sample pairs (diagonal terms are zero).
double within_mean_serial(std::span<const double> x, std::size_t n, int d) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      acc += dist2(x.subspan(i * d, d), x.subspan(j * d, d));
  return 2.0 * acc / (static_cast<double>(n) * static_cast<double>(n));
}

double cross_mean_serial(std::span<const double> x, std::size_t n1,
                         std::span<const double> y, std::size_t n2, int d) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n1; ++i)
    for (std::size_t j = 0; j < n2; ++j)
      acc += dist2(x.subspan(i * d, d), y.subspan(j * d, d));
  return acc / (static_cast<double>(n1) * static_cast<double>(n2));
}

constexpr std::int64_t kRowBlock = 128;

// Blocked sums with a fixed decomposition: partial sums per row block are
// combined in block order, so the value does not depend on the thread count.
double within_mean_blocked(std::span<const double> x, std::size_t n, int d) {
  const std::int64_t nblocks = (static_cast<std::int64_t>(n) + kRowBlock - 1) / kRowBlock;
  std::vector<double> partial(nblocks, 0.0);
  parallel_for(nblocks, [&](std::int64_t b) {
    const std::size_t lo = static_cast<std::size_t>(b) * kRowBlock;
    const std::size_t hi = std::min(n, lo + kRowBlock);
    double acc = 0.0;
    for (std::size_t i = lo; i < hi; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        acc += dist2(x.subspan(i * d, d), x.subspan(j * d, d));
    partial[b] = acc;
  });
  double acc = 0.0;
  for (double v : partial) acc += v;
  return 2.0 * acc / (static_cast<double>(n) * static_cast<double>(n));
}

double cross_mean_blocked(std::span<const double> x, std::size_t n1,
                          std::span<const double> y, std::size_t n2, int d) {
  const std::int64_t nblocks = (static_cast<std::int64_t>(n1) + kRowBlock - 1) / kRowBlock;
  std::vector<double> partial(nblocks, 0.0);
  parallel_for(nblocks, [&](std::int64_t b) {
    const std::size_t lo = static_cast<std::size_t>(b) * kRowBlock;
    const std::size_t hi = std::min(n1, lo + kRowBlock);
    double acc = 0.0;
    for (std::size_t i = lo; i < hi; ++i)
      for (std::size_t j = 0; j < n2; ++j)
        acc += dist2(x.subspan(i * d, d), y.subspan(j * d, d));
    partial[b] = acc;
  });
  double acc = 0.0;
  for (double v : partial) acc += v;
  return acc / (static_cast<double>(n1) * static_cast<double>(n2));
}

// One pass over a label-sorted pool: cross and within pair sums in O(n).
struct OnePassSums {
  double cross = 0.0;    // sum over mixed-label pairs of |z_i - z_j|
  double within_a = 0.0; // sum over i < j, both label 0
  double within_b = 0.0;
};

OnePassSums sorted_pool_sums(std::span<const double> values, std::span<const unsigned char> labels) {
  OnePassSums s;
  double sum_a = 0.0, sum_b = 0.0;
  std::size_t cnt_a = 0, cnt_b = 0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    const double z = values[k];
    if (labels[k] == 0) {
      s.cross += z * static_cast<double>(cnt_b) - sum_b;
      s.within_a += z * static_cast<double>(cnt_a) - sum_a;
      ++cnt_a;
      sum_a += z;
    } else {
      s.cross += z * static_cast<double>(cnt_a) - sum_a;
      s.within_b += z * static_cast<double>(cnt_b) - sum_b;
      ++cnt_b;
      sum_b += z;
    }
  }
  return s;
}

double energy_from_sums(const OnePassSums& s, std::size_t n1, std::size_t n2) {
  const double dn1 = static_cast<double>(n1), dn2 = static_cast<double>(n2);
  return 2.0 * s.cross / (dn1 * dn2) - 2.0 * s.within_a / (dn1 * dn1) -
         2.0 * s.within_b / (dn2 * dn2);
}

void shuffle_labels(std::span<unsigned char> labels, RngStream& rng) {
  for (std::size_t i = labels.size() - 1; i > 0; --i) {
    const std::size_t j = rng.uniform_below(i + 1);
    std::swap(labels[i], labels[j]);
  }
}

}  // namespace

double energy_distance_serial(std::span<const double> x, std::size_t n1,
                              std::span<const double> y, std::size_t n2, int d) {
  check_energy_inputs(x, n1, y, n2, d);
  return 2.0 * cross_mean_serial(x, n1, y, n2, d) - within_mean_serial(x, n1, d) -
         within_mean_serial(y, n2, d);
}

double energy_distance_parallel(std::span<const double> x, std::size_t n1,
                                std::span<const double> y, std::size_t n2, int d) {
  check_energy_inputs(x, n1, y, n2, d);
  return 2.0 * cross_mean_blocked(x, n1, y, n2, d) - within_mean_blocked(x, n1, d) -
         within_mean_blocked(y, n2, d);
}

double energy_distance_1d(std::span<const double> x, std::span<const double> y) {
  check_energy_inputs(x, x.size(), y, y.size(), 1);
  const std::size_t n = x.size() + y.size();
  std::vector<std::pair<double, unsigned char>> pool;
  pool.reserve(n);
  for (double v : x) pool.emplace_back(v, 0);
  for (double v : y) pool.emplace_back(v, 1);
  std::sort(pool.begin(), pool.end());
  std::vector<double> values(n);
  std::vector<unsigned char> labels(n);
  for (std::size_t k = 0; k < n; ++k) {
    values[k] = pool[k].first;
    labels[k] = pool[k].second;
  }
  return energy_from_sums(sorted_pool_sums(values, labels), x.size(), y.size());
}

double energy_distance(std::span<const double> x, std::size_t n1,
                       std::span<const double> y, std::size_t n2, int d) {
  check_energy_inputs(x, n1, y, n2, d);
  if (d == 1) return energy_distance_1d(x, y);
  return energy_distance_parallel(x, n1, y, n2, d);
}

TwoSampleResult permutation_test(
    std::span<const double> x, std::size_t n1, std::span<const double> y, std::size_t n2, int d,
    const std::function<double(std::span<const double>, std::size_t,
                               std::span<const double>, std::size_t, int)>& statistic,
    int n_perm, RngStream& stream) {
  check_energy_inputs(x, n1, y, n2, d);
  if (n_perm < 100) throw DomainError("permutation test needs at least 100 permutations");

  const std::size_t n = n1 + n2;
  std::vector<double> pool(n * d);
  std::memcpy(pool.data(), x.data(), x.size() * sizeof(double));
  std::memcpy(pool.data() + x.size(), y.data(), y.size() * sizeof(double));

  const double observed = statistic(x, n1, y, n2, d);

  std::vector<double> perm_stats(n_perm);
  parallel_for(n_perm, [&](std::int64_t k) {
    RngStream rep = stream.child(static_cast<std::uint64_t>(k) + 1);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[rep.uniform_below(i + 1)]);
    std::vector<double> buf(n * d);
    for (std::size_t i = 0; i < n; ++i)
      std::memcpy(buf.data() + i * d, pool.data() + idx[i] * d, d * sizeof(double));
    perm_stats[k] = statistic(std::span<const double>(buf.data(), n1 * d), n1,
                              std::span<const double>(buf.data() + n1 * d, n2 * d), n2, d);
  });

  std::size_t ge = 0;
  for (double v : perm_stats)
    if (v >= observed) ++ge;

  TwoSampleResult r;
  r.test = "permutation";
  r.statistic = observed;
  r.p_value = static_cast<double>(1 + ge) / static_cast<double>(n_perm + 1);
  r.n1 = n1;
  r.n2 = n2;
  r.seed = stream.seed();
  return r;
}

TwoSampleResult energy_permutation_test(std::span<const double> x, std::size_t n1,
                                        std::span<const double> y, std::size_t n2, int d,
                                        int n_perm, RngStream& stream, std::size_t max_points,
                                        double level, double* crit_out) {
  check_energy_inputs(x, n1, y, n2, d);
  if (n_perm < 100) throw DomainError("permutation test needs at least 100 permutations");

  std::vector<double> perm_stats(n_perm);
  double observed;
  std::size_t m1 = n1, m2 = n2;

  if (d == 1) {
    // Exact full-sample path: sort the pool once, each replicate is one O(n) pass.
    const std::size_t n = n1 + n2;
    std::vector<std::pair<double, unsigned char>> pool;
    pool.reserve(n);
    for (std::size_t i = 0; i < n1; ++i) pool.emplace_back(x[i], 0);
    for (std::size_t j = 0; j < n2; ++j) pool.emplace_back(y[j], 1);
    std::sort(pool.begin(), pool.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<double> values(n);
    std::vector<unsigned char> base_labels(n);
    for (std::size_t k = 0; k < n; ++k) {
      values[k] = pool[k].first;
      base_labels[k] = pool[k].second;
    }
    observed = energy_from_sums(sorted_pool_sums(values, base_labels), n1, n2);

    parallel_for(n_perm, [&](std::int64_t k) {
      RngStream rep = stream.child(static_cast<std::uint64_t>(k) + 1);
      std::vector<unsigned char> labels = base_labels;
      shuffle_labels(labels, rep);
      perm_stats[k] = energy_from_sums(sorted_pool_sums(values, labels), n1, n2);
    });
  } else {
    // Deterministic subsample, then a pooled distance matrix shared by all replicates.
    auto subsample = [&](std::span<const double> src, std::size_t n, std::uint64_t child,
                         std::size_t m) {
      std::vector<double> out;
      if (n <= m) {
        out.assign(src.begin(), src.end());
        return std::pair<std::vector<double>, std::size_t>{std::move(out), n};
      }
      RngStream pick = stream.child(child);
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      for (std::size_t i = 0; i < m; ++i)
        std::swap(idx[i], idx[i + pick.uniform_below(n - i)]);
      out.resize(m * d);
      for (std::size_t i = 0; i < m; ++i)
        std::memcpy(out.data() + i * d, src.data() + idx[i] * d, d * sizeof(double));
      return std::pair<std::vector<double>, std::size_t>{std::move(out), m};
    };
    auto [xs, mm1] = subsample(x, n1, 0xA, max_points);
    auto [ys, mm2] = subsample(y, n2, 0xB, max_points);
    m1 = mm1;
    m2 = mm2;

    const std::size_t n = m1 + m2;
    std::vector<double> pool(n * d);
    std::memcpy(pool.data(), xs.data(), xs.size() * sizeof(double));
    std::memcpy(pool.data() + xs.size(), ys.data(), ys.size() * sizeof(double));

    std::vector<float> dist(n * n);
    parallel_for(static_cast<std::int64_t>(n), [&](std::int64_t i) {
      for (std::size_t j = 0; j < n; ++j)
        dist[i * n + j] = static_cast<float>(dist2(
            std::span<const double>(pool.data() + i * d, d),
            std::span<const double>(pool.data() + j * d, d)));
    });

    auto stat_for_labels = [&](const std::vector<unsigned char>& labels) {
      double aa = 0.0, ab = 0.0, bb = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const float* row = dist.data() + i * n;
        const int li = labels[i];
        double acc[3] = {0.0, 0.0, 0.0};
        for (std::size_t j = i + 1; j < n; ++j) acc[li + labels[j]] += row[j];
        aa += acc[0];
        ab += acc[1];
        bb += acc[2];
      }
      const double dm1 = static_cast<double>(m1), dm2 = static_cast<double>(m2);
      return 2.0 * ab / (dm1 * dm2) - 2.0 * aa / (dm1 * dm1) - 2.0 * bb / (dm2 * dm2);
    };

    std::vector<unsigned char> base_labels(n, 0);
    std::fill(base_labels.begin() + m1, base_labels.end(), 1);
    observed = stat_for_labels(base_labels);

    parallel_for(n_perm, [&](std::int64_t k) {
      RngStream rep = stream.child(static_cast<std::uint64_t>(k) + 1);
      std::vector<unsigned char> labels = base_labels;
      shuffle_labels(labels, rep);
      perm_stats[k] = stat_for_labels(labels);
    });
  }

  std::size_t ge = 0;
  for (double v : perm_stats)
    if (v >= observed) ++ge;

  if (crit_out) {
    std::vector<double> sorted = perm_stats;
    std::sort(sorted.begin(), sorted.end());
    *crit_out = empirical_quantile(sorted, 1.0 - level);
  }

  TwoSampleResult r;
  r.test = "energy_permutation";
  r.statistic = observed;
  r.p_value = static_cast<double>(1 + ge) / static_cast<double>(n_perm + 1);
  r.n1 = m1;
  r.n2 = m2;
  r.seed = stream.seed();
  return r;
}

BootstrapCi block_bootstrap_ci(
    std::span<const double> rows, std::size_t n, int row_width,
    const std::function<double(std::span<const double>, std::size_t)>& statistic,
    std::size_t block_len, int n_boot, double level, RngStream& stream) {
  if (row_width < 1) throw DimensionMismatch("row width must be at least 1");
  if (rows.size() != n * static_cast<std::size_t>(row_width))
    throw DimensionMismatch("row buffer size does not match n * row_width");
  if (block_len < 1 || block_len > n) throw DomainError("block length must be in [1, n]");
  if (n / block_len < 5) throw TooFewWindows("bootstrap needs at least five complete blocks");
  if (n_boot < 200) throw DomainError("bootstrap needs at least 200 replicates");
  if (!(level > 0.0 && level < 1.0)) throw DomainError("CI level must be in (0, 1)");

  const std::size_t n_starts = n - block_len + 1;
  const std::size_t n_blocks = (n + block_len - 1) / block_len;

  std::vector<double> boot(n_boot);
  parallel_for(n_boot, [&](std::int64_t k) {
    RngStream rep = stream.child(static_cast<std::uint64_t>(k));
    std::vector<double> buf(n * row_width);
    std::size_t filled = 0;
    for (std::size_t b = 0; b < n_blocks && filled < n; ++b) {
      const std::size_t start = rep.uniform_below(n_starts);
      const std::size_t take = std::min(block_len, n - filled);
      std::memcpy(buf.data() + filled * row_width, rows.data() + start * row_width,
                  take * row_width * sizeof(double));
      filled += take;
    }
    boot[k] = statistic(buf, n);
  });

  std::sort(boot.begin(), boot.end());
  BootstrapCi ci;
  ci.lo = empirical_quantile(boot, (1.0 - level) / 2.0);
  ci.hi = empirical_quantile(boot, 1.0 - (1.0 - level) / 2.0);
  return ci;
}

namespace {

// Kolmogorov asymptotic survival function.
double kolmogorov_q(double lambda) {
  if (lambda < 1e-8) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1 ? term : -term);
    if (term < 1e-16) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

double ks_p_value(double d_stat, double n_eff) {
  const double sn = std::sqrt(n_eff);
  return kolmogorov_q((sn + 0.12 + 0.11 / sn) * d_stat);
}

}  // namespace

KsResult ks_test_one_sample(std::vector<double> sample,
                            const std::function<double(double)>& cdf) {
  if (sample.empty()) throw DegenerateSample("KS test needs a nonempty sample");
  std::sort(sample.begin(), sample.end());
  const std::size_t n = sample.size();
  double d_stat = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double f = cdf(sample[i]);
    d_stat = std::max(d_stat, f - static_cast<double>(i) / n);
    d_stat = std::max(d_stat, static_cast<double>(i + 1) / n - f);
  }
  return KsResult{d_stat, ks_p_value(d_stat, static_cast<double>(n))};
}

KsResult ks_test_two_sample(std::vector<double> x, std::vector<double> y) {
  if (x.empty() || y.empty()) throw DegenerateSample("KS test needs nonempty samples");
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double n1 = static_cast<double>(x.size()), n2 = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double d_stat = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] <= v) ++i;
    while (j < y.size() && y[j] <= v) ++j;
    d_stat = std::max(d_stat, std::abs(static_cast<double>(i) / n1 - static_cast<double>(j) / n2));
  }
  return KsResult{d_stat, ks_p_value(d_stat, n1 * n2 / (n1 + n2))};
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("normal quantile needs p in (0, 1)");
  // Acklam's rational approximation.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double dd[] = {7.784695709041462e-03, 3.224671290700398e-01,
                              2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1.0 - plow;
  double q, r;
  if (p < plow) {
    q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0);
  }
  if (p > phigh) {
    q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0);
  }
  q = p - 0.5;
  r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

MeanCi mean_ci(std::span<const double> values, double level) {
  if (values.size() < 2) throw DegenerateSample("mean CI needs at least two values");
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  const double z = normal_quantile(0.5 + level / 2.0);
  return MeanCi{mean, z * sd / std::sqrt(n)};
}

bool binomial_ci_contains(double p0, std::uint64_t count, std::uint64_t n, double level) {
  if (n == 0) throw DegenerateSample("binomial check needs n > 0");
  if (!(p0 >= 0.0 && p0 <= 1.0)) throw DomainError("target probability outside [0, 1]");
  const double z = normal_quantile(0.5 + level / 2.0);
  const double phat = static_cast<double>(count) / static_cast<double>(n);
  const double half = z * std::sqrt(p0 * (1.0 - p0) / static_cast<double>(n));
  return std::abs(phat - p0) <= half;
}

double empirical_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw DegenerateSample("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw DomainError("quantile level outside [0, 1]");
  const double h = q * static_cast<double>(sorted.size() - 1);
  const std::size_t i = static_cast<std::size_t>(h);
  if (i + 1 >= sorted.size()) return sorted.back();
  const double frac = h - static_cast<double>(i);
  return sorted[i] + frac * (sorted[i + 1] - sorted[i]);
}

std::vector<std::size_t> multinomial_resample(std::span<const double> weights, std::size_t k,
                                              RngStream& rng) {
  if (weights.empty()) throw DegenerateSample("resampling from an empty weight vector");
  std::vector<double> cdf(weights.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] < 0.0 || !std::isfinite(weights[i]))
      throw BadWeights("resampling weights must be finite and nonnegative");
    acc += weights[i];
    cdf[i] = acc;
  }
  if (acc <= 0.0) throw BadWeights("resampling weights sum to zero");
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double u = rng.uniform() * acc;
    out[i] = std::min<std::size_t>(
        std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin(), weights.size() - 1);
  }
  return out;
}

}  // namespace tailchain
