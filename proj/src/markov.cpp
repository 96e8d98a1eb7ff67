#include "tailchain/markov.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "tailchain/diagnostics.hpp"
#include "tailchain/errors.hpp"
#include "tailchain/parallel.hpp"

namespace tailchain {

namespace {

void require_model(const ModelSpec& model) {
  if (model.d < 1) throw DomainError("model dimension must be positive");
  if (!model.draw_noise || !model.transition || !model.init)
    throw DomainError("model is missing a noise sampler, transition, or initializer");
}

Vec step(const ModelSpec& model, const Vec& x, RngStream& stream) {
  const Vec e = model.draw_noise(stream);
  Vec next = model.transition(x, e);
  if (static_cast<int>(next.size()) != model.d)
    throw DimensionMismatch("transition returned a vector of the wrong dimension");
  if (!all_finite(next) || norm2(next) > model.overflow_cap)
    throw NumericOverflow("state norm exceeded the overflow cap of " +
                          std::to_string(model.overflow_cap));
  return next;
}

}  // namespace

Trajectory simulate_with(const ModelSpec& model, long n, long burn_in, RngStream& stream) {
  require_model(model);
  if (n < 1) throw DomainError("trajectory length must be at least 1");
  if (burn_in < 0) throw DomainError("burn-in cannot be negative");

  Vec x = model.init(stream);
  if (static_cast<int>(x.size()) != model.d)
    throw DimensionMismatch("initializer returned a vector of the wrong dimension");
  for (long b = 0; b < burn_in; ++b) x = step(model, x, stream);

  Trajectory traj;
  traj.d = model.d;
  traj.n = n;
  traj.data.reserve(static_cast<std::size_t>(n) * model.d);
  for (long i = 0; i < n; ++i) {
    x = step(model, x, stream);
    traj.data.insert(traj.data.end(), x.begin(), x.end());
  }
  return traj;
}

Trajectory simulate(const ModelSpec& model, long n, long burn_in, std::uint64_t seed) {
  RngStream stream(seed);
  return simulate_with(model, n, burn_in, stream);
}

std::vector<double> trajectory_norms(const Trajectory& traj) {
  std::vector<double> norms(static_cast<std::size_t>(traj.n));
  parallel_for(static_cast<std::size_t>(traj.n),
               [&](std::size_t i) { norms[i] = traj.row_norm(static_cast<long>(i)); });
  return norms;
}

double threshold_at_percentile(std::vector<double> norms, double percentile) {
  if (norms.empty()) throw DegenerateSample("cannot take a quantile of an empty sample");
  if (percentile <= 0.0 || percentile >= 100.0)
    throw DomainError("percentile must lie strictly between 0 and 100");
  std::sort(norms.begin(), norms.end());
  return empirical_quantile(norms, percentile / 100.0);
}

std::vector<ExtremeWindow> extract_windows(const Trajectory& traj, double x, int s, int t) {
  if (x <= 0.0) throw DomainError("threshold must be positive");
  if (s < 0 || t < 0) throw DomainError("window arms cannot be negative");
  if (static_cast<long>(s) + t >= traj.n)
    throw DomainError("window span must be shorter than the trajectory");

  std::vector<long> centers;
  for (long j = 0; j < traj.n; ++j) {
    if (traj.row_norm(j) > x && j - s >= 0 && j + t < traj.n) centers.push_back(j);
  }
  if (centers.empty()) throw NoExceedances("no state norm exceeds the threshold");

  const int d = traj.d;
  const int rows = s + t + 1;
  std::vector<ExtremeWindow> windows(centers.size());
  parallel_for(centers.size(), [&](std::size_t k) {
    const long j = centers[k];
    const double r = traj.row_norm(j);
    ExtremeWindow w;
    w.y = r / x;
    w.s = s;
    w.t = t;
    w.d = d;
    w.normalized.resize(static_cast<std::size_t>(rows) * d);
    for (int b = 0; b < rows; ++b) {
      const auto src = traj.row(j - s + b);
      for (int c = 0; c < d; ++c) w.normalized[static_cast<std::size_t>(b) * d + c] = src[c] / r;
    }
    windows[k] = std::move(w);
  });
  return windows;
}

std::vector<double> phi_limit_probe(const ModelSpec& model, const UnitVector& s,
                                    std::span<const double> e, std::span<const double> radii) {
  require_model(model);
  if (!model.tail_map) throw DomainError("model has no tail map to probe");
  if (s.dim() != model.d) throw DimensionMismatch("probe angle has the wrong dimension");
  for (std::size_t i = 0; i < radii.size(); ++i) {
    if (radii[i] <= 0.0) throw DomainError("probe radii must be positive");
    if (i > 0 && radii[i] <= radii[i - 1]) throw DomainError("probe radii must be increasing");
  }

  const Vec limit = model.tail_map(s.coords(), e);
  if (static_cast<int>(limit.size()) != model.d)
    throw DimensionMismatch("tail map returned a vector of the wrong dimension");

  std::vector<double> gaps(radii.size());
  for (std::size_t i = 0; i < radii.size(); ++i) {
    const double x = radii[i];
    const Vec big = model.transition(scaled(s.coords(), x), e);
    double sq = 0.0;
    for (int c = 0; c < model.d; ++c) {
      const double diff = big[c] / x - limit[c];
      sq += diff * diff;
    }
    gaps[i] = std::sqrt(sq);
  }
  return gaps;
}

SupGrowthProbe sup_growth_probe(const ModelSpec& model, std::span<const double> e,
                                double x_small, double x_large) {
  require_model(model);
  if (x_small <= 0.0 || x_large <= x_small)
    throw DomainError("probe radii must be positive and increasing");

  // Deterministic direction lattice: exact poles in d = 1, equally spaced
  // angles in d = 2, fixed pseudo-random directions above.
  std::vector<Vec> dirs;
  if (model.d == 1) {
    dirs = {{1.0}, {-1.0}};
  } else if (model.d == 2) {
    for (int a = 0; a < 16; ++a) {
      const double phi = 2.0 * M_PI * a / 16.0;
      dirs.push_back({std::cos(phi), std::sin(phi)});
    }
  } else {
    RngStream fixed(0x5EEDu);
    for (int a = 0; a < 32; ++a) dirs.push_back(sample_uniform_sphere(model.d, fixed));
  }

  const auto lattice_max = [&](double x) {
    double worst = 0.0;
    for (const Vec& u : dirs) {
      for (int j = 1; j <= 8; ++j) {
        const Vec y = scaled(u, x * j / 8.0);
        worst = std::max(worst, norm2(model.transition(y, e)));
      }
    }
    return worst;
  };

  SupGrowthProbe probe;
  probe.radius_small = x_small;
  probe.radius_large = x_large;
  probe.max_small = lattice_max(x_small);
  probe.max_large = lattice_max(x_large);
  const double floor = std::max(probe.max_small, 1e-300);
  probe.linear_growth = probe.max_large / floor <= 4.0 * (x_large / x_small);
  return probe;
}

double hill_alpha(std::vector<double> norms, std::size_t k) {
  if (k < 2) throw DomainError("hill estimator needs at least k = 2");
  if (k >= norms.size()) throw DomainError("top-order count must be below the sample size");

  std::nth_element(norms.begin(), norms.begin() + k, norms.end(), std::greater<>());
  std::sort(norms.begin(), norms.begin() + k + 1, std::greater<>());
  const double pivot = norms[k];
  if (!(pivot > 0.0)) throw DegenerateSample("top order statistics must be strictly positive");

  std::size_t distinct = 1;
  for (std::size_t i = 1; i <= k; ++i) {
    if (norms[i] != norms[i - 1]) ++distinct;
  }
  if (2 * distinct < k + 1)
    throw DegenerateSample("more than half of the top order statistics are tied");

  double mean_gap = 0.0;
  const double log_pivot = std::log(pivot);
  for (std::size_t i = 0; i < k; ++i) mean_gap += std::log(norms[i]) - log_pivot;
  mean_gap /= static_cast<double>(k);
  if (!(mean_gap > 0.0)) throw DegenerateSample("log-spacings of the top order statistics vanish");
  return 1.0 / mean_gap;
}

StationarityReport stationarity_diagnostic(const Trajectory& traj) {
  if (traj.n < 4) throw DegenerateSample("trajectory too short for a half-split diagnostic");
  std::vector<double> norms = trajectory_norms(traj);
  const std::size_t half = norms.size() / 2;
  std::vector<double> first(norms.begin(), norms.begin() + half);
  std::vector<double> second(norms.begin() + half, norms.end());
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());

  StationarityReport report;
  report.levels = {0.5, 0.9, 0.99};
  for (const double q : report.levels) {
    const double a = empirical_quantile(first, q);
    const double b = empirical_quantile(second, q);
    report.first_half.push_back(a);
    report.second_half.push_back(b);
    const double scale = std::max({std::fabs(a), std::fabs(b), 1e-300});
    report.max_rel_gap = std::max(report.max_rel_gap, std::fabs(a - b) / scale);
  }
  return report;
}

}  // namespace tailchain
