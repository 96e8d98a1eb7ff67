#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "tailchain/errors.hpp"
#include "tailchain/markov.hpp"
#include "tailchain/measures.hpp"
#include "tailchain/models.hpp"
#include "tailchain/rng.hpp"

using namespace tailchain;

namespace {

// Deterministic contraction toward 2: X_t = 0.5 X_{t-1} + 1 from X_0 = 4.
ModelSpec halving_model() {
  ModelSpec model;
  model.d = 1;
  model.alpha = 1.0;
  model.name = "halving";
  model.draw_noise = [](RngStream&) { return Vec{}; };
  model.transition = [](std::span<const double> x, std::span<const double>) {
    return Vec{0.5 * x[0] + 1.0};
  };
  model.tail_map = [](std::span<const double> s, std::span<const double>) {
    return Vec{0.5 * s[0]};
  };
  model.init = [](RngStream&) { return Vec{4.0}; };
  return model;
}

Ar1Spec coin_ar1() {
  return make_ar1(1, 1.0, {0.5},
                  SpectralMeasure::atomic(1, {{{1.0}, 0.5}, {{-1.0}, 0.5}}));
}

}  // namespace

TEST_CASE("simulation emits post-transition states and honours burn-in") {
  const ModelSpec model = halving_model();
  const Trajectory traj = simulate(model, 3, 0, 1);
  REQUIRE(traj.n == 3);
  REQUIRE(traj.d == 1);
  CHECK(traj.data == Vec{3.0, 2.5, 2.25});

  const Trajectory burned = simulate(model, 3, 1, 1);
  CHECK(burned.data == Vec{2.5, 2.25, 2.125});

  RngStream stream(1);
  const Trajectory with = simulate_with(model, 3, 1, stream);
  CHECK(with.data == burned.data);

  CHECK_THROWS_AS(simulate(model, 0, 0, 1), DomainError);
  CHECK_THROWS_AS(simulate(model, 3, -1, 1), DomainError);
}

TEST_CASE("states past the overflow cap stop the simulation") {
  ModelSpec model = halving_model();
  model.transition = [](std::span<const double> x, std::span<const double>) {
    return Vec{3.0 * x[0]};
  };
  model.init = [](RngStream&) { return Vec{1.0}; };
  model.overflow_cap = 1e6;
  CHECK_THROWS_AS(simulate(model, 100, 0, 1), NumericOverflow);

  ModelSpec bad = halving_model();
  bad.transition = [](std::span<const double>, std::span<const double>) {
    return Vec{1.0, 2.0};
  };
  CHECK_THROWS_AS(simulate(bad, 3, 0, 1), DimensionMismatch);
}

TEST_CASE("norms and percentile thresholds") {
  Trajectory traj;
  traj.d = 2;
  traj.n = 2;
  traj.data = {3.0, 4.0, 0.0, 0.0};
  CHECK(trajectory_norms(traj) == std::vector<double>{5.0, 0.0});

  std::vector<double> norms(100);
  std::iota(norms.begin(), norms.end(), 1.0);
  std::swap(norms[0], norms[63]);
  CHECK(threshold_at_percentile(norms, 99.0) == doctest::Approx(99.01));
  CHECK(threshold_at_percentile(norms, 50.0) == doctest::Approx(50.5));
  CHECK_THROWS_AS(threshold_at_percentile(norms, 0.0), DomainError);
  CHECK_THROWS_AS(threshold_at_percentile(norms, 100.0), DomainError);
  CHECK_THROWS_AS(threshold_at_percentile({}, 50.0), DegenerateSample);
}

TEST_CASE("windows are rescaled by the exceeding state and trimmed at the edges") {
  Trajectory traj;
  traj.d = 1;
  traj.n = 8;
  traj.data = {1.0, 10.0, 5.0, 0.5, 0.2, 8.0, 1.0, 1.0};

  const auto windows = extract_windows(traj, 4.0, 1, 1);
  REQUIRE(windows.size() == 3);

  CHECK(windows[0].y == doctest::Approx(2.5));
  CHECK(windows[0].at(-1)[0] == doctest::Approx(0.1));
  CHECK(windows[0].at(0)[0] == doctest::Approx(1.0));
  CHECK(windows[0].at(1)[0] == doctest::Approx(0.5));

  CHECK(windows[1].y == doctest::Approx(1.25));
  CHECK(windows[1].at(-1)[0] == doctest::Approx(2.0));
  CHECK(windows[1].at(1)[0] == doctest::Approx(0.1));

  CHECK(windows[2].y == doctest::Approx(2.0));
  CHECK(windows[2].at(-1)[0] == doctest::Approx(0.025));
  CHECK(windows[2].at(1)[0] == doctest::Approx(0.125));

  // A longer back arm trims the exceedance at index 1.
  CHECK(extract_windows(traj, 4.0, 2, 1).size() == 2);
  // A long forward arm trims the one at index 5.
  CHECK(extract_windows(traj, 4.0, 1, 3).size() == 2);

  CHECK_THROWS_AS(extract_windows(traj, 100.0, 1, 1), NoExceedances);
  CHECK_THROWS_AS(extract_windows(traj, -1.0, 1, 1), DomainError);
  CHECK_THROWS_AS(extract_windows(traj, 4.0, 4, 4), DomainError);
}

TEST_CASE("transition gaps to the tail map shrink along rays") {
  const ModelSpec model = ar1_model(coin_ar1());
  const Vec e = {2.0};
  const Vec radii = {10.0, 100.0, 1000.0};
  const auto gaps = phi_limit_probe(model, UnitVector::of({1.0}), e, radii);
  REQUIRE(gaps.size() == 3);
  CHECK(gaps[0] == doctest::Approx(0.2));
  CHECK(gaps[1] == doctest::Approx(0.02));
  CHECK(gaps[2] == doctest::Approx(0.002));

  const Vec bad_radii = {10.0, 10.0};
  CHECK_THROWS_AS(phi_limit_probe(model, UnitVector::of({1.0}), e, bad_radii), DomainError);
  CHECK_THROWS_AS(phi_limit_probe(model, UnitVector::of({0.6, 0.8}), e, radii),
                  DimensionMismatch);
}

TEST_CASE("lattice growth probe separates linear from quadratic maps") {
  const ModelSpec ar1 = ar1_model(coin_ar1());
  const Vec e = {2.0};
  const SupGrowthProbe ok = sup_growth_probe(ar1, e, 10.0, 100.0);
  CHECK(ok.linear_growth);
  CHECK(ok.max_small == doctest::Approx(7.0));
  CHECK(ok.max_large == doctest::Approx(52.0));

  ModelSpec quad = halving_model();
  quad.transition = [](std::span<const double> x, std::span<const double>) {
    return Vec{x[0] * x[0]};
  };
  const SupGrowthProbe bad = sup_growth_probe(quad, {}, 10.0, 100.0);
  CHECK_FALSE(bad.linear_growth);
  CHECK_THROWS_AS(sup_growth_probe(ar1, e, 100.0, 10.0), DomainError);
}

TEST_CASE("hill estimator recovers the index of an exact power-law grid") {
  const std::size_t n = 20000;
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    norms[i] = std::pow(u, -1.0 / 2.0);
  }
  CHECK(std::abs(hill_alpha(norms, 2000) - 2.0) < 0.1);

  for (std::size_t i = 0; i < n; ++i) {
    const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    norms[i] = std::pow(u, -1.0 / 0.8);
  }
  CHECK(std::abs(hill_alpha(norms, 2000) - 0.8) < 0.05);

  CHECK_THROWS_AS(hill_alpha(std::vector<double>(100, 1.0), 10), DegenerateSample);
  CHECK_THROWS_AS(hill_alpha({5.0, 4.0, 0.0, 0.0, 0.0}, 3), DegenerateSample);
  CHECK_THROWS_AS(hill_alpha({1.0, 2.0, 3.0}, 1), DomainError);
  CHECK_THROWS_AS(hill_alpha({1.0, 2.0, 3.0}, 3), DomainError);
}

TEST_CASE("half-split quantile gaps flag drifting trajectories") {
  Trajectory flat;
  flat.d = 1;
  flat.n = 100;
  flat.data.assign(100, 1.0);
  CHECK(stationarity_diagnostic(flat).max_rel_gap == doctest::Approx(0.0));

  Trajectory drift;
  drift.d = 1;
  drift.n = 100;
  drift.data.assign(50, 1.0);
  drift.data.insert(drift.data.end(), 50, 2.0);
  const StationarityReport rep = stationarity_diagnostic(drift);
  REQUIRE(rep.levels.size() == 3);
  CHECK(rep.max_rel_gap == doctest::Approx(0.5));
  CHECK(rep.first_half[0] == doctest::Approx(1.0));
  CHECK(rep.second_half[0] == doctest::Approx(2.0));

  Trajectory tiny;
  tiny.d = 1;
  tiny.n = 3;
  tiny.data = {1.0, 1.0, 1.0};
  CHECK_THROWS_AS(stationarity_diagnostic(tiny), DegenerateSample);
}

TEST_CASE("a simulated heavy-tailed chain reaches a stable tail") {
  const ModelSpec model = ar1_model(coin_ar1());
  const Trajectory traj = simulate(model, 200000, 2000, 99);
  const auto norms = trajectory_norms(traj);

  // The stationary tail index is the model's alpha.
  std::vector<double> copy = norms;
  const double a_hat = hill_alpha(std::move(copy), 400);
  CHECK(std::abs(a_hat - 1.0) < 0.2);

  // Halves of a stationary run agree in their bulk quantiles.
  const StationarityReport rep = stationarity_diagnostic(traj);
  CHECK(rep.max_rel_gap < 0.15);

  // Windows above a high percentile all carry a unit middle row and y > 1.
  const double thr = threshold_at_percentile(norms, 99.5);
  const auto windows = extract_windows(traj, thr, 2, 2);
  REQUIRE(windows.size() >= 500);
  for (std::size_t k = 0; k < windows.size(); k += 97) {
    CHECK(windows[k].y > 1.0);
    CHECK(std::abs(windows[k].at(0)[0]) <= 1.0);
  }
}
