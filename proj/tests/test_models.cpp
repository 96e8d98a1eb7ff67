#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "tailchain/diagnostics.hpp"
#include "tailchain/errors.hpp"
#include "tailchain/models.hpp"
#include "tailchain/rng.hpp"
#include "tailchain/vecmath.hpp"

using namespace tailchain;

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Simpson integral of f over [lo, hi].
double integrate(const std::function<double(double)>& f, double lo, double hi, int n = 20000) {
  const double h = (hi - lo) / n;
  double acc = f(lo) + f(hi);
  for (int i = 1; i < n; ++i) acc += f(lo + i * h) * (i % 2 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

SpectralMeasure coin() {
  return SpectralMeasure::atomic(1, {{{1.0}, 0.5}, {{-1.0}, 0.5}});
}

SpectralMeasure axes2() {
  return SpectralMeasure::atomic(2, {{{1.0, 0.0}, 0.5}, {{0.0, 1.0}, 0.5}});
}

}  // namespace

TEST_CASE("radial laws are probability densities with unit alpha moment") {
  const double alpha = 1.3;
  for (const RadialLaw& law :
       {lognormal_radial(alpha, 0.7), log_uniform_radial(alpha, 0.3, 4.0)}) {
    // Integrate in log space: the support spans many decades.
    const auto log_integrand = [&](double power) {
      return [&law, power](double u) {
        const double r = std::exp(u);
        return std::pow(r, power) * law.density(r) * r;
      };
    };
    const double total =
        integrate(log_integrand(0.0), std::log(law.support_lo), std::log(law.support_hi));
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
    const double moment =
        integrate(log_integrand(alpha), std::log(law.support_lo), std::log(law.support_hi));
    CHECK(moment == doctest::Approx(1.0).epsilon(1e-6));
  }

  const RadialLaw point = degenerate_radial();
  CHECK(point.degenerate);
  RngStream g(1);
  CHECK(point.sample(g) == 1.0);

  CHECK_THROWS_AS(lognormal_radial(1.0, 0.0), DomainError);
  CHECK_THROWS_AS(lognormal_radial(-1.0, 0.5), DomainError);
  CHECK_THROWS_AS(log_uniform_radial(1.0, 2.0, 1.0), DomainError);
}

TEST_CASE("sampled rotations are orthogonal and d = 1 is a fair coin") {
  RngStream g(7);
  for (int d : {2, 3, 5}) {
    for (int rep = 0; rep < 20; ++rep) {
      const Vec q = sample_haar_orthogonal(d, g);
      REQUIRE(q.size() == static_cast<std::size_t>(d) * d);
      for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
          double acc = 0.0;
          for (int k = 0; k < d; ++k) acc += q[k * d + i] * q[k * d + j];
          CHECK(std::abs(acc - (i == j ? 1.0 : 0.0)) < 1e-12);
        }
      }
    }
  }
  int plus = 0;
  for (int i = 0; i < 10000; ++i) plus += sample_haar_orthogonal(1, g)[0] > 0.0;
  CHECK(std::abs(plus / 10000.0 - 0.5) < 0.025);
}

TEST_CASE("construction-time checks catch a mis-scaled multiplier") {
  KestenOrthogonalSpec ok{2, 1.5, lognormal_radial(1.5, 0.8), 0.1};
  RngStream g(3);
  CHECK_NOTHROW(validate_kesten(ok, g));

  KestenOrthogonalSpec bad{2, 1.0, lognormal_radial(1.0, 0.8), 0.1};
  bad.radial.sample = [](RngStream&) { return 1.2; };
  RngStream g2(3);
  CHECK_THROWS_AS(validate_kesten(bad, g2), NotNormalized);

  KestenOrthogonalSpec neg{2, 1.0, degenerate_radial(), -0.5};
  RngStream g3(3);
  CHECK_THROWS_AS(validate_kesten(neg, g3), DomainError);
}

TEST_CASE("the backward radius of the symmetric lognormal keeps its law") {
  const double alpha = 1.2, sigma = 0.6;
  const double mu = -alpha * sigma * sigma / 2.0;
  const KestenBackwardLaw law =
      kesten_backward_increment({2, alpha, lognormal_radial(alpha, sigma), 0.1});
  CHECK_FALSE(law.degenerate);
  CHECK(std::abs(law.integral - 1.0) <= 1e-6);

  const auto closed_cdf = [mu, sigma](double y) {
    return y > 0.0 ? normal_cdf((std::log(y) - mu) / sigma) : 0.0;
  };
  for (double y : {0.3, 0.7, 1.0, 1.8, 3.0})
    CHECK(law.cdf(y) == doctest::Approx(closed_cdf(y)).epsilon(5e-3));

  RngStream g(21);
  std::vector<double> draws(20000);
  for (double& y : draws) y = law.sample_radius(g);
  const KsResult ks = ks_test_one_sample(draws, closed_cdf);
  CHECK(ks.p_value > 1e-3);
}

TEST_CASE("backward radii always carry unit alpha moment") {
  // E[(1/R)^alpha R^alpha] = 1, so the reversed radius is moment-normalized
  // no matter which forward law it came from.
  struct Case {
    KestenOrthogonalSpec spec;
  };
  for (const auto& spec :
       {KestenOrthogonalSpec{2, 1.0, lognormal_radial(1.0, 1.0), 0.1},
        KestenOrthogonalSpec{2, 1.7, log_uniform_radial(1.7, 0.4, 2.5), 0.1}}) {
    const KestenBackwardLaw law = kesten_backward_increment(spec);
    RngStream g(5);
    std::vector<double> w(50000);
    for (double& v : w) v = std::pow(law.sample_radius(g), spec.alpha);
    const MeanCi ci = mean_ci(w, 0.999);
    // Allow the grid's discretization bias on top of the CI.
    CHECK(std::abs(ci.mean - 1.0) <= ci.half + 2e-3);
  }

  const KestenBackwardLaw point = kesten_backward_increment({2, 1.0, degenerate_radial(), 0.0});
  CHECK(point.degenerate);
  RngStream g(6);
  CHECK(point.sample_radius(g) == 1.0);
}

TEST_CASE("backward matrices are scaled transposes of rotations") {
  const KestenBackwardLaw law =
      kesten_backward_increment({3, 1.0, lognormal_radial(1.0, 0.5), 0.1});
  RngStream g(9);
  for (int rep = 0; rep < 10; ++rep) {
    const Vec m = law.sample_matrix(g);
    REQUIRE(m.size() == 9);
    // M'M must be a positive multiple of the identity.
    double scale = 0.0;
    for (int k = 0; k < 3; ++k) scale += m[k * 3] * m[k * 3];
    CHECK(scale > 0.0);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        double acc = 0.0;
        for (int k = 0; k < 3; ++k) acc += m[k * 3 + i] * m[k * 3 + j];
        CHECK(std::abs(acc - (i == j ? scale : 0.0)) < 1e-10 * std::max(1.0, scale));
      }
    }
  }
}

TEST_CASE("fixed-point gap is small for a normalized law and flags a biased one") {
  KestenOrthogonalSpec ok{2, 1.0, lognormal_radial(1.0, 0.8), 0.1};
  RngStream g(13);
  std::vector<GapEstimate> detail;
  const double gap = kesten_spectral_fixedpoint_gap(ok, 200000, g, &detail);
  REQUIRE(detail.size() == 5);
  CHECK(gap < 0.02);
  for (const GapEstimate& e : detail) CHECK(std::abs(e.estimate) <= e.ci_halfwidth + 0.01);

  // A multiplier with E[R^alpha] = 1.2 shifts the constant functional by 0.2.
  KestenOrthogonalSpec biased{2, 1.0, degenerate_radial(), 0.1};
  biased.radial.degenerate = false;
  biased.radial.sample = [](RngStream&) { return 1.2; };
  RngStream g2(13);
  CHECK(kesten_spectral_fixedpoint_gap(biased, 100000, g2) > 0.15);

  RngStream g3(13);
  CHECK_THROWS_AS(kesten_spectral_fixedpoint_gap(ok, 10, g3), DomainError);
}

TEST_CASE("weighted adjoint draws of a pure rotation have unit weight") {
  const KestenOrthogonalSpec spec{2, 1.0, degenerate_radial(), 0.0};
  RngStream g(15);
  for (int rep = 0; rep < 50; ++rep) {
    const WeightedAdjointDraw draw = kesten_general_adjoint_draw(spec, axes2(), g);
    CHECK(draw.weight == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(norm2(draw.angle) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(draw.value.size() == 2);
  }
}

TEST_CASE("age decomposition of the contractive recursion has geometric weights") {
  const Ar1Spec spec = make_ar1(1, 1.0, {0.5}, coin());
  CHECK(contraction_power(spec) == 1);

  const Ar1TailDecomposition dec = ar1_tail_decomposition(spec);
  REQUIRE(dec.n_max >= 20);
  CHECK(dec.c[0] == doctest::Approx(1.0));
  CHECK(dec.c[1] == doctest::Approx(0.5));
  CHECK(dec.c[2] == doctest::Approx(0.25));
  CHECK(dec.c_sum == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(dec.remainder <= 1e-12);
  CHECK(dec.p[0] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(dec.op_norm[3] == doctest::Approx(0.125));
  double total = 0.0;
  for (double p : dec.p) total += p;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

  // A squared index fattens the head of the age law.
  const Ar1Spec sq = make_ar1(1, 2.0, {0.5}, coin());
  CHECK(ar1_tail_decomposition(sq).p[0] == doctest::Approx(0.75).epsilon(1e-9));

  // A = 0 kills all ages but zero.
  const Ar1Spec dead = make_ar1(1, 1.0, {0.0}, coin());
  const Ar1TailDecomposition ddec = ar1_tail_decomposition(dead);
  CHECK(ddec.n_max <= 1);
  CHECK(ddec.p[0] == doctest::Approx(1.0));
  CHECK(ddec.c_sum == doctest::Approx(1.0));

  // Contraction may need several steps or never happen.
  const Ar1Spec two_step = make_ar1(2, 1.0, {0.0, 2.0, 0.3, 0.0}, axes2());
  CHECK(contraction_power(two_step) == 2);
  const Ar1Spec unit = make_ar1(1, 1.0, {1.0}, coin());
  CHECK_THROWS_AS(contraction_power(unit), NoContraction);
  CHECK_THROWS_AS(ar1_tail_decomposition(unit), NoContraction);
}

TEST_CASE("spectral draws reweight angles by the power of the contraction") {
  // Axis e1 contracts slowly, e2 fast: the alpha-weighting favors e1 at 9:1.
  const Ar1Spec spec = make_ar1(2, 1.0, {0.9, 0.0, 0.0, 0.1}, axes2());
  const Ar1TailDecomposition dec = ar1_tail_decomposition(spec);
  CHECK(dec.c_sum == doctest::Approx(50.0 / 9.0).epsilon(1e-9));

  RngStream g(17);
  int e1 = 0, age0 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const Ar1SpectralSample s = ar1_spectral_sampler(spec, dec, g);
    REQUIRE(s.n >= 0);
    REQUIRE(s.theta.size() == 2);
    // theta is pre-scaled so the chain lands on the sphere at time zero.
    if (i % 100 == 0)
      CHECK(norm2(ar1_power_apply(spec, s.n, s.theta)) == doctest::Approx(1.0).epsilon(1e-9));
    e1 += s.theta[0] > 0.5;
    age0 += s.n == 0;
  }
  CHECK(std::abs(e1 / static_cast<double>(n) - 0.9) < 0.02);
  CHECK(std::abs(age0 / static_cast<double>(n) - 0.18) < 0.02);

  const SpectralMeasure law = ar1_spectral_law(spec, dec);
  REQUIRE(law.is_atomic());
  const Vec ax1 = {1.0, 0.0};
  const Vec ax2 = {0.0, 1.0};
  CHECK(law.mass_at(ax1) == doctest::Approx(0.9).epsilon(1e-9));
  CHECK(law.mass_at(ax2) == doctest::Approx(0.1).epsilon(1e-9));

  // Extinction balances the angle tilt: rarely extinct where the chain loads mass.
  CHECK(ar1_backward_zero_prob(spec, dec, UnitVector::of(ax1)) ==
        doctest::Approx(0.1).epsilon(1e-9));
  CHECK(ar1_backward_zero_prob(spec, dec, UnitVector::of(ax2)) ==
        doctest::Approx(0.9).epsilon(1e-9));
  const double r = std::sqrt(0.5);
  CHECK_THROWS_AS(ar1_backward_zero_prob(spec, dec, UnitVector::of({r, r})), UnsupportedAngle);
}

TEST_CASE("continuous angle laws assemble into a normalized mixture density") {
  // Close eigenvalues keep every mixture component wider than the quadrature
  // grid while still tilting mass toward the slow eigenvector.
  const Ar1Spec spec = make_ar1(2, 1.0, {0.6, 0.1, 0.0, 0.5}, SpectralMeasure::uniform(2));
  const Ar1TailDecomposition dec = ar1_tail_decomposition(spec);
  const SpectralMeasure law = ar1_spectral_law(spec, dec);
  REQUIRE(law.kind() == SpectralMeasure::Kind::Density);

  const int grid = 8192;
  double mean = 0.0, lo = 1e300, hi = 0.0;
  for (int a = 0; a < grid; ++a) {
    const double phi = 2.0 * M_PI * (a + 0.5) / grid;
    const double g = law.density_at(Vec{std::cos(phi), std::sin(phi)});
    mean += g;
    lo = std::min(lo, g);
    hi = std::max(hi, g);
  }
  mean /= grid;
  CHECK(mean == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(hi / lo > 1.05);

  RngStream g(19);
  for (int i = 0; i < 200; ++i) {
    const Ar1SpectralSample s = ar1_spectral_sampler(spec, dec, g);
    CHECK(norm2(ar1_power_apply(spec, s.n, s.theta)) == doctest::Approx(1.0).epsilon(1e-9));
  }

  // An isotropic contraction leaves the angle law exactly uniform.
  const Ar1Spec iso = make_ar1(2, 1.0, {0.0, -0.5, 0.5, 0.0}, SpectralMeasure::uniform(2));
  const SpectralMeasure iso_law = ar1_spectral_law(iso, ar1_tail_decomposition(iso));
  CHECK(iso_law.density_at(Vec{1.0, 0.0}) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(iso_law.density_at(Vec{0.6, 0.8}) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("checked chains for the linear recursion have the exact conditionals") {
  RngStream gate(23);
  const BftcSpec spec = ar1_bftc(make_ar1(1, 1.0, {0.5}, coin()), gate);
  CHECK(spec.alpha() == 1.0);

  const Vec plus = {1.0};
  const auto& fwd = spec.forward().conditional_at(plus);
  REQUIRE(fwd.size() == 1);
  CHECK(fwd[0].first[0] == doctest::Approx(0.5));
  CHECK(fwd[0].second == doctest::Approx(1.0));

  const auto& bwd = spec.backward().conditional_at(plus);
  REQUIRE(bwd.size() == 2);
  double zero_w = 0.0, jump_w = 0.0, jump_to = 0.0;
  for (const auto& [m, w] : bwd) {
    if (is_zero(m)) {
      zero_w += w;
    } else {
      jump_w += w;
      jump_to = m[0];
    }
  }
  CHECK(zero_w == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(jump_w == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(jump_to == doctest::Approx(2.0));

  CHECK(spec.m0_law().mass_at(plus) == doctest::Approx(0.5).epsilon(1e-9));

  // A negative coefficient sends the backward jump to the opposite ray.
  RngStream gate2(23);
  const BftcSpec neg = ar1_bftc(make_ar1(1, 1.0, {-0.5}, coin()), gate2);
  const auto& nbwd = neg.backward().conditional_at(plus);
  double njump = 0.0;
  for (const auto& [m, w] : nbwd)
    if (!is_zero(m)) njump = m[0];
  CHECK(njump == doctest::Approx(-2.0));
}

TEST_CASE("the orthogonal multiplicative chain passes the draw-based gate") {
  KestenOrthogonalSpec spec{2, 1.0, lognormal_radial(1.0, 1.0), 0.1};
  RngStream gate(29);
  const BftcSpec bftc = kesten_bftc(spec, gate);
  CHECK(bftc.dim() == 2);
  CHECK(bftc.forward().kind() == TailKernel::Kind::ModelAnalytic);
  CHECK(bftc.m0_law().kind() == SpectralMeasure::Kind::Uniform);
}

TEST_CASE("model files parse, validate, and dispatch") {
  const std::string ar1_text = R"({
    "type": "ar1", "d": 1, "alpha": 1.0, "a": 0.5,
    "lambda": {"kind": "atomic", "atoms": [{"s": [1.0], "w": 0.5}, {"s": [-1.0], "w": 0.5}]},
    "innovation": {"name": "pareto-symmetric", "scale": 1.0}
  })";
  const ModelFile ar1 = model_from_json_text(ar1_text);
  CHECK(ar1.type == "ar1");
  CHECK(ar1.dim() == 1);
  CHECK(ar1.alpha() == 1.0);
  REQUIRE(ar1.ar1.has_value());
  CHECK(ar1.ar1->A == Vec{0.5});

  const std::string kesten_text = R"({
    "type": "kesten", "d": 2, "alpha": 1.0,
    "radial": {"name": "lognormal", "sigma": 1.0}, "additive_scale": 0.1
  })";
  const ModelFile kesten = model_from_json_text(kesten_text);
  REQUIRE(kesten.kesten.has_value());
  CHECK(kesten.kesten->radial.name == "lognormal");
  CHECK(kesten.kesten->additive_scale == 0.1);
  CHECK(kesten.model().d == 2);

  const auto has_line = [](const std::vector<std::string>& lines, const std::string& needle) {
    for (const auto& l : lines)
      if (l.find(needle) != std::string::npos) return true;
    return false;
  };

  CHECK(has_line(model_json_diagnostics("not json", "/model"), "/model: JSON parse failed"));
  CHECK(has_line(model_json_diagnostics(R"({"type": "garch"})", ""), "/type: unknown model type"));
  CHECK(has_line(model_json_diagnostics(R"({"type": "ar1", "d": 1, "alpha": -2})", "/model"),
                 "/model/alpha: required positive number"));
  CHECK(has_line(model_json_diagnostics(R"({"type": "ar1", "d": 1, "alpha": 1})", ""),
                 "/a: required matrix"));
  CHECK(has_line(
      model_json_diagnostics(
          R"({"type": "ar1", "d": 1, "alpha": 1, "a": 0.5,
              "lambda": {"kind": "atomic", "atoms": [{"s": [2.0], "w": 1.0}]}})",
          ""),
      "/lambda/atoms/0/s: must lie on the unit sphere"));
  CHECK(has_line(
      model_json_diagnostics(
          R"({"type": "ar1", "d": 1, "alpha": 1, "a": 0.5,
              "lambda": {"kind": "atomic", "atoms": [{"s": [1.0], "w": 0.7}]}})",
          ""),
      "/lambda/atoms: weights must sum to 1"));
  CHECK(has_line(model_json_diagnostics(
                     R"({"type": "kesten", "d": 2, "alpha": 1, "radial": {"name": "cauchy"}})",
                     ""),
                 "/radial/name: unknown radial law"));
  CHECK(has_line(
      model_json_diagnostics(
          R"({"type": "kesten", "d": 2, "alpha": 1,
              "radial": {"name": "log-uniform", "lo": 2.0, "hi": 1.0}})",
          ""),
      "/radial/hi"));

  CHECK_THROWS_AS(model_from_json_text(R"({"type": "garch"})"), DomainError);
}
