#include "tailchain/models.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "tailchain/diagnostics.hpp"
#include "tailchain/errors.hpp"

namespace tailchain {

namespace {

Eigen::MatrixXd to_matrix(const Vec& a, int d) {
  Eigen::MatrixXd m(d, d);
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c) m(r, c) = a[static_cast<std::size_t>(r) * d + c];
  return m;
}

Vec from_matrix(const Eigen::MatrixXd& m) {
  const int d = static_cast<int>(m.rows());
  Vec a(static_cast<std::size_t>(d) * d);
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c) a[static_cast<std::size_t>(r) * d + c] = m(r, c);
  return a;
}

Vec apply(const Vec& a, std::span<const double> v, int d) {
  Vec y(d, 0.0);
  for (int r = 0; r < d; ++r) {
    double acc = 0.0;
    for (int c = 0; c < d; ++c) acc += a[static_cast<std::size_t>(r) * d + c] * v[c];
    y[r] = acc;
  }
  return y;
}

double op_norm(const Eigen::MatrixXd& m) {
  return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
}

// Euclidean norm through a max-abs prescale: deeply contracted vectors keep
// full precision where the squared components would underflow to subnormals.
double prescaled_norm(std::span<const double> v) {
  double big = 0.0;
  for (double x : v) big = std::max(big, std::abs(x));
  if (!(big > 0.0)) return 0.0;
  double s = 0.0;
  for (double x : v) {
    const double t = x / big;
    s += t * t;
  }
  return big * std::sqrt(s);
}

// Uniform on S^0 is the fair coin on {+1, -1}; use the exact atomic form.
SpectralMeasure normalized_lambda(const Ar1Spec& spec) {
  if (spec.lambda.kind() == SpectralMeasure::Kind::Uniform && spec.d == 1)
    return SpectralMeasure::atomic(1, {{{1.0}, 0.5}, {{-1.0}, 0.5}});
  return spec.lambda;
}

void require_ar1_shapes(const Ar1Spec& spec) {
  if (spec.d < 1) throw DomainError("model dimension must be positive");
  if (!(spec.alpha > 0.0) || !std::isfinite(spec.alpha))
    throw DomainError("tail index must be positive and finite");
  if (spec.A.size() != static_cast<std::size_t>(spec.d) * spec.d)
    throw DimensionMismatch("matrix A must be d x d");
  if (!all_finite(spec.A)) throw DomainError("matrix A has non-finite entries");
  if (spec.lambda.dim() != spec.d)
    throw DimensionMismatch("innovation angle law has the wrong dimension");
  if (!(spec.radial_scale > 0.0)) throw DomainError("innovation scale must be positive");
  if (spec.lambda.kind() != SpectralMeasure::Kind::Atomic && spec.d > 2)
    throw DomainError("continuous innovation angle laws are supported in dimension 2 only");
}

}  // namespace

RadialLaw lognormal_radial(double alpha, double sigma) {
  if (!(alpha > 0.0)) throw DomainError("tail index must be positive");
  if (!(sigma > 0.0)) throw DomainError("lognormal sigma must be positive");
  const double mu = -alpha * sigma * sigma / 2.0;
  RadialLaw law;
  law.name = "lognormal";
  law.density = [mu, sigma](double r) {
    if (r <= 0.0) return 0.0;
    const double z = (std::log(r) - mu) / sigma;
    return std::exp(-0.5 * z * z) / (r * sigma * std::sqrt(2.0 * M_PI));
  };
  law.sample = [mu, sigma](RngStream& g) { return std::exp(mu + sigma * g.normal()); };
  law.support_lo = std::exp(mu - 12.0 * sigma);
  law.support_hi = std::exp(mu + 12.0 * sigma);
  return law;
}

RadialLaw log_uniform_radial(double alpha, double lo, double hi) {
  if (!(alpha > 0.0)) throw DomainError("tail index must be positive");
  if (!(0.0 < lo && lo < hi)) throw DomainError("log-uniform support needs 0 < lo < hi");
  const double len = std::log(hi / lo);
  const double alpha_moment = (std::pow(hi, alpha) - std::pow(lo, alpha)) / (alpha * len);
  const double scale = std::pow(alpha_moment, -1.0 / alpha);
  const double slo = scale * lo;
  const double shi = scale * hi;
  RadialLaw law;
  law.name = "log-uniform";
  // The edges tolerate one round trip through exp(log(.)) or 1/(1/r), which
  // otherwise lands an ulp outside the support and zeroes a quadrature node.
  const double edge_lo = slo * (1.0 - 1e-12);
  const double edge_hi = shi * (1.0 + 1e-12);
  law.density = [len, edge_lo, edge_hi](double r) {
    return (r >= edge_lo && r <= edge_hi) ? 1.0 / (r * len) : 0.0;
  };
  law.sample = [len, slo](RngStream& g) { return slo * std::exp(g.uniform_co() * len); };
  law.support_lo = slo;
  law.support_hi = shi;
  return law;
}

RadialLaw degenerate_radial() {
  RadialLaw law;
  law.name = "degenerate";
  law.degenerate = true;
  law.sample = [](RngStream&) { return 1.0; };
  return law;
}

Vec sample_haar_orthogonal(int d, RngStream& stream) {
  if (d < 1) throw DimensionMismatch("rotation dimension must be positive");
  if (d == 1) return {stream.uniform() <= 0.5 ? 1.0 : -1.0};
  Eigen::MatrixXd g(d, d);
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c) g(r, c) = stream.normal();
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < d; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  return from_matrix(q);
}

void validate_kesten(const KestenOrthogonalSpec& spec, RngStream& stream) {
  if (spec.d < 1) throw DomainError("model dimension must be positive");
  if (!(spec.alpha > 0.0) || !std::isfinite(spec.alpha))
    throw DomainError("tail index must be positive and finite");
  if (!(spec.additive_scale >= 0.0)) throw DomainError("additive scale cannot be negative");
  if (!spec.radial.sample) throw DomainError("radial law has no sampler");

  if (!spec.radial.degenerate) {
    constexpr long kMomentN = 100000;
    std::vector<double> w(kMomentN);
    for (long i = 0; i < kMomentN; ++i) {
      const double r = spec.radial.sample(stream);
      if (!(r > 0.0) || !std::isfinite(r))
        throw DomainError("radial sampler produced a nonpositive or non-finite value");
      w[i] = std::pow(r, spec.alpha);
    }
    const MeanCi ci = mean_ci(w, 0.999);
    if (std::abs(ci.mean - 1.0) > ci.half)
      throw NotNormalized("radial law violates E[R^alpha] = 1: estimate " +
                          std::to_string(ci.mean) + " +/- " + std::to_string(ci.half));
  }

  for (int rep = 0; rep < 3; ++rep) {
    const Vec q = sample_haar_orthogonal(spec.d, stream);
    double worst = 0.0;
    for (int i = 0; i < spec.d; ++i) {
      for (int j = 0; j < spec.d; ++j) {
        double acc = 0.0;
        for (int k = 0; k < spec.d; ++k)
          acc += q[static_cast<std::size_t>(k) * spec.d + i] *
                 q[static_cast<std::size_t>(k) * spec.d + j];
        worst = std::max(worst, std::abs(acc - (i == j ? 1.0 : 0.0)));
      }
    }
    if (worst > 1e-10) throw DomainError("sampled rotation is not orthogonal within 1e-10");
  }
}

KestenBackwardLaw kesten_backward_increment(const KestenOrthogonalSpec& spec) {
  if (!spec.radial.sample) throw DomainError("radial law has no sampler");
  const int d = spec.d;
  KestenBackwardLaw law;

  std::function<double(RngStream&)> radius;
  if (spec.radial.degenerate) {
    law.degenerate = true;
    law.integral = 1.0;
    radius = [](RngStream&) { return 1.0; };
  } else {
    if (!spec.radial.density) throw DomainError("radial law has no density");
    const double alpha = spec.alpha;
    const auto f_r = spec.radial.density;
    auto f_star = [f_r, alpha](double y) {
      return y > 0.0 ? f_r(1.0 / y) * std::pow(y, -(2.0 + alpha)) : 0.0;
    };

    // Inverse-CDF table on a log-spaced grid over the reciprocal support.
    const double y_lo = 1.0 / spec.radial.support_hi;
    const double y_hi = 1.0 / spec.radial.support_lo;
    if (!(y_lo > 0.0) || !(y_hi > y_lo) || !std::isfinite(y_hi))
      throw DomainError("radial law support hints are unusable");
    constexpr int kGrid = 1 << 14;
    const double u_lo = std::log(y_lo);
    const double du = (std::log(y_hi) - u_lo) / kGrid;
    auto cum = std::make_shared<std::vector<double>>(kGrid + 1, 0.0);
    double prev = f_star(std::exp(u_lo)) * std::exp(u_lo);
    for (int k = 1; k <= kGrid; ++k) {
      const double u = u_lo + k * du;
      const double h = f_star(std::exp(u)) * std::exp(u);
      (*cum)[k] = (*cum)[k - 1] + 0.5 * (prev + h) * du;
      prev = h;
    }
    law.integral = cum->back();
    if (std::abs(law.integral - 1.0) > 1e-6)
      throw NotNormalized("backward radial density integrates to " +
                          std::to_string(law.integral));
    law.density = std::move(f_star);
    const double total = law.integral;
    law.cdf = [cum, u_lo, du, total](double y) {
      if (!(y > 0.0)) return 0.0;
      const double pos = (std::log(y) - u_lo) / du;
      if (pos <= 0.0) return 0.0;
      if (pos >= static_cast<double>(cum->size() - 1)) return 1.0;
      const std::size_t k = static_cast<std::size_t>(pos);
      const double frac = pos - static_cast<double>(k);
      return ((*cum)[k] + frac * ((*cum)[k + 1] - (*cum)[k])) / total;
    };
    radius = [cum, u_lo, du](RngStream& g) {
      const double v = g.uniform() * cum->back();
      const auto it = std::lower_bound(cum->begin() + 1, cum->end(), v);
      const std::size_t k = it - cum->begin();
      const double c0 = (*cum)[k - 1];
      const double c1 = (*cum)[k];
      const double frac = c1 > c0 ? (v - c0) / (c1 - c0) : 0.5;
      return std::exp(u_lo + (static_cast<double>(k - 1) + frac) * du);
    };
  }

  law.sample_radius = radius;
  law.sample_matrix = [radius, d](RngStream& g) {
    const double y = radius(g);
    const Vec q = sample_haar_orthogonal(d, g);
    Vec m(static_cast<std::size_t>(d) * d);
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c)
        m[static_cast<std::size_t>(r) * d + c] = y * q[static_cast<std::size_t>(c) * d + r];
    return m;
  };
  return law;
}

double kesten_spectral_fixedpoint_gap(const KestenOrthogonalSpec& spec, long n, RngStream& stream,
                                      std::vector<GapEstimate>* detail) {
  if (n < 1000) throw DomainError("fixed-point gap needs at least 1000 samples");
  if (!spec.radial.sample) throw DomainError("radial law has no sampler");
  const int d = spec.d;

  std::vector<std::function<double(std::span<const double>)>> battery;
  battery.push_back([](std::span<const double>) { return 1.0; });
  battery.push_back([](std::span<const double> c) { return c[0]; });
  battery.push_back([](std::span<const double> c) { return c[0] * c[0]; });
  if (d > 1) {
    battery.push_back([](std::span<const double> c) { return c[1]; });
    battery.push_back([](std::span<const double> c) { return c[0] * c[1]; });
  }

  std::vector<double> sum(battery.size(), 0.0), sumsq(battery.size(), 0.0);
  for (long i = 0; i < n; ++i) {
    const Vec c = sample_uniform_sphere(d, stream);
    const double r = spec.radial.sample(stream);
    const Vec q = sample_haar_orthogonal(d, stream);
    Vec v = apply(q, c, d);
    const double len = norm2(v) * r;
    const double w = std::pow(len, spec.alpha);
    for (double& x : v) x *= r / len;  // AC/||AC||
    for (std::size_t f = 0; f < battery.size(); ++f) {
      const double diff = battery[f](v) * w - battery[f](c);
      sum[f] += diff;
      sumsq[f] += diff * diff;
    }
  }

  const double z = normal_quantile(0.995);
  double worst = 0.0;
  if (detail) detail->clear();
  for (std::size_t f = 0; f < battery.size(); ++f) {
    const double mean = sum[f] / n;
    const double var = std::max(0.0, (sumsq[f] - n * mean * mean) / (n - 1.0));
    GapEstimate g;
    g.estimate = mean;
    g.ci_halfwidth = z * std::sqrt(var / n);
    if (detail) detail->push_back(g);
    worst = std::max(worst, std::abs(mean));
  }
  return worst;
}

WeightedAdjointDraw kesten_general_adjoint_draw(const KestenOrthogonalSpec& spec,
                                                const SpectralMeasure& c_law, RngStream& stream) {
  if (c_law.dim() != spec.d) throw DimensionMismatch("angle law has the wrong dimension");
  const Vec c = c_law.sample(stream);
  const double r = spec.radial.sample(stream);
  const Vec q = sample_haar_orthogonal(spec.d, stream);
  Vec v = apply(q, c, spec.d);
  for (double& x : v) x *= r;
  const double len = norm2(v);
  WeightedAdjointDraw draw;
  draw.angle = scaled(v, 1.0 / len);
  draw.value = scaled(c, 1.0 / len);
  draw.weight = std::pow(len, spec.alpha);
  return draw;
}

Ar1Spec make_ar1(int d, double alpha, Vec a, SpectralMeasure lambda, double radial_scale) {
  Ar1Spec spec;
  spec.d = d;
  spec.alpha = alpha;
  spec.A = std::move(a);
  spec.lambda = std::move(lambda);
  spec.radial_scale = radial_scale;
  require_ar1_shapes(spec);
  spec.lambda = normalized_lambda(spec);
  return spec;
}

int contraction_power(const Ar1Spec& spec) {
  require_ar1_shapes(spec);
  const Eigen::MatrixXd a = to_matrix(spec.A, spec.d);
  Eigen::MatrixXd p = a;
  for (int m = 1; m <= 64; ++m) {
    if (op_norm(p) < 1.0) return m;
    p = p * a;
  }
  throw NoContraction("no power of A up to 64 contracts the unit sphere");
}

Ar1TailDecomposition ar1_tail_decomposition(const Ar1Spec& spec) {
  require_ar1_shapes(spec);
  const SpectralMeasure lam = normalized_lambda(spec);
  const int d = spec.d;
  const int m = contraction_power(spec);
  const Eigen::MatrixXd a = to_matrix(spec.A, d);

  Eigen::MatrixXd a_m = Eigen::MatrixXd::Identity(d, d);
  for (int i = 0; i < m; ++i) a_m = a_m * a;
  const double rho = std::pow(op_norm(a_m), spec.alpha);

  // Integration nodes: exact atoms, or a 4096-point angular grid in d = 2.
  std::vector<Vec> nodes;
  std::vector<double> node_w;
  if (lam.is_atomic()) {
    for (const auto& [s, w] : lam.atoms()) {
      nodes.push_back(s);
      node_w.push_back(w);
    }
  } else {
    constexpr int kAngles = 4096;
    for (int j = 0; j < kAngles; ++j) {
      const double phi = 2.0 * M_PI * (j + 0.5) / kAngles;
      Vec s = {std::cos(phi), std::sin(phi)};
      node_w.push_back(lam.density_at(s) / kAngles);
      nodes.push_back(std::move(s));
    }
  }

  Ar1TailDecomposition dec;
  Eigen::MatrixXd pow_n = Eigen::MatrixXd::Identity(d, d);
  std::vector<Vec> iter = nodes;
  double block = 0.0;
  constexpr int kMaxN = 20000;
  for (int n = 0;; ++n) {
    if (n > kMaxN) throw NoContraction("tail decomposition failed to converge");
    double c_n = 0.0;
    for (std::size_t i = 0; i < iter.size(); ++i)
      c_n += node_w[i] * std::pow(norm2(iter[i]), spec.alpha);
    dec.c.push_back(c_n);
    dec.op_norm.push_back(n == 0 ? 1.0 : op_norm(pow_n));

    if (n > 0) {
      block += c_n;
      if (n % m == 0) {
        const double bound = block * rho / (1.0 - rho);
        const double total = std::accumulate(dec.c.begin(), dec.c.end(), 0.0);
        if (bound < 1e-12 * total) {
          dec.n_max = n;
          dec.remainder = bound / total;
          break;
        }
        block = 0.0;
      }
    }
    for (Vec& v : iter) v = apply(spec.A, v, d);
    pow_n = pow_n * a;
  }

  dec.c_sum = std::accumulate(dec.c.begin(), dec.c.end(), 0.0);
  dec.p.resize(dec.c.size());
  for (std::size_t i = 0; i < dec.c.size(); ++i) dec.p[i] = dec.c[i] / dec.c_sum;
  const double resid = 1.0 - std::accumulate(dec.p.begin(), dec.p.end(), 0.0);
  dec.p[std::max_element(dec.p.begin(), dec.p.end()) - dec.p.begin()] += resid;
  return dec;
}

namespace {

// Shared continuous-case machinery: per-age inverse powers and determinants.
struct MixtureDensity {
  int d = 2;
  double alpha = 1.0;
  SpectralMeasure lam = SpectralMeasure::uniform(2);
  std::vector<Eigen::MatrixXd> inv_pow;  // (A^n)^{-1}
  std::vector<double> abs_det;           // |det A^n|
  std::vector<double> c, p;

  double operator()(std::span<const double> u) const {
    double total = 0.0;
    Eigen::Vector2d uu(u[0], u[1]);
    for (std::size_t n = 0; n < p.size(); ++n) {
      if (p[n] <= 0.0) continue;
      const Eigen::Vector2d w = inv_pow[n] * uu;
      const double r = w.norm();
      if (!(r > 0.0)) continue;
      Vec dir = {w(0) / r, w(1) / r};
      total += p[n] * lam.density_at(dir) * std::pow(r, -(alpha + 2.0)) / (c[n] * abs_det[n]);
    }
    return total;
  }
};

MixtureDensity make_mixture(const Ar1Spec& spec, const Ar1TailDecomposition& dec) {
  if (spec.d != 2) throw DomainError("continuous innovation angle laws need dimension 2");
  const Eigen::MatrixXd a = to_matrix(spec.A, 2);
  if (std::abs(a.determinant()) <= 0.0)
    throw DomainError("continuous innovation angle laws need an invertible A");
  MixtureDensity mix;
  mix.d = 2;
  mix.alpha = spec.alpha;
  mix.lam = normalized_lambda(spec);
  mix.c = dec.c;
  mix.p = dec.p;
  Eigen::MatrixXd pow_n = Eigen::MatrixXd::Identity(2, 2);
  for (std::size_t n = 0; n < dec.p.size(); ++n) {
    mix.inv_pow.push_back(pow_n.inverse());
    mix.abs_det.push_back(std::abs(pow_n.determinant()));
    pow_n = pow_n * a;
  }
  return mix;
}

}  // namespace

Ar1SpectralSample ar1_spectral_sampler(const Ar1Spec& spec, const Ar1TailDecomposition& dec,
                                       RngStream& stream) {
  require_ar1_shapes(spec);
  const SpectralMeasure lam = normalized_lambda(spec);

  // Age of the last big innovation.
  const double u = stream.uniform();
  int age = -1;
  double acc = 0.0;
  for (std::size_t n = 0; n < dec.p.size(); ++n) {
    if (dec.p[n] <= 0.0) continue;
    acc += dec.p[n];
    age = static_cast<int>(n);
    if (u <= acc) break;
  }
  if (age < 0) throw DomainError("tail decomposition carries no mass");

  Ar1SpectralSample out;
  out.n = age;
  if (lam.is_atomic()) {
    const auto& atoms = lam.atoms();
    std::vector<double> q(atoms.size());
    double total = 0.0;
    std::vector<double> r(atoms.size());
    for (std::size_t i = 0; i < atoms.size(); ++i) {
      const Vec v = ar1_power_apply(spec, age, atoms[i].first);
      r[i] = prescaled_norm(v);
      q[i] = atoms[i].second * std::pow(r[i], spec.alpha);
      total += q[i];
    }
    const double u2 = stream.uniform() * total;
    double walk = 0.0;
    std::size_t pick = atoms.size() - 1;
    for (std::size_t i = 0; i < atoms.size(); ++i) {
      if (q[i] <= 0.0) continue;
      walk += q[i];
      pick = i;
      if (u2 <= walk) break;
    }
    out.theta = scaled(atoms[pick].first, 1.0 / r[pick]);
    return out;
  }

  // Continuous case: rejection with the operator-norm envelope.
  const double envelope = dec.op_norm[age];
  const double rate = dec.c[age] / std::pow(envelope, spec.alpha);
  if (rate < 1e-4)
    throw RejectionStall("spectral sampler acceptance rate " + std::to_string(rate) +
                         " at age " + std::to_string(age));
  for (long tries = 0; tries < 2000000; ++tries) {
    const Vec s = lam.sample(stream);
    const Vec v = ar1_power_apply(spec, age, s);
    const double r = prescaled_norm(v);
    if (stream.uniform() <= std::pow(r / envelope, spec.alpha)) {
      out.theta = scaled(s, 1.0 / r);
      return out;
    }
  }
  throw RejectionStall("spectral sampler made no progress");
}

Vec ar1_power_apply(const Ar1Spec& spec, int n, std::span<const double> v) {
  Vec y(v.begin(), v.end());
  for (int i = 0; i < n; ++i) y = apply(spec.A, y, spec.d);
  return y;
}

SpectralMeasure ar1_spectral_law(const Ar1Spec& spec, const Ar1TailDecomposition& dec) {
  require_ar1_shapes(spec);
  const SpectralMeasure lam = normalized_lambda(spec);

  if (lam.is_atomic()) {
    std::map<std::vector<double>, std::pair<Vec, double>> merged;
    std::vector<Vec> iter;
    for (const auto& [s, w] : lam.atoms()) iter.push_back(s);
    for (std::size_t n = 0; n < dec.p.size(); ++n) {
      if (dec.p[n] > 0.0) {
        const auto& atoms = lam.atoms();
        for (std::size_t i = 0; i < atoms.size(); ++i) {
          const double r = prescaled_norm(iter[i]);
          if (!(r > 0.0)) continue;
          const Vec dir = scaled(iter[i], 1.0 / r);
          const double w = dec.p[n] * atoms[i].second * std::pow(r, spec.alpha) / dec.c[n];
          if (!(w > 0.0)) continue;
          std::vector<double> key(dir.size());
          for (std::size_t c = 0; c < dir.size(); ++c) {
            key[c] = round12(dir[c]);
            if (key[c] == 0.0) key[c] = 0.0;
          }
          auto [it, fresh] = merged.try_emplace(std::move(key), dir, 0.0);
          it->second.second += w;
        }
      }
      for (Vec& v : iter) v = apply(spec.A, v, spec.d);
    }
    std::vector<std::pair<Vec, double>> atoms;
    atoms.reserve(merged.size());
    for (auto& [key, aw] : merged) atoms.emplace_back(std::move(aw.first), aw.second);
    return SpectralMeasure::atomic(spec.d, std::move(atoms));
  }

  auto mix = std::make_shared<MixtureDensity>(make_mixture(spec, dec));
  double sup = 0.0;
  constexpr int kScan = 8192;
  for (int j = 0; j < kScan; ++j) {
    const double phi = 2.0 * M_PI * (j + 0.5) / kScan;
    const Vec s = {std::cos(phi), std::sin(phi)};
    sup = std::max(sup, (*mix)(s));
  }
  return SpectralMeasure::density(
      2, [mix](std::span<const double> s) { return (*mix)(s); }, 2.0 * sup);
}

double ar1_backward_zero_prob(const Ar1Spec& spec, const Ar1TailDecomposition& dec,
                              const UnitVector& s) {
  require_ar1_shapes(spec);
  if (s.dim() != spec.d) throw DimensionMismatch("angle has the wrong dimension");
  const SpectralMeasure lam = normalized_lambda(spec);

  double num = 0.0, den = 0.0;
  if (lam.is_atomic()) {
    const SpectralMeasure law = ar1_spectral_law(spec, dec);
    num = lam.mass_at(s.coords());
    den = law.mass_at(s.coords());
  } else {
    const MixtureDensity mix = make_mixture(spec, dec);
    num = lam.density_at(s.coords());
    den = mix(s.coords());
  }
  if (!(den > 1e-300))
    throw UnsupportedAngle("the angle law of M_0 has no mass at the requested angle");
  return std::clamp(num / (dec.c_sum * den), 0.0, 1.0);
}

ModelSpec kesten_model(const KestenOrthogonalSpec& spec) {
  if (!spec.radial.sample) throw DomainError("radial law has no sampler");
  const int d = spec.d;
  ModelSpec m;
  m.d = d;
  m.alpha = spec.alpha;
  m.name = "kesten";
  m.draw_noise = [spec, d](RngStream& g) {
    Vec e(1 + static_cast<std::size_t>(d) * d + d);
    e[0] = spec.radial.sample(g);
    const Vec q = sample_haar_orthogonal(d, g);
    std::copy(q.begin(), q.end(), e.begin() + 1);
    for (int c = 0; c < d; ++c) e[1 + static_cast<std::size_t>(d) * d + c] =
        spec.additive_scale * g.normal();
    return e;
  };
  m.transition = [d](std::span<const double> x, std::span<const double> e) {
    const double r = e[0];
    Vec y(d, 0.0);
    for (int row = 0; row < d; ++row) {
      double acc = 0.0;
      for (int c = 0; c < d; ++c) acc += e[1 + static_cast<std::size_t>(row) * d + c] * x[c];
      y[row] = r * acc + e[1 + static_cast<std::size_t>(d) * d + row];
    }
    return y;
  };
  m.tail_map = [d](std::span<const double> s, std::span<const double> e) {
    const double r = e[0];
    Vec y(d, 0.0);
    for (int row = 0; row < d; ++row) {
      double acc = 0.0;
      for (int c = 0; c < d; ++c) acc += e[1 + static_cast<std::size_t>(row) * d + c] * s[c];
      y[row] = r * acc;
    }
    return y;
  };
  m.init = [d](RngStream&) { return Vec(d, 0.0); };
  return m;
}

ModelSpec ar1_model(const Ar1Spec& raw) {
  const Ar1Spec spec = make_ar1(raw.d, raw.alpha, raw.A, raw.lambda, raw.radial_scale);
  const int d = spec.d;
  ModelSpec m;
  m.d = d;
  m.alpha = spec.alpha;
  m.name = "ar1";
  m.draw_noise = [spec, d](RngStream& g) {
    const Vec theta = spec.lambda.sample(g);
    const double r = spec.radial_scale * sample_pareto(TailIndex(spec.alpha), g.uniform());
    return scaled(theta, r);
  };
  m.transition = [spec, d](std::span<const double> x, std::span<const double> e) {
    Vec y = apply(spec.A, x, d);
    for (int c = 0; c < d; ++c) y[c] += e[c];
    return y;
  };
  m.tail_map = [spec, d](std::span<const double> s, std::span<const double>) {
    return apply(spec.A, s, d);
  };
  m.init = [d](RngStream&) { return Vec(d, 0.0); };
  return m;
}

BftcSpec ar1_bftc(const Ar1Spec& raw, RngStream& gate_stream) {
  const Ar1Spec spec = make_ar1(raw.d, raw.alpha, raw.A, raw.lambda, raw.radial_scale);
  const int d = spec.d;
  const Ar1TailDecomposition dec = ar1_tail_decomposition(spec);
  const SpectralMeasure m0 = ar1_spectral_law(spec, dec);
  const SpectralMeasure lam = normalized_lambda(spec);

  const Eigen::MatrixXd a = to_matrix(spec.A, d);
  const bool invertible = std::abs(a.determinant()) > 0.0;
  Vec a_inv;
  if (invertible) a_inv = from_matrix(a.inverse());

  if (m0.is_atomic()) {
    AtomMeasure pf;
    pf.d = d;
    for (const auto& [u, w] : m0.atoms()) pf.atoms.push_back(Atom{u, apply(spec.A, u, d), w});
    const TailKernel fwd = kernel_from_atoms(canonicalize(pf));

    AtomMeasure pb;
    pb.d = d;
    for (const auto& [u, w] : m0.atoms()) {
      const double pi0 = std::clamp(lam.mass_at(u) / (dec.c_sum * m0.mass_at(u)), 0.0, 1.0);
      if (pi0 > 0.0) pb.atoms.push_back(Atom{u, Vec(d, 0.0), w * pi0});
      if (pi0 < 1.0) {
        if (!invertible)
          throw DomainError("backward kernel needs an invertible A where extinction is partial");
        pb.atoms.push_back(Atom{u, apply(a_inv, u, d), w * (1.0 - pi0)});
      }
    }
    const TailKernel bwd = kernel_from_atoms(canonicalize(pb));
    return BftcSpec::checked(TailIndex(spec.alpha), m0, fwd, bwd, gate_stream);
  }

  if (!invertible) throw DomainError("continuous innovation angle laws need an invertible A");
  auto mix = std::make_shared<MixtureDensity>(make_mixture(spec, dec));
  const double c_sum = dec.c_sum;
  const SpectralMeasure lam_copy = lam;
  const TailKernel fwd = TailKernel::analytic(
      d, [spec, d](std::span<const double> s, RngStream&) { return apply(spec.A, s, d); });
  const TailKernel bwd = TailKernel::analytic(
      d, [mix, lam_copy, a_inv, c_sum, d](std::span<const double> s, RngStream& g) {
        const double den = (*mix)(s);
        if (!(den > 1e-300))
          throw UnsupportedAngle("the angle law of M_0 has no mass at the requested angle");
        const double pi0 = std::clamp(lam_copy.density_at(s) / (c_sum * den), 0.0, 1.0);
        if (g.uniform() <= pi0) return Vec(static_cast<std::size_t>(d), 0.0);
        return apply(a_inv, s, d);
      });
  return BftcSpec::checked(TailIndex(spec.alpha), m0, fwd, bwd, gate_stream);
}

BftcSpec kesten_bftc(const KestenOrthogonalSpec& spec, RngStream& gate_stream) {
  RngStream check = gate_stream.child(20);
  validate_kesten(spec, check);
  const KestenBackwardLaw back = kesten_backward_increment(spec);
  const int d = spec.d;

  const SpectralMeasure m0 = SpectralMeasure::uniform(d);
  const TailKernel fwd =
      TailKernel::analytic(d, [spec, d](std::span<const double> s, RngStream& g) {
        const double r = spec.radial.sample(g);
        const Vec q = sample_haar_orthogonal(d, g);
        return scaled(apply(q, s, d), r);
      });
  const TailKernel bwd = TailKernel::analytic(
      d, [back, d](std::span<const double> s, RngStream& g) {
        const Vec m = back.sample_matrix(g);
        return apply(m, s, d);
      });
  return BftcSpec::checked(TailIndex(spec.alpha), m0, fwd, bwd, gate_stream);
}

namespace {

using nlohmann::json;

void check_common(const json& j, const std::string& at, std::vector<std::string>& out) {
  if (!j.contains("d") || !j.at("d").is_number_integer() || j.at("d").get<int>() < 1)
    out.push_back(at + "/d: required positive integer");
  if (!j.contains("alpha") || !j.at("alpha").is_number() || !(j.at("alpha").get<double>() > 0.0))
    out.push_back(at + "/alpha: required positive number");
}

void check_radial(const json& j, const std::string& at, std::vector<std::string>& out) {
  if (!j.is_object() || !j.contains("name") || !j.at("name").is_string()) {
    out.push_back(at + "/name: required string (lognormal, log-uniform, degenerate)");
    return;
  }
  const std::string name = j.at("name").get<std::string>();
  if (name == "lognormal") {
    if (!j.contains("sigma") || !j.at("sigma").is_number() || !(j.at("sigma").get<double>() > 0.0))
      out.push_back(at + "/sigma: required positive number");
  } else if (name == "log-uniform") {
    const bool lo_ok = j.contains("lo") && j.at("lo").is_number() && j.at("lo").get<double>() > 0.0;
    const bool hi_ok = j.contains("hi") && j.at("hi").is_number();
    if (!lo_ok) out.push_back(at + "/lo: required positive number");
    if (!hi_ok || (lo_ok && !(j.at("hi").get<double>() > j.at("lo").get<double>())))
      out.push_back(at + "/hi: required number greater than lo");
  } else if (name != "degenerate") {
    out.push_back(at + "/name: unknown radial law \"" + name + "\"");
  }
}

std::vector<double> parse_matrix(const json& j, int d, const std::string& at,
                                 std::vector<std::string>& out) {
  std::vector<double> a;
  if (d == 1 && j.is_number()) {
    a.push_back(j.get<double>());
    return a;
  }
  if (!j.is_array() || static_cast<int>(j.size()) != d) {
    out.push_back(at + ": required " + std::to_string(d) + " x " + std::to_string(d) +
                  " numeric matrix");
    return a;
  }
  for (const auto& row : j) {
    if (!row.is_array() || static_cast<int>(row.size()) != d) {
      out.push_back(at + ": required " + std::to_string(d) + " x " + std::to_string(d) +
                    " numeric matrix");
      return {};
    }
    for (const auto& x : row) {
      if (!x.is_number()) {
        out.push_back(at + ": matrix entries must be numbers");
        return {};
      }
      a.push_back(x.get<double>());
    }
  }
  return a;
}

void check_lambda(const json& j, int d, const std::string& at, std::vector<std::string>& out) {
  if (!j.is_object() || !j.contains("kind") || !j.at("kind").is_string()) {
    out.push_back(at + "/kind: required string (uniform or atomic)");
    return;
  }
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "uniform") return;
  if (kind != "atomic") {
    out.push_back(at + "/kind: unknown angle law \"" + kind + "\"");
    return;
  }
  if (!j.contains("atoms") || !j.at("atoms").is_array() || j.at("atoms").empty()) {
    out.push_back(at + "/atoms: required nonempty array");
    return;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < j.at("atoms").size(); ++i) {
    const std::string ai = at + "/atoms/" + std::to_string(i);
    const auto& atom = j.at("atoms")[i];
    if (!atom.is_object() || !atom.contains("s") || !atom.contains("w")) {
      out.push_back(ai + ": required object with \"s\" and \"w\"");
      continue;
    }
    if (!atom.at("s").is_array() || static_cast<int>(atom.at("s").size()) != d) {
      out.push_back(ai + "/s: required array of " + std::to_string(d) + " numbers");
      continue;
    }
    double sq = 0.0;
    bool numeric = true;
    for (const auto& x : atom.at("s")) {
      if (!x.is_number()) numeric = false;
      else sq += x.get<double>() * x.get<double>();
    }
    if (!numeric) {
      out.push_back(ai + "/s: entries must be numbers");
      continue;
    }
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-6)
      out.push_back(ai + "/s: must lie on the unit sphere (norm within 1e-6 of 1)");
    if (!atom.at("w").is_number() || !(atom.at("w").get<double>() >= 0.0))
      out.push_back(ai + "/w: required nonnegative number");
    else
      total += atom.at("w").get<double>();
  }
  if (std::abs(total - 1.0) > 1e-9)
    out.push_back(at + "/atoms: weights must sum to 1 (got " + std::to_string(total) + ")");
}

RadialLaw radial_from_json(const json& j, double alpha) {
  const std::string name = j.at("name").get<std::string>();
  if (name == "lognormal") return lognormal_radial(alpha, j.at("sigma").get<double>());
  if (name == "log-uniform")
    return log_uniform_radial(alpha, j.at("lo").get<double>(), j.at("hi").get<double>());
  return degenerate_radial();
}

SpectralMeasure lambda_from_json(const json& j, int d) {
  if (j.at("kind").get<std::string>() == "uniform") return SpectralMeasure::uniform(d);
  std::vector<std::pair<Vec, double>> atoms;
  for (const auto& atom : j.at("atoms"))
    atoms.emplace_back(atom.at("s").get<Vec>(), atom.at("w").get<double>());
  return SpectralMeasure::atomic(d, std::move(atoms));
}

}  // namespace

int ModelFile::dim() const { return kesten ? kesten->d : ar1->d; }

double ModelFile::alpha() const { return kesten ? kesten->alpha : ar1->alpha; }

ModelSpec ModelFile::model() const {
  return kesten ? kesten_model(*kesten) : ar1_model(*ar1);
}

BftcSpec ModelFile::bftc(RngStream& gate_stream) const {
  return kesten ? kesten_bftc(*kesten, gate_stream) : ar1_bftc(*ar1, gate_stream);
}

std::vector<std::string> model_json_diagnostics(const std::string& text,
                                                const std::string& pointer_prefix) {
  std::vector<std::string> out;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    out.push_back(pointer_prefix + ": JSON parse failed: " + e.what());
    return out;
  }
  if (!j.is_object()) {
    out.push_back(pointer_prefix + ": must be an object");
    return out;
  }
  if (!j.contains("type") || !j.at("type").is_string()) {
    out.push_back(pointer_prefix + "/type: required string (kesten or ar1)");
    return out;
  }
  const std::string type = j.at("type").get<std::string>();
  if (type != "kesten" && type != "ar1") {
    out.push_back(pointer_prefix + "/type: unknown model type \"" + type + "\"");
    return out;
  }
  check_common(j, pointer_prefix, out);
  if (!out.empty()) return out;
  const int d = j.at("d").get<int>();

  if (type == "kesten") {
    if (!j.contains("radial")) {
      out.push_back(pointer_prefix + "/radial: required object");
    } else {
      check_radial(j.at("radial"), pointer_prefix + "/radial", out);
    }
    if (j.contains("additive_scale") &&
        (!j.at("additive_scale").is_number() || !(j.at("additive_scale").get<double>() >= 0.0)))
      out.push_back(pointer_prefix + "/additive_scale: must be a nonnegative number");
    return out;
  }

  if (!j.contains("a")) {
    out.push_back(pointer_prefix + "/a: required matrix");
  } else {
    parse_matrix(j.at("a"), d, pointer_prefix + "/a", out);
  }
  if (!j.contains("lambda")) {
    out.push_back(pointer_prefix + "/lambda: required object");
  } else {
    check_lambda(j.at("lambda"), d, pointer_prefix + "/lambda", out);
    if (d > 2 && j.at("lambda").is_object() && j.at("lambda").value("kind", "") == "uniform")
      out.push_back(pointer_prefix +
                    "/lambda/kind: continuous angle laws are supported in dimension 2 only");
  }
  if (j.contains("innovation")) {
    const auto& innov = j.at("innovation");
    if (!innov.is_object() || innov.value("name", "") != "pareto-symmetric")
      out.push_back(pointer_prefix + "/innovation/name: only \"pareto-symmetric\" is available");
    else if (innov.contains("scale") &&
             (!innov.at("scale").is_number() || !(innov.at("scale").get<double>() > 0.0)))
      out.push_back(pointer_prefix + "/innovation/scale: must be a positive number");
  }
  return out;
}

ModelFile model_from_json_text(const std::string& text) {
  const std::vector<std::string> problems = model_json_diagnostics(text, "");
  if (!problems.empty()) {
    std::string msg = "invalid model";
    for (const auto& p : problems) msg += "; " + p;
    throw DomainError(msg);
  }
  const json j = json::parse(text);
  ModelFile file;
  file.type = j.at("type").get<std::string>();
  const int d = j.at("d").get<int>();
  const double alpha = j.at("alpha").get<double>();

  if (file.type == "kesten") {
    KestenOrthogonalSpec spec;
    spec.d = d;
    spec.alpha = alpha;
    spec.radial = radial_from_json(j.at("radial"), alpha);
    spec.additive_scale = j.value("additive_scale", 0.1);
    file.kesten = std::move(spec);
    return file;
  }

  std::vector<std::string> sink;
  Vec a = parse_matrix(j.at("a"), d, "", sink);
  SpectralMeasure lambda = lambda_from_json(j.at("lambda"), d);
  double scale = 1.0;
  if (j.contains("innovation")) scale = j.at("innovation").value("scale", 1.0);
  file.ar1 = make_ar1(d, alpha, std::move(a), std::move(lambda), scale);
  return file;
}

}  // namespace tailchain
