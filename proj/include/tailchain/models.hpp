#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tailchain/kernels.hpp"
#include "tailchain/markov.hpp"
#include "tailchain/measures.hpp"
#include "tailchain/rng.hpp"
#include "tailchain/vecmath.hpp"

namespace tailchain {

// Named law of the positive multiplicative factor R, scaled so E[R^alpha] = 1.
// Registry names: "lognormal", "log-uniform", "degenerate".
struct RadialLaw {
  std::string name;
  bool degenerate = false;  // point mass at 1; density is null
  std::function<double(double)> density;
  std::function<double(RngStream&)> sample;
  double support_lo = 1.0;  // density negligible outside [support_lo, support_hi]
  double support_hi = 1.0;
};

RadialLaw lognormal_radial(double alpha, double sigma);             // log-mean -alpha sigma^2/2
RadialLaw log_uniform_radial(double alpha, double lo, double hi);   // log-uniform, moment-rescaled
RadialLaw degenerate_radial();                                      // R == 1

// X_t = R_t Q_t X_{t-1} + B_t with Q Haar-orthogonal and B Gaussian of the
// given scale. The tail index of the stationary law is alpha because R is
// scaled to E[R^alpha] = 1.
struct KestenOrthogonalSpec {
  int d = 1;
  double alpha = 1.0;
  RadialLaw radial;
  double additive_scale = 0.1;
};

// Flat row-major d x d Haar-orthogonal matrix (QR of a Gaussian matrix with
// the sign fix; a fair coin on {+1, -1} in d = 1).
Vec sample_haar_orthogonal(int d, RngStream& stream);

// Construction-time checks: E[R^alpha] = 1 within a 0.999 CI at n = 1e5
// (throws NotNormalized) and Q'Q = I within 1e-10 on sampled rotations
// (throws DomainError).
void validate_kesten(const KestenOrthogonalSpec& spec, RngStream& stream);

// Backward multiplicative increment R* Q*: the radius has density
// f_{R*}(y) = f_R(1/y) y^-(2+alpha), sampled by inverse CDF on a log-spaced
// grid of 2^14 intervals; Q* is the transpose of an independent Q draw.
struct KestenBackwardLaw {
  bool degenerate = false;  // R* == 1
  std::function<double(double)> density;
  std::function<double(double)> cdf;             // from the same quadrature grid
  std::function<double(RngStream&)> sample_radius;
  std::function<Vec(RngStream&)> sample_matrix;  // flat d x d, R* times Q*
  double integral = 1.0;                         // quadrature check of the density
};

// Throws NotNormalized when the density integral misses 1 by more than 1e-6.
KestenBackwardLaw kesten_backward_increment(const KestenOrthogonalSpec& spec);

// Max over a battery of coordinate polynomials f of the paired Monte Carlo gap
//   | E f(AC/||AC||) ||AC||^alpha  -  E f(C) |,   A = R Q,  C uniform.
// detail receives one (estimate, 0.99 CI half-width) entry per battery member.
double kesten_spectral_fixedpoint_gap(const KestenOrthogonalSpec& spec, long n, RngStream& stream,
                                      std::vector<GapEstimate>* detail = nullptr);

// One draw of (AC/||AC||, C/||AC||) with importance weight ||AC||^alpha: the
// adjoint one-step law for a general angle law of C, usable with multinomial
// resampling. No product-form guarantee when C is not uniform.
struct WeightedAdjointDraw {
  Vec angle;
  Vec value;
  double weight = 0.0;
};

WeightedAdjointDraw kesten_general_adjoint_draw(const KestenOrthogonalSpec& spec,
                                                const SpectralMeasure& c_law, RngStream& stream);

// X_t = A X_{t-1} + B_t with some power of A contractive on the sphere and
// regularly varying innovations B = radial_scale * Pareto(alpha) * Theta,
// Theta from the angle law lambda.
struct Ar1Spec {
  int d = 1;
  double alpha = 1.0;
  Vec A;  // row-major d x d
  SpectralMeasure lambda = SpectralMeasure::uniform(1);
  double radial_scale = 1.0;
};

// Validates shapes and converts the d = 1 uniform angle law to its exact
// atomic form (the fair coin on {+1, -1}).
Ar1Spec make_ar1(int d, double alpha, Vec A, SpectralMeasure lambda, double radial_scale = 1.0);

// Least m <= 64 with ||A^m||_2 < 1; throws NoContraction.
int contraction_power(const Ar1Spec& spec);

// Weights of the mixture over the age N of the last big innovation:
// c_n integrates ||A^n theta||^alpha against lambda, p_n = c_n / sum c_k.
struct Ar1TailDecomposition {
  std::vector<double> c;
  std::vector<double> p;         // renormalized; sums to exactly 1
  int n_max = 0;                 // last retained index
  double remainder = 0.0;        // relative bound on the truncated tail of sum c_n
  double c_sum = 0.0;            // sum of retained c_n
  std::vector<double> op_norm;   // ||A^n||_2 for n = 0..n_max
};

// Truncates when the geometric tail bound falls below 1e-12 of the running
// sum; throws NoContraction when no power of A up to 64 contracts.
Ar1TailDecomposition ar1_tail_decomposition(const Ar1Spec& spec);

// Age and pre-limit angle of one spectral-process draw:
// M_{-n} = theta / (nothing before -n), M_{-n+t} = A^t theta, so M_0 = A^n theta
// lands on the unit sphere.
struct Ar1SpectralSample {
  int n = 0;
  Vec theta;
};

// Draws N from p, then Theta from the alpha-reweighted pushforward of lambda
// (exact for atomic lambda, rejection for a continuous one; throws
// RejectionStall below acceptance rate 1e-4).
Ar1SpectralSample ar1_spectral_sampler(const Ar1Spec& spec, const Ar1TailDecomposition& dec,
                                       RngStream& stream);

Vec ar1_power_apply(const Ar1Spec& spec, int n, std::span<const double> v);  // A^n v

// Marginal law of M_0 = A^N Theta: the mixture sum p_n lambda_n. Atomic lambda
// yields an exact atomic law; continuous lambda (dimension 2 only) yields a
// density sampled by rejection.
SpectralMeasure ar1_spectral_law(const Ar1Spec& spec, const Ar1TailDecomposition& dec);

// Extinction probability of the backward chain at angle s:
// (1 / sum c_k) * f_lambda(s) / f_Y(s) with f_Y the density (or pmf) of the
// angle law above. Throws UnsupportedAngle where f_Y vanishes.
double ar1_backward_zero_prob(const Ar1Spec& spec, const Ar1TailDecomposition& dec,
                              const UnitVector& s);

// Simulation-ready recursions. Noise layout: kesten [R | Q (d*d) | B (d)],
// ar1 [B (d)]. Both start at zero and rely on burn-in.
ModelSpec kesten_model(const KestenOrthogonalSpec& spec);
ModelSpec ar1_model(const Ar1Spec& spec);

// Checked back-and-forth tail chains. The AR(1) chain with atomic lambda is
// fully atomic and passes the exact adjointness gate; the Kesten chain is
// analytic and passes the statistical gate. Both throw KernelMismatch on
// failure.
BftcSpec ar1_bftc(const Ar1Spec& spec, RngStream& gate_stream);
BftcSpec kesten_bftc(const KestenOrthogonalSpec& spec, RngStream& gate_stream);

// Model files: {"type": "kesten"|"ar1", "d": int, "alpha": float, ...} with
// radial densities referenced by registry name.
struct ModelFile {
  std::string type;
  std::optional<KestenOrthogonalSpec> kesten;
  std::optional<Ar1Spec> ar1;

  int dim() const;
  double alpha() const;
  ModelSpec model() const;
  BftcSpec bftc(RngStream& gate_stream) const;
};

// Parses and validates; throws DomainError citing the offending JSON pointer.
ModelFile model_from_json_text(const std::string& text);

// Non-throwing validation; returns one "pointer: message" line per problem,
// prefixed by pointer_prefix (e.g. "/model").
std::vector<std::string> model_json_diagnostics(const std::string& text,
                                                const std::string& pointer_prefix);

}  // namespace tailchain
