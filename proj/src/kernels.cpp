#include "tailchain/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "tailchain/diagnostics.hpp"
#include "tailchain/errors.hpp"
#include "tailchain/parallel.hpp"

namespace tailchain {

namespace {

std::vector<double> angle_key(std::span<const double> s) {
  std::vector<double> k(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    k[i] = round12(s[i]);
    if (k[i] == 0.0) k[i] = 0.0;
  }
  return k;
}

}  // namespace

TailKernel TailKernel::analytic(int d,
                                std::function<Vec(std::span<const double>, RngStream&)> sampler) {
  if (d < 1) throw DimensionMismatch("kernel dimension must be at least 1");
  TailKernel k;
  k.kind_ = Kind::ModelAnalytic;
  k.d_ = d;
  k.sampler_ = std::move(sampler);
  return k;
}

TailKernel kernel_from_atoms(const AtomMeasure& p) {
  if (!is_canonical(p)) throw NotCanonical("kernel_from_atoms requires a canonical measure");
  TailKernel k;
  k.kind_ = TailKernel::Kind::AtomicConditional;
  k.d_ = p.d;
  for (const Atom& a : p.atoms) {
    auto key = angle_key(a.s);
    auto& row = k.table_[key];
    if (row.atoms.empty()) row.angle = a.s;
    row.atoms.emplace_back(a.m, a.w);
  }
  for (auto& [key, row] : k.table_) {
    double total = 0.0;
    for (auto& [m, w] : row.atoms) total += w;
    double acc = 0.0;
    for (auto& [m, w] : row.atoms) {
      w /= total;
      acc += w;
      row.cdf.push_back(acc);
    }
    row.cdf.back() = 1.0;
  }
  return k;
}

// Angle lookup with a tight nearest-point fallback: path angles are recomputed
// numerically, so an exact 12-digit key match can miss by one grid step.
const TailKernel::Row* TailKernel::find_row(std::span<const double> s) const {
  const auto it = table_.find(angle_key(s));
  if (it != table_.end()) return &it->second;
  const Row* best = nullptr;
  double best_d = 1e-9;
  for (const auto& [key, row] : table_) {
    const double dd = dist2(row.angle, s);
    if (dd < best_d) {
      best_d = dd;
      best = &row;
    }
  }
  return best;
}

Vec TailKernel::sample(std::span<const double> s, RngStream& rng) const {
  if (static_cast<int>(s.size()) != d_) throw DimensionMismatch("kernel angle has wrong dimension");
  if (kind_ == Kind::ModelAnalytic) return sampler_(s, rng);
  const Row* row = find_row(s);
  if (!row) throw UnknownAngle("kernel has no conditional mass at the requested angle");
  const double u = rng.uniform();
  const auto it = std::lower_bound(row->cdf.begin(), row->cdf.end(), u);
  const std::size_t i = std::min<std::size_t>(it - row->cdf.begin(), row->atoms.size() - 1);
  return row->atoms[i].first;
}

const std::vector<std::pair<Vec, double>>& TailKernel::conditional_at(
    std::span<const double> s) const {
  if (kind_ != Kind::AtomicConditional)
    throw DomainError("conditional table only exists for atomic kernels");
  const Row* row = find_row(s);
  if (!row) throw UnknownAngle("kernel has no conditional mass at the requested angle");
  return row->atoms;
}

std::vector<Vec> TailKernel::support() const {
  if (kind_ != Kind::AtomicConditional)
    throw DomainError("support enumeration only exists for atomic kernels");
  std::vector<Vec> out;
  out.reserve(table_.size());
  for (const auto& [key, row] : table_) out.push_back(row.angle);
  return out;
}

std::span<const double> TailChainPath::at(int j) const {
  if (j < -s || j > t) throw DomainError("path index outside [-s, t]");
  return std::span<const double>(values.data() + static_cast<std::size_t>(j + s) * d, d);
}

TestFunctional::TestFunctional(std::string name, double bound,
                               std::function<double(const PathWindow&)> fn)
    : name_(std::move(name)), bound_(bound), fn_(std::move(fn)) {
  if (!(bound > 0.0) || !std::isfinite(bound)) throw DomainError("functional bound must be positive");
}

double TestFunctional::operator()(const PathWindow& w) const {
  if (w.block_is_zero(0)) return 0.0;
  const double v = fn_(w);
  if (!std::isfinite(v) || std::abs(v) > bound_ + 1e-12)
    throw UnboundedFunctional("functional \"" + name_ + "\" exceeded its declared bound");
  return v;
}

std::vector<TestFunctional> standard_functionals() {
  std::vector<TestFunctional> fs;
  fs.emplace_back("survive_first", 1.0, [](const PathWindow&) { return 1.0; });
  fs.emplace_back("clip_norm_first", 2.0, [](const PathWindow& w) {
    return std::min(norm2(w.block(0)), 2.0);
  });
  fs.emplace_back("first_coord_clipped", 1.5, [](const PathWindow& w) {
    return std::clamp(w.block(0)[0], -1.5, 1.5);
  });
  fs.emplace_back("clip_norm_last", 3.0, [](const PathWindow& w) {
    return std::min(norm2(w.block(w.blocks() - 1)), 3.0);
  });
  fs.emplace_back("both_ends_alive", 1.0, [](const PathWindow& w) {
    return w.block_is_zero(w.blocks() - 1) ? 0.0 : 1.0;
  });
  return fs;
}

namespace {

// Joint law of (angle, kernel draw) for fully atomic specs.
AtomMeasure atomic_joint(const SpectralMeasure& m0, const TailKernel& k) {
  AtomMeasure j;
  j.d = m0.dim();
  for (const auto& [u, w] : m0.atoms()) {
    for (const auto& [m, q] : k.conditional_at(u)) {
      if (w * q <= 0.0) continue;
      j.atoms.push_back(Atom{u, m, w * q});
    }
  }
  return canonicalize(j);
}

constexpr long kGateN = 10000;
constexpr int kGatePerms = 999;
constexpr double kGateLevel = 1e-3;
constexpr std::size_t kGateMaxPoints = 1500;

void statistical_gate(const TailIndex& alpha, const SpectralMeasure& m0, const TailKernel& fwd,
                      const TailKernel& bwd, RngStream& gate) {
  const int d = m0.dim();
  const double a = alpha.value();

  // Forward draws and their alpha-weights.
  RngStream fs = gate.child(10);
  std::vector<double> fwd_pairs(kGateN * 2 * d);
  std::vector<double> wts(kGateN);
  for (long i = 0; i < kGateN; ++i) {
    const Vec s = m0.sample(fs);
    const Vec m = fwd.sample(s, fs);
    std::memcpy(fwd_pairs.data() + i * 2 * d, s.data(), d * sizeof(double));
    std::memcpy(fwd_pairs.data() + i * 2 * d + d, m.data(), d * sizeof(double));
    wts[i] = is_zero(m) ? 0.0 : std::pow(norm2(m), a);
  }

  // Backward draws; zeros counted, survivors kept as (angle, value) rows.
  RngStream bs = gate.child(11);
  std::vector<double> bwd_rows;
  long zeros = 0;
  for (long i = 0; i < kGateN; ++i) {
    const Vec s = m0.sample(bs);
    const Vec m = bwd.sample(s, bs);
    if (is_zero(m)) {
      ++zeros;
      continue;
    }
    bwd_rows.insert(bwd_rows.end(), s.begin(), s.end());
    bwd_rows.insert(bwd_rows.end(), m.begin(), m.end());
  }

  // Zero-mass consistency: the adjoint's total zero mass is 1 - E||M1||^alpha.
  const MeanCi kappa = mean_ci(wts, 0.999);
  const double zhat = static_cast<double>(zeros) / kGateN;
  const double target = std::max(0.0, 1.0 - kappa.mean);
  const double se_z = std::sqrt(std::max(zhat * (1.0 - zhat), 1e-12) / kGateN);
  const double z999 = normal_quantile(0.9995);
  if (std::abs(zhat - target) > kappa.half + z999 * se_z + 1e-9)
    throw KernelMismatch("backward kernel extinction mass does not match the adjoint zero mass");

  // Distributional check on the nonzero part: backward pairs vs the
  // alpha-weighted resample of the mapped forward pairs.
  const std::size_t n_b = bwd_rows.size() / (2 * d);
  if (n_b < 100) return;  // extinction-dominated; the zero check binds
  RngStream rs = gate.child(12);
  const std::vector<std::size_t> pick = multinomial_resample(wts, n_b, rs);
  std::vector<double> adj_rows(n_b * 2 * d);
  for (std::size_t i = 0; i < n_b; ++i) {
    const double* src = fwd_pairs.data() + pick[i] * 2 * d;
    const double* s = src;
    const double* m = src + d;
    const double r = norm2(std::span<const double>(m, d));
    double* dst = adj_rows.data() + i * 2 * d;
    for (int c = 0; c < d; ++c) dst[c] = m[c] / r;
    for (int c = 0; c < d; ++c) dst[d + c] = s[c] / r;
  }

  RngStream ps = gate.child(13);
  const TwoSampleResult res = energy_permutation_test(
      bwd_rows, n_b, adj_rows, n_b, 2 * d, kGatePerms, ps, kGateMaxPoints, kGateLevel);
  // With 999 replicates the smallest attainable p is exactly 1e-3, so the
  // non-strict comparison makes this an exact level-1e-3 test; a strict one
  // could never reject.
  if (res.p_value <= kGateLevel)
    throw KernelMismatch("backward kernel fails the adjointness permutation test (p = " +
                         std::to_string(res.p_value) + ")");
}

}  // namespace

BftcSpec BftcSpec::checked(const TailIndex& alpha, SpectralMeasure m0, TailKernel forward,
                           TailKernel backward, RngStream& gate_stream) {
  if (m0.dim() != forward.dim() || m0.dim() != backward.dim())
    throw DimensionMismatch("angle law and kernels disagree on dimension");

  const bool all_atomic = m0.is_atomic() &&
                          forward.kind() == TailKernel::Kind::AtomicConditional &&
                          backward.kind() == TailKernel::Kind::AtomicConditional;
  if (all_atomic) {
    AtomMeasure pf, pb;
    try {
      pf = atomic_joint(m0, forward);
      pb = atomic_joint(m0, backward);
    } catch (const UnknownAngle& e) {
      throw KernelMismatch(std::string("kernel support does not cover the angle law: ") + e.what());
    }
    const auto rep = is_admissible(pf, alpha, 1e-9);
    if (!rep.admissible)
      throw KernelMismatch("forward one-step law is not admissible (slack " +
                           std::to_string(rep.worst_set_slack) + ")");
    try {
      if (!measures_equivalent(adjoint(pf, alpha, 1e-9), pb, 1e-9) ||
          !measures_equivalent(adjoint(pb, alpha, 1e-9), pf, 1e-9))
        throw KernelMismatch("forward and backward one-step laws are not mutually adjoint");
    } catch (const NotAdmissible& e) {
      throw KernelMismatch(std::string("one-step law admits no adjoint: ") + e.what());
    }
  } else {
    statistical_gate(alpha, m0, forward, backward, gate_stream);
  }
  return BftcSpec(alpha.value(), std::move(m0), std::move(forward), std::move(backward));
}

BftcSpec BftcSpec::reversed() const {
  // Adjointness is symmetric, so the swapped spec needs no second gate.
  return BftcSpec(alpha_, m0_, bwd_, fwd_);
}

TailChainPath forward_chain(
    const UnitVector& m0,
    const std::function<Vec(std::span<const double>, const Vec&)>& phi,
    const std::function<Vec(RngStream&)>& noise, int t, RngStream& stream) {
  if (t < 0) throw DomainError("forward horizon must be nonnegative");
  const int d = m0.dim();
  TailChainPath path;
  path.s = 0;
  path.t = t;
  path.d = d;
  path.values.assign(static_cast<std::size_t>(t + 1) * d, 0.0);
  std::memcpy(path.values.data(), m0.coords().data(), d * sizeof(double));

  for (int j = 1; j <= t; ++j) {
    const double* prev = path.values.data() + static_cast<std::size_t>(j - 1) * d;
    double* cur = path.values.data() + static_cast<std::size_t>(j) * d;
    const std::span<const double> pv(prev, d);
    if (is_zero(pv)) {
      if (!path.absorbed_fwd) path.absorbed_fwd = j - 1;
      continue;  // rows are zero-initialized
    }
    const double r = norm2(pv);
    Vec unit(d);
    for (int c = 0; c < d; ++c) unit[c] = prev[c] / r;
    const Vec e = noise(stream);
    const Vec step = phi(unit, e);
    if (static_cast<int>(step.size()) != d)
      throw DimensionMismatch("tail map returned a vector of the wrong dimension");
    for (int c = 0; c < d; ++c) cur[c] = r * step[c];
    if (is_zero(std::span<const double>(cur, d)) && !path.absorbed_fwd) path.absorbed_fwd = j;
  }
  return path;
}

namespace {

// One BFTC path into a flat row buffer: rows 0..back+fwd, row k = M_{k-back}.
// m0 comes from rep.child(0), backward steps from rep.child(1), forward steps
// from rep.child(2); the two extensions are independent given M_0.
void sample_path_flat(const BftcSpec& spec, int back, int fwd, RngStream& rep, double* buf,
                      std::optional<int>& absorbed_back, std::optional<int>& absorbed_fwd) {
  const int d = spec.dim();
  const std::size_t row = static_cast<std::size_t>(d);
  std::fill(buf, buf + (back + fwd + 1) * row, 0.0);

  RngStream ms = rep.child(0);
  const Vec m0 = spec.m0_law().sample(ms);
  std::memcpy(buf + back * row, m0.data(), d * sizeof(double));

  Vec unit(d);
  auto step = [&](const TailKernel& k, const double* prev, double* cur, RngStream& rng) {
    const std::span<const double> pv(prev, d);
    if (is_zero(pv)) return false;
    const double r = norm2(pv);
    for (int c = 0; c < d; ++c) unit[c] = prev[c] / r;
    const Vec m = k.sample(unit, rng);
    for (int c = 0; c < d; ++c) cur[c] = r * m[c];
    return !is_zero(std::span<const double>(cur, d));
  };

  RngStream bs = rep.child(1);
  for (int j = 1; j <= back; ++j) {
    double* cur = buf + (back - j) * row;
    const double* prev = buf + (back - j + 1) * row;
    if (!step(spec.backward(), prev, cur, bs)) {
      if (!absorbed_back) absorbed_back = -j;
      // absorbed: remaining backward rows stay zero
      for (int jj = j + 1; jj <= back; ++jj) std::fill_n(buf + (back - jj) * row, d, 0.0);
      break;
    }
  }

  RngStream fs = rep.child(2);
  for (int j = 1; j <= fwd; ++j) {
    double* cur = buf + (back + j) * row;
    const double* prev = buf + (back + j - 1) * row;
    if (!step(spec.forward(), prev, cur, fs)) {
      if (!absorbed_fwd) absorbed_fwd = j;
      for (int jj = j + 1; jj <= fwd; ++jj) std::fill_n(buf + (back + jj) * row, d, 0.0);
      break;
    }
  }
}

}  // namespace

TailChainPath sample_bftc(const BftcSpec& spec, int s, int t, RngStream& stream) {
  if (s < 0 || t < 0) throw DomainError("horizons must be nonnegative");
  TailChainPath path;
  path.s = s;
  path.t = t;
  path.d = spec.dim();
  path.values.assign(static_cast<std::size_t>(s + t + 1) * spec.dim(), 0.0);
  sample_path_flat(spec, s, t, stream, path.values.data(), path.absorbed_back,
                   path.absorbed_fwd);
  return path;
}

std::vector<double> sample_bftc_rows(const BftcSpec& spec, int s, int t, long n,
                                     RngStream& stream) {
  if (s < 0 || t < 0) throw DomainError("horizons must be nonnegative");
  if (n < 1) throw DomainError("path count must be positive");
  const int d = spec.dim();
  const std::size_t row = static_cast<std::size_t>(s + t + 1) * d;
  std::vector<double> rows(static_cast<std::size_t>(n) * row);
  parallel_for_except(n, [&](std::int64_t r) {
    RngStream rep = stream.child(static_cast<std::uint64_t>(r));
    std::optional<int> ab, af;
    sample_path_flat(spec, s, t, rep, rows.data() + r * row, ab, af);
  });
  return rows;
}

namespace {

std::vector<GapEstimate> timechange_family_impl(const TestFunctional& f, const BftcSpec& spec,
                                                int s, int t, long n, RngStream& stream,
                                                bool parallel) {
  if (s < 0 || t < 0) throw DomainError("horizons must be nonnegative");
  if (n < 2) throw DomainError("estimator needs at least two paths");
  const int d = spec.dim();
  const double a = spec.alpha();
  const int back = s, fwd = t + s;         // one horizon serves every member
  const int win = s + 1 + t;               // blocks per functional window
  const std::size_t prow = static_cast<std::size_t>(back + fwd + 1) * d;

  // vals[i * n + r]: member i evaluated on replicate r.
  std::vector<double> vals(static_cast<std::size_t>(s + 1) * n);

  auto body = [&](std::int64_t r) {
    RngStream rep = stream.child(static_cast<std::uint64_t>(r));
    std::vector<double> buf(prow);
    std::vector<double> window(static_cast<std::size_t>(win) * d);
    std::optional<int> ab, af;
    sample_path_flat(spec, back, fwd, rep, buf.data(), ab, af);
    for (int i = 0; i <= s; ++i) {
      const double* mi = buf.data() + static_cast<std::size_t>(s + i) * d;
      const std::span<const double> mv(mi, d);
      double& out = vals[static_cast<std::size_t>(i) * n + r];
      if (is_zero(mv)) {
        out = 0.0;
        continue;
      }
      const double nm = norm2(mv);
      const double w = std::pow(nm, a);
      const double* start = buf.data() + static_cast<std::size_t>(i) * d;
      for (std::size_t k = 0; k < window.size(); ++k) window[k] = start[k] / nm;
      out = w * f(PathWindow(window.data(), win, d));
    }
  };

  if (parallel) {
    parallel_for_except(n, body);
  } else {
    for (long r = 0; r < n; ++r) body(r);
  }

  const double z = normal_quantile(0.995);
  std::vector<GapEstimate> out(s + 1);
  for (int i = 0; i <= s; ++i) {
    const double* v = vals.data() + static_cast<std::size_t>(i) * n;
    double mean = 0.0;
    for (long r = 0; r < n; ++r) mean += v[r];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (long r = 0; r < n; ++r) ss += (v[r] - mean) * (v[r] - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    out[i] = GapEstimate{mean, z * sd / std::sqrt(static_cast<double>(n))};
  }
  return out;
}

}  // namespace

std::vector<GapEstimate> timechange_family(const TestFunctional& f, const BftcSpec& spec, int s,
                                           int t, long n, RngStream& stream) {
  return timechange_family_impl(f, spec, s, t, n, stream, true);
}

std::vector<GapEstimate> timechange_family_serial(const TestFunctional& f, const BftcSpec& spec,
                                                  int s, int t, long n, RngStream& stream) {
  return timechange_family_impl(f, spec, s, t, n, stream, false);
}

GapEstimate timechange_gap(const TestFunctional& f, const BftcSpec& spec, int s, int t, int i,
                           long n, RngStream& stream) {
  if (i < 0 || i > s) throw DomainError("family index must lie in 0..s");
  return timechange_family(f, spec, s, t, n, stream)[i];
}

}  // namespace tailchain
