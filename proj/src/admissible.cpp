#include "tailchain/admissible.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "tailchain/errors.hpp"

namespace tailchain {

namespace {

std::vector<double> sphere_key(std::span<const double> s) {
  std::vector<double> k(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    k[i] = round12(s[i]);
    if (k[i] == 0.0) k[i] = 0.0;
  }
  return k;
}

// Per-sphere-point aggregates: marginal mass, pushed alpha-mass, and a
// representative coordinate vector for each point.
struct PointTotals {
  std::map<std::vector<double>, double> marginal;
  std::map<std::vector<double>, double> pushed;
  std::map<std::vector<double>, Vec> rep;
};

PointTotals aggregate(const AtomMeasure& p, double alpha) {
  PointTotals t;
  for (const Atom& a : p.atoms) {
    auto ks = sphere_key(a.s);
    t.marginal[ks] += a.w;
    if (!t.rep.count(ks)) t.rep[ks] = a.s;
    if (!is_zero(a.m)) {
      const double r = norm2(a.m);
      Vec dir(a.m.size());
      for (std::size_t i = 0; i < dir.size(); ++i) dir[i] = a.m[i] / r;
      auto km = sphere_key(dir);
      t.pushed[km] += a.w * std::pow(r, alpha);
      if (!t.rep.count(km)) t.rep[km] = dir;
    }
  }
  return t;
}

}  // namespace

AdmissibilityReport is_admissible(const AtomMeasure& p, const TailIndex& alpha, double tol) {
  if (!is_canonical(p)) throw NotCanonical("is_admissible requires a canonical measure");
  const PointTotals t = aggregate(p, alpha.value());

  AdmissibilityReport rep;
  for (const Atom& a : p.atoms)
    if (!is_zero(a.m)) rep.alpha_moment += a.w * std::pow(norm2(a.m), alpha.value());

  double worst = std::numeric_limits<double>::infinity();
  auto consider = [&](const std::vector<double>& key) {
    const auto im = t.marginal.find(key);
    const auto ip = t.pushed.find(key);
    const double marginal = im == t.marginal.end() ? 0.0 : im->second;
    const double pushed = ip == t.pushed.end() ? 0.0 : ip->second;
    worst = std::min(worst, marginal - pushed);
  };
  for (const auto& [key, _] : t.marginal) consider(key);
  for (const auto& [key, _] : t.pushed) consider(key);

  rep.worst_set_slack = worst;
  rep.admissible = worst >= -tol;
  return rep;
}

AtomMeasure adjoint(const AtomMeasure& p, const TailIndex& alpha, double tol) {
  if (!is_canonical(p)) throw NotCanonical("adjoint requires a canonical measure");
  const double a = alpha.value();
  const PointTotals t = aggregate(p, a);

  AtomMeasure out;
  out.d = p.d;

  // Mapped atoms from the nonzero part.
  for (const Atom& at : p.atoms) {
    if (is_zero(at.m)) continue;
    const double r = norm2(at.m);
    Atom b;
    b.s.resize(p.d);
    b.m.resize(p.d);
    for (int c = 0; c < p.d; ++c) {
      b.s[c] = at.m[c] / r;
      b.m[c] = at.s[c] / r;
    }
    b.w = at.w * std::pow(r, a);
    out.atoms.push_back(std::move(b));
  }

  // Zero part: the admissibility slack at each sphere point.
  std::map<std::vector<double>, double> slack;
  for (const auto& [key, m] : t.marginal) slack[key] += m;
  for (const auto& [key, m] : t.pushed) slack[key] -= m;
  for (const auto& [key, s] : slack) {
    if (s < -tol) throw NotAdmissible("adjoint of a non-admissible measure");
    if (s <= 1e-13) continue;  // numerically zero slack carries no atom
    Atom z;
    z.s = t.rep.at(key);
    z.m.assign(p.d, 0.0);
    z.w = s;
    out.atoms.push_back(std::move(z));
  }

  return canonicalize(out);
}

double adjoint_expectation(
    const std::function<double(std::span<const double>, std::span<const double>)>& f,
    const AtomMeasure& p, const TailIndex& alpha) {
  if (!is_canonical(p)) throw NotCanonical("adjoint_expectation requires a canonical measure");
  const double a = alpha.value();
  double acc = 0.0;
  Vec s_star(p.d), m_star(p.d);
  for (const Atom& at : p.atoms) {
    if (is_zero(at.m)) continue;
    const double r = norm2(at.m);
    for (int c = 0; c < p.d; ++c) {
      s_star[c] = at.m[c] / r;
      m_star[c] = at.s[c] / r;
    }
    acc += at.w * std::pow(r, a) * f(s_star, m_star);
  }
  return acc;
}

AdjointPair check_pair(const AtomMeasure& p, const AtomMeasure& p_star,
                       const TailIndex& alpha, double tol) {
  const auto rep_p = is_admissible(p, alpha, 1e-9);
  const auto rep_q = is_admissible(p_star, alpha, 1e-9);
  if (!rep_p.admissible) throw NotAdmissible("first measure of the pair is not admissible");
  if (!rep_q.admissible) throw NotAdmissible("second measure of the pair is not admissible");

  // Shared sphere marginal.
  std::map<std::vector<double>, double> ma, mb;
  for (const Atom& a : p.atoms) ma[sphere_key(a.s)] += a.w;
  for (const Atom& a : p_star.atoms) mb[sphere_key(a.s)] += a.w;
  if (ma.size() != mb.size()) throw KernelMismatch("sphere marginals have different supports");
  for (const auto& [key, w] : ma) {
    const auto it = mb.find(key);
    if (it == mb.end() || std::abs(it->second - w) > tol)
      throw KernelMismatch("sphere marginals differ");
  }

  if (!measures_close(adjoint(p, alpha, 1e-9), p_star, tol))
    throw KernelMismatch("adjoint of the first measure is not the second");
  if (!measures_close(adjoint(p_star, alpha, 1e-9), p, tol))
    throw KernelMismatch("adjoint of the second measure is not the first");

  return AdjointPair{p, p_star, alpha.value()};
}

AtomMeasure random_admissible(int d, int max_atoms, const TailIndex& alpha, RngStream& rng) {
  if (max_atoms < 2) throw DomainError("random_admissible needs room for at least two atoms");
  const double a = alpha.value();

  // Sphere point pool with distinct rounded keys.
  const int pool_size = d == 1 ? 2 : 2 + static_cast<int>(rng.uniform_below(4));
  std::vector<Vec> pool;
  std::map<std::vector<double>, bool> seen;
  while (static_cast<int>(pool.size()) < pool_size) {
    Vec u = sample_uniform_sphere(d, rng);
    auto key = sphere_key(u);
    if (seen.count(key)) continue;
    seen[key] = true;
    pool.push_back(std::move(u));
  }

  AtomMeasure raw;
  raw.d = d;
  // One zero atom per pool point guarantees positive marginal mass everywhere
  // an m-direction can land, so a common rescale can always fix the slack.
  for (const Vec& u : pool) raw.atoms.push_back(Atom{u, Vec(d, 0.0), 0.05 + rng.uniform()});

  const int extra = static_cast<int>(rng.uniform_below(
      static_cast<std::uint64_t>(max_atoms - pool.size()) + 1));
  for (int i = 0; i < extra; ++i) {
    const Vec& s = pool[rng.uniform_below(pool.size())];
    Atom at{s, Vec(d, 0.0), 0.05 + rng.uniform()};
    if (rng.uniform_co() < 0.8) {
      const Vec& dir = pool[rng.uniform_below(pool.size())];
      const double r = std::exp(0.7 * rng.normal());
      at.m = scaled(dir, r);
    }
    raw.atoms.push_back(std::move(at));
  }

  double total = 0.0;
  for (const Atom& at : raw.atoms) total += at.w;
  for (Atom& at : raw.atoms) at.w /= total;
  AtomMeasure p = canonicalize(raw);

  // Common rescale of the m-vectors until every pushed/marginal ratio is the
  // drawn target < 1.
  const PointTotals t = aggregate(p, a);
  double rho = 0.0;
  for (const auto& [key, pushed] : t.pushed) {
    const double marginal = t.marginal.at(key);  // guaranteed by pool zero atoms
    rho = std::max(rho, pushed / marginal);
  }
  if (rho > 0.0) {
    const double target = 0.3 + 0.65 * rng.uniform_co();
    const double c = std::pow(target / rho, 1.0 / a);
    for (Atom& at : p.atoms)
      for (double& v : at.m) v *= c;
    p = canonicalize(p);
  }
  return p;
}

}  // namespace tailchain
