#include "tailchain/measures.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <nlohmann/json.hpp>

#include "tailchain/errors.hpp"

namespace tailchain {

TailIndex::TailIndex(double a) : a_(a) {
  if (!(a > 0.0) || !std::isfinite(a)) throw DomainError("tail index must be a finite positive number");
}

UnitVector UnitVector::of(Vec coords) {
  if (!all_finite(coords)) throw DomainError("unit vector has non-finite coordinates");
  const double r = norm2(coords);
  if (r == 0.0) throw ZeroVector("cannot treat the zero vector as a direction");
  if (std::abs(r - 1.0) > 1e-6) throw DomainError("vector is not on the unit sphere");
  for (double& c : coords) c /= r;
  return UnitVector(std::move(coords));
}

UnitVector UnitVector::normalized(Vec coords) {
  if (!all_finite(coords)) throw DomainError("vector has non-finite coordinates");
  const double r = norm2(coords);
  if (r == 0.0) throw ZeroVector("cannot normalize the zero vector");
  for (double& c : coords) c /= r;
  return UnitVector(std::move(coords));
}

std::pair<UnitVector, double> polar(std::span<const double> x) {
  if (!all_finite(x)) throw DomainError("polar: non-finite input");
  const double r = norm2(x);
  if (r == 0.0) throw ZeroVector("polar decomposition of the zero vector");
  Vec s(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) s[i] = x[i] / r;
  return {UnitVector::normalized(std::move(s)), r};
}

double sample_pareto(const TailIndex& alpha, double u) {
  if (!(u > 0.0) || u > 1.0) throw DomainError("pareto sample needs u in (0, 1]");
  return std::pow(u, -1.0 / alpha.value());
}

double round12(double x) {
  // nearbyint on the scaled value; exact integer grid up to ~9e3 magnitude,
  // degrades gracefully (but deterministically) beyond that.
  return std::nearbyint(x * 1e12);
}

namespace {

std::vector<double> atom_key(const Atom& a) {
  std::vector<double> k;
  k.reserve(a.s.size() + a.m.size());
  for (double c : a.s) k.push_back(round12(c));
  for (double c : a.m) k.push_back(round12(c));
  // -0.0 and 0.0 compare equal but serialize differently; collapse.
  for (double& c : k)
    if (c == 0.0) c = 0.0;
  return k;
}

constexpr double kDropWeight = 1e-14;

}  // namespace

AtomMeasure canonicalize(const AtomMeasure& raw) {
  if (raw.d < 1) throw DimensionMismatch("measure dimension must be at least 1");
  if (raw.atoms.empty()) throw BadWeights("measure has no atoms");

  double total = 0.0;
  for (const Atom& a : raw.atoms) {
    if (static_cast<int>(a.s.size()) != raw.d || static_cast<int>(a.m.size()) != raw.d)
      throw DimensionMismatch("atom coordinate dimension differs from measure dimension");
    if (!all_finite(a.s) || !all_finite(a.m) || !std::isfinite(a.w))
      throw DomainError("atom has non-finite entries");
    if (a.w < 0.0) throw BadWeights("atom weight is negative");
    total += a.w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw BadWeights("atom weights do not sum to 1");

  // Normalize sphere coordinates exactly; reject off-sphere first coordinates.
  std::vector<Atom> atoms;
  atoms.reserve(raw.atoms.size());
  for (const Atom& a : raw.atoms) {
    Atom b = a;
    b.s = UnitVector::of(std::move(b.s)).coords();
    atoms.push_back(std::move(b));
  }

  // Merge by rounded key. Contributions per key are sorted by exact
  // coordinates before summing so the result is input-order independent.
  std::map<std::vector<double>, std::vector<Atom>> groups;
  for (Atom& a : atoms) groups[atom_key(a)].push_back(std::move(a));

  AtomMeasure out;
  out.d = raw.d;
  for (auto& [key, grp] : groups) {
    std::sort(grp.begin(), grp.end(), [](const Atom& x, const Atom& y) {
      if (x.s != y.s) return x.s < y.s;
      return x.m < y.m;
    });
    Atom merged = grp.front();
    merged.w = 0.0;
    for (const Atom& a : grp) merged.w += a.w;
    if (merged.w >= kDropWeight) out.atoms.push_back(std::move(merged));
  }
  if (out.atoms.empty()) throw BadWeights("all atoms vanished during canonicalization");

  double sum = 0.0;
  for (const Atom& a : out.atoms) sum += a.w;
  for (Atom& a : out.atoms) a.w /= sum;

  // Force the weight sum to exactly 1.0 by absorbing the rounding residual
  // into the heaviest atom (first such atom in key order on ties).
  double resid = 1.0;
  for (const Atom& a : out.atoms) resid -= a.w;
  auto heaviest = std::max_element(out.atoms.begin(), out.atoms.end(),
                                   [](const Atom& x, const Atom& y) { return x.w < y.w; });
  heaviest->w += resid;
  return out;
}

bool is_canonical(const AtomMeasure& p) {
  if (p.d < 1 || p.atoms.empty()) return false;
  double sum = 0.0;
  std::vector<double> prev;
  for (std::size_t i = 0; i < p.atoms.size(); ++i) {
    const Atom& a = p.atoms[i];
    if (static_cast<int>(a.s.size()) != p.d || static_cast<int>(a.m.size()) != p.d) return false;
    if (!(a.w >= kDropWeight)) return false;
    if (std::abs(norm2(a.s) - 1.0) > 1e-12) return false;
    std::vector<double> key = atom_key(a);
    if (i > 0 && !(prev < key)) return false;  // strictly increasing keys
    prev = std::move(key);
    sum += a.w;
  }
  return sum == 1.0 || std::abs(sum - 1.0) <= 1e-12;
}

bool measures_close(const AtomMeasure& a, const AtomMeasure& b, double tol) {
  if (a.d != b.d || a.atoms.size() != b.atoms.size()) return false;
  for (std::size_t i = 0; i < a.atoms.size(); ++i) {
    const Atom& x = a.atoms[i];
    const Atom& y = b.atoms[i];
    if (std::abs(x.w - y.w) > tol) return false;
    for (int c = 0; c < a.d; ++c) {
      if (std::abs(x.s[c] - y.s[c]) > tol) return false;
      if (std::abs(x.m[c] - y.m[c]) > tol) return false;
    }
  }
  return true;
}

bool measures_equivalent(const AtomMeasure& a, const AtomMeasure& b, double tol) {
  if (a.d != b.d) return false;

  const auto atom_distance = [d = a.d](const Atom& x, const Atom& y) {
    double sq = 0.0;
    for (int c = 0; c < d; ++c) {
      const double ds = x.s[c] - y.s[c];
      const double dm = x.m[c] - y.m[c];
      sq += ds * ds + dm * dm;
    }
    return std::sqrt(sq);
  };

  // Exact rounded-key matches first, then greedy nearest matching within tol;
  // whatever stays unmatched must carry weight below tol.
  std::map<std::vector<double>, std::vector<std::size_t>> b_by_key;
  for (std::size_t j = 0; j < b.atoms.size(); ++j) b_by_key[atom_key(b.atoms[j])].push_back(j);
  std::vector<bool> b_used(b.atoms.size(), false);
  std::vector<const Atom*> a_left;

  for (const Atom& x : a.atoms) {
    bool matched = false;
    if (const auto it = b_by_key.find(atom_key(x)); it != b_by_key.end()) {
      for (const std::size_t j : it->second) {
        if (b_used[j]) continue;
        b_used[j] = true;
        if (std::abs(x.w - b.atoms[j].w) > tol) return false;
        matched = true;
        break;
      }
    }
    if (!matched) a_left.push_back(&x);
  }

  for (const Atom* x : a_left) {
    std::size_t best = b.atoms.size();
    double best_d = tol;
    for (std::size_t j = 0; j < b.atoms.size(); ++j) {
      if (b_used[j]) continue;
      const double dd = atom_distance(*x, b.atoms[j]);
      if (dd <= best_d) {
        best_d = dd;
        best = j;
      }
    }
    if (best < b.atoms.size()) {
      b_used[best] = true;
      if (std::abs(x->w - b.atoms[best].w) > tol) return false;
    } else if (x->w > tol) {
      return false;
    }
  }

  for (std::size_t j = 0; j < b.atoms.size(); ++j) {
    if (!b_used[j] && b.atoms[j].w > tol) return false;
  }
  return true;
}

AtomMeasure measure_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("measure JSON parse failed: ") + e.what());
  }
  if (!j.is_object() || !j.contains("d") || !j.contains("atoms"))
    throw IoError("measure JSON must be an object with \"d\" and \"atoms\"");
  AtomMeasure raw;
  try {
    raw.d = j.at("d").get<int>();
    for (const auto& ja : j.at("atoms")) {
      Atom a;
      a.s = ja.at("s").get<Vec>();
      a.m = ja.at("m").get<Vec>();
      a.w = ja.at("w").get<double>();
      raw.atoms.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("measure JSON has wrong field types: ") + e.what());
  }
  return canonicalize(raw);
}

std::string measure_to_json(const AtomMeasure& p) {
  nlohmann::json j;
  j["d"] = p.d;
  j["atoms"] = nlohmann::json::array();
  for (const Atom& a : p.atoms) {
    j["atoms"].push_back({{"s", a.s}, {"m", a.m}, {"w", a.w}});
  }
  return j.dump(2) + "\n";
}

SpectralMeasure SpectralMeasure::atomic(int d, std::vector<std::pair<Vec, double>> atoms) {
  if (atoms.empty()) throw BadWeights("spectral measure needs at least one atom");
  SpectralMeasure m;
  m.kind_ = Kind::Atomic;
  m.d_ = d;
  double total = 0.0;
  for (auto& [s, w] : atoms) {
    if (static_cast<int>(s.size()) != d) throw DimensionMismatch("spectral atom has wrong dimension");
    if (w < 0.0 || !std::isfinite(w)) throw BadWeights("spectral atom weight invalid");
    s = UnitVector::of(std::move(s)).coords();
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw BadWeights("spectral weights do not sum to 1");
  std::sort(atoms.begin(), atoms.end());
  m.atoms_ = std::move(atoms);
  m.cdf_.reserve(m.atoms_.size());
  double acc = 0.0;
  for (auto& [s, w] : m.atoms_) {
    w /= total;
    acc += w;
    m.cdf_.push_back(acc);
  }
  m.cdf_.back() = 1.0;
  return m;
}

SpectralMeasure SpectralMeasure::uniform(int d) {
  if (d < 1) throw DimensionMismatch("sphere dimension must be at least 1");
  SpectralMeasure m;
  m.kind_ = Kind::Uniform;
  m.d_ = d;
  return m;
}

SpectralMeasure SpectralMeasure::density(int d, std::function<double(std::span<const double>)> g,
                                         double sup_g) {
  if (d < 1) throw DimensionMismatch("sphere dimension must be at least 1");
  if (!(sup_g >= 1.0) || !std::isfinite(sup_g))
    throw DomainError("density bound must be finite and at least 1");
  if (1.0 / sup_g < 1e-4)
    throw RejectionStall("density bound implies acceptance rate below 1e-4");
  SpectralMeasure m;
  m.kind_ = Kind::Density;
  m.d_ = d;
  m.g_ = std::move(g);
  m.sup_g_ = sup_g;
  return m;
}

const std::vector<std::pair<Vec, double>>& SpectralMeasure::atoms() const {
  if (kind_ != Kind::Atomic) throw DomainError("spectral measure is not atomic");
  return atoms_;
}

double SpectralMeasure::mass_at(std::span<const double> s) const {
  if (kind_ != Kind::Atomic) throw DomainError("mass_at requires an atomic spectral measure");
  for (const auto& [u, w] : atoms_) {
    bool same = true;
    for (int c = 0; c < d_ && same; ++c) same = round12(u[c]) == round12(s[c]);
    if (same) return w;
  }
  return 0.0;
}

double SpectralMeasure::density_at(std::span<const double> s) const {
  switch (kind_) {
    case Kind::Uniform:
      return 1.0;
    case Kind::Density:
      return g_(s);
    case Kind::Atomic:
      throw DomainError("atomic spectral measure has no density");
  }
  return 0.0;
}

Vec sample_uniform_sphere(int d, RngStream& rng) {
  if (d == 1) return Vec{rng.uniform_co() < 0.5 ? -1.0 : 1.0};
  Vec x(d);
  double r;
  do {
    for (double& c : x) c = rng.normal();
    r = norm2(x);
  } while (r == 0.0);
  for (double& c : x) c /= r;
  return x;
}

Vec SpectralMeasure::sample(RngStream& rng) const {
  switch (kind_) {
    case Kind::Atomic: {
      const double u = rng.uniform();
      const auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
      const std::size_t i = std::min<std::size_t>(it - cdf_.begin(), atoms_.size() - 1);
      return atoms_[i].first;
    }
    case Kind::Uniform:
      return sample_uniform_sphere(d_, rng);
    case Kind::Density: {
      // Rejection from the uniform law; bound checked at construction.
      for (long tries = 0; tries < 1000000; ++tries) {
        Vec u = sample_uniform_sphere(d_, rng);
        if (rng.uniform_co() * sup_g_ <= g_(u)) return u;
      }
      throw RejectionStall("spectral density rejection sampler stalled");
    }
  }
  throw DomainError("unreachable spectral kind");
}

}  // namespace tailchain
