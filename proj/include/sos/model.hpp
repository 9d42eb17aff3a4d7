#pragma once

// Generalized SOS model: parameters, gradient weights, boundary conditions,
// height fields and Hamiltonians.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sos/lattice.hpp"

namespace sos {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Exponent p in [1, inf] and inverse temperature beta > 0. p = inf is a flag,
/// not a large float: it admits only gradients in {-1, 0, 1}.
class ModelParams {
 public:
  ModelParams(double p, double beta) : p_(p), beta_(beta) {
    if (std::isinf(p)) {
      infinite_ = true;
      p_ = kInf;
    } else if (!(p >= 1.0)) {
      throw std::invalid_argument("p must be >= 1");
    }
    if (!(beta > 0.0) || std::isinf(beta)) throw std::invalid_argument("beta must be > 0");
  }
  static ModelParams restricted(double beta) { return {kInf, beta}; }

  double p() const { return p_; }
  double beta() const { return beta_; }
  bool p_infinite() const { return infinite_; }

  std::string p_string() const {
    if (infinite_) return "inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", p_);
    return buf;
  }

 private:
  double p_;
  double beta_;
  bool infinite_ = false;
};

/// Bond energy h(a) for |gradient| a >= 0. Standard: a^p; tilted: (1+a)^p - 1.
/// For p = inf the standard rule is a*1{a<=1} and the tilted rule is 0 at
/// a = 0; larger gradients are forbidden (+inf).
inline double gradient_weight(const ModelParams& params, int a, bool tilted) {
  if (a < 0) a = -a;
  if (params.p_infinite()) {
    if (tilted) return a == 0 ? 0.0 : kInf;
    return a <= 1 ? static_cast<double>(a) : kInf;
  }
  const double p = params.p();
  if (tilted) {
    if (p == 1.0) return static_cast<double>(a);
    return std::pow(1.0 + a, p) - 1.0;
  }
  if (a == 0) return 0.0;
  if (p == 1.0) return static_cast<double>(a);
  if (p == 2.0) return static_cast<double>(a) * a;
  return std::pow(static_cast<double>(a), p);
}

/// Which lattice bonds use the tilted weight. Marking is stored per crossing
/// dual bond and looked up per lattice bond.
class BondWeightRule {
 public:
  BondWeightRule() = default;
  static BondWeightRule standard() { return {}; }
  static BondWeightRule tilted(std::vector<DualBond> marked) {
    BondWeightRule r;
    std::sort(marked.begin(), marked.end());
    if (std::adjacent_find(marked.begin(), marked.end()) != marked.end())
      throw std::invalid_argument("tilted rule: marked dual bonds must be distinct");
    r.marked_ = std::move(marked);
    return r;
  }

  bool is_standard() const { return marked_.empty(); }
  std::span<const DualBond> marked() const { return marked_; }

  bool is_tilted(const LatticeBond& bond) const {
    if (marked_.empty()) return false;
    return std::binary_search(marked_.begin(), marked_.end(), DualBond::crossing(bond));
  }

 private:
  std::vector<DualBond> marked_;
};

enum class BoundaryKind : std::uint8_t { zero, constant, staircase, explicit_map };

/// Heights outside the region. Staircases step from 0 (bottom) to n (top)
/// with jumps at a_i on the left wall and b_i on the right wall.
class BoundaryCondition {
 public:
  BoundaryCondition() = default;

  static BoundaryCondition zero() { return {}; }
  static BoundaryCondition constant(int c) {
    BoundaryCondition bc;
    bc.kind_ = c == 0 ? BoundaryKind::zero : BoundaryKind::constant;
    bc.offset_ = c;
    return bc;
  }
  static BoundaryCondition staircase(std::vector<int> a, std::vector<int> b, int L, int M) {
    if (a.size() != b.size()) throw std::invalid_argument("staircase: a and b must have equal length");
    auto check = [M](const std::vector<int>& v, const char* name) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] < -M || v[i] > M)
          throw std::invalid_argument(std::string("staircase: ") + name + " entries must lie in [-M, M]");
        if (i > 0 && v[i] < v[i - 1])
          throw std::invalid_argument(std::string("staircase: ") + name + " must be nondecreasing");
      }
    };
    check(a, "a");
    check(b, "b");
    BoundaryCondition bc;
    if (a.empty()) return bc;
    bc.kind_ = BoundaryKind::staircase;
    bc.a_ = std::move(a);
    bc.b_ = std::move(b);
    bc.L_ = L;
    bc.M_ = M;
    return bc;
  }
  static BoundaryCondition explicit_map(std::map<Site, int> values) {
    BoundaryCondition bc;
    bc.kind_ = BoundaryKind::explicit_map;
    bc.map_ = std::make_shared<const std::map<Site, int>>(std::move(values));
    return bc;
  }

  BoundaryKind kind() const { return kind_; }
  int steps() const { return static_cast<int>(a_.size()); }
  const std::vector<int>& a() const { return a_; }
  const std::vector<int>& b() const { return b_; }
  int offset() const { return offset_; }

  /// Height at a site outside the region.
  int value(Site s) const {
    switch (kind_) {
      case BoundaryKind::zero:
      case BoundaryKind::constant:
        return offset_;
      case BoundaryKind::staircase:
        return offset_ + staircase_value(s);
      case BoundaryKind::explicit_map: {
        auto it = map_->find(s);
        if (it == map_->end())
          throw std::out_of_range("explicit boundary condition undefined at (" + std::to_string(s.x) +
                                  "," + std::to_string(s.y) + ")");
        return offset_ + it->second;
      }
    }
    return 0;
  }

  /// Same boundary condition raised by c everywhere.
  BoundaryCondition shifted(int c) const {
    BoundaryCondition bc = *this;
    bc.offset_ += c;
    if (bc.kind_ == BoundaryKind::zero && bc.offset_ != 0) bc.kind_ = BoundaryKind::constant;
    if (bc.kind_ == BoundaryKind::constant && bc.offset_ == 0) bc.kind_ = BoundaryKind::zero;
    return bc;
  }

  std::string describe() const {
    switch (kind_) {
      case BoundaryKind::zero:
        return "zero";
      case BoundaryKind::constant:
        return "constant:" + std::to_string(offset_);
      case BoundaryKind::staircase: {
        std::string s = "staircase:";
        for (std::size_t i = 0; i < a_.size(); ++i) s += (i ? "," : "") + std::to_string(a_[i]);
        s += "/";
        for (std::size_t i = 0; i < b_.size(); ++i) s += (i ? "," : "") + std::to_string(b_[i]);
        return s;
      }
      case BoundaryKind::explicit_map:
        return "explicit";
    }
    return "unknown";
  }

 private:
  int staircase_value(Site s) const {
    const int n = steps();
    if (s.x <= -L_ - 1)
      return static_cast<int>(std::upper_bound(a_.begin(), a_.end(), s.y) - a_.begin());
    if (s.x >= L_ + 1)
      return static_cast<int>(std::upper_bound(b_.begin(), b_.end(), s.y) - b_.begin());
    if (s.y <= -M_ - 1) return 0;
    if (s.y >= M_ + 1) return n;
    throw std::out_of_range("staircase boundary condition queried inside the rectangle");
  }

  BoundaryKind kind_ = BoundaryKind::zero;
  int offset_ = 0;
  std::vector<int> a_;
  std::vector<int> b_;
  int L_ = 0;
  int M_ = 0;
  std::shared_ptr<const std::map<Site, int>> map_;
};

/// Staircase boundary condition on the rectangle Lambda_{L,M}; n must equal
/// the length of a and b.
inline BoundaryCondition staircase_bc(int n, std::vector<int> a, std::vector<int> b, int L, int M) {
  if (n < 0 || static_cast<std::size_t>(n) != a.size() || a.size() != b.size())
    throw std::invalid_argument("staircase_bc: n must match the lengths of a and b");
  return BoundaryCondition::staircase(std::move(a), std::move(b), L, M);
}

/// Integer surface on a region; evaluating outside returns the boundary value.
class HeightField {
 public:
  HeightField(std::shared_ptr<const Region> region, BoundaryCondition bc)
      : region_(std::move(region)), bc_(std::move(bc)), heights_(region_->size(), 0) {}
  HeightField(std::shared_ptr<const Region> region, BoundaryCondition bc, std::vector<int> heights)
      : region_(std::move(region)), bc_(std::move(bc)), heights_(std::move(heights)) {
    if (heights_.size() != region_->size())
      throw std::invalid_argument("HeightField: height count does not match region size");
  }

  const Region& region() const { return *region_; }
  const std::shared_ptr<const Region>& region_ptr() const { return region_; }
  const BoundaryCondition& bc() const { return bc_; }
  std::span<const int> heights() const { return heights_; }
  std::span<int> heights() { return heights_; }

  int at(Site s) const {
    const int k = region_->index_of(s);
    return k >= 0 ? heights_[static_cast<std::size_t>(k)] : bc_.value(s);
  }
  void set(Site s, int h) {
    const int k = region_->index_of(s);
    if (k < 0) throw std::out_of_range("HeightField::set outside the region");
    heights_[static_cast<std::size_t>(k)] = h;
  }

  HeightField shifted(int c) const {
    HeightField f = *this;
    for (auto& h : f.heights_) h += c;
    f.bc_ = bc_.shifted(c);
    return f;
  }

 private:
  std::shared_ptr<const Region> region_;
  BoundaryCondition bc_;
  std::vector<int> heights_;
};

/// Bond list and per-site neighbourhoods of a region with fixed boundary
/// values and tilt marks, shared by energy evaluation, enumeration and the
/// samplers.
class Stencil {
 public:
  struct Link {
    int neighbour = -1;       // site index, or -1 for a boundary site
    int boundary_height = 0;  // valid when neighbour < 0
    bool tilted = false;
  };
  struct Bond {
    int i = 0;
    int j = -1;  // -1: boundary bond
    int boundary_height = 0;
    bool tilted = false;
  };

  Stencil(std::shared_ptr<const Region> region, const BoundaryCondition& bc,
          const BondWeightRule& rule = BondWeightRule::standard())
      : region_(std::move(region)) {
    const auto& reg = *region_;
    links_.resize(reg.size());
    for (std::size_t k = 0; k < reg.size(); ++k) {
      const Site s = reg.site(k);
      for (int d = 0; d < 4; ++d) {
        const Site t = s + kNeighbourOffsets[d];
        Link link;
        link.neighbour = reg.index_of(t);
        if (link.neighbour < 0) link.boundary_height = bc.value(t);
        link.tilted = rule.is_tilted(LatticeBond::make(s, t));
        links_[k][static_cast<std::size_t>(d)] = link;
        if (link.neighbour < 0 || link.neighbour > static_cast<int>(k))
          bonds_.push_back({static_cast<int>(k), link.neighbour, link.boundary_height, link.tilted});
      }
    }
  }

  const Region& region() const { return *region_; }
  const std::shared_ptr<const Region>& region_ptr() const { return region_; }
  std::size_t size() const { return links_.size(); }
  const std::array<Link, 4>& links(std::size_t k) const { return links_[k]; }
  std::span<const Bond> bonds() const { return bonds_; }

  /// Smallest and largest boundary height seen by the region.
  std::pair<int, int> boundary_range() const {
    int lo = 0, hi = 0;
    bool any = false;
    for (const auto& b : bonds_)
      if (b.j < 0) {
        lo = any ? std::min(lo, b.boundary_height) : b.boundary_height;
        hi = any ? std::max(hi, b.boundary_height) : b.boundary_height;
        any = true;
      }
    return {lo, hi};
  }

 private:
  std::shared_ptr<const Region> region_;
  std::vector<std::array<Link, 4>> links_;
  std::vector<Bond> bonds_;
};

/// exp(-beta h(d)) for gradients 0..max_gradient, standard and tilted.
class WeightTable {
 public:
  WeightTable(const ModelParams& params, int max_gradient) {
    standard_.resize(static_cast<std::size_t>(max_gradient) + 1);
    tilted_.resize(standard_.size());
    for (int d = 0; d <= max_gradient; ++d) {
      standard_[static_cast<std::size_t>(d)] = std::exp(-params.beta() * gradient_weight(params, d, false));
      tilted_[static_cast<std::size_t>(d)] = std::exp(-params.beta() * gradient_weight(params, d, true));
    }
  }
  double operator()(int d, bool tilted) const {
    if (d < 0) d = -d;
    const auto& t = tilted ? tilted_ : standard_;
    return static_cast<std::size_t>(d) < t.size() ? t[static_cast<std::size_t>(d)] : 0.0;
  }
  int max_gradient() const { return static_cast<int>(standard_.size()) - 1; }

 private:
  std::vector<double> standard_;
  std::vector<double> tilted_;
};

inline double energy(const Stencil& stencil, std::span<const int> heights, const ModelParams& params) {
  double e = 0.0;
  for (const auto& b : stencil.bonds()) {
    const int hi = heights[static_cast<std::size_t>(b.i)];
    const int hj = b.j >= 0 ? heights[static_cast<std::size_t>(b.j)] : b.boundary_height;
    e += gradient_weight(params, hi - hj, b.tilted);
    if (std::isinf(e)) return kInf;
  }
  return e;
}

/// Hamiltonian summed over all bonds with at least one endpoint in the region.
inline double energy(const HeightField& field, const ModelParams& params,
                     const BondWeightRule& rule = BondWeightRule::standard()) {
  const Stencil stencil(field.region_ptr(), field.bc(), rule);
  return energy(stencil, field.heights(), params);
}

/// Energy change of setting site `k` to `new_height`, from its four bonds.
inline double energy_delta(const Stencil& stencil, std::span<const int> heights, std::size_t k,
                           int new_height, const ModelParams& params) {
  const int old_height = heights[k];
  double before = 0.0, after = 0.0;
  for (const auto& link : stencil.links(k)) {
    const int nb = link.neighbour >= 0 ? heights[static_cast<std::size_t>(link.neighbour)]
                                       : link.boundary_height;
    before += gradient_weight(params, old_height - nb, link.tilted);
    after += gradient_weight(params, new_height - nb, link.tilted);
  }
  if (std::isinf(after) && std::isinf(before)) return 0.0;
  if (std::isinf(after)) return kInf;
  if (std::isinf(before)) return -kInf;
  return after - before;
}

inline double energy_delta(const HeightField& field, Site site, int new_height, const ModelParams& params,
                           const BondWeightRule& rule = BondWeightRule::standard()) {
  const int k = field.region().index_of(site);
  if (k < 0) throw std::out_of_range("energy_delta: site outside the region");
  const Stencil stencil(field.region_ptr(), field.bc(), rule);
  return energy_delta(stencil, field.heights(), static_cast<std::size_t>(k), new_height, params);
}

struct FkgReport {
  bool pass = true;
  std::size_t checked = 0;
  std::optional<std::array<int, 4>> counterexample;  // (a, b, c, d)
};

/// Exhaustive check of the four-point lattice condition
///   h(|max(a,c) - max(b,d)|) + h(|min(a,c) - min(b,d)|) <= h(|a-b|) + h(|c-d|)
/// over [lo, hi]^4, for one weight rule. Infinite values compare as extended reals.
inline FkgReport check_fkg_lattice(const ModelParams& params, bool tilted, int lo, int hi) {
  if (lo > hi) throw std::invalid_argument("check_fkg_lattice: empty range");
  const int span = hi - lo;
  std::vector<double> w(static_cast<std::size_t>(span) + 1);
  for (int d = 0; d <= span; ++d) w[static_cast<std::size_t>(d)] = gradient_weight(params, d, tilted);
  auto h = [&](int x) { return w[static_cast<std::size_t>(x < 0 ? -x : x)]; };
  FkgReport report;
  for (int a = lo; a <= hi; ++a)
    for (int b = lo; b <= hi; ++b)
      for (int c = lo; c <= hi; ++c)
        for (int d = lo; d <= hi; ++d) {
          ++report.checked;
          const double lhs = h(std::max(a, c) - std::max(b, d)) + h(std::min(a, c) - std::min(b, d));
          const double rhs = h(a - b) + h(c - d);
          if (std::isinf(rhs)) continue;
          const bool ok = !std::isinf(lhs) && lhs <= rhs + 1e-12 * std::max(1.0, std::abs(rhs));
          if (!ok && report.pass) {
            report.pass = false;
            report.counterexample = std::array<int, 4>{a, b, c, d};
          }
        }
  return report;
}

}  // namespace sos
