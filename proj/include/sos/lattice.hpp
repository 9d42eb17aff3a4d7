#pragma once

// Lattice and dual-lattice geometry on Z^2: sites, bonds, dual bonds,
// rectangular and arbitrary regions, boundary sets and nested annuli.

#include <algorithm>
#include <compare>
#include <cstdlib>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sos {

/// Raised when a requested object would exceed a configured size cap.
class CapExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Site {
  int x = 0;
  int y = 0;

  friend bool operator==(const Site&, const Site&) = default;
  // Row-major: y outer, x inner.
  friend std::strong_ordering operator<=>(const Site& a, const Site& b) {
    if (auto c = a.y <=> b.y; c != 0) return c;
    return a.x <=> b.x;
  }
  Site operator+(const Site& o) const { return {x + o.x, y + o.y}; }
  Site operator-(const Site& o) const { return {x - o.x, y - o.y}; }
};

inline constexpr Site kEast{1, 0};
inline constexpr Site kNorth{0, 1};
inline constexpr Site kNeighbourOffsets[4] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};

/// Nearest-neighbour lattice bond, stored from the smaller to the larger
/// endpoint in row-major order.
struct LatticeBond {
  Site a;
  Site b;

  static LatticeBond make(Site s, Site t) {
    return s < t ? LatticeBond{s, t} : LatticeBond{t, s};
  }
  bool horizontal() const { return a.y == b.y; }
  friend bool operator==(const LatticeBond&, const LatticeBond&) = default;
  friend auto operator<=>(const LatticeBond&, const LatticeBond&) = default;
};

/// Vertex of the dual lattice Z^2 + (1/2, 1/2); (i, j) stands for
/// (i + 1/2, j + 1/2).
struct DualVertex {
  int i = 0;
  int j = 0;

  friend bool operator==(const DualVertex&, const DualVertex&) = default;
  friend std::strong_ordering operator<=>(const DualVertex& a, const DualVertex& b) {
    if (auto c = a.j <=> b.j; c != 0) return c;
    return a.i <=> b.i;
  }
  double cx() const { return i + 0.5; }
  double cy() const { return j + 0.5; }
};

enum class Orientation : std::uint8_t { horizontal = 0, vertical = 1 };

/// Unit segment of the dual lattice. `lo` is the smaller endpoint; the other
/// endpoint is lo + (1,0) or lo + (0,1). Ordering is lexicographic on
/// (lo, orientation).
struct DualBond {
  DualVertex lo;
  Orientation orientation = Orientation::horizontal;

  DualVertex hi() const {
    return orientation == Orientation::horizontal ? DualVertex{lo.i + 1, lo.j}
                                                  : DualVertex{lo.i, lo.j + 1};
  }

  static DualBond between(DualVertex p, DualVertex q) {
    const int di = q.i - p.i;
    const int dj = q.j - p.j;
    if (std::abs(di) + std::abs(dj) != 1)
      throw std::invalid_argument("dual vertices are not adjacent");
    const DualVertex lo = p < q ? p : q;
    return {lo, di != 0 ? Orientation::horizontal : Orientation::vertical};
  }

  /// The lattice bond this dual bond crosses.
  LatticeBond crossed() const {
    if (orientation == Orientation::horizontal)
      return LatticeBond{{lo.i + 1, lo.j}, {lo.i + 1, lo.j + 1}};
    return LatticeBond{{lo.i, lo.j + 1}, {lo.i + 1, lo.j + 1}};
  }

  /// The dual bond crossing a lattice bond.
  static DualBond crossing(const LatticeBond& bond) {
    if (bond.horizontal()) return {{bond.a.x, bond.a.y - 1}, Orientation::vertical};
    return {{bond.a.x - 1, bond.a.y}, Orientation::horizontal};
  }

  bool touches(DualVertex v) const { return lo == v || hi() == v; }

  friend bool operator==(const DualBond&, const DualBond&) = default;
  friend std::strong_ordering operator<=>(const DualBond& a, const DualBond& b) {
    if (auto c = a.lo <=> b.lo; c != 0) return c;
    return a.orientation <=> b.orientation;
  }
};

enum class RegionKind : std::uint8_t { rectangle, square, arbitrary };

/// Finite site set stored densely over its bounding box. Sites are listed in
/// row-major order; membership and index lookup are O(1).
class Region {
 public:
  static constexpr std::size_t kDefaultSiteCap = std::size_t{1} << 24;

  Region() = default;

  static Region rectangle(int L, int M, std::size_t cap = kDefaultSiteCap) {
    if (L < 0 || M < 0) throw std::invalid_argument("rectangle half-sides must be >= 0");
    const auto count = static_cast<std::size_t>(2 * L + 1) * static_cast<std::size_t>(2 * M + 1);
    if (count > cap)
      throw CapExceeded("region of " + std::to_string(count) + " sites exceeds site cap " +
                        std::to_string(cap));
    Region r;
    r.kind_ = L == M ? RegionKind::square : RegionKind::rectangle;
    r.L_ = L;
    r.M_ = M;
    r.x0_ = -L;
    r.y0_ = -M;
    r.w_ = 2 * L + 1;
    r.h_ = 2 * M + 1;
    r.index_.resize(count);
    r.sites_.reserve(count);
    for (int y = -M; y <= M; ++y)
      for (int x = -L; x <= L; ++x) {
        r.index_[r.slot(x, y)] = static_cast<int>(r.sites_.size());
        r.sites_.push_back({x, y});
      }
    return r;
  }

  static Region square(int L, std::size_t cap = kDefaultSiteCap) { return rectangle(L, L, cap); }

  static Region from_sites(std::vector<Site> sites, std::size_t cap = kDefaultSiteCap) {
    Region r;
    r.kind_ = RegionKind::arbitrary;
    std::sort(sites.begin(), sites.end());
    sites.erase(std::unique(sites.begin(), sites.end()), sites.end());
    if (sites.size() > cap)
      throw CapExceeded("region of " + std::to_string(sites.size()) + " sites exceeds site cap " +
                        std::to_string(cap));
    if (sites.empty()) return r;
    int x0 = sites.front().x, x1 = x0, y0 = sites.front().y, y1 = y0;
    for (const auto& s : sites) {
      x0 = std::min(x0, s.x);
      x1 = std::max(x1, s.x);
      y0 = std::min(y0, s.y);
      y1 = std::max(y1, s.y);
    }
    r.x0_ = x0;
    r.y0_ = y0;
    r.w_ = x1 - x0 + 1;
    r.h_ = y1 - y0 + 1;
    r.index_.assign(static_cast<std::size_t>(r.w_) * r.h_, -1);
    r.sites_ = std::move(sites);
    for (std::size_t k = 0; k < r.sites_.size(); ++k)
      r.index_[r.slot(r.sites_[k].x, r.sites_[k].y)] = static_cast<int>(k);
    return r;
  }

  RegionKind kind() const { return kind_; }
  int L() const { return L_; }
  int M() const { return M_; }
  std::size_t size() const { return sites_.size(); }
  bool empty() const { return sites_.empty(); }
  std::span<const Site> sites() const { return sites_; }
  const Site& site(std::size_t k) const { return sites_[k]; }

  bool contains(Site s) const { return index_of(s) >= 0; }

  /// Row-major position of `s`, or -1 if `s` is not in the region.
  int index_of(Site s) const {
    const int dx = s.x - x0_;
    const int dy = s.y - y0_;
    if (dx < 0 || dy < 0 || dx >= w_ || dy >= h_) return -1;
    return index_[slot(s.x, s.y)];
  }

  bool is_rectangular() const { return kind_ != RegionKind::arbitrary; }

 private:
  std::size_t slot(int x, int y) const {
    return static_cast<std::size_t>(y - y0_) * static_cast<std::size_t>(w_) +
           static_cast<std::size_t>(x - x0_);
  }

  RegionKind kind_ = RegionKind::arbitrary;
  int L_ = 0;
  int M_ = 0;
  int x0_ = 0;
  int y0_ = 0;
  int w_ = 0;
  int h_ = 0;
  std::vector<int> index_;
  std::vector<Site> sites_;
};

/// Build a region; `kind` selects square (M ignored) or rectangle.
inline Region build_region(RegionKind kind, int L, int M = 0,
                           std::size_t cap = Region::kDefaultSiteCap) {
  switch (kind) {
    case RegionKind::square:
      return Region::square(L, cap);
    case RegionKind::rectangle:
      return Region::rectangle(L, M, cap);
    case RegionKind::arbitrary:
      break;
  }
  throw std::invalid_argument("build_region: use Region::from_sites for arbitrary regions");
}

struct BoundarySets {
  std::vector<Site> external;       // sites of the complement adjacent to the region
  std::vector<Site> starred;        // inner boundary, with the SW/NE diagonal rule
  std::vector<LatticeBond> bonds;   // bonds with one endpoint inside, the other inside or on the boundary
};

inline BoundarySets boundary_sets(const Region& region) {
  if (region.empty()) throw std::invalid_argument("boundary_sets: empty region");
  BoundarySets out;
  for (const auto& s : region.sites())
    for (const auto& d : kNeighbourOffsets) {
      const Site t = s + d;
      if (!region.contains(t)) out.external.push_back(t);
      // Interior bonds are listed once, from their smaller endpoint.
      if (!region.contains(t) || s < t) out.bonds.push_back(LatticeBond::make(s, t));
    }
  std::sort(out.external.begin(), out.external.end());
  out.external.erase(std::unique(out.external.begin(), out.external.end()), out.external.end());
  std::sort(out.bonds.begin(), out.bonds.end());

  auto in_external = [&](Site t) {
    return std::binary_search(out.external.begin(), out.external.end(), t);
  };
  for (const auto& s : region.sites()) {
    bool starred = false;
    for (const auto& d : kNeighbourOffsets) starred = starred || in_external(s + d);
    starred = starred || in_external(s + Site{1, 1}) || in_external(s + Site{-1, -1});
    if (starred) out.starred.push_back(s);
  }
  return out;
}

/// Sites of the square ring Lambda_outer \ Lambda_inner (inner < 0 means none removed).
inline Region square_ring(int outer, int inner) {
  std::vector<Site> sites;
  for (int y = -outer; y <= outer; ++y)
    for (int x = -outer; x <= outer; ++x)
      if (std::max(std::abs(x), std::abs(y)) > inner) sites.push_back({x, y});
  return Region::from_sites(std::move(sites));
}

struct AnnulusLevel {
  int index = 0;
  Region outer;   // three nested annuli of width `index`
  Region middle;  // the middle one of the three
};

inline int triangular(int i) { return i * (i + 1) / 2; }

/// Nested annuli of the lower-bound construction: level i occupies
/// Lambda_{L-3l(i-1)} \ Lambda_{L-3l(i)} with l(i) = i(i+1)/2, split into three
/// rings of width i.
inline std::vector<AnnulusLevel> annulus_ladder(int L, int N) {
  if (N < 0) throw std::invalid_argument("annulus_ladder: N must be >= 0");
  if (3 * triangular(N) >= L)
    throw std::invalid_argument("annulus_ladder: 3*l(N) = " + std::to_string(3 * triangular(N)) +
                                " must be < L = " + std::to_string(L));
  std::vector<AnnulusLevel> out;
  for (int i = 1; i <= N; ++i) {
    const int r_out = L - 3 * triangular(i - 1);
    const int r_in = L - 3 * triangular(i);
    out.push_back({i, square_ring(r_out, r_in), square_ring(r_out - i, r_out - 2 * i)});
  }
  return out;
}

}  // namespace sos
