#pragma once

// Contours and clusters on the dual lattice: level-set tracing with the
// linked-pair rule, decorations, open contours under one-step staircases, and
// the cluster decomposition of zero-boundary surfaces.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "sos/exact.hpp"
#include "sos/lattice.hpp"
#include "sos/model.hpp"

namespace sos {

// Arms of a dual vertex v = (i, j). Surrounding sites: SW (i,j), SE (i+1,j),
// NW (i,j+1), NE (i+1,j+1).
enum class Arm : std::uint8_t { E, N, W, S };
inline constexpr Arm kArms[4] = {Arm::E, Arm::N, Arm::W, Arm::S};

inline DualBond arm_bond(DualVertex v, Arm a) {
  switch (a) {
    case Arm::E:
      return {v, Orientation::horizontal};
    case Arm::N:
      return {v, Orientation::vertical};
    case Arm::W:
      return {{v.i - 1, v.j}, Orientation::horizontal};
    case Arm::S:
      return {{v.i, v.j - 1}, Orientation::vertical};
  }
  throw std::logic_error("bad arm");
}

inline Arm arm_of(const DualBond& b, DualVertex v) {
  if (b.lo == v) return b.orientation == Orientation::horizontal ? Arm::E : Arm::N;
  if (b.hi() == v) return b.orientation == Orientation::horizontal ? Arm::W : Arm::S;
  throw std::invalid_argument("dual bond does not touch the vertex");
}

inline DualVertex other_end(const DualBond& b, DualVertex v) { return b.lo == v ? b.hi() : b.lo; }

/// Arms on the same side of the slope +1 line through the vertex.
inline Arm linked_partner(Arm a) {
  switch (a) {
    case Arm::N:
      return Arm::W;
    case Arm::W:
      return Arm::N;
    case Arm::E:
      return Arm::S;
    case Arm::S:
      return Arm::E;
  }
  throw std::logic_error("bad arm");
}

inline bool orthogonal(Arm a, Arm b) {
  const bool ha = a == Arm::E || a == Arm::W, hb = b == Arm::E || b == Arm::W;
  return ha != hb;
}

inline std::array<Site, 4> sites_around(DualVertex v) {
  return {Site{v.i, v.j}, Site{v.i + 1, v.j}, Site{v.i, v.j + 1}, Site{v.i + 1, v.j + 1}};
}

/// Sequence of dual bonds e_0..e_{n-1} with vertices v_0..v_n, e_k joining
/// v_k and v_{k+1}. Closed contours have v_n = v_0 and list each bond once.
struct GeometricContour {
  std::vector<DualBond> bonds;
  std::vector<DualVertex> vertices;
  bool closed = false;

  std::size_t length() const {
    std::set<DualBond> distinct(bonds.begin(), bonds.end());
    return distinct.size();
  }
};

/// A level set: which sites count as high, and which lattice bonds may carry
/// contour bonds.
struct LevelSet {
  std::function<bool(Site)> high;
  std::function<bool(const LatticeBond&)> allowed;

  bool separates(const DualBond& b) const {
    const auto lb = b.crossed();
    return high(lb.a) != high(lb.b);
  }
  bool member(const DualBond& b) const { return separates(b) && allowed(b.crossed()); }

  /// Continuation of a contour arriving at v along `in`, by the linked-pair
  /// rule at 4-valent vertices.
  std::optional<Arm> next_arm(DualVertex v, Arm in) const {
    int count = 0;
    std::optional<Arm> other;
    for (Arm a : kArms)
      if (separates(arm_bond(v, a))) {
        ++count;
        if (a != in) other = a;
      }
    Arm out;
    if (count == 4)
      out = linked_partner(in);
    else if (count == 2 && other)
      out = *other;
    else
      return std::nullopt;
    if (!member(arm_bond(v, out))) return std::nullopt;
    return out;
  }

  /// Follows the contour from `start` through its `towards` endpoint until it
  /// closes or ends. The result begins with `start`.
  GeometricContour walk(const DualBond& start, DualVertex towards) const {
    GeometricContour c;
    c.bonds.push_back(start);
    c.vertices = {other_end(start, towards), towards};
    DualBond cur = start;
    DualVertex v = towards;
    for (std::size_t guard = 0; guard < (std::size_t{1} << 30); ++guard) {
      const auto out = next_arm(v, arm_of(cur, v));
      if (!out) return c;
      const DualBond nb = arm_bond(v, *out);
      if (nb == start) {
        c.closed = true;
        return c;
      }
      c.bonds.push_back(nb);
      v = other_end(nb, v);
      c.vertices.push_back(v);
      cur = nb;
    }
    throw std::runtime_error("contour walk did not terminate");
  }

  /// Every maximal contour formed by the given member bonds.
  std::vector<GeometricContour> trace_all(std::vector<DualBond> members) const {
    std::sort(members.begin(), members.end());
    std::set<DualBond> seen;
    std::vector<GeometricContour> out;
    for (const auto& b : members) {
      if (seen.count(b)) continue;
      auto fwd = walk(b, b.hi());
      if (!fwd.closed) {
        // Extend backwards from b and splice.
        auto back = walk(b, b.lo);
        GeometricContour c;
        for (std::size_t k = back.bonds.size(); k-- > 1;) c.bonds.push_back(back.bonds[k]);
        for (std::size_t k = back.vertices.size(); k-- > 1;) c.vertices.push_back(back.vertices[k]);
        c.bonds.insert(c.bonds.end(), fwd.bonds.begin(), fwd.bonds.end());
        c.vertices.insert(c.vertices.end(), fwd.vertices.begin() + 1, fwd.vertices.end());
        fwd = std::move(c);
      }
      for (const auto& e : fwd.bonds) seen.insert(e);
      out.push_back(std::move(fwd));
    }
    return out;
  }
};

namespace detail {

struct Box {
  int x0, x1, y0, y1;
  bool inside(Site s) const { return s.x >= x0 && s.x <= x1 && s.y >= y0 && s.y <= y1; }
  std::size_t index(Site s) const {
    return static_cast<std::size_t>(s.y - y0) * static_cast<std::size_t>(x1 - x0 + 1) +
           static_cast<std::size_t>(s.x - x0);
  }
  std::size_t count() const { return static_cast<std::size_t>(x1 - x0 + 1) * static_cast<std::size_t>(y1 - y0 + 1); }
  Site site(std::size_t k) const {
    const int w = x1 - x0 + 1;
    return {x0 + static_cast<int>(k) % w, y0 + static_cast<int>(k) / w};
  }
};

// Sites touched by the bonds, plus a margin of one.
inline Box bounding_box(const std::vector<DualBond>& bonds) {
  if (bonds.empty()) throw std::invalid_argument("empty bond set");
  Box b{bonds[0].lo.i, bonds[0].lo.i, bonds[0].lo.j, bonds[0].lo.j};
  for (const auto& e : bonds)
    for (const auto v : {e.lo, e.hi()}) {
      b.x0 = std::min(b.x0, v.i);
      b.x1 = std::max(b.x1, v.i + 1);
      b.y0 = std::min(b.y0, v.j);
      b.y1 = std::max(b.y1, v.j + 1);
    }
  return {b.x0 - 1, b.x1 + 1, b.y0 - 1, b.y1 + 1};
}

// Face labels over the box: 4-neighbour components not crossing any blocked
// bond. Label 0 is the component of the box border.
inline std::vector<int> face_labels(const Box& box, const std::set<LatticeBond>& blocked) {
  std::vector<int> label(box.count(), -1);
  int next = 0;
  auto fill = [&](std::size_t seed, int id) {
    std::deque<std::size_t> queue{seed};
    label[seed] = id;
    while (!queue.empty()) {
      const Site s = box.site(queue.front());
      queue.pop_front();
      for (const auto& d : kNeighbourOffsets) {
        const Site t = s + d;
        if (!box.inside(t)) continue;
        const auto k = box.index(t);
        if (label[k] >= 0 || blocked.count(LatticeBond::make(s, t))) continue;
        label[k] = id;
        queue.push_back(k);
      }
    }
  };
  fill(box.index({box.x0, box.y0}), next++);
  for (std::size_t k = 0; k < label.size(); ++k)
    if (label[k] < 0) fill(k, next++);
  return label;
}

}  // namespace detail

/// Sites surrounded by a closed contour: odd number of contour crossings on
/// the row to the right of the site. A pinch vertex cuts off its NW and SE
/// corners but leaves the SW and NE corners connected through it.
inline std::vector<Site> interior(const GeometricContour& c) {
  if (!c.closed) throw std::invalid_argument("interior: contour is open");
  std::map<int, std::vector<int>> cuts;  // row -> x positions of vertical bonds (x + 1/2 stored as x)
  for (const auto& e : c.bonds)
    if (e.orientation == Orientation::vertical) cuts[e.lo.j + 1].push_back(e.lo.i);
  std::vector<Site> out;
  for (auto& [y, xs] : cuts) {
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2)
      for (int x = xs[k] + 1; x <= xs[k + 1]; ++x) out.push_back({x, y});
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct ContourDecoration {
  std::vector<Site> delta;
  std::vector<Site> plus;
  std::vector<Site> minus;
};

/// Delta: sites at distance 1/2 from the contour, and the four sites around
/// each vertex where the contour turns through a non-linked pair.
inline ContourDecoration decorations(const GeometricContour& c) {
  if (!c.closed) throw std::invalid_argument("decorations: contour is open");
  std::set<Site> delta;
  for (const auto& e : c.bonds) {
    const auto lb = e.crossed();
    delta.insert(lb.a);
    delta.insert(lb.b);
  }
  const std::size_t n = c.bonds.size();
  for (std::size_t k = 0; k < n; ++k) {
    const DualVertex v = c.vertices[k + 1];
    const Arm a = arm_of(c.bonds[k], v), b = arm_of(c.bonds[(k + 1) % n], v);
    if (orthogonal(a, b) && linked_partner(a) != b)
      for (const auto& s : sites_around(v)) delta.insert(s);
  }
  const auto inner = interior(c);
  ContourDecoration d;
  d.delta.assign(delta.begin(), delta.end());
  for (const auto& s : d.delta)
    (std::binary_search(inner.begin(), inner.end(), s) ? d.plus : d.minus).push_back(s);
  return d;
}

inline bool is_h_contour(const HeightField& field, const ContourDecoration& d, int h) {
  for (const auto& s : d.plus)
    if (field.at(s) < h) return false;
  for (const auto& s : d.minus)
    if (field.at(s) > h - 1) return false;
  return true;
}

struct HContours {
  int h = 0;
  std::vector<GeometricContour> contours;  // closed h-contours
  std::vector<GeometricContour> rejected;  // closed level-set loops failing the h-contour test
  std::vector<GeometricContour> open;      // pieces ending on the region boundary
};

/// Level-set loops of {phi >= h} through bonds with an endpoint in the region.
inline HContours extract_h_contours(const HeightField& field, int h) {
  const auto& region = field.region();
  LevelSet ls{[&](Site s) { return field.at(s) >= h; },
              [&](const LatticeBond& b) { return region.contains(b.a) || region.contains(b.b); }};
  std::vector<DualBond> members;
  for (const auto& s : region.sites())
    for (const auto& d : kNeighbourOffsets) {
      const auto lb = LatticeBond::make(s, s + d);
      if (region.contains(s + d) && !(s < s + d)) continue;
      const auto e = DualBond::crossing(lb);
      if (ls.member(e)) members.push_back(e);
    }
  HContours out;
  out.h = h;
  for (auto& c : ls.trace_all(std::move(members))) {
    if (!c.closed)
      out.open.push_back(std::move(c));
    else if (is_h_contour(field, decorations(c), h))
      out.contours.push_back(std::move(c));
    else
      out.rejected.push_back(std::move(c));
  }
  return out;
}

/// h-contours for every level between the smallest and largest height.
inline std::vector<HContours> extract_all_contours(const HeightField& field) {
  int lo = 0, hi = 0;
  for (const auto& s : field.region().sites())
    for (const auto& d : kNeighbourOffsets) {
      lo = std::min({lo, field.at(s), field.at(s + d)});
      hi = std::max({hi, field.at(s), field.at(s + d)});
    }
  std::vector<HContours> out;
  for (int h = lo + 1; h <= hi; ++h) out.push_back(extract_h_contours(field, h));
  return out;
}

struct OpenContour {
  GeometricContour path;     // from (-L-1/2, a-1/2) to (L+1/2, b-1/2)
  GeometricContour closure;  // closed contour through the outside of the box
  ContourDecoration decoration;  // restricted to the box
  bool is_h_contour = false;
};

/// The open 1-contour of a field under a one-step staircase on Lambda_{L,M}.
/// The field is extended by its boundary ring (top corners high, bottom
/// corners low) and everything beyond the ring counts as low; the closed
/// contour through the left wall step is cut at the two wall crossings.
inline OpenContour open_contour(const HeightField& field) {
  const auto& region = field.region();
  const auto& bc = field.bc();
  if (bc.kind() != BoundaryKind::staircase || bc.steps() != 1 || !region.is_rectangular())
    throw std::invalid_argument("open_contour: needs a one-step staircase on a rectangle");
  const int L = region.L(), M = region.M(), a = bc.a()[0], b = bc.b()[0];
  LevelSet ls{[&](Site s) {
                if (region.contains(s)) return field.at(s) >= 1;
                if (std::abs(s.x) > L + 1 || std::abs(s.y) > M + 1) return false;
                if (std::abs(s.x) == L + 1 && std::abs(s.y) == M + 1) return s.y > 0;
                return bc.value(s) >= 1;
              },
              [](const LatticeBond&) { return true; }};
  const DualVertex from{-L - 1, a - 1}, to{L, b - 1};
  const DualBond entry = arm_bond(from, Arm::W);
  if (!ls.member(entry)) throw std::invalid_argument("open_contour: no step on the left wall");
  auto loop = ls.walk(entry, from);
  if (!loop.closed) throw std::runtime_error("open_contour: boundary loop does not close");
  OpenContour out;
  out.path.vertices.push_back(from);
  bool reached = false;
  for (std::size_t k = 1; k < loop.bonds.size(); ++k) {
    const auto& e = loop.bonds[k];
    const auto lb = e.crossed();
    if (!region.contains(lb.a) && !region.contains(lb.b))
      throw std::runtime_error("open_contour: no contour crosses the box from left to right");
    out.path.bonds.push_back(e);
    out.path.vertices.push_back(loop.vertices[k + 1]);
    if (loop.vertices[k + 1] == to) {
      reached = true;
      break;
    }
  }
  if (!reached) throw std::runtime_error("open_contour: right wall step not reached");
  out.closure = loop;
  const auto deco = decorations(loop);
  for (const auto& s : deco.plus)
    if (region.contains(s)) out.decoration.plus.push_back(s);
  for (const auto& s : deco.minus)
    if (region.contains(s)) out.decoration.minus.push_back(s);
  for (const auto& s : deco.delta)
    if (region.contains(s)) out.decoration.delta.push_back(s);
  out.is_h_contour = is_h_contour(field, out.decoration, 1);
  return out;
}

/// Marked contours with their sign constraints and tilted bond rule.
struct TiltedSpec {
  std::vector<GeometricContour> contours;
  ConstraintSet constraints;

  BondWeightRule rule() const {
    std::vector<DualBond> marked;
    for (const auto& c : contours) marked.insert(marked.end(), c.bonds.begin(), c.bonds.end());
    return BondWeightRule::tilted(std::move(marked));
  }
};

/// Constraints and tilt from the open contour of `field`.
inline TiltedSpec tilted_spec(const OpenContour& oc) {
  TiltedSpec t;
  t.contours.push_back(oc.path);
  t.constraints.plus = oc.decoration.plus;
  t.constraints.minus = oc.decoration.minus;
  return t;
}

/// Connected dual-bond support with the gradient across each bond, in
/// canonical bond order. The gradient of lattice bond (a, b), a < b, is
/// phi(b) - phi(a).
struct Cluster {
  std::vector<DualBond> support;
  std::vector<int> gradients;

  friend bool operator==(const Cluster&, const Cluster&) = default;
  friend auto operator<=>(const Cluster&, const Cluster&) = default;

  std::set<DualVertex> vertices() const {
    std::set<DualVertex> v;
    for (const auto& e : support) {
      v.insert(e.lo);
      v.insert(e.hi());
    }
    return v;
  }
};

struct ClusterFaces {
  detail::Box box;
  std::vector<int> label;  // 0: unbounded face
  std::vector<int> height;  // reconstructed surface over the box
  int faces = 0;            // number of bounded faces
};

/// Faces of the support and the surface Phi(X): zero on the unbounded face,
/// constant on each face, jumping by the recorded gradients across the
/// support. Throws if the gradients are inconsistent.
inline ClusterFaces cluster_faces(const Cluster& x) {
  if (x.support.size() != x.gradients.size()) throw std::invalid_argument("cluster: gradient count mismatch");
  ClusterFaces f;
  f.box = detail::bounding_box(x.support);
  std::map<LatticeBond, int> grad;
  std::set<LatticeBond> blocked;
  for (std::size_t k = 0; k < x.support.size(); ++k) {
    const auto lb = x.support[k].crossed();
    grad[lb] = x.gradients[k];
    blocked.insert(lb);
  }
  f.label = detail::face_labels(f.box, blocked);
  f.faces = *std::max_element(f.label.begin(), f.label.end());
  f.height.assign(f.box.count(), 0);
  std::vector<char> done(f.box.count(), 0);
  std::deque<std::size_t> queue;
  const auto origin = f.box.index({f.box.x0, f.box.y0});
  done[origin] = 1;
  queue.push_back(origin);
  while (!queue.empty()) {
    const Site s = f.box.site(queue.front());
    const int hs = f.height[queue.front()];
    queue.pop_front();
    for (const auto& d : kNeighbourOffsets) {
      const Site t = s + d;
      if (!f.box.inside(t)) continue;
      const auto lb = LatticeBond::make(s, t);
      int ht = hs;
      if (auto it = grad.find(lb); it != grad.end()) ht = t == lb.b ? hs + it->second : hs - it->second;
      const auto k = f.box.index(t);
      if (done[k]) {
        if (f.height[k] != ht) throw std::invalid_argument("cluster: gradients are not consistent");
        continue;
      }
      done[k] = 1;
      f.height[k] = ht;
      queue.push_back(k);
    }
  }
  for (std::size_t k = 0; k < f.box.count(); ++k)
    if (f.label[k] == 0 && f.height[k] != 0) throw std::invalid_argument("cluster: nonzero on the unbounded face");
  return f;
}

/// Phi(X) evaluated on the sites of a region (zero away from the cluster).
inline std::vector<int> reconstruct(const Cluster& x, const Region& region) {
  const auto f = cluster_faces(x);
  std::vector<int> h(region.size(), 0);
  for (std::size_t k = 0; k < region.size(); ++k)
    if (f.box.inside(region.site(k))) h[k] = f.height[f.box.index(region.site(k))];
  return h;
}

/// Sites of the bounded faces.
inline std::vector<Site> cluster_interior(const Cluster& x) {
  const auto f = cluster_faces(x);
  std::vector<Site> out;
  for (std::size_t k = 0; k < f.label.size(); ++k)
    if (f.label[k] != 0) out.push_back(f.box.site(k));
  return out;
}

/// Sites of the unbounded face separated from the cluster by one of its bonds.
inline std::vector<Site> external_boundary(const Cluster& x) {
  const auto f = cluster_faces(x);
  std::set<Site> out;
  for (const auto& e : x.support) {
    const auto lb = e.crossed();
    for (const auto& s : {lb.a, lb.b})
      if (f.label[f.box.index(s)] == 0) out.insert(s);
  }
  return {out.begin(), out.end()};
}

struct ClusterConfig {
  std::vector<Cluster> clusters;

  /// Supports pairwise without common dual vertices.
  bool compatible() const {
    std::set<DualVertex> used;
    for (const auto& c : clusters)
      for (const auto& v : c.vertices())
        if (!used.insert(v).second) return false;
    return true;
  }
};

/// Splits the gradient support of a field into connected clusters.
inline ClusterConfig cluster_decompose(const HeightField& field) {
  const auto& region = field.region();
  std::map<DualBond, int> grad;
  for (const auto& s : region.sites())
    for (const auto& d : kNeighbourOffsets) {
      const Site t = s + d;
      if (region.contains(t) && !(s < t)) continue;
      const auto lb = LatticeBond::make(s, t);
      const int g = field.at(lb.b) - field.at(lb.a);
      if (g != 0) grad[DualBond::crossing(lb)] = g;
    }
  // Union-find over dual vertices.
  std::map<DualVertex, DualVertex> parent;
  std::function<DualVertex(DualVertex)> find = [&](DualVertex v) {
    auto it = parent.find(v);
    if (it == parent.end()) return parent[v] = v;
    if (it->second == v) return v;
    return it->second = find(it->second);
  };
  for (const auto& [e, g] : grad) {
    const auto r1 = find(e.lo), r2 = find(e.hi());
    if (!(r1 == r2)) parent[r1] = r2;
  }
  std::map<DualVertex, Cluster> byroot;
  for (const auto& [e, g] : grad) {
    auto& c = byroot[find(e.lo)];
    c.support.push_back(e);
    c.gradients.push_back(g);
  }
  ClusterConfig out;
  for (auto& [root, c] : byroot) out.clusters.push_back(std::move(c));
  std::sort(out.clusters.begin(), out.clusters.end());
  return out;
}

/// Sum of the clusters' surfaces on the region.
inline std::vector<int> reconstruct(const ClusterConfig& config, const Region& region) {
  std::vector<int> h(region.size(), 0);
  for (const auto& c : config.clusters) {
    const auto part = reconstruct(c, region);
    for (std::size_t k = 0; k < h.size(); ++k) h[k] += part[k];
  }
  return h;
}

/// Phi(X) respects the sign constraints.
inline bool is_legal(const Cluster& x, const ConstraintSet& constraints) {
  const auto f = cluster_faces(x);
  auto at = [&](Site s) { return f.box.inside(s) ? f.height[f.box.index(s)] : 0; };
  for (const auto& s : constraints.plus)
    if (at(s) < 0) return false;
  for (const auto& s : constraints.minus)
    if (at(s) > 0) return false;
  return true;
}

/// -beta times the summed bond weights of all recorded gradients.
inline double weight_product(const ClusterConfig& config, const ModelParams& params,
                             const BondWeightRule& rule = BondWeightRule::standard()) {
  if (!config.compatible()) throw std::invalid_argument("weight_product: incompatible cluster configuration");
  double s = 0.0;
  for (const auto& c : config.clusters)
    for (std::size_t k = 0; k < c.support.size(); ++k)
      s += gradient_weight(params, c.gradients[k], rule.is_tilted(c.support[k].crossed()));
  return -params.beta() * s;
}

struct BijectionReport {
  bool pass = true;
  std::size_t surfaces = 0;         // configurations in the window
  std::size_t legal_surfaces = 0;
  std::size_t distinct_clusters = 0;
  std::size_t compatible_configs = 0;  // compatible cluster sets whose surface lies in the window
  double max_weight_error = 0.0;
  double log_z_clusters = 0.0;
  double log_z_surfaces = 0.0;
  std::size_t face_checks = 0;
  std::string failure;
};

namespace detail {

inline bool satisfies(std::span<const int> h, const Region& region, const ConstraintSet& c) {
  for (const auto& s : c.plus)
    if (h[static_cast<std::size_t>(region.index_of(s))] < 0) return false;
  for (const auto& s : c.minus)
    if (h[static_cast<std::size_t>(region.index_of(s))] > 0) return false;
  return true;
}

}  // namespace detail

/// Exhaustive check of the surface/cluster correspondence on a small region
/// with zero boundary. Every surface in the window is decomposed and rebuilt;
/// cluster weights are compared with the Hamiltonian; the sum over legal
/// cluster configurations is compared with the constrained partition
/// function from the enumeration engine; and compatible sets of the clusters
/// seen are enumerated independently to confirm the image is exactly the set
/// of compatible configurations. Faces of legal clusters are checked for the
/// boundary property of constrained faces.
inline BijectionReport check_cluster_bijection(std::shared_ptr<const Region> region, TruncationWindow window,
                                               const ModelParams& params, const ConstraintSet& constraints,
                                               const BondWeightRule& rule = BondWeightRule::standard(),
                                               double tol = 1e-10) {
  window.validate();
  const auto bc = BoundaryCondition::zero();
  const Stencil stencil(region, bc, rule);
  BijectionReport rep;
  auto fail = [&](std::string why) {
    if (rep.pass) rep.failure = std::move(why);
    rep.pass = false;
  };
  std::set<std::vector<Cluster>> image;
  std::set<Cluster> clusters;
  LogSumExp zc;
  SiteBounds bounds(*region, window);
  enumerate_configurations(stencil, bounds, params, [&](std::span<const int> h, double) {
    ++rep.surfaces;
    const HeightField field(region, bc, std::vector<int>(h.begin(), h.end()));
    const auto cfg = cluster_decompose(field);
    if (!cfg.compatible()) fail("decomposition produced touching clusters");
    const auto back = reconstruct(cfg, *region);
    if (!std::equal(back.begin(), back.end(), h.begin())) fail("reconstruction differs from the surface");
    const double w = weight_product(cfg, params, rule);
    const double e = -params.beta() * energy(stencil, h, params);
    rep.max_weight_error = std::max(rep.max_weight_error, std::abs(w - e));
    if (std::abs(w - e) > tol) fail("cluster weight differs from -beta H");
    bool all_legal = true;
    for (const auto& c : cfg.clusters) {
      clusters.insert(c);
      all_legal = all_legal && is_legal(c, constraints);
    }
    const bool legal = detail::satisfies(h, *region, constraints);
    if (legal != all_legal) fail("surface legality differs from cluster legality");
    if (legal) {
      ++rep.legal_surfaces;
      zc.add(w);
    }
    image.insert(cfg.clusters);
  }, std::numeric_limits<double>::infinity());
  if (image.size() != rep.surfaces) fail("decomposition is not injective");
  rep.distinct_clusters = clusters.size();
  rep.log_z_clusters = zc.value();
  rep.log_z_surfaces = enumerate_partition(stencil, SiteBounds(*region, window, constraints), params, window).logZ;
  if (std::abs(rep.log_z_clusters - rep.log_z_surfaces) > tol) fail("cluster sum differs from the partition function");

  // Compatible sets drawn from the clusters seen, rebuilt independently.
  const std::vector<Cluster> pool(clusters.begin(), clusters.end());
  std::map<DualVertex, std::size_t> vindex;
  for (const auto& c : pool)
    for (const auto& v : c.vertices()) vindex.emplace(v, vindex.size());
  const std::size_t words = (vindex.size() + 63) / 64;
  std::vector<std::vector<std::uint64_t>> masks;
  std::vector<std::vector<int>> surf;
  for (const auto& c : pool) {
    std::vector<std::uint64_t> m(words, 0);
    for (const auto& v : c.vertices()) {
      const auto k = vindex.at(v);
      m[k / 64] |= std::uint64_t{1} << (k % 64);
    }
    masks.push_back(std::move(m));
    surf.push_back(reconstruct(c, *region));
  }
  std::vector<std::size_t> chosen;
  std::vector<std::uint64_t> used(words, 0);
  std::vector<int> total(region->size(), 0);
  std::function<void(std::size_t)> grow = [&](std::size_t from) {
    bool inside = true;
    for (int x : total) inside = inside && x >= window.hmin && x <= window.hmax;
    if (inside) {
      ++rep.compatible_configs;
      std::vector<Cluster> cfg;
      for (auto i : chosen) cfg.push_back(pool[i]);
      if (!image.count(cfg)) fail("compatible configuration with no surface");
    }
    for (std::size_t i = from; i < pool.size(); ++i) {
      bool disjoint = true;
      for (std::size_t w = 0; w < words && disjoint; ++w) disjoint = (masks[i][w] & used[w]) == 0;
      if (!disjoint) continue;
      chosen.push_back(i);
      for (std::size_t w = 0; w < words; ++w) used[w] |= masks[i][w];
      for (std::size_t k = 0; k < total.size(); ++k) total[k] += surf[i][k];
      grow(i + 1);
      for (std::size_t k = 0; k < total.size(); ++k) total[k] -= surf[i][k];
      for (std::size_t w = 0; w < words; ++w) used[w] &= ~masks[i][w];
      chosen.pop_back();
    }
  };
  grow(0);
  if (rep.compatible_configs != rep.surfaces) fail("compatible configurations and surfaces differ in number");

  // Faces of legal clusters meeting only one of the constraint sets keep
  // those sites on their starred boundary; faces meeting both are flat at 0.
  const std::set<Site> plus(constraints.plus.begin(), constraints.plus.end());
  const std::set<Site> minus(constraints.minus.begin(), constraints.minus.end());
  for (const auto& c : pool) {
    if (!is_legal(c, constraints)) continue;
    const auto f = cluster_faces(c);
    for (int r = 1; r <= f.faces; ++r) {
      std::vector<Site> face;
      int height = 0;
      for (std::size_t k = 0; k < f.label.size(); ++k)
        if (f.label[k] == r) {
          face.push_back(f.box.site(k));
          height = f.height[k];
        }
      bool meets_plus = false, meets_minus = false;
      for (const auto& s : face) {
        meets_plus = meets_plus || plus.count(s);
        meets_minus = meets_minus || minus.count(s);
      }
      if (!meets_plus && !meets_minus) continue;
      ++rep.face_checks;
      if (meets_plus && meets_minus) {
        if (height != 0) fail("face meeting both constraint sets is not at height 0");
        continue;
      }
      const auto starred = boundary_sets(Region::from_sites(face)).starred;
      const auto& side = meets_plus ? plus : minus;
      for (const auto& s : face)
        if (side.count(s) && !std::binary_search(starred.begin(), starred.end(), s))
          fail("constrained site in the bulk of a face");
    }
  }
  return rep;
}

}  // namespace sos
