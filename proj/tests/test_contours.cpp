#include <gtest/gtest.h>

#include <random>

#include "sos/contours.hpp"

using namespace sos;

namespace {

std::shared_ptr<const Region> share(Region r) { return std::make_shared<const Region>(std::move(r)); }

HeightField field_from_rows(int L, const std::vector<std::vector<int>>& rows_top_down) {
  const auto region = share(Region::square(L));
  HeightField f(region, BoundaryCondition::zero());
  const int n = 2 * L + 1;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) f.set({c - L, L - r}, rows_top_down[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]);
  return f;
}

// Point in polygon on the vertex coordinates (crossing test on all edges).
bool inside_polygon(const GeometricContour& c, Site s) {
  bool in = false;
  const std::size_t n = c.bonds.size();
  for (std::size_t k = 0; k < n; ++k) {
    const double xi = c.vertices[k].cx(), yi = c.vertices[k].cy();
    const double xj = c.vertices[k + 1].cx(), yj = c.vertices[k + 1].cy();
    if ((yi > s.y) != (yj > s.y) && s.x < (xj - xi) * (s.y - yi) / (yj - yi) + xi) in = !in;
  }
  return in;
}

// Distance of a site from a dual segment.
double segment_distance(Site s, const DualBond& e) {
  const double ax = e.lo.cx(), ay = e.lo.cy(), bx = e.hi().cx(), by = e.hi().cy();
  const double t = std::clamp(((s.x - ax) * (bx - ax) + (s.y - ay) * (by - ay)), 0.0, 1.0);
  return std::hypot(s.x - (ax + t * (bx - ax)), s.y - (ay + t * (by - ay)));
}

// Delta by scanning sites against segments and non-linked corners, where
// linked means both bonds leave the corner on the same side of y = x.
std::set<Site> delta_by_scan(const GeometricContour& c) {
  std::vector<std::pair<double, double>> corners;
  const std::size_t n = c.bonds.size();
  for (std::size_t k = 0; k < n; ++k) {
    const auto v = c.vertices[k + 1];
    const auto p = other_end(c.bonds[k], v), q = other_end(c.bonds[(k + 1) % n], v);
    const int d1x = p.i - v.i, d1y = p.j - v.j, d2x = q.i - v.i, d2y = q.j - v.j;
    if (d1x * d2x + d1y * d2y != 0) continue;
    if ((d1y - d1x > 0) != (d2y - d2x > 0)) corners.push_back({v.cx(), v.cy()});
  }
  std::set<Site> out;
  const auto& v0 = c.vertices[0];
  for (int x = v0.i - 30; x <= v0.i + 30; ++x)
    for (int y = v0.j - 30; y <= v0.j + 30; ++y) {
      const Site s{x, y};
      double best = 1e9;
      for (const auto& e : c.bonds) best = std::min(best, segment_distance(s, e));
      bool hit = std::abs(best - 0.5) < 1e-9;
      for (const auto& [cx, cy] : corners) hit = hit || std::abs(std::hypot(x - cx, y - cy) - std::sqrt(0.5)) < 1e-9;
      if (hit) out.insert(s);
    }
  return out;
}

// Independent level-set tracer: components of {phi >= h} under 4-adjacency
// plus the SW/NE diagonal; each component's filled hull (complement of the
// outside reached through the other sites with the same adjacency) gives
// one contour's interior size and boundary length.
std::multiset<std::pair<int, int>> contours_by_flood(const HeightField& f, int h, int margin) {
  const int L = f.region().L() + margin;
  auto high = [&](Site s) { return f.at(s) >= h; };
  auto in_box = [&](Site s) { return std::abs(s.x) <= L && std::abs(s.y) <= L; };
  std::set<Site> seen;
  std::multiset<std::pair<int, int>> out;
  const Site high_steps[6] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {-1, -1}};
  const Site low_steps[6] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {-1, -1}};
  for (int x = -L; x <= L; ++x)
    for (int y = -L; y <= L; ++y) {
      const Site s{x, y};
      if (!high(s) || seen.count(s)) continue;
      std::set<Site> comp{s};
      std::vector<Site> stack{s};
      while (!stack.empty()) {
        const Site u = stack.back();
        stack.pop_back();
        for (const auto& d : high_steps) {
          const Site t = u + d;
          if (in_box(t) && high(t) && comp.insert(t).second) stack.push_back(t);
        }
      }
      seen.insert(comp.begin(), comp.end());
      std::set<Site> outside{{-L - 1, -L - 1}};
      stack = {{-L - 1, -L - 1}};
      while (!stack.empty()) {
        const Site u = stack.back();
        stack.pop_back();
        for (const auto& d : low_steps) {
          const Site t = u + d;
          if (std::abs(t.x) > L + 1 || std::abs(t.y) > L + 1 || comp.count(t)) continue;
          if (outside.insert(t).second) stack.push_back(t);
        }
      }
      int area = 0, length = 0;
      for (int xx = -L; xx <= L; ++xx)
        for (int yy = -L; yy <= L; ++yy) {
          const Site u{xx, yy};
          if (outside.count(u)) continue;
          ++area;
          for (const auto& d : kNeighbourOffsets) length += outside.count(u + d) ? 1 : 0;
        }
      out.insert({area, length});
    }
  return out;
}

std::multiset<std::pair<int, int>> summary(const std::vector<GeometricContour>& cs) {
  std::multiset<std::pair<int, int>> out;
  for (const auto& c : cs) out.insert({static_cast<int>(interior(c).size()), static_cast<int>(c.length())});
  return out;
}

}  // namespace

TEST(Contours, FlatFieldHasNone) {
  const HeightField f(share(Region::square(3)), BoundaryCondition::zero());
  for (int h = 1; h <= 3; ++h) {
    const auto r = extract_h_contours(f, h);
    EXPECT_TRUE(r.contours.empty());
    EXPECT_TRUE(r.rejected.empty());
    EXPECT_TRUE(r.open.empty());
  }
}

TEST(Contours, ElementarySquare) {
  HeightField f(share(Region::square(2)), BoundaryCondition::zero());
  f.set({0, 0}, 1);
  const auto r = extract_h_contours(f, 1);
  ASSERT_EQ(r.contours.size(), 1u);
  const auto& c = r.contours[0];
  EXPECT_TRUE(c.closed);
  EXPECT_EQ(c.length(), 4u);
  EXPECT_EQ(interior(c), (std::vector<Site>{{0, 0}}));
  const auto d = decorations(c);
  EXPECT_EQ(d.plus, (std::vector<Site>{{0, 0}}));
  std::vector<Site> expect = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {-1, -1}};
  std::sort(expect.begin(), expect.end());
  EXPECT_EQ(d.minus, expect);
  EXPECT_TRUE(extract_h_contours(f, 2).contours.empty());
}

TEST(Contours, DominoDecoration) {
  HeightField f(share(Region::square(2)), BoundaryCondition::zero());
  f.set({0, 0}, 1);
  f.set({1, 0}, 1);
  const auto r = extract_h_contours(f, 1);
  ASSERT_EQ(r.contours.size(), 1u);
  EXPECT_EQ(r.contours[0].length(), 6u);
  EXPECT_EQ(decorations(r.contours[0]).plus, (std::vector<Site>{{0, 0}, {1, 0}}));
}

TEST(Contours, DiagonalPairsFollowTheLinkedRule) {
  // SW-NE neighbours share one contour; NW-SE neighbours get two.
  HeightField f(share(Region::square(2)), BoundaryCondition::zero());
  f.set({0, 0}, 1);
  f.set({1, 1}, 1);
  auto r = extract_h_contours(f, 1);
  ASSERT_EQ(r.contours.size() + r.rejected.size(), 1u);
  EXPECT_EQ(interior(r.contours.empty() ? r.rejected[0] : r.contours[0]).size(), 2u);
  HeightField g(share(Region::square(2)), BoundaryCondition::zero());
  g.set({0, 1}, 1);
  g.set({1, 0}, 1);
  r = extract_h_contours(g, 1);
  EXPECT_EQ(r.contours.size(), 2u);
}

TEST(Contours, PinchedRingDoesNotSurroundItsGap) {
  // The ring passes one vertex twice; the low centre reaches the outside
  // through the SW-NE diagonal of that vertex.
  const auto f = field_from_rows(2, {{0, 0, 0, 0, 0},
                                     {0, 1, 1, 0, 0},
                                     {0, 1, 0, 1, 0},
                                     {0, 1, 1, 1, 0},
                                     {0, 0, 0, 0, 0}});
  const auto r = extract_h_contours(f, 1);
  ASSERT_EQ(r.contours.size(), 1u);
  const auto in = interior(r.contours[0]);
  EXPECT_EQ(in.size(), 7u);
  EXPECT_FALSE(std::binary_search(in.begin(), in.end(), Site{0, 0}));
  EXPECT_EQ(contours_by_flood(f, 1, 1), summary(r.contours));
}

TEST(Contours, TwoPlateauConfigurationMatchesFloodTracer) {
  // Four 1-contours and two 2-contours.
  const auto f = field_from_rows(3, {{0, 0, 0, 0, 0, 0, 0},
                                     {0, 1, 1, 1, 0, 0, 0},
                                     {0, 1, 2, 1, 0, 1, 0},
                                     {0, 1, 1, 1, 0, 0, 0},
                                     {0, 0, 0, 0, 0, 0, 0},
                                     {0, 1, 1, 0, 2, 2, 0},
                                     {0, 1, 1, 0, 2, 2, 0}});
  const auto one = extract_h_contours(f, 1), two = extract_h_contours(f, 2);
  EXPECT_EQ(one.contours.size(), 4u);
  EXPECT_EQ(two.contours.size(), 2u);
  EXPECT_EQ(summary(one.contours), contours_by_flood(f, 1, 1));
  EXPECT_EQ(summary(two.contours), contours_by_flood(f, 2, 1));
}

TEST(Contours, RandomFieldsAgainstOracles) {
  std::mt19937_64 rng(17);
  int loops = 0;
  for (int trial = 0; trial < 200; ++trial) {
    HeightField f(share(Region::square(3)), BoundaryCondition::zero());
    for (auto& h : f.heights()) h = static_cast<int>(rng() % 3);
    for (int h = 1; h <= 2; ++h) {
      const auto r = extract_h_contours(f, h);
      std::vector<GeometricContour> all = r.contours;
      all.insert(all.end(), r.rejected.begin(), r.rejected.end());
      for (const auto& c : all) {
        ++loops;
        // Interior by ray casting.
        const auto in = interior(c);
        const auto box = detail::bounding_box(c.bonds);
        std::size_t count = 0;
        for (int x = box.x0; x <= box.x1; ++x)
          for (int y = box.y0; y <= box.y1; ++y) count += inside_polygon(c, {x, y}) ? 1 : 0;
        EXPECT_EQ(in.size(), count);
        // Decorations by geometric scan.
        const auto d = decorations(c);
        const auto scan = delta_by_scan(c);
        EXPECT_EQ(std::set<Site>(d.delta.begin(), d.delta.end()), scan);
        // Consecutive bonds share a vertex; bonds are distinct.
        EXPECT_EQ(c.length(), c.bonds.size());
      }
      for (const auto& c : r.contours) EXPECT_TRUE(is_h_contour(f, decorations(c), h));
    }
  }
  EXPECT_GT(loops, 200);
}

TEST(Contours, IntersectingContoursAreNested) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    HeightField f(share(Region::square(3)), BoundaryCondition::zero());
    for (auto& h : f.heights()) h = static_cast<int>(rng() % 4);
    std::vector<GeometricContour> all;
    for (const auto& level : extract_all_contours(f))
      all.insert(all.end(), level.contours.begin(), level.contours.end());
    for (std::size_t i = 0; i < all.size(); ++i)
      for (std::size_t j = i + 1; j < all.size(); ++j) {
        std::set<DualBond> a(all[i].bonds.begin(), all[i].bonds.end());
        bool meet = false;
        for (const auto& e : all[j].bonds) meet = meet || a.count(e);
        if (!meet) continue;
        const auto ii = interior(all[i]), ij = interior(all[j]);
        const bool nested = std::includes(ii.begin(), ii.end(), ij.begin(), ij.end()) ||
                            std::includes(ij.begin(), ij.end(), ii.begin(), ii.end());
        EXPECT_TRUE(nested);
      }
  }
}

TEST(Contours, OpenInputRejected) {
  GeometricContour c;
  c.bonds = {{{0, 0}, Orientation::horizontal}};
  c.vertices = {{0, 0}, {1, 0}};
  EXPECT_THROW(decorations(c), std::invalid_argument);
}

TEST(OpenContour, StraightGroundState) {
  for (int L : {1, 2, 3}) {
    const int M = 1;
    const auto region = share(Region::rectangle(L, M));
    const auto bc = staircase_bc(1, {0}, {0}, L, M);
    const Stencil stencil(region, bc);
    const auto g = exact_ground_state(stencil, SiteBounds(*region, {0, 1}), ModelParams(1.0, 5.0));
    const HeightField f(region, bc, g);
    const auto oc = open_contour(f);
    EXPECT_EQ(oc.path.length(), static_cast<std::size_t>(2 * L + 1));
    EXPECT_EQ(oc.path.vertices.front(), (DualVertex{-L - 1, -1}));
    EXPECT_EQ(oc.path.vertices.back(), (DualVertex{L, -1}));
    EXPECT_TRUE(oc.is_h_contour);
    for (const auto& s : oc.decoration.plus) EXPECT_EQ(s.y, 0);
    for (const auto& s : oc.decoration.minus) EXPECT_EQ(s.y, -1);
    EXPECT_EQ(oc.decoration.plus.size(), static_cast<std::size_t>(2 * L + 1));
  }
}

TEST(OpenContour, FlatHalvesAtHeightA) {
  const int L = 2, M = 3, a = 1;
  const auto region = share(Region::rectangle(L, M));
  const auto bc = staircase_bc(1, {a}, {a}, L, M);
  HeightField f(region, bc);
  for (const auto& s : region->sites()) f.set(s, s.y >= a ? 1 : 0);
  const auto oc = open_contour(f);
  for (const auto& v : oc.path.vertices) EXPECT_EQ(v.j, a - 1);
}

TEST(OpenContour, SteppedContourMatchesScan) {
  std::mt19937_64 rng(4);
  const int L = 2, M = 3;
  const auto region = share(Region::rectangle(L, M));
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const int a = static_cast<int>(rng() % 5) - 2, b = static_cast<int>(rng() % 5) - 2;
    const auto bc = staircase_bc(1, {a}, {b}, L, M);
    HeightField f(region, bc);
    // Column-wise step heights with random perturbations.
    std::vector<int> cut(2 * L + 1);
    for (auto& c : cut) c = static_cast<int>(rng() % 5) - 2;
    for (const auto& s : region->sites()) f.set(s, s.y >= cut[static_cast<std::size_t>(s.x + L)] ? 1 : 0);
    if (rng() % 2) f.set({static_cast<int>(rng() % 5) - 2, static_cast<int>(rng() % 7) - 3}, 1);
    OpenContour oc;
    try {
      oc = open_contour(f);
    } catch (const std::runtime_error&) {
      continue;
    }
    ++checked;
    const auto scan = delta_by_scan(oc.closure);
    std::set<Site> expect;
    for (const auto& s : scan)
      if (region->contains(s)) expect.insert(s);
    EXPECT_EQ(std::set<Site>(oc.decoration.delta.begin(), oc.decoration.delta.end()), expect);
    EXPECT_EQ(oc.path.vertices.front(), (DualVertex{-L - 1, a - 1}));
    EXPECT_EQ(oc.path.vertices.back(), (DualVertex{L, b - 1}));
  }
  EXPECT_GT(checked, 100);
}

TEST(OpenContour, RequiresOneStepStaircase) {
  const HeightField f(share(Region::rectangle(1, 1)), BoundaryCondition::zero());
  EXPECT_THROW(open_contour(f), std::invalid_argument);
}

TEST(Clusters, FlatFieldIsEmpty) {
  const HeightField f(share(Region::square(2)), BoundaryCondition::zero());
  EXPECT_TRUE(cluster_decompose(f).clusters.empty());
  EXPECT_EQ(weight_product(cluster_decompose(f), ModelParams(1.0, 1.0)), 0.0);
}

TEST(Clusters, SingleElevatedSite) {
  HeightField f(share(Region::square(1)), BoundaryCondition::zero());
  f.set({0, 0}, 1);
  const auto cfg = cluster_decompose(f);
  ASSERT_EQ(cfg.clusters.size(), 1u);
  const auto& c = cfg.clusters[0];
  EXPECT_EQ(c.support.size(), 4u);
  for (int g : c.gradients) EXPECT_EQ(std::abs(g), 1);
  EXPECT_EQ(cluster_interior(c), (std::vector<Site>{{0, 0}}));
  EXPECT_EQ(external_boundary(c).size(), 4u);
  EXPECT_DOUBLE_EQ(weight_product(cfg, ModelParams(1.0, 0.7)), -4 * 0.7);
}

TEST(Clusters, IncompatibleConfigRejected) {
  HeightField f(share(Region::square(1)), BoundaryCondition::zero());
  f.set({0, 0}, 1);
  auto cfg = cluster_decompose(f);
  cfg.clusters.push_back(cfg.clusters[0]);
  EXPECT_FALSE(cfg.compatible());
  EXPECT_THROW(weight_product(cfg, ModelParams(1.0, 1.0)), std::invalid_argument);
}

TEST(Clusters, InconsistentGradientsRejected) {
  HeightField f(share(Region::square(1)), BoundaryCondition::zero());
  f.set({0, 0}, 1);
  auto c = cluster_decompose(f).clusters[0];
  c.gradients[0] = 2 * c.gradients[0];
  EXPECT_THROW(cluster_faces(c), std::invalid_argument);
}

TEST(Clusters, LegalityUnderConstraints) {
  HeightField f(share(Region::square(1)), BoundaryCondition::zero());
  f.set({0, 0}, 1);
  const auto c = cluster_decompose(f).clusters[0];
  EXPECT_TRUE(is_legal(c, {}));
  ConstraintSet minus_here;
  minus_here.minus = {{0, 0}};
  EXPECT_FALSE(is_legal(c, minus_here));
  ConstraintSet plus_here;
  plus_here.plus = {{0, 0}};
  EXPECT_TRUE(is_legal(c, plus_here));
}

TEST(Clusters, NestedPlateausDecomposeAndRebuild) {
  const auto f = field_from_rows(3, {{0, 0, 0, 0, 0, 0, 0},
                                     {0, 1, 1, 1, 1, 1, 0},
                                     {0, 1, 0, 0, 0, 1, 0},
                                     {0, 1, 0, -2, 0, 1, 0},
                                     {0, 1, 0, 0, 0, 1, 0},
                                     {0, 1, 1, 1, 1, 1, 0},
                                     {0, 0, 0, 0, 0, 0, 0}});
  const auto cfg = cluster_decompose(f);
  EXPECT_EQ(cfg.clusters.size(), 3u);
  EXPECT_TRUE(cfg.compatible());
  const auto h = reconstruct(cfg, f.region());
  EXPECT_TRUE(std::equal(h.begin(), h.end(), f.heights().begin()));
  for (double p : {1.0, 2.0}) EXPECT_NEAR(weight_product(cfg, ModelParams(p, 1.3)), -1.3 * energy(f, ModelParams(p, 1.3)), 1e-12);
}

TEST(Bijection, UnconstrainedTwoByTwo) {
  const auto region = share(Region::from_sites({{0, 0}, {1, 0}, {0, 1}, {1, 1}}));
  const auto rep = check_cluster_bijection(region, {-1, 1}, ModelParams(1.0, 0.9), {});
  EXPECT_TRUE(rep.pass) << rep.failure;
  EXPECT_EQ(rep.surfaces, 81u);
  EXPECT_EQ(rep.compatible_configs, 81u);
}

TEST(Bijection, ConstrainedFromOpenContour) {
  const auto region = share(Region::square(1));
  const auto bc = staircase_bc(1, {0}, {0}, 1, 1);
  const Stencil stencil(region, bc);
  const auto g = exact_ground_state(stencil, SiteBounds(*region, {0, 1}), ModelParams(1.0, 5.0));
  const auto spec = tilted_spec(open_contour(HeightField(region, bc, g)));
  EXPECT_EQ(spec.constraints.plus.size(), 3u);
  EXPECT_EQ(spec.constraints.minus.size(), 3u);
  const auto rep = check_cluster_bijection(region, {-1, 1}, ModelParams(2.0, 0.8), spec.constraints, spec.rule());
  EXPECT_TRUE(rep.pass) << rep.failure;
  EXPECT_EQ(rep.surfaces, 19683u);
  EXPECT_GT(rep.face_checks, 0u);
  EXPECT_LT(rep.legal_surfaces, rep.surfaces);
}
