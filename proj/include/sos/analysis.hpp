#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/tools/minima.hpp>

#include "sos/exact.hpp"
#include "sos/lattice.hpp"
#include "sos/model.hpp"
#include "sos/sampler.hpp"

namespace sos {

// ---------------------------------------------------------------------------
// Repulsion height H(L)

struct MarginalPoint {
  int h = 0;
  double prob = 0.0;  // P(phi(0) >= h)
  double std_error = 0.0;
};

struct RepulsionEstimate {
  int L = 0;
  int H = 0;
  double threshold = 0.0;  // 5 beta / L
  std::vector<MarginalPoint> curve;
  std::string method;
  std::string proxy;
  bool degenerate = false;     // threshold > 1, no h can qualify
  bool stable = true;          // decision unchanged by +-3 sigma
  bool curve_monotone = true;  // nonincreasing in h up to 2 sigma
  std::string note;
};

inline double repulsion_threshold(int L, double beta) { return 5.0 * beta / static_cast<double>(L); }

/// Largest h >= 1 whose marginal reaches the threshold, 0 if none does.
inline int threshold_height(const std::vector<MarginalPoint>& curve, double threshold) {
  int H = 0;
  for (const auto& pt : curve)
    if (pt.h >= 1 && pt.prob >= threshold) H = std::max(H, pt.h);
  return H;
}

inline RepulsionEstimate repulsion_from_curve(int L, double beta, std::vector<MarginalPoint> curve,
                                              std::string method, std::string proxy) {
  if (L < 1) throw std::invalid_argument("compute_H needs L >= 1");
  RepulsionEstimate out;
  out.L = L;
  out.threshold = repulsion_threshold(L, beta);
  std::sort(curve.begin(), curve.end(), [](const auto& a, const auto& b) { return a.h < b.h; });
  out.curve = std::move(curve);
  out.method = std::move(method);
  out.proxy = std::move(proxy);
  out.H = threshold_height(out.curve, out.threshold);
  if (out.threshold > 1.0) {
    out.degenerate = true;
    out.note = "threshold 5*beta/L exceeds 1; no height qualifies, H = 0";
  }
  for (std::size_t i = 1; i < out.curve.size(); ++i) {
    const auto& a = out.curve[i - 1];
    const auto& b = out.curve[i];
    if (b.prob > a.prob + 2.0 * std::hypot(a.std_error, b.std_error)) out.curve_monotone = false;
  }
  for (const auto& pt : out.curve) {
    if (pt.h < 1) continue;
    const bool above = pt.prob >= out.threshold;
    const bool robust = above ? pt.prob - 3.0 * pt.std_error >= out.threshold
                              : pt.prob + 3.0 * pt.std_error < out.threshold;
    if ((pt.h == out.H || pt.h == out.H + 1) && !robust) out.stable = false;
  }
  return out;
}

enum class HMethod { exact, mcmc };

struct RepulsionOptions {
  int proxy_cap = 32;   // proxy box is Lambda_{min(2L, proxy_cap)}
  int bulk_radius = 0;  // average the marginal over sites with |x|,|y| <= r
  RunOptions run{};
  std::uint64_t seed = 1;
};

inline int proxy_size(int L, const RepulsionOptions& opt) { return std::max(1, std::min(2 * L, opt.proxy_cap)); }

inline std::string proxy_description(int n, int r) {
  std::string s = "Lambda_" + std::to_string(n) + " zero bc";
  if (r > 0) s += ", bulk average over Lambda_" + std::to_string(r);
  return s;
}

/// Exact P(phi(0) >= h) on Lambda_n with zero boundary, h = 1..hmax.
inline std::vector<MarginalPoint> exact_marginal(int n, const ModelParams& params, TruncationWindow window) {
  const auto bc = BoundaryCondition::zero();
  const double logZ = transfer_matrix(n, n, bc, params, window).logZ;
  std::vector<MarginalPoint> curve;
  for (int h = 1; h <= window.hmax; ++h) {
    const double lz = transfer_matrix(n, n, bc, params, window, BondWeightRule::standard(), std::nullopt,
                                      {{Site{0, 0}, {h, window.hmax}}})
                          .logZ;
    curve.push_back({h, std::exp(lz - logZ), 0.0});
  }
  return curve;
}

/// Heat-bath estimate of P(phi(x) >= h) averaged over the central block.
inline std::vector<MarginalPoint> mcmc_marginal(int n, const ModelParams& params, TruncationWindow window,
                                                int bulk_radius, const RunOptions& run, std::uint64_t seed) {
  if (bulk_radius > n) throw std::invalid_argument("bulk radius exceeds the proxy box");
  auto region = std::make_shared<const Region>(Region::square(n));
  const HeatBath kernel(region, BoundaryCondition::zero(), params, SiteBounds(*region, window));
  std::vector<std::size_t> bulk;
  for (std::size_t k = 0; k < region->size(); ++k) {
    const Site s = region->site(k);
    if (std::abs(s.x) <= bulk_radius && std::abs(s.y) <= bulk_radius) bulk.push_back(k);
  }
  const int hmax = window.hmax;
  std::vector<BatchMeans> bm(static_cast<std::size_t>(std::max(hmax, 0)));
  std::vector<int> count(bm.size());
  Chain chain{kernel.flat_start(), seed, run.chain_id, 0};
  run_chain(kernel, chain, run, [&](std::span<const int> h) {
    std::fill(count.begin(), count.end(), 0);
    for (std::size_t k : bulk)
      for (int v = 1; v <= std::min(h[k], hmax); ++v) ++count[static_cast<std::size_t>(v - 1)];
    for (std::size_t i = 0; i < bm.size(); ++i) bm[i].add(static_cast<double>(count[i]) / bulk.size());
  });
  std::vector<MarginalPoint> curve;
  for (std::size_t i = 0; i < bm.size(); ++i) curve.push_back({static_cast<int>(i) + 1, bm[i].mean(), bm[i].std_error()});
  return curve;
}

inline RepulsionEstimate compute_H(int L, const ModelParams& params, HMethod method, TruncationWindow window,
                                   const RepulsionOptions& opt = {}) {
  if (L < 1) throw std::invalid_argument("compute_H needs L >= 1");
  window.validate();
  const int n = proxy_size(L, opt);
  if (method == HMethod::exact)
    return repulsion_from_curve(L, params.beta(), exact_marginal(n, params, window), "exact transfer matrix",
                                proxy_description(n, 0));
  const int r = std::min(opt.bulk_radius, n);
  return repulsion_from_curve(L, params.beta(), mcmc_marginal(n, params, window, r, opt.run, opt.seed),
                              "heat-bath", proxy_description(n, r));
}

// ---------------------------------------------------------------------------
// Growth-law fits for H(L)

struct Table1Fit {
  std::string form;
  double c = 0.0;
  std::vector<double> residuals;  // H - model
  double rms = 0.0;
};

/// Model H(L; c) for the given p.
inline double table1_model(double p, double c, double L) {
  const double lg = std::log(L);
  if (p == 1.0) return c * lg;
  if (p < 2.0) return std::pow(std::max(c * lg, 0.0), 1.0 / p);
  if (p == 2.0) return std::sqrt(std::max(c * lg * std::log(lg), 0.0));
  return std::sqrt(std::max(c * lg, 0.0));
}

inline std::string table1_form(double p) {
  if (p == 1.0) return "c log L";
  if (p < 2.0) return "(c log L)^(1/p)";
  if (p == 2.0) return "sqrt(c log L log log L)";
  return "sqrt(c log L)";
}

inline Table1Fit fit_table1(const std::vector<std::pair<double, double>>& H_curve, double p) {
  if (H_curve.size() < 4) throw std::invalid_argument("fit_table1 needs H at 4 or more values of L");
  if (p < 1.0) throw std::invalid_argument("fit_table1 needs p >= 1");
  const bool all_equal = std::all_of(H_curve.begin(), H_curve.end(),
                                     [&](const auto& pt) { return pt.second == H_curve.front().second; });
  if (all_equal) throw std::invalid_argument("fit_table1: all H values are equal");
  for (const auto& [L, H] : H_curve)
    if (L <= (p == 2.0 ? std::exp(1.0) : 1.0)) throw std::invalid_argument("fit_table1: L too small for the form");
  Table1Fit out;
  out.form = table1_form(p);
  auto sse = [&](double c) {
    double s = 0.0;
    for (const auto& [L, H] : H_curve) s += (H - table1_model(p, c, L)) * (H - table1_model(p, c, L));
    return s;
  };
  if (p == 1.0) {
    double num = 0.0, den = 0.0;
    for (const auto& [L, H] : H_curve) {
      num += H * std::log(L);
      den += std::log(L) * std::log(L);
    }
    out.c = num / den;
  } else {
    double hi = 1.0;
    while (sse(2.0 * hi) < sse(hi) && hi < 1e12) hi *= 2.0;
    const auto r = boost::math::tools::brent_find_minima(sse, 0.0, 2.0 * hi, std::numeric_limits<double>::digits / 2);
    out.c = r.first;
  }
  double s = 0.0;
  for (const auto& [L, H] : H_curve) {
    out.residuals.push_back(H - table1_model(p, out.c, L));
    s += out.residuals.back() * out.residuals.back();
  }
  out.rms = std::sqrt(s / static_cast<double>(H_curve.size()));
  return out;
}

// ---------------------------------------------------------------------------
// Circuit event

struct CircuitReport {
  double delta = 0.0;
  int K = 0;
  int H = 0;
  int inner = 0;  // Lambda' = Lambda_inner
  bool found = false;
  std::vector<Site> circuit;
};

inline int inner_box_size(int L, double delta) {
  return static_cast<int>(std::floor((1.0 - delta) * static_cast<double>(L) + 1e-9));
}

/// Point-in-polygon for a site strictly off the cycle (even-odd rule).
inline bool cycle_surrounds(const std::vector<Site>& cycle, Site p) {
  bool inside = false;
  const std::size_t n = cycle.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Site a = cycle[i], b = cycle[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x = a.x + static_cast<double>(p.y - a.y) * (b.x - a.x) / static_cast<double>(b.y - a.y);
      if (p.x < x) inside = !inside;
    }
  }
  return inside;
}

/// Re-checks the three defining properties of a reported circuit.
inline bool verify_circuit(const HeightField& field, const CircuitReport& rep) {
  const auto& c = rep.circuit;
  if (c.size() < 4) return false;
  const int L = field.region().L();
  std::vector<Site> sorted(c);
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) return false;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const Site d = c[(i + 1) % c.size()] - c[i];
    if (std::abs(d.x) + std::abs(d.y) != 1) return false;
    const int m = std::max(std::abs(c[i].x), std::abs(c[i].y));
    if (m > L || m <= rep.inner) return false;
    if (field.at(c[i]) < rep.H - rep.K) return false;
  }
  for (int y = -rep.inner; y <= rep.inner; ++y)
    for (int x = -rep.inner; x <= rep.inner; ++x)
      if (!cycle_surrounds(c, {x, y})) return false;
  return true;
}

/// Innermost cycle of sites with phi >= H - K in Lambda_L \ Lambda_{(1-delta)L}
/// surrounding the inner box. The sites *-connected to the inner box through
/// failing annulus sites are grown first; the circuit is then the shortest
/// cycle with odd winding around the origin in their outer boundary.
inline CircuitReport detect_circuit(const HeightField& field, double delta, int K, int H) {
  const Region& region = field.region();
  if (region.kind() != RegionKind::square) throw std::invalid_argument("detect_circuit needs a sample on Lambda_L");
  if (delta <= 0.0 || delta > 1.0) throw std::invalid_argument("detect_circuit needs 0 < delta <= 1");
  const int L = region.L();
  CircuitReport rep{delta, K, H, inner_box_size(L, delta), false, {}};
  const int inner = rep.inner;
  const int side = 2 * L + 3;  // Lambda_{L+1}
  auto idx = [&](Site s) { return static_cast<std::size_t>(s.y + L + 1) * side + static_cast<std::size_t>(s.x + L + 1); };
  auto norm = [](Site s) { return std::max(std::abs(s.x), std::abs(s.y)); };
  auto good = [&](Site s) { return norm(s) > inner && norm(s) <= L && field.at(s) >= H - K; };

  std::vector<char> in(static_cast<std::size_t>(side) * side, 0);
  std::deque<Site> queue;
  for (int y = -inner; y <= inner; ++y)
    for (int x = -inner; x <= inner; ++x) {
      in[idx({x, y})] = 1;
      queue.push_back({x, y});
    }
  if (inner < 0) {
    // delta = 1 with L = 0 leaves no inner box; seed at the origin.
    in[idx({0, 0})] = 1;
    queue.push_back({0, 0});
  }
  while (!queue.empty()) {
    const Site s = queue.front();
    queue.pop_front();
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const Site t{s.x + dx, s.y + dy};
        if (norm(t) > L || in[idx(t)] || good(t)) continue;
        if (norm(t) == L) return rep;  // failing path reaches the outer ring
        in[idx(t)] = 1;
        queue.push_back(t);
      }
  }
  // Outer boundary of the grown set: good sites 8-adjacent to it.
  std::vector<char> bnd(in.size(), 0);
  for (int y = -L; y <= L; ++y)
    for (int x = -L; x <= L; ++x) {
      const Site s{x, y};
      if (!good(s)) continue;
      for (int dy = -1; dy <= 1 && !bnd[idx(s)]; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          if (in[idx({x + dx, y + dy})]) {
            bnd[idx(s)] = 1;
            break;
          }
    }
  // Parity flips when crossing the half-line y = 1/2, x >= 0.
  auto crosses = [](Site a, Site b) { return a.x == b.x && a.x >= 0 && std::min(a.y, b.y) == 0 && std::max(a.y, b.y) == 1; };
  const Site steps[4] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  std::vector<Site> best;
  std::vector<int> dist(2 * in.size());
  std::vector<std::size_t> prev(2 * in.size());
  for (int x = 0; x <= L; ++x) {
    const Site start{x, 0};
    if (!bnd[idx(start)]) continue;
    std::fill(dist.begin(), dist.end(), -1);
    const std::size_t s0 = 2 * idx(start);
    dist[s0] = 0;
    std::deque<std::pair<Site, int>> q{{start, 0}};
    bool done = false;
    while (!q.empty() && !done) {
      const auto [s, par] = q.front();
      q.pop_front();
      const std::size_t cur = 2 * idx(s) + static_cast<std::size_t>(par);
      if (!best.empty() && dist[cur] + 1 >= static_cast<int>(best.size())) break;
      for (const Site d : steps) {
        const Site t = s + d;
        if (norm(t) > L || !bnd[idx(t)]) continue;
        const int np = par ^ (crosses(s, t) ? 1 : 0);
        const std::size_t nxt = 2 * idx(t) + static_cast<std::size_t>(np);
        if (dist[nxt] >= 0) continue;
        dist[nxt] = dist[cur] + 1;
        prev[nxt] = cur;
        if (t == start && np == 1) {
          std::vector<Site> cyc;
          for (std::size_t v = prev[nxt]; v != s0; v = prev[v]) {
            const std::size_t cell = v / 2;
            cyc.push_back({static_cast<int>(cell % side) - L - 1, static_cast<int>(cell / side) - L - 1});
          }
          cyc.push_back(start);
          std::reverse(cyc.begin(), cyc.end());
          if (best.empty() || cyc.size() < best.size()) best = std::move(cyc);
          done = true;
          break;
        }
        q.push_back({t, np});
      }
    }
  }
  if (best.empty()) return rep;
  rep.circuit = std::move(best);
  rep.found = verify_circuit(field, rep);
  if (!rep.found) rep.circuit.clear();
  return rep;
}

// ---------------------------------------------------------------------------
// Surface tension

struct TensionPoint {
  int L = 0;
  int a = 0;
  int b = 0;
  double log_ratio = 0.0;
  double tau = 0.0;
  double error = 0.0;  // M-truncation change propagated to tau
  bool converged = false;
};

struct SurfaceTensionEstimate {
  double theta = 0.0;
  double tau = 0.0;  // extrapolant c0 of tau_L = c0 + c1 / L
  double slope = 0.0;
  double tau_error = 0.0;
  std::vector<TensionPoint> points;
  bool converged = true;
  bool monotone = true;  // finite-L values decrease in L within one error
  TruncationWindow window;
  std::string note;
};

/// Step heights a <= b with b - a close to 2 L tan(theta).
inline std::pair<int, int> tilt_endpoints(double theta, int L) {
  if (theta < 0.0 || theta >= M_PI / 2) throw std::invalid_argument("tilt angle must lie in [0, pi/2)");
  const int d = static_cast<int>(std::lround(2.0 * L * std::tan(theta)));
  return {-(d / 2), d - d / 2};
}

struct LineFit {
  double c0 = 0.0;
  double c1 = 0.0;
  double c0_error = 0.0;
};

/// Least squares y = c0 + c1 x.
inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  if (x.size() < 2) throw std::invalid_argument("line fit needs two points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  LineFit f;
  f.c1 = sxy / sxx;
  f.c0 = my - f.c1 * mx;
  if (x.size() > 2) {
    double rss = 0;
    for (std::size_t i = 0; i < x.size(); ++i) rss += std::pow(y[i] - f.c0 - f.c1 * x[i], 2);
    const double s2 = rss / (n - 2);
    f.c0_error = std::sqrt(s2 * (1.0 / n + mx * mx / sxx));
  }
  return f;
}

inline SurfaceTensionEstimate estimate_tau(double theta, const ModelParams& params, const std::vector<int>& L_list,
                                           TruncationWindow window, const std::vector<int>& M_list,
                                           double tolerance = 1e-4, PartitionCache* cache = nullptr) {
  if (L_list.size() < 2) throw std::invalid_argument("estimate_tau needs two or more values of L");
  SurfaceTensionEstimate out;
  out.theta = theta;
  out.window = window;
  const double ct = std::cos(theta);
  out.points = parallel_map(L_list.size(), [&](std::size_t i) {
    const int L = L_list[i];
    const auto [a, b] = tilt_endpoints(theta, L);
    std::vector<int> Ms;
    for (int M : M_list)
      if (M >= std::max(std::abs(a), std::abs(b)) + 1) Ms.push_back(M);
    if (Ms.empty()) throw std::invalid_argument("no M in the list accommodates the tilt at L=" + std::to_string(L));
    const auto r = staircase_ratio({a}, {b}, L, Ms, params, window, tolerance, cache);
    const double scale = ct / (2.0 * params.beta() * L);
    return TensionPoint{L, a, b, r.value, -scale * r.value, scale * r.last_change, r.converged};
  });
  std::vector<double> x, y;
  for (const auto& pt : out.points) {
    x.push_back(1.0 / pt.L);
    y.push_back(pt.tau);
    out.converged = out.converged && pt.converged;
  }
  std::sort(out.points.begin(), out.points.end(), [](const auto& a, const auto& b) { return a.L < b.L; });
  for (std::size_t i = 1; i < out.points.size(); ++i) {
    const auto& p = out.points[i - 1];
    const auto& q = out.points[i];
    if (q.tau > p.tau + std::max(p.error, q.error)) out.monotone = false;
  }
  const auto f = fit_line(x, y);
  out.tau = f.c0;
  out.slope = f.c1;
  out.tau_error = f.c0_error;
  if (!out.converged) out.note = "staircase ratio not converged in M for some L";
  return out;
}

// ---------------------------------------------------------------------------
// Staircase monotonicity

struct MonotonicityInstance {
  std::string id;
  std::string kind;  // "product" or "shift"
  std::vector<int> a, b;
  int M = 0;
  double lhs = 0.0;
  double rhs = 0.0;
  double margin = 0.0;  // lhs - rhs in log scale
  bool converged = false;
};

struct MonotonicityReport {
  std::vector<MonotonicityInstance> instances;
  double max_margin = -kInf;
  std::size_t unconverged = 0;
  bool pass = true;  // every converged instance has margin <= tolerance
};

inline std::string staircase_id(const std::vector<int>& a, const std::vector<int>& b) {
  std::string s = "a=(";
  for (std::size_t i = 0; i < a.size(); ++i) s += (i ? "," : "") + std::to_string(a[i]);
  s += ") b=(";
  for (std::size_t i = 0; i < b.size(); ++i) s += (i ? "," : "") + std::to_string(b[i]);
  return s + ")";
}

/// Checks the product inequality and the top-step shift inequality for every
/// staircase, each at the largest M in the list.
inline MonotonicityReport check_monotonicity(const std::vector<std::pair<std::vector<int>, std::vector<int>>>& staircases,
                                             int L, const std::vector<int>& M_list, const ModelParams& params,
                                             std::optional<TruncationWindow> window = std::nullopt,
                                             double tolerance = 1e-9, double convergence = 1e-6,
                                             PartitionCache* cache = nullptr) {
  PartitionCache local;
  if (!cache) cache = &local;
  std::size_t nmax = 0;
  for (const auto& [a, b] : staircases) {
    if (a.size() != b.size() || a.empty()) throw std::invalid_argument("staircase needs matching nonempty a and b");
    if (!std::is_sorted(a.begin(), a.end()) || !std::is_sorted(b.begin(), b.end()))
      throw std::invalid_argument("staircase heights must be nondecreasing");
    nmax = std::max(nmax, a.size());
  }
  const TruncationWindow w = window.value_or(staircase_window(static_cast<int>(nmax)));
  auto ratio = [&](const std::vector<int>& a, const std::vector<int>& b) {
    return staircase_ratio(a, b, L, M_list, params, w, convergence, cache);
  };
  const int Mtop = *std::max_element(M_list.begin(), M_list.end());
  struct Job {
    bool shift;
    std::vector<int> a, b;
  };
  std::vector<Job> jobs;
  for (const auto& [a, b] : staircases) {
    jobs.push_back({false, a, b});
    if (std::max(a.back(), b.back()) + 1 < Mtop && std::max(a.back(), b.back()) + 1 <= w.hmax)
      jobs.push_back({true, a, b});
  }
  auto results = parallel_map(jobs.size(), [&](std::size_t i) {
    const auto& [shift, a, b] = jobs[i];
    MonotonicityInstance inst{staircase_id(a, b), shift ? "shift" : "product", a, b, Mtop};
    const auto whole = ratio(a, b);
    inst.lhs = whole.value;
    inst.converged = whole.converged;
    if (shift) {
      auto a1 = a, b1 = b;
      ++a1.back();
      ++b1.back();
      const auto hi = ratio(a1, b1);
      inst.rhs = hi.value;
      inst.converged = inst.converged && hi.converged;
    } else {
      for (std::size_t k = 0; k < a.size(); ++k) {
        const auto single = ratio({a[k]}, {b[k]});
        inst.rhs += single.value;
        inst.converged = inst.converged && single.converged;
      }
    }
    inst.margin = inst.lhs - inst.rhs;
    return inst;
  });
  MonotonicityReport rep;
  for (auto& r : results) {
    rep.instances.push_back(std::move(r));
    const auto& inst = rep.instances.back();
    if (!inst.converged) {
      ++rep.unconverged;
      continue;
    }
    rep.max_margin = std::max(rep.max_margin, inst.margin);
    if (inst.margin > tolerance) rep.pass = false;
  }
  return rep;
}

/// All n = 2 staircases with a_1 <= a_2, b_1 <= b_2 drawn from [lo, hi].
inline std::vector<std::pair<std::vector<int>, std::vector<int>>> two_step_staircases(int lo, int hi) {
  std::vector<std::pair<std::vector<int>, std::vector<int>>> out;
  for (int a1 = lo; a1 <= hi; ++a1)
    for (int a2 = a1; a2 <= hi; ++a2)
      for (int b1 = lo; b1 <= hi; ++b1)
        for (int b2 = b1; b2 <= hi; ++b2) out.push_back({{a1, a2}, {b1, b2}});
  return out;
}

// ---------------------------------------------------------------------------
// Positivity rate

struct RateEstimate {
  int L = 0;
  double logP = 0.0;
  double logP_error = 0.0;
  int H = 0;
  bool defined = false;
  double rate = 0.0;
  double rate_error = 0.0;
  std::optional<double> beta_tau;
  std::string note;
};

inline RateEstimate rate_from(int L, double logP, double logP_error, int H) {
  RateEstimate r;
  r.L = L;
  r.logP = logP;
  r.logP_error = logP_error;
  r.H = H;
  if (H <= 0) {
    r.note = "H = 0, rate undefined";
    return r;
  }
  if (!std::isfinite(logP)) {
    r.note = "positivity estimate failed";
    return r;
  }
  r.defined = true;
  const double scale = 8.0 * L * H;
  r.rate = -logP / scale;
  r.rate_error = logP_error / scale;
  return r;
}

struct RateOptions {
  SplittingSchedule schedule{3};
  RunOptions run{};
  TruncationWindow h_window{-4, 6};
  RepulsionOptions repulsion{};
  HMethod h_method = HMethod::mcmc;
  std::optional<double> beta_tau;  // comparison value, beta * tau at theta = 0
};

inline std::vector<RateEstimate> estimate_rate(const std::vector<int>& L_list, const ModelParams& params,
                                               TruncationWindow window, const RateOptions& opt, std::uint64_t seed) {
  std::vector<RateEstimate> out;
  for (int L : L_list) {
    if (L < 1) throw std::invalid_argument("estimate_rate needs L >= 1");
    auto region = std::make_shared<const Region>(Region::square(L));
    const auto pos = estimate_positivity(region, BoundaryCondition::zero(), params, window, opt.schedule, opt.run, seed);
    auto ropt = opt.repulsion;
    ropt.seed = seed;
    const auto rep = compute_H(L, params, opt.h_method, opt.h_window, ropt);
    auto r = rate_from(L, pos.record.value, pos.record.std_error, rep.H);
    if (pos.record.failed) r.note = pos.record.note;
    r.beta_tau = opt.beta_tau;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace sos
