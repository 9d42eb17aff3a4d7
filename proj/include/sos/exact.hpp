#pragma once

// Exact computation on height-truncated systems: full enumeration over all
// configurations and a site-by-site transfer matrix on rectangles.

#include <algorithm>
#include <atomic>
#include <exception>
#include <future>
#include <thread>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sos/lattice.hpp"
#include "sos/model.hpp"

namespace sos {

/// Allowed heights hmin..hmax, a finite proxy for integer-valued heights.
struct TruncationWindow {
  int hmin = -1;
  int hmax = 1;

  int width() const { return hmax - hmin + 1; }
  bool contains(int h) const { return h >= hmin && h <= hmax; }
  friend bool operator==(const TruncationWindow&, const TruncationWindow&) = default;

  void validate() const {
    if (hmin > hmax) throw std::invalid_argument("truncation window is empty");
  }
};

/// Default window for a staircase of n steps.
inline TruncationWindow staircase_window(int n) { return {-4, n + 4}; }

/// Sign constraints: heights >= 0 on `plus`, <= 0 on `minus`.
struct ConstraintSet {
  std::vector<Site> plus;
  std::vector<Site> minus;

  bool empty() const { return plus.empty() && minus.empty(); }
};

struct PartitionValue {
  double logZ = 0.0;
  bool exact = true;
  TruncationWindow window;
  std::string method;
};

/// Per-site inclusive height ranges, indexed like the region.
class SiteBounds {
 public:
  SiteBounds(const Region& region, TruncationWindow window)
      : lo_(region.size(), window.hmin), hi_(region.size(), window.hmax) {
    window.validate();
  }

  SiteBounds(const Region& region, TruncationWindow window, const ConstraintSet& constraints)
      : SiteBounds(region, window) {
    apply(region, constraints);
  }

  void apply(const Region& region, const ConstraintSet& constraints) {
    for (const auto& s : constraints.plus) restrict(region, s, 0, std::numeric_limits<int>::max());
    for (const auto& s : constraints.minus) restrict(region, s, std::numeric_limits<int>::min(), 0);
  }

  void restrict(const Region& region, Site s, int lo, int hi) {
    const int k = region.index_of(s);
    if (k < 0) throw std::invalid_argument("constraint on a site outside the region");
    restrict(static_cast<std::size_t>(k), lo, hi);
  }
  void restrict(std::size_t k, int lo, int hi) {
    lo_[k] = std::max(lo_[k], lo);
    hi_[k] = std::min(hi_[k], hi);
  }

  int lo(std::size_t k) const { return lo_[k]; }
  int hi(std::size_t k) const { return hi_[k]; }
  std::size_t size() const { return lo_.size(); }
  bool feasible() const {
    for (std::size_t k = 0; k < lo_.size(); ++k)
      if (lo_[k] > hi_[k]) return false;
    return true;
  }

 private:
  std::vector<int> lo_;
  std::vector<int> hi_;
};

/// Streaming log-sum-exp with compensated (Neumaier) summation.
class LogSumExp {
 public:
  void add(double x) {
    if (x == -kInf) return;
    if (x > max_) {
      rescale(std::exp(max_ - x));
      max_ = x;
      accumulate(1.0);
    } else {
      accumulate(std::exp(x - max_));
    }
  }
  void merge(const LogSumExp& o) {
    if (o.max_ == -kInf) return;
    if (o.max_ > max_) {
      rescale(std::exp(max_ - o.max_));
      max_ = o.max_;
      accumulate(o.sum_);
      accumulate(o.comp_);
    } else {
      const double f = std::exp(o.max_ - max_);
      accumulate(o.sum_ * f);
      accumulate(o.comp_ * f);
    }
  }
  double value() const { return max_ == -kInf ? -kInf : max_ + std::log(sum_ + comp_); }

 private:
  void rescale(double f) {
    sum_ *= f;
    comp_ *= f;
  }
  void accumulate(double v) {
    const double t = sum_ + v;
    comp_ += std::abs(sum_) >= std::abs(v) ? (sum_ - t) + v : (v - t) + sum_;
    sum_ = t;
  }

  double max_ = -kInf;
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline constexpr double kDefaultEnumerationCap = 1e8;

inline void check_window_covers_boundary(const Stencil& stencil, TruncationWindow window) {
  const auto [lo, hi] = stencil.boundary_range();
  if (!window.contains(lo) || !window.contains(hi))
    throw std::invalid_argument("truncation window [" + std::to_string(window.hmin) + "," +
                                std::to_string(window.hmax) + "] does not contain the boundary values [" +
                                std::to_string(lo) + "," + std::to_string(hi) + "]");
}

/// Visit every configuration within `bounds` with finite energy, in
/// lexicographic row-major order. The visitor receives (heights, energy).
template <typename Visitor>
void enumerate_configurations(const Stencil& stencil, const SiteBounds& bounds, const ModelParams& params,
                              Visitor&& visit, double cap = kDefaultEnumerationCap) {
  const std::size_t n = stencil.size();
  double states = 1.0;
  for (std::size_t k = 0; k < n; ++k) states *= std::max(0, bounds.hi(k) - bounds.lo(k) + 1);
  if (states > cap)
    throw CapExceeded("enumeration state space " + std::to_string(states) + " exceeds cap " +
                      std::to_string(cap) + "; use transfer_matrix");
  if (n == 0) {
    std::vector<int> none;
    visit(std::span<const int>(none), 0.0);
    return;
  }
  if (!bounds.feasible()) return;

  // Bonds to lower-indexed sites and to the boundary, charged when a site is set.
  struct Earlier {
    int neighbour;
    int boundary_height;
    bool tilted;
  };
  std::vector<std::vector<Earlier>> earlier(n);
  for (std::size_t k = 0; k < n; ++k)
    for (const auto& link : stencil.links(k))
      if (link.neighbour < static_cast<int>(k))
        earlier[k].push_back({link.neighbour, link.boundary_height, link.tilted});

  std::vector<int> h(n);
  std::vector<double> partial(n + 1, 0.0);
  std::size_t k = 0;
  h[0] = bounds.lo(0) - 1;
  while (true) {
    if (++h[k] > bounds.hi(k)) {
      if (k == 0) break;
      --k;
      continue;
    }
    double e = partial[k];
    for (const auto& b : earlier[k]) {
      const int other = b.neighbour >= 0 ? h[static_cast<std::size_t>(b.neighbour)] : b.boundary_height;
      e += gradient_weight(params, h[k] - other, b.tilted);
    }
    if (std::isinf(e)) continue;
    partial[k + 1] = e;
    if (k + 1 == n) {
      visit(std::span<const int>(h), e);
    } else {
      ++k;
      h[k] = bounds.lo(k) - 1;
    }
  }
}

inline PartitionValue enumerate_partition(const Stencil& stencil, const SiteBounds& bounds,
                                          const ModelParams& params, TruncationWindow window,
                                          double cap = kDefaultEnumerationCap) {
  LogSumExp acc;
  const double beta = params.beta();
  enumerate_configurations(
      stencil, bounds, params, [&](std::span<const int>, double e) { acc.add(-beta * e); }, cap);
  return {acc.value(), true, window, "enumeration"};
}

inline PartitionValue enumerate_partition(const Region& region, const BoundaryCondition& bc,
                                          const ModelParams& params, TruncationWindow window,
                                          const std::optional<ConstraintSet>& constraints = std::nullopt,
                                          const BondWeightRule& rule = BondWeightRule::standard(),
                                          double cap = kDefaultEnumerationCap) {
  const Stencil stencil(std::make_shared<const Region>(region), bc, rule);
  check_window_covers_boundary(stencil, window);
  SiteBounds bounds(region, window);
  if (constraints) bounds.apply(region, *constraints);
  return enumerate_partition(stencil, bounds, params, window, cap);
}

/// Probability of an event (predicate on the height vector) under the
/// truncated Gibbs measure restricted to `bounds`.
template <typename Event>
double exact_probability(const Stencil& stencil, const SiteBounds& bounds, const ModelParams& params,
                         Event&& event, double cap = kDefaultEnumerationCap) {
  LogSumExp all, hit;
  const double beta = params.beta();
  enumerate_configurations(
      stencil, bounds, params,
      [&](std::span<const int> h, double e) {
        all.add(-beta * e);
        if (event(h)) hit.add(-beta * e);
      },
      cap);
  const double lz = all.value();
  if (lz == -kInf) throw std::domain_error("exact_probability: no configuration has positive weight");
  return std::exp(hit.value() - lz);
}

template <typename Event>
double exact_probability(const Region& region, const BoundaryCondition& bc, const ModelParams& params,
                         TruncationWindow window, Event&& event,
                         const BondWeightRule& rule = BondWeightRule::standard(),
                         double cap = kDefaultEnumerationCap) {
  const Stencil stencil(std::make_shared<const Region>(region), bc, rule);
  check_window_covers_boundary(stencil, window);
  return exact_probability(stencil, SiteBounds(region, window), params, std::forward<Event>(event), cap);
}

/// Expectation of an observable (height vector -> double).
template <typename Observable>
double exact_expectation(const Stencil& stencil, const SiteBounds& bounds, const ModelParams& params,
                         Observable&& f, double cap = kDefaultEnumerationCap) {
  double max_log = -kInf, sw = 0.0, swf = 0.0;
  const double beta = params.beta();
  enumerate_configurations(
      stencil, bounds, params,
      [&](std::span<const int> h, double e) {
        const double lw = -beta * e;
        if (lw > max_log) {
          const double r = std::exp(max_log - lw);
          sw *= r;
          swf *= r;
          max_log = lw;
        }
        const double w = std::exp(lw - max_log);
        sw += w;
        swf += w * f(h);
      },
      cap);
  if (sw == 0.0) throw std::domain_error("exact_expectation: empty support");
  return swf / sw;
}

/// Lowest-energy configuration (first in enumeration order among ties).
inline std::vector<int> exact_ground_state(const Stencil& stencil, const SiteBounds& bounds,
                                           const ModelParams& params, double cap = kDefaultEnumerationCap) {
  double best = kInf;
  std::vector<int> arg;
  enumerate_configurations(
      stencil, bounds, params,
      [&](std::span<const int> h, double e) {
        if (e < best) {
          best = e;
          arg.assign(h.begin(), h.end());
        }
      },
      cap);
  if (arg.empty() && stencil.size() > 0) throw std::domain_error("exact_ground_state: empty support");
  return arg;
}

inline constexpr std::size_t kDefaultTransferCap = std::size_t{1} << 24;

/// Transfer matrix on Lambda_{L,M}. The state is one horizontal slice of
/// 2L+1 heights; sites are added one at a time in row-major order, bottom to
/// top, so the wall heights enter as per-site weights and the bottom and top
/// rows as the initial and final vectors.
inline PartitionValue transfer_matrix(int L, int M, const BoundaryCondition& bc, const ModelParams& params,
                                      TruncationWindow window,
                                      const BondWeightRule& rule = BondWeightRule::standard(),
                                      const std::optional<ConstraintSet>& constraints = std::nullopt,
                                      const std::vector<std::pair<Site, std::pair<int, int>>>& extra_bounds = {},
                                      std::size_t state_cap = kDefaultTransferCap) {
  window.validate();
  const auto region = std::make_shared<const Region>(Region::rectangle(L, M));
  SiteBounds bounds(*region, window);
  if (constraints) bounds.apply(*region, *constraints);
  for (const auto& [s, r] : extra_bounds) bounds.restrict(*region, s, r.first, r.second);

  const int n = 2 * L + 1;
  const int W = window.width();
  double states = std::pow(static_cast<double>(W), n);
  if (states > static_cast<double>(state_cap))
    throw CapExceeded("transfer matrix state count " + std::to_string(states) + " exceeds cap " +
                      std::to_string(state_cap));
  const std::size_t S = static_cast<std::size_t>(std::llround(states));

  auto tau = [&](int u, int v) {
    const int value = bc.value({u, v});
    if (!window.contains(value))
      throw std::invalid_argument("truncation window does not contain boundary value " + std::to_string(value));
    return value;
  };
  auto tilted = [&](Site s, Site t) { return rule.is_tilted(LatticeBond::make(s, t)); };

  const WeightTable table(params, W - 1);
  std::vector<std::size_t> pow(static_cast<std::size_t>(n) + 1, 1);
  for (int k = 1; k <= n; ++k) pow[static_cast<std::size_t>(k)] = pow[static_cast<std::size_t>(k) - 1] * W;

  std::vector<double> psi(S, 0.0), next(S, 0.0);
  {
    std::size_t s0 = 0;
    for (int k = 0; k < n; ++k) s0 += static_cast<std::size_t>(tau(-L + k, -M - 1) - window.hmin) * pow[k];
    psi[s0] = 1.0;
  }
  double log_scale = 0.0;

  for (int v = -M; v <= M; ++v) {
    const int left_wall = tau(-L - 1, v);
    const int right_wall = tau(L + 1, v);
    for (int k = 0; k < n; ++k) {
      const int u = -L + k;
      const Site site{u, v};
      const std::size_t idx = static_cast<std::size_t>(region->index_of(site));
      const int lo = bounds.lo(idx) - window.hmin;
      const int hi = bounds.hi(idx) - window.hmin;
      const bool t_down = tilted(site, {u, v - 1});
      const bool t_left = tilted(site, {u - 1, v});
      const bool t_right = k == n - 1 && tilted(site, {u + 1, v});
      const std::size_t pk = pow[static_cast<std::size_t>(k)];
      std::fill(next.begin(), next.end(), 0.0);
      for (std::size_t s = 0; s < S; ++s) {
        const double amp = psi[s];
        if (amp == 0.0) continue;
        const int below = static_cast<int>((s / pk) % W);
        const int left = k > 0 ? static_cast<int>((s / pow[static_cast<std::size_t>(k) - 1]) % W)
                               : left_wall - window.hmin;
        const std::size_t base = s - static_cast<std::size_t>(below) * pk;
        for (int h = lo; h <= hi; ++h) {
          double w = table(h - below, t_down) * table(h - left, t_left);
          if (k == n - 1) w *= table(h + window.hmin - right_wall, t_right);
          if (w == 0.0) continue;
          next[base + static_cast<std::size_t>(h) * pk] += amp * w;
        }
      }
      const double peak = *std::max_element(next.begin(), next.end());
      if (peak == 0.0) return {-kInf, true, window, "transfer_matrix"};
      const double inv = 1.0 / peak;
      for (auto& x : next) x *= inv;
      log_scale += std::log(peak);
      psi.swap(next);
    }
  }

  std::vector<int> top(static_cast<std::size_t>(n));
  std::vector<bool> t_top(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    top[static_cast<std::size_t>(k)] = tau(-L + k, M + 1) - window.hmin;
    t_top[static_cast<std::size_t>(k)] = tilted({-L + k, M}, {-L + k, M + 1});
  }
  double total = 0.0;
  for (std::size_t s = 0; s < S; ++s) {
    if (psi[s] == 0.0) continue;
    double w = psi[s];
    std::size_t rest = s;
    for (int k = 0; k < n && w != 0.0; ++k) {
      const int d = static_cast<int>(rest % W);
      rest /= W;
      w *= table(d - top[static_cast<std::size_t>(k)], t_top[static_cast<std::size_t>(k)]);
    }
    total += w;
  }
  if (total == 0.0) return {-kInf, true, window, "transfer_matrix"};
  return {log_scale + std::log(total), true, window, "transfer_matrix"};
}

/// Memo of zero-boundary and staircase partition functions keyed by their
/// full parameter set; safe for concurrent use, and a key requested while
/// another thread computes it waits for that result.
class PartitionCache {
 public:
  template <typename Compute>
  double get(const std::string& key, Compute&& compute) {
    std::promise<double> promise;
    std::shared_future<double> pending;
    {
      std::lock_guard lock(mutex_);
      if (auto it = values_.find(key); it != values_.end())
        pending = it->second;
      else
        values_.emplace(key, promise.get_future().share());
    }
    if (pending.valid()) return pending.get();
    try {
      const double v = compute();
      promise.set_value(v);
      return v;
    } catch (...) {
      promise.set_exception(std::current_exception());
      throw;
    }
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return values_.size();
  }

 private:
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_future<double>> values_;
};

/// Applies f to 0..n-1 on at most hardware_concurrency threads and returns
/// the results in index order.
template <typename F>
auto parallel_map(std::size_t n, F&& f) -> std::vector<decltype(f(std::size_t{}))> {
  using R = decltype(f(std::size_t{}));
  std::vector<std::optional<R>> slots(n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        slots[i].emplace(f(i));
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min<std::size_t>(n, std::max(1u, std::thread::hardware_concurrency()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  std::vector<R> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

inline std::string staircase_key(const std::vector<int>& a, const std::vector<int>& b, int L, int M,
                                 const ModelParams& params, TruncationWindow w) {
  std::string k = "L" + std::to_string(L) + "M" + std::to_string(M) + "p" + params.p_string() + "b";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", params.beta());
  k += buf;
  k += "w" + std::to_string(w.hmin) + ":" + std::to_string(w.hmax) + "a";
  for (int x : a) k += std::to_string(x) + ",";
  k += "b";
  for (int x : b) k += std::to_string(x) + ",";
  return k;
}

/// log Z(a; b; L, M) with the staircase boundary condition (n = |a| steps).
inline double staircase_log_partition(const std::vector<int>& a, const std::vector<int>& b, int L, int M,
                                      const ModelParams& params, TruncationWindow window,
                                      PartitionCache* cache = nullptr) {
  auto compute = [&] {
    const auto bc = staircase_bc(static_cast<int>(a.size()), a, b, L, M);
    return transfer_matrix(L, M, bc, params, window).logZ;
  };
  if (!cache) return compute();
  return cache->get(staircase_key(a, b, L, M, params, window), compute);
}

struct StaircaseRatio {
  std::vector<int> M;
  std::vector<double> log_ratio;  // log Z(a;b;L,M) - log Z_{Lambda_{L,M}}
  double value = 0.0;             // last entry, the large-M estimate
  double last_change = 0.0;
  bool converged = false;
};

/// Sequence of log[Z(a;b;L,M) / Z_{Lambda_{L,M}}] over increasing M. Both
/// partition functions use the same truncation window (default [-4, n+4]).
inline StaircaseRatio staircase_ratio(const std::vector<int>& a, const std::vector<int>& b, int L,
                                      std::vector<int> M_list, const ModelParams& params,
                                      std::optional<TruncationWindow> window = std::nullopt,
                                      double tolerance = 1e-4, PartitionCache* cache = nullptr) {
  if (a.size() != b.size()) throw std::invalid_argument("staircase_ratio: a and b differ in length");
  if (M_list.empty()) throw std::invalid_argument("staircase_ratio: empty M list");
  std::sort(M_list.begin(), M_list.end());
  const TruncationWindow w = window.value_or(staircase_window(static_cast<int>(a.size())));
  StaircaseRatio out;
  for (int M : M_list) {
    const double num = staircase_log_partition(a, b, L, M, params, w, cache);
    const double den = staircase_log_partition({}, {}, L, M, params, w, cache);
    out.M.push_back(M);
    out.log_ratio.push_back(num - den);
  }
  out.value = out.log_ratio.back();
  if (out.log_ratio.size() >= 2) {
    out.last_change = std::abs(out.log_ratio.back() - out.log_ratio[out.log_ratio.size() - 2]);
    out.converged = out.last_change < tolerance;
  }
  return out;
}

}  // namespace sos
