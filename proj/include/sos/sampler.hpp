#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sos/exact.hpp"
#include "sos/model.hpp"
#include "sos/rng.hpp"

namespace sos {

/// Single-site heat-bath kernel for the Gibbs measure restricted to per-site
/// height bounds (window, floors, sign constraints).
class HeatBath {
 public:
  HeatBath(std::shared_ptr<const Region> region, const BoundaryCondition& bc, ModelParams params, SiteBounds bounds,
           const BondWeightRule& rule = BondWeightRule::standard())
      : stencil_(std::move(region), bc, rule),
        params_(params),
        bounds_(std::move(bounds)),
        table_(params_, max_gradient(stencil_, bounds_)) {
    if (bounds_.size() != stencil_.size()) throw std::invalid_argument("HeatBath: bounds do not match region");
    if (!bounds_.feasible()) throw std::invalid_argument("HeatBath: empty height range at some site");
  }

  const Stencil& stencil() const { return stencil_; }
  const SiteBounds& bounds() const { return bounds_; }
  const ModelParams& params() const { return params_; }
  std::size_t size() const { return stencil_.size(); }

  /// Conditional law of site k given the others, over heights lo(k)..hi(k).
  std::vector<double> conditional(std::span<const int> h, std::size_t k) const {
    std::vector<double> w;
    const double total = weights(h, k, w);
    if (!(total > 0.0)) throw std::runtime_error("heat bath: empty conditional support");
    for (auto& x : w) x /= total;
    return w;
  }

  /// Resamples site k by inverse CDF of u, excluding heights below
  /// forbid_below.
  void update(std::span<int> h, std::size_t k, double u, std::vector<double>& scratch,
              int forbid_below = std::numeric_limits<int>::min()) const {
    double total = weights(h, k, scratch);
    const int lo = bounds_.lo(k);
    if (forbid_below > lo) {
      for (int v = lo; v < forbid_below && v <= bounds_.hi(k); ++v) scratch[static_cast<std::size_t>(v - lo)] = 0.0;
      total = std::accumulate(scratch.begin(), scratch.end(), 0.0);
    }
    if (!(total > 0.0)) throw std::runtime_error("heat bath: empty conditional support at site " + std::to_string(k));
    double target = u * total, acc = 0.0;
    std::size_t pick = scratch.size() - 1;
    for (std::size_t i = 0; i < scratch.size(); ++i) {
      acc += scratch[i];
      if (target < acc) {
        pick = i;
        break;
      }
    }
    // Guard against rounding past the last positive weight.
    while (scratch[pick] == 0.0 && pick > 0) --pick;
    h[k] = lo + static_cast<int>(pick);
  }

  /// Lowest-energy admissible start: every site at the bound nearest to 0.
  std::vector<int> flat_start() const {
    std::vector<int> h(size());
    for (std::size_t k = 0; k < size(); ++k) h[k] = std::clamp(0, bounds_.lo(k), bounds_.hi(k));
    return h;
  }

 private:
  static int max_gradient(const Stencil& s, const SiteBounds& b) {
    int lo = 0, hi = 0;
    for (std::size_t k = 0; k < b.size(); ++k) {
      lo = std::min(lo, b.lo(k));
      hi = std::max(hi, b.hi(k));
    }
    const auto [blo, bhi] = s.boundary_range();
    return std::max({hi - lo, hi - blo, bhi - lo, 1});
  }

  // Unnormalised weights into w; falls back to shifted log weights when the
  // plain product underflows.
  double weights(std::span<const int> h, std::size_t k, std::vector<double>& w) const {
    const int lo = bounds_.lo(k), hi = bounds_.hi(k);
    w.assign(static_cast<std::size_t>(hi - lo + 1), 0.0);
    const auto& links = stencil_.links(k);
    std::array<int, 4> nb{};
    for (std::size_t d = 0; d < 4; ++d)
      nb[d] = links[d].neighbour >= 0 ? h[static_cast<std::size_t>(links[d].neighbour)] : links[d].boundary_height;
    double total = 0.0;
    for (int v = lo; v <= hi; ++v) {
      double x = 1.0;
      for (std::size_t d = 0; d < 4; ++d) x *= table_(v - nb[d], links[d].tilted);
      w[static_cast<std::size_t>(v - lo)] = x;
      total += x;
    }
    if (total > 1e-250) return total;
    std::vector<double> e(w.size());
    double best = kInf;
    for (int v = lo; v <= hi; ++v) {
      double s = 0.0;
      for (std::size_t d = 0; d < 4; ++d) s += gradient_weight(params_, v - nb[d], links[d].tilted);
      e[static_cast<std::size_t>(v - lo)] = s;
      best = std::min(best, s);
    }
    if (std::isinf(best)) return 0.0;
    total = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] = std::isinf(e[i]) ? 0.0 : std::exp(-params_.beta() * (e[i] - best));
      total += w[i];
    }
    return total;
  }

  Stencil stencil_;
  ModelParams params_;
  SiteBounds bounds_;
  WeightTable table_;
};

/// One Markov chain: its heights, address in the random stream, and sweep count.
struct Chain {
  std::vector<int> heights;
  std::uint64_t seed = 0;
  std::uint32_t id = 0;
  std::uint64_t sweep = 0;
};

inline constexpr std::uint32_t kHeatBathStream = 1;

/// One systematic sweep in site order. The variate for (sweep, site) depends
/// only on the seed and chain id, so chains sharing them are coupled.
inline void heat_bath_sweep(const HeatBath& kernel, Chain& chain) {
  const CounterRng rng(chain.seed);
  std::vector<double> scratch;
  for (std::size_t k = 0; k < kernel.size(); ++k)
    kernel.update(chain.heights, k, rng.uniform(kHeatBathStream, chain.id, chain.sweep, static_cast<std::uint32_t>(k)),
                  scratch);
  ++chain.sweep;
}

/// Mean and batch-means standard error of a scalar time series.
class BatchMeans {
 public:
  explicit BatchMeans(std::size_t batches = 32) : batches_(batches) {}

  void add(double x) { xs_.push_back(x); }
  std::size_t count() const { return xs_.size(); }

  double mean() const {
    if (xs_.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (double x : xs_) s += x;
    return s / static_cast<double>(xs_.size());
  }

  double std_error() const {
    const std::size_t n = xs_.size();
    const std::size_t b = std::min(batches_, n);
    if (b < 2) return 0.0;
    const std::size_t per = n / b;
    std::vector<double> means(b, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < per; ++j) means[i] += xs_[i * per + j];
      means[i] /= static_cast<double>(per);
    }
    double m = 0.0;
    for (double x : means) m += x;
    m /= static_cast<double>(b);
    double v = 0.0;
    for (double x : means) v += (x - m) * (x - m);
    v /= static_cast<double>(b - 1);
    return std::sqrt(v / static_cast<double>(b));
  }

 private:
  std::size_t batches_;
  std::vector<double> xs_;
};

struct EstimateRecord {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
  std::string method;
  std::string params;
  bool failed = false;
  std::string note;
};

inline std::string describe_params(const ModelParams& params) {
  return "p=" + params.p_string() + " beta=" + std::to_string(params.beta());
}

struct RunOptions {
  std::size_t sweeps = 10000;
  double burn_in = 0.2;
  std::uint32_t chain_id = 0;
};

/// Runs a chain for `sweeps` sweeps and calls observe(heights) on every sweep
/// after burn-in.
inline void run_chain(const HeatBath& kernel, Chain& chain, const RunOptions& opt,
                      const std::function<void(std::span<const int>)>& observe) {
  if (opt.burn_in < 0.0 || opt.burn_in >= 1.0) throw std::invalid_argument("burn-in fraction must lie in [0,1)");
  const auto burn = static_cast<std::size_t>(opt.burn_in * static_cast<double>(opt.sweeps));
  for (std::size_t s = 0; s < opt.sweeps; ++s) {
    heat_bath_sweep(kernel, chain);
    if (s >= burn) observe(chain.heights);
  }
}

/// Time average of f with batch-means error.
inline EstimateRecord estimate_mean(const HeatBath& kernel, const RunOptions& opt, std::uint64_t seed,
                                    const std::function<double(std::span<const int>)>& f) {
  Chain chain{kernel.flat_start(), seed, opt.chain_id, 0};
  BatchMeans bm;
  run_chain(kernel, chain, opt, [&](std::span<const int> h) { bm.add(f(h)); });
  return {bm.mean(), bm.std_error(), bm.count(), seed, "heat-bath", describe_params(kernel.params())};
}

/// Kernel for the measure conditioned on phi >= 0 on the whole region.
inline HeatBath conditioned_kernel(std::shared_ptr<const Region> region, const BoundaryCondition& bc,
                                   const ModelParams& params, TruncationWindow window) {
  if (window.hmax < 0) throw std::invalid_argument("conditioned sampling needs hmax >= 0");
  SiteBounds bounds(*region, window);
  for (std::size_t k = 0; k < bounds.size(); ++k) bounds.restrict(k, 0, window.hmax);
  return HeatBath(std::move(region), bc, params, std::move(bounds));
}

/// Samples from the conditioned measure; observe is called once per kept sweep.
inline void conditioned_sample(std::shared_ptr<const Region> region, const BoundaryCondition& bc,
                               const ModelParams& params, TruncationWindow window, const RunOptions& opt,
                               std::uint64_t seed, const std::function<void(std::span<const int>)>& observe) {
  const auto kernel = conditioned_kernel(std::move(region), bc, params, window);
  Chain chain{kernel.flat_start(), seed, opt.chain_id, 0};
  run_chain(kernel, chain, opt, observe);
}

struct SandwichReport {
  bool coalesced = false;
  std::size_t coalescence_sweep = 0;
  bool order_preserved = true;
  std::size_t first_violation = 0;
  std::size_t sweeps_run = 0;
};

/// Highest (or lowest) admissible configuration. For p = inf the bounds are
/// relaxed until every gradient is at most 1.
inline std::vector<int> extremal_state(const HeatBath& kernel, bool upper) {
  const auto& b = kernel.bounds();
  std::vector<int> h(kernel.size());
  for (std::size_t k = 0; k < h.size(); ++k) h[k] = upper ? b.hi(k) : b.lo(k);
  if (!kernel.params().p_infinite()) return h;
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t k = 0; k < h.size(); ++k)
      for (const auto& link : kernel.stencil().links(k)) {
        const int nb = link.neighbour >= 0 ? h[static_cast<std::size_t>(link.neighbour)] : link.boundary_height;
        const int lim = upper ? nb + 1 : nb - 1;
        if (upper ? h[k] > lim : h[k] < lim) {
          h[k] = lim;
          changed = true;
        }
      }
  }
  for (std::size_t k = 0; k < h.size(); ++k)
    if (h[k] < b.lo(k) || h[k] > b.hi(k)) throw std::runtime_error("no admissible configuration within the bounds");
  return h;
}

/// Runs a top chain (all at upper bounds) and a bottom chain (all at lower
/// bounds) with shared randomness and checks top >= bottom after every sweep.
inline SandwichReport monotone_sandwich(const HeatBath& kernel, std::uint64_t seed, std::size_t max_sweeps,
                                        bool stop_at_coalescence = true) {
  Chain top{extremal_state(kernel, true), seed, 0, 0};
  Chain bottom{extremal_state(kernel, false), seed, 0, 0};
  SandwichReport rep;
  if (top.heights == bottom.heights) {
    rep.coalesced = true;
    if (stop_at_coalescence) return rep;
  }
  for (std::size_t s = 1; s <= max_sweeps; ++s) {
    heat_bath_sweep(kernel, top);
    heat_bath_sweep(kernel, bottom);
    rep.sweeps_run = s;
    for (std::size_t k = 0; k < kernel.size(); ++k)
      if (top.heights[k] < bottom.heights[k] && rep.order_preserved) {
        rep.order_preserved = false;
        rep.first_violation = s;
      }
    if (!rep.coalesced && top.heights == bottom.heights) {
      rep.coalesced = true;
      rep.coalescence_sweep = s;
      if (stop_at_coalescence) break;
    }
  }
  return rep;
}

/// Levels for multilevel splitting: floors -K, -(K-1), ..., 0. A level whose
/// target is rarer than min_fraction is split further by capping the number
/// of sites below the target.
struct SplittingSchedule {
  int K = 3;
  double min_fraction = 0.1;
  double sublevel_quantile = 0.3;
  double pilot = 0.25;  // share of kept samples used to place the next cap
  int max_sublevels = 64;

  void validate() const {
    if (K < 0) throw std::invalid_argument("splitting schedule needs K >= 0");
    if (!(min_fraction > 0.0 && min_fraction <= 1.0)) throw std::invalid_argument("min_fraction must lie in (0,1]");
    if (!(sublevel_quantile > 0.0 && sublevel_quantile < 1.0))
      throw std::invalid_argument("sublevel_quantile must lie in (0,1)");
    if (!(pilot > 0.0 && pilot < 1.0)) throw std::invalid_argument("pilot share must lie in (0,1)");
  }
};

struct SplittingSublevel {
  std::size_t cap = 0;     // chain keeps at most cap sites below the level target
  std::size_t target = 0;  // counted event: at most target such sites
  double fraction = 0.0;
  double std_error = 0.0;
};

struct SplittingLevel {
  int floor = 0;  // chain floor -k
  double fraction = 0.0;
  double std_error = 0.0;
  std::vector<SplittingSublevel> sublevels;
};

struct PositivityEstimate {
  EstimateRecord record;  // value = log P(phi >= 0 on the region)
  std::vector<SplittingLevel> levels;
};

inline double min_height(std::span<const int> h) {
  return h.empty() ? 0.0 : static_cast<double>(*std::min_element(h.begin(), h.end()));
}

/// Sweep that keeps at most cap sites below `level`; low tracks that count.
inline void capped_sweep(const HeatBath& kernel, Chain& chain, int level, std::size_t cap, std::size_t& low) {
  const CounterRng rng(chain.seed);
  std::vector<double> scratch;
  for (std::size_t k = 0; k < kernel.size(); ++k) {
    const bool was = chain.heights[k] < level;
    const int forbid = !was && low >= cap ? level : std::numeric_limits<int>::min();
    kernel.update(chain.heights, k, rng.uniform(kHeatBathStream, chain.id, chain.sweep, static_cast<std::uint32_t>(k)),
                  scratch, forbid);
    const bool now = chain.heights[k] < level;
    if (was && !now) --low;
    if (!was && now) ++low;
  }
  ++chain.sweep;
}

namespace detail {

/// P(no site below target) for a kernel, as a product over caps on the
/// number of sites below target.
inline SplittingLevel capped_level(const HeatBath& kernel, int floor, int target, const SplittingSchedule& sched,
                                   const RunOptions& opt, std::uint64_t seed, std::uint32_t level_id) {
  SplittingLevel lvl{floor, 1.0, 0.0, {}};
  const auto burn = static_cast<std::size_t>(opt.burn_in * static_cast<double>(opt.sweeps));
  std::size_t cap = kernel.size();
  double rel_var = 0.0;
  for (int sub = 0; sub < sched.max_sublevels; ++sub) {
    Chain chain{kernel.flat_start(), seed, level_id | static_cast<std::uint32_t>(sub) << 16, 0};
    std::size_t low = 0;
    for (int h : chain.heights) low += h < target;
    if (low > cap) throw std::runtime_error("splitting: flat start violates the cap");
    std::vector<std::size_t> counts;
    for (std::size_t s = 0; s < opt.sweeps; ++s) {
      capped_sweep(kernel, chain, target, cap, low);
      if (s >= burn) counts.push_back(low);
    }
    if (counts.empty()) throw std::invalid_argument("splitting level kept no samples");
    const auto split = static_cast<std::size_t>(sched.pilot * static_cast<double>(counts.size()));
    const std::span<const std::size_t> pilot(counts.data(), split);
    const std::span<const std::size_t> rest(counts.data() + split, counts.size() - split);
    auto share_at_most = [](std::span<const std::size_t> xs, std::size_t m) {
      std::size_t n = 0;
      for (auto x : xs) n += x <= m;
      return xs.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(xs.size());
    };
    std::size_t next = 0;
    const bool last = share_at_most(pilot, 0) >= sched.min_fraction || cap <= 1 || sub + 1 == sched.max_sublevels;
    if (!last) {
      std::vector<std::size_t> sorted(pilot.begin(), pilot.end());
      std::sort(sorted.begin(), sorted.end());
      const auto q = static_cast<std::size_t>(sched.sublevel_quantile * static_cast<double>(sorted.size()));
      next = std::min(sorted[std::min(q, sorted.size() - 1)], cap - 1);
    }
    BatchMeans bm;
    for (auto c : rest) bm.add(c <= next ? 1.0 : 0.0);
    const SplittingSublevel sl{cap, next, bm.mean(), bm.std_error()};
    lvl.sublevels.push_back(sl);
    if (sl.fraction <= 0.0) {
      lvl.fraction = 0.0;
      return lvl;
    }
    lvl.fraction *= sl.fraction;
    rel_var += (sl.std_error / sl.fraction) * (sl.std_error / sl.fraction);
    if (next == 0) break;
    cap = next;
  }
  lvl.std_error = lvl.fraction * std::sqrt(rel_var);
  return lvl;
}

}  // namespace detail

/// log P(phi >= 0 on the region) as a telescoping product over floors
/// -K..0. Factor k is the probability under the floor -k chain that no site
/// sits on the floor; the first factor is P(min >= -K) under the unfloored
/// chain. Levels run concurrently.
inline PositivityEstimate estimate_positivity(std::shared_ptr<const Region> region, const BoundaryCondition& bc,
                                              const ModelParams& params, TruncationWindow window,
                                              SplittingSchedule schedule, const RunOptions& opt, std::uint64_t seed,
                                              const BondWeightRule& rule = BondWeightRule::standard()) {
  schedule.validate();
  window.validate();
  if (opt.burn_in < 0.0 || opt.burn_in >= 1.0) throw std::invalid_argument("burn-in fraction must lie in [0,1)");
  // Level index j = K+1 is the unfloored chain, j = k <= K the floor -k chain.
  const int K = schedule.K;
  std::vector<std::future<SplittingLevel>> jobs;
  for (int j = K + 1; j >= 1; --j) {
    jobs.push_back(std::async(std::launch::async, [&, j] {
      SiteBounds bounds(*region, window);
      const bool top = j == K + 1;
      const int floor = top ? window.hmin : -j;
      const int target = top ? -K : -(j - 1);
      for (std::size_t k = 0; k < bounds.size(); ++k) bounds.restrict(k, floor, window.hmax);
      if (floor >= target) return SplittingLevel{floor, 1.0, 0.0, {}};
      const HeatBath kernel(region, bc, params, std::move(bounds), rule);
      return detail::capped_level(kernel, floor, target, schedule, opt, seed, static_cast<std::uint32_t>(j));
    }));
  }
  PositivityEstimate out;
  out.record.seed = seed;
  out.record.method = "multilevel-splitting K=" + std::to_string(K);
  out.record.params = describe_params(params);
  double var = 0.0;
  for (auto& f : jobs) {
    const auto lvl = f.get();
    out.levels.push_back(lvl);
    out.record.n_samples += opt.sweeps * std::max<std::size_t>(1, lvl.sublevels.size());
    if (lvl.fraction <= 0.0) {
      out.record.failed = true;
      out.record.note = "level with floor " + std::to_string(lvl.floor) + " never reached its target";
      continue;
    }
    out.record.value += std::log(lvl.fraction);
    var += (lvl.std_error / lvl.fraction) * (lvl.std_error / lvl.fraction);
  }
  out.record.std_error = std::sqrt(var);
  if (out.record.failed) out.record.value = -kInf;
  return out;
}

}  // namespace sos
