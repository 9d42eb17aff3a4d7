// Acceptance run: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "sos/analysis.hpp"
#include "sos/sampler.hpp"
#include "sos/verify.hpp"

using namespace sos;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double x) { return detail::fmt(f, x); }

std::shared_ptr<const Region> square(int L) { return std::make_shared<const Region>(Region::square(L)); }

Outcome from_suite(const std::string& name) {
  const auto r = run_suite(name);
  std::string d;
  for (const auto& x : r.details) d += (d.empty() ? "" : "; ") + x;
  if (!r.pass) d += "; counterexample: " + r.counterexample;
  return {r.pass, d};
}

Outcome criterion4() {
  bool pass = true;
  std::string d;
  const auto region = square(1);
  const TruncationWindow window{-1, 1};
  const RunOptions run{1000000, 0.1, 0};
  for (double p : {1.0, 2.0}) {
    const ModelParams params(p, 1.5);
    const double exact_ge1 = exact_probability(*region, BoundaryCondition::zero(), params, window,
                                               [](std::span<const int> h) { return h[4] >= 1; });
    const HeatBath kernel(region, BoundaryCondition::zero(), params, SiteBounds(*region, window));
    const auto ge1 = estimate_mean(kernel, run, 101, [](std::span<const int> h) { return h[4] >= 1 ? 1.0 : 0.0; });
    const double exact_mean = exact_expectation(Stencil(region, BoundaryCondition::zero()),
                                                SiteBounds(*region, {0, 1}), params,
                                                [](std::span<const int> h) { return static_cast<double>(h[4]); });
    BatchMeans cond;
    conditioned_sample(region, BoundaryCondition::zero(), params, window, run, 202,
                       [&](std::span<const int> h) { cond.add(h[4]); });
    const double z1 = std::abs(ge1.value - exact_ge1) / ge1.std_error;
    const double z2 = std::abs(cond.mean() - exact_mean) / cond.std_error();
    std::size_t violations = 0;
    for (std::uint64_t seed = 1; seed <= 50; ++seed)
      if (!monotone_sandwich(kernel, seed, 2000, false).order_preserved) ++violations;
    pass = pass && z1 <= 3.0 && z2 <= 3.0 && violations == 0;
    d += "p=" + params.p_string() + ": P(phi(0)>=1) " + fmt("%.5f", ge1.value) + " vs " + fmt("%.5f", exact_ge1) +
         " (" + fmt("%.2f", z1) + " se), conditioned mean " + fmt("%.5f", cond.mean()) + " vs " +
         fmt("%.5f", exact_mean) + " (" + fmt("%.2f", z2) + " se), sandwich violations " +
         std::to_string(violations) + "/50; ";
  }
  return {pass, d};
}

Outcome criterion5() {
  const auto region = square(1);
  const ModelParams params(1.0, 1.5);
  const TruncationWindow window{-2, 2};
  const double exact = std::log(exact_probability(*region, BoundaryCondition::zero(), params, window,
                                                  [](std::span<const int> h) { return min_height(h) >= 0; }));
  int within = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto est =
        estimate_positivity(region, BoundaryCondition::zero(), params, window, {2}, {100000, 0.2, 0}, seed);
    const double z = est.record.failed ? kInf : std::abs(est.record.value - exact) / est.record.std_error;
    worst = std::max(worst, z);
    if (z <= 3.0) ++within;
  }
  return {within >= 18, "log P exact " + fmt("%.6f", exact) + ", " + std::to_string(within) +
                            "/20 seeds within 3 se, largest deviation " + fmt("%.2f", worst) + " se"};
}

Outcome criterion7() {
  const auto est = estimate_tau(0.0, ModelParams(1.0, 3.0), {2, 3, 4, 5, 6}, {0, 1}, {2, 3, 4, 5}, 1e-6);
  std::string d = "tau_L:";
  for (const auto& pt : est.points) d += " " + std::to_string(pt.L) + ":" + fmt("%.4f", pt.tau);
  d += "; extrapolated tau " + fmt("%.4f", est.tau) + " +- " + fmt("%.4f", est.tau_error) + ", monotone " +
       (est.monotone ? "yes" : "no") + ", converged in M " + (est.converged ? "yes" : "no");
  return {est.tau >= 0.8 && est.tau <= 1.2 && est.monotone, d};
}

int median(const std::map<int, std::size_t>& hist, std::size_t n) {
  std::size_t seen = 0;
  for (const auto& [h, c] : hist) {
    seen += c;
    if (2 * seen >= n) return h;
  }
  return 0;
}

Outcome criterion8() {
  std::string d = "median phi(0) under phi>=0 at beta=0.75:";
  std::vector<int> medians;
  for (int L : {8, 16, 32}) {
    std::map<int, std::size_t> hist;
    std::size_t n = 0;
    conditioned_sample(square(L), BoundaryCondition::zero(), ModelParams(1.0, 0.75), {-1, 10}, {10000, 0.2, 0},
                       static_cast<std::uint64_t>(L), [&](std::span<const int> h) {
                         ++hist[h[h.size() / 2]];
                         ++n;
                       });
    medians.push_back(median(hist, n));
    d += " L=" + std::to_string(L) + ":" + std::to_string(medians.back());
  }
  const bool trend = std::is_sorted(medians.begin(), medians.end()) && medians.back() >= 1;

  const double beta = 1.0;
  const int proxy = 32, radius = 16;
  const auto curve = mcmc_marginal(proxy, ModelParams(1.0, beta), {-6, 6}, radius, {40000, 0.1, 0}, 7);
  std::vector<std::pair<double, double>> points;
  std::string hs;
  bool stable = true;
  for (int k = 4; k <= 20; ++k) {
    const int L = 1 << k;
    const auto est = repulsion_from_curve(L, beta, curve, "heat-bath", proxy_description(proxy, radius));
    points.push_back({static_cast<double>(L), static_cast<double>(est.H)});
    hs += (hs.empty() ? "" : ",") + std::to_string(est.H);
    stable = stable && est.stable;
  }
  const auto fit = fit_table1(points, 1.0);
  const double target = 1.0 / (4.0 * beta);
  const bool fit_ok = fit.c >= target / 2.0 && fit.c <= target * 2.0;
  d += "; H(beta=1) for L=2^4..2^20: " + hs + (stable ? "" : " (some H within 3 se of the threshold)") +
       "; fitted c " + fmt("%.4f", fit.c) + " vs 1/(4 beta) = " + fmt("%.4f", target);
  return {trend && fit_ok, d};
}

Outcome criterion9() {
  const std::vector<int> Ls = {4, 6, 8};
  const std::vector<double> betas = {0.75, 1.5};
  std::map<std::pair<int, double>, double> neglog;
  bool rates_ok = true;
  int defined = 0;
  std::string d;
  for (double beta : betas) {
    const ModelParams params(1.0, beta);
    RepulsionOptions ropt;
    ropt.proxy_cap = 16;
    ropt.run = {4000, 0.2, 0};
    ropt.seed = 11;
    for (int L : Ls) {
      const auto pos = estimate_positivity(square(L), BoundaryCondition::zero(), params, {-8, 8}, {4},
                                           {20000, 0.2, 0}, 11);
      const auto rep = compute_H(L, params, HMethod::mcmc, {-4, 6}, ropt);
      const auto r = rate_from(L, pos.record.value, pos.record.std_error, rep.H);
      neglog[{L, beta}] = -pos.record.value;
      if (r.defined) {
        ++defined;
        rates_ok = rates_ok && r.rate > 0.0;
      }
      d += "beta=" + fmt("%g", beta) + " L=" + std::to_string(L) + ": -log P " + fmt("%.3f", -pos.record.value) +
           " +- " + fmt("%.3f", pos.record.std_error) + ", H " + std::to_string(rep.H) + "; ";
    }
  }
  bool in_L = true, in_beta = true;
  for (double beta : betas)
    for (std::size_t i = 1; i < Ls.size(); ++i) in_L = in_L && neglog[{Ls[i], beta}] > neglog[{Ls[i - 1], beta}];
  for (int L : Ls) in_beta = in_beta && neglog[{L, betas[1]}] > neglog[{L, betas[0]}];
  d += "rate defined at " + std::to_string(defined) + "/6 points" + (rates_ok ? " and positive" : ", NOT positive") +
       "; increasing in L " + (in_L ? "yes" : "no") + "; increasing in beta " + (in_beta ? "yes" : "no");
  return {rates_ok && in_L && in_beta, d};
}

struct Criterion {
  int id;
  double limit_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, 1.0, [] { return from_suite("fkg"); }},
      {2, 30.0, [] { return from_suite("bijection"); }},
      {3, 60.0, [] { return from_suite("oracle"); }},
      {4, 120.0, criterion4},
      {5, 300.0, criterion5},
      {6, 600.0, [] { return from_suite("monotonicity"); }},
      {7, 600.0, criterion7},
      {8, 1800.0, criterion8},
      {9, 1800.0, criterion9},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.limit_seconds;
    const bool pass = o.pass && in_time;
    if (!pass) ++failures;
    std::printf("criterion %d: %s [%.1f s of %.0f s%s] %s\n", c.id, pass ? "PASS" : "FAIL", secs, c.limit_seconds,
                in_time ? "" : ", over time", o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
