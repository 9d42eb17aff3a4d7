#pragma once

// Test-only reference computations. They share no code path with the
// enumeration engine beyond the Hamiltonian itself.

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "sos/model.hpp"

namespace sos::oracle {

/// Calls f(field) for every configuration with heights in [lo, hi] per site,
/// using a plain odometer.
inline void for_each_field(std::shared_ptr<const Region> region, const BoundaryCondition& bc, int lo, int hi,
                           const std::function<void(const HeightField&)>& f) {
  HeightField field(region, bc);
  auto h = field.heights();
  for (auto& x : h) x = lo;
  while (true) {
    f(field);
    std::size_t k = 0;
    while (k < h.size() && h[k] == hi) h[k++] = lo;
    if (k == h.size()) break;
    ++h[k];
  }
}

/// log Z by naive summation of exp(-beta H) with a full energy evaluation per
/// configuration. `accept` filters configurations (constraints, events).
inline double log_partition(std::shared_ptr<const Region> region, const BoundaryCondition& bc,
                            const ModelParams& params, int lo, int hi,
                            const BondWeightRule& rule = BondWeightRule::standard(),
                            const std::function<bool(const HeightField&)>& accept = nullptr) {
  std::vector<double> logw;
  for_each_field(region, bc, lo, hi, [&](const HeightField& f) {
    if (accept && !accept(f)) return;
    const double e = energy(f, params, rule);
    if (!std::isinf(e)) logw.push_back(-params.beta() * e);
  });
  double m = -INFINITY;
  for (double x : logw) m = std::max(m, x);
  double s = 0.0;
  for (double x : logw) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace sos::oracle
