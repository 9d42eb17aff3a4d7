#pragma once

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "sos/analysis.hpp"
#include "sos/contours.hpp"
#include "sos/exact.hpp"
#include "sos/model.hpp"

namespace sos {

struct SuiteResult {
  std::string name;
  bool pass = true;
  std::vector<std::string> details;
  std::string counterexample;
  double seconds = 0.0;
};

namespace detail {

inline std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

template <typename Body>
SuiteResult timed(std::string name, Body&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult r{std::move(name)};
  body(r);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace detail

inline const std::vector<double>& fkg_exponents() {
  static const std::vector<double> ps = {1.0, 1.5, 2.0, 3.0, kInf};
  return ps;
}

/// Four-point lattice condition over [-5,5]^4 for every exponent and rule.
inline SuiteResult verify_fkg() {
  return detail::timed("fkg", [](SuiteResult& r) {
    std::size_t checked = 0;
    for (double p : fkg_exponents())
      for (bool tilted : {false, true}) {
        const auto rep = check_fkg_lattice(ModelParams(p, 1.0), tilted, -5, 5);
        checked += rep.checked;
        if (!rep.pass && r.pass) {
          r.pass = false;
          const auto& c = *rep.counterexample;
          r.counterexample = "p=" + ModelParams(p, 1.0).p_string() + (tilted ? " tilted" : " standard") + " (a,b,c,d)=(" +
                             std::to_string(c[0]) + "," + std::to_string(c[1]) + "," + std::to_string(c[2]) + "," +
                             std::to_string(c[3]) + ")";
        }
      }
    r.details.push_back(std::to_string(checked) + " quadruples checked");
  });
}

/// Constraint set and tilted rule of the open contour of the one-step
/// staircase ground state on the 3x3 box.
inline TiltedSpec staircase_ground_state_spec() {
  const auto region = std::make_shared<const Region>(Region::square(1));
  const auto bc = staircase_bc(1, {0}, {0}, 1, 1);
  const Stencil stencil(region, bc);
  const auto g = exact_ground_state(stencil, SiteBounds(*region, {0, 1}), ModelParams(1.0, 5.0));
  return tilted_spec(open_contour(HeightField(region, bc, g)));
}

/// Cluster decomposition on the 3x3 box with window {-1,0,1}, unconstrained
/// and with the staircase contour's sign constraints.
inline SuiteResult verify_bijection() {
  return detail::timed("bijection", [](SuiteResult& r) {
    const auto region = std::make_shared<const Region>(Region::square(1));
    const auto spec = staircase_ground_state_spec();
    struct Case {
      std::string label;
      ConstraintSet constraints;
      BondWeightRule rule;
    };
    const std::vector<Case> cases = {{"unconstrained", {}, BondWeightRule::standard()},
                                     {"constrained", spec.constraints, spec.rule()}};
    for (const auto& c : cases) {
      const auto rep = check_cluster_bijection(region, {-1, 1}, ModelParams(2.0, 0.8), c.constraints, c.rule);
      const double rel = std::abs(std::expm1(rep.log_z_clusters - rep.log_z_surfaces));
      r.details.push_back(c.label + ": " + std::to_string(rep.surfaces) + " surfaces, " +
                          std::to_string(rep.legal_surfaces) + " legal, " + std::to_string(rep.compatible_configs) +
                          " compatible cluster configs, max weight error " + detail::fmt("%.2e", rep.max_weight_error) +
                          ", Z relative error " + detail::fmt("%.2e", rel));
      if (!rep.pass && r.pass) {
        r.pass = false;
        r.counterexample = c.label + ": " + rep.failure;
      }
    }
  });
}

struct OracleInstance {
  int L = 0;
  int M = 0;
  std::string bc;  // zero or staircase a/b
  TruncationWindow window;
  double p = 1.0;
  double beta = 0.7;
};

/// Strip instances small enough for brute-force enumeration.
inline std::vector<OracleInstance> oracle_instances() {
  std::vector<OracleInstance> out;
  for (double p : {1.0, 2.0, kInf}) {
    out.push_back({0, 4, "zero", {-2, 2}, p});
    out.push_back({0, 3, "0/0", {-2, 2}, p});
    out.push_back({1, 1, "zero", {-2, 2}, p});
    out.push_back({1, 1, "0/0", {-2, 2}, p});
    out.push_back({1, 2, "zero", {-1, 1}, p});
    out.push_back({1, 2, "0/1", {-1, 1}, p});
    out.push_back({1, 3, "-1/1", {0, 1}, p});
  }
  return out;
}

inline BoundaryCondition oracle_bc(const OracleInstance& in) {
  if (in.bc == "zero") return BoundaryCondition::zero();
  const auto slash = in.bc.find('/');
  return staircase_bc(1, {std::stoi(in.bc.substr(0, slash))}, {std::stoi(in.bc.substr(slash + 1))}, in.L, in.M);
}

/// Enumeration against the transfer matrix, relative error 1e-10.
inline SuiteResult verify_oracle() {
  return detail::timed("oracle", [](SuiteResult& r) {
    const auto instances = oracle_instances();
    double worst = 0.0;
    for (const auto& in : instances) {
      const ModelParams params(in.p, in.beta);
      const auto bc = oracle_bc(in);
      const auto region = Region::rectangle(in.L, in.M);
      const double en = enumerate_partition(region, bc, params, in.window).logZ;
      const double tm = transfer_matrix(in.L, in.M, bc, params, in.window).logZ;
      const double rel = std::abs(std::expm1(en - tm));
      worst = std::max(worst, rel);
      if (!(rel <= 1e-10) && r.pass) {
        r.pass = false;
        r.counterexample = "L=" + std::to_string(in.L) + " M=" + std::to_string(in.M) + " p=" + params.p_string() +
                           " bc=" + in.bc + " window [" + std::to_string(in.window.hmin) + "," +
                           std::to_string(in.window.hmax) + "]: enumeration " + detail::fmt("%.15g", en) +
                           " vs transfer matrix " + detail::fmt("%.15g", tm);
      }
    }
    r.details.push_back(std::to_string(instances.size()) + " instances, worst relative error " +
                        detail::fmt("%.2e", worst));
  });
}

struct MonotonicitySetup {
  int L = 2;
  double beta = 2.0;
  std::vector<double> ps = {1.0, 2.0};
  std::vector<int> M_list = {7, 8};
  TruncationWindow window = staircase_window(2);
  double tolerance = 1e-9;
  double convergence = 1e-6;
};

/// Product and shift inequalities for all two-step staircases with
/// a_i, b_i in {-1,0,1}. Every instance must converge in M and hold.
inline SuiteResult verify_monotonicity(const MonotonicitySetup& setup = {},
                                       std::vector<std::pair<double, MonotonicityReport>>* reports = nullptr) {
  return detail::timed("monotonicity", [&](SuiteResult& r) {
    for (double p : setup.ps) {
      const ModelParams params(p, setup.beta);
      const auto rep = check_monotonicity(two_step_staircases(-1, 1), setup.L, setup.M_list, params, setup.window,
                                          setup.tolerance, setup.convergence);
      r.details.push_back("p=" + params.p_string() + ": " + std::to_string(rep.instances.size()) + " inequalities, " +
                          std::to_string(rep.unconverged) + " unconverged, max margin " +
                          detail::fmt("%.3e", rep.max_margin));
      if ((!rep.pass || rep.unconverged > 0) && r.pass) {
        r.pass = false;
        for (const auto& inst : rep.instances)
          if (!inst.converged || inst.margin > setup.tolerance) {
            r.counterexample = "p=" + params.p_string() + " " + inst.kind + " " + inst.id + " margin " +
                               detail::fmt("%.3e", inst.margin) + (inst.converged ? "" : " (not converged)");
            break;
          }
      }
      if (reports) reports->push_back({p, rep});
    }
  });
}

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names = {"fkg", "bijection", "oracle", "monotonicity"};
  return names;
}

inline SuiteResult run_suite(const std::string& name) {
  if (name == "fkg") return verify_fkg();
  if (name == "bijection") return verify_bijection();
  if (name == "oracle") return verify_oracle();
  if (name == "monotonicity") return verify_monotonicity();
  throw std::invalid_argument("unknown verification suite '" + name + "'");
}

}  // namespace sos
