#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sos/analysis.hpp"
#include "sos/contours.hpp"
#include "sos/exact.hpp"
#include "sos/io.hpp"
#include "sos/sampler.hpp"
#include "sos/verify.hpp"

using namespace sos;
using nlohmann::ordered_json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kValidation = 2, kCap = 3, kVerification = 4 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Setting {
  std::string key;
  std::string flag;
  std::string help;
};

const std::vector<Setting> kSettings = {
    {"p", "--p", "gradient exponent (number >= 1 or inf)"},
    {"beta", "--beta", "inverse temperature"},
    {"L", "--L", "half-width, or comma list of half-widths"},
    {"M", "--M", "half-height of the box"},
    {"M_list", "--M-list", "comma list of half-heights for convergence sweeps"},
    {"window", "--window", "height window lo:hi"},
    {"bc", "--bc", "boundary: zero | constant:h | staircase:a1,..,an/b1,..,bn"},
    {"seed", "--seed", "random seed"},
    {"sweeps", "--sweeps", "sweeps per chain"},
    {"burn_in", "--burn-in", "burn-in fraction in [0,1)"},
    {"levels", "--levels", "splitting levels K (floors -K..0)"},
    {"method", "--method", "exact | mcmc (repulsion), transfer | enumerate (exact)"},
    {"proxy_cap", "--proxy-cap", "largest proxy box for the infinite-volume marginal"},
    {"bulk_radius", "--bulk-radius", "average the marginal over Lambda_r"},
    {"theta", "--theta", "tilt angle in radians"},
    {"tau_L", "--tau-L", "half-widths for the comparison surface tension"},
    {"conditioned", "--conditioned", "sample the measure conditioned on phi >= 0 (0 or 1)"},
    {"dump_every", "--dump-every", "save a sample every n kept sweeps (0: never)"},
    {"delta", "--delta", "circuit annulus width fraction"},
    {"K", "--K", "circuit height slack, comma list"},
    {"H", "--H", "circuit reference height"},
    {"load", "--load", "height field file"},
    {"h", "--h", "contour level, or 'all'"},
    {"out", "--out", "output root directory"},
};

// ---------------------------------------------------------------------------
// Typed accessors with validation

int get_int(const Config& c, const std::string& k) {
  const auto& s = c.get(k);
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw std::invalid_argument(k + " must be an integer, got '" + s + "'");
  return v;
}

double get_double(const Config& c, const std::string& k) {
  const auto& s = c.get(k);
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw std::invalid_argument(k + " must be a number, got '" + s + "'");
  return v;
}

std::uint64_t get_seed(const Config& c) { return std::stoull(c.get_or("seed", "1")); }

std::vector<int> get_int_list(const Config& c, const std::string& k) {
  auto v = parse_int_list(c.get(k));
  if (v.empty()) throw std::invalid_argument(k + " must list at least one value");
  return v;
}

ModelParams get_params(const Config& c) { return ModelParams(parse_p(c.get("p")), get_double(c, "beta")); }

TruncationWindow get_window(const Config& c, TruncationWindow fallback) {
  if (!c.has("window")) return fallback;
  const auto& s = c.get("window");
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw std::invalid_argument("window must read lo:hi");
  TruncationWindow w{std::stoi(s.substr(0, colon)), std::stoi(s.substr(colon + 1))};
  w.validate();
  return w;
}

RunOptions get_run(const Config& c, const std::string& default_sweeps) {
  RunOptions r;
  const long long sweeps = std::stoll(c.get_or("sweeps", default_sweeps));
  if (sweeps < 1) throw std::invalid_argument("sweeps must be positive");
  r.sweeps = static_cast<std::size_t>(sweeps);
  r.burn_in = std::stod(c.get_or("burn_in", "0.2"));
  if (r.burn_in < 0.0 || r.burn_in >= 1.0) throw std::invalid_argument("burn-in fraction must lie in [0,1)");
  return r;
}

void require(const Config& c, std::initializer_list<const char*> keys) {
  for (const char* k : keys)
    if (!c.has(k)) throw UsageError(std::string("missing required setting --") + k);
}

void require_positive(int v, const std::string& what) {
  if (v < 1) throw std::invalid_argument(what + " must be >= 1");
}

ordered_json params_json(const ModelParams& p) { return {{"p", p.p_string()}, {"beta", p.beta()}}; }
ordered_json window_json(TruncationWindow w) { return {w.hmin, w.hmax}; }

ordered_json finite_or_null(double x) { return std::isfinite(x) ? ordered_json(x) : ordered_json(nullptr); }

void emit(std::ostream& file, const ordered_json& record) {
  const auto line = record.dump();
  file << line << '\n';
  std::cout << line << '\n';
}

// Where run directories go; not part of the hashed configuration.
std::filesystem::path g_out_root = "runs";

std::filesystem::path out_root(const Config&) { return g_out_root; }

void announce(const RunDirectory& run) { std::cerr << "outputs in " << run.path().string() << '\n'; }

// ---------------------------------------------------------------------------
// Commands

int cmd_exact(const Config& c) {
  require(c, {"L", "M", "p", "beta"});
  const int L = get_int(c, "L");
  const int M = get_int(c, "M");
  if (L < 0 || M < 0) throw std::invalid_argument("L and M must be >= 0");
  const auto params = get_params(c);
  const auto bc = parse_bc(c.get_or("bc", "zero"), L, M);
  const auto window = get_window(c, staircase_window(bc.steps()));
  const auto method = c.get_or("method", "transfer");
  if (method != "transfer" && method != "enumerate") throw std::invalid_argument("exact method must be transfer or enumerate");
  const auto region = Region::rectangle(L, M);
  {
    const Stencil stencil(std::make_shared<const Region>(region), bc);
    check_window_covers_boundary(stencil, window);
  }

  RunDirectory run(out_root(c), c, "exact");
  auto out = run.create("results.jsonl");
  const auto value = method == "transfer" ? transfer_matrix(L, M, bc, params, window)
                                          : enumerate_partition(region, bc, params, window);
  ordered_json rec{{"logZ", value.logZ},        {"window", window_json(window)}, {"method", value.method},
                   {"params", params_json(params)}, {"L", L},                       {"M", M},
                   {"bc", bc.describe()},       {"convergence", nullptr},        {"config_hash", run.hash()}};
  if (bc.kind() == BoundaryKind::staircase && M >= 1) {
    std::vector<int> Ms;
    for (int m = std::max({1, M - 2, std::abs(bc.a().back()), std::abs(bc.b().back()), std::abs(bc.a().front()),
                           std::abs(bc.b().front())});
         m <= M; ++m)
      Ms.push_back(m);
    const auto r = staircase_ratio(bc.a(), bc.b(), L, Ms, params, window);
    rec["convergence"] = {{"M", r.M},
                          {"log_ratio", r.log_ratio},
                          {"last_change", r.last_change},
                          {"converged", r.converged}};
  }
  emit(out, rec);
  out.close();
  run.finish(0);
  announce(run);
  return kOk;
}

int cmd_simulate(const Config& c) {
  require(c, {"L", "p", "beta"});
  const int L = get_int(c, "L");
  const int M = c.has("M") ? get_int(c, "M") : L;
  require_positive(L, "L");
  require_positive(M, "M");
  const auto params = get_params(c);
  const auto bc = parse_bc(c.get_or("bc", "zero"), L, M);
  const auto window = get_window(c, {-6, 6 + bc.steps()});
  const auto opt = get_run(c, "10000");
  const auto seed = get_seed(c);
  const bool conditioned = c.get_or("conditioned", "0") == "1";
  const int dump_every = std::stoi(c.get_or("dump_every", "0"));
  const bool circuits = c.has("delta");
  std::vector<int> Ks;
  int H = 0;
  double delta = 0.0;
  if (circuits) {
    if (M != L) throw std::invalid_argument("circuit detection needs a square box");
    delta = get_double(c, "delta");
    Ks = parse_int_list(c.get_or("K", "0,1,2"));
    require(c, {"H"});
    H = get_int(c, "H");
  }
  auto region = std::make_shared<const Region>(Region::rectangle(L, M));
  SiteBounds bounds(*region, window);
  if (conditioned)
    for (std::size_t k = 0; k < bounds.size(); ++k) bounds.restrict(k, 0, window.hmax);
  const HeatBath kernel(region, bc, params, std::move(bounds));
  check_window_covers_boundary(kernel.stencil(), window);

  RunDirectory run(out_root(c), c, "simulate");
  const int centre = region->index_of({0, 0});
  BatchMeans mean_centre, ge1, mean_height;
  std::vector<BatchMeans> found(Ks.size());
  std::size_t kept = 0, dumps = 0;
  Chain chain{kernel.flat_start(), seed, 0, 0};
  run_chain(kernel, chain, opt, [&](std::span<const int> h) {
    ++kept;
    mean_centre.add(h[static_cast<std::size_t>(centre)]);
    ge1.add(h[static_cast<std::size_t>(centre)] >= 1 ? 1.0 : 0.0);
    double s = 0.0;
    for (int x : h) s += x;
    mean_height.add(s / static_cast<double>(h.size()));
    if (circuits) {
      const HeightField f(region, bc, std::vector<int>(h.begin(), h.end()));
      for (std::size_t i = 0; i < Ks.size(); ++i) found[i].add(detect_circuit(f, delta, Ks[i], H).found ? 1.0 : 0.0);
    }
    if (dump_every > 0 && kept % static_cast<std::size_t>(dump_every) == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "sample_%06zu.txt", dumps++);
      auto f = run.create(name);
      save_field(f, HeightField(region, bc, std::vector<int>(h.begin(), h.end())), params);
    }
  });
  auto out = run.create("estimates.jsonl");
  const std::string method = conditioned ? "heat-bath conditioned phi>=0" : "heat-bath";
  auto record = [&](const std::string& what, const BatchMeans& bm) {
    emit(out, ordered_json{{"quantity", what},
                           {"value", bm.mean()},
                           {"std_error", bm.std_error()},
                           {"n_samples", bm.count()},
                           {"seed", seed},
                           {"method", method},
                           {"params", params_json(params)},
                           {"window", window_json(window)},
                           {"config_hash", run.hash()}});
  };
  record("phi(0)", mean_centre);
  record("P(phi(0)>=1)", ge1);
  record("mean height", mean_height);
  for (std::size_t i = 0; i < Ks.size(); ++i)
    record("circuit found delta=" + format_double(delta) + " K=" + std::to_string(Ks[i]) + " H=" + std::to_string(H),
           found[i]);
  out.close();
  auto last = run.create("final.txt");
  save_field(last, HeightField(region, bc, chain.heights), params);
  last.close();
  run.finish(seed);
  announce(run);
  return kOk;
}

int cmd_repulsion(const Config& c) {
  require(c, {"L", "p", "beta"});
  const auto Ls = get_int_list(c, "L");
  for (int L : Ls) require_positive(L, "L");
  const auto params = get_params(c);
  const auto method = c.get_or("method", "mcmc");
  if (method != "mcmc" && method != "exact") throw std::invalid_argument("repulsion method must be mcmc or exact");
  const auto window = get_window(c, {-4, 6});
  RepulsionOptions opt;
  opt.proxy_cap = std::stoi(c.get_or("proxy_cap", method == "exact" ? "2" : "32"));
  opt.bulk_radius = std::stoi(c.get_or("bulk_radius", "0"));
  opt.run = get_run(c, "10000");
  opt.seed = get_seed(c);
  require_positive(opt.proxy_cap, "proxy cap");
  if (opt.bulk_radius < 0) throw std::invalid_argument("bulk radius must be >= 0");

  RunDirectory run(out_root(c), c, "repulsion");
  auto csv_file = run.create("repulsion.csv");
  CsvWriter csv(csv_file, {"L", "h", "P", "err"});
  auto json = run.create("H.jsonl");
  for (int L : Ls) {
    const auto est = compute_H(L, params, method == "exact" ? HMethod::exact : HMethod::mcmc, window, opt);
    for (const auto& pt : est.curve)
      csv.row({std::to_string(L), std::to_string(pt.h), format_double(pt.prob), format_double(pt.std_error)});
    emit(json, ordered_json{{"L", L},
                            {"H", est.H},
                            {"threshold", est.threshold},
                            {"method", est.method},
                            {"proxy", est.proxy},
                            {"stable", est.stable},
                            {"curve_monotone", est.curve_monotone},
                            {"warning", est.note.empty() ? ordered_json(nullptr) : ordered_json(est.note)},
                            {"params", params_json(params)},
                            {"window", window_json(window)},
                            {"seed", opt.seed},
                            {"config_hash", run.hash()}});
  }
  csv_file.close();
  json.close();
  run.finish(opt.seed);
  announce(run);
  return kOk;
}

int cmd_tension(const Config& c) {
  require(c, {"L", "p", "beta"});
  const auto Ls = get_int_list(c, "L");
  for (int L : Ls) require_positive(L, "L");
  const auto params = get_params(c);
  const double theta = std::stod(c.get_or("theta", "0"));
  const auto window = get_window(c, {0, 1});
  const auto Ms = parse_int_list(c.get_or("M_list", "2,3,4,5"));
  if (Ls.size() < 2) throw std::invalid_argument("tension needs two or more values of L");
  for (int L : Ls) tilt_endpoints(theta, L);

  RunDirectory run(out_root(c), c, "tension");
  const auto est = estimate_tau(theta, params, Ls, window, Ms, 1e-6);
  auto csv_file = run.create("tension.csv");
  CsvWriter csv(csv_file, {"L", "tau_L", "extrapolant"});
  for (const auto& pt : est.points) csv.row({std::to_string(pt.L), format_double(pt.tau), format_double(est.tau)});
  csv_file.close();
  auto json = run.create("tension.jsonl");
  ordered_json pts = ordered_json::array();
  for (const auto& pt : est.points)
    pts.push_back({{"L", pt.L}, {"a", pt.a}, {"b", pt.b}, {"tau_L", pt.tau}, {"error", pt.error}, {"converged", pt.converged}});
  emit(json, ordered_json{{"theta", theta},
                          {"tau", est.tau},
                          {"tau_error", est.tau_error},
                          {"slope", est.slope},
                          {"converged", est.converged},
                          {"monotone", est.monotone},
                          {"points", pts},
                          {"params", params_json(params)},
                          {"window", window_json(window)},
                          {"config_hash", run.hash()}});
  json.close();
  run.finish(0);
  announce(run);
  return kOk;
}

int cmd_rate(const Config& c) {
  require(c, {"L", "p", "beta"});
  const auto Ls = get_int_list(c, "L");
  for (int L : Ls) require_positive(L, "L");
  const auto params = get_params(c);
  const auto window = get_window(c, {-8, 8});
  RateOptions opt;
  opt.schedule.K = std::stoi(c.get_or("levels", "3"));
  opt.schedule.validate();
  opt.run = get_run(c, "10000");
  opt.h_method = c.get_or("method", "mcmc") == "exact" ? HMethod::exact : HMethod::mcmc;
  opt.repulsion.proxy_cap = std::stoi(c.get_or("proxy_cap", opt.h_method == HMethod::exact ? "2" : "32"));
  opt.repulsion.bulk_radius = std::stoi(c.get_or("bulk_radius", "0"));
  opt.repulsion.run = opt.run;
  const auto tau_L = parse_int_list(c.get_or("tau_L", "2,3,4"));
  const auto seed = get_seed(c);

  RunDirectory run(out_root(c), c, "rate");
  const auto tau = estimate_tau(0.0, params, tau_L, {0, 1}, {3, 4}, 1e-6);
  opt.beta_tau = params.beta() * tau.tau;
  const auto rates = estimate_rate(Ls, params, window, opt, seed);
  auto csv_file = run.create("rate.csv");
  CsvWriter csv(csv_file, {"L", "logP", "H", "rate", "beta_tau"});
  auto json = run.create("rate.jsonl");
  for (const auto& r : rates) {
    csv.row({std::to_string(r.L), format_double(r.logP), std::to_string(r.H), r.defined ? format_double(r.rate) : "nan",
             format_double(*r.beta_tau)});
    emit(json, ordered_json{{"L", r.L},
                            {"logP", finite_or_null(r.logP)},
                            {"logP_error", r.logP_error},
                            {"H", r.H},
                            {"defined", r.defined},
                            {"rate", r.defined ? ordered_json(r.rate) : ordered_json(nullptr)},
                            {"rate_error", r.defined ? ordered_json(r.rate_error) : ordered_json(nullptr)},
                            {"beta_tau", *r.beta_tau},
                            {"tau_window", window_json({0, 1})},
                            {"note", r.note},
                            {"levels", opt.schedule.K},
                            {"params", params_json(params)},
                            {"window", window_json(window)},
                            {"seed", seed},
                            {"config_hash", run.hash()}});
  }
  csv_file.close();
  json.close();
  run.finish(seed);
  announce(run);
  return kOk;
}

ordered_json contour_json(const GeometricContour& g, int h) {
  ordered_json vs = ordered_json::array();
  for (const auto& v : g.vertices) vs.push_back({v.cx(), v.cy()});
  return {{"h", h}, {"closed", g.closed}, {"length", g.length()}, {"vertices", vs}};
}

int cmd_contours(const Config& c) {
  require(c, {"load"});
  std::ifstream in(c.get("load"));
  if (!in) throw std::invalid_argument("cannot open height field " + c.get("load"));
  const auto loaded = load_field(in);
  const auto& field = loaded.field;
  const std::string hs = c.get_or("h", "all");

  RunDirectory run(out_root(c), c, "contours");
  auto out = run.create("contours.jsonl");
  std::size_t n = 0;
  auto write_level = [&](const HContours& hc) {
    for (const auto& g : hc.contours) {
      auto rec = contour_json(g, hc.h);
      rec["config_hash"] = run.hash();
      emit(out, rec);
      ++n;
    }
  };
  if (hs == "all") {
    for (const auto& hc : extract_all_contours(field)) write_level(hc);
  } else {
    write_level(extract_h_contours(field, std::stoi(hs)));
  }
  if (field.bc().kind() == BoundaryKind::staircase && field.bc().steps() == 1) {
    const auto oc = open_contour(field);
    auto rec = contour_json(oc.path, 1);
    rec["open"] = true;
    rec["is_h_contour"] = oc.is_h_contour;
    rec["config_hash"] = run.hash();
    emit(out, rec);
    ++n;
  }
  out.close();
  std::cerr << n << " contours\n";
  run.finish(0);
  announce(run);
  return kOk;
}

int cmd_verify(const std::string& suite) {
  std::vector<std::string> names = suite == "all" ? suite_names() : std::vector<std::string>{suite};
  bool ok = true;
  for (const auto& name : names) {
    std::vector<std::pair<double, MonotonicityReport>> reports;
    const auto r = name == "monotonicity" ? verify_monotonicity({}, &reports) : run_suite(name);
    std::printf("%s: %s (%.1f s)\n", r.name.c_str(), r.pass ? "pass" : "FAIL", r.seconds);
    for (const auto& d : r.details) std::printf("  %s\n", d.c_str());
    if (!r.pass) std::printf("  counterexample: %s\n", r.counterexample.c_str());
    if (!reports.empty()) {
      std::printf("  %-4s %-28s %-8s %3s %12s\n", "p", "staircase", "kind", "M", "margin");
      for (const auto& [p, rep] : reports)
        for (const auto& inst : rep.instances)
          std::printf("  %-4s %-28s %-8s %3d %12.4e%s\n", ModelParams(p, 1.0).p_string().c_str(), inst.id.c_str(),
                      inst.kind.c_str(), inst.M, inst.margin, inst.converged ? "" : " (not converged)");
    }
    ok = ok && r.pass;
  }
  return ok ? kOk : kVerification;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Solid-on-solid surfaces: exact partition functions, sampling, contours and repulsion analysis"};
  app.require_subcommand(1);
  app.set_help_flag("--help", "print this help and exit");
  std::map<std::string, std::string> values;
  std::string config_file;
  struct Sub {
    std::string name;
    std::string help;
    std::vector<std::string> keys;
  };
  const std::vector<Sub> subs = {
      {"exact", "exact log partition function", {"p", "beta", "L", "M", "window", "bc", "method", "out"}},
      {"simulate",
       "heat-bath sampling with estimates and sample dumps",
       {"p", "beta", "L", "M", "window", "bc", "seed", "sweeps", "burn_in", "conditioned", "dump_every", "delta", "K",
        "H", "out"}},
      {"repulsion",
       "marginal curve and repulsion height H(L)",
       {"p", "beta", "L", "window", "method", "proxy_cap", "bulk_radius", "seed", "sweeps", "burn_in", "out"}},
      {"tension", "surface tension from staircase ratios", {"p", "beta", "L", "theta", "window", "M_list", "out"}},
      {"rate",
       "positivity rate -log P / (8 L H)",
       {"p", "beta", "L", "window", "levels", "seed", "sweeps", "burn_in", "method", "proxy_cap", "bulk_radius",
        "tau_L", "out"}},
      {"contours", "geometric contours of a saved height field", {"load", "h", "out"}},
  };
  std::map<std::string, CLI::App*> apps;
  for (const auto& s : subs) {
    auto* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", config_file, "key=value configuration file; flags win");
    for (const auto& key : s.keys) {
      const auto it = std::find_if(kSettings.begin(), kSettings.end(), [&](const Setting& x) { return x.key == key; });
      sub->add_option(it->flag, values[key], it->help);
    }
    apps[s.name] = sub;
  }
  std::string suite;
  auto* verify = app.add_subcommand("verify", "run a property suite");
  verify->add_option("suite", suite, "fkg | bijection | oracle | monotonicity | all")
      ->required()
      ->check(CLI::IsMember({"fkg", "bijection", "oracle", "monotonicity", "all"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (verify->parsed()) return cmd_verify(suite);
    for (const auto& s : subs) {
      auto* sub = apps[s.name];
      if (!sub->parsed()) continue;
      Config cfg = config_file.empty() ? Config{} : Config::parse_file(config_file);
      for (const auto& key : s.keys) {
        const auto it = std::find_if(kSettings.begin(), kSettings.end(), [&](const Setting& x) { return x.key == key; });
        if (sub->count(it->flag) > 0) cfg.set(key, values[key]);
      }
      for (const auto& [k, v] : cfg.values())
        if (std::find(s.keys.begin(), s.keys.end(), k) == s.keys.end())
          throw UsageError("setting '" + k + "' does not apply to " + s.name);
      g_out_root = cfg.get_or("out", "runs");
      cfg.erase("out");
      cfg.set("command", s.name);
      if (cfg.has("load")) {
        std::ifstream in(cfg.get("load"), std::ios::binary);
        if (!in) throw std::invalid_argument("cannot open height field " + cfg.get("load"));
        std::stringstream text;
        text << in.rdbuf();
        cfg.set("load_sha1", sha1_hex(text.str()));
      }
      if (s.name == "exact") return cmd_exact(cfg);
      if (s.name == "simulate") return cmd_simulate(cfg);
      if (s.name == "repulsion") return cmd_repulsion(cfg);
      if (s.name == "tension") return cmd_tension(cfg);
      if (s.name == "rate") return cmd_rate(cfg);
      if (s.name == "contours") return cmd_contours(cfg);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const CapExceeded& e) {
    std::cerr << "cap exceeded: " << e.what() << '\n';
    return kCap;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  }
  return kUsage;
}
