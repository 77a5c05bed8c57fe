#include "wmfg/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "wmfg/bsde.hpp"
#include "wmfg/fixedpoint.hpp"
#include "wmfg/girsanov.hpp"
#include "wmfg/measure.hpp"
#include "wmfg/model.hpp"
#include "wmfg/paths.hpp"

namespace wmfg::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::string& where, std::set<std::string> allowed) {
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) {
      throw ConfigError(where.empty() ? key : where + "." + key, "unknown key");
    }
  }
}

const json* section(const json& root, const std::string& name) {
  if (!root.contains(name)) return nullptr;
  const json& s = root.at(name);
  if (!s.is_object()) throw ConfigError(name, "must be an object");
  return &s;
}

double get_number(const json& obj, const std::string& key, const std::string& field, double fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number()) throw ConfigError(field, "must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ConfigError(field, "must be finite");
  return x;
}

long long get_integer(const json& obj, const std::string& key, const std::string& field,
                      long long fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer()) throw ConfigError(field, "must be an integer");
  return v.get<long long>();
}

void require(bool ok, const std::string& field, const std::string& message) {
  if (!ok) throw ConfigError(field, message);
}

json config_to_json(const RunConfig& c) {
  json j;
  j["model"] = {{"name", c.model}, {"x0", c.x0}, {"mean_field", c.mean_field}};
  j["grid"] = {{"n_steps", c.n_steps}};
  if (c.horizon) j["grid"]["T"] = *c.horizon;
  j["monte_carlo"] = {{"n_paths", c.n_paths}, {"seed", c.seed}};
  j["regression"] = {{"degree", c.degree}, {"ridge", c.ridge}};
  j["fixedpoint"] = {{"damping", c.damping}, {"tol", c.tol}, {"max_iter", c.max_iter}};
  j["truncation"] = c.truncation;
  j["output"] = c.output;
  return j;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string error_module(const std::exception& e) {
  if (dynamic_cast<const ModelError*>(&e)) return "model";
  if (dynamic_cast<const SimulationError*>(&e)) return "paths";
  if (dynamic_cast<const MeasureError*>(&e)) return "measure";
  if (dynamic_cast<const OverflowError*>(&e)) return "girsanov";
  if (dynamic_cast<const RegressionError*>(&e)) return "bsde";
  if (dynamic_cast<const BsdeError*>(&e)) return "bsde";
  if (dynamic_cast<const ParameterError*>(&e)) return "parameters";
  return "runtime";
}

// Everything one run needs, built from the configuration.
struct Session {
  RunConfig config;
  ModelSpec model;
  std::shared_ptr<const PathEnsemble> ensemble;
  FixedPointConfig fp;
  fs::path out;
  json manifest_files = json::array();

  std::ofstream open(const std::string& name, bool binary = false) {
    const fs::path p = out / name;
    fs::create_directories(p.parent_path());
    std::ofstream f(p, binary ? std::ios::binary : std::ios::out);
    if (!f) throw Error("cannot open " + p.string() + " for writing");
    manifest_files.push_back(name);
    return f;
  }
  void write_json(const std::string& name, const json& j) { open(name) << j.dump(2) << '\n'; }
};

Session make_session(const RunConfig& config, const RunOptions& options) {
  Session s;
  s.config = config;
  if (options.seed) s.config.seed = *options.seed;
  if (options.out_dir) s.config.output = *options.out_dir;
  s.model = s.config.horizon
                ? builtin_model(s.config.model, s.config.x0, *s.config.horizon, s.config.mean_field)
                : [&] {
                    if (s.config.model == "gbm") {
                      GbmParams p;
                      p.x0 = s.config.x0;
                      return builtin_example_gbm(p);
                    }
                    return builtin_model(s.config.model, s.config.x0, AdditiveParams{}.horizon,
                                         s.config.mean_field);
                  }();
  const TimeGrid grid = TimeGrid::uniform(s.model.horizon, s.config.n_steps);
  s.ensemble = std::make_shared<const PathEnsemble>(simulate_state(
      s.model, simulate_brownian(grid, s.config.n_paths, s.model.dim_state, s.config.seed, options.workers),
      options.workers));
  s.fp.damping = s.config.damping;
  s.fp.tol = s.config.tol;
  s.fp.max_iter = s.config.max_iter;
  s.fp.regression.degree = s.config.degree;
  s.fp.regression.ridge = s.config.ridge;
  s.fp.workers = options.workers;
  s.out = s.config.output;
  fs::create_directories(s.out);
  return s;
}

void write_manifest(Session& s, const std::string& subcommand) {
  const json cfg = config_to_json(s.config);
  const std::string canonical = cfg.dump();
  char hash[20];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a(canonical)));
  json m;
  m["subcommand"] = subcommand;
  m["config"] = cfg;
  m["config_hash"] = hash;
  m["seed"] = s.config.seed;
  m["files"] = s.manifest_files;
  std::ofstream f(s.out / "manifest.json");
  f << m.dump(2) << '\n';
}

json bsde_json(const BsdeSolution& sol) {
  double max_cond = 0.0;
  for (double c : sol.condition_numbers) max_cond = std::max(max_cond, c);
  return {{"Y0", sol.y0()},
          {"clip_rate", sol.clip_rate},
          {"max_condition_number", max_cond},
          {"basis_size", sol.basis_size},
          {"warnings", sol.warnings}};
}

int cmd_simulate(Session& s, std::ostream& log) {
  const auto& ens = *s.ensemble;
  const Index N = ens.n_steps();
  {
    auto f = s.open("flows/ensemble.bin", true);
    write_ensemble_binary(f, ens);
  }
  if (ens.n_paths <= 2000) {
    auto f = s.open("paths.csv");
    write_ensemble_csv(f, ens);
  }
  {
    auto f = s.open("summary.csv");
    write_summary_csv(f, MeasureFlow::reference(s.ensemble));
  }
  const Vector xT = ens.states[static_cast<std::size_t>(N)].col(0);
  const double mean = xT.mean();
  const double se = std::sqrt((xT.array() - mean).square().sum() / (xT.size() - 1.0) / xT.size());
  const bool martingale = std::abs(mean - s.model.x0(0)) <= 5.0 * se;
  s.write_json("report.json", {{"subcommand", "simulate"},
                               {"n_paths", ens.n_paths},
                               {"n_steps", N},
                               {"dim", ens.dim},
                               {"mean_XT", mean},
                               {"se_XT", se},
                               {"martingale_check", martingale},
                               {"near_singular_sigma", ens.near_singular_sigma}});
  log << "simulated " << ens.n_paths << " paths, mean X_T = " << fmt(mean) << " (se " << fmt(se)
      << ")\n";
  return 0;
}

int cmd_solve_bsde(Session& s, std::ostream& log) {
  const FixedPointState start = initial_state(s.ensemble);
  const MapResult out = solution_map(s.model, s.ensemble, start, s.fp);
  const BmoEstimate bmo = bmo_norm_estimate(out.solution.Z, *s.ensemble, nullptr, s.fp.regression);
  const EnergyReport energy = energy_inequality_check(out.solution, s.ensemble->grid, bmo.value);
  {
    auto f = s.open("flows/solution.bin", true);
    write_flow_binary(f, out.state.nu.components.front());
  }
  {
    auto f = s.open("summary.csv");
    write_summary_csv(f, out.state.nu.components.front());
  }
  json rep = bsde_json(out.solution);
  rep["subcommand"] = "solve-bsde";
  rep["bmo"] = out.diagnostics.bmo;
  rep["bmo_reference"] = bmo.value;
  rep["reverse_holder"] = out.diagnostics.reverse_holder;
  rep["kl"] = out.diagnostics.kl_step;
  rep["tv_bound"] = std::clamp(std::sqrt(out.diagnostics.kl_step / 2.0), 0.0, 1.0);
  json rows = json::array();
  for (const auto& r : energy.rows) rows.push_back({{"n", r.n}, {"lhs", r.lhs}, {"rhs", r.rhs}, {"holds", r.holds}});
  rep["energy_inequality"] = rows;
  s.write_json("report.json", rep);
  log << "Y0 = " << fmt(out.solution.y0()) << ", clip rate " << fmt(out.solution.clip_rate) << '\n';
  return energy.holds ? 0 : 2;
}

struct Solved {
  FixedPointState state;
  FixedPointReport report;
  std::optional<TruncationResult> truncation;
  bool converged = false;
};

Solved solve(Session& s, std::ostream& log) {
  Solved out;
  if (!s.config.truncation.empty()) {
    TruncationResult tr = truncated_solve(s.model, s.ensemble, s.config.truncation, s.fp);
    out.state = tr.state;
    out.report = tr.last_report;
    out.converged = tr.converged;
    for (const auto& row : tr.rows) {
      log << "cut-off " << fmt(row.level) << ": " << to_string(row.status) << " after "
          << row.iterations << " iterations, Y0 = " << fmt(row.y0) << ", active "
          << fmt(row.active_fraction) << '\n';
    }
    out.truncation = std::move(tr);
  } else {
    IterationResult it = iterate(s.model, s.ensemble, s.fp);
    out.state = std::move(it.state);
    out.report = std::move(it.report);
    out.converged = out.report.status == FixedPointStatus::converged;
  }
  log << "fixed point: " << to_string(out.report.status) << " after " << out.report.rows.size()
      << " iterations, residual " << fmt(out.report.rows.back().residual) << '\n';
  return out;
}

int cmd_solve_mfg(Session& s, std::ostream& log, bool verify_only) {
  const Solved solved = solve(s, log);
  const FixedPointState& st = solved.state;
  const bool collapsed = st.nu.size() == 1;

  {
    auto f = s.open("iterations.csv");
    f << "k,residual,Y0,bmo_Z,kl_step,clip_rate\n";
    for (const auto& r : solved.report.rows) {
      f << r.k << ',' << fmt(r.residual) << ',' << fmt(r.y0) << ',' << fmt(r.bmo) << ','
        << fmt(r.kl_step) << ',' << fmt(r.clip_rate) << '\n';
    }
  }
  if (solved.truncation) {
    auto f = s.open("truncation.csv");
    f << "level,status,iterations,Y0,distance_to_previous,active_fraction\n";
    for (const auto& r : solved.truncation->rows) {
      f << fmt(r.level) << ',' << to_string(r.status) << ',' << r.iterations << ',' << fmt(r.y0)
        << ',' << fmt(r.distance_to_previous) << ',' << fmt(r.active_fraction) << '\n';
    }
  }
  {
    auto f = s.open("flows/mu.bin", true);
    write_flow_binary(f, st.mu);
  }
  for (Index k = 0; k < st.nu.size(); ++k) {
    auto f = s.open("flows/nu_" + std::to_string(k) + ".bin", true);
    write_flow_binary(f, st.nu.components[static_cast<std::size_t>(k)]);
  }

  const IterationRow& last = solved.report.rows.back();
  json rep;
  rep["subcommand"] = verify_only ? "verify" : "solve-mfg";
  rep["model"] = s.model.name;
  rep["status"] = to_string(solved.report.status);
  rep["converged"] = solved.converged;
  rep["iterations"] = solved.report.rows.size();
  rep["final_residual"] = solved.report.final_residual;
  rep["Y0"] = st.y0;
  rep["bmo"] = last.bmo;
  rep["kl"] = last.kl_step;
  rep["tv_bound"] = std::clamp(std::sqrt(last.kl_step / 2.0), 0.0, 1.0);
  rep["clip_rate"] = last.clip_rate;
  rep["reverse_holder"] =
      reverse_holder_diagnostic(st.weights, *s.ensemble, s.fp.rh_exponent, s.fp.regression).value;

  bool verified = false;
  if (collapsed) {
    const std::vector<Matrix> alpha = candidate_control(s.model, st.mu, state_z(st), s.fp.workers);
    std::vector<Matrix> values(alpha.begin(), alpha.end());
    values.push_back(alpha.back());
    {
      auto f = s.open("summary.csv");
      write_summary_csv(f, MeasureFlow(s.ensemble, std::move(values), st.mu.weight_table()));
    }
    const EquilibriumReport v = verify_equilibrium(s.model, s.ensemble, st,
                                                   default_perturbations(s.model.dim_action, s.model.horizon), s.fp);
    json pert = json::array();
    for (const auto& p : v.perturbations) {
      pert.push_back({{"name", p.name}, {"payoff", p.payoff}, {"gain", p.gain},
                      {"std_error", p.std_error}, {"passed", p.passed}});
    }
    rep["verification"] = {{"Y0", v.y0},
                           {"payoff", v.payoff},
                           {"payoff_se", v.payoff_se},
                           {"payoff_identity", v.payoff_identity},
                           {"no_profitable_deviation", v.no_profitable_deviation},
                           {"residual", v.residual},
                           {"residual_ok", v.residual_ok},
                           {"verified", v.verified},
                           {"perturbations", pert}};
    if (verify_only) {
      auto f = s.open("perturbations.csv");
      f << "name,payoff,gain,std_error,passed\n";
      for (const auto& p : v.perturbations) {
        f << p.name << ',' << fmt(p.payoff) << ',' << fmt(p.gain) << ',' << fmt(p.std_error) << ','
          << (p.passed ? 1 : 0) << '\n';
      }
    }
    verified = v.verified;
    log << "verification: " << (v.verified ? "verified" : "NOT verified") << " (Y0 " << fmt(v.y0)
        << ", J " << fmt(v.payoff) << " +- " << fmt(v.payoff_se) << ")\n";
  }
  if (solved.truncation) {
    json rows = json::array();
    for (const auto& r : solved.truncation->rows) {
      rows.push_back({{"level", r.level}, {"status", to_string(r.status)}, {"iterations", r.iterations},
                      {"Y0", r.y0},
                      {"distance_to_previous", std::isnan(r.distance_to_previous) ? json(nullptr)
                                                                                  : json(r.distance_to_previous)},
                      {"active_fraction", r.active_fraction}});
    }
    rep["truncation"] = rows;
  }
  s.write_json("report.json", rep);
  return solved.converged && verified ? 0 : 2;
}

bool monotone(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > 1.1 * v[i - 1] + 1e-12) return false;
  }
  return true;
}

int cmd_stability(Session& s, std::ostream& log) {
  const FixedPointState start = initial_state(s.ensemble);
  const std::optional<double> clip;
  const DriverSpec base = lifted_driver(s.model, start.mu, start.nu, std::nullopt, clip);
  const std::vector<int> ns = {1, 2, 4, 8};

  std::vector<DriverSpec> terminal;
  for (int n : ns) {
    DriverSpec d = base;
    d.terminal = [t = base.terminal, n](const PathView& x) { return t(x) + 1.0 / n; };
    terminal.push_back(d);
  }
  terminal.push_back(base);

  std::vector<double> levels = s.config.truncation.empty() ? std::vector<double>{0.5, 1, 2, 4}
                                                           : s.config.truncation;
  std::vector<DriverSpec> truncated;
  for (double level : levels) truncated.push_back(lifted_driver(s.model, start.mu, start.nu, level, clip));
  truncated.push_back(base);

  auto f = s.open("stability.csv");
  f << "family,n,z_gap,kl,tv_bound,flow_distance,y0_gap\n";
  json rep;
  rep["subcommand"] = "stability";
  bool ok = true;
  for (const auto& [family, specs] :
       {std::pair{std::string("terminal"), &terminal}, std::pair{std::string("truncation"), &truncated}}) {
    const auto rows = stability_run(*specs, s.ensemble, s.fp.regression, s.fp.workers);
    std::vector<double> z, tv;
    json jrows = json::array();
    for (std::size_t k = 0; k + 1 < rows.size(); ++k) {
      const auto& r = rows[k];
      const double label = family == "terminal" ? ns[k] : levels[k];
      f << family << ',' << fmt(label) << ',' << fmt(r.z_gap) << ',' << fmt(r.kl) << ','
        << fmt(r.tv_bound) << ',' << fmt(r.flow_distance) << ',' << fmt(r.y0_gap) << '\n';
      z.push_back(r.z_gap);
      tv.push_back(r.tv_bound);
      jrows.push_back({{"n", label}, {"z_gap", r.z_gap}, {"kl", r.kl}, {"tv_bound", r.tv_bound},
                       {"flow_distance", r.flow_distance}, {"y0_gap", r.y0_gap}});
    }
    const bool mono = monotone(z) && monotone(tv);
    ok = ok && mono;
    rep[family] = {{"rows", jrows}, {"monotone", mono}};
    log << family << ": " << (mono ? "monotone" : "NOT monotone") << '\n';
  }
  rep["kl"] = rep["truncation"]["rows"][0]["kl"];
  rep["tv_bound"] = rep["truncation"]["rows"][0]["tv_bound"];
  s.write_json("report.json", rep);
  return ok ? 0 : 2;
}

int cmd_diagnostics(Session& s, std::ostream& log) {
  const auto& ens = *s.ensemble;
  const Index N = ens.n_steps();
  const FixedPointState start = initial_state(s.ensemble);
  const MapResult out = solution_map(s.model, s.ensemble, start, s.fp);

  std::vector<MaximizerSample> samples;
  for (Index n : {Index{0}, N / 2, N - 1}) {
    MeasureSummary law = marginal(start.mu, n);
    law.action_mean = SmallVector::Zero(s.model.dim_action);
    for (Index i = 0; i < std::min<Index>(ens.n_paths, 50); ++i) {
      for (double z : {-2.0, 0.0, 1.5}) {
        samples.push_back({ens.grid.time(n), ens.view(i, n), SmallVector::Constant(s.model.dim_state, z), law});
      }
    }
  }
  const MaximizerReport maxrep = check_maximizer(s.model, samples);
  std::vector<SmallVector> actions;
  for (double a : {-3.0, -1.0, 1.0, 3.0}) actions.push_back(SmallVector::Constant(s.model.dim_action, a));
  const GrowthReport growth = check_growth(s.model, samples, actions);

  json rep;
  rep["subcommand"] = "diagnostics";
  rep["Y0"] = out.diagnostics.y0;
  rep["bmo"] = out.diagnostics.bmo;
  rep["reverse_holder"] = out.diagnostics.reverse_holder;
  rep["kl"] = out.diagnostics.kl_step;
  rep["tv_bound"] = std::clamp(std::sqrt(out.diagnostics.kl_step / 2.0), 0.0, 1.0);
  rep["clip_rate"] = out.diagnostics.clip_rate;
  rep["maximizer"] = {{"valid", maxrep.valid}, {"worst_violation", maxrep.worst_violation}};
  rep["growth"] = {{"holds", growth.holds()},
                   {"drift_excess", growth.drift_excess},
                   {"cost_excess", growth.cost_excess},
                   {"maximizer_excess", growth.maximizer_excess}};
  bool tight_ok = true;
  try {
    const AprioriBounds b = apriori_bounds(s.model.constants, s.model.horizon, s.model.x0.norm());
    const MeasureFlow flows[] = {out.state.mu, out.state.nu.components.front()};
    const TightnessReport t =
        tightness_report(flows, 1.0, 1.0, 1.1 * out.diagnostics.reverse_holder, b.Lz_bar * b.Lz_bar);
    rep["apriori"] = {{"Lx_bar", b.Lx_bar}, {"Ly_bar", b.Ly_bar}, {"Lz_bar", b.Lz_bar}};
    rep["tightness"] = {{"density_moment", t.density_moment}, {"value_moment", t.value_moment},
                        {"density_bound", t.density_bound}, {"value_bound", t.value_bound},
                        {"passed", t.passed}};
    tight_ok = t.passed;
  } catch (const ParameterError& e) {
    rep["apriori"] = {{"unavailable", e.what()}};
  }
  s.write_json("report.json", rep);
  log << "maximizer " << (maxrep.valid ? "valid" : "INVALID") << ", tightness "
      << (tight_ok ? "passed" : "FAILED") << '\n';
  return maxrep.valid && tight_ok ? 0 : 2;
}

}  // namespace

RunConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("<root>", "must be an object");
  reject_unknown(root, "", {"model", "grid", "monte_carlo", "regression", "fixedpoint", "truncation", "output"});
  RunConfig c;

  if (const json* m = section(root, "model")) {
    reject_unknown(*m, "model", {"name", "x0", "mean_field"});
    if (m->contains("name")) {
      require(m->at("name").is_string(), "model.name", "must be a string");
      c.model = m->at("name").get<std::string>();
    }
    require(c.model == "gbm" || c.model == "additive", "model.name", "must be \"gbm\" or \"additive\"");
    c.x0 = get_number(*m, "x0", "model.x0", c.x0);
    if (c.model == "gbm") require(c.x0 > 0, "model.x0", "must be positive for the gbm model");
    if (m->contains("mean_field")) {
      require(m->at("mean_field").is_boolean(), "model.mean_field", "must be a boolean");
      c.mean_field = m->at("mean_field").get<bool>();
    }
  }
  if (const json* g = section(root, "grid")) {
    reject_unknown(*g, "grid", {"T", "n_steps"});
    if (g->contains("T")) {
      c.horizon = get_number(*g, "T", "grid.T", 1.0);
      require(*c.horizon > 0, "grid.T", "must be positive");
    }
    c.n_steps = get_integer(*g, "n_steps", "grid.n_steps", c.n_steps);
    require(c.n_steps >= 1 && c.n_steps <= 100000, "grid.n_steps", "must lie in [1, 100000]");
  }
  if (const json* mc = section(root, "monte_carlo")) {
    reject_unknown(*mc, "monte_carlo", {"n_paths", "seed"});
    c.n_paths = get_integer(*mc, "n_paths", "monte_carlo.n_paths", c.n_paths);
    require(c.n_paths > 0, "monte_carlo.n_paths", "must be positive");
    require(c.n_paths >= 16, "monte_carlo.n_paths", "must be at least 16 for the regressions");
    if (mc->contains("seed")) {
      const json& v = mc->at("seed");
      require(v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0),
              "monte_carlo.seed", "must be a nonnegative integer");
      c.seed = v.get<std::uint64_t>();
    }
  }
  if (const json* r = section(root, "regression")) {
    reject_unknown(*r, "regression", {"degree", "ridge"});
    c.degree = static_cast<int>(get_integer(*r, "degree", "regression.degree", c.degree));
    require(c.degree >= 0 && c.degree <= 6, "regression.degree", "must lie in [0, 6]");
    c.ridge = get_number(*r, "ridge", "regression.ridge", c.ridge);
    require(c.ridge >= 0, "regression.ridge", "must be nonnegative");
  }
  if (const json* f = section(root, "fixedpoint")) {
    reject_unknown(*f, "fixedpoint", {"damping", "tol", "max_iter"});
    c.damping = get_number(*f, "damping", "fixedpoint.damping", c.damping);
    require(c.damping > 0 && c.damping <= 1, "fixedpoint.damping", "must lie in (0, 1]");
    c.tol = get_number(*f, "tol", "fixedpoint.tol", c.tol);
    require(c.tol >= 0, "fixedpoint.tol", "must be nonnegative");
    c.max_iter = static_cast<int>(get_integer(*f, "max_iter", "fixedpoint.max_iter", c.max_iter));
    require(c.max_iter >= 1, "fixedpoint.max_iter", "must be at least 1");
  }
  if (root.contains("truncation")) {
    const json& t = root.at("truncation");
    require(t.is_array(), "truncation", "must be an array of cut-off levels");
    for (std::size_t i = 0; i < t.size(); ++i) {
      const std::string field = "truncation[" + std::to_string(i) + "]";
      require(t[i].is_number(), field, "must be a number");
      const double level = t[i].get<double>();
      require(level > 0, field, "must be positive");
      require(c.truncation.empty() || level > c.truncation.back(), field, "levels must increase");
      c.truncation.push_back(level);
    }
  }
  if (root.contains("output")) {
    require(root.at("output").is_string(), "output", "must be a string");
    c.output = root.at("output").get<std::string>();
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot read " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names = {"simulate",  "solve-bsde", "solve-mfg",
                                                 "verify",    "stability",  "diagnostics"};
  return names;
}

int run(const RunOptions& options, std::ostream& log, std::ostream& err) {
  std::optional<fs::path> out_dir;
  try {
    const auto& names = subcommands();
    if (std::find(names.begin(), names.end(), options.subcommand) == names.end()) {
      throw ConfigError("<subcommand>", "unknown subcommand '" + options.subcommand + "'");
    }
    if (options.workers < 1) throw ConfigError("--workers", "must be at least 1");
    const RunConfig config = options.config_path ? load_config(*options.config_path) : RunConfig{};
    Session s = make_session(config, options);
    out_dir = s.out;
    const auto t0 = std::chrono::steady_clock::now();
    int code = 0;
    if (options.subcommand == "simulate") code = cmd_simulate(s, log);
    else if (options.subcommand == "solve-bsde") code = cmd_solve_bsde(s, log);
    else if (options.subcommand == "solve-mfg") code = cmd_solve_mfg(s, log, false);
    else if (options.subcommand == "verify") code = cmd_solve_mfg(s, log, true);
    else if (options.subcommand == "stability") code = cmd_stability(s, log);
    else code = cmd_diagnostics(s, log);
    write_manifest(s, options.subcommand);
    log << options.subcommand << " finished in "
        << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s, exit "
        << code << '\n';
    return code;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    const std::string module = error_module(e);
    err << "error [" << module << "]: " << e.what() << '\n';
    if (out_dir) {
      std::ofstream f(*out_dir / "error.json");
      f << json{{"module", module}, {"message", e.what()}}.dump(2) << '\n';
    }
    return 1;
  }
}

}  // namespace wmfg::cli
