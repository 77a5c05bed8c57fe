#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "wmfg/cli.hpp"

using namespace wmfg;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("wmfg_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string write_config(const fs::path& dir, const json& j) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p.string();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Outcome {
  int code;
  std::string log, err;
};

Outcome run(const std::string& sub, const std::string& config, const fs::path& out, int workers = 1) {
  cli::RunOptions o;
  o.subcommand = sub;
  o.config_path = config;
  o.out_dir = out.string();
  o.workers = workers;
  std::ostringstream log, err;
  const int code = cli::run(o, log, err);
  return {code, log.str(), err.str()};
}

const json small_additive = {{"model", {{"name", "additive"}, {"x0", 0.25}}},
                             {"grid", {{"T", 1.0}, {"n_steps", 25}}},
                             {"monte_carlo", {{"n_paths", 4000}, {"seed", 3}}}};

}  // namespace

TEST_CASE("config defaults and validation") {
  const cli::RunConfig d = cli::parse_config("{}");
  CHECK(d.model == "additive");
  CHECK(d.n_paths == 20000);
  CHECK_FALSE(d.horizon.has_value());

  auto field_of = [](const std::string& text) {
    try {
      cli::parse_config(text);
    } catch (const cli::ConfigError& e) {
      return e.field();
    }
    return std::string("<none>");
  };
  CHECK(field_of(R"({"monte_carlo": {"n_paths": -5}})") == "monte_carlo.n_paths");
  CHECK(field_of(R"({"monte_carlo": {"n_paths": 1.5}})") == "monte_carlo.n_paths");
  CHECK(field_of(R"({"grid": {"T": 0}})") == "grid.T");
  CHECK(field_of(R"({"grid": {"dt": 0.1}})") == "grid.dt");
  CHECK(field_of(R"({"fixedpoint": {"damping": 2}})") == "fixedpoint.damping");
  CHECK(field_of(R"({"model": {"name": "heston"}})") == "model.name");
  CHECK(field_of(R"({"model": {"name": "gbm", "x0": -1}})") == "model.x0");
  CHECK(field_of(R"({"truncation": [4, 2]})") == "truncation[1]");
  CHECK(field_of(R"({"colour": 1})") == "colour");
  CHECK(field_of("{not json") == "<root>");
  CHECK(field_of(R"({"regression": {"degree": 2, "ridge": 0.1}})") == "<none>");
}

TEST_CASE("fnv1a reference values") {
  CHECK(cli::fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(cli::fnv1a("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("malformed config exits 1 naming the field") {
  const fs::path dir = scratch("bad");
  const std::string cfg = write_config(dir, {{"monte_carlo", {{"n_paths", -10}}}});
  const Outcome r = run("simulate", cfg, dir / "out");
  CHECK(r.code == 1);
  CHECK(r.err.find("monte_carlo.n_paths") != std::string::npos);
  CHECK(run("explode", cfg, dir / "out").code == 1);
  CHECK(run("simulate", (dir / "missing.json").string(), dir / "out").code == 1);
}

TEST_CASE("simulate writes artifacts and a manifest") {
  const fs::path dir = scratch("simulate");
  const std::string cfg = write_config(dir, small_additive);
  const Outcome r = run("simulate", cfg, dir / "out");
  CHECK(r.code == 0);
  for (const char* f : {"report.json", "summary.csv", "flows/ensemble.bin", "manifest.json"}) {
    CHECK(fs::exists(dir / "out" / f));
  }
  CHECK_FALSE(fs::exists(dir / "out" / "paths.csv"));
  const json manifest = json::parse(slurp(dir / "out" / "manifest.json"));
  CHECK(manifest["seed"] == 3);
  CHECK(manifest["config_hash"].get<std::string>().size() == 16);
  CHECK(manifest["subcommand"] == "simulate");
  const json report = json::parse(slurp(dir / "out" / "report.json"));
  CHECK(report["martingale_check"] == true);
}

TEST_CASE("solve-mfg on the additive model reproduces the closed form") {
  const fs::path dir = scratch("solve");
  const std::string cfg = write_config(dir, small_additive);
  const Outcome r = run("solve-mfg", cfg, dir / "out", 2);
  CHECK(r.code == 0);
  const json report = json::parse(slurp(dir / "out" / "report.json"));
  CHECK(report["converged"] == true);
  CHECK(report["verification"]["verified"] == true);
  CHECK(std::abs(report["Y0"].get<double>() - 0.75) <= 5.0 / std::sqrt(4000.0));
  CHECK(fs::exists(dir / "out" / "iterations.csv"));
  CHECK(slurp(dir / "out" / "iterations.csv").rfind("k,residual,Y0,bmo_Z,kl_step,clip_rate\n", 0) == 0);
}

TEST_CASE("unconverged runs exit 2") {
  const fs::path dir = scratch("unconverged");
  const std::string cfg = write_config(dir, {{"model", {{"name", "gbm"}}},
                                             {"grid", {{"n_steps", 10}}},
                                             {"monte_carlo", {{"n_paths", 1000}}},
                                             {"fixedpoint", {{"max_iter", 1}}}});
  CHECK(run("solve-mfg", cfg, dir / "out").code == 2);
}

TEST_CASE("reruns are bit-identical across worker counts") {
  const fs::path dir = scratch("determinism");
  const std::string cfg = write_config(dir, {{"model", {{"name", "gbm"}}},
                                             {"grid", {{"n_steps", 10}}},
                                             {"monte_carlo", {{"n_paths", 1500}, {"seed", 9}}}});
  for (const std::string sub : {"solve-bsde", "verify"}) {
    const Outcome a = run(sub, cfg, dir / (sub + "1"), 1);
    const Outcome b = run(sub, cfg, dir / (sub + "3"), 3);
    CHECK(a.code == b.code);
    for (const auto& entry : fs::recursive_directory_iterator(dir / (sub + "1"))) {
      if (!entry.is_regular_file()) continue;
      const fs::path rel = fs::relative(entry.path(), dir / (sub + "1"));
      const std::string ext = rel.extension().string();
      if (ext != ".csv" && ext != ".bin") continue;
      INFO(sub << "/" << rel.string());
      CHECK(slurp(entry.path()) == slurp(dir / (sub + "3") / rel));
    }
  }
}
