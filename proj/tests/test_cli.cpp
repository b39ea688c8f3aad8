#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cli.hpp"
#include "run_config.hpp"
#include "tlsphonon/errors.hpp"
#include "tlsphonon/numfmt.hpp"
#include "tlsphonon/readout.hpp"

using namespace tlsphonon;
using namespace tlsphonon::cli;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("tlsphonon_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write(const fs::path& path, const std::string& text) {
  std::ofstream(path) << text;
  return path;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Outcome {
  int code;
  std::string out, err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "tlsphonon");
  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("frequencies in Hz are converted to angular units at load") {
  const RunConfig rc = parse_run_config(json::parse(R"({
    "experiment": "ringdown",
    "system": {"preset": "weak-coupling", "g_tls_hz": 40000.0},
    "sweep": {"nbar0": [4.0], "tau_s": {"start": 0.0, "stop": 1e-5, "count": 11}},
    "fit": {"kappa1_fixed_hz": 50000.0}
  })"));
  CHECK(rc.system.g_tls == doctest::Approx(kTwoPi * 40e3));
  CHECK(rc.system.delta_tls == doctest::Approx(kTwoPi * 100e3));
  CHECK(rc.system.gamma2 == doctest::Approx(kTwoPi * 660e3));
  CHECK(rc.system.n_max == 18);  // required_n_max(2)
  CHECK(*rc.kappa1_fixed == doctest::Approx(kTwoPi * 50e3));
  REQUIRE(rc.sweep.taus.size() == 11);
  CHECK(rc.sweep.taus.back() == doctest::Approx(1e-5));
  CHECK(rc.sweep.alphas[0] == doctest::Approx(2.0));
  CHECK(rc.resolved["system"]["g_tls_hz"] == 40000.0);
  CHECK(rc.resolved["system"]["n_max"] == 18);
  CHECK(rc.resolved["tolerances"]["rtol"] == 1e-8);
}

TEST_CASE("schema violations are rejected before any computation") {
  auto parse = [](const char* text) { return parse_run_config(json::parse(text)); };
  CHECK_THROWS_AS(parse(R"({"sweep": {}})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"experiment": "nope"})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"experiment": "bvd-sweep", "extra": 1})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"experiment": "bvd-sweep", "bvd": {"c0": 1}})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"experiment": "bvd-sweep", "system": {}})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"experiment": "ringdown", "sweep": {"alpha": [1.0]}})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"experiment": "ringdown", "sweep": {"alpha": [1.0], "nbar0": [1.0], "tau_s": [0]}})"),
                  ConfigError);
  CHECK_THROWS_AS(parse(R"({"experiment": "ringdown", "sweep": {"alpha": [1.0], "tau_s": [-1e-6]}})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"experiment": "ringdown", "sweep": {"alpha": [1.0], "tau_s": [0], "phi_count": 8}})"),
                  ConfigError);
  CHECK_THROWS_AS(parse(R"({"experiment": "ringdown", "system": {"n_th": -1},
                            "sweep": {"alpha": [1.0], "tau_s": [0]}})"),
                  ConfigError);
  CHECK_THROWS_AS(parse(R"({"experiment": "mc-report", "mc": {"probs": [0.5, 0.5]}})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"experiment": "bvd-sweep", "seed": -3})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"experiment": "ramsey-fit", "ramsey": {"n_max": 3}})"), ConfigError);
  CHECK_THROWS_AS(parse(R"([1, 2])"), ConfigError);

  try {
    parse(R"({"experiment": "ringdown", "system": {"n_max": 8}, "sweep": {"alpha": [2.0], "tau_s": [0]}})");
    FAIL("expected a truncation error");
  } catch (const TruncationError& e) {
    CHECK(e.required_n_max() == 18);
  }
  CHECK_THROWS_AS(parse(R"({"experiment": "ringdown", "system": {"n_tls": 9, "n_max": 18},
                            "sweep": {"alpha": [2.0], "tau_s": [0]}})"),
                  DimensionError);
}

TEST_CASE("validate reports resolved defaults, the violated rule and the dimension guard") {
  const fs::path dir = scratch("validate");
  const Outcome ok = invoke({"validate", "--config", write(dir / "ok.json", R"({"experiment": "bvd-sweep"})").string()});
  CHECK(ok.code == kExitOk);
  CHECK(ok.out.rfind("OK\n", 0) == 0);
  CHECK(ok.out.find("\"lm_h\": 9.09e-05") != std::string::npos);

  const Outcome trunc = invoke({"validate", "--config",
                             write(dir / "t.json", R"({"experiment": "ringdown", "system": {"n_max": 8},
                                   "sweep": {"alpha": [2.0], "tau_s": [0]}})")
                                 .string()});
  CHECK(trunc.code == kExitConfig);
  CHECK(trunc.err.find("truncation-safety rule") != std::string::npos);
  CHECK(trunc.err.find("minimum n_max = 18") != std::string::npos);

  const Outcome dim = invoke({"validate", "--config",
                           write(dir / "d.json", R"({"experiment": "ringdown", "system": {"n_tls": 9},
                                 "sweep": {"alpha": [2.0], "tau_s": [0]}})")
                               .string()});
  CHECK(dim.code == kExitConfig);
  CHECK(dim.err.find("dense-storage limit of 2048") != std::string::npos);

  CHECK(invoke({"validate", "--config", (dir / "missing.json").string()}).code == kExitIo);
  CHECK(invoke({"validate"}).code == kExitConfig);
  CHECK(invoke({"frobnicate"}).code == kExitConfig);
}

TEST_CASE("malformed config exits 2 without creating artifacts") {
  const fs::path dir = scratch("malformed");
  const fs::path cfg = write(dir / "bad.json", R"({"experiment": "bvd-sweep", )");
  const Outcome o = invoke({"run", "--config", cfg.string(), "--out-dir", (dir / "out").string()});
  CHECK(o.code == kExitConfig);
  CHECK_FALSE(fs::exists(dir / "out"));
  const fs::path unknown = write(dir / "unknown.json", R"({"experiment": "bvd-sweep", "bvd": {"count": 0}})");
  CHECK(invoke({"run", "--config", unknown.string(), "--out-dir", (dir / "out").string()}).code == kExitConfig);
  CHECK_FALSE(fs::exists(dir / "out"));
}

TEST_CASE("bvd-sweep run: artifacts, manifest, reproducibility and stale detection") {
  const fs::path dir = scratch("bvd");
  const fs::path cfg = write(dir / "cfg.json", R"({"experiment": "bvd-sweep", "seed": 5, "bvd": {"count": 11}})");
  REQUIRE(invoke({"run", "--config", cfg.string(), "--out-dir", (dir / "a").string()}).code == kExitOk);
  REQUIRE(invoke({"run", "--config", cfg.string(), "--out-dir", (dir / "b").string()}).code == kExitOk);
  CHECK(slurp(dir / "a" / "bvd_sweep.csv") == slurp(dir / "b" / "bvd_sweep.csv"));
  CHECK(slurp(dir / "a" / "bvd.json") == slurp(dir / "b" / "bvd.json"));

  const json manifest = json::parse(slurp(dir / "a" / "manifest.json"));
  const std::string hash = manifest["config_hash"];
  CHECK(hash.size() == 16);
  CHECK(manifest["seed"] == 5);
  CHECK(manifest["config"]["bvd"]["count"] == 11);
  CHECK(manifest.contains("wall_time_s"));
  CHECK(manifest["artifacts"].size() == 2);

  const std::string csv = slurp(dir / "a" / "bvd_sweep.csv");
  CHECK(csv.rfind("# config_hash=" + hash + "\nfreq_hz,re_Y,im_Y\n", 0) == 0);
  const json result = json::parse(slurp(dir / "a" / "bvd.json"));
  CHECK(result["config_hash"] == hash);
  CHECK(result["series_resonance_hz"].get<double>() == doctest::Approx(2.33e9).epsilon(0.01));

  CHECK(invoke({"validate", "--config", cfg.string(), "--check-artifacts", (dir / "a").string()}).code == kExitOk);
  const Outcome stale =
      invoke({"validate", "--config", cfg.string(), "--seed", "6", "--check-artifacts", (dir / "a").string()});
  CHECK(stale.code == kExitOther);
  CHECK(stale.out.find("stale: bvd_sweep.csv") != std::string::npos);
  fs::remove(dir / "a" / "bvd.json");
  CHECK(invoke({"validate", "--config", cfg.string(), "--check-artifacts", (dir / "a").string()}).out.find(
            "missing: bvd.json") != std::string::npos);
}

TEST_CASE("output directory falls back to the environment variable") {
  const fs::path dir = scratch("env");
  const fs::path cfg = write(dir / "cfg.json", R"({"experiment": "bvd-sweep", "bvd": {"count": 3}})");
  ::setenv(kOutDirEnv, (dir / "from_env").string().c_str(), 1);
  const Outcome o = invoke({"run", "--config", cfg.string()});
  ::unsetenv(kOutDirEnv);
  CHECK(o.code == kExitOk);
  CHECK(fs::exists(dir / "from_env" / "bvd_sweep.csv"));
}

TEST_CASE("mc-report is seed-deterministic and independent of the thread count") {
  const fs::path dir = scratch("mc");
  const fs::path cfg = write(dir / "cfg.json", R"({"experiment": "mc-report", "seed": 9,
      "mc": {"source": "pn", "probs": [0.5, 0.5], "sigmas": [0.05, 0.05], "iterations": 500}})");
  REQUIRE(invoke({"run", "--config", cfg.string(), "--out-dir", (dir / "a").string()}).code == kExitOk);
  REQUIRE(invoke({"run", "--config", cfg.string(), "--out-dir", (dir / "b").string(), "--threads", "3"}).code ==
          kExitOk);
  CHECK(slurp(dir / "a" / "mc_report.json") == slurp(dir / "b" / "mc_report.json"));
  REQUIRE(invoke({"run", "--config", cfg.string(), "--out-dir", (dir / "c").string(), "--seed", "10"}).code == kExitOk);
  CHECK(slurp(dir / "a" / "mc_report.json") != slurp(dir / "c" / "mc_report.json"));
  const json r = json::parse(slurp(dir / "a" / "mc_report.json"));
  CHECK(r["reports"][0]["quantity"] == "nbar");
  CHECK(r["reports"][0]["std_dev"].get<double>() == doctest::Approx(0.0354).epsilon(0.1));
}

TEST_CASE("mc-report over a fit: growing envelope is a numerical failure") {
  const fs::path dir = scratch("mc_fit");
  std::string rows = "tau_s,value,sigma\n";
  for (int i = 0; i < 10; ++i)
    rows += format_double(1e-6 * i) + "," + format_double(std::exp(0.3 * i)) + ",0.01\n";
  write(dir / "env.csv", rows);
  const fs::path cfg = write(dir / "cfg.json", R"({"experiment": "mc-report",
      "mc": {"source": "t2m", "iterations": 20}, "io": {"input": "env.csv"}})");
  CHECK(invoke({"run", "--config", cfg.string(), "--out-dir", (dir / "out").string()}).code == kExitNumerical);
  CHECK_FALSE(fs::exists(dir / "out"));

  rows = "tau_s,value,sigma\n";
  for (int i = 0; i < 10; ++i)
    rows += format_double(1e-6 * i) + "," + format_double(2.0 * std::exp(-0.4 * i)) + ",0.02\n";
  write(dir / "env.csv", rows);
  REQUIRE(invoke({"run", "--config", cfg.string(), "--out-dir", (dir / "out").string()}).code == kExitOk);
  const json r = json::parse(slurp(dir / "out" / "mc_report.json"));
  REQUIRE(r["reports"].size() == 3);
  CHECK(r["reports"][2]["quantity"] == "T2m");
  CHECK(r["reports"][2]["point_estimate"].get<double>() == doctest::Approx(2.5e-6).epsilon(1e-3));

  write(dir / "broken.csv", "tau_s,value,sigma\n0,1,x\n");
  const fs::path bad = write(dir / "bad.json", R"({"experiment": "mc-report",
      "mc": {"source": "t2m", "iterations": 20}, "io": {"input": "broken.csv"}})");
  CHECK(invoke({"run", "--config", bad.string(), "--out-dir", (dir / "x").string()}).code == kExitIo);
  const fs::path missing = write(dir / "missing.json", R"({"experiment": "mc-report",
      "mc": {"source": "t2m"}, "io": {"input": "nowhere.csv"}})");
  CHECK(invoke({"validate", "--config", missing.string()}).code == kExitIo);
}

TEST_CASE("ramsey-fit recovers a synthetic distribution from a CSV signal") {
  const fs::path dir = scratch("ramsey");
  const PhononDistribution truth{{0.5, 0.3, 0.15, 0.05}, {}};
  std::vector<double> times;
  for (int i = 0; i < 281; ++i) times.push_back(2.5e-9 * i);
  const std::vector<double> phases{0.1, -0.2, 0.3, 0.0};
  const RamseySignal s = synthesize_ramsey(truth, kTwoPi * 20e6, -kTwoPi * 0.74e6, 1.0 / 1.4e-6, phases, times);
  std::string rows = "time_s,signal\n";
  for (std::size_t i = 0; i < times.size(); ++i) rows += format_double(times[i]) + "," + format_double(s.values[i]) + "\n";
  write(dir / "signal.csv", rows);
  const fs::path cfg = write(dir / "cfg.json", R"({"experiment": "ramsey-fit", "ramsey": {"n_max": 3},
      "mc": {"iterations": 50}, "io": {"input": "signal.csv", "output_dir": "out"}})");
  const Outcome o = invoke({"run", "--config", cfg.string()});
  INFO(o.err);
  REQUIRE(o.code == kExitOk);
  const json r = json::parse(slurp(dir / "out" / "ramsey_fit.json"));
  for (std::size_t n = 0; n < truth.size(); ++n)
    CHECK(r["pn"]["probs"][n].get<double>() == doctest::Approx(truth.probs[n]).epsilon(1e-6));
  CHECK(r["chi_hz"].get<double>() == doctest::Approx(-0.74e6).epsilon(1e-6));
  CHECK(r["nbar_monte_carlo"]["n_iterations"] == 50);
  CHECK(slurp(dir / "out" / "pn.csv").find("n,p,sigma\n0,") != std::string::npos);
}

TEST_CASE("ringdown and interferometry pipelines on small systems") {
  const fs::path dir = scratch("sim");
  const fs::path ring = write(dir / "ring.json", R"({"experiment": "ringdown",
      "system": {"preset": "weak-coupling", "n_tls": 2},
      "sweep": {"nbar0": [1.0, 2.0], "tau_s": {"start": 0, "stop": 5e-5, "count": 26}},
      "fit": {"kappa1_fixed_hz": 50000}})");
  const Outcome o = invoke({"run", "--config", ring.string(), "--out-dir", (dir / "ring").string()});
  INFO(o.err);
  REQUIRE(o.code == kExitOk);
  CHECK(fs::exists(dir / "ring" / "ringdown_0.csv"));
  CHECK(fs::exists(dir / "ring" / "ringdown_1.csv"));
  std::ifstream csv(dir / "ring" / "ringdown_0.csv");
  std::string hash_line, header;
  std::getline(csv, hash_line);
  std::getline(csv, header);
  CHECK(hash_line.rfind("# config_hash=", 0) == 0);
  CHECK(header.rfind("tau_s,nbar,p0,", 0) == 0);
  const json fits = json::parse(slurp(dir / "ring" / "double_exp_fit.json"));
  REQUIRE(fits["runs"].size() == 2);
  CHECK(fits["runs"][0]["kappa1_fixed"] == true);
  CHECK(fits["runs"][1]["nbar_initial"].get<double>() == doctest::Approx(2.05).epsilon(1e-3));

  const fs::path fr = write(dir / "fr.json", R"({"experiment": "interferometry",
      "system": {"preset": "strong-coupling", "n_tls": 1},
      "sweep": {"alpha": [0.8], "tau_s": [0, 1e-6, 2e-6, 3e-6], "phi_count": 8}})");
  const Outcome f = invoke({"run", "--config", fr.string(), "--out-dir", (dir / "fr").string()});
  INFO(f.err);
  REQUIRE(f.code == kExitOk);
  CHECK(slurp(dir / "fr" / "interferometry.csv").find("tau_s,phi_rad,nbar\n") != std::string::npos);
  const json t2m = json::parse(slurp(dir / "fr" / "t2m_fit.json"));
  CHECK(t2m["runs"][0]["fringe_amplitudes"].size() == 4);
  CHECK(t2m["runs"][0]["t2m_s"].get<double>() > 0.0);
}

TEST_CASE("tls-params with the uniform field reproduces the closed forms") {
  const fs::path dir = scratch("tls");
  const fs::path cfg = write(dir / "cfg.json", R"({"experiment": "tls-params", "seed": 2,
      "tls": {"mode_field": {"uniform": {"volume_m3": 2e-19, "u_m": 1e-12, "cells": 4,
                                         "strain": [1e-6, 0, 0, 0, 0, 0]}},
              "samples": 1000}})");
  REQUIRE(invoke({"run", "--config", cfg.string(), "--out-dir", (dir / "out").string()}).code == kExitOk);
  const json r = json::parse(slurp(dir / "out" / "tls_params.json"));
  CHECK(r["effective_mass_kg"].get<double>() == doctest::Approx(4700.0 * 2e-19));
  CHECK(r["gamma_dipole_J"].get<double>() == doctest::Approx(3.7e-20).epsilon(0.01));
  CHECK(r["n_tls_estimate"].get<double>() == doctest::Approx(0.9).epsilon(0.03));
  CHECK(r["sampled"]["samples"] == 1000);
}

}
