#include "cli.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <thread>

#include <CLI11.hpp>
#include <Eigen/Core>

#include "pipelines.hpp"
#include "run_config.hpp"
#include "tlsphonon/errors.hpp"

namespace tlsphonon::cli {

using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": malformed JSON: " + e.what());
  }
}

RunConfig load(const std::filesystem::path& path, const std::optional<std::uint64_t>& seed) {
  json doc = read_json(path);
  if (seed && doc.is_object()) doc["seed"] = *seed;
  return parse_run_config(doc, path.parent_path());
}

std::filesystem::path output_dir(const RunConfig& rc, const std::optional<std::string>& flag) {
  if (flag) return *flag;
  if (rc.output_dir) return *rc.output_dir;
  if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
  return "tlsphonon_out";
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  out.close();
  if (!out) throw IoError("write failed for " + path.string());
}

int do_run(const std::filesystem::path& config, const std::optional<std::uint64_t>& seed,
           const std::optional<std::string>& out_flag, int threads, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  const RunConfig rc = load(config, seed);
  const std::string hash = config_hash(rc.resolved);
  const std::vector<Artifact> artifacts = execute(rc, hash, threads);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const std::filesystem::path dir = output_dir(rc, out_flag);
  std::filesystem::create_directories(dir);
  json names = json::array();
  for (const Artifact& a : artifacts) {
    write_file(dir / a.name, a.content);
    names.push_back(a.name);
  }
  const json manifest = {{"tool", "tlsphonon"},
                         {"version", kVersion},
                         {"eigen_version", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                               std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                               std::to_string(EIGEN_MINOR_VERSION)},
                         {"compiler", __VERSION__},
                         {"experiment", experiment_name(rc.experiment)},
                         {"seed", rc.seed},
                         {"threads", threads},
                         {"config_hash", hash},
                         {"config", rc.resolved},
                         {"artifacts", names},
                         {"wall_time_s", wall}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  out << experiment_name(rc.experiment) << ": wrote " << artifacts.size() << " artifacts to " << dir.string()
      << " (config_hash " << hash << ")\n";
  return kExitOk;
}

int do_validate(const std::filesystem::path& config, const std::optional<std::uint64_t>& seed,
                const std::optional<std::string>& check_dir, std::ostream& out) {
  const RunConfig rc = load(config, seed);
  const std::string hash = config_hash(rc.resolved);
  if (!check_dir) {
    out << "OK\n" << "config_hash: " << hash << '\n' << rc.resolved.dump(2) << '\n';
    return kExitOk;
  }
  const std::filesystem::path dir(*check_dir);
  const json manifest = read_json(dir / "manifest.json");
  if (!manifest.contains("artifacts") || !manifest["artifacts"].is_array())
    throw IoError((dir / "manifest.json").string() + ": no artifact list");
  int stale = 0;
  for (const json& a : manifest["artifacts"]) {
    const std::string name = a.get<std::string>();
    std::ifstream in(dir / name);
    if (!in) {
      out << "missing: " << name << '\n';
      ++stale;
      continue;
    }
    const std::string got = embedded_hash(name, in);
    if (got != hash) {
      out << "stale: " << name << " (config_hash " << (got.empty() ? "absent" : got) << ", expected " << hash << ")\n";
      ++stale;
    }
  }
  const std::string mh = manifest.value("config_hash", std::string());
  if (mh != hash) {
    out << "stale: manifest.json (config_hash " << mh << ", expected " << hash << ")\n";
    ++stale;
  }
  if (stale == 0) out << "artifacts current (config_hash " << hash << ")\n";
  return stale == 0 ? kExitOk : kExitOther;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Lindblad simulation and readout analysis of a phonon mode coupled to TLS defects", "tlsphonon"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> check_dir;
  int threads = 1;

  CLI::App* run = app.add_subcommand("run", "run the configured experiment and write artifacts");
  run->add_option("--config", config, "run configuration (JSON)")->required();
  run->add_option("--out-dir", out_dir, "output directory (overrides io.output_dir and $TLSPHONON_OUT_DIR)");
  run->add_option("--seed", seed, "override the configured seed");
  run->add_option("--threads", threads, "worker threads for Monte Carlo resampling")->check(CLI::Range(1, 1024));

  CLI::App* validate = app.add_subcommand("validate", "check a configuration without computing");
  validate->add_option("--config", config, "run configuration (JSON)")->required();
  validate->add_option("--seed", seed, "override the configured seed");
  validate->add_option("--check-artifacts", check_dir, "compare the config hash embedded in a run directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) return do_run(config, seed, out_dir, threads, out);
    return do_validate(config, seed, check_dir, out);
  } catch (const TruncationError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitOther;
  }
}

}  // namespace tlsphonon::cli
