// run_config.hpp — JSON run configuration for the tlsphonon command-line tool.
//
// Frequencies in the file carry an `_hz` suffix and are ordinary frequencies; they
// are converted to angular units once, here. Unknown keys are rejected.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tlsphonon/experiments.hpp"
#include "tlsphonon/least_squares.hpp"
#include "tlsphonon/lindblad.hpp"
#include "tlsphonon/montecarlo.hpp"
#include "tlsphonon/readout.hpp"
#include "tlsphonon/tlsparams.hpp"

namespace tlsphonon::cli {

enum class Experiment { kRingdown, kInterferometry, kRamseyFit, kTlsParams, kMcReport, kBvdSweep };

const char* experiment_name(Experiment e);

struct MechanicsSweep {
  std::vector<double> alphas;  ///< real, non-negative displacement amplitudes
  std::vector<double> taus;    ///< s
  int phi_count = 24;
};

struct RamseySettings {
  std::filesystem::path input;  ///< CSV `time_s,signal[,sigma]`
  int n_max = 0;
  RamseyHints hints;
};

enum class ModeFieldSource { kCsv, kGaussianSlab, kUniform };

struct TlsSettings {
  ModeFieldSource source = ModeFieldSource::kGaussianSlab;
  std::filesystem::path field_csv;
  double sigma = 0.0, half_width = 0.0, area = 0.0;   // Gaussian slab, m / m²
  double volume = 0.0, u0 = 0.0;                      // uniform field, m³ / m
  std::array<double, 6> strain{};                     // uniform field
  int cells = 0;
  double omega_m = 0.0;
  MaterialConstants material;
  std::optional<double> tls_volume;  ///< m³; defaults to the field volume
  double delta_omega = 0.0;
  int samples = 10000;
  int bins = 50;
  TlsSamplingRanges ranges;
};

enum class McSource { kPhononDistribution, kDoubleExp, kT2m };

struct McSettings {
  McSource source = McSource::kPhononDistribution;
  PhononDistribution pn;           // kPhononDistribution
  std::filesystem::path input;     // CSV `tau_s,value,sigma` for the fit sources
  ResampleConfig resample;
};

struct BvdSettings {
  BvdCircuit circuit;
  double f_start_hz = 0.0, f_stop_hz = 0.0;
  int count = 0;
};

struct RunConfig {
  Experiment experiment = Experiment::kRingdown;
  std::uint64_t seed = 0;
  SystemConfig system;
  MechanicsSweep sweep;
  std::optional<double> kappa1_fixed;  ///< rad/s
  RamseySettings ramsey;
  TlsSettings tls;
  McSettings mc;
  BvdSettings bvd;
  EvolveOptions evolve;
  LmOptions lm;
  std::optional<std::filesystem::path> output_dir;

  /// Canonical echo of the configuration with every default filled in.
  nlohmann::json resolved;
};

/// Parses and validates a configuration, including the truncation-safety rule and
/// the dimension guard. Relative input paths resolve against `base_dir`. Throws
/// ConfigError (or a subclass) on any schema or physics-precondition violation.
RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});

/// Reads and parses a file; a missing file raises IoError, malformed JSON ConfigError.
RunConfig load_run_config(const std::filesystem::path& path);

/// 16 hex digits of FNV-1a over the canonical resolved JSON.
std::string config_hash(const nlohmann::json& resolved);

}  // namespace tlsphonon::cli
