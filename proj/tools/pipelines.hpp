// pipelines.hpp — experiment pipelines of the command-line tool. Each pipeline
// computes all artifacts in memory; nothing touches the output directory until the
// whole run has succeeded.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "run_config.hpp"

namespace tlsphonon::cli {

struct Artifact {
  std::string name;     ///< file name inside the output directory
  std::string content;  ///< CSV files start with `# config_hash=<hash>`; JSON files carry "config_hash"
};

std::vector<Artifact> execute(const RunConfig& rc, const std::string& hash, int threads);

/// Columns of a CSV file with a header line; '#' lines are skipped. Throws IoError
/// when the file cannot be read or a row is malformed, ConfigError when the header
/// does not start with `columns`.
std::vector<std::vector<double>> read_csv_columns(const std::filesystem::path& path,
                                                  const std::vector<std::string>& columns,
                                                  std::size_t optional_columns = 0);

/// Hash embedded in an artifact, or an empty string when none is found.
std::string embedded_hash(const std::string& name, std::istream& in);

}  // namespace tlsphonon::cli
