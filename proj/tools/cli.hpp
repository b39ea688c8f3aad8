// cli.hpp — `tlsphonon run|validate` entry point.
//
// Exit codes: 0 success, 1 stale artifacts or internal error, 2 configuration or
// usage error, 3 numerical failure, 4 I/O failure.

#pragma once

#include <iosfwd>

namespace tlsphonon::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitIo = 4;

/// Environment variable naming the default output directory.
inline constexpr const char* kOutDirEnv = "TLSPHONON_OUT_DIR";

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tlsphonon::cli
