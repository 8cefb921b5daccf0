#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lpbf::cli {

inline constexpr const char* kToolVersion = "1.0.0";
/// Default output directory when --out is not given.
inline constexpr const char* kOutDirEnv = "LPBF_DT_OUT_DIR";

/// Runs one subcommand. Results go to files under the output directory and a
/// JSON summary to `out`; failures print {"error": {"code", "message"}} to `err`.
/// Returns 0 on success, 1 on a runtime failure and 2 on a usage error.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_dispatch(int argc, char** argv);

}  // namespace lpbf::cli
