#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "json.hpp"

namespace hmcam::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;

/// Everything needed to re-run a subcommand; written as run_manifest.json
/// into every output directory.
struct RunManifest {
  std::string subcommand;
  /// Fully resolved configuration: every default and derived seed is explicit.
  nlohmann::json config;
  std::uint64_t seed = 0;
  /// Input file path -> git blob hash.
  nlohmann::json inputs = nlohmann::json::object();
  std::string output;
  std::string tool_version;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
  static RunManifest load(const std::filesystem::path& path);
};

std::string tool_version();

/// Runs a resolved manifest into `out` and writes run_manifest.json there.
/// Recorded input hashes must match the files on disk.
void execute(RunManifest manifest, const std::filesystem::path& out, std::size_t jobs, std::ostream& log);

/// Full command line: parses, executes and maps errors to exit codes
/// (0 ok, 2 config, 3 data, 1 runtime).
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hmcam::cli
