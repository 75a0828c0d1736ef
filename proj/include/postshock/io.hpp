#pragma once

#include "postshock/bootstrap.hpp"
#include "postshock/dgp.hpp"
#include "postshock/loocv.hpp"
#include "postshock/panel.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

namespace postshock {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kArtifactVersion = "0.1.0";

/// Provenance block embedded in every report. Two runs with identical
/// manifests (ignoring the timestamp) produce identical numerical output.
struct RunManifest {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string artifact_version = kArtifactVersion;
  int schema_version = kSchemaVersion;
  std::map<std::string, std::string> input_digests;
  std::string timestamp;
};

/// Loads a donor pool from the long-format data CSV
/// (series_id,t,y,x1..xp; t starts at 0; y may be empty at the target's
/// t = T*+1 forecast row) and the metadata CSV (series_id,t_star,role).
/// Parse errors name the offending row.
DonorPool load_panel(const std::string& data_path, const std::string& meta_path);

/// Writes a pool back out in the same two-file layout; load(write(pool))
/// reproduces the pool bit-for-bit.
void write_panel(const DonorPool& pool, const std::string& data_path,
                 const std::string& meta_path);

/// FNV-1a 64-bit digests used for manifest input fingerprints.
std::string fnv1a64_bytes(std::string_view bytes);
std::string fnv1a64_file(const std::string& path);

/// Full command-line entry point (subcommands: forecast, simulate, loocv).
/// Returns the process exit code: 0 success, 2 input error, 3 numerical
/// failure.
int run_cli(int argc, const char* const* argv);

}  // namespace postshock
