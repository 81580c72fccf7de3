#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "hallu/json_io.hpp"

namespace hallu::cli {

/// Stable process exit codes.
enum ExitCode : int {
  kOk = 0,
  kUnexpected = 1,
  kInvalid = 2,
  kInfeasible = 3,
  kMissing = 4,
};

/// Resolved run settings shared by every command.
struct RunConfig {
  Json config = Json::object();
  std::string config_path;
  std::uint64_t seed = 0;
  std::string seed_source = "default";
  int workers = 0;
  std::string out = "run";
  std::uint64_t config_hash = 0;
};

/// FNV-1a of the compact, key-sorted serialization.
std::uint64_t config_hash(const Json& config);

/// Precedence: flag, then the HALLU_SEED value, then the config's "seed", then 0.
std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, const char* env, const Json& config,
                           std::string* source = nullptr);

/// Entry point for the `hallu` executable; returns an ExitCode.
int run(int argc, char** argv);

}  // namespace hallu::cli
