#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ripnerf/config.hpp"

namespace ripnerf::cli {

struct CliOptions {
  std::string config_path;
  std::vector<std::string> overrides;  // dotted-path key=value
  std::optional<unsigned long long> seed;
  std::optional<int> workers;
  std::string out;
  std::string checkpoint;
};

// defaults -> config file -> --set overrides -> flag overrides
RunConfig resolve_config(const CliOptions& opts);

int cmd_train(const CliOptions& opts, std::ostream& log);
int cmd_render(const CliOptions& opts, std::ostream& log);
int cmd_eval(const CliOptions& opts, std::ostream& log);
int cmd_fixtures(const CliOptions& opts, std::ostream& log);
int cmd_ambiguity(const CliOptions& opts, std::ostream& log);

// Query-tuple collision experiment over a seeded batch of Gaussian pairs
// built to share cube-plane footprints (plus the canonical body-diagonal
// pair). A pair "collides" on a solid when every plane yields the same
// (position, level) tuple within pos 1e-9 / level 0.05.
struct AmbiguityResult {
  int pairs = 0;
  int cube_collisions = 0;
  int icosa_collisions = 0;
  int unseparated = 0;  // conflated by the cube AND the icosahedron
};

AmbiguityResult run_ambiguity(const RunConfig& cfg, int random_pairs = 64);

// full arg parsing + dispatch; returns the process exit code
int run_cli(int argc, const char* const* argv, std::ostream& log, std::ostream& err);

}  // namespace ripnerf::cli
