#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ripnerf/data.hpp"
#include "ripnerf/field.hpp"
#include "ripnerf/train.hpp"

namespace ripnerf {

enum class DataKind { Toy, Blender };

struct DataConfig {
  DataKind kind = DataKind::Toy;
  std::string dir;          // blender dataset directory
  std::string toy_spec;     // path to a toy-scene spec JSON; empty -> builtin
  std::string toy_builtin = "default";  // "default" or "striped_box"
  std::vector<int> scales = {1};
};

struct RenderConfig {
  double step_divisor = 1024.0;  // step = 2 sqrt(3) r / divisor
  int max_samples = 1024;
  double early_stop_transmittance = 1e-4;
  Vec3 background = Vec3::Ones();
  std::string split = "eval";
};

// The whole run in one JSON document; unknown keys are rejected.
struct RunConfig {
  uint64_t seed = 7;
  int workers = 0;
  std::string out = "runs/out";
  FieldConfig field;
  TrainConfig train;
  RenderConfig render;
  DataConfig data;

  RenderOptions render_options() const;
};

RunConfig default_run_config();
RunConfig parse_run_config(const std::string& json_text);
std::string run_config_to_json(const RunConfig& cfg, int indent = -1);

// The hash-relevant subset (field + train sections): what must match for a
// checkpoint to be loadable and a resume to mean the same run. Volatile keys
// (out, workers, seed, render/data knobs) stay out of it.
std::string run_config_identity(const RunConfig& cfg);

// Applies "dotted.path=value" overrides on the JSON form; values parse as
// JSON when possible, else as strings.
std::string apply_overrides(const std::string& json_text,
                            const std::vector<std::string>& overrides);

// Loads train/eval splits per the data config (toy scenes are generated
// in memory) and expands the scale list.
struct LoadedData {
  ScaledDataset train;
  ScaledDataset eval;
  bool has_oracle = false;
  AnalyticField oracle;
};

LoadedData load_data(const RunConfig& cfg);

}  // namespace ripnerf
