#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ripnerf/data.hpp"
#include "ripnerf/field.hpp"
#include "ripnerf/render.hpp"

namespace ripnerf {

enum class LossKind { L2, AreaWeightedL2 };

struct TrainConfig {
  int iterations = 2000;
  int batch_rays = 4096;
  bool dynamic_batch = false;
  int target_samples_per_batch = 262144;
  int min_batch_rays = 64;
  int max_batch_rays = 8192;
  double lr_base = 2e-3;
  double lr_ripmap_multiplier = 10.0;
  double weight_decay = 1e-5;
  std::vector<int> lr_milestones;  // empty -> default_milestones(iterations)
  double lr_gamma = 0.6;
  uint64_t seed = 0;
  LossKind loss = LossKind::AreaWeightedL2;
  int occupancy_resolution = 64;
  double occupancy_threshold = 0.005;
  int occupancy_update_every = 16;
  int occupancy_warmup = 256;
  int block_rays = 128;  // fixed gradient-reduction granularity
  int workers = 0;
  int validate_every = 0;   // 0: off
  int checkpoint_every = 0;  // 0: final only (handled by the CLI)
};

// Milestones follow the published schedule shape: {1/2, 3/4, 5/6, 9/10} of
// the total iteration count.
std::vector<int> default_milestones(int iterations);

// lr_base * gamma^(#milestones <= iteration); the ripmap group gets an
// additional fixed multiplier.
double lr_at(const TrainConfig& cfg, long long iteration);

// Per-ray photometric loss: weight = ratio^2 (footprint area), squared L2
// over channels. Batch losses are means over rays.
double area_weighted_loss(const Vec3& pred, const Vec3& target, double pixel_radius_ratio);

// Decoupled-weight-decay adaptive-moment update, beta1 0.9 / beta2 0.999 /
// eps 1e-15, bias correction on; t is the 1-based step index. Parameters are
// float storage updated with double arithmetic. NaN gradients abort.
void optimizer_step(std::span<float> params, std::span<const double> grads, std::span<double> m,
                    std::span<double> v, double lr, double weight_decay, long long t,
                    const char* label);

struct TrainResult {
  std::vector<double> loss_trace;
  std::vector<std::pair<long long, double>> val_psnr;
};

class Trainer {
 public:
  Trainer(const FieldConfig& field_cfg, const TrainConfig& train_cfg,
          const RenderOptions& render_opts);

  // One optimization step; returns the batch loss.
  double step(const ScaledDataset& train_data);

  FieldModel model;
  TrainConfig cfg;
  RenderOptions render_opts;
  OccupancyGrid grid;
  std::vector<double> moments_ripmap_m, moments_ripmap_v;
  std::vector<double> moments_mlp_m, moments_mlp_v;
  std::mt19937_64 rng;
  long long iteration = 0;
  int current_batch_rays = 0;

 private:
  void apply_gradients(const FieldGrad& grad);

  std::vector<FieldGrad> block_grads_;
};

TrainResult train_loop(Trainer& trainer, const ScaledDataset& train_data,
                       const ScaledDataset* val_data, int iterations);

// Checkpoint file: magic "RIPF", version u32, config hash u64, iteration,
// batch state, embedded config JSON, then length-prefixed sections
// (ripmaps, mlp, moments, rng, occupancy). All integers little-endian,
// parameters 32-bit floats, moments 64-bit. The hash covers the identity
// string; the snapshot is the full resolved config for reproducibility.
void save_checkpoint(const std::string& path, const Trainer& trainer,
                     const std::string& config_snapshot, const std::string& config_identity);

// Reads the embedded config snapshot without touching trainer state.
std::string read_checkpoint_config(const std::string& path);

// Restores all state into a trainer built from the same config; refuses a
// mismatched config hash.
void load_checkpoint(const std::string& path, Trainer& trainer,
                     const std::string& expected_config_identity);

uint64_t fnv1a64(std::string_view text);

}  // namespace ripnerf
