#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "ripnerf/field.hpp"
#include "ripnerf/geometry.hpp"
#include "ripnerf/image.hpp"

namespace ripnerf {

// Pinhole camera, +X right / +Y down / +Z forward, camera-to-world pose.
struct Camera {
  double fx = 1.0, fy = 1.0;
  double cx = 0.0, cy = 0.0;
  int width = 0, height = 0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
};

void validate_camera(const Camera& cam);

// Binary occupancy over [-half_extent, half_extent]^3. Cells that do not
// touch the bounding sphere are permanently ineligible; the rest flip on a
// decayed density cache against the threshold. During warmup every eligible
// cell counts as occupied.
struct OccupancyGrid {
  int resolution = 64;
  double half_extent = 1.5;
  double threshold = 0.005;
  double decay = 0.95;
  bool force_all = true;
  std::vector<uint8_t> eligible;
  std::vector<float> cache;
  std::vector<uint8_t> occupied;

  static OccupancyGrid make(int resolution, double radius, double threshold = 0.005);

  double cell_size() const { return 2.0 * half_extent / resolution; }
  size_t cell_count() const {
    return static_cast<size_t>(resolution) * resolution * resolution;
  }
  int cell_of(const Vec3& p) const;  // -1 outside the box
  bool sample_occupied(const Vec3& p) const;
};

// Refresh every eligible cell: evaluate the field at one jittered point per
// cell, fold it into the cache as max(decay * cache, density), then re-flag
// occupancy against the threshold.
void update_occupancy(OccupancyGrid& grid, const std::function<double(const Vec3&)>& density_at,
                      std::mt19937_64& rng);

// Same refresh with one batched field evaluation (the training hot path).
using BatchDensityFn = std::function<void(std::span<const Vec3>, std::span<double>)>;
void update_occupancy_batch(OccupancyGrid& grid, const BatchDensityFn& density_at,
                            std::mt19937_64& rng);

struct RenderOptions {
  double step_world = 0.0;  // filled by default_render_options
  int max_samples = 1024;
  double early_stop_transmittance = 1e-4;
  Vec3 background = Vec3::Ones();
};

RenderOptions default_render_options(double scene_radius);

// Ray through the center of pixel (row, col); `scale` divides the intrinsics
// (multi-scale evaluation), multiplying the cone radius by the same factor.
Ray pixel_ray(const Camera& cam, double row, double col, int scale);
std::vector<Ray> generate_rays(const Camera& cam, std::span<const std::pair<int, int>> pixels,
                               int scale);

// Uniform tiling of the ray-sphere intersection with world-unit step
// `step_world`; intervals with unoccupied midpoints are skipped and the
// sub-step tail is dropped. Missing the sphere yields an empty list.
std::vector<FrustumInterval> march(const Ray& ray, const OccupancyGrid& grid, int max_samples,
                                   double step_world);

struct CompositeResult {
  Vec3 color = Vec3::Zero();
  double opacity = 0.0;
};

// Standard volume compositing. early_stop_transmittance = 0 disables the
// cutoff; when it triggers, the remaining transmittance still goes to the
// background so sum(T_k a_k) + T_final == 1 holds.
CompositeResult composite(std::span<const double> density, std::span<const Vec3> color,
                          std::span<const double> delta, const Vec3& background,
                          double early_stop_transmittance = 0.0);

// Reverse-mode gradients of the compositing above for a given upstream
// d(loss)/d(output color). ddensity and dcolor_samples are accumulated.
void composite_backward(std::span<const double> density, std::span<const Vec3> color,
                        std::span<const double> delta, const Vec3& background,
                        double early_stop_transmittance, const Vec3& dcolor_out,
                        std::span<double> ddensity, std::span<Vec3> dcolor_samples);

// Per-ray sample structure for one block of rays (flattened, ray-major).
struct RaySampleBatch {
  std::vector<int> ray_offset;  // size rays + 1
  std::vector<double> t_near, t_far, delta;
  std::vector<int> ray_of_sample;
  std::vector<Gaussian3> gaussians;
  std::vector<RipmapQuery> queries;  // n * plane_count
  FieldBatch field;
  std::vector<CompositeResult> outputs;  // per ray

  int sample_count() const { return static_cast<int>(t_near.size()); }
};

// march + cone cast + featurize + decode + composite for a block of rays.
void forward_block(const FieldModel& model, const OccupancyGrid& grid, const RenderOptions& opts,
                   std::span<const Ray> rays, RaySampleBatch& batch);

// Backward through the block: dloss_dcolor per ray -> parameter gradients.
void backward_block(const FieldModel& model, const RenderOptions& opts, std::span<const Ray> rays,
                    const RaySampleBatch& batch, std::span<const Vec3> dloss_dcolor,
                    FieldGrad& grad);

// Full-frame render at `scale`; returns RGBA (alpha = opacity). Deterministic
// for any worker count.
Image render_image(const FieldModel& model, const OccupancyGrid& grid, const RenderOptions& opts,
                   const Camera& cam, int scale, int workers);

// Density probe used for occupancy refreshes: an isotropic Gaussian with
// sigma = half cell size standing in for a point sample.
double density_at_point(const FieldModel& model, const Vec3& p, double sigma);

// Batched flavor of the probe, parallel over fixed chunks.
void density_probe_batch(const FieldModel& model, std::span<const Vec3> points, double sigma,
                         std::span<double> out, int workers);

}  // namespace ripnerf
