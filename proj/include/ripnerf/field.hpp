#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "ripnerf/geometry.hpp"
#include "ripnerf/ripmap.hpp"

namespace ripnerf {

enum class EncodingMode { Ripmap, IsotropicMipmap };

struct FieldConfig {
  PlatonicSolid solid = PlatonicSolid::Icosahedron;
  int grid_h = 64;
  int grid_w = 64;
  int channels = 8;
  int mlp_width = 128;
  int sh_degree = 4;  // bands; basis has sh_degree^2 values
  double density_clamp = 15.0;
  double mass_factor = 2.0;
  double scene_radius = 1.5;
  EncodingMode encoding_mode = EncodingMode::Ripmap;

  static constexpr int kGeoDim = 15;

  int plane_count() const;
  int feature_dim() const { return channels * plane_count(); }
  int sh_dim() const { return sh_degree * sh_degree; }
};

// Dense layer; weights stored row-major (out x in) as 32-bit floats, the
// checkpointable precision. All arithmetic runs in double.
struct DenseLayer {
  int in = 0;
  int out = 0;
  std::vector<float> weight;
  std::vector<float> bias;
};

struct MlpParams {
  // density branch: feature -> width -> (1 + 15); ReLU hidden
  // color branch: (15 + sh) -> width -> width -> 3; ReLU hidden, sigmoid out
  std::vector<DenseLayer> density_layers;
  std::vector<DenseLayer> color_layers;

  size_t param_count() const;
};

MlpParams make_mlp(const FieldConfig& cfg, std::mt19937_64& rng);

struct FieldSample {
  double density = 0.0;
  Vec3 color = Vec3::Zero();
  std::array<double, FieldConfig::kGeoDim> geo{};
};

// Full parameter bundle: per-plane ripmaps plus the shared decoder.
struct FieldModel {
  FieldConfig cfg;
  PlaneSet planes;
  std::vector<Ripmap> ripmaps;
  MlpParams mlp;
};

// Init draws in a fixed order: per-plane base grids uniform in
// [-0.01, 0.01], then Glorot-uniform MLP weights (biases zero).
FieldModel make_field_model(const FieldConfig& cfg, std::mt19937_64& rng);
FieldModel make_field_model(const FieldConfig& cfg, uint64_t seed);

void refresh_model(FieldModel& model);
size_t learnable_param_count(const FieldModel& model);
size_t serialized_param_bytes(const FieldModel& model);

// Real spherical harmonics basis up to `degree` bands (out size degree^2).
// The direction is normalized internally; a zero vector is rejected.
void sh_encode(const Vec3& direction, int degree, std::span<double> out);

// Projects the Gaussian onto every plane, derives the per-plane query and
// concatenates the per-plane features. out_feature holds feature_dim()
// values; out_queries (optional) receives plane_count() query tuples.
void featurize(const Gaussian3& g, const FieldModel& model, std::span<double> out_feature,
               RipmapQuery* out_queries);

// Derives the query tuple for one plane, honoring the encoding mode
// (IsotropicMipmap averages the two variances before the log).
RipmapQuery derive_plane_query(const Gaussian2& g2, const FieldConfig& cfg, int levels_x,
                               int levels_y);

FieldSample decode(std::span<const double> feature, const Vec3& direction, const MlpParams& mlp,
                   const FieldConfig& cfg);

// ---- batched pipeline + gradients -----------------------------------------

struct LayerGrad {
  std::vector<double> weight;
  std::vector<double> bias;
};

struct MlpGrad {
  std::vector<LayerGrad> density_layers;
  std::vector<LayerGrad> color_layers;

  static MlpGrad zeros_like(const MlpParams& p);
  void add(const MlpGrad& other);
  void clear();
};

struct FieldGrad {
  MlpGrad mlp;
  std::vector<std::vector<double>> ripmap_base;  // per plane, base-grid layout

  static FieldGrad zeros_like(const FieldModel& m);
  void add(const FieldGrad& other);
  void clear();
};

// Per-sample buffers for one block of rays. `feature` and `sh` are inputs to
// the decoder; outputs are filled by field_forward_batch.
struct FieldBatch {
  int n = 0;
  std::vector<double> feature;      // n x feature_dim
  std::vector<double> sh;           // n x sh_dim
  std::vector<double> raw_density;  // n (pre-activation)
  std::vector<double> density;      // n
  std::vector<double> geo;          // n x 15
  std::vector<double> color;        // n x 3

  void resize(int samples, const FieldConfig& cfg);
};

void field_forward_batch(const FieldModel& model, FieldBatch& batch);

// Density branch only (fills raw_density/density/geo from feature); the
// occupancy sampler uses this to skip the color head.
void field_density_batch(const FieldModel& model, FieldBatch& batch);

// Accumulates parameter gradients and writes d(loss)/d(feature) for every
// sample (dfeature is overwritten, sized n x feature_dim). Hidden
// activations are recomputed rather than cached.
void field_backward_batch(const FieldModel& model, const FieldBatch& batch,
                          std::span<const double> ddensity, std::span<const double> dcolor,
                          MlpGrad& grad, std::vector<double>& dfeature);

}  // namespace ripnerf
