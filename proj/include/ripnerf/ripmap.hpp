#pragma once

#include <span>
#include <vector>

#include "ripnerf/geometry.hpp"

namespace ripnerf {

// Learnable 2D feature grid, values indexed (y, x, channel) row-major.
// Dimensions must be powers of two so the pyramid closes at 1x1.
struct FeatureGrid {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> values;

  static FeatureGrid zeros(int h, int w, int c);

  float& at(int y, int x, int c) {
    return values[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  float at(int y, int x, int c) const {
    return values[(static_cast<size_t>(y) * width + x) * channels + c];
  }
};

// Anisotropic pyramid over a learnable base grid. Level (i, j) halves the
// width i times and the height j times; only the base is learnable, every
// other level is an average-pooled copy. Pyramid cells are kept in double
// so queries and gradients run at full precision.
struct Ripmap {
  FeatureGrid base;
  int levels_x = 0;
  int levels_y = 0;
  std::vector<std::vector<double>> pyramid;  // index i * levels_y + j
  bool dirty = true;

  int level_width(int i) const { return base.width >> i; }
  int level_height(int j) const { return base.height >> j; }
  const std::vector<double>& level(int i, int j) const {
    return pyramid[static_cast<size_t>(i) * levels_y + j];
  }
  std::vector<double>& level(int i, int j) {
    return pyramid[static_cast<size_t>(i) * levels_y + j];
  }
};

// Query point: normalized position in [0,1]^2 plus fractional level per axis.
struct RipmapQuery {
  Vec2 pos = Vec2::Zero();
  Vec2 level = Vec2::Zero();
};

Ripmap build_pyramid(FeatureGrid base);

// Recompute every pyramid level from the base grid and clear the dirty flag.
void refresh_pyramid(Ripmap& rm);

// Position from the projected mean mapped into [0,1]^2 by u = mu/(2r) + 1/2;
// level l_d = log2(mass_factor * sigma_d / scene_radius), clamped to
// [0, levels-1] per axis. A zero sigma selects the finest level.
RipmapQuery derive_query(const Gaussian2& g2, double scene_radius, double mass_factor,
                         int levels_x, int levels_y);

// Tetra-linear interpolation over the 16 neighboring (position x level)
// vertices; `out` must hold base.channels values and is overwritten.
void query(const Ripmap& rm, const RipmapQuery& q, std::span<double> out);

// Accumulates the exact gradient of dot(upstream, query(rm, q)) with respect
// to the base grid into grad_base (same layout/size as base.values). Each
// pyramid tap distributes through its average-pooling footprint with weight
// 1 / (2^i * 2^j).
void query_backward(const Ripmap& rm, const RipmapQuery& q, std::span<const double> upstream,
                    std::span<double> grad_base);

// Single pooling steps on a row-major (y, x, c) double grid; exposed for the
// pyramid tests (order commutativity, block-mean oracle).
std::vector<double> avg_pool_x(const std::vector<double>& g, int h, int w, int c);
std::vector<double> avg_pool_y(const std::vector<double>& g, int h, int w, int c);

}  // namespace ripnerf
