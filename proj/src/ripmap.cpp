#include "ripnerf/ripmap.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ripnerf {

namespace {

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

int log2i(int v) {
  int l = 0;
  while ((1 << l) < v) ++l;
  return l;
}

// Two interpolation taps along one axis with cell-center sampling and
// half-texel-inset clamping; degenerate single-cell axes put all weight
// on cell 0.
struct AxisTap {
  int cell0 = 0;
  int cell1 = 0;
  double w0 = 1.0;
  double w1 = 0.0;
};

AxisTap position_taps(double u, int size) {
  AxisTap t;
  if (size <= 1) return t;
  double xf = u * size - 0.5;
  xf = std::clamp(xf, 0.0, static_cast<double>(size - 1));
  const int a0 = std::min(static_cast<int>(std::floor(xf)), size - 2);
  const double f = xf - a0;
  t.cell0 = a0;
  t.cell1 = a0 + 1;
  t.w0 = 1.0 - f;
  t.w1 = f;
  return t;
}

AxisTap level_taps(double l, int count) {
  AxisTap t;
  if (count <= 1) return t;
  const double lf = std::clamp(l, 0.0, static_cast<double>(count - 1));
  const int l0 = std::min(static_cast<int>(std::floor(lf)), count - 2);
  const double f = lf - l0;
  t.cell0 = l0;
  t.cell1 = l0 + 1;
  t.w0 = 1.0 - f;
  t.w1 = f;
  return t;
}

}  // namespace

FeatureGrid FeatureGrid::zeros(int h, int w, int c) {
  FeatureGrid g;
  g.height = h;
  g.width = w;
  g.channels = c;
  g.values.assign(static_cast<size_t>(h) * w * c, 0.0f);
  return g;
}

std::vector<double> avg_pool_x(const std::vector<double>& g, int h, int w, int c) {
  const int ow = w / 2;
  std::vector<double> out(static_cast<size_t>(h) * ow * c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      const size_t src = (static_cast<size_t>(y) * w + 2 * x) * c;
      const size_t dst = (static_cast<size_t>(y) * ow + x) * c;
      for (int ch = 0; ch < c; ++ch) {
        out[dst + ch] = 0.5 * (g[src + ch] + g[src + c + ch]);
      }
    }
  }
  return out;
}

std::vector<double> avg_pool_y(const std::vector<double>& g, int h, int w, int c) {
  const int oh = h / 2;
  std::vector<double> out(static_cast<size_t>(oh) * w * c);
  const size_t row = static_cast<size_t>(w) * c;
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < w; ++x) {
      const size_t src = (static_cast<size_t>(2 * y) * w + x) * c;
      const size_t dst = (static_cast<size_t>(y) * w + x) * c;
      for (int ch = 0; ch < c; ++ch) {
        out[dst + ch] = 0.5 * (g[src + ch] + g[src + row + ch]);
      }
    }
  }
  return out;
}

Ripmap build_pyramid(FeatureGrid base) {
  if (!is_pow2(base.width) || !is_pow2(base.height)) {
    throw std::invalid_argument("feature grid dimensions must be powers of two");
  }
  if (base.channels <= 0) throw std::invalid_argument("feature grid needs at least one channel");
  if (base.values.size() != static_cast<size_t>(base.height) * base.width * base.channels) {
    throw std::invalid_argument("feature grid value buffer has the wrong size");
  }
  Ripmap rm;
  rm.base = std::move(base);
  rm.levels_x = log2i(rm.base.width) + 1;
  rm.levels_y = log2i(rm.base.height) + 1;
  rm.pyramid.resize(static_cast<size_t>(rm.levels_x) * rm.levels_y);
  refresh_pyramid(rm);
  return rm;
}

void refresh_pyramid(Ripmap& rm) {
  auto& base_level = rm.level(0, 0);
  base_level.resize(rm.base.values.size());
  for (size_t i = 0; i < base_level.size(); ++i) {
    base_level[i] = static_cast<double>(rm.base.values[i]);
  }
  // x-chain first, then each y-chain; j != 0 pools along y from (i, j-1),
  // j == 0 pools along x from (i-1, 0).
  for (int i = 1; i < rm.levels_x; ++i) {
    rm.level(i, 0) = avg_pool_x(rm.level(i - 1, 0), rm.base.height, rm.level_width(i - 1),
                                rm.base.channels);
  }
  for (int i = 0; i < rm.levels_x; ++i) {
    for (int j = 1; j < rm.levels_y; ++j) {
      rm.level(i, j) = avg_pool_y(rm.level(i, j - 1), rm.level_height(j - 1), rm.level_width(i),
                                  rm.base.channels);
    }
  }
  rm.dirty = false;
}

RipmapQuery derive_query(const Gaussian2& g2, double scene_radius, double mass_factor,
                         int levels_x, int levels_y) {
  if (!(scene_radius > 0.0)) throw std::invalid_argument("scene radius must be positive");
  if (!(mass_factor > 0.0)) throw std::invalid_argument("mass factor must be positive");
  RipmapQuery q;
  const int levels[2] = {levels_x, levels_y};
  for (int d = 0; d < 2; ++d) {
    q.pos[d] = std::clamp(g2.mean[d] / (2.0 * scene_radius) + 0.5, 0.0, 1.0);
    const double var = std::max(0.0, g2.cov(d, d));
    const double sigma = std::sqrt(var);
    const double raw = sigma > 0.0 ? std::log2(mass_factor * sigma / scene_radius)
                                   : -std::numeric_limits<double>::infinity();
    q.level[d] = std::clamp(raw, 0.0, static_cast<double>(levels[d] - 1));
  }
  return q;
}

void query(const Ripmap& rm, const RipmapQuery& q, std::span<double> out) {
  if (rm.dirty) throw std::logic_error("ripmap pyramid is stale; refresh before querying");
  const int C = rm.base.channels;
  std::fill(out.begin(), out.end(), 0.0);

  const AxisTap lx = level_taps(q.level.x(), rm.levels_x);
  const AxisTap ly = level_taps(q.level.y(), rm.levels_y);
  const int lvx[2] = {lx.cell0, lx.cell1};
  const double wlx[2] = {lx.w0, lx.w1};
  const int lvy[2] = {ly.cell0, ly.cell1};
  const double wly[2] = {ly.w0, ly.w1};

  for (int k = 0; k < 2; ++k) {
    if (wlx[k] == 0.0 && k == 1) continue;
    const int i = lvx[k];
    const int w = rm.level_width(i);
    const AxisTap tx = position_taps(q.pos.x(), w);
    for (int m = 0; m < 2; ++m) {
      if (wly[m] == 0.0 && m == 1) continue;
      const int j = lvy[m];
      const int h = rm.level_height(j);
      const AxisTap ty = position_taps(q.pos.y(), h);
      const double wl = wlx[k] * wly[m];
      const auto& lvl = rm.level(i, j);
      const int cx[2] = {tx.cell0, tx.cell1};
      const double wx[2] = {tx.w0, tx.w1};
      const int cy[2] = {ty.cell0, ty.cell1};
      const double wy[2] = {ty.w0, ty.w1};
      for (int b = 0; b < 2; ++b) {
        for (int a = 0; a < 2; ++a) {
          const double wgt = wl * wx[a] * wy[b];
          const size_t idx = (static_cast<size_t>(cy[b]) * w + cx[a]) * C;
          for (int c = 0; c < C; ++c) out[c] += wgt * lvl[idx + c];
        }
      }
    }
  }
}

void query_backward(const Ripmap& rm, const RipmapQuery& q, std::span<const double> upstream,
                    std::span<double> grad_base) {
  if (rm.dirty) throw std::logic_error("ripmap pyramid is stale; refresh before querying");
  const int C = rm.base.channels;
  const int W = rm.base.width;

  const AxisTap lx = level_taps(q.level.x(), rm.levels_x);
  const AxisTap ly = level_taps(q.level.y(), rm.levels_y);
  const int lvx[2] = {lx.cell0, lx.cell1};
  const double wlx[2] = {lx.w0, lx.w1};
  const int lvy[2] = {ly.cell0, ly.cell1};
  const double wly[2] = {ly.w0, ly.w1};

  for (int k = 0; k < 2; ++k) {
    const int i = lvx[k];
    const AxisTap tx = position_taps(q.pos.x(), rm.level_width(i));
    for (int m = 0; m < 2; ++m) {
      const int j = lvy[m];
      const AxisTap ty = position_taps(q.pos.y(), rm.level_height(j));
      const double wl = wlx[k] * wly[m];
      if (wl == 0.0) continue;
      const double pool = std::ldexp(1.0, -(i + j));  // 1 / (2^i * 2^j)
      const int cx[2] = {tx.cell0, tx.cell1};
      const double wx[2] = {tx.w0, tx.w1};
      const int cy[2] = {ty.cell0, ty.cell1};
      const double wy[2] = {ty.w0, ty.w1};
      for (int b = 0; b < 2; ++b) {
        for (int a = 0; a < 2; ++a) {
          const double wgt = wl * wx[a] * wy[b];
          if (wgt == 0.0) continue;
          // pooling footprint of pyramid cell (cx[a], cy[b]) at level (i, j)
          const int x0 = cx[a] << i;
          const int y0 = cy[b] << j;
          const double g = wgt * pool;
          for (int by = y0; by < y0 + (1 << j); ++by) {
            for (int bx = x0; bx < x0 + (1 << i); ++bx) {
              const size_t idx = (static_cast<size_t>(by) * W + bx) * C;
              for (int c = 0; c < C; ++c) grad_base[idx + c] += g * upstream[c];
            }
          }
        }
      }
    }
  }
}

}  // namespace ripnerf
