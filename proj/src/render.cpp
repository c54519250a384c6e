#include "ripnerf/render.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ripnerf/parallel.hpp"

namespace ripnerf {

void validate_camera(const Camera& cam) {
  if (!(cam.fx > 0.0) || !(cam.fy > 0.0)) throw DataError("camera focal lengths must be positive");
  if (cam.width <= 0 || cam.height <= 0) throw DataError("camera image size must be positive");
  const Mat3 rtr = cam.rotation.transpose() * cam.rotation;
  if ((rtr - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9 ||
      std::abs(cam.rotation.determinant() - 1.0) > 1e-9) {
    throw DataError("camera rotation must be orthonormal with det +1");
  }
}

OccupancyGrid OccupancyGrid::make(int resolution, double radius, double threshold) {
  OccupancyGrid g;
  g.resolution = resolution;
  g.half_extent = radius;
  g.threshold = threshold;
  g.eligible.assign(g.cell_count(), 0);
  g.cache.assign(g.cell_count(), 0.0f);
  g.occupied.assign(g.cell_count(), 0);
  const double h = g.cell_size();
  // eligible iff the cell box touches the bounding sphere
  size_t idx = 0;
  for (int z = 0; z < resolution; ++z) {
    for (int y = 0; y < resolution; ++y) {
      for (int x = 0; x < resolution; ++x, ++idx) {
        const Vec3 lo(-radius + x * h, -radius + y * h, -radius + z * h);
        const Vec3 hi = lo + Vec3(h, h, h);
        double d2 = 0.0;
        for (int a = 0; a < 3; ++a) {
          const double v = std::max({lo[a] - 0.0, 0.0 - hi[a], 0.0});
          d2 += v * v;
        }
        g.eligible[idx] = d2 <= radius * radius ? 1 : 0;
      }
    }
  }
  return g;
}

int OccupancyGrid::cell_of(const Vec3& p) const {
  const double h = cell_size();
  int c[3];
  for (int a = 0; a < 3; ++a) {
    const double f = (p[a] + half_extent) / h;
    if (f < 0.0 || f >= resolution) return -1;
    c[a] = static_cast<int>(f);
  }
  return (c[2] * resolution + c[1]) * resolution + c[0];
}

bool OccupancyGrid::sample_occupied(const Vec3& p) const {
  const int idx = cell_of(p);
  if (idx < 0) return false;
  if (force_all) return eligible[idx] != 0;
  return occupied[idx] != 0;
}

void update_occupancy_batch(OccupancyGrid& grid, const BatchDensityFn& density_at,
                            std::mt19937_64& rng) {
  const double h = grid.cell_size();
  std::uniform_real_distribution<double> jitter(0.0, 1.0);
  std::vector<Vec3> points;
  std::vector<size_t> cells;
  points.reserve(grid.cell_count());
  size_t idx = 0;
  for (int z = 0; z < grid.resolution; ++z) {
    for (int y = 0; y < grid.resolution; ++y) {
      for (int x = 0; x < grid.resolution; ++x, ++idx) {
        if (!grid.eligible[idx]) continue;
        points.emplace_back(-grid.half_extent + (x + jitter(rng)) * h,
                            -grid.half_extent + (y + jitter(rng)) * h,
                            -grid.half_extent + (z + jitter(rng)) * h);
        cells.push_back(idx);
      }
    }
  }
  std::vector<double> density(points.size());
  density_at(points, density);
  for (size_t i = 0; i < cells.size(); ++i) {
    const size_t c = cells[i];
    grid.cache[c] = static_cast<float>(
        std::max(static_cast<double>(grid.cache[c]) * grid.decay, density[i]));
  }
  for (size_t i = 0; i < grid.occupied.size(); ++i) {
    grid.occupied[i] =
        grid.eligible[i] && static_cast<double>(grid.cache[i]) > grid.threshold ? 1 : 0;
  }
}

void update_occupancy(OccupancyGrid& grid, const std::function<double(const Vec3&)>& density_at,
                      std::mt19937_64& rng) {
  update_occupancy_batch(
      grid,
      [&](std::span<const Vec3> points, std::span<double> out) {
        for (size_t i = 0; i < points.size(); ++i) out[i] = density_at(points[i]);
      },
      rng);
}

RenderOptions default_render_options(double scene_radius) {
  RenderOptions o;
  o.step_world = 2.0 * std::sqrt(3.0) * scene_radius / 1024.0;
  o.max_samples = 1024;
  return o;
}

Ray pixel_ray(const Camera& cam, double row, double col, int scale) {
  const double fx = cam.fx / scale;
  const double fy = cam.fy / scale;
  const double cx = cam.cx / scale;
  const double cy = cam.cy / scale;
  const Vec3 dir_cam((col + 0.5 - cx) / fx, (row + 0.5 - cy) / fy, 1.0);
  Ray r;
  r.origin = cam.translation;
  r.direction = cam.rotation * dir_cam;
  r.pixel_radius = 2.0 / (std::sqrt(12.0) * fx);
  return r;
}

std::vector<Ray> generate_rays(const Camera& cam, std::span<const std::pair<int, int>> pixels,
                               int scale) {
  std::vector<Ray> rays;
  rays.reserve(pixels.size());
  for (const auto& [row, col] : pixels) rays.push_back(pixel_ray(cam, row, col, scale));
  return rays;
}

std::vector<FrustumInterval> march(const Ray& ray, const OccupancyGrid& grid, int max_samples,
                                   double step_world) {
  std::vector<FrustumInterval> out;
  const double R = grid.half_extent;
  const double a = ray.direction.squaredNorm();
  const double b = 2.0 * ray.origin.dot(ray.direction);
  const double c = ray.origin.squaredNorm() - R * R;
  const double disc = b * b - 4.0 * a * c;
  if (disc <= 0.0) return out;
  const double sq = std::sqrt(disc);
  const double t_enter = std::max((-b - sq) / (2.0 * a), 1e-9);
  const double t_exit = (-b + sq) / (2.0 * a);
  if (t_exit <= t_enter) return out;

  const double dnorm = std::sqrt(a);
  const double dt = step_world / dnorm;
  const int steps = static_cast<int>((t_exit - t_enter) / dt);
  for (int k = 0; k < steps && static_cast<int>(out.size()) < max_samples; ++k) {
    const double t0 = t_enter + k * dt;
    const double t1 = t0 + dt;
    const Vec3 mid = ray.origin + 0.5 * (t0 + t1) * ray.direction;
    if (!grid.sample_occupied(mid)) continue;
    out.push_back({t0, t1});
  }
  return out;
}

CompositeResult composite(std::span<const double> density, std::span<const Vec3> color,
                          std::span<const double> delta, const Vec3& background,
                          double early_stop_transmittance) {
  CompositeResult res;
  double T = 1.0;
  for (size_t k = 0; k < density.size(); ++k) {
    if (early_stop_transmittance > 0.0 && T < early_stop_transmittance) break;
    const double alpha = 1.0 - std::exp(-density[k] * delta[k]);
    res.color += (T * alpha) * color[k];
    T *= 1.0 - alpha;
  }
  res.color += T * background;
  res.opacity = 1.0 - T;
  return res;
}

void composite_backward(std::span<const double> density, std::span<const Vec3> color,
                        std::span<const double> delta, const Vec3& background,
                        double early_stop_transmittance, const Vec3& dcolor_out,
                        std::span<double> ddensity, std::span<Vec3> dcolor_samples) {
  const size_t n = density.size();
  std::vector<double> alpha(n), T(n);
  double trans = 1.0;
  size_t used = n;
  for (size_t k = 0; k < n; ++k) {
    if (early_stop_transmittance > 0.0 && trans < early_stop_transmittance) {
      used = k;
      break;
    }
    alpha[k] = 1.0 - std::exp(-density[k] * delta[k]);
    T[k] = trans;
    trans *= 1.0 - alpha[k];
  }
  // suffix color A_k: what would be rendered from sample k+1 on with a fresh
  // transmittance (the background included); d color / d alpha_k = T_k (c_k - A_k)
  Vec3 suffix = background;
  for (size_t k = used; k-- > 0;) {
    const Vec3 dc = (T[k] * alpha[k]) * dcolor_out;
    dcolor_samples[k] += dc;
    const double dalpha = dcolor_out.dot(T[k] * (color[k] - suffix));
    const double dalpha_ddensity = delta[k] * (1.0 - alpha[k]);
    ddensity[k] += dalpha * dalpha_ddensity;
    suffix = alpha[k] * color[k] + (1.0 - alpha[k]) * suffix;
  }
}

double density_at_point(const FieldModel& model, const Vec3& p, double sigma) {
  Gaussian3 g;
  g.mean = p;
  g.cov = Mat3::Identity() * (sigma * sigma);
  FieldBatch b;
  b.resize(1, model.cfg);
  featurize(g, model, std::span<double>(b.feature.data(), model.cfg.feature_dim()), nullptr);
  field_density_batch(model, b);
  return b.density[0];
}

void density_probe_batch(const FieldModel& model, std::span<const Vec3> points, double sigma,
                         std::span<double> out, int workers) {
  constexpr int kChunk = 4096;
  const int chunks = static_cast<int>((points.size() + kChunk - 1) / kChunk);
  const Mat3 cov = Mat3::Identity() * (sigma * sigma);
  parallel_for_blocks(chunks, workers, [&](int blk) {
    const size_t lo = static_cast<size_t>(blk) * kChunk;
    const size_t hi = std::min(points.size(), lo + kChunk);
    const int n = static_cast<int>(hi - lo);
    FieldBatch b;
    b.resize(n, model.cfg);
    Gaussian3 g;
    g.cov = cov;
    const int fdim = model.cfg.feature_dim();
    for (int s = 0; s < n; ++s) {
      g.mean = points[lo + s];
      featurize(g, model, std::span<double>(b.feature.data() + static_cast<size_t>(s) * fdim, fdim),
                nullptr);
    }
    field_density_batch(model, b);
    for (int s = 0; s < n; ++s) out[lo + s] = b.density[s];
  });
}

void forward_block(const FieldModel& model, const OccupancyGrid& grid, const RenderOptions& opts,
                   std::span<const Ray> rays, RaySampleBatch& batch) {
  const FieldConfig& cfg = model.cfg;
  const int planes = cfg.plane_count();
  const int F = cfg.feature_dim();
  const int shd = cfg.sh_dim();

  batch.ray_offset.assign(1, 0);
  batch.t_near.clear();
  batch.t_far.clear();
  batch.delta.clear();
  batch.ray_of_sample.clear();
  batch.gaussians.clear();
  batch.outputs.assign(rays.size(), {});

  for (size_t r = 0; r < rays.size(); ++r) {
    const auto intervals = march(rays[r], grid, opts.max_samples, opts.step_world);
    const double dnorm = rays[r].direction.norm();
    for (const auto& itv : intervals) {
      batch.t_near.push_back(itv.t_near);
      batch.t_far.push_back(itv.t_far);
      batch.delta.push_back((itv.t_far - itv.t_near) * dnorm);
      batch.ray_of_sample.push_back(static_cast<int>(r));
      batch.gaussians.push_back(cone_cast_gaussian(rays[r], itv));
    }
    batch.ray_offset.push_back(static_cast<int>(batch.t_near.size()));
  }

  const int n = batch.sample_count();
  batch.field.resize(n, cfg);
  batch.queries.assign(static_cast<size_t>(n) * planes, {});

  std::vector<double> sh(shd);
  for (size_t r = 0; r < rays.size(); ++r) {
    const int s0 = batch.ray_offset[r];
    const int s1 = batch.ray_offset[r + 1];
    if (s0 == s1) continue;
    sh_encode(rays[r].direction, cfg.sh_degree, sh);
    for (int s = s0; s < s1; ++s) {
      std::copy(sh.begin(), sh.end(), batch.field.sh.begin() + static_cast<size_t>(s) * shd);
    }
  }
  for (int s = 0; s < n; ++s) {
    featurize(batch.gaussians[s], model,
              std::span<double>(batch.field.feature.data() + static_cast<size_t>(s) * F, F),
              batch.queries.data() + static_cast<size_t>(s) * planes);
  }

  field_forward_batch(model, batch.field);

  for (size_t r = 0; r < rays.size(); ++r) {
    const int s0 = batch.ray_offset[r];
    const int s1 = batch.ray_offset[r + 1];
    const int cnt = s1 - s0;
    std::vector<Vec3> colors(cnt);
    for (int k = 0; k < cnt; ++k) {
      colors[k] = Vec3(batch.field.color[(s0 + k) * 3 + 0], batch.field.color[(s0 + k) * 3 + 1],
                       batch.field.color[(s0 + k) * 3 + 2]);
    }
    batch.outputs[r] =
        composite(std::span<const double>(batch.field.density.data() + s0, cnt), colors,
                  std::span<const double>(batch.delta.data() + s0, cnt), opts.background,
                  opts.early_stop_transmittance);
  }
}

void backward_block(const FieldModel& model, const RenderOptions& opts, std::span<const Ray> rays,
                    const RaySampleBatch& batch, std::span<const Vec3> dloss_dcolor,
                    FieldGrad& grad) {
  const FieldConfig& cfg = model.cfg;
  const int planes = cfg.plane_count();
  const int C = cfg.channels;
  const int n = batch.sample_count();

  std::vector<double> ddensity(n, 0.0);
  std::vector<double> dcolor(static_cast<size_t>(n) * 3, 0.0);
  for (size_t r = 0; r < rays.size(); ++r) {
    const int s0 = batch.ray_offset[r];
    const int s1 = batch.ray_offset[r + 1];
    const int cnt = s1 - s0;
    if (cnt == 0) continue;
    std::vector<Vec3> colors(cnt);
    std::vector<Vec3> dcols(cnt, Vec3::Zero());
    for (int k = 0; k < cnt; ++k) {
      colors[k] = Vec3(batch.field.color[(s0 + k) * 3 + 0], batch.field.color[(s0 + k) * 3 + 1],
                       batch.field.color[(s0 + k) * 3 + 2]);
    }
    composite_backward(std::span<const double>(batch.field.density.data() + s0, cnt), colors,
                       std::span<const double>(batch.delta.data() + s0, cnt), opts.background,
                       opts.early_stop_transmittance, dloss_dcolor[r],
                       std::span<double>(ddensity.data() + s0, cnt), dcols);
    for (int k = 0; k < cnt; ++k) {
      dcolor[(s0 + k) * 3 + 0] = dcols[k].x();
      dcolor[(s0 + k) * 3 + 1] = dcols[k].y();
      dcolor[(s0 + k) * 3 + 2] = dcols[k].z();
    }
  }

  std::vector<double> dfeature;
  field_backward_batch(model, batch.field, ddensity, dcolor, grad.mlp, dfeature);

  for (int s = 0; s < n; ++s) {
    for (int p = 0; p < planes; ++p) {
      query_backward(model.ripmaps[p], batch.queries[static_cast<size_t>(s) * planes + p],
                     std::span<const double>(
                         dfeature.data() + static_cast<size_t>(s) * cfg.feature_dim() +
                             static_cast<size_t>(p) * C,
                         C),
                     grad.ripmap_base[p]);
    }
  }
}

Image render_image(const FieldModel& model, const OccupancyGrid& grid, const RenderOptions& opts,
                   const Camera& cam, int scale, int workers) {
  const int w = cam.width / scale;
  const int h = cam.height / scale;
  Image img = Image::zeros(h, w, 4);

  constexpr int kRowsPerBlock = 8;
  const int blocks = (h + kRowsPerBlock - 1) / kRowsPerBlock;
  parallel_for_blocks(blocks, workers, [&](int blk) {
    const int y0 = blk * kRowsPerBlock;
    const int y1 = std::min(h, y0 + kRowsPerBlock);
    std::vector<Ray> rays;
    rays.reserve(static_cast<size_t>(y1 - y0) * w);
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < w; ++x) rays.push_back(pixel_ray(cam, y, x, scale));
    }
    RaySampleBatch batch;
    forward_block(model, grid, opts, rays, batch);
    int idx = 0;
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < w; ++x, ++idx) {
        const auto& o = batch.outputs[idx];
        img.at(y, x, 0) = o.color.x();
        img.at(y, x, 1) = o.color.y();
        img.at(y, x, 2) = o.color.z();
        img.at(y, x, 3) = o.opacity;
      }
    }
  });
  return img;
}

}  // namespace ripnerf
