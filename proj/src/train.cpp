#include "ripnerf/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ripnerf/metrics.hpp"
#include "ripnerf/parallel.hpp"

namespace ripnerf {

std::vector<int> default_milestones(int iterations) {
  // published schedule hits {60k, 90k, 100k, 108k} of 120k
  const double ratios[] = {0.5, 0.75, 5.0 / 6.0, 0.9};
  std::vector<int> out;
  for (double r : ratios) {
    const int m = static_cast<int>(std::lround(r * iterations));
    if (m > 0 && m < iterations && (out.empty() || m > out.back())) out.push_back(m);
  }
  return out;
}

double lr_at(const TrainConfig& cfg, long long iteration) {
  const std::vector<int> milestones =
      cfg.lr_milestones.empty() ? default_milestones(cfg.iterations) : cfg.lr_milestones;
  int hits = 0;
  for (int m : milestones) {
    if (m <= iteration) ++hits;
  }
  return cfg.lr_base * std::pow(cfg.lr_gamma, hits);
}

double area_weighted_loss(const Vec3& pred, const Vec3& target, double pixel_radius_ratio) {
  if (!(pixel_radius_ratio > 0.0)) throw std::invalid_argument("radius ratio must be positive");
  const double w = pixel_radius_ratio * pixel_radius_ratio;
  return w * (pred - target).squaredNorm();
}

void optimizer_step(std::span<float> params, std::span<const double> grads, std::span<double> m,
                    std::span<double> v, double lr, double weight_decay, long long t,
                    const char* label) {
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-15;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
  for (size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    if (std::isnan(g)) {
      throw NumericAbort(std::string("NaN gradient in ") + label + " at index " +
                         std::to_string(i) + " (step " + std::to_string(t) + ")");
    }
    m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g;
    v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g * g;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    const double p = static_cast<double>(params[i]);
    params[i] = static_cast<float>(p - lr * (mhat / (std::sqrt(vhat) + kEps) + weight_decay * p));
  }
}

Trainer::Trainer(const FieldConfig& field_cfg, const TrainConfig& train_cfg,
                 const RenderOptions& render_options)
    : cfg(train_cfg), render_opts(render_options), rng(train_cfg.seed) {
  model = make_field_model(field_cfg, rng);
  grid = OccupancyGrid::make(cfg.occupancy_resolution, field_cfg.scene_radius,
                             cfg.occupancy_threshold);
  size_t rip = 0;
  for (const auto& rm : model.ripmaps) rip += rm.base.values.size();
  moments_ripmap_m.assign(rip, 0.0);
  moments_ripmap_v.assign(rip, 0.0);
  moments_mlp_m.assign(model.mlp.param_count(), 0.0);
  moments_mlp_v.assign(model.mlp.param_count(), 0.0);
  current_batch_rays = cfg.batch_rays;
}

void Trainer::apply_gradients(const FieldGrad& grad) {
  const double lr = lr_at(cfg, iteration);
  const long long t = iteration + 1;

  size_t off = 0;
  for (size_t p = 0; p < model.ripmaps.size(); ++p) {
    auto& vals = model.ripmaps[p].base.values;
    const size_t n = vals.size();
    optimizer_step(std::span<float>(vals.data(), n),
                   std::span<const double>(grad.ripmap_base[p].data(), n),
                   std::span<double>(moments_ripmap_m.data() + off, n),
                   std::span<double>(moments_ripmap_v.data() + off, n),
                   lr * cfg.lr_ripmap_multiplier, cfg.weight_decay, t, "ripmap");
    model.ripmaps[p].dirty = true;
    off += n;
  }

  off = 0;
  auto step_layer = [&](DenseLayer& layer, const LayerGrad& g, const char* label) {
    optimizer_step(std::span<float>(layer.weight.data(), layer.weight.size()),
                   std::span<const double>(g.weight.data(), g.weight.size()),
                   std::span<double>(moments_mlp_m.data() + off, layer.weight.size()),
                   std::span<double>(moments_mlp_v.data() + off, layer.weight.size()), lr,
                   cfg.weight_decay, t, label);
    off += layer.weight.size();
    optimizer_step(std::span<float>(layer.bias.data(), layer.bias.size()),
                   std::span<const double>(g.bias.data(), g.bias.size()),
                   std::span<double>(moments_mlp_m.data() + off, layer.bias.size()),
                   std::span<double>(moments_mlp_v.data() + off, layer.bias.size()), lr,
                   cfg.weight_decay, t, label);
    off += layer.bias.size();
  };
  for (size_t i = 0; i < model.mlp.density_layers.size(); ++i) {
    step_layer(model.mlp.density_layers[i], grad.mlp.density_layers[i], "mlp density");
  }
  for (size_t i = 0; i < model.mlp.color_layers.size(); ++i) {
    step_layer(model.mlp.color_layers[i], grad.mlp.color_layers[i], "mlp color");
  }

  refresh_model(model);
}

double Trainer::step(const ScaledDataset& train_data) {
  if (train_data.views.empty()) throw DataError("training dataset has no views");
  grid.force_all = iteration < cfg.occupancy_warmup;
  if (iteration % cfg.occupancy_update_every == 0) {
    const double sigma = 0.5 * grid.cell_size();
    update_occupancy_batch(
        grid,
        [&](std::span<const Vec3> points, std::span<double> out) {
          density_probe_batch(model, points, sigma, out, cfg.workers);
        },
        rng);
  }

  // uniform draw over all training pixels across all scales
  std::vector<size_t> prefix(train_data.views.size() + 1, 0);
  for (size_t i = 0; i < train_data.views.size(); ++i) {
    const auto& img = train_data.views[i].image;
    prefix[i + 1] = prefix[i] + static_cast<size_t>(img.width) * img.height;
  }
  std::uniform_int_distribution<size_t> pick(0, prefix.back() - 1);

  const int nrays = current_batch_rays;
  std::vector<Ray> rays(nrays);
  std::vector<Vec3> targets(nrays);
  std::vector<double> weights(nrays);
  for (int i = 0; i < nrays; ++i) {
    const size_t g = pick(rng);
    const size_t view_idx =
        std::upper_bound(prefix.begin(), prefix.end(), g) - prefix.begin() - 1;
    const auto& view = train_data.views[view_idx];
    const size_t local = g - prefix[view_idx];
    const int row = static_cast<int>(local / view.image.width);
    const int col = static_cast<int>(local % view.image.width);
    rays[i] = pixel_ray(view.camera, row, col, 1);
    targets[i] = view_target_rgb(view, row, col, render_opts.background);
    weights[i] = cfg.loss == LossKind::AreaWeightedL2
                     ? static_cast<double>(view.scale) * view.scale
                     : 1.0;
  }

  const int nblocks = (nrays + cfg.block_rays - 1) / cfg.block_rays;
  while (static_cast<int>(block_grads_.size()) < nblocks) {
    block_grads_.push_back(FieldGrad::zeros_like(model));
  }
  std::vector<double> block_loss(nblocks, 0.0);
  std::vector<long long> block_samples(nblocks, 0);

  parallel_for_blocks(nblocks, cfg.workers, [&](int b) {
    const int r0 = b * cfg.block_rays;
    const int r1 = std::min(nrays, r0 + cfg.block_rays);
    const std::span<const Ray> block_rays(rays.data() + r0, r1 - r0);

    RaySampleBatch batch;
    forward_block(model, grid, render_opts, block_rays, batch);

    double loss = 0.0;
    std::vector<Vec3> dcolor(block_rays.size());
    for (size_t r = 0; r < block_rays.size(); ++r) {
      const Vec3 diff = batch.outputs[r].color - targets[r0 + r];
      const double w = weights[r0 + r];
      loss += w * diff.squaredNorm();
      dcolor[r] = (2.0 * w / nrays) * diff;
    }
    block_loss[b] = loss;
    block_samples[b] = batch.sample_count();
    block_grads_[b].clear();
    backward_block(model, render_opts, block_rays, batch, dcolor, block_grads_[b]);
  });

  // fixed block-order reduction keeps results independent of worker count
  double loss_sum = 0.0;
  long long samples = 0;
  FieldGrad& total = block_grads_[0];
  for (int b = 1; b < nblocks; ++b) total.add(block_grads_[b]);
  for (int b = 0; b < nblocks; ++b) {
    loss_sum += block_loss[b];
    samples += block_samples[b];
  }

  apply_gradients(total);

  if (cfg.dynamic_batch && samples > 0) {
    const double avg = static_cast<double>(samples) / nrays;
    const int next = static_cast<int>(std::lround(cfg.target_samples_per_batch / avg));
    current_batch_rays = std::clamp(next, cfg.min_batch_rays, cfg.max_batch_rays);
  }

  ++iteration;
  return loss_sum / nrays;
}

TrainResult train_loop(Trainer& trainer, const ScaledDataset& train_data,
                       const ScaledDataset* val_data, int iterations) {
  TrainResult result;
  result.loss_trace.reserve(iterations);
  for (int i = 0; i < iterations; ++i) {
    result.loss_trace.push_back(trainer.step(train_data));
    if (trainer.cfg.validate_every > 0 && val_data && !val_data->views.empty() &&
        trainer.iteration % trainer.cfg.validate_every == 0) {
      const auto& view = val_data->views.front();
      const Image render = render_image(trainer.model, trainer.grid, trainer.render_opts,
                                        view.camera, view.scale, trainer.cfg.workers);
      Image target = Image::zeros(view.image.height, view.image.width, 3);
      Image pred = Image::zeros(view.image.height, view.image.width, 3);
      for (int y = 0; y < view.image.height; ++y) {
        for (int x = 0; x < view.image.width; ++x) {
          const Vec3 t = view_target_rgb(view, y, x, trainer.render_opts.background);
          for (int c = 0; c < 3; ++c) {
            target.at(y, x, c) = t[c];
            pred.at(y, x, c) = render.at(y, x, c);
          }
        }
      }
      result.val_psnr.emplace_back(trainer.iteration, psnr(pred, target));
    }
  }
  return result;
}

// ---- checkpoint I/O ----------------------------------------------------------

uint64_t fnv1a64(std::string_view text) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

constexpr uint32_t kVersion = 1;

void write_bytes(std::ostream& out, const void* p, size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void write_pod(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  write_bytes(out, &v, sizeof(T));  // little-endian hosts only
}

void write_f32(std::ostream& out, std::span<const float> v) {
  write_bytes(out, v.data(), v.size() * sizeof(float));
}

void write_f64(std::ostream& out, std::span<const double> v) {
  write_bytes(out, v.data(), v.size() * sizeof(double));
}

struct SectionReader {
  std::istream& in;
  std::string name;

  void read_bytes(void* p, size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in) throw DataError("checkpoint truncated in section '" + name + "'");
  }
  template <typename T>
  T read_pod() {
    T v{};
    read_bytes(&v, sizeof(T));
    return v;
  }
};

void write_section(std::ostream& out, const char tag[4], const std::string& payload) {
  write_bytes(out, tag, 4);
  write_pod<uint64_t>(out, payload.size());
  write_bytes(out, payload.data(), payload.size());
}

std::string expect_section(std::istream& in, const std::string& tag) {
  char got[4];
  in.read(got, 4);
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::string(got, 4) != tag) {
    throw DataError("checkpoint missing section '" + tag + "'");
  }
  std::string payload(len, '\0');
  in.read(payload.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("checkpoint truncated in section '" + tag + "'");
  return payload;
}

}  // namespace

void save_checkpoint(const std::string& path, const Trainer& trainer,
                     const std::string& config_snapshot, const std::string& config_identity) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path);
  out.write("RIPF", 4);
  write_pod<uint32_t>(out, kVersion);
  write_pod<uint64_t>(out, fnv1a64(config_identity));
  write_pod<uint64_t>(out, static_cast<uint64_t>(trainer.iteration));
  write_pod<uint32_t>(out, static_cast<uint32_t>(trainer.current_batch_rays));
  write_pod<uint64_t>(out, config_snapshot.size());
  write_bytes(out, config_snapshot.data(), config_snapshot.size());

  {
    std::ostringstream s;
    write_pod<uint32_t>(s, static_cast<uint32_t>(trainer.model.ripmaps.size()));
    for (const auto& rm : trainer.model.ripmaps) {
      write_pod<uint32_t>(s, static_cast<uint32_t>(rm.base.height));
      write_pod<uint32_t>(s, static_cast<uint32_t>(rm.base.width));
      write_pod<uint32_t>(s, static_cast<uint32_t>(rm.base.channels));
      write_f32(s, rm.base.values);
    }
    write_section(out, "ripm", s.str());
  }
  {
    std::ostringstream s;
    auto dump_layers = [&](const std::vector<DenseLayer>& layers) {
      write_pod<uint32_t>(s, static_cast<uint32_t>(layers.size()));
      for (const auto& l : layers) {
        write_pod<uint32_t>(s, static_cast<uint32_t>(l.in));
        write_pod<uint32_t>(s, static_cast<uint32_t>(l.out));
        write_f32(s, l.weight);
        write_f32(s, l.bias);
      }
    };
    dump_layers(trainer.model.mlp.density_layers);
    dump_layers(trainer.model.mlp.color_layers);
    write_section(out, "mlp ", s.str());
  }
  {
    std::ostringstream s;
    write_pod<uint64_t>(s, trainer.moments_ripmap_m.size());
    write_f64(s, trainer.moments_ripmap_m);
    write_f64(s, trainer.moments_ripmap_v);
    write_pod<uint64_t>(s, trainer.moments_mlp_m.size());
    write_f64(s, trainer.moments_mlp_m);
    write_f64(s, trainer.moments_mlp_v);
    write_section(out, "momt", s.str());
  }
  {
    std::ostringstream s;
    std::ostringstream state;
    state << trainer.rng;
    const std::string str = state.str();
    write_pod<uint64_t>(s, str.size());
    write_bytes(s, str.data(), str.size());
    write_section(out, "rng ", s.str());
  }
  {
    std::ostringstream s;
    write_pod<uint32_t>(s, static_cast<uint32_t>(trainer.grid.resolution));
    write_bytes(s, trainer.grid.cache.data(), trainer.grid.cache.size() * sizeof(float));
    write_bytes(s, trainer.grid.occupied.data(), trainer.grid.occupied.size());
    write_section(out, "occu", s.str());
  }
  if (!out) throw DataError("failed while writing checkpoint: " + path);
}

namespace {

struct Header {
  uint64_t config_hash = 0;
  uint64_t iteration = 0;
  uint32_t batch_rays = 0;
  std::string config_json;
};

Header read_header(std::istream& in, const std::string& path) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "RIPF") {
    throw DataError("not a checkpoint file (bad magic): " + path);
  }
  SectionReader r{in, "header"};
  const uint32_t version = r.read_pod<uint32_t>();
  if (version != kVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  Header h;
  h.config_hash = r.read_pod<uint64_t>();
  h.iteration = r.read_pod<uint64_t>();
  h.batch_rays = r.read_pod<uint32_t>();
  const uint64_t len = r.read_pod<uint64_t>();
  h.config_json.resize(len);
  r.read_bytes(h.config_json.data(), len);
  return h;
}

}  // namespace

std::string read_checkpoint_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  return read_header(in, path).config_json;
}

void load_checkpoint(const std::string& path, Trainer& trainer,
                     const std::string& expected_config_identity) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  const Header h = read_header(in, path);
  if (h.config_hash != fnv1a64(expected_config_identity)) {
    throw DataError("checkpoint config hash mismatch for " + path);
  }
  trainer.iteration = static_cast<long long>(h.iteration);
  trainer.current_batch_rays = static_cast<int>(h.batch_rays);

  {
    std::istringstream s(expect_section(in, "ripm"));
    SectionReader r{s, "ripm"};
    const uint32_t planes = r.read_pod<uint32_t>();
    if (planes != trainer.model.ripmaps.size()) {
      throw DataError("checkpoint ripmap count mismatch");
    }
    for (auto& rm : trainer.model.ripmaps) {
      const uint32_t hgt = r.read_pod<uint32_t>();
      const uint32_t wid = r.read_pod<uint32_t>();
      const uint32_t ch = r.read_pod<uint32_t>();
      if (static_cast<int>(hgt) != rm.base.height || static_cast<int>(wid) != rm.base.width ||
          static_cast<int>(ch) != rm.base.channels) {
        throw DataError("checkpoint ripmap shape mismatch");
      }
      r.read_bytes(rm.base.values.data(), rm.base.values.size() * sizeof(float));
      rm.dirty = true;
    }
  }
  {
    std::istringstream s(expect_section(in, "mlp "));
    SectionReader r{s, "mlp "};
    auto load_layers = [&](std::vector<DenseLayer>& layers) {
      const uint32_t count = r.read_pod<uint32_t>();
      if (count != layers.size()) throw DataError("checkpoint mlp layer count mismatch");
      for (auto& l : layers) {
        const uint32_t in_dim = r.read_pod<uint32_t>();
        const uint32_t out_dim = r.read_pod<uint32_t>();
        if (static_cast<int>(in_dim) != l.in || static_cast<int>(out_dim) != l.out) {
          throw DataError("checkpoint mlp layer shape mismatch");
        }
        r.read_bytes(l.weight.data(), l.weight.size() * sizeof(float));
        r.read_bytes(l.bias.data(), l.bias.size() * sizeof(float));
      }
    };
    load_layers(trainer.model.mlp.density_layers);
    load_layers(trainer.model.mlp.color_layers);
  }
  {
    std::istringstream s(expect_section(in, "momt"));
    SectionReader r{s, "momt"};
    const uint64_t rip = r.read_pod<uint64_t>();
    if (rip != trainer.moments_ripmap_m.size()) throw DataError("checkpoint moment size mismatch");
    r.read_bytes(trainer.moments_ripmap_m.data(), rip * sizeof(double));
    r.read_bytes(trainer.moments_ripmap_v.data(), rip * sizeof(double));
    const uint64_t mlp = r.read_pod<uint64_t>();
    if (mlp != trainer.moments_mlp_m.size()) throw DataError("checkpoint moment size mismatch");
    r.read_bytes(trainer.moments_mlp_m.data(), mlp * sizeof(double));
    r.read_bytes(trainer.moments_mlp_v.data(), mlp * sizeof(double));
  }
  {
    std::istringstream s(expect_section(in, "rng "));
    SectionReader r{s, "rng "};
    const uint64_t len = r.read_pod<uint64_t>();
    std::string state(len, '\0');
    r.read_bytes(state.data(), len);
    std::istringstream st(state);
    st >> trainer.rng;
    if (!st) throw DataError("checkpoint rng state is corrupt");
  }
  {
    std::istringstream s(expect_section(in, "occu"));
    SectionReader r{s, "occu"};
    const uint32_t res = r.read_pod<uint32_t>();
    if (static_cast<int>(res) != trainer.grid.resolution) {
      throw DataError("checkpoint occupancy resolution mismatch");
    }
    r.read_bytes(trainer.grid.cache.data(), trainer.grid.cache.size() * sizeof(float));
    r.read_bytes(trainer.grid.occupied.data(), trainer.grid.occupied.size());
  }
  refresh_model(trainer.model);
}

}  // namespace ripnerf
