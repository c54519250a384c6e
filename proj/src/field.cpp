#include "ripnerf/field.hpp"

#include <cmath>
#include <stdexcept>

namespace ripnerf {

int FieldConfig::plane_count() const { return ::ripnerf::plane_count(solid); }

size_t MlpParams::param_count() const {
  size_t n = 0;
  for (const auto& l : density_layers) n += l.weight.size() + l.bias.size();
  for (const auto& l : color_layers) n += l.weight.size() + l.bias.size();
  return n;
}

namespace {

DenseLayer glorot_layer(int in, int out, std::mt19937_64& rng) {
  DenseLayer l;
  l.in = in;
  l.out = out;
  l.weight.resize(static_cast<size_t>(in) * out);
  l.bias.assign(out, 0.0f);
  const double a = std::sqrt(6.0 / (in + out));
  std::uniform_real_distribution<double> dist(-a, a);
  for (auto& w : l.weight) w = static_cast<float>(dist(rng));
  return l;
}

// Parameters live in float storage; the hot loops run on per-call double
// copies so the compiler can keep them in wide registers.
struct LayerScratch {
  std::vector<double> weight;
  std::vector<double> bias;

  void sync(const DenseLayer& l) {
    weight.resize(l.weight.size());
    bias.resize(l.bias.size());
    for (size_t i = 0; i < l.weight.size(); ++i) weight[i] = static_cast<double>(l.weight[i]);
    for (size_t i = 0; i < l.bias.size(); ++i) bias[i] = static_cast<double>(l.bias[i]);
  }
};

struct MlpScratch {
  std::vector<LayerScratch> density;
  std::vector<LayerScratch> color;

  void sync(const MlpParams& p) {
    density.resize(p.density_layers.size());
    color.resize(p.color_layers.size());
    for (size_t i = 0; i < density.size(); ++i) density[i].sync(p.density_layers[i]);
    for (size_t i = 0; i < color.size(); ++i) color[i].sync(p.color_layers[i]);
  }
};

thread_local MlpScratch tls_mlp_scratch;

// one dot product with four fixed-order accumulator chains
inline double dot4(const double* w, const double* x, int n, double bias) {
  double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    a0 += w[i] * x[i];
    a1 += w[i + 1] * x[i + 1];
    a2 += w[i + 2] * x[i + 2];
    a3 += w[i + 3] * x[i + 3];
  }
  double acc = ((a0 + a1) + (a2 + a3)) + bias;
  for (; i < n; ++i) acc += w[i] * x[i];
  return acc;
}

// Y[n x out] = X[n x in] W^T + b
void linear_forward(const LayerScratch& l, int in, int out, const double* x, int n, double* y) {
  for (int s = 0; s < n; ++s) {
    const double* xs = x + static_cast<size_t>(s) * in;
    double* ys = y + static_cast<size_t>(s) * out;
    for (int o = 0; o < out; ++o) {
      ys[o] = dot4(l.weight.data() + static_cast<size_t>(o) * in, xs, in, l.bias[o]);
    }
  }
}

// dX += dY W ; dW += dY^T X ; db += sum(dY). dx may be null.
void linear_backward(const LayerScratch& l, int in, int out, const double* x, const double* dy,
                     int n, double* dx, LayerGrad& g) {
  for (int s = 0; s < n; ++s) {
    const double* xs = x + static_cast<size_t>(s) * in;
    const double* dys = dy + static_cast<size_t>(s) * out;
    double* dxs = dx ? dx + static_cast<size_t>(s) * in : nullptr;
    for (int o = 0; o < out; ++o) {
      const double d = dys[o];
      if (d == 0.0) continue;
      g.bias[o] += d;
      const double* w = l.weight.data() + static_cast<size_t>(o) * in;
      double* gw = g.weight.data() + static_cast<size_t>(o) * in;
      if (dxs) {
        for (int i = 0; i < in; ++i) {
          gw[i] += d * xs[i];
          dxs[i] += d * w[i];
        }
      } else {
        for (int i = 0; i < in; ++i) gw[i] += d * xs[i];
      }
    }
  }
}

void relu_inplace(std::vector<double>& v) {
  for (auto& x : v) x = x > 0.0 ? x : 0.0;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

MlpParams make_mlp(const FieldConfig& cfg, std::mt19937_64& rng) {
  MlpParams p;
  p.density_layers.push_back(glorot_layer(cfg.feature_dim(), cfg.mlp_width, rng));
  p.density_layers.push_back(glorot_layer(cfg.mlp_width, 1 + FieldConfig::kGeoDim, rng));
  const int color_in = FieldConfig::kGeoDim + cfg.sh_dim();
  p.color_layers.push_back(glorot_layer(color_in, cfg.mlp_width, rng));
  p.color_layers.push_back(glorot_layer(cfg.mlp_width, cfg.mlp_width, rng));
  p.color_layers.push_back(glorot_layer(cfg.mlp_width, 3, rng));
  return p;
}

FieldModel make_field_model(const FieldConfig& cfg, std::mt19937_64& rng) {
  FieldModel m;
  m.cfg = cfg;
  m.planes = platonic_plane_set(cfg.solid);
  std::uniform_real_distribution<double> dist(-0.01, 0.01);
  for (int p = 0; p < cfg.plane_count(); ++p) {
    FeatureGrid base = FeatureGrid::zeros(cfg.grid_h, cfg.grid_w, cfg.channels);
    for (auto& v : base.values) v = static_cast<float>(dist(rng));
    m.ripmaps.push_back(build_pyramid(std::move(base)));
  }
  m.mlp = make_mlp(cfg, rng);
  return m;
}

FieldModel make_field_model(const FieldConfig& cfg, uint64_t seed) {
  std::mt19937_64 rng(seed);
  return make_field_model(cfg, rng);
}

void refresh_model(FieldModel& model) {
  for (auto& rm : model.ripmaps) {
    if (rm.dirty) refresh_pyramid(rm);
  }
}

size_t learnable_param_count(const FieldModel& model) {
  size_t n = model.mlp.param_count();
  for (const auto& rm : model.ripmaps) n += rm.base.values.size();
  return n;
}

size_t serialized_param_bytes(const FieldModel& model) {
  return learnable_param_count(model) * sizeof(float);
}

void sh_encode(const Vec3& direction, int degree, std::span<double> out) {
  if (degree < 1 || degree > 4) throw std::invalid_argument("sh degree must be in [1, 4]");
  const double n = direction.norm();
  if (!(n > 0.0)) throw std::domain_error("sh direction must be nonzero");
  const double x = direction.x() / n, y = direction.y() / n, z = direction.z() / n;
  const double xx = x * x, yy = y * y, zz = z * z;

  out[0] = 0.28209479177387814;
  if (degree > 1) {
    out[1] = 0.4886025119029199 * y;
    out[2] = 0.4886025119029199 * z;
    out[3] = 0.4886025119029199 * x;
  }
  if (degree > 2) {
    out[4] = 1.0925484305920792 * x * y;
    out[5] = 1.0925484305920792 * y * z;
    out[6] = 0.31539156525252005 * (3.0 * zz - 1.0);
    out[7] = 1.0925484305920792 * x * z;
    out[8] = 0.5462742152960396 * (xx - yy);
  }
  if (degree > 3) {
    out[9] = 0.5900435899266435 * y * (3.0 * xx - yy);
    out[10] = 2.890611442640554 * x * y * z;
    out[11] = 0.4570457994644658 * y * (5.0 * zz - 1.0);
    out[12] = 0.3731763325901154 * z * (5.0 * zz - 3.0);
    out[13] = 0.4570457994644658 * x * (5.0 * zz - 1.0);
    out[14] = 1.445305721320277 * z * (xx - yy);
    out[15] = 0.5900435899266435 * x * (xx - 3.0 * yy);
  }
}

RipmapQuery derive_plane_query(const Gaussian2& g2, const FieldConfig& cfg, int levels_x,
                               int levels_y) {
  if (cfg.encoding_mode == EncodingMode::Ripmap) {
    return derive_query(g2, cfg.scene_radius, cfg.mass_factor, levels_x, levels_y);
  }
  // Isotropic ablation: one shared level from the mean variance.
  Gaussian2 iso = g2;
  const double mean_var = 0.5 * (std::max(0.0, g2.cov(0, 0)) + std::max(0.0, g2.cov(1, 1)));
  iso.cov = Mat2::Identity() * mean_var;
  return derive_query(iso, cfg.scene_radius, cfg.mass_factor, levels_x, levels_y);
}

void featurize(const Gaussian3& g, const FieldModel& model, std::span<double> out_feature,
               RipmapQuery* out_queries) {
  const int planes = model.cfg.plane_count();
  const int C = model.cfg.channels;
  for (int p = 0; p < planes; ++p) {
    const Ripmap& rm = model.ripmaps[p];
    const Gaussian2 g2 = project_gaussian(g, model.planes.planes[p]);
    const RipmapQuery q = derive_plane_query(g2, model.cfg, rm.levels_x, rm.levels_y);
    if (out_queries) out_queries[p] = q;
    query(rm, q, out_feature.subspan(static_cast<size_t>(p) * C, C));
  }
}

void FieldBatch::resize(int samples, const FieldConfig& cfg) {
  n = samples;
  feature.assign(static_cast<size_t>(n) * cfg.feature_dim(), 0.0);
  sh.assign(static_cast<size_t>(n) * cfg.sh_dim(), 0.0);
  raw_density.assign(n, 0.0);
  density.assign(n, 0.0);
  geo.assign(static_cast<size_t>(n) * FieldConfig::kGeoDim, 0.0);
  color.assign(static_cast<size_t>(n) * 3, 0.0);
}

void field_density_batch(const FieldModel& model, FieldBatch& b) {
  const auto& mlp = model.mlp;
  const FieldConfig& cfg = model.cfg;
  const int n = b.n;
  if (n == 0) return;
  const int width = cfg.mlp_width;
  constexpr int kGeo = FieldConfig::kGeoDim;

  MlpScratch& ws = tls_mlp_scratch;
  ws.sync(mlp);

  std::vector<double> h1(static_cast<size_t>(n) * width);
  std::vector<double> out2(static_cast<size_t>(n) * (1 + kGeo));
  linear_forward(ws.density[0], cfg.feature_dim(), width, b.feature.data(), n, h1.data());
  relu_inplace(h1);
  linear_forward(ws.density[1], width, 1 + kGeo, h1.data(), n, out2.data());

  for (int s = 0; s < n; ++s) {
    const double raw = out2[static_cast<size_t>(s) * (1 + kGeo)];
    b.raw_density[s] = raw;
    b.density[s] = std::exp(std::clamp(raw, -cfg.density_clamp, cfg.density_clamp));
    for (int k = 0; k < kGeo; ++k) {
      b.geo[static_cast<size_t>(s) * kGeo + k] = out2[static_cast<size_t>(s) * (1 + kGeo) + 1 + k];
    }
  }
}

void field_forward_batch(const FieldModel& model, FieldBatch& b) {
  const FieldConfig& cfg = model.cfg;
  const int n = b.n;
  if (n == 0) return;
  const int width = cfg.mlp_width;
  constexpr int kGeo = FieldConfig::kGeoDim;

  field_density_batch(model, b);
  MlpScratch& ws = tls_mlp_scratch;  // synced by field_density_batch

  const int cin = kGeo + cfg.sh_dim();
  std::vector<double> xc(static_cast<size_t>(n) * cin);
  for (int s = 0; s < n; ++s) {
    double* row = xc.data() + static_cast<size_t>(s) * cin;
    for (int k = 0; k < kGeo; ++k) row[k] = b.geo[static_cast<size_t>(s) * kGeo + k];
    for (int k = 0; k < cfg.sh_dim(); ++k) {
      row[kGeo + k] = b.sh[static_cast<size_t>(s) * cfg.sh_dim() + k];
    }
  }
  std::vector<double> g1(static_cast<size_t>(n) * width);
  std::vector<double> g2(static_cast<size_t>(n) * width);
  std::vector<double> zc(static_cast<size_t>(n) * 3);
  linear_forward(ws.color[0], cin, width, xc.data(), n, g1.data());
  relu_inplace(g1);
  linear_forward(ws.color[1], width, width, g1.data(), n, g2.data());
  relu_inplace(g2);
  linear_forward(ws.color[2], width, 3, g2.data(), n, zc.data());
  for (size_t i = 0; i < zc.size(); ++i) b.color[i] = sigmoid(zc[i]);
}

void field_backward_batch(const FieldModel& model, const FieldBatch& b,
                          std::span<const double> ddensity, std::span<const double> dcolor,
                          MlpGrad& grad, std::vector<double>& dfeature) {
  const FieldConfig& cfg = model.cfg;
  const int n = b.n;
  dfeature.assign(static_cast<size_t>(n) * cfg.feature_dim(), 0.0);
  if (n == 0) return;
  const int width = cfg.mlp_width;
  constexpr int kGeo = FieldConfig::kGeoDim;
  const int cin = kGeo + cfg.sh_dim();
  const int fdim = cfg.feature_dim();

  MlpScratch& ws = tls_mlp_scratch;
  ws.sync(model.mlp);

  // recompute the forward activations (cheaper than caching per sample)
  std::vector<double> a1(static_cast<size_t>(n) * width);
  linear_forward(ws.density[0], fdim, width, b.feature.data(), n, a1.data());
  std::vector<double> h1 = a1;
  relu_inplace(h1);

  std::vector<double> xc(static_cast<size_t>(n) * cin);
  for (int s = 0; s < n; ++s) {
    double* row = xc.data() + static_cast<size_t>(s) * cin;
    for (int k = 0; k < kGeo; ++k) row[k] = b.geo[static_cast<size_t>(s) * kGeo + k];
    for (int k = 0; k < cfg.sh_dim(); ++k) {
      row[kGeo + k] = b.sh[static_cast<size_t>(s) * cfg.sh_dim() + k];
    }
  }
  std::vector<double> c1(static_cast<size_t>(n) * width);
  linear_forward(ws.color[0], cin, width, xc.data(), n, c1.data());
  std::vector<double> r1 = c1;
  relu_inplace(r1);
  std::vector<double> c2(static_cast<size_t>(n) * width);
  linear_forward(ws.color[1], width, width, r1.data(), n, c2.data());
  std::vector<double> r2 = c2;
  relu_inplace(r2);

  // color head: d sigmoid(z) = c (1 - c)
  std::vector<double> dz(static_cast<size_t>(n) * 3);
  for (size_t i = 0; i < dz.size(); ++i) {
    const double c = b.color[i];
    dz[i] = dcolor[i] * c * (1.0 - c);
  }
  std::vector<double> dr2(static_cast<size_t>(n) * width, 0.0);
  linear_backward(ws.color[2], width, 3, r2.data(), dz.data(), n, dr2.data(),
                  grad.color_layers[2]);
  for (size_t i = 0; i < dr2.size(); ++i) {
    if (c2[i] <= 0.0) dr2[i] = 0.0;
  }
  std::vector<double> dr1(static_cast<size_t>(n) * width, 0.0);
  linear_backward(ws.color[1], width, width, r1.data(), dr2.data(), n, dr1.data(),
                  grad.color_layers[1]);
  for (size_t i = 0; i < dr1.size(); ++i) {
    if (c1[i] <= 0.0) dr1[i] = 0.0;
  }
  std::vector<double> dxc(static_cast<size_t>(n) * cin, 0.0);
  linear_backward(ws.color[0], cin, width, xc.data(), dr1.data(), n, dxc.data(),
                  grad.color_layers[0]);

  // density head: combine d tau and the geo slice of the color-branch input
  std::vector<double> dout2(static_cast<size_t>(n) * (1 + kGeo));
  for (int s = 0; s < n; ++s) {
    const double raw = b.raw_density[s];
    const bool inside = raw > -cfg.density_clamp && raw < cfg.density_clamp;
    dout2[static_cast<size_t>(s) * (1 + kGeo)] = inside ? ddensity[s] * b.density[s] : 0.0;
    for (int k = 0; k < kGeo; ++k) {
      dout2[static_cast<size_t>(s) * (1 + kGeo) + 1 + k] = dxc[static_cast<size_t>(s) * cin + k];
    }
  }
  std::vector<double> dh1(static_cast<size_t>(n) * width, 0.0);
  linear_backward(ws.density[1], width, 1 + kGeo, h1.data(), dout2.data(), n, dh1.data(),
                  grad.density_layers[1]);
  for (size_t i = 0; i < dh1.size(); ++i) {
    if (a1[i] <= 0.0) dh1[i] = 0.0;
  }
  linear_backward(ws.density[0], fdim, width, b.feature.data(), dh1.data(), n, dfeature.data(),
                  grad.density_layers[0]);
}

FieldSample decode(std::span<const double> feature, const Vec3& direction, const MlpParams& mlp,
                   const FieldConfig& cfg) {
  if (static_cast<int>(feature.size()) != cfg.feature_dim()) {
    throw std::invalid_argument("feature dimension mismatch");
  }
  FieldModel shim;  // decode reuses the batched path with n = 1
  shim.cfg = cfg;
  shim.mlp = mlp;
  FieldBatch b;
  b.resize(1, cfg);
  std::copy(feature.begin(), feature.end(), b.feature.begin());
  sh_encode(direction, cfg.sh_degree, std::span<double>(b.sh.data(), cfg.sh_dim()));
  field_forward_batch(shim, b);
  FieldSample s;
  s.density = b.density[0];
  s.color = Vec3(b.color[0], b.color[1], b.color[2]);
  for (int k = 0; k < FieldConfig::kGeoDim; ++k) s.geo[k] = b.geo[k];
  return s;
}

MlpGrad MlpGrad::zeros_like(const MlpParams& p) {
  MlpGrad g;
  auto zero = [](const DenseLayer& l) {
    LayerGrad lg;
    lg.weight.assign(l.weight.size(), 0.0);
    lg.bias.assign(l.bias.size(), 0.0);
    return lg;
  };
  for (const auto& l : p.density_layers) g.density_layers.push_back(zero(l));
  for (const auto& l : p.color_layers) g.color_layers.push_back(zero(l));
  return g;
}

void MlpGrad::add(const MlpGrad& other) {
  for (size_t i = 0; i < density_layers.size(); ++i) {
    auto& a = density_layers[i];
    const auto& o = other.density_layers[i];
    for (size_t k = 0; k < a.weight.size(); ++k) a.weight[k] += o.weight[k];
    for (size_t k = 0; k < a.bias.size(); ++k) a.bias[k] += o.bias[k];
  }
  for (size_t i = 0; i < color_layers.size(); ++i) {
    auto& a = color_layers[i];
    const auto& o = other.color_layers[i];
    for (size_t k = 0; k < a.weight.size(); ++k) a.weight[k] += o.weight[k];
    for (size_t k = 0; k < a.bias.size(); ++k) a.bias[k] += o.bias[k];
  }
}

void MlpGrad::clear() {
  for (auto& l : density_layers) {
    std::fill(l.weight.begin(), l.weight.end(), 0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
  for (auto& l : color_layers) {
    std::fill(l.weight.begin(), l.weight.end(), 0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
}

FieldGrad FieldGrad::zeros_like(const FieldModel& m) {
  FieldGrad g;
  g.mlp = MlpGrad::zeros_like(m.mlp);
  for (const auto& rm : m.ripmaps) g.ripmap_base.emplace_back(rm.base.values.size(), 0.0);
  return g;
}

void FieldGrad::add(const FieldGrad& other) {
  mlp.add(other.mlp);
  for (size_t p = 0; p < ripmap_base.size(); ++p) {
    auto& a = ripmap_base[p];
    const auto& o = other.ripmap_base[p];
    for (size_t k = 0; k < a.size(); ++k) a[k] += o[k];
  }
}

void FieldGrad::clear() {
  mlp.clear();
  for (auto& g : ripmap_base) std::fill(g.begin(), g.end(), 0.0);
}

}  // namespace ripnerf
