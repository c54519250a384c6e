#include "ripnerf/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

using nlohmann::json;

namespace ripnerf {

namespace {

void require_keys(const json& j, std::initializer_list<const char*> allowed,
                  const std::string& where) {
  if (!j.is_object()) throw UsageError(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find_if(allowed.begin(), allowed.end(),
                     [&](const char* k) { return it.key() == k; }) == allowed.end()) {
      throw UsageError("unknown config key '" + where + "." + it.key() + "'");
    }
  }
}

Vec3 vec3_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw UsageError(where + " must be a 3-element array");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

json vec3_to(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

}  // namespace

RenderOptions RunConfig::render_options() const {
  RenderOptions o;
  o.step_world = 2.0 * std::sqrt(3.0) * field.scene_radius / render.step_divisor;
  o.max_samples = render.max_samples;
  o.early_stop_transmittance = render.early_stop_transmittance;
  o.background = render.background;
  return o;
}

RunConfig default_run_config() { return RunConfig{}; }

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw UsageError(std::string("malformed config JSON: ") + e.what());
  }
  require_keys(j, {"seed", "workers", "out", "field", "train", "render", "data"}, "config");

  RunConfig cfg;
  cfg.seed = j.value("seed", cfg.seed);
  cfg.workers = j.value("workers", cfg.workers);
  cfg.out = j.value("out", cfg.out);

  if (j.contains("field")) {
    const json& f = j["field"];
    require_keys(f,
                 {"solid", "grid_h", "grid_w", "channels", "mlp_width", "sh_degree",
                  "density_clamp", "mass_factor", "scene_radius", "encoding"},
                 "field");
    if (f.contains("solid")) cfg.field.solid = parse_solid(f["solid"].get<std::string>());
    cfg.field.grid_h = f.value("grid_h", cfg.field.grid_h);
    cfg.field.grid_w = f.value("grid_w", cfg.field.grid_w);
    cfg.field.channels = f.value("channels", cfg.field.channels);
    cfg.field.mlp_width = f.value("mlp_width", cfg.field.mlp_width);
    cfg.field.sh_degree = f.value("sh_degree", cfg.field.sh_degree);
    cfg.field.density_clamp = f.value("density_clamp", cfg.field.density_clamp);
    cfg.field.mass_factor = f.value("mass_factor", cfg.field.mass_factor);
    cfg.field.scene_radius = f.value("scene_radius", cfg.field.scene_radius);
    if (f.contains("encoding")) {
      const std::string e = f["encoding"].get<std::string>();
      if (e == "ripmap") {
        cfg.field.encoding_mode = EncodingMode::Ripmap;
      } else if (e == "isotropic_mipmap") {
        cfg.field.encoding_mode = EncodingMode::IsotropicMipmap;
      } else {
        throw UsageError("field.encoding must be 'ripmap' or 'isotropic_mipmap'");
      }
    }
  }

  if (j.contains("train")) {
    const json& t = j["train"];
    require_keys(t,
                 {"iterations", "batch_rays", "dynamic_batch", "target_samples_per_batch",
                  "min_batch_rays", "max_batch_rays", "lr_base", "lr_ripmap_multiplier",
                  "weight_decay", "lr_milestones", "lr_gamma", "loss", "occupancy_resolution",
                  "occupancy_threshold", "occupancy_update_every", "occupancy_warmup",
                  "block_rays", "validate_every", "checkpoint_every"},
                 "train");
    auto& tc = cfg.train;
    tc.iterations = t.value("iterations", tc.iterations);
    tc.batch_rays = t.value("batch_rays", tc.batch_rays);
    tc.dynamic_batch = t.value("dynamic_batch", tc.dynamic_batch);
    tc.target_samples_per_batch = t.value("target_samples_per_batch", tc.target_samples_per_batch);
    tc.min_batch_rays = t.value("min_batch_rays", tc.min_batch_rays);
    tc.max_batch_rays = t.value("max_batch_rays", tc.max_batch_rays);
    tc.lr_base = t.value("lr_base", tc.lr_base);
    tc.lr_ripmap_multiplier = t.value("lr_ripmap_multiplier", tc.lr_ripmap_multiplier);
    tc.weight_decay = t.value("weight_decay", tc.weight_decay);
    if (t.contains("lr_milestones")) tc.lr_milestones = t["lr_milestones"].get<std::vector<int>>();
    tc.lr_gamma = t.value("lr_gamma", tc.lr_gamma);
    if (t.contains("loss")) {
      const std::string l = t["loss"].get<std::string>();
      if (l == "l2") {
        tc.loss = LossKind::L2;
      } else if (l == "area_weighted_l2") {
        tc.loss = LossKind::AreaWeightedL2;
      } else {
        throw UsageError("train.loss must be 'l2' or 'area_weighted_l2'");
      }
    }
    tc.occupancy_resolution = t.value("occupancy_resolution", tc.occupancy_resolution);
    tc.occupancy_threshold = t.value("occupancy_threshold", tc.occupancy_threshold);
    tc.occupancy_update_every = t.value("occupancy_update_every", tc.occupancy_update_every);
    tc.occupancy_warmup = t.value("occupancy_warmup", tc.occupancy_warmup);
    tc.block_rays = t.value("block_rays", tc.block_rays);
    tc.validate_every = t.value("validate_every", tc.validate_every);
    tc.checkpoint_every = t.value("checkpoint_every", tc.checkpoint_every);

    // invariant from the config contract
    std::vector<int> ms = tc.lr_milestones.empty() ? default_milestones(tc.iterations)
                                                   : tc.lr_milestones;
    for (size_t i = 0; i < ms.size(); ++i) {
      if (ms[i] >= tc.iterations || (i > 0 && ms[i] <= ms[i - 1])) {
        throw UsageError("train.lr_milestones must be strictly increasing and < iterations");
      }
    }
  }

  if (j.contains("render")) {
    const json& r = j["render"];
    require_keys(r, {"step_divisor", "max_samples", "early_stop_transmittance", "background",
                     "split"},
                 "render");
    cfg.render.step_divisor = r.value("step_divisor", cfg.render.step_divisor);
    cfg.render.max_samples = r.value("max_samples", cfg.render.max_samples);
    cfg.render.early_stop_transmittance =
        r.value("early_stop_transmittance", cfg.render.early_stop_transmittance);
    if (r.contains("background")) cfg.render.background = vec3_from(r["background"], "background");
    cfg.render.split = r.value("split", cfg.render.split);
    if (cfg.render.split != "train" && cfg.render.split != "eval") {
      throw UsageError("render.split must be 'train' or 'eval'");
    }
  }

  if (j.contains("data")) {
    const json& d = j["data"];
    require_keys(d, {"kind", "dir", "toy_spec", "toy_builtin", "scales"}, "data");
    if (d.contains("kind")) {
      const std::string k = d["kind"].get<std::string>();
      if (k == "toy") {
        cfg.data.kind = DataKind::Toy;
      } else if (k == "blender") {
        cfg.data.kind = DataKind::Blender;
      } else {
        throw UsageError("data.kind must be 'toy' or 'blender'");
      }
    }
    cfg.data.dir = d.value("dir", cfg.data.dir);
    cfg.data.toy_spec = d.value("toy_spec", cfg.data.toy_spec);
    cfg.data.toy_builtin = d.value("toy_builtin", cfg.data.toy_builtin);
    if (d.contains("scales")) cfg.data.scales = d["scales"].get<std::vector<int>>();
    if (cfg.data.scales.empty()) throw UsageError("data.scales must not be empty");
  }

  cfg.train.seed = cfg.seed;
  cfg.train.workers = cfg.workers;
  return cfg;
}

std::string run_config_to_json(const RunConfig& cfg, int indent) {
  json j;
  j["seed"] = cfg.seed;
  j["workers"] = cfg.workers;
  j["out"] = cfg.out;

  json f;
  f["solid"] = solid_name(cfg.field.solid);
  f["grid_h"] = cfg.field.grid_h;
  f["grid_w"] = cfg.field.grid_w;
  f["channels"] = cfg.field.channels;
  f["mlp_width"] = cfg.field.mlp_width;
  f["sh_degree"] = cfg.field.sh_degree;
  f["density_clamp"] = cfg.field.density_clamp;
  f["mass_factor"] = cfg.field.mass_factor;
  f["scene_radius"] = cfg.field.scene_radius;
  f["encoding"] =
      cfg.field.encoding_mode == EncodingMode::Ripmap ? "ripmap" : "isotropic_mipmap";
  j["field"] = f;

  json t;
  t["iterations"] = cfg.train.iterations;
  t["batch_rays"] = cfg.train.batch_rays;
  t["dynamic_batch"] = cfg.train.dynamic_batch;
  t["target_samples_per_batch"] = cfg.train.target_samples_per_batch;
  t["min_batch_rays"] = cfg.train.min_batch_rays;
  t["max_batch_rays"] = cfg.train.max_batch_rays;
  t["lr_base"] = cfg.train.lr_base;
  t["lr_ripmap_multiplier"] = cfg.train.lr_ripmap_multiplier;
  t["weight_decay"] = cfg.train.weight_decay;
  t["lr_milestones"] = cfg.train.lr_milestones;
  t["lr_gamma"] = cfg.train.lr_gamma;
  t["loss"] = cfg.train.loss == LossKind::L2 ? "l2" : "area_weighted_l2";
  t["occupancy_resolution"] = cfg.train.occupancy_resolution;
  t["occupancy_threshold"] = cfg.train.occupancy_threshold;
  t["occupancy_update_every"] = cfg.train.occupancy_update_every;
  t["occupancy_warmup"] = cfg.train.occupancy_warmup;
  t["block_rays"] = cfg.train.block_rays;
  t["validate_every"] = cfg.train.validate_every;
  t["checkpoint_every"] = cfg.train.checkpoint_every;
  j["train"] = t;

  json r;
  r["step_divisor"] = cfg.render.step_divisor;
  r["max_samples"] = cfg.render.max_samples;
  r["early_stop_transmittance"] = cfg.render.early_stop_transmittance;
  r["background"] = vec3_to(cfg.render.background);
  r["split"] = cfg.render.split;
  j["render"] = r;

  json d;
  d["kind"] = cfg.data.kind == DataKind::Toy ? "toy" : "blender";
  d["dir"] = cfg.data.dir;
  d["toy_spec"] = cfg.data.toy_spec;
  d["toy_builtin"] = cfg.data.toy_builtin;
  d["scales"] = cfg.data.scales;
  j["data"] = d;

  return indent >= 0 ? j.dump(indent) : j.dump();
}

std::string run_config_identity(const RunConfig& cfg) {
  const json full = json::parse(run_config_to_json(cfg));
  json id;
  id["field"] = full["field"];
  id["train"] = full["train"];
  return id.dump();
}

std::string apply_overrides(const std::string& json_text,
                            const std::vector<std::string>& overrides) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw UsageError(std::string("malformed config JSON: ") + e.what());
  }
  for (const std::string& ov : overrides) {
    const size_t eq = ov.find('=');
    if (eq == std::string::npos) throw UsageError("override must look like key.path=value: " + ov);
    const std::string path = ov.substr(0, eq);
    const std::string value = ov.substr(eq + 1);

    json* node = &j;
    size_t start = 0;
    for (;;) {
      const size_t dot = path.find('.', start);
      const std::string key = path.substr(start, dot - start);
      if (key.empty()) throw UsageError("bad override path: " + path);
      if (dot == std::string::npos) {
        json parsed;
        try {
          parsed = json::parse(value);
        } catch (const json::exception&) {
          parsed = value;  // plain string
        }
        (*node)[key] = parsed;
        break;
      }
      node = &(*node)[key];
      start = dot + 1;
    }
  }
  return j.dump();
}

LoadedData load_data(const RunConfig& cfg) {
  LoadedData out;
  if (cfg.data.kind == DataKind::Toy) {
    ToySceneSpec spec;
    if (!cfg.data.toy_spec.empty()) {
      std::ifstream in(cfg.data.toy_spec);
      if (!in) throw DataError("cannot open toy spec: " + cfg.data.toy_spec);
      std::stringstream buf;
      buf << in.rdbuf();
      spec = parse_toy_spec(buf.str());
    } else if (cfg.data.toy_builtin == "striped_box") {
      spec = striped_box_toy_spec();
    } else if (cfg.data.toy_builtin == "default") {
      spec = default_toy_spec();
    } else {
      throw UsageError("data.toy_builtin must be 'default' or 'striped_box'");
    }
    spec.scene_radius = cfg.field.scene_radius;
    spec.background = cfg.render.background;
    ToyScene scene = toy_scene(spec);
    out.train = std::move(scene.train);
    out.eval = std::move(scene.eval);
    out.oracle = scene.field;
    out.has_oracle = true;
  } else {
    if (cfg.data.dir.empty()) throw UsageError("data.dir is required for blender datasets");
    out.train = load_blender(cfg.data.dir, Split::Train, cfg.field.scene_radius);
    out.eval = load_blender(cfg.data.dir, Split::Eval, cfg.field.scene_radius);
  }
  out.train = make_multiscale(out.train, cfg.data.scales);
  out.eval = make_multiscale(out.eval, cfg.data.scales);
  return out;
}

}  // namespace ripnerf
