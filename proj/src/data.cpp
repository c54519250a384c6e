#include "ripnerf/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "ripnerf/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ripnerf {

namespace {

constexpr const char* split_tag(Split s) { return s == Split::Train ? "train" : "eval"; }

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("malformed JSON in " + path + ": " + e.what());
  }
  return j;
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find_if(allowed.begin(), allowed.end(),
                     [&](const char* k) { return it.key() == k; }) == allowed.end()) {
      throw DataError("unknown key '" + it.key() + "' in " + where);
    }
  }
}

Vec3 vec3_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw DataError(where + " must be a 3-element array");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

json vec3_to(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

// Blender/OpenGL cameras look down -Z with +Y up; ours look down +Z with
// +Y down. Conjugating by diag(1,-1,-1) converts either way.
Mat3 flip_yz(const Mat3& r) {
  Mat3 out = r;
  out.col(1) *= -1.0;
  out.col(2) *= -1.0;
  return out;
}

void validate_view_sees_sphere(const ViewRecord& view, double radius) {
  const Ray center = pixel_ray(view.camera, (view.camera.height - 1) / 2.0,
                               (view.camera.width - 1) / 2.0, 1);
  const double a = center.direction.squaredNorm();
  const double b = 2.0 * center.origin.dot(center.direction);
  const double c = center.origin.squaredNorm() - radius * radius;
  if (b * b - 4.0 * a * c <= 0.0) {
    throw DataError("camera frustum does not intersect the bounding sphere");
  }
}

}  // namespace

size_t ScaledDataset::total_pixels() const {
  size_t n = 0;
  for (const auto& v : views) n += static_cast<size_t>(v.image.width) * v.image.height;
  return n;
}

Vec3 view_target_rgb(const ViewRecord& view, int row, int col, const Vec3& background) {
  const double a = view.image.at(row, col, 3);
  Vec3 rgb(view.image.at(row, col, 0), view.image.at(row, col, 1), view.image.at(row, col, 2));
  return rgb * a + (1.0 - a) * background;
}

ScaledDataset load_blender(const std::string& dir, Split split, double scene_radius) {
  const std::string tfile = dir + "/transforms_" + split_tag(split) + ".json";
  const json j = load_json_file(tfile);
  if (!j.contains("camera_angle_x") || !j.contains("frames")) {
    throw DataError(tfile + " is missing camera_angle_x or frames");
  }
  const double angle_x = j["camera_angle_x"].get<double>();

  ScaledDataset ds;
  ds.scene_radius = scene_radius;
  ds.split = split;
  for (const auto& frame : j["frames"]) {
    std::string rel = frame["file_path"].get<std::string>();
    if (rel.size() < 4 || rel.substr(rel.size() - 4) != ".png") rel += ".png";
    fs::path img_path = fs::path(dir) / fs::path(rel).relative_path();

    ViewRecord view;
    view.image = load_png(img_path.string());
    view.scale = 1;

    const auto& m = frame["transform_matrix"];
    if (!m.is_array() || m.size() != 4) throw DataError("transform_matrix must be 4x4");
    Mat3 r_gl;
    Vec3 t;
    for (int row = 0; row < 3; ++row) {
      for (int col = 0; col < 3; ++col) r_gl(row, col) = m[row][col].get<double>();
      t[row] = m[row][3].get<double>();
    }
    view.camera.width = view.image.width;
    view.camera.height = view.image.height;
    view.camera.fx = view.camera.fy = 0.5 * view.image.width / std::tan(0.5 * angle_x);
    view.camera.cx = 0.5 * view.image.width;
    view.camera.cy = 0.5 * view.image.height;
    view.camera.rotation = flip_yz(r_gl);
    view.camera.translation = t;
    validate_camera(view.camera);
    validate_view_sees_sphere(view, scene_radius);

    if (!ds.views.empty() && (view.image.width != ds.views.front().image.width ||
                              view.image.height != ds.views.front().image.height)) {
      throw DataError("mismatched image resolutions in " + tfile);
    }
    ds.views.push_back(std::move(view));
  }
  return ds;
}

void write_blender(const std::string& dir, const ScaledDataset& dataset) {
  const std::string tag = split_tag(dataset.split);
  fs::create_directories(fs::path(dir) / tag);

  json j;
  if (!dataset.views.empty()) {
    const auto& cam = dataset.views.front().camera;
    j["camera_angle_x"] = 2.0 * std::atan(0.5 * cam.width / cam.fx);
  } else {
    j["camera_angle_x"] = 0.6911112070083618;  // blender default fallback
  }
  j["frames"] = json::array();
  for (size_t i = 0; i < dataset.views.size(); ++i) {
    const auto& view = dataset.views[i];
    if (view.scale != 1) throw DataError("write_blender expects scale-1 views");
    const std::string rel = "./" + tag + "/r_" + std::to_string(i);
    save_png((fs::path(dir) / (rel.substr(2) + ".png")).string(), view.image);

    const Mat3 r_gl = flip_yz(view.camera.rotation);
    json m = json::array();
    for (int row = 0; row < 4; ++row) {
      json mrow = json::array();
      for (int col = 0; col < 4; ++col) {
        if (row < 3 && col < 3) {
          mrow.push_back(r_gl(row, col));
        } else if (row < 3) {
          mrow.push_back(view.camera.translation[row]);
        } else {
          mrow.push_back(col == 3 ? 1.0 : 0.0);
        }
      }
      m.push_back(mrow);
    }
    j["frames"].push_back({{"file_path", rel}, {"transform_matrix", m}});
  }

  std::ofstream out(fs::path(dir) / ("transforms_" + std::string(tag) + ".json"));
  out << j.dump(2) << "\n";
}

ScaledDataset make_multiscale(const ScaledDataset& dataset, std::span<const int> factors) {
  ScaledDataset out;
  out.scene_radius = dataset.scene_radius;
  out.split = dataset.split;
  for (const auto& view : dataset.views) {
    if (view.scale != 1) throw DataError("make_multiscale expects a scale-1 dataset");
    for (int f : factors) {
      if (f < 1 || view.image.width % f != 0 || view.image.height % f != 0) {
        throw std::invalid_argument("scale factor must divide the image dimensions");
      }
      ViewRecord scaled;
      scaled.scale = f;
      // average premultiplied so compositing the coarse view over any
      // background equals the box mean of the composited fine view
      Image pre = view.image;
      for (int y = 0; y < pre.height; ++y) {
        for (int x = 0; x < pre.width; ++x) {
          const double a = pre.at(y, x, 3);
          for (int c = 0; c < 3; ++c) pre.at(y, x, c) *= a;
        }
      }
      Image down = box_downsample(pre, f);
      for (int y = 0; y < down.height; ++y) {
        for (int x = 0; x < down.width; ++x) {
          const double a = down.at(y, x, 3);
          if (a > 0.0) {
            for (int c = 0; c < 3; ++c) down.at(y, x, c) /= a;
          }
        }
      }
      scaled.image = std::move(down);
      scaled.camera = view.camera;
      scaled.camera.fx /= f;
      scaled.camera.fy /= f;
      scaled.camera.cx /= f;
      scaled.camera.cy /= f;
      scaled.camera.width = view.camera.width / f;
      scaled.camera.height = view.camera.height / f;
      out.views.push_back(std::move(scaled));
    }
  }
  return out;
}

// ---- toy scenes -------------------------------------------------------------

double AnalyticField::density(const Vec3& p) const {
  for (const auto& prim : spec.primitives) {
    if (prim.kind == ToyPrimitive::Kind::Sphere) {
      if ((p - prim.center).squaredNorm() <= prim.radius * prim.radius) return prim.density;
    } else {
      if ((p.array() >= prim.box_min.array()).all() && (p.array() <= prim.box_max.array()).all()) {
        return prim.density;
      }
    }
  }
  return 0.0;
}

Vec3 AnalyticField::color(const Vec3& p) const {
  for (const auto& prim : spec.primitives) {
    bool inside;
    if (prim.kind == ToyPrimitive::Kind::Sphere) {
      inside = (p - prim.center).squaredNorm() <= prim.radius * prim.radius;
    } else {
      inside =
          (p.array() >= prim.box_min.array()).all() && (p.array() <= prim.box_max.array()).all();
    }
    if (!inside) continue;
    if (prim.stripe_axis >= 0 && prim.stripe_count > 0) {
      const double lo = prim.box_min[prim.stripe_axis];
      const double hi = prim.box_max[prim.stripe_axis];
      const double f = (p[prim.stripe_axis] - lo) / (hi - lo);
      const int band = std::min(prim.stripe_count - 1,
                                std::max(0, static_cast<int>(f * prim.stripe_count)));
      return band % 2 == 0 ? prim.color : prim.stripe_color;
    }
    return prim.color;
  }
  return Vec3::Zero();
}

Camera look_at_camera(const Vec3& eye, const Vec3& target, double fov_deg, int width, int height) {
  Vec3 up = Vec3::UnitZ();
  Vec3 forward = (target - eye).normalized();
  if (std::abs(forward.dot(up)) > 0.999) up = Vec3::UnitY();
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 down = forward.cross(right);

  Camera cam;
  cam.width = width;
  cam.height = height;
  cam.fx = cam.fy = 0.5 * width / std::tan(0.5 * fov_deg * std::numbers::pi / 180.0);
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  cam.rotation.col(0) = right;
  cam.rotation.col(1) = down;
  cam.rotation.col(2) = forward;
  cam.translation = eye;
  validate_camera(cam);
  return cam;
}

Image analytic_render(const AnalyticField& field, const Camera& cam, int scale, int supersample,
                      double step_world, const Vec3& background) {
  const int w = cam.width / scale;
  const int h = cam.height / scale;
  Image img = Image::zeros(h, w, 4);
  const double R = field.spec.scene_radius;

  parallel_for_blocks(h, 0, [&](int y) {
    std::vector<double> density;
    std::vector<Vec3> color;
    std::vector<double> delta;
    for (int x = 0; x < w; ++x) {
      Vec3 pre = Vec3::Zero();
      double opacity = 0.0;
      for (int sy = 0; sy < supersample; ++sy) {
        for (int sx = 0; sx < supersample; ++sx) {
          Ray ray;
          {
            const double row = y + (sy + 0.5) / supersample - 0.5;
            const double col = x + (sx + 0.5) / supersample - 0.5;
            ray = pixel_ray(cam, row, col, scale);
          }
          const double a = ray.direction.squaredNorm();
          const double b = 2.0 * ray.origin.dot(ray.direction);
          const double c = ray.origin.squaredNorm() - R * R;
          const double disc = b * b - 4.0 * a * c;
          if (disc <= 0.0) continue;
          const double sq = std::sqrt(disc);
          const double t_enter = std::max((-b - sq) / (2.0 * a), 1e-9);
          const double t_exit = (-b + sq) / (2.0 * a);
          const double dt = step_world / std::sqrt(a);
          const int steps = static_cast<int>((t_exit - t_enter) / dt);
          density.clear();
          color.clear();
          delta.clear();
          for (int k = 0; k < steps; ++k) {
            const Vec3 mid = ray.origin + (t_enter + (k + 0.5) * dt) * ray.direction;
            const double d = field.density(mid);
            if (d <= 0.0) continue;
            density.push_back(d);
            color.push_back(field.color(mid));
            delta.push_back(step_world);
          }
          const CompositeResult res = composite(density, color, delta, Vec3::Zero(), 1e-6);
          pre += res.color;
          opacity += res.opacity;
        }
      }
      const double inv = 1.0 / (static_cast<double>(supersample) * supersample);
      pre *= inv;
      opacity *= inv;
      const Vec3 rgb = opacity > 0.0 ? Vec3(pre / opacity) : background;
      img.at(y, x, 0) = rgb.x();
      img.at(y, x, 1) = rgb.y();
      img.at(y, x, 2) = rgb.z();
      img.at(y, x, 3) = opacity;
    }
  });
  return img;
}

namespace {

void validate_primitive(const ToyPrimitive& prim, double radius) {
  double reach = 0.0;
  if (prim.kind == ToyPrimitive::Kind::Sphere) {
    reach = prim.center.norm() + prim.radius;
  } else {
    for (int corner = 0; corner < 8; ++corner) {
      Vec3 p;
      for (int a = 0; a < 3; ++a) p[a] = (corner >> a) & 1 ? prim.box_max[a] : prim.box_min[a];
      reach = std::max(reach, p.norm());
    }
  }
  if (reach > radius) throw DataError("toy primitive extends outside the bounding sphere");
}

std::vector<Camera> toy_cameras(const ToySceneSpec& spec, Split split) {
  const int count = split == Split::Train ? spec.train_views : spec.eval_views;
  const double offset = split == Split::Train ? 0.0 : 0.5;
  static constexpr double kTrainElev[] = {12.0, 34.0, -8.0, 52.0};
  static constexpr double kEvalElev[] = {22.0, 4.0, 44.0, -18.0};
  std::vector<Camera> cams;
  for (int i = 0; i < count; ++i) {
    const double az = 2.0 * std::numbers::pi * (i + offset) / count;
    const double el = (split == Split::Train ? kTrainElev[i % 4] : kEvalElev[i % 4]) *
                      std::numbers::pi / 180.0;
    const Vec3 eye = spec.camera_distance *
                     Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    cams.push_back(
        look_at_camera(eye, Vec3::Zero(), spec.fov_degrees, spec.resolution, spec.resolution));
  }
  return cams;
}

}  // namespace

ToyScene toy_scene(const ToySceneSpec& spec) {
  for (const auto& prim : spec.primitives) validate_primitive(prim, spec.scene_radius);

  ToyScene scene;
  scene.field.spec = spec;
  const double step = 2.0 * std::sqrt(3.0) * spec.scene_radius / 8192.0;

  for (Split split : {Split::Train, Split::Eval}) {
    ScaledDataset ds;
    ds.scene_radius = spec.scene_radius;
    ds.split = split;
    for (const Camera& cam : toy_cameras(spec, split)) {
      ViewRecord view;
      view.camera = cam;
      view.scale = 1;
      view.image = analytic_render(scene.field, cam, 1, 1, step, spec.background);
      ds.views.push_back(std::move(view));
    }
    (split == Split::Train ? scene.train : scene.eval) = std::move(ds);
  }
  return scene;
}

ToySceneSpec default_toy_spec() {
  ToySceneSpec spec;
  spec.primitives.resize(3);

  auto& ball = spec.primitives[0];
  ball.kind = ToyPrimitive::Kind::Sphere;
  ball.center = Vec3(-0.35, 0.28, 0.12);
  ball.radius = 0.42;
  ball.density = 300.0;
  ball.color = Vec3(0.85, 0.15, 0.12);

  auto& striped = spec.primitives[1];
  striped.kind = ToyPrimitive::Kind::Box;
  striped.box_min = Vec3(0.05, -0.62, -0.50);
  striped.box_max = Vec3(0.75, 0.08, 0.34);
  striped.density = 300.0;
  striped.color = Vec3(0.95, 0.85, 0.20);
  striped.stripe_axis = 0;
  striped.stripe_count = 8;
  striped.stripe_color = Vec3(0.15, 0.25, 0.80);

  auto& green = spec.primitives[2];
  green.kind = ToyPrimitive::Kind::Sphere;
  green.center = Vec3(0.15, 0.50, -0.45);
  green.radius = 0.30;
  green.density = 300.0;
  green.color = Vec3(0.20, 0.70, 0.30);
  return spec;
}

ToySceneSpec striped_box_toy_spec() {
  ToySceneSpec spec;
  spec.resolution = 128;
  spec.primitives.resize(2);

  auto& striped = spec.primitives[0];
  striped.kind = ToyPrimitive::Kind::Box;
  striped.box_min = Vec3(-0.70, -0.70, -0.25);
  striped.box_max = Vec3(0.70, 0.70, 0.25);
  striped.density = 300.0;
  striped.color = Vec3(0.95, 0.85, 0.15);
  striped.stripe_axis = 0;
  striped.stripe_count = 16;
  striped.stripe_color = Vec3(0.10, 0.20, 0.75);

  auto& ball = spec.primitives[1];
  ball.kind = ToyPrimitive::Kind::Sphere;
  ball.center = Vec3(0.0, 0.0, 0.62);
  ball.radius = 0.33;
  ball.density = 300.0;
  ball.color = Vec3(0.80, 0.25, 0.20);
  return spec;
}

ToySceneSpec parse_toy_spec(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed toy-scene JSON: ") + e.what());
  }
  check_keys(j,
             {"seed", "resolution", "train_views", "eval_views", "scene_radius",
              "camera_distance", "fov_degrees", "background", "primitives"},
             "toy-scene spec");
  ToySceneSpec spec;
  spec.seed = j.value("seed", spec.seed);
  spec.resolution = j.value("resolution", spec.resolution);
  spec.train_views = j.value("train_views", spec.train_views);
  spec.eval_views = j.value("eval_views", spec.eval_views);
  spec.scene_radius = j.value("scene_radius", spec.scene_radius);
  spec.camera_distance = j.value("camera_distance", spec.camera_distance);
  spec.fov_degrees = j.value("fov_degrees", spec.fov_degrees);
  if (j.contains("background")) spec.background = vec3_from(j["background"], "background");
  if (j.contains("primitives")) {
    for (const auto& p : j["primitives"]) {
      check_keys(p,
                 {"type", "center", "radius", "min", "max", "density", "color", "stripe_axis",
                  "stripe_count", "stripe_color"},
                 "toy primitive");
      ToyPrimitive prim;
      const std::string type = p.value("type", "sphere");
      if (type == "sphere") {
        prim.kind = ToyPrimitive::Kind::Sphere;
        if (p.contains("center")) prim.center = vec3_from(p["center"], "center");
        prim.radius = p.value("radius", prim.radius);
      } else if (type == "box") {
        prim.kind = ToyPrimitive::Kind::Box;
        prim.box_min = vec3_from(p.at("min"), "min");
        prim.box_max = vec3_from(p.at("max"), "max");
      } else {
        throw DataError("unknown primitive type: " + type);
      }
      prim.density = p.value("density", prim.density);
      if (p.contains("color")) prim.color = vec3_from(p["color"], "color");
      prim.stripe_axis = p.value("stripe_axis", prim.stripe_axis);
      prim.stripe_count = p.value("stripe_count", prim.stripe_count);
      if (p.contains("stripe_color")) prim.stripe_color = vec3_from(p["stripe_color"], "stripe_color");
      spec.primitives.push_back(prim);
    }
  }
  return spec;
}

std::string toy_spec_to_json(const ToySceneSpec& spec) {
  json j;
  j["seed"] = spec.seed;
  j["resolution"] = spec.resolution;
  j["train_views"] = spec.train_views;
  j["eval_views"] = spec.eval_views;
  j["scene_radius"] = spec.scene_radius;
  j["camera_distance"] = spec.camera_distance;
  j["fov_degrees"] = spec.fov_degrees;
  j["background"] = vec3_to(spec.background);
  j["primitives"] = json::array();
  for (const auto& prim : spec.primitives) {
    json p;
    if (prim.kind == ToyPrimitive::Kind::Sphere) {
      p["type"] = "sphere";
      p["center"] = vec3_to(prim.center);
      p["radius"] = prim.radius;
    } else {
      p["type"] = "box";
      p["min"] = vec3_to(prim.box_min);
      p["max"] = vec3_to(prim.box_max);
    }
    p["density"] = prim.density;
    p["color"] = vec3_to(prim.color);
    if (prim.stripe_axis >= 0) {
      p["stripe_axis"] = prim.stripe_axis;
      p["stripe_count"] = prim.stripe_count;
      p["stripe_color"] = vec3_to(prim.stripe_color);
    }
    j["primitives"].push_back(p);
  }
  return j.dump(2);
}

}  // namespace ripnerf
