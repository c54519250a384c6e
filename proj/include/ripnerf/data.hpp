#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ripnerf/image.hpp"
#include "ripnerf/render.hpp"

namespace ripnerf {

enum class Split { Train, Eval };

// One calibrated view. The image is RGBA in [0,1] with straight alpha; the
// displayed color over a background b is rgb * a + (1 - a) * b.
struct ViewRecord {
  Camera camera;
  Image image;
  int scale = 1;
};

struct ScaledDataset {
  std::vector<ViewRecord> views;
  double scene_radius = 1.5;
  Split split = Split::Train;

  size_t total_pixels() const;
};

Vec3 view_target_rgb(const ViewRecord& view, int row, int col, const Vec3& background);

// Blender-convention directory: transforms_{split}.json (camera_angle_x +
// per-frame 4x4 camera-to-world matrices, OpenGL axes) plus PNG frames.
// Intrinsics come out as fx = fy = 0.5 * W / tan(camera_angle_x / 2).
ScaledDataset load_blender(const std::string& dir, Split split, double scene_radius = 1.5);

// Writes scale-1 views of one split back in the same convention.
void write_blender(const std::string& dir, const ScaledDataset& dataset);

// Expands a scale-1 dataset into the given factor list using exact box
// downsampling of images (alpha included) and divided intrinsics.
ScaledDataset make_multiscale(const ScaledDataset& dataset, std::span<const int> factors);

// ---- procedural toy scenes -------------------------------------------------

struct ToyPrimitive {
  enum class Kind { Sphere, Box };
  Kind kind = Kind::Sphere;
  Vec3 center = Vec3::Zero();  // sphere
  double radius = 0.5;         // sphere
  Vec3 box_min = Vec3::Zero();  // box
  Vec3 box_max = Vec3::Zero();
  double density = 400.0;
  Vec3 color = Vec3(0.8, 0.2, 0.2);
  // optional stripes along one axis (boxes): alternates color / stripe_color
  int stripe_axis = -1;
  int stripe_count = 0;
  Vec3 stripe_color = Vec3::Zero();
};

struct ToySceneSpec {
  uint64_t seed = 7;
  int resolution = 64;
  int train_views = 16;
  int eval_views = 8;
  double scene_radius = 1.5;
  double camera_distance = 4.0;
  double fov_degrees = 50.0;
  Vec3 background = Vec3::Ones();
  std::vector<ToyPrimitive> primitives;
};

ToySceneSpec default_toy_spec();
ToySceneSpec striped_box_toy_spec();
ToySceneSpec parse_toy_spec(const std::string& json_text);
std::string toy_spec_to_json(const ToySceneSpec& spec);

// Constant-color/constant-density primitive field; first primitive containing
// a point wins.
struct AnalyticField {
  ToySceneSpec spec;
  double density(const Vec3& p) const;
  Vec3 color(const Vec3& p) const;
};

// Ground-truth render by fine uniform marching of the analytic field;
// supersample k averages k x k sub-rays per pixel.
Image analytic_render(const AnalyticField& field, const Camera& cam, int scale, int supersample,
                      double step_world, const Vec3& background);

struct ToyScene {
  ScaledDataset train;
  ScaledDataset eval;
  AnalyticField field;
};

// Generates train/eval ground truth at scale 1 (single ray per pixel, fine
// marching); coarser scales come from make_multiscale.
ToyScene toy_scene(const ToySceneSpec& spec);

Camera look_at_camera(const Vec3& eye, const Vec3& target, double fov_deg, int width, int height);

}  // namespace ripnerf
