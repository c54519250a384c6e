#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ripnerf/core.hpp"

namespace ripnerf {

// A pixel cone: apex at `origin`, axis `direction` (need not be unit length),
// cross-section radius pixel_radius * t at ray parameter t.
struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double pixel_radius = 1e-3;
};

// Slab of a cone between two ray parameters, 0 < t_near < t_far.
struct FrustumInterval {
  double t_near = 0.0;
  double t_far = 0.0;
};

struct Gaussian3 {
  Vec3 mean = Vec3::Zero();
  Mat3 cov = Mat3::Zero();
};

struct Gaussian2 {
  Vec2 mean = Vec2::Zero();
  Mat2 cov = Mat2::Zero();
};

// Orthonormal in-plane axes for one projection plane. `projection` has
// columns (axis_x, axis_y), so plane coordinates of v are projection^T v.
struct PlaneBasis {
  Vec3 normal = Vec3::UnitZ();
  Vec3 axis_x = Vec3::UnitX();
  Vec3 axis_y = Vec3::UnitY();
  Mat32 projection = Mat32::Zero();
};

enum class PlatonicSolid { Tetrahedron, Cube, Octahedron, Dodecahedron, Icosahedron };

// One plane per unparalleled face of the solid.
struct PlaneSet {
  PlatonicSolid solid = PlatonicSolid::Icosahedron;
  std::vector<PlaneBasis> planes;
};

int plane_count(PlatonicSolid solid);
const char* solid_name(PlatonicSolid solid);
PlatonicSolid parse_solid(const std::string& name);

// Axial mean/variance and per-axis radial variance of a uniform-density
// conical frustum with cross-section radius pixel_radius * t.
struct FrustumMoments {
  double mu_t = 0.0;
  double var_t = 0.0;
  double var_r = 0.0;
};

FrustumMoments frustum_moments(double t_near, double t_far, double pixel_radius);

// Gaussian approximation of the conical frustum in world coordinates.
Gaussian3 cone_cast_gaussian(const Ray& ray, const FrustumInterval& interval);

// In-plane axes for a unit normal. The cross-product construction is
// singular at -Z; that case returns the declared (X, -Y) completion.
std::pair<Vec3, Vec3> plane_axes(const Vec3& normal);

PlaneBasis make_plane_basis(const Vec3& normal);
PlaneSet platonic_plane_set(PlatonicSolid solid);

// Orthogonal projection of a 3D Gaussian onto plane coordinates.
Gaussian2 project_gaussian(const Gaussian3& g, const PlaneBasis& plane);

}  // namespace ripnerf
