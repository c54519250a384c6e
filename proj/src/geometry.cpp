#include "ripnerf/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace ripnerf {

int plane_count(PlatonicSolid solid) {
  switch (solid) {
    case PlatonicSolid::Tetrahedron: return 4;
    case PlatonicSolid::Cube: return 3;
    case PlatonicSolid::Octahedron: return 4;
    case PlatonicSolid::Dodecahedron: return 6;
    case PlatonicSolid::Icosahedron: return 10;
  }
  throw std::invalid_argument("unknown Platonic solid");
}

const char* solid_name(PlatonicSolid solid) {
  switch (solid) {
    case PlatonicSolid::Tetrahedron: return "tetrahedron";
    case PlatonicSolid::Cube: return "cube";
    case PlatonicSolid::Octahedron: return "octahedron";
    case PlatonicSolid::Dodecahedron: return "dodecahedron";
    case PlatonicSolid::Icosahedron: return "icosahedron";
  }
  throw std::invalid_argument("unknown Platonic solid");
}

PlatonicSolid parse_solid(const std::string& name) {
  if (name == "tetrahedron") return PlatonicSolid::Tetrahedron;
  if (name == "cube") return PlatonicSolid::Cube;
  if (name == "octahedron") return PlatonicSolid::Octahedron;
  if (name == "dodecahedron") return PlatonicSolid::Dodecahedron;
  if (name == "icosahedron") return PlatonicSolid::Icosahedron;
  throw std::invalid_argument("unknown Platonic solid: " + name);
}

FrustumMoments frustum_moments(double t0, double t1, double pixel_radius) {
  if (!(t0 > 0.0) || !(t1 > t0)) {
    throw std::domain_error("frustum interval requires 0 < t_near < t_far");
  }
  if (!(t1 - t0 > 1e-8 * t0)) {
    throw std::domain_error("degenerate frustum interval");
  }
  const double t0_3 = t0 * t0 * t0;
  const double t1_3 = t1 * t1 * t1;
  const double t0_4 = t0_3 * t0;
  const double t1_4 = t1_3 * t1;
  const double t0_5 = t0_4 * t0;
  const double t1_5 = t1_4 * t1;
  const double d3 = t1_3 - t0_3;

  FrustumMoments m;
  m.mu_t = 3.0 * (t1_4 - t0_4) / (4.0 * d3);
  const double second = 3.0 * (t1_5 - t0_5) / (5.0 * d3);
  m.var_t = std::max(0.0, second - m.mu_t * m.mu_t);
  m.var_r = pixel_radius * pixel_radius * (3.0 * (t1_5 - t0_5) / (20.0 * d3));
  return m;
}

Gaussian3 cone_cast_gaussian(const Ray& ray, const FrustumInterval& interval) {
  const double d2 = ray.direction.squaredNorm();
  if (!(d2 > 0.0)) throw std::domain_error("ray direction must have positive norm");
  if (!(ray.pixel_radius > 0.0)) throw std::domain_error("pixel radius must be positive");

  const FrustumMoments m = frustum_moments(interval.t_near, interval.t_far, ray.pixel_radius);
  const Vec3& d = ray.direction;
  const Mat3 ddT = d * d.transpose();

  Gaussian3 g;
  g.mean = ray.origin + m.mu_t * d;
  g.cov = m.var_t * ddT + m.var_r * (Mat3::Identity() - ddT / d2);
  return g;
}

std::pair<Vec3, Vec3> plane_axes(const Vec3& normal) {
  if (std::abs(normal.norm() - 1.0) > 1e-9) {
    throw std::invalid_argument("plane normal must be unit length");
  }
  Vec3 x = Vec3::UnitZ().cross(normal);
  const double n = x.norm();
  if (n < 1e-9) {
    if (normal.z() > 0.0) return {Vec3::UnitX(), Vec3::UnitY()};
    return {Vec3::UnitX(), -Vec3::UnitY()};
  }
  x /= n;
  const Vec3 y = x.cross(normal);
  return {x, y};
}

PlaneBasis make_plane_basis(const Vec3& normal) {
  PlaneBasis b;
  b.normal = normal;
  auto [x, y] = plane_axes(normal);
  b.axis_x = x;
  b.axis_y = y;
  b.projection.col(0) = x;
  b.projection.col(1) = y;
  return b;
}

PlaneSet platonic_plane_set(PlatonicSolid solid) {
  // Canonical orientations: cube faces along the world axes; tetrahedron from
  // the (1,1,1), (1,-1,-1), (-1,1,-1), (-1,-1,1) vertex family (its outward
  // face normals sum to zero); dodecahedron/icosahedron from golden-ratio
  // coordinates. For solids with antipodal face pairs the representative
  // normal is the one whose last nonzero component is positive.
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  const double inv = 1.0 / phi;
  std::vector<Vec3> normals;
  switch (solid) {
    case PlatonicSolid::Cube:
      normals = {Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
      break;
    case PlatonicSolid::Tetrahedron:
      normals = {Vec3(-1, -1, -1), Vec3(-1, 1, 1), Vec3(1, -1, 1), Vec3(1, 1, -1)};
      break;
    case PlatonicSolid::Octahedron:
      normals = {Vec3(1, 1, 1), Vec3(-1, 1, 1), Vec3(1, -1, 1), Vec3(-1, -1, 1)};
      break;
    case PlatonicSolid::Dodecahedron:
      normals = {Vec3(0, 1, phi),  Vec3(0, -1, phi), Vec3(1, phi, 0),
                 Vec3(-1, phi, 0), Vec3(phi, 0, 1),  Vec3(-phi, 0, 1)};
      break;
    case PlatonicSolid::Icosahedron:
      normals = {Vec3(1, 1, 1),      Vec3(-1, 1, 1),    Vec3(1, -1, 1),
                 Vec3(-1, -1, 1),    Vec3(0, inv, phi), Vec3(0, -inv, phi),
                 Vec3(inv, phi, 0),  Vec3(-inv, phi, 0),
                 Vec3(phi, 0, inv),  Vec3(-phi, 0, inv)};
      break;
  }

  PlaneSet set;
  set.solid = solid;
  set.planes.reserve(normals.size());
  for (const Vec3& n : normals) set.planes.push_back(make_plane_basis(n.normalized()));
  return set;
}

Gaussian2 project_gaussian(const Gaussian3& g, const PlaneBasis& plane) {
  Gaussian2 out;
  out.mean = plane.projection.transpose() * g.mean;
  Mat2 c = plane.projection.transpose() * g.cov * plane.projection;
  out.cov = 0.5 * (c + c.transpose());
  return out;
}

}  // namespace ripnerf
