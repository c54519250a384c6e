#include "ripnerf/geometry.hpp"

#include <random>

#include "doctest.h"
#include "oracles.hpp"

using namespace ripnerf;

namespace {

Ray axis_ray() {
  Ray r;
  r.origin = Vec3::Zero();
  r.direction = Vec3::UnitZ();
  r.pixel_radius = 0.1;
  return r;
}

Gaussian3 diag_gaussian(const Vec3& axis, double major, double minor) {
  const Vec3 u = axis.normalized();
  Gaussian3 g;
  g.cov = minor * Mat3::Identity() + (major - minor) * (u * u.transpose());
  return g;
}

}  // namespace

TEST_CASE("cone_cast mean lies on the ray axis") {
  const Gaussian3 g = cone_cast_gaussian(axis_ray(), {1.0, 2.0});
  CHECK(g.mean.x() == 0.0);
  CHECK(g.mean.y() == 0.0);
  CHECK(g.mean.z() > 1.0);
  CHECK(g.mean.z() < 2.0);
}

TEST_CASE("cone_cast moments match the Monte-Carlo frustum oracle") {
  const Ray ray = axis_ray();
  const FrustumMoments m = frustum_moments(1.0, 2.0, ray.pixel_radius);
  const auto mc = oracles::mc_frustum_moments(ray, 1.0, 2.0, 1000000, 1234);
  CHECK(oracles::rel_err(m.mu_t, mc.mu_t) < 0.01);
  CHECK(oracles::rel_err(m.var_t, mc.var_t) < 0.01);
  CHECK(oracles::rel_err(m.var_r, mc.var_r) < 0.01);
}

TEST_CASE("cone_cast covariance has the ray direction as an eigendirection") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  for (int i = 0; i < 20; ++i) {
    Ray ray;
    ray.origin = Vec3(uni(rng), uni(rng), uni(rng));
    ray.direction = Vec3(uni(rng), uni(rng), uni(rng) + 2.0);
    ray.pixel_radius = 0.02 + 0.1 * std::abs(uni(rng));
    const double t0 = 0.5 + std::abs(uni(rng));
    const FrustumInterval itv{t0, t0 + 0.3 + std::abs(uni(rng))};
    const Gaussian3 g = cone_cast_gaussian(ray, itv);
    const FrustumMoments m = frustum_moments(itv.t_near, itv.t_far, ray.pixel_radius);

    const double d2 = ray.direction.squaredNorm();
    const double quad = ray.direction.dot(g.cov * ray.direction) / d2;
    CHECK(quad == doctest::Approx(m.var_t * d2).epsilon(1e-10));

    // symmetry and PSD bounds from the type contract
    CHECK((g.cov - g.cov.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    const Eigen::SelfAdjointEigenSolver<Mat3> eig(g.cov);
    CHECK(eig.eigenvalues().minCoeff() > -1e-10);

    // mean on the axis
    const Vec3 rel = g.mean - ray.origin;
    CHECK(rel.cross(ray.direction).norm() < 1e-10 * rel.norm() * ray.direction.norm());
  }
}

TEST_CASE("cone_cast rejects bad intervals") {
  CHECK_THROWS_AS(cone_cast_gaussian(axis_ray(), {2.0, 1.0}), std::domain_error);
  CHECK_THROWS_AS(cone_cast_gaussian(axis_ray(), {0.0, 1.0}), std::domain_error);
  CHECK_THROWS_AS(cone_cast_gaussian(axis_ray(), {-1.0, 1.0}), std::domain_error);
  CHECK_THROWS_AS(cone_cast_gaussian(axis_ray(), {1.0, 1.0 + 1e-10}), std::domain_error);
}

TEST_CASE("platonic plane sets have the unparalleled-face counts") {
  CHECK(platonic_plane_set(PlatonicSolid::Tetrahedron).planes.size() == 4);
  CHECK(platonic_plane_set(PlatonicSolid::Cube).planes.size() == 3);
  CHECK(platonic_plane_set(PlatonicSolid::Octahedron).planes.size() == 4);
  CHECK(platonic_plane_set(PlatonicSolid::Dodecahedron).planes.size() == 6);
  CHECK(platonic_plane_set(PlatonicSolid::Icosahedron).planes.size() == 10);
}

TEST_CASE("plane bases are orthonormal and normals pairwise non-parallel") {
  for (auto solid : {PlatonicSolid::Tetrahedron, PlatonicSolid::Cube, PlatonicSolid::Octahedron,
                     PlatonicSolid::Dodecahedron, PlatonicSolid::Icosahedron}) {
    const PlaneSet set = platonic_plane_set(solid);
    for (const auto& p : set.planes) {
      CHECK(std::abs(p.normal.norm() - 1.0) < 1e-12);
      CHECK(std::abs(p.axis_x.norm() - 1.0) < 1e-12);
      CHECK(std::abs(p.axis_y.norm() - 1.0) < 1e-12);
      CHECK(std::abs(p.axis_x.dot(p.normal)) < 1e-12);
      CHECK(std::abs(p.axis_y.dot(p.normal)) < 1e-12);
      CHECK(std::abs(p.axis_x.dot(p.axis_y)) < 1e-12);
      // orthonormal frame; the plane-axes rule is left-handed away from +-Z
      Mat3 frame;
      frame.col(0) = p.axis_x;
      frame.col(1) = p.axis_y;
      frame.col(2) = p.normal;
      CHECK(std::abs(std::abs(frame.determinant()) - 1.0) < 1e-9);
    }
    for (size_t i = 0; i < set.planes.size(); ++i) {
      for (size_t j = i + 1; j < set.planes.size(); ++j) {
        CHECK(std::abs(set.planes[i].normal.dot(set.planes[j].normal)) < 1.0 - 1e-9);
      }
    }
  }
}

TEST_CASE("cube normals recover the orthogonal tri-plane") {
  const PlaneSet cube = platonic_plane_set(PlatonicSolid::Cube);
  CHECK(cube.planes[0].normal.isApprox(Vec3::UnitX(), 1e-15));
  CHECK(cube.planes[1].normal.isApprox(Vec3::UnitY(), 1e-15));
  CHECK(cube.planes[2].normal.isApprox(Vec3::UnitZ(), 1e-15));
}

TEST_CASE("tetrahedron normals sum to zero") {
  const PlaneSet tet = platonic_plane_set(PlatonicSolid::Tetrahedron);
  Vec3 sum = Vec3::Zero();
  for (const auto& p : tet.planes) sum += p.normal;
  CHECK(sum.norm() < 1e-12);
}

TEST_CASE("plane_axes follows the declared convention") {
  {
    const auto [x, y] = plane_axes(Vec3::UnitZ());
    CHECK(x.isApprox(Vec3::UnitX(), 1e-15));
    CHECK(y.isApprox(Vec3::UnitY(), 1e-15));
  }
  {
    const auto [x, y] = plane_axes(Vec3::UnitX());
    CHECK(x.isApprox(Vec3(0, 1, 0), 1e-15));
    CHECK(y.isApprox(Vec3(0, 0, -1), 1e-15));
  }
  {
    // -Z tie-break: right-handed completion, triple product +1
    const auto [x, y] = plane_axes(-Vec3::UnitZ());
    CHECK(x.isApprox(Vec3(1, 0, 0), 1e-15));
    CHECK(y.isApprox(Vec3(0, -1, 0), 1e-15));
    CHECK(x.cross(y).dot(-Vec3::UnitZ()) == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(plane_axes(Vec3(0, 0, 2)), std::invalid_argument);
}

TEST_CASE("isotropic covariance projects to isotropic 2D covariance") {
  Gaussian3 g;
  g.mean = Vec3(0.3, -0.2, 0.9);
  g.cov = 2.25 * Mat3::Identity();
  for (const auto& plane : platonic_plane_set(PlatonicSolid::Icosahedron).planes) {
    const Gaussian2 p = project_gaussian(g, plane);
    CHECK((p.cov - 2.25 * Mat2::Identity()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("axis-aligned mean projects to coordinate pair on the Z plane") {
  Gaussian3 g;
  g.mean = Vec3(1, 2, 3);
  const PlaneBasis z_plane = make_plane_basis(Vec3::UnitZ());
  const Gaussian2 p = project_gaussian(g, z_plane);
  CHECK(p.mean.x() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(p.mean.y() == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("body-diagonal ellipsoid pair: cube conflates, icosahedron separates") {
  const Gaussian3 a = diag_gaussian(Vec3(1, 1, 1), 4.0, 0.04);
  const Gaussian3 b = diag_gaussian(Vec3(1, -1, 1), 4.0, 0.04);

  for (const auto& plane : platonic_plane_set(PlatonicSolid::Cube).planes) {
    const Gaussian2 pa = project_gaussian(a, plane);
    const Gaussian2 pb = project_gaussian(b, plane);
    CHECK(pa.cov(0, 0) == doctest::Approx(pb.cov(0, 0)).epsilon(1e-12));
    CHECK(pa.cov(1, 1) == doctest::Approx(pb.cov(1, 1)).epsilon(1e-12));
  }

  double max_diag_gap = 0.0;
  for (const auto& plane : platonic_plane_set(PlatonicSolid::Icosahedron).planes) {
    const Gaussian2 pa = project_gaussian(a, plane);
    const Gaussian2 pb = project_gaussian(b, plane);
    max_diag_gap = std::max(max_diag_gap, std::abs(pa.cov(0, 0) - pb.cov(0, 0)));
    max_diag_gap = std::max(max_diag_gap, std::abs(pa.cov(1, 1) - pb.cov(1, 1)));
  }
  CHECK(max_diag_gap > 0.1);
}

TEST_CASE("projection is linear in the covariance") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  const PlaneSet set = platonic_plane_set(PlatonicSolid::Icosahedron);
  for (int i = 0; i < 10; ++i) {
    Mat3 m1, m2;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        m1(r, c) = uni(rng);
        m2(r, c) = uni(rng);
      }
    }
    Gaussian3 g1, g2, gsum;
    g1.cov = m1 * m1.transpose();
    g2.cov = m2 * m2.transpose();
    const double a = 0.7, b = 1.9;
    gsum.cov = a * g1.cov + b * g2.cov;
    for (const auto& plane : set.planes) {
      const Mat2 lhs = project_gaussian(gsum, plane).cov;
      const Mat2 rhs =
          a * project_gaussian(g1, plane).cov + b * project_gaussian(g2, plane).cov;
      CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);

      // trace contraction
      CHECK(project_gaussian(gsum, plane).cov.trace() <= gsum.cov.trace() + 1e-10);
    }
  }
}
