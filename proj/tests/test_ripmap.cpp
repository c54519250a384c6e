#include "ripnerf/ripmap.hpp"

#include <random>

#include "doctest.h"
#include "oracles.hpp"

using namespace ripnerf;

namespace {

FeatureGrid random_grid(int h, int w, int c, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  FeatureGrid g = FeatureGrid::zeros(h, w, c);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(lo, hi);
  for (auto& v : g.values) v = static_cast<float>(uni(rng));
  return g;
}

double grid_mean(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

}  // namespace

TEST_CASE("pyramid rejects non-power-of-two grids") {
  CHECK_THROWS_AS(build_pyramid(FeatureGrid::zeros(6, 8, 1)), std::invalid_argument);
  CHECK_THROWS_AS(build_pyramid(FeatureGrid::zeros(8, 12, 1)), std::invalid_argument);
}

TEST_CASE("hand-computed 2x2 pyramid") {
  FeatureGrid base = FeatureGrid::zeros(2, 2, 1);
  base.at(0, 0, 0) = 1.0f;  // row = y
  base.at(0, 1, 0) = 2.0f;
  base.at(1, 0, 0) = 3.0f;
  base.at(1, 1, 0) = 4.0f;
  const Ripmap rm = build_pyramid(base);
  REQUIRE(rm.levels_x == 2);
  REQUIRE(rm.levels_y == 2);
  // level (1,0): width pooled -> column means per row
  CHECK(rm.level(1, 0) == std::vector<double>{1.5, 3.5});
  // level (0,1): height pooled -> row means per column
  CHECK(rm.level(0, 1) == std::vector<double>{2.0, 3.0});
  CHECK(rm.level(1, 1) == std::vector<double>{2.5});
}

TEST_CASE("constant base gives constant pyramid and constant queries") {
  FeatureGrid base = FeatureGrid::zeros(8, 16, 2);
  for (auto& v : base.values) v = 0.625f;
  const Ripmap rm = build_pyramid(base);
  for (int i = 0; i < rm.levels_x; ++i) {
    for (int j = 0; j < rm.levels_y; ++j) {
      for (double v : rm.level(i, j)) CHECK(v == 0.625);
    }
  }
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int k = 0; k < 50; ++k) {
    RipmapQuery q;
    q.pos = Vec2(uni(rng), uni(rng));
    q.level = Vec2(uni(rng) * (rm.levels_x - 1), uni(rng) * (rm.levels_y - 1));
    std::vector<double> out(2);
    query(rm, q, out);
    CHECK(out[0] == doctest::Approx(0.625).epsilon(1e-14));
    CHECK(out[1] == doctest::Approx(0.625).epsilon(1e-14));
  }
}

TEST_CASE("every pyramid level preserves the channel mean") {
  const Ripmap rm = build_pyramid(random_grid(8, 8, 3, 42));
  const double base_mean = grid_mean(rm.level(0, 0));
  for (int i = 0; i < rm.levels_x; ++i) {
    for (int j = 0; j < rm.levels_y; ++j) {
      CHECK(grid_mean(rm.level(i, j)) == doctest::Approx(base_mean).epsilon(1e-12));
    }
  }
}

TEST_CASE("pyramid levels equal brute-force block means") {
  const Ripmap rm = build_pyramid(random_grid(16, 32, 2, 5));
  for (int i = 0; i < rm.levels_x; ++i) {
    for (int j = 0; j < rm.levels_y; ++j) {
      const int w = rm.level_width(i);
      const int h = rm.level_height(j);
      const auto& lvl = rm.level(i, j);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          for (int c = 0; c < 2; ++c) {
            const double expect = oracles::block_mean(rm.base, i, j, x, y, c);
            CHECK(std::abs(lvl[(static_cast<size_t>(y) * w + x) * 2 + c] - expect) < 1e-12);
          }
        }
      }
    }
  }
}

TEST_CASE("pooling order commutes") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> uni(-2.0, 2.0);
  for (int trial = 0; trial < 5; ++trial) {
    const int h = 16, w = 8, c = 3;
    std::vector<double> g(static_cast<size_t>(h) * w * c);
    for (auto& v : g) v = uni(rng);
    const auto xy = avg_pool_y(avg_pool_x(g, h, w, c), h, w / 2, c);
    const auto yx = avg_pool_x(avg_pool_y(g, h, w, c), h / 2, w, c);
    REQUIRE(xy.size() == yx.size());
    for (size_t i = 0; i < xy.size(); ++i) CHECK(std::abs(xy[i] - yx[i]) < 1e-12);
  }
}

TEST_CASE("derive_query maps footprint size to levels") {
  Gaussian2 g;
  const double r = 1.5, w = 2.0;

  g.cov = Mat2::Zero();
  g.cov(0, 0) = (r / w) * (r / w);  // sigma = r/w -> raw level 0
  g.cov(1, 1) = (2.0 * r / w) * (2.0 * r / w);
  RipmapQuery q = derive_query(g, r, w, 7, 7);
  CHECK(q.level.x() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(q.level.y() == doctest::Approx(1.0).epsilon(1e-12));

  // doubling sigma increments the level by exactly one
  g.cov(0, 0) *= 4.0;
  CHECK(derive_query(g, r, w, 7, 7).level.x() == doctest::Approx(1.0).epsilon(1e-12));

  // the published mass factor: sigmas (0.375, 0.75) -> raw (-1, 0) -> clamped
  g.cov(0, 0) = 0.375 * 0.375;
  g.cov(1, 1) = 0.75 * 0.75;
  q = derive_query(g, 1.5, 2.0, 7, 7);
  CHECK(q.level.x() == 0.0);
  CHECK(q.level.y() == doctest::Approx(0.0).epsilon(1e-12));

  // zero sigma selects the finest level rather than erroring
  g.cov.setZero();
  q = derive_query(g, r, w, 7, 7);
  CHECK(q.level.x() == 0.0);
  CHECK(q.level.y() == 0.0);

  // position mapping and clamping
  g.mean = Vec2(0.0, 3.0 * r);
  q = derive_query(g, r, w, 7, 7);
  CHECK(q.pos.x() == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(q.pos.y() == 1.0);
}

TEST_CASE("query at a grid-cell center of integer levels returns the stored value") {
  const Ripmap rm = build_pyramid(random_grid(8, 8, 2, 17));
  RipmapQuery q;
  q.level = Vec2(1.0, 2.0);  // 4x2 grid of cells (w=4, h=2)
  const int w = rm.level_width(1);
  const int h = rm.level_height(2);
  q.pos = Vec2((2 + 0.5) / w, (1 + 0.5) / h);
  std::vector<double> out(2);
  query(rm, q, out);
  const auto& lvl = rm.level(1, 2);
  CHECK(out[0] == doctest::Approx(lvl[(1 * w + 2) * 2 + 0]).epsilon(1e-14));
  CHECK(out[1] == doctest::Approx(lvl[(1 * w + 2) * 2 + 1]).epsilon(1e-14));
}

TEST_CASE("query midway between two cells is their mean") {
  const Ripmap rm = build_pyramid(random_grid(4, 4, 1, 23));
  RipmapQuery q;
  q.level = Vec2(0.0, 0.0);
  q.pos = Vec2(2.0 / 4.0, (1 + 0.5) / 4.0);  // between cells (1,1) and (2,1)
  std::vector<double> out(1);
  query(rm, q, out);
  const auto& lvl = rm.level(0, 0);
  CHECK(out[0] == doctest::Approx(0.5 * (lvl[1 * 4 + 1] + lvl[1 * 4 + 2])).epsilon(1e-13));
}

TEST_CASE("1000 random queries match the nested-lerp oracle") {
  const Ripmap rm = build_pyramid(random_grid(8, 8, 4, 2024));
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> out(4);
  for (int k = 0; k < 1000; ++k) {
    RipmapQuery q;
    q.pos = Vec2(uni(rng) * 1.2 - 0.1, uni(rng) * 1.2 - 0.1);  // includes out-of-range
    q.pos = q.pos.cwiseMax(0.0).cwiseMin(1.0);
    q.level = Vec2(uni(rng) * (rm.levels_x - 1), uni(rng) * (rm.levels_y - 1));
    query(rm, q, out);
    const auto ref = oracles::tetra_query_reference(rm, q);
    for (int c = 0; c < 4; ++c) CHECK(std::abs(out[c] - ref[c]) < 1e-12);
  }
}

TEST_CASE("query is continuous under tiny perturbations") {
  const Ripmap rm = build_pyramid(random_grid(16, 16, 1, 77));
  std::mt19937_64 rng(78);
  std::uniform_real_distribution<double> uni(0.01, 0.99);
  std::vector<double> a(1), b(1);
  const double eps = 1e-9;
  const double k_bound = 1.0 * 16 * 8;  // max|value| x resolution, with headroom
  for (int i = 0; i < 200; ++i) {
    RipmapQuery q;
    q.pos = Vec2(uni(rng), uni(rng));
    q.level = Vec2(uni(rng) * 4.0, uni(rng) * 4.0);
    RipmapQuery qp = q;
    qp.pos += Vec2(eps, -eps);
    qp.level += Vec2(eps, eps);
    query(rm, q, a);
    query(rm, qp, b);
    CHECK(std::abs(a[0] - b[0]) <= k_bound * 4.0 * eps);
  }
}

TEST_CASE("query at the finest integer level touches at most 4 base cells") {
  const Ripmap rm = build_pyramid(random_grid(8, 8, 1, 5150));
  RipmapQuery q;
  q.pos = Vec2(0.4, 0.6);
  q.level = Vec2(0.0, 0.0);
  std::vector<double> grad(rm.base.values.size(), 0.0);
  const double upstream[1] = {1.0};
  query_backward(rm, q, std::span<const double>(upstream, 1), grad);
  int touched = 0;
  double sum = 0.0;
  for (double g : grad) {
    if (g != 0.0) ++touched;
    sum += g;
  }
  CHECK(touched <= 4);
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));  // bilinear partition of unity
}

TEST_CASE("query_backward matches finite differences on every touched cell") {
  Ripmap rm = build_pyramid(random_grid(8, 8, 2, 314));
  std::mt19937_64 rng(315);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    RipmapQuery q;
    q.pos = Vec2(uni(rng), uni(rng));
    q.level = Vec2(uni(rng) * (rm.levels_x - 1), uni(rng) * (rm.levels_y - 1));
    const double upstream[2] = {uni(rng) * 2.0 - 1.0, uni(rng) * 2.0 - 1.0};

    std::vector<double> grad(rm.base.values.size(), 0.0);
    query_backward(rm, q, std::span<const double>(upstream, 2), grad);

    auto eval = [&] {
      refresh_pyramid(rm);
      std::vector<double> out(2);
      query(rm, q, out);
      return upstream[0] * out[0] + upstream[1] * out[1];
    };
    for (size_t i = 0; i < grad.size(); ++i) {
      if (grad[i] == 0.0) continue;
      const double fd = oracles::central_diff(rm.base.values[i], 1e-5, eval);
      CHECK(oracles::rel_err(grad[i], fd, 1e-9) < 1e-6);
    }
    refresh_pyramid(rm);
  }
}

TEST_CASE("constant-preserving query gradients sum to the channel count") {
  const Ripmap rm = build_pyramid(random_grid(8, 8, 3, 999));
  RipmapQuery q;
  q.pos = Vec2(0.37, 0.81);
  q.level = Vec2(1.3, 2.6);
  std::vector<double> grad(rm.base.values.size(), 0.0);
  const std::vector<double> ones(3, 1.0);
  query_backward(rm, q, ones, grad);
  double sum = 0.0;
  for (double g : grad) sum += g;
  CHECK(sum == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("stale pyramid is rejected") {
  Ripmap rm = build_pyramid(random_grid(4, 4, 1, 1));
  rm.dirty = true;
  std::vector<double> out(1);
  CHECK_THROWS_AS(query(rm, {}, out), std::logic_error);
}
