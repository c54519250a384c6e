#include "ripnerf/metrics.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "doctest.h"

using namespace ripnerf;

namespace {

// straight-loop SSIM re-derivation, same window definition, separate code
double ssim_reference(const Image& a, const Image& b) {
  const int k = 11;
  const double sigma = 1.5;
  std::vector<double> w1(k);
  double sum = 0.0;
  for (int i = 0; i < k; ++i) {
    w1[i] = std::exp(-0.5 * (i - 5) * (i - 5) / (sigma * sigma));
    sum += w1[i];
  }
  for (auto& v : w1) v /= sum;

  double total = 0.0;
  for (int c = 0; c < a.channels; ++c) {
    double acc = 0.0;
    int count = 0;
    for (int y = 0; y + k <= a.height; ++y) {
      for (int x = 0; x + k <= a.width; ++x) {
        double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
        for (int dy = 0; dy < k; ++dy) {
          for (int dx = 0; dx < k; ++dx) {
            const double w = w1[dy] * w1[dx];
            const double pa = a.at(y + dy, x + dx, c);
            const double pb = b.at(y + dy, x + dx, c);
            mx += w * pa;
            my += w * pb;
            mxx += w * pa * pa;
            myy += w * pb * pb;
            mxy += w * pa * pb;
          }
        }
        const double c1 = 1e-4, c2 = 9e-4;
        const double num = (2 * mx * my + c1) * (2 * (mxy - mx * my) + c2);
        const double den =
            (mx * mx + my * my + c1) * ((mxx - mx * mx) + (myy - my * my) + c2);
        acc += num / den;
        ++count;
      }
    }
    total += acc / count;
  }
  return total / a.channels;
}

}  // namespace

TEST_CASE("psnr: identical images cap at 99 dB") {
  Image a = Image::zeros(8, 8, 3);
  for (auto& v : a.data) v = 0.42;
  CHECK(psnr(a, a) == 99.0);
}

TEST_CASE("psnr: uniform 0.1 error gives 20 dB") {
  Image a = Image::zeros(8, 8, 3);
  Image b = a;
  for (auto& v : b.data) v += 0.1;
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(psnr(b, a) == doctest::Approx(20.0).epsilon(1e-12));
}

TEST_CASE("psnr matches constructed noise of known MSE") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> uni(-0.05, 0.05);
  Image a = Image::zeros(16, 16, 3);
  for (auto& v : a.data) v = 0.5;
  Image b = a;
  double mse = 0.0;
  for (auto& v : b.data) {
    const double noise = uni(rng);
    v += noise;
    mse += noise * noise;
  }
  mse /= b.data.size();
  CHECK(std::abs(psnr(a, b) - 10.0 * std::log10(1.0 / mse)) < 1e-9);
}

TEST_CASE("psnr rejects shape mismatches") {
  CHECK_THROWS_AS(psnr(Image::zeros(4, 4, 3), Image::zeros(4, 4, 1)), std::invalid_argument);
  CHECK_THROWS_AS(psnr(Image::zeros(4, 5, 3), Image::zeros(4, 4, 3)), std::invalid_argument);
}

TEST_CASE("ssim: identical images score exactly 1") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Image a = Image::zeros(16, 16, 3);
  for (auto& v : a.data) v = uni(rng);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ssim: constant images follow the closed form") {
  const double c1 = 0.3, c2 = 0.8;
  Image a = Image::zeros(12, 12, 1);
  Image b = Image::zeros(12, 12, 1);
  for (auto& v : a.data) v = c1;
  for (auto& v : b.data) v = c2;
  const double k1 = 1e-4;
  const double expect = (2 * c1 * c2 + k1) / (c1 * c1 + c2 * c2 + k1);
  CHECK(ssim(a, b) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("ssim: inverted binary image matches the reference implementation") {
  std::mt19937_64 rng(7);
  std::bernoulli_distribution coin(0.5);
  Image a = Image::zeros(20, 20, 1);
  for (auto& v : a.data) v = coin(rng) ? 1.0 : 0.0;
  Image b = a;
  for (auto& v : b.data) v = 1.0 - v;
  CHECK(std::abs(ssim(a, b) - ssim_reference(a, b)) < 1e-9);

  // a couple of random non-binary pairs for good measure
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (auto& v : b.data) v = uni(rng);
  CHECK(std::abs(ssim(a, b) - ssim_reference(a, b)) < 1e-9);
}

TEST_CASE("ssim rejects images below the window size") {
  CHECK_THROWS_AS(ssim(Image::zeros(8, 8, 1), Image::zeros(8, 8, 1)), std::invalid_argument);
}

TEST_CASE("metric report averages equal the per-scale means") {
  MetricReport r;
  r.per_scale = {{1, 30.0, 0.9, 4}, {2, 32.0, 0.95, 4}, {4, 34.0, 0.85, 4}};
  r.finalize();
  CHECK(r.avg_psnr == doctest::Approx(32.0).epsilon(1e-15));
  CHECK(r.avg_ssim == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(r.to_table().find("PSNR") != std::string::npos);
}
