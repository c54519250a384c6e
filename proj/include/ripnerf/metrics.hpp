#pragma once

#include <string>
#include <vector>

#include "ripnerf/image.hpp"

namespace ripnerf {

// 10 log10(1 / MSE) on [0,1] images, channel-mean MSE, capped at 99 dB.
double psnr(const Image& pred, const Image& target);

// Structural similarity with the original publication's constants: 11x11
// Gaussian window (sigma 1.5), K1 0.01 / K2 0.03, L = 1, valid-region mean,
// averaged over channels. Images must be at least 11x11.
double ssim(const Image& pred, const Image& target);

struct ScaleMetrics {
  int scale = 1;
  double psnr = 0.0;
  double ssim = 0.0;
  int view_count = 0;
};

struct MetricReport {
  std::vector<ScaleMetrics> per_scale;
  double avg_psnr = 0.0;
  double avg_ssim = 0.0;
  double wall_seconds = 0.0;
  size_t param_count = 0;
  size_t model_bytes = 0;

  void finalize();  // averages = arithmetic means of the per-scale entries
  std::string to_table() const;
};

}  // namespace ripnerf
