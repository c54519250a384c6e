#pragma once

#include <string>
#include <vector>

namespace ripnerf {

// Linear-light image; values in [0,1], indexed (y, x, c) row-major.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;

  static Image zeros(int h, int w, int c);

  double& at(int y, int x, int c) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
};

// 8-bit PNG I/O; writing clamps and quantizes (no gamma). Loading always
// yields 4 channels with alpha = 1 for RGB files.
Image load_png(const std::string& path);
void save_png(const std::string& path, const Image& img);

// Exact s x s box means per output pixel; s must divide both dimensions.
Image box_downsample(const Image& img, int factor);

}  // namespace ripnerf
