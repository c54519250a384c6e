#include "ripnerf/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "ripnerf/core.hpp"

namespace ripnerf {

Image Image::zeros(int h, int w, int c) {
  Image img;
  img.width = w;
  img.height = h;
  img.channels = c;
  img.data.assign(static_cast<size_t>(h) * w * c, 0.0);
  return img;
}

Image load_png(const std::string& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw DataError("failed to open PNG: " + path + " (" + png.message + ")");
  }
  png.format = PNG_FORMAT_RGBA;
  std::vector<uint8_t> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    throw DataError("failed to decode PNG: " + path + " (" + msg + ")");
  }
  Image img = Image::zeros(png.height, png.width, 4);
  for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = buffer[i] / 255.0;
  return img;
}

void save_png(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3 && img.channels != 4) {
    throw std::invalid_argument("save_png supports 1, 3 or 4 channels");
  }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = img.width;
  png.height = img.height;
  png.format = img.channels == 1   ? PNG_FORMAT_GRAY
               : img.channels == 3 ? PNG_FORMAT_RGB
                                   : PNG_FORMAT_RGBA;
  std::vector<uint8_t> buffer(img.data.size());
  for (size_t i = 0; i < img.data.size(); ++i) {
    const double v = std::clamp(img.data[i], 0.0, 1.0);
    buffer[i] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
  if (!png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw DataError("failed to write PNG: " + path + " (" + png.message + ")");
  }
}

Image box_downsample(const Image& img, int factor) {
  if (factor < 1) throw std::invalid_argument("downsample factor must be >= 1");
  if (factor == 1) return img;
  if (img.width % factor != 0 || img.height % factor != 0) {
    throw std::invalid_argument("downsample factor must divide the image dimensions");
  }
  Image out = Image::zeros(img.height / factor, img.width / factor, img.channels);
  const double inv = 1.0 / (static_cast<double>(factor) * factor);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (int dy = 0; dy < factor; ++dy) {
          for (int dx = 0; dx < factor; ++dx) {
            acc += img.at(y * factor + dy, x * factor + dx, c);
          }
        }
        out.at(y, x, c) = acc * inv;
      }
    }
  }
  return out;
}

}  // namespace ripnerf
