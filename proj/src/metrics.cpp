#include "ripnerf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace ripnerf {

double psnr(const Image& pred, const Image& target) {
  if (pred.width != target.width || pred.height != target.height ||
      pred.channels != target.channels) {
    throw std::invalid_argument("psnr: image shapes differ");
  }
  double mse = 0.0;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    const double d = pred.data[i] - target.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(pred.data.size());
  if (mse < 1e-10) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

namespace {

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(size);
  const int half = size / 2;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    w[i] = std::exp(-0.5 * ((i - half) * (i - half)) / (sigma * sigma));
    sum += w[i];
  }
  for (auto& v : w) v /= sum;
  return w;
}

// separable valid-region filter of one channel
std::vector<double> filter_valid(const Image& img, int c, const std::vector<double>& win) {
  const int k = static_cast<int>(win.size());
  const int ow = img.width - k + 1;
  const int oh = img.height - k + 1;
  std::vector<double> rows(static_cast<size_t>(img.height) * ow);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) acc += win[i] * img.at(y, x + i, c);
      rows[static_cast<size_t>(y) * ow + x] = acc;
    }
  }
  std::vector<double> out(static_cast<size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) acc += win[i] * rows[static_cast<size_t>(y + i) * ow + x];
      out[static_cast<size_t>(y) * ow + x] = acc;
    }
  }
  return out;
}

}  // namespace

double ssim(const Image& pred, const Image& target) {
  if (pred.width != target.width || pred.height != target.height ||
      pred.channels != target.channels) {
    throw std::invalid_argument("ssim: image shapes differ");
  }
  constexpr int kWin = 11;
  if (pred.width < kWin || pred.height < kWin) {
    throw std::invalid_argument("ssim: images must be at least 11x11");
  }
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  const std::vector<double> win = gaussian_window(kWin, 1.5);

  double total = 0.0;
  for (int c = 0; c < pred.channels; ++c) {
    Image xx = pred, yy = pred, xy = pred;
    for (size_t i = 0; i < pred.data.size(); ++i) {
      xx.data[i] = pred.data[i] * pred.data[i];
      yy.data[i] = target.data[i] * target.data[i];
      xy.data[i] = pred.data[i] * target.data[i];
    }
    const auto mu_x = filter_valid(pred, c, win);
    const auto mu_y = filter_valid(target, c, win);
    const auto m_xx = filter_valid(xx, c, win);
    const auto m_yy = filter_valid(yy, c, win);
    const auto m_xy = filter_valid(xy, c, win);

    double acc = 0.0;
    for (size_t i = 0; i < mu_x.size(); ++i) {
      const double var_x = m_xx[i] - mu_x[i] * mu_x[i];
      const double var_y = m_yy[i] - mu_y[i] * mu_y[i];
      const double cov = m_xy[i] - mu_x[i] * mu_y[i];
      const double num = (2.0 * mu_x[i] * mu_y[i] + kC1) * (2.0 * cov + kC2);
      const double den = (mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + kC1) * (var_x + var_y + kC2);
      acc += num / den;
    }
    total += acc / static_cast<double>(mu_x.size());
  }
  return total / pred.channels;
}

void MetricReport::finalize() {
  avg_psnr = 0.0;
  avg_ssim = 0.0;
  if (per_scale.empty()) return;
  for (const auto& s : per_scale) {
    avg_psnr += s.psnr;
    avg_ssim += s.ssim;
  }
  avg_psnr /= static_cast<double>(per_scale.size());
  avg_ssim /= static_cast<double>(per_scale.size());
}

std::string MetricReport::to_table() const {
  std::ostringstream out;
  char line[160];
  out << "          ";
  for (const auto& s : per_scale) {
    std::snprintf(line, sizeof(line), "%10s", ("1/" + std::to_string(s.scale) + " Res.").c_str());
    out << line;
  }
  out << "      Avg.\n";
  out << "PSNR      ";
  for (const auto& s : per_scale) {
    std::snprintf(line, sizeof(line), "%10.2f", s.psnr);
    out << line;
  }
  std::snprintf(line, sizeof(line), "%10.2f\n", avg_psnr);
  out << line;
  out << "SSIM      ";
  for (const auto& s : per_scale) {
    std::snprintf(line, sizeof(line), "%10.4f", s.ssim);
    out << line;
  }
  std::snprintf(line, sizeof(line), "%10.4f\n", avg_ssim);
  out << line;
  std::snprintf(line, sizeof(line), "train time %.1f s, params %zu, size %zu bytes\n",
                wall_seconds, param_count, model_bytes);
  out << line;
  return out.str();
}

}  // namespace ripnerf
