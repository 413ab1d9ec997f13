#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <vector>

namespace gridread {

// Dense 8-bit RGB image, row major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // width*height*3

  Image() = default;
  Image(int w, int h, std::uint8_t r = 0, std::uint8_t g = 0, std::uint8_t b = 0)
      : width(w), height(h), pixels(static_cast<size_t>(w) * h * 3) {
    for (size_t i = 0; i < pixels.size(); i += 3) {
      pixels[i] = r;
      pixels[i + 1] = g;
      pixels[i + 2] = b;
    }
  }

  std::uint8_t* at(int x, int y) {
    return pixels.data() + (static_cast<size_t>(y) * width + x) * 3;
  }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<size_t>(y) * width + x) * 3;
  }

  bool contains(int x, int y) const {
    return x >= 0 && y >= 0 && x < width && y < height;
  }
};

inline double luminance(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

// Bilinear sample with border clamp; xy in pixel coordinates.
inline void sample_bilinear(const Image& img, double x, double y, double out[3]) {
  const double cx = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  const double cy = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  const int x0 = static_cast<int>(cx);
  const int y0 = static_cast<int>(cy);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double fx = cx - x0, fy = cy - y0;
  const std::uint8_t* p00 = img.at(x0, y0);
  const std::uint8_t* p10 = img.at(x1, y0);
  const std::uint8_t* p01 = img.at(x0, y1);
  const std::uint8_t* p11 = img.at(x1, y1);
  for (int c = 0; c < 3; ++c) {
    const double top = p00[c] * (1 - fx) + p10[c] * fx;
    const double bot = p01[c] * (1 - fx) + p11[c] * fx;
    out[c] = top * (1 - fy) + bot * fy;
  }
}

// Integer-factor box downscale (area average). Trailing rows/cols that do not
// fill a full block are averaged over the partial block.
inline Image box_downscale(const Image& img, int factor) {
  if (factor <= 1) return img;
  const int w = (img.width + factor - 1) / factor;
  const int h = (img.height + factor - 1) / factor;
  Image out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      long sum[3] = {0, 0, 0};
      int n = 0;
      for (int dy = 0; dy < factor; ++dy) {
        const int sy = y * factor + dy;
        if (sy >= img.height) break;
        for (int dx = 0; dx < factor; ++dx) {
          const int sx = x * factor + dx;
          if (sx >= img.width) break;
          const std::uint8_t* p = img.at(sx, sy);
          sum[0] += p[0];
          sum[1] += p[1];
          sum[2] += p[2];
          ++n;
        }
      }
      std::uint8_t* q = out.at(x, y);
      for (int c = 0; c < 3; ++c)
        q[c] = static_cast<std::uint8_t>((sum[c] + n / 2) / n);
    }
  }
  return out;
}

inline std::uint8_t clamp_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0) + 0.5);
}

}  // namespace gridread
