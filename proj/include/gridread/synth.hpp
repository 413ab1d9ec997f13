#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "gridread/dataset.hpp"
#include "gridread/ean.hpp"
#include "gridread/geometry.hpp"
#include "gridread/image.hpp"
#include "gridread/png_io.hpp"
#include "gridread/rng.hpp"

namespace gridread {

// ---------------------------------------------------------------------------
// Render parameters
// ---------------------------------------------------------------------------

struct RenderParams {
  int bar_height = 10;   // module units, [3, 20]
  int module_width = 9;  // pixels per module, [7, 11]
  int quiet_zone = 2;    // module units, [1, 6]
  std::array<std::uint8_t, 3> fg{0, 0, 0};
  std::array<std::uint8_t, 3> bg{255, 255, 255};
  bool print_numerals = false;  // always false: models must learn the strip pattern
  double min_luminance_gap = 50;

  // Positive sizes and a mandatory quiet zone. The paper's sampling ranges
  // (height 3-20, width 7-11, quiet zone 1-6) live in RenderRanges; the
  // renderer itself accepts any legal geometry so oracles can use width 1.
  void validate_params() const {
    if (bar_height < 1) throw std::invalid_argument("bar_height must be positive");
    if (module_width < 1) throw std::invalid_argument("module_width must be positive");
    if (quiet_zone < 1) throw std::invalid_argument("quiet_zone must be at least one module");
    if (print_numerals) throw std::invalid_argument("numerals are never printed");
    const double gap = luminance(bg[0], bg[1], bg[2]) - luminance(fg[0], fg[1], fg[2]);
    if (gap < min_luminance_gap)
      throw std::invalid_argument("foreground/background luminance gap too small");
  }
};

// Sampling ranges used by the generator; defaults cover the full legal space.
struct RenderRanges {
  int bar_height_min = 3, bar_height_max = 20;
  int module_width_min = 7, module_width_max = 11;
  int quiet_zone_min = 1, quiet_zone_max = 6;
  bool random_colors = true;
  double min_luminance_gap = 50;
};

// Renders the symbol as a flat patch: dark/light modules at fg/bg, quiet zone
// on all sides, no numerals. The tight box is the whole patch extent.
inline Image render_symbol(const BarcodeSymbol& symbol, const RenderParams& p) {
  p.validate_params();
  const int modules = static_cast<int>(symbol.modules.size());
  const int w = (modules + 2 * p.quiet_zone) * p.module_width;
  const int h = (p.bar_height + 2 * p.quiet_zone) * p.module_width;
  Image img(w, h, p.bg[0], p.bg[1], p.bg[2]);
  const int x0 = p.quiet_zone * p.module_width;
  const int y0 = p.quiet_zone * p.module_width;
  const int y1 = y0 + p.bar_height * p.module_width;
  for (int m = 0; m < modules; ++m) {
    if (symbol.modules[m] != '1') continue;
    for (int y = y0; y < y1; ++y) {
      std::uint8_t* row = img.at(x0 + m * p.module_width, y);
      for (int k = 0; k < p.module_width; ++k) {
        row[0] = p.fg[0];
        row[1] = p.fg[1];
        row[2] = p.fg[2];
        row += 3;
      }
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Augmentation configuration
// ---------------------------------------------------------------------------

struct AugmentConfig {
  bool rotate = true;
  double rotate_max_deg = 360;  // patch rotation sampled from [0, max)
  bool shear = true;
  double shear_max = 0.25;  // horizontal and vertical shear factor
  bool stretch = true;
  double stretch_min = 0.75, stretch_max = 1.3;  // aspect jitter
  bool perspective = true;
  double perspective_jitter = 0.06;  // corner jitter as a fraction of patch size
  bool elastic = true;
  double elastic_alpha = 2.0;  // max displacement in pixels
  double elastic_sigma = 6.0;  // smoothing radius
  bool blur = true;
  double blur_sigma_max = 1.2;
  bool noise = true;
  double noise_sigma_max = 10.0;
  bool color_jitter = true;
  double brightness_max = 0.25;   // multiplicative
  double saturation_max = 0.3;
  double hue_max_deg = 18;
  bool hflip = true;  // disable for orientation-sensitive profiles
  bool crop_shift = true;
  double shift_max = 0.08;  // fraction of image size, never truncates boxes
  bool whole_image_rotate = false;  // patch rotation usually suffices
  double whole_image_rotate_max_deg = 15;

  static AugmentConfig identity() {
    AugmentConfig c;
    c.rotate = c.shear = c.stretch = c.perspective = c.elastic = false;
    c.blur = c.noise = c.color_jitter = c.hflip = c.crop_shift = false;
    c.whole_image_rotate = false;
    return c;
  }
};

struct SceneConfig {
  int width = 448, height = 448;
  int min_codes = 0, max_codes = 3;
  double min_rel_width = 0.35, max_rel_width = 0.9;  // patch width / min scene dim
  int max_place_attempts = 50;
  int min_background = 32;
};

// ---------------------------------------------------------------------------
// Backgrounds
// ---------------------------------------------------------------------------

// Procedural fallback so the repo is self-contained: colored gradient plus
// low-frequency texture noise.
inline Image procedural_background(int w, int h, Rng& rng) {
  const double r0 = rng.uniform(40, 215), g0 = rng.uniform(40, 215), b0 = rng.uniform(40, 215);
  const double r1 = rng.uniform(40, 215), g1 = rng.uniform(40, 215), b1 = rng.uniform(40, 215);
  const double angle = rng.uniform(0, 2 * M_PI);
  const double dx = std::cos(angle), dy = std::sin(angle);
  const double tex = rng.uniform(4, 24);
  const int cells = 8;
  std::vector<double> noise(static_cast<size_t>(cells) * cells);
  for (auto& v : noise) v = rng.uniform(-1, 1);
  Image img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double t = 0.5 + 0.5 * ((x * dx + y * dy) / std::max(w, h));
      const double u = static_cast<double>(x) / w * (cells - 1);
      const double v = static_cast<double>(y) / h * (cells - 1);
      const int ui = static_cast<int>(u), vi = static_cast<int>(v);
      const double fu = u - ui, fv = v - vi;
      auto nz = [&](int a, int b) {
        return noise[static_cast<size_t>(std::min(b, cells - 1)) * cells + std::min(a, cells - 1)];
      };
      const double nval = (nz(ui, vi) * (1 - fu) + nz(ui + 1, vi) * fu) * (1 - fv) +
                          (nz(ui, vi + 1) * (1 - fu) + nz(ui + 1, vi + 1) * fu) * fv;
      std::uint8_t* p = img.at(x, y);
      p[0] = clamp_u8(r0 * (1 - t) + r1 * t + nval * tex);
      p[1] = clamp_u8(g0 * (1 - t) + g1 * t + nval * tex);
      p[2] = clamp_u8(b0 * (1 - t) + b1 * t + nval * tex);
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Scene composition
// ---------------------------------------------------------------------------

namespace detail {

// Corner quad for a patch of size (w, h) after scale/stretch/shear/rotation,
// centered at the origin.
inline Quad patch_quad(double w, double h, double scale_x, double scale_y, double shear_x,
                       double shear_y, double angle_rad) {
  const double ca = std::cos(angle_rad), sa = std::sin(angle_rad);
  Quad q{Point{-w / 2, -h / 2}, Point{w / 2, -h / 2}, Point{w / 2, h / 2}, Point{-w / 2, h / 2}};
  for (Point& p : q) {
    double x = p.x * scale_x, y = p.y * scale_y;
    x += shear_x * y;
    y += shear_y * x;
    p = Point{ca * x - sa * y, sa * x + ca * y};
  }
  return q;
}

// Warp `patch` onto `scene` so the patch rectangle lands on `quad`
// (scene pixel coordinates). 2x2 supersampling antialiases edges.
inline void paste_warped(Image& scene, const Image& patch, const Quad& quad) {
  Quad unit_quad = quad;
  const Homography to_scene = unit_square_to_quad(unit_quad);
  const Homography to_unit = to_scene.inverse();
  const Box bb = bounding_box(quad);
  const int x_lo = std::max(0, static_cast<int>(std::floor(bb.x_min())));
  const int x_hi = std::min(scene.width - 1, static_cast<int>(std::ceil(bb.x_max())));
  const int y_lo = std::max(0, static_cast<int>(std::floor(bb.y_min())));
  const int y_hi = std::min(scene.height - 1, static_cast<int>(std::ceil(bb.y_max())));
  static constexpr double kSub[2] = {0.25, 0.75};
  for (int y = y_lo; y <= y_hi; ++y) {
    for (int x = x_lo; x <= x_hi; ++x) {
      double acc[3] = {0, 0, 0};
      double alpha = 0;
      for (double sy : kSub) {
        for (double sx : kSub) {
          const Point u = to_unit.apply(Point{x + sx, y + sy});
          if (u.x < 0 || u.x > 1 || u.y < 0 || u.y > 1) continue;
          double c[3];
          sample_bilinear(patch, u.x * (patch.width - 1), u.y * (patch.height - 1), c);
          acc[0] += c[0];
          acc[1] += c[1];
          acc[2] += c[2];
          alpha += 1;
        }
      }
      if (alpha <= 0) continue;
      const double a = alpha / 4.0;
      std::uint8_t* p = scene.at(x, y);
      for (int c = 0; c < 3; ++c)
        p[c] = clamp_u8(acc[c] / alpha * a + p[c] * (1 - a));
    }
  }
}

inline RenderParams sample_render_params(const RenderRanges& rr, Rng& rng) {
  RenderParams p;
  p.bar_height = static_cast<int>(rng.uniform_int(rr.bar_height_min, rr.bar_height_max));
  p.module_width = static_cast<int>(rng.uniform_int(rr.module_width_min, rr.module_width_max));
  p.quiet_zone = static_cast<int>(rng.uniform_int(rr.quiet_zone_min, rr.quiet_zone_max));
  p.min_luminance_gap = rr.min_luminance_gap;
  if (rr.random_colors) {
    for (int tries = 0; tries < 20; ++tries) {
      std::array<std::uint8_t, 3> fg{static_cast<std::uint8_t>(rng.uniform_int(0, 90)),
                                     static_cast<std::uint8_t>(rng.uniform_int(0, 90)),
                                     static_cast<std::uint8_t>(rng.uniform_int(0, 90))};
      std::array<std::uint8_t, 3> bg{static_cast<std::uint8_t>(rng.uniform_int(170, 255)),
                                     static_cast<std::uint8_t>(rng.uniform_int(170, 255)),
                                     static_cast<std::uint8_t>(rng.uniform_int(170, 255))};
      if (luminance(bg[0], bg[1], bg[2]) - luminance(fg[0], fg[1], fg[2]) >=
          rr.min_luminance_gap) {
        p.fg = fg;
        p.bg = bg;
        break;
      }
    }
  }
  return p;
}

}  // namespace detail

// Composes a scene: each symbol is rendered, independently transformed
// (scale, stretch, shear, rotation, perspective corner jitter) and
// alpha-pasted at a position whose bounding box stays inside the scene and
// overlaps no earlier box (rejected-and-resampled otherwise). The annotation
// box is the axis-aligned hull of the transformed patch corners.
inline Sample compose_scene(const Image& background, const std::vector<BarcodeSymbol>& symbols,
                            std::uint64_t seed, const AugmentConfig& aug,
                            const SceneConfig& scene_cfg, const RenderRanges& rr = RenderRanges{}) {
  if (background.width < scene_cfg.min_background || background.height < scene_cfg.min_background)
    throw std::invalid_argument("background smaller than minimum size");
  if (static_cast<int>(symbols.size()) > scene_cfg.max_codes)
    throw std::invalid_argument("more symbols than the configured maximum");
  Rng rng(mix_seed(seed, "compose"));
  Sample out;
  out.image = background;
  const int sw = background.width, sh = background.height;

  for (const auto& symbol : symbols) {
    const RenderParams rp = detail::sample_render_params(rr, rng);
    Image patch = render_symbol(symbol, rp);

    const double rel = rng.uniform(scene_cfg.min_rel_width, scene_cfg.max_rel_width);
    const double target_w = rel * std::min(sw, sh);
    double scale = target_w / patch.width;
    double stretch = aug.stretch ? rng.uniform(aug.stretch_min, aug.stretch_max) : 1.0;
    const double shear_x = aug.shear ? rng.uniform(-aug.shear_max, aug.shear_max) : 0.0;
    const double shear_y = aug.shear ? rng.uniform(-aug.shear_max, aug.shear_max) : 0.0;
    const double angle = aug.rotate ? rng.uniform(0.0, aug.rotate_max_deg) * M_PI / 180.0 : 0.0;

    // Prefilter before heavy downscale so thin bars average instead of alias.
    if (scale < 1.0) {
      const int factor = std::max(1, static_cast<int>(std::floor(1.0 / scale)));
      if (factor > 1) {
        patch = box_downscale(patch, factor);
        scale *= factor;
      }
    }

    Quad quad = detail::patch_quad(patch.width, patch.height, scale, scale * stretch, shear_x,
                                   shear_y, angle);
    if (aug.perspective) {
      const double j = aug.perspective_jitter * target_w;
      for (Point& p : quad) {
        p.x += rng.uniform(-j, j);
        p.y += rng.uniform(-j, j);
      }
    }
    const Box local = bounding_box(quad);
    if (local.w >= sw || local.h >= sh) continue;  // cannot fit; drop symbol

    bool placed = false;
    for (int attempt = 0; attempt < scene_cfg.max_place_attempts && !placed; ++attempt) {
      const double cx = rng.uniform(local.w / 2, sw - local.w / 2);
      const double cy = rng.uniform(local.h / 2, sh - local.h / 2);
      Box candidate{cx / sw, cy / sh, local.w / sw, local.h / sh};
      bool overlaps = false;
      for (const auto& a : out.annotations)
        if (iou(candidate, a.box) > 0) {
          overlaps = true;
          break;
        }
      if (overlaps) continue;
      Quad placed_quad = quad;
      const double off_x = cx - local.cx, off_y = cy - local.cy;
      for (Point& p : placed_quad) {
        p.x += off_x;
        p.y += off_y;
      }
      detail::paste_warped(out.image, patch, placed_quad);
      Annotation ann;
      ann.box = candidate;
      ann.sequence = symbol.digits;
      ann.spec_id = to_string(symbol.symbology);
      out.annotations.push_back(std::move(ann));
      placed = true;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Whole-image augmentation
// ---------------------------------------------------------------------------

namespace detail {

inline void gaussian_blur_inplace(Image& img, double sigma) {
  if (sigma <= 0) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(2.5 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double ksum = 0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    ksum += kernel[i + radius];
  }
  for (auto& k : kernel) k /= ksum;
  Image tmp = img;
  // horizontal
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double acc[3] = {0, 0, 0};
      for (int i = -radius; i <= radius; ++i) {
        const int sx = std::clamp(x + i, 0, img.width - 1);
        const std::uint8_t* p = img.at(sx, y);
        for (int c = 0; c < 3; ++c) acc[c] += kernel[i + radius] * p[c];
      }
      std::uint8_t* q = tmp.at(x, y);
      for (int c = 0; c < 3; ++c) q[c] = clamp_u8(acc[c]);
    }
  // vertical
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double acc[3] = {0, 0, 0};
      for (int i = -radius; i <= radius; ++i) {
        const int sy = std::clamp(y + i, 0, img.height - 1);
        const std::uint8_t* p = tmp.at(x, sy);
        for (int c = 0; c < 3; ++c) acc[c] += kernel[i + radius] * p[c];
      }
      std::uint8_t* q = img.at(x, y);
      for (int c = 0; c < 3; ++c) q[c] = clamp_u8(acc[c]);
    }
}

inline void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  v = mx;
  const double d = mx - mn;
  s = mx == 0 ? 0 : d / mx;
  if (d == 0) {
    h = 0;
  } else if (mx == r) {
    h = 60 * std::fmod((g - b) / d, 6.0);
  } else if (mx == g) {
    h = 60 * ((b - r) / d + 2);
  } else {
    h = 60 * ((r - g) / d + 4);
  }
  if (h < 0) h += 360;
}

inline void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double c = v * s;
  const double hp = std::fmod(h / 60.0 + 6.0, 6.0);
  const double x = c * (1 - std::abs(std::fmod(hp, 2.0) - 1));
  double rr = 0, gg = 0, bb = 0;
  if (hp < 1) { rr = c; gg = x; }
  else if (hp < 2) { rr = x; gg = c; }
  else if (hp < 3) { gg = c; bb = x; }
  else if (hp < 4) { gg = x; bb = c; }
  else if (hp < 5) { rr = x; bb = c; }
  else { rr = c; bb = x; }
  const double m = v - c;
  r = rr + m;
  g = gg + m;
  b = bb + m;
}

// Smoothed uniform displacement field, rescaled so the maximum displacement
// magnitude is exactly alpha.
inline void elastic_field(int w, int h, double alpha, double sigma, Rng& rng,
                          std::vector<double>& dx, std::vector<double>& dy) {
  const size_t n = static_cast<size_t>(w) * h;
  dx.resize(n);
  dy.resize(n);
  for (size_t i = 0; i < n; ++i) dx[i] = rng.uniform(-1, 1);
  for (size_t i = 0; i < n; ++i) dy[i] = rng.uniform(-1, 1);
  const int radius = std::max(1, static_cast<int>(std::ceil(2.5 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double ksum = 0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    ksum += kernel[i + radius];
  }
  for (auto& k : kernel) k /= ksum;
  auto smooth = [&](std::vector<double>& f) {
    std::vector<double> tmp(n);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[i + radius] * f[static_cast<size_t>(y) * w + std::clamp(x + i, 0, w - 1)];
        tmp[static_cast<size_t>(y) * w + x] = acc;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[i + radius] * tmp[static_cast<size_t>(std::clamp(y + i, 0, h - 1)) * w + x];
        f[static_cast<size_t>(y) * w + x] = acc;
      }
  };
  smooth(dx);
  smooth(dy);
  double mmax = 0;
  for (size_t i = 0; i < n; ++i)
    mmax = std::max(mmax, std::sqrt(dx[i] * dx[i] + dy[i] * dy[i]));
  if (mmax > 0) {
    const double k = alpha / mmax;
    for (size_t i = 0; i < n; ++i) {
      dx[i] *= k;
      dy[i] *= k;
    }
  }
}

}  // namespace detail

// Applies the whole-image augmentation suite. Geometric ops re-derive boxes
// from transformed corners; an op that would truncate a box is skipped for
// that sample (optionally logged) instead of raising. Deterministic per seed.
inline Sample augment_sample(const Sample& sample, const AugmentConfig& cfg, std::uint64_t seed,
                             std::vector<std::string>* skip_log = nullptr) {
  Rng rng(mix_seed(seed, "augment"));
  Sample out = sample;
  const int w = out.image.width, h = out.image.height;

  // Horizontal flip (EAN symbols decode in either direction, sequence kept).
  if (cfg.hflip && rng.bernoulli(0.5)) {
    Image flipped(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        std::copy_n(out.image.at(w - 1 - x, y), 3, flipped.at(x, y));
    out.image = std::move(flipped);
    for (auto& a : out.annotations) a.box.cx = 1.0 - a.box.cx;
  }

  // Whole-image rotation about the center (boxes become hulls of rotated
  // corners; skipped when a hull would leave the image).
  if (cfg.whole_image_rotate) {
    const double deg = rng.uniform(-cfg.whole_image_rotate_max_deg, cfg.whole_image_rotate_max_deg);
    const double a = deg * M_PI / 180.0;
    std::vector<Box> new_boxes;
    bool fits = true;
    for (const auto& ann : out.annotations) {
      Quad q{Point{ann.box.x_min() * w, ann.box.y_min() * h},
             Point{ann.box.x_max() * w, ann.box.y_min() * h},
             Point{ann.box.x_max() * w, ann.box.y_max() * h},
             Point{ann.box.x_min() * w, ann.box.y_max() * h}};
      for (Point& p : q) {
        const double x = p.x - w / 2.0, y = p.y - h / 2.0;
        p = Point{w / 2.0 + std::cos(a) * x - std::sin(a) * y,
                  h / 2.0 + std::sin(a) * x + std::cos(a) * y};
      }
      Box nb = bounding_box(q);
      nb = Box{nb.cx / w, nb.cy / h, nb.w / w, nb.h / h};
      if (!nb.inside_unit()) {
        fits = false;
        break;
      }
      new_boxes.push_back(nb);
    }
    if (!fits) {
      if (skip_log) skip_log->push_back("whole-image rotation skipped: box would truncate");
    } else if (deg != 0) {
      Image rotated(w, h);
      const double ca = std::cos(-a), sa = std::sin(-a);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double xc = x + 0.5 - w / 2.0, yc = y + 0.5 - h / 2.0;
          const double sx = w / 2.0 + ca * xc - sa * yc - 0.5;
          const double sy = h / 2.0 + sa * xc + ca * yc - 0.5;
          double c[3];
          sample_bilinear(out.image, sx, sy, c);
          std::uint8_t* p = rotated.at(x, y);
          for (int ch = 0; ch < 3; ++ch) p[ch] = clamp_u8(c[ch]);
        }
      out.image = std::move(rotated);
      for (size_t i = 0; i < out.annotations.size(); ++i) out.annotations[i].box = new_boxes[i];
    }
  }

  // Crop/shift: translation clamped so no box is truncated.
  if (cfg.crop_shift) {
    double lo_x = -cfg.shift_max, hi_x = cfg.shift_max;
    double lo_y = -cfg.shift_max, hi_y = cfg.shift_max;
    for (const auto& a : out.annotations) {
      lo_x = std::max(lo_x, -a.box.x_min());
      hi_x = std::min(hi_x, 1.0 - a.box.x_max());
      lo_y = std::max(lo_y, -a.box.y_min());
      hi_y = std::min(hi_y, 1.0 - a.box.y_max());
    }
    if (lo_x <= hi_x && lo_y <= hi_y) {
      const double sx = rng.uniform(lo_x, hi_x), sy = rng.uniform(lo_y, hi_y);
      // Rounding to whole pixels must not overshoot the feasible window, or a
      // box at the edge would be truncated by a fraction of a pixel. The zero
      // shift is always feasible, so the integer window is never empty.
      auto quantize = [](double s, double lo, double hi, int extent) {
        const int q_lo = static_cast<int>(std::ceil(lo * extent - 1e-9));
        const int q_hi = static_cast<int>(std::floor(hi * extent + 1e-9));
        return std::clamp(static_cast<int>(std::lround(s * extent)), q_lo, q_hi);
      };
      const int px = quantize(sx, lo_x, hi_x, w);
      const int py = quantize(sy, lo_y, hi_y, h);
      if (px != 0 || py != 0) {
        Image shifted(w, h);
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            const int ox = std::clamp(x - px, 0, w - 1);
            const int oy = std::clamp(y - py, 0, h - 1);
            std::copy_n(out.image.at(ox, oy), 3, shifted.at(x, y));
          }
        out.image = std::move(shifted);
        for (auto& a : out.annotations) {
          a.box.cx = std::clamp(a.box.cx + static_cast<double>(px) / w, 0.0, 1.0);
          a.box.cy = std::clamp(a.box.cy + static_cast<double>(py) / h, 0.0, 1.0);
        }
      }
    } else if (skip_log) {
      skip_log->push_back("crop/shift skipped: no feasible offset");
    }
  }

  // Elastic: smoothed random displacement field; boxes inflate by the actual
  // maximum displacement so warped pixels stay inside them.
  if (cfg.elastic && cfg.elastic_alpha > 0) {
    std::vector<double> dx, dy;
    detail::elastic_field(w, h, cfg.elastic_alpha, cfg.elastic_sigma, rng, dx, dy);
    Image warped(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const size_t i = static_cast<size_t>(y) * w + x;
        double c[3];
        sample_bilinear(out.image, x - dx[i], y - dy[i], c);
        std::uint8_t* p = warped.at(x, y);
        for (int ch = 0; ch < 3; ++ch) p[ch] = clamp_u8(c[ch]);
      }
    out.image = std::move(warped);
    for (auto& a : out.annotations) {
      const double ix = cfg.elastic_alpha / w, iy = cfg.elastic_alpha / h;
      const double x0 = std::max(0.0, a.box.x_min() - ix);
      const double x1 = std::min(1.0, a.box.x_max() + ix);
      const double y0 = std::max(0.0, a.box.y_min() - iy);
      const double y1 = std::min(1.0, a.box.y_max() + iy);
      a.box = Box::from_corners(x0, y0, x1, y1);
    }
  }

  if (cfg.blur) {
    const double sigma = rng.uniform(0, cfg.blur_sigma_max);
    if (sigma > 0.2) detail::gaussian_blur_inplace(out.image, sigma);
  }

  if (cfg.color_jitter) {
    const double gain = 1.0 + rng.uniform(-cfg.brightness_max, cfg.brightness_max);
    const double sat = 1.0 + rng.uniform(-cfg.saturation_max, cfg.saturation_max);
    const double hue = rng.uniform(-cfg.hue_max_deg, cfg.hue_max_deg);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        std::uint8_t* p = out.image.at(x, y);
        double hh, ss, vv;
        detail::rgb_to_hsv(p[0] / 255.0, p[1] / 255.0, p[2] / 255.0, hh, ss, vv);
        hh = std::fmod(hh + hue + 360.0, 360.0);
        ss = std::clamp(ss * sat, 0.0, 1.0);
        vv = std::clamp(vv * gain, 0.0, 1.0);
        double r, g, b;
        detail::hsv_to_rgb(hh, ss, vv, r, g, b);
        p[0] = clamp_u8(r * 255);
        p[1] = clamp_u8(g * 255);
        p[2] = clamp_u8(b * 255);
      }
  }

  if (cfg.noise) {
    const double sigma = rng.uniform(0, cfg.noise_sigma_max);
    if (sigma > 0)
      for (auto& v : out.image.pixels) v = clamp_u8(v + rng.normal(0, sigma));
  }

  return out;
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

struct SynthConfig {
  int count = 1000;
  std::string symbology = "ean13";
  SceneConfig scene;
  RenderRanges render;
  AugmentConfig augment;
  std::string background_dir;  // empty -> procedural backgrounds
  std::string split = "train";
};

struct SynthSummary {
  int samples = 0;
  std::map<int, int> object_count_hist;
  std::map<int, int> module_width_hist;  // from render sampling, approximate knob histogram
};

// Generates `count` samples into `out_dir` (PNG + JSON-lines manifest),
// byte-identical for a given seed regardless of scheduling: each sample is
// generated from seed = mix(master, index).
inline DatasetManifest generate_dataset(const SynthConfig& cfg, std::uint64_t seed,
                                        const std::string& out_dir,
                                        SynthSummary* summary = nullptr) {
  const Symbology sym = symbology_from_string(cfg.symbology);
  const SequenceSpec spec = sym == Symbology::EAN8 ? SequenceSpec::ean8() : SequenceSpec::ean13();

  std::vector<std::string> backgrounds;
  if (!cfg.background_dir.empty()) {
    for (const auto& e : std::filesystem::directory_iterator(cfg.background_dir))
      if (e.path().extension() == ".png") backgrounds.push_back(e.path().string());
    std::sort(backgrounds.begin(), backgrounds.end());
    if (backgrounds.empty())
      throw std::invalid_argument("no .png backgrounds in " + cfg.background_dir);
  }

  DatasetManifest manifest;
  manifest.root = out_dir;
  manifest.split = cfg.split;
  std::filesystem::create_directories(std::filesystem::path(out_dir) / "images");

  for (int i = 0; i < cfg.count; ++i) {
    const std::uint64_t sample_seed = mix_seed(seed, static_cast<std::uint64_t>(i));
    Rng rng(sample_seed);

    Image background;
    if (backgrounds.empty()) {
      background = procedural_background(cfg.scene.width, cfg.scene.height, rng);
    } else {
      Image src = read_png(backgrounds[rng.uniform_int(0, backgrounds.size() - 1)]);
      // Random crop (or pad) to scene size.
      const int ox = src.width > cfg.scene.width
                         ? static_cast<int>(rng.uniform_int(0, src.width - cfg.scene.width))
                         : 0;
      const int oy = src.height > cfg.scene.height
                         ? static_cast<int>(rng.uniform_int(0, src.height - cfg.scene.height))
                         : 0;
      background = Image(cfg.scene.width, cfg.scene.height);
      for (int y = 0; y < cfg.scene.height; ++y)
        for (int x = 0; x < cfg.scene.width; ++x)
          std::copy_n(src.at(std::min(ox + x, src.width - 1), std::min(oy + y, src.height - 1)), 3,
                      background.at(x, y));
    }

    const int n_codes = static_cast<int>(rng.uniform_int(cfg.scene.min_codes, cfg.scene.max_codes));
    std::vector<BarcodeSymbol> symbols;
    for (int k = 0; k < n_codes; ++k)
      symbols.push_back(encode(random_valid_sequence(spec, rng), sym));

    Sample sample = compose_scene(background, symbols, mix_seed(sample_seed, "scene"), cfg.augment,
                                  cfg.scene, cfg.render);
    sample = augment_sample(sample, cfg.augment, mix_seed(sample_seed, "image_aug"));

    char name[64];
    std::snprintf(name, sizeof(name), "images/%s_%06d.png", cfg.split.c_str(), i);
    write_png((std::filesystem::path(out_dir) / name).string(), sample.image);

    SampleRecord rec;
    rec.image = name;
    rec.width = sample.image.width;
    rec.height = sample.image.height;
    rec.objects = sample.annotations;
    manifest.records.push_back(std::move(rec));

    if (summary) {
      ++summary->samples;
      ++summary->object_count_hist[static_cast<int>(sample.annotations.size())];
    }
  }
  write_manifest(manifest);

  if (summary) {
    nlohmann::json j;
    j["samples"] = summary->samples;
    nlohmann::json hist = nlohmann::json::object();
    for (const auto& [k, v] : summary->object_count_hist) hist[std::to_string(k)] = v;
    j["object_count_hist"] = hist;
    std::ofstream f(std::filesystem::path(out_dir) / (cfg.split + "_summary.json"));
    f << j.dump(2) << "\n";
  }
  return manifest;
}

}  // namespace gridread
