#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gridread/dataset.hpp"
#include "gridread/geometry.hpp"
#include "gridread/net.hpp"
#include "gridread/tensor.hpp"

namespace gridread {

// ---------------------------------------------------------------------------
// Grid targets
// ---------------------------------------------------------------------------

struct CellTarget {
  bool has_object = false;
  double tx = 0, ty = 0;  // cell-relative center offsets in [0,1]
  double tw = 0, th = 0;  // image-relative size in [0,1]
  Box box;                // original normalized box
  std::vector<int> digit_classes;  // per slot, NA padded for short sequences
  int length = 0;                  // real sequence length
  std::string sequence;
};

struct GridTarget {
  int grid = 0;
  std::vector<CellTarget> cells;  // row-major S*S

  CellTarget& cell(int row, int col) { return cells[static_cast<size_t>(row) * grid + col]; }
  const CellTarget& cell(int row, int col) const {
    return cells[static_cast<size_t>(row) * grid + col];
  }
};

// The cell containing the object center is responsible for it; centers exactly
// on the far edge clamp into the last cell. A center collision keeps the
// larger-area object.
inline GridTarget encode_targets(const std::vector<Annotation>& annotations,
                                 const ModelConfig& cfg,
                                 std::vector<std::string>* collision_log = nullptr) {
  const int s = cfg.grid;
  GridTarget gt;
  gt.grid = s;
  gt.cells.assign(static_cast<size_t>(s) * s, CellTarget{});
  for (const auto& a : annotations) {
    if (!a.box.inside_unit())
      throw std::invalid_argument("annotation box outside [0,1]^2");
    const int col = std::min(static_cast<int>(a.box.cx * s), s - 1);
    const int row = std::min(static_cast<int>(a.box.cy * s), s - 1);
    CellTarget& c = gt.cell(row, col);
    if (c.has_object) {
      if (collision_log)
        collision_log->push_back("cell (" + std::to_string(row) + "," + std::to_string(col) +
                                 ") center collision; keeping larger object");
      if (a.box.area() <= c.box.area()) continue;
    }
    c.has_object = true;
    c.box = a.box;
    c.tx = a.box.cx * s - col;
    c.ty = a.box.cy * s - row;
    c.tw = a.box.w;
    c.th = a.box.h;
    c.sequence = a.sequence;
    c.length = static_cast<int>(a.sequence.size());
    c.digit_classes.assign(cfg.spec.max_length, -1);
    for (int i = 0; i < cfg.spec.max_length; ++i) {
      if (i < c.length) {
        c.digit_classes[i] = a.sequence[i] - '0';
      } else if (cfg.spec.has_na_class) {
        c.digit_classes[i] = cfg.spec.na_class();
      } else {
        throw std::invalid_argument("sequence shorter than L without an NA class: " + a.sequence);
      }
    }
  }
  return gt;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

struct LossConfig {
  double lambda_coord = 5.0;
  double lambda_noobj = 0.5;
  double lambda_class = 1.0;
};

struct LossBreakdown {
  double xy = 0, wh = 0, obj = 0, noobj = 0, cls = 0;
  double total() const { return xy + wh + obj + noobj + cls; }
};

namespace detail {

// IoU of a predicted box against a fixed ground-truth box together with the
// partial derivatives w.r.t. the predicted (cx, cy, w, h).
struct IouGrad {
  double value = 0;
  double dcx = 0, dcy = 0, dw = 0, dh = 0;
};

inline IouGrad iou_with_grad(const Box& p, const Box& g) {
  IouGrad r;
  const double ix = std::min(p.x_max(), g.x_max()) - std::max(p.x_min(), g.x_min());
  const double iy = std::min(p.y_max(), g.y_max()) - std::max(p.y_min(), g.y_min());
  if (ix <= 0 || iy <= 0 || p.w <= 0 || p.h <= 0) return r;
  const double inter = ix * iy;
  const double uni = p.area() + g.area() - inter;
  if (uni <= 0) return r;
  r.value = inter / uni;

  const double dix_dcx = (p.x_max() < g.x_max() ? 1.0 : 0.0) - (p.x_min() > g.x_min() ? 1.0 : 0.0);
  const double dix_dw = 0.5 * (p.x_max() < g.x_max() ? 1.0 : 0.0) +
                        0.5 * (p.x_min() > g.x_min() ? 1.0 : 0.0);
  const double diy_dcy = (p.y_max() < g.y_max() ? 1.0 : 0.0) - (p.y_min() > g.y_min() ? 1.0 : 0.0);
  const double diy_dh = 0.5 * (p.y_max() < g.y_max() ? 1.0 : 0.0) +
                        0.5 * (p.y_min() > g.y_min() ? 1.0 : 0.0);

  auto chain = [&](double dinter, double darea) {
    return (dinter * uni - inter * (darea - dinter)) / (uni * uni);
  };
  r.dcx = chain(dix_dcx * iy, 0.0);
  r.dcy = chain(ix * diy_dcy, 0.0);
  r.dw = chain(dix_dw * iy, p.h);
  r.dh = chain(ix * diy_dh, p.w);
  return r;
}

}  // namespace detail

// Five-term detection/recognition loss over an activated output batch
// [N, C, S, S]. Per object cell, the box with highest IoU against the ground
// truth is responsible; its confidence target is that IoU (the term is
// differentiated through the IoU as well, so the whole loss passes
// finite-difference checks). The result is averaged over the batch. When
// `grad` is given it receives dLoss/dOutput with the same shape.
template <typename T>
LossBreakdown detection_loss(const Tensor<T>& pred, const std::vector<GridTarget>& targets,
                             const ModelConfig& cfg, const LossConfig& lc,
                             Tensor<T>* grad = nullptr) {
  const int n_batch = pred.dim(0);
  const int s = cfg.grid;
  const int b_boxes = cfg.boxes;
  if (pred.dim(1) != cfg.head_channels() || pred.dim(2) != s || pred.dim(3) != s)
    throw ShapeError("prediction tensor does not match model config: " + shape_str(pred));
  if (static_cast<int>(targets.size()) != n_batch)
    throw ShapeError("target batch size mismatch");
  for (size_t i = 0; i < pred.data.size(); ++i)
    if (!std::isfinite(static_cast<double>(pred.data[i])))
      throw NumericError("NaN/Inf in prediction tensor");

  if (grad) {
    *grad = Tensor<T>(pred.shape);
  }
  LossBreakdown sum;
  const double inv_n = 1.0 / std::max(1, n_batch);

  for (int n = 0; n < n_batch; ++n) {
    const GridTarget& gt = targets[n];
    for (int row = 0; row < s; ++row) {
      for (int col = 0; col < s; ++col) {
        const CellTarget& cell = gt.cell(row, col);
        // Predicted boxes in global normalized coordinates.
        int responsible = -1;
        detail::IouGrad best_iou;
        if (cell.has_object) {
          for (int j = 0; j < b_boxes; ++j) {
            const double px = (col + static_cast<double>(pred.at4(n, 5 * j + 0, row, col))) / s;
            const double py = (row + static_cast<double>(pred.at4(n, 5 * j + 1, row, col))) / s;
            const double pw = pred.at4(n, 5 * j + 2, row, col);
            const double ph = pred.at4(n, 5 * j + 3, row, col);
            const auto ig = detail::iou_with_grad(Box{px, py, pw, ph}, cell.box);
            if (responsible < 0 || ig.value > best_iou.value) {
              responsible = j;
              best_iou = ig;
            }
          }
        }
        for (int j = 0; j < b_boxes; ++j) {
          const double conf = pred.at4(n, 5 * j + 4, row, col);
          if (cell.has_object && j == responsible) {
            const double x = pred.at4(n, 5 * j + 0, row, col);
            const double y = pred.at4(n, 5 * j + 1, row, col);
            const double w = pred.at4(n, 5 * j + 2, row, col);
            const double h = pred.at4(n, 5 * j + 3, row, col);
            sum.xy += lc.lambda_coord * ((x - cell.tx) * (x - cell.tx) +
                                         (y - cell.ty) * (y - cell.ty)) * inv_n;
            const double sw = std::sqrt(std::max(w, 0.0)), stw = std::sqrt(cell.tw);
            const double sh = std::sqrt(std::max(h, 0.0)), sth = std::sqrt(cell.th);
            sum.wh += lc.lambda_coord * ((sw - stw) * (sw - stw) + (sh - sth) * (sh - sth)) * inv_n;
            const double cdiff = conf - best_iou.value;
            sum.obj += cdiff * cdiff * inv_n;
            if (grad) {
              grad->at4(n, 5 * j + 0, row, col) +=
                  static_cast<T>(inv_n * (2 * lc.lambda_coord * (x - cell.tx) -
                                          2 * cdiff * best_iou.dcx / s));
              grad->at4(n, 5 * j + 1, row, col) +=
                  static_cast<T>(inv_n * (2 * lc.lambda_coord * (y - cell.ty) -
                                          2 * cdiff * best_iou.dcy / s));
              const double dwh_w = w > 0 ? lc.lambda_coord * (sw - stw) / sw : 0.0;
              const double dwh_h = h > 0 ? lc.lambda_coord * (sh - sth) / sh : 0.0;
              grad->at4(n, 5 * j + 2, row, col) +=
                  static_cast<T>(inv_n * (dwh_w - 2 * cdiff * best_iou.dw));
              grad->at4(n, 5 * j + 3, row, col) +=
                  static_cast<T>(inv_n * (dwh_h - 2 * cdiff * best_iou.dh));
              grad->at4(n, 5 * j + 4, row, col) += static_cast<T>(inv_n * 2 * cdiff);
            }
          } else {
            sum.noobj += lc.lambda_noobj * conf * conf * inv_n;
            if (grad)
              grad->at4(n, 5 * j + 4, row, col) +=
                  static_cast<T>(inv_n * 2 * lc.lambda_noobj * conf);
          }
        }
        if (cell.has_object) {
          const int cpd = cfg.spec.classes_per_digit();
          int off = cfg.box_channels();
          for (int slot = 0; slot < cfg.spec.max_length; ++slot) {
            for (int c = 0; c < cpd; ++c) {
              const double p = pred.at4(n, off + c, row, col);
              const double tgt = cell.digit_classes[slot] == c ? 1.0 : 0.0;
              sum.cls += lc.lambda_class * (p - tgt) * (p - tgt) * inv_n;
              if (grad)
                grad->at4(n, off + c, row, col) +=
                    static_cast<T>(inv_n * 2 * lc.lambda_class * (p - tgt));
            }
            off += cpd;
          }
          if (cfg.spec.has_length_head) {
            for (int c = 0; c < cfg.spec.length_classes(); ++c) {
              const double p = pred.at4(n, off + c, row, col);
              const double tgt = cell.length == c ? 1.0 : 0.0;
              sum.cls += lc.lambda_class * (p - tgt) * (p - tgt) * inv_n;
              if (grad)
                grad->at4(n, off + c, row, col) +=
                    static_cast<T>(inv_n * 2 * lc.lambda_class * (p - tgt));
            }
          }
        }
      }
    }
  }
  return sum;
}

}  // namespace gridread
