#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "gridread/ean.hpp"
#include "gridread/geometry.hpp"
#include "gridread/image.hpp"
#include "gridread/net.hpp"
#include "gridread/tensor.hpp"

namespace gridread {

enum class DetectionStatus { valid, unreadable };

struct Detection {
  Box box;  // normalized center format
  double box_confidence = 0;
  std::string sequence;      // per-digit argmax, NA slots dropped
  double mean_max_prob = 0;
  double final_confidence = 0;  // box_confidence * mean_max_prob
  DetectionStatus status = DetectionStatus::unreadable;
  int predicted_length = -1;  // argmax of the length head, if present
  int cell_index = 0;         // row-major cell, used as a deterministic tie break
};

struct DecodeConfig {
  double confidence_threshold = 0.2;
  double nms_iou_threshold = 0.3;
  int tile_size = 448;
  int tile_stride = 448 - 64;  // overlap so seam objects are seen whole at least once

  void validate_config() const {
    if (confidence_threshold < 0 || confidence_threshold > 1 || nms_iou_threshold < 0 ||
        nms_iou_threshold > 1)
      throw ConfigError("decode thresholds must lie in [0,1]");
    if (tile_stride > tile_size || tile_stride < 1)
      throw ConfigError("tile stride must be in [1, tile size]");
  }
};

// ---------------------------------------------------------------------------
// Tensor decoding
// ---------------------------------------------------------------------------

// One candidate per (cell, box) whose combined confidence clears the
// threshold. The sequence is read once per cell and shared by its B boxes.
template <typename T>
std::vector<Detection> decode_tensor(const Tensor<T>& output, int n, const ModelConfig& cfg,
                                     const DecodeConfig& dc) {
  const int s = cfg.grid;
  const int cpd = cfg.spec.classes_per_digit();
  std::vector<Detection> dets;
  for (int row = 0; row < s; ++row) {
    for (int col = 0; col < s; ++col) {
      // Per-cell sequence and mean max probability.
      std::string seq;
      double prob_sum = 0;
      int off = cfg.box_channels();
      for (int slot = 0; slot < cfg.spec.max_length; ++slot) {
        int best_c = 0;
        double best_p = -1;
        for (int c = 0; c < cpd; ++c) {
          const double p = output.at4(n, off + c, row, col);
          if (p > best_p) {
            best_p = p;
            best_c = c;
          }
        }
        prob_sum += best_p;
        if (!(cfg.spec.has_na_class && best_c == cfg.spec.na_class()))
          seq += static_cast<char>('0' + best_c);
        off += cpd;
      }
      const double mean_max = prob_sum / cfg.spec.max_length;
      int pred_len = -1;
      if (cfg.spec.has_length_head) {
        double best_p = -1;
        for (int c = 0; c < cfg.spec.length_classes(); ++c) {
          const double p = output.at4(n, off + c, row, col);
          if (p > best_p) {
            best_p = p;
            pred_len = c;
          }
        }
      }
      for (int j = 0; j < cfg.boxes; ++j) {
        const double conf = output.at4(n, 5 * j + 4, row, col);
        const double final_conf = conf * mean_max;
        if (final_conf < dc.confidence_threshold) continue;
        Detection d;
        d.box.cx = (col + static_cast<double>(output.at4(n, 5 * j + 0, row, col))) / s;
        d.box.cy = (row + static_cast<double>(output.at4(n, 5 * j + 1, row, col))) / s;
        d.box.w = output.at4(n, 5 * j + 2, row, col);
        d.box.h = output.at4(n, 5 * j + 3, row, col);
        d.box_confidence = conf;
        d.sequence = seq;
        d.mean_max_prob = mean_max;
        d.final_confidence = final_conf;
        d.predicted_length = pred_len;
        d.cell_index = row * s + col;
        dets.push_back(std::move(d));
      }
    }
  }
  return dets;
}

// ---------------------------------------------------------------------------
// NMS: greedy descending-confidence suppression; a detection is dropped when
// its IoU with an already-kept one exceeds the threshold. Ties break by
// confidence then cell row-major index for determinism.
// ---------------------------------------------------------------------------

inline std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.final_confidence != b.final_confidence) return a.final_confidence > b.final_confidence;
    return a.cell_index < b.cell_index;
  });
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (iou(d.box, k.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

// ---------------------------------------------------------------------------
// Validity
// ---------------------------------------------------------------------------

// status = valid iff the sequence passes the symbology/profile validity rule
// and, when a length head is present, the predicted length agrees with the
// number of read digits. Invalid detections keep their boxes as unreadable.
inline void classify_validity(std::vector<Detection>& dets, const SequenceSpec& spec) {
  for (auto& d : dets) {
    bool ok = validate(d.sequence, spec);
    if (ok && spec.has_length_head &&
        d.predicted_length != static_cast<int>(d.sequence.size()))
      ok = false;
    d.status = ok ? DetectionStatus::valid : DetectionStatus::unreadable;
  }
}

// ---------------------------------------------------------------------------
// Tiled inference
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> image_to_tensor(const Image& img) {
  Tensor<T> t({1, 3, img.height, img.width});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        t.at4(0, c, y, x) = static_cast<T>(img.at(x, y)[c]) / T(255);
  return t;
}

inline Image crop_pad(const Image& img, int x0, int y0, int size, std::uint8_t fill = 127) {
  Image out(size, size, fill, fill, fill);
  for (int y = 0; y < size; ++y) {
    const int sy = y0 + y;
    if (sy < 0 || sy >= img.height) continue;
    for (int x = 0; x < size; ++x) {
      const int sx = x0 + x;
      if (sx < 0 || sx >= img.width) continue;
      std::copy_n(img.at(sx, sy), 3, out.at(x, y));
    }
  }
  return out;
}

// Full-image inference: slices the input into standard-size tiles by stride,
// predicts each tile, maps boxes back by tile origin, pools and applies a
// second NMS. Images smaller than a tile are padded. Boxes come back
// normalized to the input image dimensions.
template <typename Model>
std::vector<Detection> infer_tiled(Model& net, const Image& img, const DecodeConfig& dc) {
  using T = typename Model::value_type;
  dc.validate_config();
  const ModelConfig& cfg = net.config();
  const int tile = cfg.input_size;
  auto origins = [&](int extent) {
    std::vector<int> v;
    if (extent <= tile) {
      v.push_back(0);
      return v;
    }
    for (int o = 0; o + tile < extent; o += dc.tile_stride) v.push_back(o);
    v.push_back(extent - tile);  // flush final tile to the far edge
    return v;
  };
  const auto xs = origins(img.width);
  const auto ys = origins(img.height);

  std::vector<Detection> pooled;
  for (int oy : ys) {
    for (int ox : xs) {
      const Image tile_img = crop_pad(img, ox, oy, tile);
      Tensor<T> out = net.forward(image_to_tensor<T>(tile_img), false);
      auto dets = decode_tensor(out, 0, cfg, dc);
      dets = nms(std::move(dets), dc.nms_iou_threshold);
      for (auto& d : dets) {
        d.box.cx = (ox + d.box.cx * tile) / img.width;
        d.box.cy = (oy + d.box.cy * tile) / img.height;
        d.box.w = d.box.w * tile / img.width;
        d.box.h = d.box.h * tile / img.height;
        pooled.push_back(std::move(d));
      }
    }
  }
  auto final_dets = nms(std::move(pooled), dc.nms_iou_threshold);
  classify_validity(final_dets, cfg.spec);
  return final_dets;
}

inline const char* to_string(DetectionStatus s) {
  return s == DetectionStatus::valid ? "valid" : "unreadable";
}

}  // namespace gridread
