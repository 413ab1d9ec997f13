#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "gridread/decode.hpp"
#include "gridread/geometry.hpp"

namespace gridread {

struct GroundTruth {
  int image = 0;
  Box box;
  std::string sequence;
};

struct EvalDetection {
  int image = 0;
  Box box;
  double confidence = 0;
  std::string sequence;
  bool valid = false;
};

// ---------------------------------------------------------------------------
// Average precision (PASCAL-style): detections sorted by confidence, each
// claims the highest-IoU unclaimed ground truth at or above the threshold;
// AP is the area under the all-points interpolated precision/recall curve.
// ---------------------------------------------------------------------------

inline double average_precision(std::vector<EvalDetection> dets,
                                const std::vector<GroundTruth>& gts, double iou_threshold = 0.5) {
  if (gts.empty()) return dets.empty() ? 1.0 : 0.0;
  std::stable_sort(dets.begin(), dets.end(), [](const EvalDetection& a, const EvalDetection& b) {
    return a.confidence > b.confidence;
  });
  std::vector<bool> claimed(gts.size(), false);
  std::vector<int> tp(dets.size(), 0);
  for (size_t d = 0; d < dets.size(); ++d) {
    int best_g = -1;
    double best_iou = iou_threshold;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (claimed[g] || gts[g].image != dets[d].image) continue;
      const double v = iou(dets[d].box, gts[g].box);
      if (v >= best_iou && (best_g < 0 || v > best_iou)) {
        best_iou = v;
        best_g = static_cast<int>(g);
      }
    }
    if (best_g >= 0) {
      claimed[static_cast<size_t>(best_g)] = true;
      tp[d] = 1;
    }
  }
  double ap = 0;
  int cum_tp = 0;
  std::vector<double> recalls(dets.size()), precisions(dets.size());
  for (size_t d = 0; d < dets.size(); ++d) {
    cum_tp += tp[d];
    recalls[d] = static_cast<double>(cum_tp) / gts.size();
    precisions[d] = static_cast<double>(cum_tp) / static_cast<double>(d + 1);
  }
  // Precision envelope, then sum over recall increments.
  for (size_t d = dets.size(); d-- > 1;)
    precisions[d - 1] = std::max(precisions[d - 1], precisions[d]);
  double prev_recall = 0;
  for (size_t d = 0; d < dets.size(); ++d) {
    ap += (recalls[d] - prev_recall) * precisions[d];
    prev_recall = recalls[d];
  }
  return ap;
}

// ---------------------------------------------------------------------------
// Recognition rate: fraction of ground truths for which some valid detection
// with IoU >= 0.5 reads the exact sequence. Duplicates count once.
// ---------------------------------------------------------------------------

inline bool gt_recognized(const GroundTruth& g, const std::vector<EvalDetection>& dets,
                          double iou_threshold = 0.5) {
  for (const auto& d : dets) {
    if (d.image != g.image || !d.valid) continue;
    if (d.sequence == g.sequence && iou(d.box, g.box) >= iou_threshold) return true;
  }
  return false;
}

// Returns -1 when there are no ground truths (rate undefined).
inline double recognition_rate(const std::vector<EvalDetection>& dets,
                               const std::vector<GroundTruth>& gts, double iou_threshold = 0.5) {
  if (gts.empty()) return -1.0;
  int correct = 0;
  for (const auto& g : gts)
    if (gt_recognized(g, dets, iou_threshold)) ++correct;
  return static_cast<double>(correct) / gts.size();
}

// ---------------------------------------------------------------------------
// Area-ratio decodability analysis
// ---------------------------------------------------------------------------

struct AreaRatioBin {
  double lo = 0, hi = 0;
  int total = 0;
  int correct = 0;
  double rate() const { return total > 0 ? static_cast<double>(correct) / total : 0.0; }
};

inline std::vector<AreaRatioBin> area_ratio_analysis(const std::vector<EvalDetection>& dets,
                                                     const std::vector<GroundTruth>& gts,
                                                     const std::vector<double>& bin_edges) {
  std::vector<AreaRatioBin> bins;
  for (size_t i = 0; i + 1 < bin_edges.size(); ++i)
    bins.push_back({bin_edges[i], bin_edges[i + 1], 0, 0});
  for (const auto& g : gts) {
    const double ratio = g.box.area();  // boxes normalized; area == image-area ratio
    for (auto& b : bins) {
      if (ratio >= b.lo && ratio < b.hi) {
        ++b.total;
        if (gt_recognized(g, dets)) ++b.correct;
        break;
      }
    }
  }
  return bins;
}

inline void write_area_ratio_csv(const std::string& path, const std::vector<AreaRatioBin>& bins) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write csv: " + path);
  f << "ratio_lo,ratio_hi,total,correct,correct_fraction\n";
  for (const auto& b : bins) {
    std::ostringstream row;
    row << b.lo << "," << b.hi << "," << b.total << "," << b.correct << "," << b.rate() << "\n";
    f << row.str();
  }
}

// ---------------------------------------------------------------------------
// Evaluation report
// ---------------------------------------------------------------------------

struct EvalReport {
  double map50 = 0;
  double recognition = -1;
  int images = 0;
  int ground_truths = 0;
  int detections = 0;
  long long param_count = 0;
  long long mac_count = 0;
  double mean_latency_ms = 0;
  double median_latency_ms = 0;
  double p95_latency_ms = 0;
  int threads = 1;
  std::string precision = "f32";
};

inline void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"mAP@0.5", r.map50},
       {"recognition_rate", r.recognition},
       {"images", r.images},
       {"ground_truths", r.ground_truths},
       {"detections", r.detections},
       {"params", r.param_count},
       {"macs", r.mac_count},
       {"latency_ms", {{"mean", r.mean_latency_ms}, {"median", r.median_latency_ms},
                       {"p95", r.p95_latency_ms}}},
       {"threads", r.threads},
       {"precision", r.precision}};
}

inline std::string report_table(const EvalReport& r) {
  std::ostringstream os;
  os << "images            " << r.images << "\n"
     << "ground truths     " << r.ground_truths << "\n"
     << "detections        " << r.detections << "\n"
     << "mAP@0.5           " << r.map50 << "\n"
     << "recognition rate  " << (r.recognition < 0 ? std::string("n/a")
                                                   : std::to_string(r.recognition)) << "\n"
     << "params            " << r.param_count << "\n"
     << "MACs              " << r.mac_count << "\n";
  if (r.mean_latency_ms > 0)
    os << "latency ms        mean " << r.mean_latency_ms << "  median " << r.median_latency_ms
       << "  p95 " << r.p95_latency_ms << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Latency benchmarking (strictly single stream, batch 1)
// ---------------------------------------------------------------------------

struct LatencyStats {
  double mean_ms = 0, median_ms = 0, p95_ms = 0;
  int measured = 0;
};

template <typename T>
LatencyStats benchmark_latency(Network<T>& net, const std::vector<Image>& images,
                               const DecodeConfig& dc, int warmup = 10) {
  if (static_cast<int>(images.size()) <= warmup)
    throw std::invalid_argument("latency benchmark needs more images than warm-up iterations");
  std::vector<double> ms;
  for (size_t i = 0; i < images.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    auto dets = infer_tiled(net, images[i], dc);
    const auto t1 = std::chrono::steady_clock::now();
    (void)dets;
    if (static_cast<int>(i) >= warmup)
      ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(ms.begin(), ms.end());
  LatencyStats st;
  st.measured = static_cast<int>(ms.size());
  for (double v : ms) st.mean_ms += v;
  st.mean_ms /= ms.size();
  st.median_ms = ms[ms.size() / 2];
  st.p95_ms = ms[static_cast<size_t>(0.95 * (ms.size() - 1))];
  return st;
}

}  // namespace gridread
