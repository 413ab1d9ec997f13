#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "gridread/metrics.hpp"

using namespace gridread;
using Catch::Approx;

namespace {
GroundTruth gt(int image, double cx, double cy, double w, double h, std::string seq = "") {
  return {image, Box{cx, cy, w, h}, std::move(seq)};
}
EvalDetection det(int image, double cx, double cy, double w, double h, double conf,
                  std::string seq = "", bool valid = true) {
  return {image, Box{cx, cy, w, h}, conf, std::move(seq), valid};
}
}  // namespace

TEST_CASE("AP depends on TP/FP confidence order: 1.0 vs 0.5") {
  const std::vector<GroundTruth> gts = {gt(0, 0.5, 0.5, 0.2, 0.2)};
  // True positive more confident than the false positive: PR = (1,1) -> AP 1.
  {
    const std::vector<EvalDetection> dets = {det(0, 0.5, 0.5, 0.2, 0.2, 0.9),
                                             det(0, 0.1, 0.1, 0.05, 0.05, 0.5)};
    CHECK(average_precision(dets, gts) == Approx(1.0));
  }
  // False positive first: precision at the recall-1 point is 1/2 -> AP 0.5.
  {
    const std::vector<EvalDetection> dets = {det(0, 0.5, 0.5, 0.2, 0.2, 0.5),
                                             det(0, 0.1, 0.1, 0.05, 0.05, 0.9)};
    CHECK(average_precision(dets, gts) == Approx(0.5));
  }
}

TEST_CASE("IoU below 0.5 is a false positive") {
  const std::vector<GroundTruth> gts = {gt(0, 0.5, 0.5, 0.2, 0.2)};
  // Shifted so IoU = (0.2-dx)*0.2 / (2*0.04 - inter) = 0.45 target:
  // choose dx = 0.0759 -> ix = 0.1241, inter = 0.02482, union = 0.05518,
  // iou = 0.4498 < 0.5.
  const std::vector<EvalDetection> dets = {det(0, 0.5759, 0.5, 0.2, 0.2, 0.9)};
  REQUIRE(iou(dets[0].box, gts[0].box) < 0.5);
  REQUIRE(iou(dets[0].box, gts[0].box) > 0.4);
  CHECK(average_precision(dets, gts) == Approx(0.0));
}

TEST_CASE("AP edge cases: empty sets") {
  CHECK(average_precision({}, {}) == 1.0);
  CHECK(average_precision({det(0, 0.5, 0.5, 0.1, 0.1, 0.9)}, {}) == 0.0);
  CHECK(average_precision({}, {gt(0, 0.5, 0.5, 0.1, 0.1)}) == 0.0);
}

TEST_CASE("AP matches a hand-computed three-detection fixture") {
  // Two GTs; detections (conf desc): TP, FP, TP.
  // PR points: (1, 0.5), (1/2, 0.5), (2/3, 1.0).
  // Envelope precisions: 1, 2/3, 2/3 -> AP = 0.5*1 + 0.5*(2/3) = 5/6.
  const std::vector<GroundTruth> gts = {gt(0, 0.25, 0.25, 0.2, 0.2), gt(0, 0.75, 0.75, 0.2, 0.2)};
  const std::vector<EvalDetection> dets = {det(0, 0.25, 0.25, 0.2, 0.2, 0.9),
                                           det(0, 0.5, 0.5, 0.05, 0.05, 0.8),
                                           det(0, 0.75, 0.75, 0.2, 0.2, 0.7)};
  CHECK(average_precision(dets, gts) == Approx(5.0 / 6.0));
}

TEST_CASE("each ground truth is claimed at most once") {
  // Two detections on one GT: the second is a false positive (duplicate).
  const std::vector<GroundTruth> gts = {gt(0, 0.5, 0.5, 0.2, 0.2)};
  const std::vector<EvalDetection> dets = {det(0, 0.5, 0.5, 0.2, 0.2, 0.9),
                                           det(0, 0.5, 0.5, 0.21, 0.21, 0.8)};
  // PR: (1,1) then (1/2,1) -> AP 1.0 (duplicate does not add recall).
  CHECK(average_precision(dets, gts) == Approx(1.0));
}

TEST_CASE("matching respects image boundaries") {
  const std::vector<GroundTruth> gts = {gt(0, 0.5, 0.5, 0.2, 0.2)};
  const std::vector<EvalDetection> dets = {det(1, 0.5, 0.5, 0.2, 0.2, 0.9)};  // other image
  CHECK(average_precision(dets, gts) == Approx(0.0));
}

TEST_CASE("recognition rate needs validity, overlap and the exact sequence") {
  const std::vector<GroundTruth> gts = {gt(0, 0.5, 0.5, 0.2, 0.2, "96385074"),
                                        gt(1, 0.5, 0.5, 0.2, 0.2, "12345670")};
  std::vector<EvalDetection> dets = {det(0, 0.5, 0.5, 0.2, 0.2, 0.9, "96385074", true),
                                     det(1, 0.5, 0.5, 0.2, 0.2, 0.9, "12345679", true)};
  CHECK(recognition_rate(dets, gts) == Approx(0.5));  // second sequence wrong
  dets[1].sequence = "12345670";
  dets[1].valid = false;  // right digits but flagged unreadable
  CHECK(recognition_rate(dets, gts) == Approx(0.5));
  dets[1].valid = true;
  CHECK(recognition_rate(dets, gts) == Approx(1.0));
  // Duplicates count once.
  dets.push_back(dets[0]);
  CHECK(recognition_rate(dets, gts) == Approx(1.0));
  CHECK(recognition_rate(dets, {}) == -1.0);
}

TEST_CASE("area-ratio analysis bins by normalized box area") {
  // Large codes recognized, small codes not.
  std::vector<GroundTruth> gts;
  std::vector<EvalDetection> dets;
  int img = 0;
  for (int i = 0; i < 10; ++i) {
    const double side = 0.3;  // area 0.09
    gts.push_back(gt(img, 0.5, 0.5, side, side, "96385074"));
    dets.push_back(det(img, 0.5, 0.5, side, side, 0.9, "96385074", true));
    ++img;
  }
  for (int i = 0; i < 10; ++i) {
    gts.push_back(gt(img, 0.5, 0.5, 0.05, 0.05, "96385074"));  // area 0.0025
    ++img;                                                     // no detection at all
  }
  const auto bins = area_ratio_analysis(dets, gts, {0.0, 0.02, 0.2});
  REQUIRE(bins.size() == 2);
  CHECK(bins[0].total == 10);
  CHECK(bins[0].correct == 0);
  CHECK(bins[1].total == 10);
  CHECK(bins[1].correct == 10);
  // Monotone non-decreasing curve.
  CHECK(bins[0].rate() <= bins[1].rate());
}

TEST_CASE("area-ratio csv reproduces the analysis table") {
  const std::vector<AreaRatioBin> bins = {{0.0, 0.02, 5, 1}, {0.02, 0.1, 4, 4}};
  const auto path = (std::filesystem::temp_directory_path() / "gr_ratio.csv").string();
  write_area_ratio_csv(path, bins);
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  CHECK(line == "ratio_lo,ratio_hi,total,correct,correct_fraction");
  std::getline(f, line);
  CHECK(line == "0,0.02,5,1,0.2");
  std::getline(f, line);
  CHECK(line == "0.02,0.1,4,4,1");
  std::remove(path.c_str());
}

TEST_CASE("eval report serializes the headline metrics") {
  EvalReport r;
  r.map50 = 0.9;
  r.recognition = 0.8;
  r.images = 10;
  nlohmann::json j = r;
  CHECK(j.at("mAP@0.5").get<double>() == Approx(0.9));
  CHECK(j.at("recognition_rate").get<double>() == Approx(0.8));
  CHECK(j.at("images").get<int>() == 10);
}
