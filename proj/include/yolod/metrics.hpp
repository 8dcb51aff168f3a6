#pragma once

// Post-processing and evaluation: NMS, COCO-style AP over IoU .50:.05:.95
// with 101-point interpolation, and the per-class error-detection rate
// FP/(FP+TP) at an operating confidence.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "yolod/box.hpp"
#include "yolod/dataset.hpp"
#include "yolod/detector.hpp"

namespace yolod {

struct Detection {
  Box box;  // pixels; box.cls is the class id
  double confidence = 0;
  bool operator==(const Detection&) const = default;
};

// Greedy per class, highest confidence first; drops boxes overlapping a kept
// one by more than iou_thr. Output sorted by descending confidence.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_thr = 0.65, double conf_thr = 0.0);

struct EvalCounts {
  std::int64_t tp = 0, fp = 0, fn = 0;
};

// TP/(TP+FP); 1 when nothing was claimed.
double precision(const EvalCounts& c);
// 1 - precision, which equals FP/(FP+TP); 0 when nothing was claimed.
double error_detection(const EvalCounts& c);
bool no_detections(const EvalCounts& c);
// TP/(TP+FN); absent without ground truth.
std::optional<double> recall(const EvalCounts& c);

struct EvalConfig {
  int num_classes = 2;
  double conf_thr = 0.25;  // operating point for ED, precision and recall
  double match_iou = 0.5;  // IoU for the operating-point counts
  int max_dets = 100;      // per image and class, as in COCO
};

inline constexpr std::array<double, 10> kIouThresholds{0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95};

// AP values are -1 where no ground truth exists (COCO convention).
struct ApReport {
  double ap = -1, ap50 = -1, ap75 = -1;
  double ap_s = -1, ap_m = -1, ap_l = -1;
  double ar100 = -1;
  std::array<double, 10> ap_by_iou{};  // mean over classes per threshold
  std::vector<double> class_ap;        // .50:.95 per class
  std::vector<double> class_ap50;
  std::vector<EvalCounts> counts;  // per class at the operating point
  std::vector<double> class_ed;
  std::vector<double> class_precision;
  std::vector<std::optional<double>> class_recall;
  double ae = 0;              // mean ED over classes that claimed detections
  bool ae_defined = false;
};

// One precision/recall AP for a single class, IoU threshold and area range
// [area_lo, area_hi); -1 without ground truth in range.
double average_precision(const std::vector<std::vector<Detection>>& dets, const std::vector<std::vector<Box>>& gts,
                         int cls, double iou_thr, double area_lo = 0, double area_hi = 1e10, int max_dets = 100);

// dets[i] and gts[i] belong to the same image.
ApReport evaluate(const std::vector<std::vector<Detection>>& dets, const std::vector<std::vector<Box>>& gts,
                  const EvalConfig& cfg = {});

// Human-readable table and a two-column metric,value CSV.
std::string format_report(const ApReport& r);
void write_report_csv(const std::filesystem::path& path, const ApReport& r);

struct DetectConfig {
  double conf_thr = 0.001;
  double iou_thr = 0.65;
  int max_dets = 300;
};

// Decodes all three head outputs of one image, scores obj*cls of the best
// class, then runs NMS.
template <typename T>
std::vector<Detection> detect(const std::array<const BasicTensor<T>*, 3>& raw, int image, const ModelConfig& cfg,
                              const DetectConfig& dc = {});

// Eval-mode inference over a dataset in batches.
std::vector<std::vector<Detection>> predict(const Detector& model, const Dataset& data, const DetectConfig& dc = {},
                                            int batch_size = 8);

// "name cx,cy,w,h,class,conf; ..." per image.
void write_predictions(const std::filesystem::path& path, const Dataset& data,
                       const std::vector<std::vector<Detection>>& dets);

}  // namespace yolod
