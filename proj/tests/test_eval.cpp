#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <unistd.h>

#include "doctest.h"
#include "yolod/metrics.hpp"

using namespace yolod;

namespace {

Box xyxy(double x1, double y1, double x2, double y2, int cls = 0) { return box_from_corners(x1, y1, x2, y2, cls); }

Detection det(Box b, double conf) { return {b, conf}; }

// Brute-force evaluator for one class and threshold: for every cutoff k the
// top-k detections (by confidence) are matched from scratch, image by image,
// each detection taking the highest-IoU free gt at or above the threshold.
// AP is the mean over r in {0, .01, ..., 1} of the best precision reached at
// recall >= r.
double brute_ap(const std::vector<std::vector<Detection>>& dets, const std::vector<std::vector<Box>>& gts, int cls,
                double thr) {
  struct Ref {
    std::size_t image;
    Detection d;
  };
  std::vector<Ref> all;
  int n_gt = 0;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    for (const Box& g : gts[i]) n_gt += g.cls == cls;
    for (const Detection& d : dets[i]) {
      if (d.box.cls == cls) all.push_back({i, d});
    }
  }
  if (n_gt == 0) return -1;
  std::sort(all.begin(), all.end(), [](const Ref& a, const Ref& b) { return a.d.confidence > b.d.confidence; });
  std::vector<std::pair<double, double>> points;  // (recall, precision)
  for (std::size_t k = 1; k <= all.size(); ++k) {
    int tp = 0;
    for (std::size_t i = 0; i < gts.size(); ++i) {
      std::vector<bool> used(gts[i].size(), false);
      for (std::size_t j = 0; j < k; ++j) {
        if (all[j].image != i) continue;
        int best = -1;
        double best_iou = thr;
        for (std::size_t g = 0; g < gts[i].size(); ++g) {
          if (gts[i][g].cls != cls || used[g]) continue;
          const double v = iou(all[j].d.box, gts[i][g]);
          if (v >= best_iou) {
            best_iou = v;
            best = static_cast<int>(g);
          }
        }
        if (best >= 0) {
          used[static_cast<std::size_t>(best)] = true;
          ++tp;
        }
      }
    }
    points.emplace_back(static_cast<double>(tp) / n_gt, static_cast<double>(tp) / static_cast<double>(k));
  }
  double s = 0;
  for (int r = 0; r <= 100; ++r) {
    double best = 0;
    for (const auto& [rc, pr] : points) {
      if (rc >= r * 0.01) best = std::max(best, pr);
    }
    s += best;
  }
  return s / 101.0;
}

}  // namespace

TEST_CASE("iou examples") {
  const Box a = xyxy(0, 0, 2, 2);
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, xyxy(5, 5, 6, 6)) == 0.0);
  CHECK(iou(a, xyxy(1, 1, 3, 3)) == doctest::Approx(1.0 / 7.0).epsilon(1e-15));
  CHECK(iou(a, xyxy(2, 0, 4, 2)) == 0.0);
}

TEST_CASE("nms examples") {
  const Box a = xyxy(0, 0, 10, 10);
  const Box b = xyxy(0, 0, 10, 11.1);  // IoU 100/111 = 0.9
  auto kept = nms({det(b, 0.8), det(a, 0.9)}, 0.65);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].confidence == 0.9);
  kept = nms({det(a, 0.5), det(xyxy(20, 20, 30, 30), 0.7)}, 0.65);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].confidence == 0.7);
  kept = nms({det(a, 0.1), det(xyxy(20, 20, 30, 30), 0.7)}, 0.65, 0.25);
  CHECK(kept.size() == 1);
  // Overlapping boxes of different classes are both kept.
  kept = nms({det(a, 0.9), det(xyxy(0, 0, 10, 10, 1), 0.8)}, 0.65);
  CHECK(kept.size() == 2);
}

TEST_CASE("precision, recall and error detection") {
  CHECK(precision({8, 2, 0}) == 0.8);
  CHECK(error_detection({8, 2, 0}) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(*recall({8, 0, 8}) == 0.5);
  CHECK_FALSE(recall({0, 3, 0}).has_value());
  CHECK(no_detections({0, 0, 4}));
  CHECK(error_detection({0, 0, 4}) == 0.0);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 10000; ++i) {
    const EvalCounts c{static_cast<std::int64_t>(rng() % 50), static_cast<std::int64_t>(rng() % 50),
                       static_cast<std::int64_t>(rng() % 50)};
    if (no_detections(c)) continue;
    CHECK(error_detection(c) + precision(c) == 1.0);
    CHECK(error_detection(c) == doctest::Approx(static_cast<double>(c.fp) / (c.fp + c.tp)).epsilon(1e-15));
  }
}

TEST_CASE("single detection at IoU 0.6 and 0.4") {
  const Box gt = xyxy(0, 0, 10, 10);
  const Box hit = xyxy(0, 0, 10, 10.0 / 0.6);  // IoU 0.6
  const Box miss = xyxy(0, 0, 10, 25);          // IoU 0.4
  CHECK(iou(gt, hit) == doctest::Approx(0.6));
  ApReport r = evaluate({{det(hit, 0.9)}}, {{gt}}, {.num_classes = 1});
  CHECK(r.ap50 == 1.0);
  CHECK(r.counts[0].tp == 1);
  r = evaluate({{det(miss, 0.9)}}, {{gt}}, {.num_classes = 1});
  CHECK(r.ap50 == 0.0);
  CHECK(r.counts[0].fp == 1);
  CHECK(r.counts[0].fn == 1);
}

TEST_CASE("hand-enumerated three-image curve") {
  // Sorted detections: .9 TP, .8 TP, .7 FP (duplicate), .6 FP, .5 TP over
  // five gts. Recall .2 .4 .4 .4 .6 with precision 1 1 2/3 1/2 3/5; the
  // interpolated precision is 1 up to recall .4 and .6 up to recall .6, so
  // AP = (21 + 20 + 20 * 0.6) / 101 = 53/101.
  const std::vector<std::vector<Box>> gts{
      {xyxy(0, 0, 10, 10), xyxy(20, 20, 30, 30)}, {xyxy(0, 0, 10, 10)}, {xyxy(0, 0, 10, 10), xyxy(40, 40, 50, 50)}};
  const std::vector<std::vector<Detection>> dets{{det(xyxy(0, 0, 10, 10), 0.9), det(xyxy(50, 50, 60, 60), 0.6)},
                                                 {det(xyxy(0, 0, 10, 10), 0.8), det(xyxy(1, 0, 11, 10), 0.7)},
                                                 {det(xyxy(40, 40, 50, 50), 0.5)}};
  const ApReport r = evaluate(dets, gts, {.num_classes = 1});
  CHECK(r.ap50 == doctest::Approx(53.0 / 101.0).epsilon(1e-14));
  CHECK(r.ap == doctest::Approx(53.0 / 101.0).epsilon(1e-14));
  CHECK(r.ap_s == doctest::Approx(53.0 / 101.0).epsilon(1e-14));
  CHECK(r.ap_m == -1);
  CHECK(r.ap_l == -1);
  CHECK(r.ar100 == doctest::Approx(0.6));
  CHECK(r.counts[0].tp == 3);
  CHECK(r.counts[0].fp == 2);
  CHECK(r.counts[0].fn == 2);
  CHECK(r.class_ed[0] == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(*r.class_recall[0] == 0.6);
  CHECK(r.ae == r.class_ed[0]);
}

TEST_CASE("object-size partition") {
  const Box small = xyxy(0, 0, 20, 20), medium = xyxy(100, 100, 150, 150), large = xyxy(200, 200, 320, 320);
  const std::vector<std::vector<Box>> gts{{small, medium, large}};
  // Small and large found, medium missed.
  const ApReport r = evaluate({{det(small, 0.9), det(large, 0.8), det(xyxy(400, 400, 450, 450), 0.7)}}, gts,
                              {.num_classes = 1});
  CHECK(r.ap_s == 1.0);
  CHECK(r.ap_l == 1.0);
  CHECK(r.ap_m == 0.0);
}

TEST_CASE("evaluator agrees with the brute-force evaluator on random instances") {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> coord(0, 12);
  int compared = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const int images = 1 + static_cast<int>(rng() % 5);
    std::vector<std::vector<Box>> gts(static_cast<std::size_t>(images));
    std::vector<std::vector<Detection>> dets(static_cast<std::size_t>(images));
    std::vector<double> confs;
    for (int i = 0; i < 60; ++i) confs.push_back((i + 1) / 61.0);
    std::shuffle(confs.begin(), confs.end(), rng);
    std::size_t next = 0;
    auto rand_box = [&](int cls) {
      const double x = coord(rng), y = coord(rng);
      return xyxy(x, y, x + 2 + coord(rng) / 3, y + 2 + coord(rng) / 3, cls);
    };
    for (int i = 0; i < images; ++i) {
      const int ng = static_cast<int>(rng() % 7), nd = static_cast<int>(rng() % 7);
      for (int k = 0; k < ng; ++k) gts[static_cast<std::size_t>(i)].push_back(rand_box(static_cast<int>(rng() % 2)));
      for (int k = 0; k < nd; ++k) {
        dets[static_cast<std::size_t>(i)].push_back(det(rand_box(static_cast<int>(rng() % 2)), confs[next++]));
      }
    }
    for (int c = 0; c < 2; ++c) {
      for (double thr : {0.5, 0.75, 0.9}) {
        const double want = brute_ap(dets, gts, c, thr);
        const double got = average_precision(dets, gts, c, thr);
        CAPTURE(trial);
        CHECK(got == doctest::Approx(want).epsilon(1e-12));
        ++compared;
      }
    }
  }
  CHECK(compared == 1800);
}

TEST_CASE("AP is monotone under added detections and in the IoU threshold") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 80), s(6, 20), conf(0.05, 0.95), jitter(-2, 2);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::vector<Box>> gts(3);
    std::vector<std::vector<Detection>> dets(3);
    for (int i = 0; i < 3; ++i) {
      for (int k = 0; k < 4; ++k) {
        const double x = u(rng), y = u(rng), w = s(rng), h = s(rng);
        gts[i].push_back({x, y, w, h, 0});
        if (rng() % 2) dets[i].push_back(det({x + jitter(rng), y + jitter(rng), w, h, 0}, conf(rng)));
      }
      dets[i].push_back(det({u(rng), u(rng), s(rng), s(rng), 0}, conf(rng)));
    }
    const ApReport base = evaluate(dets, gts, {.num_classes = 1});
    for (std::size_t t = 1; t < kIouThresholds.size(); ++t) CHECK(base.ap_by_iou[t] <= base.ap_by_iou[t - 1]);
    CHECK(base.ap <= base.ap50);

    // A perfect detection of an unmatched gt never lowers AP50.
    const ApReport at50 = base;
    for (int i = 0; i < 3; ++i) {
      for (const Box& g : gts[static_cast<std::size_t>(i)]) {
        bool covered = false;
        for (const Detection& d : dets[static_cast<std::size_t>(i)]) covered = covered || iou(d.box, g) >= 0.5;
        if (covered) continue;
        auto more = dets;
        more[static_cast<std::size_t>(i)].push_back(det(g, conf(rng)));
        CHECK(average_precision(more, gts, 0, 0.5) >= average_precision(dets, gts, 0, 0.5) - 1e-15);
        break;
      }
    }
    // A spurious detection never raises it.
    auto spurious = dets;
    spurious[0].push_back(det({500, 500, 10, 10, 0}, conf(rng)));
    CHECK(average_precision(spurious, gts, 0, 0.5) <= at50.ap50 + 1e-15);
  }
}

TEST_CASE("report formatting and CSV") {
  const ApReport r = evaluate({{det(xyxy(0, 0, 10, 10), 0.9)}, {}}, {{xyxy(0, 0, 10, 10)}, {xyxy(5, 5, 9, 9, 1)}});
  const std::string table = format_report(r);
  CHECK(table.find("AP50") != std::string::npos);
  CHECK(table.find("(no detections)") != std::string::npos);
  const auto path = std::filesystem::temp_directory_path() / ("yolod_report_" + std::to_string(::getpid()) + ".csv");
  write_report_csv(path, r);
  std::ifstream in(path);
  std::string first, second;
  std::getline(in, first);
  std::getline(in, second);
  CHECK(first == "metric,value");
  CHECK(second == "ap,0.5");
  std::filesystem::remove(path);
}

TEST_CASE("detect decodes a confident cell into a pixel box") {
  ModelConfig cfg = ModelConfig::preset("s");
  const int per = 5 + cfg.num_classes;
  std::array<TensorD, 3> raw;
  for (int l = 0; l < 3; ++l) {
    const int g = 64 / static_cast<int>(cfg.levels[l].stride);
    raw[l] = TensorD(Shape{1, 3 * per, g, g});
    for (int a = 0; a < 3; ++a) {
      for (int y = 0; y < g; ++y) {
        for (int x = 0; x < g; ++x) raw[l].at(0, a * per + 4, y, x) = -20;
      }
    }
  }
  // Level 0, anchor 1, cell (col 3, row 5), zero offsets: center at
  // (3 + 0.5) * 8, (5 + 0.5) * 8 and size 4 * anchor * sigmoid(0)^2 = anchor.
  raw[0].at(0, 1 * per + 4, 5, 3) = 10;
  raw[0].at(0, 1 * per + 6, 5, 3) = 10;
  const std::array<const TensorD*, 3> ptrs{&raw[0], &raw[1], &raw[2]};
  const auto dets = detect(ptrs, 0, cfg, {.conf_thr = 0.25});
  REQUIRE(dets.size() == 1);
  CHECK(dets[0].box.cx == doctest::Approx(28.0));
  CHECK(dets[0].box.cy == doctest::Approx(44.0));
  CHECK(dets[0].box.w == doctest::Approx(cfg.levels[0].anchors[1][0]));
  CHECK(dets[0].box.h == doctest::Approx(cfg.levels[0].anchors[1][1]));
  CHECK(dets[0].box.cls == 1);
  CHECK(dets[0].confidence > 0.99);
}
