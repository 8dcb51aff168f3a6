#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "yolod/errors.hpp"
#include "yolod/metrics.hpp"

namespace yolod {

std::vector<Detection> nms(std::vector<Detection> dets, double iou_thr, double conf_thr) {
  std::erase_if(dets, [&](const Detection& d) { return d.confidence < conf_thr; });
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
  std::vector<Detection> kept;
  for (const Detection& d : dets) {
    bool drop = false;
    for (const Detection& k : kept) {
      if (k.box.cls == d.box.cls && iou(k.box, d.box) > iou_thr) {
        drop = true;
        break;
      }
    }
    if (!drop) kept.push_back(d);
  }
  return kept;
}

bool no_detections(const EvalCounts& c) { return c.tp + c.fp == 0; }

double precision(const EvalCounts& c) {
  if (no_detections(c)) return 1.0;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

double error_detection(const EvalCounts& c) {
  if (no_detections(c)) return 0.0;
  return 1.0 - precision(c);
}

std::optional<double> recall(const EvalCounts& c) {
  if (c.tp + c.fn == 0) return std::nullopt;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

namespace {

// Matching of one image and class at one IoU threshold, following the COCO
// evaluator: each detection takes the best-IoU unmatched gt at or above the
// threshold, preferring gts inside the area range.
struct ImageMatch {
  std::vector<double> scores;
  std::vector<char> matched, ignored;
  int gt_in_range = 0;
};

ImageMatch match_image(const std::vector<Detection>& all_dets, const std::vector<Box>& all_gts, int cls,
                       double iou_thr, double area_lo, double area_hi, int max_dets) {
  auto out_of_range = [&](double a) { return a < area_lo || a > area_hi; };
  std::vector<Box> gts;
  for (const Box& g : all_gts) {
    if (g.cls == cls) gts.push_back(g);
  }
  std::stable_partition(gts.begin(), gts.end(), [&](const Box& g) { return !out_of_range(g.area()); });
  std::vector<Detection> dets;
  for (const Detection& d : all_dets) {
    if (d.box.cls == cls) dets.push_back(d);
  }
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
  if (static_cast<int>(dets.size()) > max_dets) dets.resize(static_cast<std::size_t>(max_dets));

  ImageMatch m;
  std::vector<char> gt_ig(gts.size()), gt_used(gts.size(), 0);
  for (std::size_t j = 0; j < gts.size(); ++j) {
    gt_ig[j] = out_of_range(gts[j].area());
    m.gt_in_range += gt_ig[j] ? 0 : 1;
  }
  for (const Detection& d : dets) {
    double best = std::min(iou_thr, 1 - 1e-10);
    int hit = -1;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (gt_used[j]) continue;
      if (hit > -1 && !gt_ig[static_cast<std::size_t>(hit)] && gt_ig[j]) break;
      const double v = iou(d.box, gts[j]);
      if (v < best) continue;
      best = v;
      hit = static_cast<int>(j);
    }
    m.scores.push_back(d.confidence);
    if (hit >= 0) {
      gt_used[static_cast<std::size_t>(hit)] = 1;
      m.matched.push_back(1);
      m.ignored.push_back(gt_ig[static_cast<std::size_t>(hit)]);
    } else {
      m.matched.push_back(0);
      m.ignored.push_back(out_of_range(d.box.area()));
    }
  }
  return m;
}

struct Curve {
  int npig = 0;
  std::vector<double> recall, precision;
};

Curve pr_curve(const std::vector<std::vector<Detection>>& dets, const std::vector<std::vector<Box>>& gts, int cls,
               double iou_thr, double area_lo, double area_hi, int max_dets) {
  if (dets.size() != gts.size()) {
    throw ShapeError("evaluate: " + std::to_string(dets.size()) + " detection lists for " +
                     std::to_string(gts.size()) + " images");
  }
  Curve c;
  std::vector<double> scores;
  std::vector<char> matched, ignored;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const ImageMatch m = match_image(dets[i], gts[i], cls, iou_thr, area_lo, area_hi, max_dets);
    c.npig += m.gt_in_range;
    scores.insert(scores.end(), m.scores.begin(), m.scores.end());
    matched.insert(matched.end(), m.matched.begin(), m.matched.end());
    ignored.insert(ignored.end(), m.ignored.begin(), m.ignored.end());
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::int64_t tp = 0, fp = 0;
  for (std::size_t k : order) {
    if (ignored[k]) continue;
    (matched[k] ? tp : fp) += 1;
    c.recall.push_back(c.npig > 0 ? static_cast<double>(tp) / c.npig : 0.0);
    c.precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
  }
  return c;
}

double interpolated_ap(Curve c) {
  if (c.npig == 0) return -1;
  for (std::size_t i = c.precision.size(); i-- > 1;) c.precision[i - 1] = std::max(c.precision[i - 1], c.precision[i]);
  double s = 0;
  for (int r = 0; r <= 100; ++r) {
    const double thr = r * 0.01;
    const auto it = std::lower_bound(c.recall.begin(), c.recall.end(), thr);
    if (it != c.recall.end()) s += c.precision[static_cast<std::size_t>(it - c.recall.begin())];
  }
  return s / 101.0;
}

double mean_valid(const std::vector<double>& v) {
  double s = 0;
  int n = 0;
  for (double x : v) {
    if (x >= 0) {
      s += x;
      ++n;
    }
  }
  return n ? s / n : -1;
}

}  // namespace

double average_precision(const std::vector<std::vector<Detection>>& dets, const std::vector<std::vector<Box>>& gts,
                         int cls, double iou_thr, double area_lo, double area_hi, int max_dets) {
  return interpolated_ap(pr_curve(dets, gts, cls, iou_thr, area_lo, area_hi, max_dets));
}

ApReport evaluate(const std::vector<std::vector<Detection>>& dets, const std::vector<std::vector<Box>>& gts,
                  const EvalConfig& cfg) {
  if (cfg.num_classes < 1) throw ConfigError("evaluate: num_classes must be >= 1");
  const int nc = cfg.num_classes;
  const double big = 1e10;
  const std::array<std::array<double, 2>, 3> ranges{{{0, 32.0 * 32.0}, {32.0 * 32.0, 96.0 * 96.0}, {96.0 * 96.0, big}}};

  ApReport r;
  std::vector<double> all, s50, s75, recalls;
  std::array<std::vector<double>, 3> by_range;
  std::array<std::vector<double>, 10> by_iou;
  for (int c = 0; c < nc; ++c) {
    std::vector<double> cls_ap;
    for (std::size_t t = 0; t < kIouThresholds.size(); ++t) {
      const Curve curve = pr_curve(dets, gts, c, kIouThresholds[t], 0, big, cfg.max_dets);
      const double ap = interpolated_ap(curve);
      cls_ap.push_back(ap);
      by_iou[t].push_back(ap);
      if (curve.npig > 0) recalls.push_back(curve.recall.empty() ? 0.0 : curve.recall.back());
      for (std::size_t a = 0; a < 3; ++a) {
        by_range[a].push_back(average_precision(dets, gts, c, kIouThresholds[t], ranges[a][0], ranges[a][1],
                                                cfg.max_dets));
      }
    }
    r.class_ap.push_back(mean_valid(cls_ap));
    r.class_ap50.push_back(cls_ap[0]);
    all.insert(all.end(), cls_ap.begin(), cls_ap.end());
    s50.push_back(cls_ap[0]);
    s75.push_back(cls_ap[5]);
  }
  r.ap = mean_valid(all);
  r.ap50 = mean_valid(s50);
  r.ap75 = mean_valid(s75);
  r.ap_s = mean_valid(by_range[0]);
  r.ap_m = mean_valid(by_range[1]);
  r.ap_l = mean_valid(by_range[2]);
  r.ar100 = mean_valid(recalls);
  for (std::size_t t = 0; t < kIouThresholds.size(); ++t) r.ap_by_iou[t] = mean_valid(by_iou[t]);

  // Operating point.
  std::vector<std::vector<Detection>> kept(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    for (const Detection& d : dets[i]) {
      if (d.confidence >= cfg.conf_thr) kept[i].push_back(d);
    }
  }
  double ed_sum = 0;
  int ed_n = 0;
  for (int c = 0; c < nc; ++c) {
    EvalCounts k;
    for (std::size_t i = 0; i < gts.size(); ++i) {
      const ImageMatch m = match_image(kept[i], gts[i], c, cfg.match_iou, 0, big, cfg.max_dets);
      const auto tp = std::count(m.matched.begin(), m.matched.end(), 1);
      k.tp += tp;
      k.fp += static_cast<std::int64_t>(m.matched.size()) - tp;
      k.fn += m.gt_in_range - tp;
    }
    r.counts.push_back(k);
    r.class_ed.push_back(error_detection(k));
    r.class_precision.push_back(precision(k));
    r.class_recall.push_back(recall(k));
    if (!no_detections(k)) {
      ed_sum += r.class_ed.back();
      ++ed_n;
    }
  }
  r.ae_defined = ed_n > 0;
  r.ae = ed_n ? ed_sum / ed_n : 0.0;
  return r;
}

namespace {

std::string num(double v) {
  if (v < 0) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string format_report(const ApReport& r) {
  std::ostringstream os;
  os << "AP@[.50:.95] " << num(r.ap) << "\n"
     << "AP50         " << num(r.ap50) << "\n"
     << "AP75         " << num(r.ap75) << "\n"
     << "AP_S         " << num(r.ap_s) << "\n"
     << "AP_M         " << num(r.ap_m) << "\n"
     << "AP_L         " << num(r.ap_l) << "\n"
     << "AR100        " << num(r.ar100) << "\n"
     << "class  AP      AP50    TP   FP   FN   P       R       ED\n";
  for (std::size_t c = 0; c < r.class_ap.size(); ++c) {
    char line[160];
    const EvalCounts& k = r.counts[c];
    std::snprintf(line, sizeof line, "%-6zu %-7s %-7s %-4lld %-4lld %-4lld %-7s %-7s %s%s\n", c,
                  num(r.class_ap[c]).c_str(), num(r.class_ap50[c]).c_str(), static_cast<long long>(k.tp),
                  static_cast<long long>(k.fp), static_cast<long long>(k.fn), num(r.class_precision[c]).c_str(),
                  r.class_recall[c] ? num(*r.class_recall[c]).c_str() : "n/a", num(r.class_ed[c]).c_str(),
                  no_detections(k) ? " (no detections)" : "");
    os << line;
  }
  os << "AE           " << (r.ae_defined ? num(r.ae) : "n/a") << "\n";
  return os.str();
}

void write_report_csv(const std::filesystem::path& path, const ApReport& r) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "metric,value\n";
  os << "ap," << shortest(r.ap) << "\nap50," << shortest(r.ap50) << "\nap75," << shortest(r.ap75) << "\n";
  os << "ap_s," << shortest(r.ap_s) << "\nap_m," << shortest(r.ap_m) << "\nap_l," << shortest(r.ap_l) << "\n";
  os << "ar100," << shortest(r.ar100) << "\n";
  for (std::size_t t = 0; t < kIouThresholds.size(); ++t) {
    os << "ap_iou_" << shortest(kIouThresholds[t]) << "," << shortest(r.ap_by_iou[t]) << "\n";
  }
  for (std::size_t c = 0; c < r.class_ap.size(); ++c) {
    const std::string p = "class" + std::to_string(c) + "_";
    os << p << "ap," << shortest(r.class_ap[c]) << "\n" << p << "ap50," << shortest(r.class_ap50[c]) << "\n";
    os << p << "tp," << r.counts[c].tp << "\n" << p << "fp," << r.counts[c].fp << "\n" << p << "fn," << r.counts[c].fn
       << "\n";
    os << p << "precision," << shortest(r.class_precision[c]) << "\n";
    os << p << "recall," << (r.class_recall[c] ? shortest(*r.class_recall[c]) : std::string()) << "\n";
    os << p << "ed," << shortest(r.class_ed[c]) << "\n";
  }
  os << "ae," << (r.ae_defined ? shortest(r.ae) : std::string()) << "\n";
}

}  // namespace yolod
