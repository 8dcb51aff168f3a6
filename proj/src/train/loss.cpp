#include "yolod/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "yolod/eos.hpp"
#include "yolod/errors.hpp"
#include "yolod/ops.hpp"

namespace yolod {

bool LossReport::finite() const {
  return std::isfinite(total) && std::isfinite(box) && std::isfinite(obj) && std::isfinite(cls);
}

std::string LossReport::describe() const {
  std::ostringstream os;
  os << "total=" << total << " box=" << box << " obj=" << obj << " cls=" << cls << " positives=" << n_positives;
  return os.str();
}

namespace {

constexpr double kEps = 1e-7;

std::vector<double> through_tape(LossTape* tape, std::vector<double> live) {
  if (!tape || tape->mode == LossTape::Mode::live) return live;
  if (tape->mode == LossTape::Mode::record) {
    tape->values.push_back(live);
    return live;
  }
  if (tape->cursor >= tape->values.size() || tape->values[tape->cursor].size() != live.size()) {
    throw ShapeError("loss tape replay does not match the recorded pass");
  }
  return tape->values[tape->cursor++];
}

template <typename T>
BasicTensor<T> to_tensor(const std::vector<double>& v) {
  BasicTensor<T> t(Shape{static_cast<int>(v.size())});
  for (std::size_t i = 0; i < v.size(); ++i) t[static_cast<std::int64_t>(i)] = static_cast<T>(v[i]);
  return t;
}

template <typename T>
Var column(Graph<T>& g, const BasicTensor<T>& target, int c) {
  const int k = target.dim(0);
  BasicTensor<T> out(Shape{k});
  for (int i = 0; i < k; ++i) out[i] = target[static_cast<std::int64_t>(i) * 4 + c];
  return g.constant(std::move(out));
}

}  // namespace

template <typename T>
Var ciou(Graph<T>& g, Var x, Var y, Var w, Var h, const BasicTensor<T>& target, LossTape* tape) {
  using namespace ops;
  const int k = g.value(x).dim(0);
  if (target.rank() != 2 || target.dim(0) != k || target.dim(1) != 4) {
    throw ShapeError("ciou: targets " + to_string(target.shape()) + " for " + std::to_string(k) + " predictions");
  }
  Var tx = column(g, target, 0), ty = column(g, target, 1), tw = column(g, target, 2), th = column(g, target, 3);
  Var hw = mul_scalar(g, w, 0.5), hh = mul_scalar(g, h, 0.5);
  Var thw = mul_scalar(g, tw, 0.5), thh = mul_scalar(g, th, 0.5);
  Var px1 = sub(g, x, hw), px2 = add(g, x, hw), py1 = sub(g, y, hh), py2 = add(g, y, hh);
  Var tx1 = sub(g, tx, thw), tx2 = add(g, tx, thw), ty1 = sub(g, ty, thh), ty2 = add(g, ty, thh);

  Var iw = clamp_min(g, sub(g, minimum(g, px2, tx2), maximum(g, px1, tx1)), 0.0);
  Var ih = clamp_min(g, sub(g, minimum(g, py2, ty2), maximum(g, py1, ty1)), 0.0);
  Var inter = mul(g, iw, ih);
  Var uni = add_scalar(g, sub(g, add(g, mul(g, w, h), mul(g, tw, th)), inter), kEps);
  Var iou = div(g, inter, uni);

  Var cw = sub(g, maximum(g, px2, tx2), minimum(g, px1, tx1));
  Var chh = sub(g, maximum(g, py2, ty2), minimum(g, py1, ty1));
  Var c2 = add_scalar(g, add(g, square(g, cw), square(g, chh)), kEps);
  Var rho2 = add(g, square(g, sub(g, x, tx)), square(g, sub(g, y, ty)));

  Var ap = atan(g, div(g, w, add_scalar(g, h, kEps)));
  Var at = atan(g, div(g, tw, add_scalar(g, th, kEps)));
  Var v = mul_scalar(g, square(g, sub(g, at, ap)), 4.0 / (std::numbers::pi * std::numbers::pi));

  const BasicTensor<T>& vv = g.value(v);
  const BasicTensor<T>& iv = g.value(iou);
  std::vector<double> a(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    a[static_cast<std::size_t>(i)] = static_cast<double>(vv[i]) / (static_cast<double>(vv[i]) - iv[i] + 1.0 + kEps);
  }
  Var alpha = g.constant(to_tensor<T>(through_tape(tape, std::move(a))));
  return sub(g, sub(g, iou, div(g, rho2, c2)), mul(g, alpha, v));
}

std::vector<Assignment> assign_image(const std::vector<Box>& gts, const ModelConfig& cfg,
                                     const std::array<std::array<int, 2>, 3>& grid_hw) {
  std::vector<LevelGrid> grids;
  for (int l = 0; l < 3; ++l) grids.push_back({cfg.levels[l], grid_hw[l][1], grid_hw[l][0]});
  return assign(gts, grids, cfg.amp);
}

template <typename T>
LossTerms<T> detection_loss(Graph<T>& g, const std::array<Var, 3>& raw, const std::vector<std::vector<Box>>& gts,
                            const ModelConfig& cfg, const LossWeights& weights, LossTape* tape) {
  const int nc = cfg.num_classes, per = 5 + nc;
  const int n = g.value(raw[0]).dim(0);
  if (static_cast<int>(gts.size()) != n) {
    throw ShapeError("detection_loss: " + std::to_string(gts.size()) + " annotation lists for a batch of " +
                     std::to_string(n));
  }
  std::array<std::array<int, 2>, 3> grid_hw{};
  for (int l = 0; l < 3; ++l) {
    const auto& s = g.value(raw[l]).shape();
    if (s.size() != 4 || s[0] != n || s[1] != kAnchorsPerLevel * per) {
      throw ShapeError("detection_loss: head output " + to_string(s) + " does not match " +
                       std::to_string(kAnchorsPerLevel) + " anchors x (5+" + std::to_string(nc) + ")");
    }
    grid_hw[l] = {s[2], s[3]};
  }

  struct Positive {
    int image;
    Assignment a;
  };
  std::array<std::vector<Positive>, 3> pos;
  for (int b = 0; b < n; ++b) {
    for (const Assignment& a : assign_image(gts[static_cast<std::size_t>(b)], cfg, grid_hw)) {
      pos[static_cast<std::size_t>(a.level)].push_back({b, a});
    }
  }

  const double alpha = cfg.eos.effective_alpha();
  std::vector<Var> box_terms, cls_terms;
  std::int64_t n_pos = 0;
  Var obj_total;
  for (int l = 0; l < 3; ++l) {
    const int gh = grid_hw[l][0], gw = grid_hw[l][1];
    const double stride = cfg.levels[l].stride;
    auto flat = [&](int b, int a, int ch, int row, int col) {
      return ((static_cast<std::int64_t>(b) * kAnchorsPerLevel * per + a * per + ch) * gh + row) * gw + col;
    };
    const std::size_t slots = static_cast<std::size_t>(n) * kAnchorsPerLevel * gh * gw;
    auto slot = [&](int b, int a, int row, int col) {
      return ((static_cast<std::size_t>(b) * kAnchorsPerLevel + a) * gh + row) * gw + col;
    };
    std::vector<double> obj_target(slots, 0.0);

    const auto& ps = pos[static_cast<std::size_t>(l)];
    if (!ps.empty()) {
      const int k = static_cast<int>(ps.size());
      std::array<std::vector<std::int64_t>, 4> idx;
      std::vector<std::int64_t> cls_idx;
      BasicTensor<T> target(Shape{k, 4}), anchor_w(Shape{k}), anchor_h(Shape{k}), cls_target(Shape{k * nc});
      for (int i = 0; i < k; ++i) {
        const Positive& p = ps[static_cast<std::size_t>(i)];
        const Box& gt = gts[static_cast<std::size_t>(p.image)][static_cast<std::size_t>(p.a.gt)];
        for (int c = 0; c < 4; ++c) idx[c].push_back(flat(p.image, p.a.anchor, c, p.a.row, p.a.col));
        for (int c = 0; c < nc; ++c) {
          cls_idx.push_back(flat(p.image, p.a.anchor, 5 + c, p.a.row, p.a.col));
          cls_target[static_cast<std::int64_t>(i) * nc + c] = static_cast<T>(gt.cls == c ? 1.0 : 0.0);
        }
        target[i * 4 + 0] = static_cast<T>(gt.cx / stride - p.a.col);
        target[i * 4 + 1] = static_cast<T>(gt.cy / stride - p.a.row);
        target[i * 4 + 2] = static_cast<T>(gt.w / stride);
        target[i * 4 + 3] = static_cast<T>(gt.h / stride);
        anchor_w[i] = static_cast<T>(cfg.levels[l].anchors[static_cast<std::size_t>(p.a.anchor)][0] / stride);
        anchor_h[i] = static_cast<T>(cfg.levels[l].anchors[static_cast<std::size_t>(p.a.anchor)][1] / stride);
      }
      Var px = decode_xy(g, ops::gather(g, raw[l], idx[0]), cfg.eos.scale, alpha);
      Var py = decode_xy(g, ops::gather(g, raw[l], idx[1]), cfg.eos.scale, alpha);
      Var pw = decode_wh(g, ops::gather(g, raw[l], idx[2]), g.constant(std::move(anchor_w)));
      Var ph = decode_wh(g, ops::gather(g, raw[l], idx[3]), g.constant(std::move(anchor_h)));
      Var c = ciou(g, px, py, pw, ph, target, tape);
      box_terms.push_back(ops::sum(g, ops::add_scalar(g, ops::mul_scalar(g, c, -1.0), 1.0)));
      cls_terms.push_back(ops::mul_scalar(g, ops::bce_with_logits(g, ops::gather(g, raw[l], cls_idx), cls_target),
                                          static_cast<double>(k)));
      n_pos += k;

      const BasicTensor<T>& cv = g.value(c);
      for (int i = 0; i < k; ++i) {
        const Positive& p = ps[static_cast<std::size_t>(i)];
        double& t = obj_target[slot(p.image, p.a.anchor, p.a.row, p.a.col)];
        t = std::max(t, std::clamp(static_cast<double>(cv[i]), 0.0, 1.0));
      }
    }

    std::vector<std::int64_t> obj_idx;
    obj_idx.reserve(slots);
    for (int b = 0; b < n; ++b) {
      for (int a = 0; a < kAnchorsPerLevel; ++a) {
        for (int row = 0; row < gh; ++row) {
          for (int col = 0; col < gw; ++col) obj_idx.push_back(flat(b, a, 4, row, col));
        }
      }
    }
    const BasicTensor<T> targets = to_tensor<T>(through_tape(tape, std::move(obj_target)));
    Var term = ops::mul_scalar(g, ops::bce_with_logits(g, ops::gather(g, raw[l], obj_idx), targets),
                               weights.balance[static_cast<std::size_t>(l)]);
    obj_total = obj_total.valid() ? ops::add(g, obj_total, term) : term;
  }

  auto mean_over_positives = [&](const std::vector<Var>& terms) {
    if (terms.empty()) return g.constant(BasicTensor<T>::scalar(T(0)));
    Var s = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) s = ops::add(g, s, terms[i]);
    return ops::mul_scalar(g, s, 1.0 / static_cast<double>(n_pos));
  };

  LossTerms<T> out;
  out.box = mean_over_positives(box_terms);
  out.cls = mean_over_positives(cls_terms);
  out.obj = obj_total;
  out.total = ops::add(g,
                       ops::add(g, ops::mul_scalar(g, out.box, weights.box), ops::mul_scalar(g, out.obj, weights.obj)),
                       ops::mul_scalar(g, out.cls, weights.cls));
  out.report.box = g.scalar(out.box);
  out.report.obj = g.scalar(out.obj);
  out.report.cls = g.scalar(out.cls);
  out.report.total = weights.box * out.report.box + weights.obj * out.report.obj + weights.cls * out.report.cls;
  out.report.n_positives = n_pos;
  if (!out.report.finite()) throw NumericError("detection loss is not finite: " + out.report.describe());
  return out;
}

template Var ciou<float>(Graph<float>&, Var, Var, Var, Var, const Tensor&, LossTape*);
template Var ciou<double>(Graph<double>&, Var, Var, Var, Var, const TensorD&, LossTape*);
template LossTerms<float> detection_loss<float>(Graph<float>&, const std::array<Var, 3>&,
                                                const std::vector<std::vector<Box>>&, const ModelConfig&,
                                                const LossWeights&, LossTape*);
template LossTerms<double> detection_loss<double>(Graph<double>&, const std::array<Var, 3>&,
                                                  const std::vector<std::vector<Box>>&, const ModelConfig&,
                                                  const LossWeights&, LossTape*);

}  // namespace yolod
