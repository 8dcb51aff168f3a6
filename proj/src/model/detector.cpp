#include "yolod/detector.hpp"

#include <cmath>
#include <string>

#include "yolod/errors.hpp"

namespace yolod {

void check_input_size(int height, int width) {
  if (height <= 0 || width <= 0 || height % 32 || width % 32) {
    throw ShapeError("input size " + std::to_string(height) + "x" + std::to_string(width) +
                     " must be positive and divisible by 32");
  }
}

template <typename T>
struct BasicDetector<T>::Backbone {
  ConvBnAct<T> stem, down2, down3, down4, down5;
  Csp<T> csp2, csp3, csp4, csp5;
  Sppf<T> sppf;

  Backbone(ParamStore<T>& s, const ModelConfig& c, InitRng& rng)
      : stem(s, "backbone.stem", 3, c.width(16), 3, 2, rng),
        down2(s, "backbone.down2", c.width(16), c.width(32), 3, 2, rng),
        down3(s, "backbone.down3", c.width(32), c.channels()[0], 3, 2, rng),
        down4(s, "backbone.down4", c.channels()[0], c.channels()[1], 3, 2, rng),
        down5(s, "backbone.down5", c.channels()[1], c.channels()[2], 3, 2, rng),
        csp2(s, "backbone.csp2", c.width(32), c.width(32), c.depth(1), true, rng),
        csp3(s, "backbone.csp3", c.channels()[0], c.channels()[0], c.depth(3), true, rng),
        csp4(s, "backbone.csp4", c.channels()[1], c.channels()[1], c.depth(3), true, rng),
        csp5(s, "backbone.csp5", c.channels()[2], c.channels()[2], c.depth(1), false, rng),
        sppf(s, "backbone.sppf", c.channels()[2], c.channels()[2], rng) {}

  std::array<Var, 3> forward(ForwardCtx<T>& ctx, Var x) const {
    x = csp2.forward(ctx, down2.forward(ctx, stem.forward(ctx, x)));
    Var p3 = csp3.forward(ctx, down3.forward(ctx, x));
    Var p4 = csp4.forward(ctx, down4.forward(ctx, p3));
    Var p5 = csp5.forward(ctx, sppf.forward(ctx, down5.forward(ctx, p4)));
    return {p3, p4, p5};
  }
};

template <typename T>
class NeckBase {
 public:
  virtual ~NeckBase() = default;
  // Returns {head inputs before enhancement, features passed to the heads}.
  virtual std::pair<std::array<Var, 3>, std::array<Var, 3>> forward(ForwardCtx<T>& ctx,
                                                                   std::array<Var, 3> src) const = 0;
  virtual std::array<int, 3> head_input_channels() const = 0;
};

namespace {

template <typename T>
Var up2(ForwardCtx<T>& ctx, Var x) {
  return ops::upsample_nearest(ctx.g, x, 2);
}

template <typename T>
Var cat(ForwardCtx<T>& ctx, std::vector<Var> xs) {
  return ops::concat_channels(ctx.g, xs);
}

// Three-part dual-feature-pool neck.
template <typename T>
class DfpNeck final : public NeckBase<T> {
 public:
  DfpNeck(ParamStore<T>& s, const ModelConfig& c, InitRng& rng) : cfg_(c) {
    const auto ch = c.channels();
    const int c3 = ch[0], c4 = ch[1], c5 = ch[2], n = c.depth(3);
    for (int i = 0; i < 3; ++i) {
      const std::string l = std::to_string(i + 3);
      split_a_.emplace_back(s, "neck.split" + l + ".a", ch[i], ch[i] / 2, 1, 1, rng);
      split_b_.emplace_back(s, "neck.split" + l + ".b", ch[i], ch[i] / 2, 1, 1, rng);
    }
    down_sm_ = ConvBnAct<T>(s, "neck.pool_sm.down", c3 / 2, c3 / 2, 3, 2, rng);
    pool_sm_ = std::make_unique<Csp<T>>(s, "neck.pool_sm.csp", c3 / 2 + c4 / 2, c4, n, false, rng);
    down_ml_ = ConvBnAct<T>(s, "neck.pool_ml.down", c4 / 2, c4 / 2, 3, 2, rng);
    pool_ml_ = std::make_unique<Csp<T>>(s, "neck.pool_ml.csp", c4 / 2 + c5 / 2, c5, n, false, rng);
    sm_d1_ = ConvBnAct<T>(s, "neck.sm_to_d1", c4, 5 * c3 / 4, 1, 1, rng);
    sm_d2_ = ConvBnAct<T>(s, "neck.sm_to_d2", c4, 3 * c4 / 4, 1, 1, rng);
    ml_d2_ = ConvBnAct<T>(s, "neck.ml_to_d2", c5, 3 * c4 / 4, 1, 1, rng);
    ml_d3_ = ConvBnAct<T>(s, "neck.ml_to_d3", c5, 5 * c5 / 4, 1, 1, rng);
    d_ = {c3 / 2 + 5 * c3 / 4, c4 / 2 + 3 * c4 / 4 + 3 * c4 / 4, c5 / 2 + 5 * c5 / 4};
    for (int i = 0; i < 3; ++i) {
      const std::string l = "neck.d" + std::to_string(i + 1);
      sam_.emplace_back(s, l + ".sam", c.sam_kernel, rng);
      out_.push_back(std::make_unique<Csp<T>>(s, l + ".csp", d_[i], d_[i], n, false, rng));
    }
    if (c.pan_tail) {
      pan_down_[0] = ConvBnAct<T>(s, "neck.pan.down1", d_[0], d_[0], 3, 2, rng);
      pan_csp_[0] = std::make_unique<Csp<T>>(s, "neck.pan.csp2", d_[0] + d_[1], d_[1], n, false, rng);
      pan_down_[1] = ConvBnAct<T>(s, "neck.pan.down2", d_[1], d_[1], 3, 2, rng);
      pan_csp_[1] = std::make_unique<Csp<T>>(s, "neck.pan.csp3", d_[1] + d_[2], d_[2], n, false, rng);
    }
  }

  std::pair<std::array<Var, 3>, std::array<Var, 3>> forward(ForwardCtx<T>& ctx, std::array<Var, 3> src) const override {
    std::array<Var, 3> a, b;
    for (int i = 0; i < 3; ++i) {
      a[i] = split_a_[i].forward(ctx, src[i]);
      b[i] = split_b_[i].forward(ctx, src[i]);
    }
    Var sm = pool_sm_->forward(ctx, cat(ctx, {down_sm_.forward(ctx, a[0]), a[1]}));
    Var ml = pool_ml_->forward(ctx, cat(ctx, {down_ml_.forward(ctx, a[1]), a[2]}));
    std::array<Var, 3> d{cat(ctx, {b[0], up2(ctx, sm_d1_.forward(ctx, sm))}),
                         cat(ctx, {b[1], sm_d2_.forward(ctx, sm), up2(ctx, ml_d2_.forward(ctx, ml))}),
                         cat(ctx, {b[2], ml_d3_.forward(ctx, ml)})};
    std::array<Var, 3> e;
    for (int i = 0; i < 3; ++i) e[i] = enhance(ctx, d[i], i);
    if (cfg_.pan_tail) {
      e[1] = pan_csp_[0]->forward(ctx, cat(ctx, {pan_down_[0].forward(ctx, e[0]), e[1]}));
      e[2] = pan_csp_[1]->forward(ctx, cat(ctx, {pan_down_[1].forward(ctx, e[1]), e[2]}));
    }
    return {d, e};
  }

  std::array<int, 3> head_input_channels() const override { return d_; }

 private:
  Var filter(ForwardCtx<T>& ctx, Var x) const {
    if (!cfg_.iff.enabled) return x;
    return iff_filter(ctx.g, x, ctx.iff_p, ctx.iff_score, ctx.tape);
  }

  Var enhance(ForwardCtx<T>& ctx, Var x, int i) const {
    if (cfg_.enhance_order == EnhanceOrder::iff_sam_csp) {
      return out_[i]->forward(ctx, sam_[i].forward(ctx, filter(ctx, x)));
    }
    return sam_[i].forward(ctx, filter(ctx, out_[i]->forward(ctx, x)));
  }

  ModelConfig cfg_;
  std::vector<ConvBnAct<T>> split_a_, split_b_;
  ConvBnAct<T> down_sm_, down_ml_, sm_d1_, sm_d2_, ml_d2_, ml_d3_;
  std::unique_ptr<Csp<T>> pool_sm_, pool_ml_;
  std::vector<Sam<T>> sam_;
  std::vector<std::unique_ptr<Csp<T>>> out_;
  std::array<ConvBnAct<T>, 2> pan_down_;
  std::array<std::unique_ptr<Csp<T>>, 2> pan_csp_;
  std::array<int, 3> d_{};
};

// Reference top-down FPN followed by a bottom-up PAN.
template <typename T>
class FpnPanNeck final : public NeckBase<T> {
 public:
  FpnPanNeck(ParamStore<T>& s, const ModelConfig& c, InitRng& rng) : ch_(c.channels()) {
    const int c3 = ch_[0], c4 = ch_[1], c5 = ch_[2], n = c.depth(3);
    lat5_ = ConvBnAct<T>(s, "neck.lat5", c5, c4, 1, 1, rng);
    top4_ = std::make_unique<Csp<T>>(s, "neck.top4", 2 * c4, c4, n, false, rng);
    lat4_ = ConvBnAct<T>(s, "neck.lat4", c4, c3, 1, 1, rng);
    top3_ = std::make_unique<Csp<T>>(s, "neck.top3", 2 * c3, c3, n, false, rng);
    down3_ = ConvBnAct<T>(s, "neck.down3", c3, c3, 3, 2, rng);
    bot4_ = std::make_unique<Csp<T>>(s, "neck.bot4", 2 * c3, c4, n, false, rng);
    down4_ = ConvBnAct<T>(s, "neck.down4", c4, c4, 3, 2, rng);
    bot5_ = std::make_unique<Csp<T>>(s, "neck.bot5", 2 * c4, c5, n, false, rng);
  }

  std::pair<std::array<Var, 3>, std::array<Var, 3>> forward(ForwardCtx<T>& ctx, std::array<Var, 3> src) const override {
    Var l5 = lat5_.forward(ctx, src[2]);
    Var l4 = lat4_.forward(ctx, top4_->forward(ctx, cat(ctx, {up2(ctx, l5), src[1]})));
    Var o3 = top3_->forward(ctx, cat(ctx, {up2(ctx, l4), src[0]}));
    Var o4 = bot4_->forward(ctx, cat(ctx, {down3_.forward(ctx, o3), l4}));
    Var o5 = bot5_->forward(ctx, cat(ctx, {down4_.forward(ctx, o4), l5}));
    return {{o3, o4, o5}, {o3, o4, o5}};
  }

  std::array<int, 3> head_input_channels() const override { return ch_; }

 private:
  std::array<int, 3> ch_;
  ConvBnAct<T> lat5_, lat4_, down3_, down4_;
  std::unique_ptr<Csp<T>> top4_, top3_, bot4_, bot5_;
};

}  // namespace

template <typename T>
BasicDetector<T>::BasicDetector(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  InitRng rng(seed);
  backbone_ = std::make_unique<Backbone>(store_, cfg_, rng);
  if (cfg_.neck == NeckKind::dfp) {
    neck_ = std::make_unique<DfpNeck<T>>(store_, cfg_, rng);
  } else {
    neck_ = std::make_unique<FpnPanNeck<T>>(store_, cfg_, rng);
  }
  const auto head_in = neck_->head_input_channels();
  for (int i = 0; i < 3; ++i) {
    const int cin = cfg_.neck == NeckKind::dfp ? head_in[i] : cfg_.channels()[i];
    heads_.emplace_back(store_, "head" + std::to_string(i + 3), cin, outputs_per_level(), rng);
    // Priors: about 8 objects per 160 px image for objectness, 0.6 spread
    // over the classes.
    auto& bias = heads_.back().bias().value;
    const double cells = std::pow(160.0 / cfg_.levels[i].stride, 2);
    for (int a = 0; a < 3; ++a) {
      bias[a * (5 + cfg_.num_classes) + 4] = static_cast<T>(std::log(8.0 / cells));
      for (int k = 0; k < cfg_.num_classes; ++k) {
        bias[a * (5 + cfg_.num_classes) + 5 + k] = static_cast<T>(std::log(0.6 / (cfg_.num_classes - 0.99)));
      }
    }
  }

  if (cfg_.neck == NeckKind::dfp) {
    const auto base = baseline_channels();
    for (int i = 0; i < 3; ++i) {
      const double ratio = static_cast<double>(head_in[i]) / base[i];
      if (ratio < 1.75 || ratio > 2.0) {
        throw ShapeError("DFP head input D" + std::to_string(i + 1) + " has " + std::to_string(head_in[i]) +
                         " channels, " + std::to_string(ratio) + "x the FPN+PAN baseline; expected 1.75x to 2.0x");
      }
    }
    if (!cfg_.pan_tail) {
      const GraphReport r = inspect_graph(*this, 32);
      if (r.head_depth[0] != r.head_depth[1] || r.head_depth[1] != r.head_depth[2]) {
        throw ShapeError("DFP head paths differ in depth: " + std::to_string(r.head_depth[0]) + ", " +
                         std::to_string(r.head_depth[1]) + ", " + std::to_string(r.head_depth[2]));
      }
    }
  }
}

template <typename T>
BasicDetector<T>::~BasicDetector() = default;

template <typename T>
std::array<int, 3> BasicDetector<T>::head_input_channels() const {
  return neck_->head_input_channels();
}

template <typename T>
typename BasicDetector<T>::Output BasicDetector<T>::forward(Graph<T>& g, Var images, const ForwardOptions& opt) const {
  const Shape& s = g.value(images).shape();
  if (s.size() != 4 || s[1] != 3) throw ShapeError("detector input must be [N,3,H,W], got " + to_string(s));
  check_input_size(s[2], s[3]);
  ForwardCtx<T> ctx{g, opt.training, opt.iff_p, cfg_.iff.score, opt.tape, opt.mult_adds};
  Output out;
  out.sources = backbone_->forward(ctx, images);
  std::array<Var, 3> src = out.sources;
  for (int i = 0; i < 3; ++i) {
    g.mark_source(out.sources[i]);
    if (cfg_.iff.enabled && cfg_.iff.on_source) src[i] = iff_filter(g, src[i], opt.iff_p, cfg_.iff.score, opt.tape);
  }
  auto [head_in, features] = neck_->forward(ctx, src);
  out.head_inputs = head_in;
  for (int i = 0; i < 3; ++i) out.raw[i] = heads_[i].forward(ctx, features[i]);
  return out;
}

template <typename T>
GraphReport inspect_graph(const BasicDetector<T>& model, int input_size) {
  GraphReport r;
  Graph<T> g;
  Var x = g.constant(BasicTensor<T>(Shape{1, 3, input_size, input_size}));
  ForwardOptions opt;
  opt.mult_adds = &r.mult_adds;
  const auto out = model.forward(g, x, opt);
  for (int i = 0; i < 3; ++i) r.head_depth[i] = g.depth(out.raw[i]);
  r.head_input_channels = model.head_input_channels();
  r.params = model.store().count();
  return r;
}

template class BasicDetector<float>;
template class BasicDetector<double>;
template GraphReport inspect_graph<float>(const BasicDetector<float>&, int);
template GraphReport inspect_graph<double>(const BasicDetector<double>&, int);

}  // namespace yolod
