#include "yolod/layers.hpp"

#include <cmath>

#include "yolod/errors.hpp"
#include "yolod/kernels.hpp"

namespace yolod {

template <typename T>
BasicParameter<T>& ParamStore<T>::add(const std::string& name, BasicTensor<T> value, bool decay) {
  if (find(name)) throw std::logic_error("duplicate parameter name " + name);
  params_.emplace_back(name, std::move(value), decay);
  return params_.back();
}

template <typename T>
ops::BatchNormState<T>& ParamStore<T>::add_bn(const std::string& name, int channels) {
  bns_.emplace_back(channels);
  bn_names_.push_back(name);
  return bns_.back();
}

template <typename T>
BasicParameter<T>* ParamStore<T>::find(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

template <typename T>
std::int64_t ParamStore<T>::count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
std::vector<NamedTensor> ParamStore<T>::state() const {
  std::vector<NamedTensor> out;
  for (const auto& p : params_) out.push_back({p.name, p.value.template cast<float>()});
  for (std::size_t i = 0; i < bns_.size(); ++i) {
    out.push_back({bn_names_[i] + ".running_mean", bns_[i].running_mean.template cast<float>()});
    out.push_back({bn_names_[i] + ".running_var", bns_[i].running_var.template cast<float>()});
  }
  return out;
}

template <typename T>
void ParamStore<T>::load_state(const std::vector<NamedTensor>& records) {
  std::vector<std::pair<std::string, BasicTensor<T>*>> slots;
  for (auto& p : params_) slots.push_back({p.name, &p.value});
  for (std::size_t i = 0; i < bns_.size(); ++i) {
    slots.push_back({bn_names_[i] + ".running_mean", &bns_[i].running_mean});
    slots.push_back({bn_names_[i] + ".running_var", &bns_[i].running_var});
  }
  std::vector<bool> seen(slots.size(), false);
  for (const NamedTensor& r : records) {
    if (r.name.rfind("meta.", 0) == 0) continue;
    std::size_t i = 0;
    while (i < slots.size() && slots[i].first != r.name) ++i;
    if (i == slots.size()) throw ShapeError("checkpoint tensor '" + r.name + "' has no counterpart in the model");
    if (slots[i].second->shape() != r.tensor.shape()) {
      throw ShapeError("checkpoint tensor '" + r.name + "' has shape " + to_string(r.tensor.shape()) +
                       ", model expects " + to_string(slots[i].second->shape()));
    }
    *slots[i].second = r.tensor.cast<T>();
    seen[i] = true;
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (!seen[i]) throw ShapeError("checkpoint lacks tensor '" + slots[i].first + "'");
  }
}

template <typename T>
BasicTensor<T> conv_init(Shape shape, InitRng& rng) {
  BasicTensor<T> w(std::move(shape));
  const int fan_in = w.dim(1) * w.dim(2) * w.dim(3);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.uniform(-bound, bound));
  return w;
}

namespace {

template <typename T>
void count_conv(ForwardCtx<T>& ctx, Var x, const BasicTensor<T>& w, int stride, int pad) {
  if (!ctx.mult_adds) return;
  auto geo = kernels::conv_geometry(ctx.g.value(x).shape(), w.shape(), stride, pad);
  geo.batch = 1;
  *ctx.mult_adds += geo.mult_adds();
}

}  // namespace

template <typename T>
ConvBnAct<T>::ConvBnAct(ParamStore<T>& store, const std::string& name, int cin, int cout, int k, int s,
                        InitRng& rng)
    : cout_(cout), k_(k), s_(s) {
  w_ = &store.add(name + ".conv.weight", conv_init<T>(Shape{cout, cin, k, k}, rng), true);
  gamma_ = &store.add(name + ".bn.weight", BasicTensor<T>(Shape{cout}, T(1)), false);
  beta_ = &store.add(name + ".bn.bias", BasicTensor<T>(Shape{cout}), false);
  bn_ = &store.add_bn(name + ".bn", cout);
}

template <typename T>
Var ConvBnAct<T>::forward(ForwardCtx<T>& ctx, Var x) const {
  Graph<T>& g = ctx.g;
  count_conv(ctx, x, w_->value, s_, k_ / 2);
  Var y = ops::conv2d(g, x, g.parameter(*w_), Var{}, s_, k_ / 2);
  y = ops::batch_norm2d(g, y, g.parameter(*gamma_), g.parameter(*beta_), *bn_, ctx.training);
  return ops::silu(g, y);
}

template <typename T>
Bottleneck<T>::Bottleneck(ParamStore<T>& store, const std::string& name, int c, bool shortcut, InitRng& rng)
    : cv1_(store, name + ".cv1", c, c, 1, 1, rng), cv2_(store, name + ".cv2", c, c, 3, 1, rng), shortcut_(shortcut) {}

template <typename T>
Var Bottleneck<T>::forward(ForwardCtx<T>& ctx, Var x) const {
  Var y = cv2_.forward(ctx, cv1_.forward(ctx, x));
  return shortcut_ ? ops::add(ctx.g, x, y) : y;
}

template <typename T>
Csp<T>::Csp(ParamStore<T>& store, const std::string& name, int cin, int cout, int n, bool shortcut, InitRng& rng)
    : cv1_(store, name + ".cv1", cin, cout / 2, 1, 1, rng),
      cv2_(store, name + ".cv2", cin, cout / 2, 1, 1, rng),
      cv3_(store, name + ".cv3", 2 * (cout / 2), cout, 1, 1, rng) {
  for (int i = 0; i < n; ++i) blocks_.emplace_back(store, name + ".m" + std::to_string(i), cout / 2, shortcut, rng);
}

template <typename T>
Var Csp<T>::forward(ForwardCtx<T>& ctx, Var x) const {
  Var a = cv1_.forward(ctx, x);
  for (const auto& b : blocks_) a = b.forward(ctx, a);
  Var b = cv2_.forward(ctx, x);
  return cv3_.forward(ctx, ops::concat_channels(ctx.g, {a, b}));
}

template <typename T>
Sppf<T>::Sppf(ParamStore<T>& store, const std::string& name, int cin, int cout, InitRng& rng)
    : cv1_(store, name + ".cv1", cin, cin / 2, 1, 1, rng), cv2_(store, name + ".cv2", 4 * (cin / 2), cout, 1, 1, rng) {}

template <typename T>
Var Sppf<T>::forward(ForwardCtx<T>& ctx, Var x) const {
  Var a = cv1_.forward(ctx, x);
  Var p1 = ops::max_pool2d(ctx.g, a, 5, 1, 2);
  Var p2 = ops::max_pool2d(ctx.g, p1, 5, 1, 2);
  Var p3 = ops::max_pool2d(ctx.g, p2, 5, 1, 2);
  return cv2_.forward(ctx, ops::concat_channels(ctx.g, {a, p1, p2, p3}));
}

template <typename T>
Var spatial_attention(Graph<T>& g, Var x, Var weight, Var bias, std::int64_t* mult_adds) {
  Var stats = ops::concat_channels(g, {ops::max_over_channels(g, x), ops::mean_over_channels(g, x)});
  const int k = g.value(weight).dim(2);
  if (mult_adds) {
    auto geo = kernels::conv_geometry(g.value(stats).shape(), g.value(weight).shape(), 1, k / 2);
    geo.batch = 1;
    *mult_adds += geo.mult_adds();
  }
  Var gate = ops::sigmoid(g, ops::conv2d(g, stats, weight, bias, 1, k / 2));
  return ops::mul(g, x, gate);
}

template <typename T>
Sam<T>::Sam(ParamStore<T>& store, const std::string& name, int kernel, InitRng& rng) {
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("SAM kernel must be odd and positive");
  w_ = &store.add(name + ".conv.weight", conv_init<T>(Shape{1, 2, kernel, kernel}, rng), true);
  b_ = &store.add(name + ".conv.bias", BasicTensor<T>(Shape{1}), false);
}

template <typename T>
Var Sam<T>::forward(ForwardCtx<T>& ctx, Var x) const {
  return spatial_attention(ctx.g, x, ctx.g.parameter(*w_), ctx.g.parameter(*b_), ctx.mult_adds);
}

template <typename T>
HeadConv<T>::HeadConv(ParamStore<T>& store, const std::string& name, int cin, int cout, InitRng& rng) {
  w_ = &store.add(name + ".weight", conv_init<T>(Shape{cout, cin, 1, 1}, rng), true);
  b_ = &store.add(name + ".bias", BasicTensor<T>(Shape{cout}), false);
}

template <typename T>
Var HeadConv<T>::forward(ForwardCtx<T>& ctx, Var x) const {
  count_conv(ctx, x, w_->value, 1, 0);
  return ops::conv2d(ctx.g, x, ctx.g.parameter(*w_), ctx.g.parameter(*b_), 1, 0);
}

#define YOLOD_LAYERS(T)                                                                        \
  template class ParamStore<T>;                                                                \
  template BasicTensor<T> conv_init<T>(Shape, InitRng&);                                       \
  template class ConvBnAct<T>;                                                                 \
  template class Bottleneck<T>;                                                                \
  template class Csp<T>;                                                                       \
  template class Sppf<T>;                                                                      \
  template Var spatial_attention<T>(Graph<T>&, Var, Var, Var, std::int64_t*);                  \
  template class Sam<T>;                                                                       \
  template class HeadConv<T>;

YOLOD_LAYERS(float)
YOLOD_LAYERS(double)

}  // namespace yolod
