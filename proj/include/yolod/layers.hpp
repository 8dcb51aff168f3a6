#pragma once

// Building blocks: Conv-BN-SiLU, bottleneck, CSP, SPPF, spatial attention.
// Parameters live in a ParamStore; blocks keep pointers into it.

#include <cstdint>
#include <deque>
#include <random>
#include <string>
#include <vector>

#include "yolod/checkpoint.hpp"
#include "yolod/graph.hpp"
#include "yolod/iff.hpp"
#include "yolod/ops.hpp"

namespace yolod {

template <typename T>
class ParamStore {
 public:
  BasicParameter<T>& add(const std::string& name, BasicTensor<T> value, bool decay);
  ops::BatchNormState<T>& add_bn(const std::string& name, int channels);

  BasicParameter<T>* find(const std::string& name);
  std::deque<BasicParameter<T>>& params() { return params_; }
  const std::deque<BasicParameter<T>>& params() const { return params_; }
  std::int64_t count() const;
  void zero_grad();
  std::deque<ops::BatchNormState<T>>& bn_states() { return bns_; }

  // Parameters followed by BN running statistics, as float records.
  std::vector<NamedTensor> state() const;
  // Every record must match a parameter or buffer by name and shape; extra
  // records whose name starts with "meta." are ignored. Throws ShapeError.
  void load_state(const std::vector<NamedTensor>& records);

 private:
  std::deque<BasicParameter<T>> params_;
  std::deque<ops::BatchNormState<T>> bns_;
  std::vector<std::string> bn_names_;
};

// Per-forward settings shared by all blocks.
template <typename T>
struct ForwardCtx {
  Graph<T>& g;
  bool training = false;
  double iff_p = 0.005;
  IffScore iff_score = IffScore::mean;
  IffTape* tape = nullptr;
  std::int64_t* mult_adds = nullptr;  // per-image conv mult-adds, when set
};

// Conv weights draw from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
class InitRng {
 public:
  explicit InitRng(std::uint64_t seed) : eng_(seed) {}
  double uniform(double lo, double hi) { return lo + (hi - lo) * (static_cast<double>(eng_() >> 11) * 0x1.0p-53); }

 private:
  std::mt19937_64 eng_;
};

template <typename T>
BasicTensor<T> conv_init(Shape shape, InitRng& rng);

template <typename T>
class ConvBnAct {
 public:
  ConvBnAct() = default;
  ConvBnAct(ParamStore<T>& store, const std::string& name, int cin, int cout, int k, int s, InitRng& rng);
  Var forward(ForwardCtx<T>& ctx, Var x) const;
  int out_channels() const { return cout_; }

 private:
  BasicParameter<T>* w_ = nullptr;
  BasicParameter<T>* gamma_ = nullptr;
  BasicParameter<T>* beta_ = nullptr;
  ops::BatchNormState<T>* bn_ = nullptr;
  int cout_ = 0, k_ = 1, s_ = 1;
};

template <typename T>
class Bottleneck {
 public:
  Bottleneck(ParamStore<T>& store, const std::string& name, int c, bool shortcut, InitRng& rng);
  Var forward(ForwardCtx<T>& ctx, Var x) const;

 private:
  ConvBnAct<T> cv1_, cv2_;
  bool shortcut_;
};

// Split into two 1x1 branches, n bottlenecks on one, concat, 1x1 merge.
template <typename T>
class Csp {
 public:
  Csp(ParamStore<T>& store, const std::string& name, int cin, int cout, int n, bool shortcut, InitRng& rng);
  Var forward(ForwardCtx<T>& ctx, Var x) const;
  int out_channels() const { return cv3_.out_channels(); }

 private:
  ConvBnAct<T> cv1_, cv2_, cv3_;
  std::vector<Bottleneck<T>> blocks_;
};

// Three chained 5x5 max pools, concatenated with their input.
template <typename T>
class Sppf {
 public:
  Sppf(ParamStore<T>& store, const std::string& name, int cin, int cout, InitRng& rng);
  Var forward(ForwardCtx<T>& ctx, Var x) const;

 private:
  ConvBnAct<T> cv1_, cv2_;
};

// x * sigmoid(conv_k([max_c x; mean_c x])), the map broadcast over channels.
template <typename T>
Var spatial_attention(Graph<T>& g, Var x, Var weight, Var bias, std::int64_t* mult_adds = nullptr);

template <typename T>
class Sam {
 public:
  Sam(ParamStore<T>& store, const std::string& name, int kernel, InitRng& rng);
  Var forward(ForwardCtx<T>& ctx, Var x) const;

 private:
  BasicParameter<T>* w_;
  BasicParameter<T>* b_;
};

// Plain 1x1 conv with bias, no normalization or activation.
template <typename T>
class HeadConv {
 public:
  HeadConv(ParamStore<T>& store, const std::string& name, int cin, int cout, InitRng& rng);
  Var forward(ForwardCtx<T>& ctx, Var x) const;
  BasicParameter<T>& bias() { return *b_; }

 private:
  BasicParameter<T>* w_;
  BasicParameter<T>* b_;
};

}  // namespace yolod
