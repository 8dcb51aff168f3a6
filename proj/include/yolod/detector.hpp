#pragma once

// The full detector: CSP backbone -> neck (DFP or the FPN+PAN baseline) ->
// three 1x1 heads with 3*(5+nc) raw outputs each.

#include <array>
#include <cstdint>
#include <memory>

#include "yolod/layers.hpp"
#include "yolod/model_config.hpp"

namespace yolod {

struct ForwardOptions {
  bool training = false;
  double iff_p = 0.005;
  IffTape* tape = nullptr;
  std::int64_t* mult_adds = nullptr;
};

template <typename T>
class NeckBase;

template <typename T>
class BasicDetector {
 public:
  // Throws ShapeError when the DFP channel budget or equal-depth invariant
  // does not hold for this configuration.
  explicit BasicDetector(ModelConfig cfg, std::uint64_t seed = 0);
  ~BasicDetector();
  BasicDetector(const BasicDetector&) = delete;
  BasicDetector& operator=(const BasicDetector&) = delete;

  struct Output {
    std::array<Var, 3> sources;      // backbone P3, P4, P5
    std::array<Var, 3> head_inputs;  // widened neck outputs before enhancement
    std::array<Var, 3> raw;          // [N, 3*(5+nc), H/s, W/s]
  };

  // images: [N, 3, H, W] with H, W divisible by 32.
  Output forward(Graph<T>& g, Var images, const ForwardOptions& opt) const;

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& store() { return store_; }
  const ParamStore<T>& store() const { return store_; }
  // Channel counts of the concatenated head inputs (D1, D2, D3 for DFP).
  std::array<int, 3> head_input_channels() const;
  // Head-input channels of the reference FPN+PAN neck at the same width.
  std::array<int, 3> baseline_channels() const { return cfg_.channels(); }
  int outputs_per_level() const { return 3 * (5 + cfg_.num_classes); }

 private:
  ModelConfig cfg_;
  ParamStore<T> store_;
  struct Backbone;
  std::unique_ptr<Backbone> backbone_;
  std::unique_ptr<NeckBase<T>> neck_;
  std::vector<HeadConv<T>> heads_;
};

using Detector = BasicDetector<float>;
using DetectorD = BasicDetector<double>;

struct GraphReport {
  std::array<int, 3> head_depth{};  // weighted layers from the backbone outputs
  std::array<int, 3> head_input_channels{};
  std::int64_t params = 0;
  std::int64_t mult_adds = 0;  // per image at the given input size
};

template <typename T>
GraphReport inspect_graph(const BasicDetector<T>& model, int input_size = 160);

// Throws ShapeError naming the constraint.
void check_input_size(int height, int width);

}  // namespace yolod
