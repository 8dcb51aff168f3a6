#pragma once

// Training loop: SGD with Nesterov momentum, linear warmup into a cosine LR,
// IFF ratio following the training progress, flip augmentation.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "yolod/dataset.hpp"
#include "yolod/detector.hpp"
#include "yolod/loss.hpp"

namespace yolod {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 8;
  double lr0 = 0.01;
  double lr_final = 0.01;  // lr_min = lr0 * lr_final
  bool cosine = true;
  int warmup_steps = -1;  // -1: min(100, total/10)
  double momentum = 0.937;
  double weight_decay = 5e-4;
  LossWeights loss;
  std::uint64_t seed = 0;
  bool flips = true;
  int checkpoint_every = 0;  // epochs; 0 writes only the final checkpoint
  void validate() const;
};

// lr_min + (lr0 - lr_min)(1 + cos(pi step/total))/2.
double cosine_lr(std::int64_t step, std::int64_t total, double lr0, double lr_min);
// Warmup (linear from 0) then cosine, or flat lr0 when cosine is off.
double scheduled_lr(const TrainConfig& cfg, std::int64_t step, std::int64_t total);
int resolved_warmup(const TrainConfig& cfg, std::int64_t total);

struct EpochLog {
  int epoch = 0;  // 1-based
  std::int64_t step = 0;  // steps completed
  LossReport loss;  // batch mean over the epoch
  double lr = 0;
  double iff_p = 0;
};

// CSV header and row for the metrics log.
std::string epoch_csv_header();
std::string epoch_csv_row(const EpochLog& e);

// Batch tensor [N, 3, H, W] in [0, 1] (gray replicated to three channels)
// with matching boxes; flips[i] = {horizontal, vertical}.
struct Batch {
  Tensor images;
  std::vector<std::vector<Box>> boxes;
};
Batch make_batch(const Dataset& data, const std::vector<int>& indices,
                 const std::vector<std::array<bool, 2>>& flips = {});
Tensor image_tensor(const std::vector<const GrayImage*>& images);

// Momentum buffers per parameter, saved with the checkpoint for resume.
struct OptimizerState {
  std::vector<Tensor> velocity;
};

struct TrainResult {
  std::vector<EpochLog> log;
  int last_epoch = 0;
  std::int64_t steps = 0;
  bool diverged = false;
  bool stopped_early = false;
  std::string divergence;
};

struct TrainHooks {
  std::filesystem::path out_dir;  // empty: no files
  // Called after every epoch; returning false stops training.
  std::function<bool(const EpochLog&)> on_epoch;
  // Resume point (epochs already done) and optimizer state.
  int start_epoch = 0;
  OptimizerState* optimizer = nullptr;
};

// Throws ConfigError for an invalid config and IoError for an empty dataset.
TrainResult train(Detector& model, const Dataset& data, const TrainConfig& cfg, const TrainHooks& hooks = {});

// Checkpoint records: model state, then "meta.epoch", "meta.anchors" and
// "meta.velocity.<param>" records.
void save_training_checkpoint(const std::filesystem::path& path, const Detector& model, int epoch,
                              const OptimizerState* opt = nullptr);
// Loads weights (strict) and returns the stored epoch; fills opt when given.
int load_training_checkpoint(const std::filesystem::path& path, Detector& model, OptimizerState* opt = nullptr);

}  // namespace yolod
