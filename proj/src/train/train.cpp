#include "yolod/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "yolod/checkpoint.hpp"
#include "yolod/errors.hpp"
#include "yolod/iff.hpp"
#include "yolod/log.hpp"

namespace yolod {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1, got " + std::to_string(epochs));
  if (batch_size < 1) throw ConfigError("train: batch size must be >= 1, got " + std::to_string(batch_size));
  if (!(lr0 > 0)) throw ConfigError("train: lr0 must be > 0");
  if (!(lr_final >= 0 && lr_final <= 1)) throw ConfigError("train: lr_final must lie in [0, 1]");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train: momentum must lie in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("train: weight decay must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("train: checkpoint interval must be >= 0");
}

double cosine_lr(std::int64_t step, std::int64_t total, double lr0, double lr_min) {
  if (total <= 0) return lr_min;
  const double t = static_cast<double>(std::clamp<std::int64_t>(step, 0, total)) / static_cast<double>(total);
  if (2 * step == total) return 0.5 * (lr0 + lr_min);
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

int resolved_warmup(const TrainConfig& cfg, std::int64_t total) {
  if (cfg.warmup_steps >= 0) return cfg.warmup_steps;
  return static_cast<int>(std::min<std::int64_t>(100, total / 10));
}

double scheduled_lr(const TrainConfig& cfg, std::int64_t step, std::int64_t total) {
  const double base = cfg.cosine ? cosine_lr(step, total, cfg.lr0, cfg.lr0 * cfg.lr_final) : cfg.lr0;
  const int warm = resolved_warmup(cfg, total);
  if (step < warm) return base * static_cast<double>(step + 1) / static_cast<double>(warm + 1);
  return base;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

std::string epoch_csv_header() { return "epoch,loss_total,loss_box,loss_obj,loss_cls,lr,iff_p,n_positives"; }

std::string epoch_csv_row(const EpochLog& e) {
  return std::to_string(e.epoch) + "," + fmt(e.loss.total) + "," + fmt(e.loss.box) + "," + fmt(e.loss.obj) + "," +
         fmt(e.loss.cls) + "," + fmt(e.lr) + "," + fmt(e.iff_p) + "," + std::to_string(e.loss.n_positives);
}

Tensor image_tensor(const std::vector<const GrayImage*>& images) {
  if (images.empty()) throw ShapeError("image_tensor: no images");
  const int h = images[0]->height, w = images[0]->width;
  const int n = static_cast<int>(images.size());
  Tensor t(Shape{n, 3, h, w});
  for (int i = 0; i < n; ++i) {
    const GrayImage& im = *images[static_cast<std::size_t>(i)];
    if (im.width != w || im.height != h) {
      throw ShapeError("image_tensor: image " + std::to_string(i) + " is " + std::to_string(im.width) + "x" +
                       std::to_string(im.height) + ", expected " + std::to_string(w) + "x" + std::to_string(h));
    }
    for (int c = 0; c < 3; ++c) {
      float* dst = t.ptr() + (static_cast<std::size_t>(i) * 3 + c) * h * w;
      for (std::size_t p = 0; p < im.pixels.size(); ++p) dst[p] = static_cast<float>(im.pixels[p]) / 255.0f;
    }
  }
  return t;
}

Batch make_batch(const Dataset& data, const std::vector<int>& indices, const std::vector<std::array<bool, 2>>& flips) {
  std::vector<const GrayImage*> ims;
  for (int i : indices) ims.push_back(&data.images.at(static_cast<std::size_t>(i)));
  Batch b;
  b.images = image_tensor(ims);
  const int h = b.images.dim(2), w = b.images.dim(3);
  b.boxes.resize(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    b.boxes[k] = data.annotations.at(static_cast<std::size_t>(indices[k])).boxes;
    if (flips.empty()) continue;
    const auto [fh, fv] = flips.at(k);
    float* base = b.images.ptr() + k * 3 * h * w;
    for (int c = 0; c < 3; ++c) {
      float* plane = base + static_cast<std::size_t>(c) * h * w;
      if (fh) {
        for (int y = 0; y < h; ++y) std::reverse(plane + static_cast<std::size_t>(y) * w, plane + (y + 1) * w);
      }
      if (fv) {
        for (int y = 0; y < h / 2; ++y) {
          std::swap_ranges(plane + static_cast<std::size_t>(y) * w, plane + (y + 1) * w,
                           plane + static_cast<std::size_t>(h - 1 - y) * w);
        }
      }
    }
    for (Box& box : b.boxes[k]) {
      if (fh) box.cx = w - box.cx;
      if (fv) box.cy = h - box.cy;
    }
  }
  return b;
}

void save_training_checkpoint(const std::filesystem::path& path, const Detector& model, int epoch,
                              const OptimizerState* opt) {
  std::vector<NamedTensor> recs = model.store().state();
  recs.push_back({"meta.epoch", Tensor::scalar(static_cast<float>(epoch))});
  Tensor anchors(Shape{3, kAnchorsPerLevel, 2});
  for (int l = 0; l < 3; ++l) {
    for (int a = 0; a < kAnchorsPerLevel; ++a) {
      for (int d = 0; d < 2; ++d) {
        anchors[(l * kAnchorsPerLevel + a) * 2 + d] = static_cast<float>(model.config().levels[l].anchors[a][d]);
      }
    }
  }
  recs.push_back({"meta.anchors", std::move(anchors)});
  if (opt) {
    const auto& params = model.store().params();
    for (std::size_t i = 0; i < params.size() && i < opt->velocity.size(); ++i) {
      recs.push_back({"meta.velocity." + params[i].name, opt->velocity[i]});
    }
  }
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  save_checkpoint(path, recs);
}

int load_training_checkpoint(const std::filesystem::path& path, Detector& model, OptimizerState* opt) {
  const std::vector<NamedTensor> recs = load_checkpoint(path);
  model.store().load_state(recs);
  int epoch = 0;
  const auto& params = model.store().params();
  if (opt) opt->velocity.assign(params.size(), Tensor());
  for (const NamedTensor& r : recs) {
    if (r.name == "meta.epoch" && r.tensor.numel() == 1) epoch = static_cast<int>(r.tensor[0]);
    if (r.name == "meta.anchors" && r.tensor.numel() == 3 * kAnchorsPerLevel * 2) {
      bool same = true;
      for (int l = 0; l < 3; ++l) {
        for (int a = 0; a < kAnchorsPerLevel; ++a) {
          for (int d = 0; d < 2; ++d) {
            const double stored = r.tensor[(l * kAnchorsPerLevel + a) * 2 + d];
            same = same && std::abs(stored - model.config().levels[l].anchors[a][d]) <= 1e-3;
          }
        }
      }
      if (!same) log::warn("checkpoint anchors differ from the configured anchors; using the configured ones");
    }
    if (opt && r.name.starts_with("meta.velocity.")) {
      const std::string name = r.name.substr(14);
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name == name && params[i].value.shape() == r.tensor.shape()) opt->velocity[i] = r.tensor;
      }
    }
  }
  return epoch;
}

namespace {

void sgd_step(ParamStore<float>& store, OptimizerState& opt, const TrainConfig& cfg, double lr) {
  auto& params = store.params();
  if (opt.velocity.size() != params.size()) opt.velocity.assign(params.size(), Tensor());
  for (std::size_t i = 0; i < params.size(); ++i) {
    BasicParameter<float>& p = params[i];
    Tensor& v = opt.velocity[i];
    if (v.shape() != p.value.shape()) v = Tensor(p.value.shape());
    const float m = static_cast<float>(cfg.momentum);
    const float wd = p.decay ? static_cast<float>(cfg.weight_decay) : 0.0f;
    const float step = static_cast<float>(lr);
    for (std::int64_t k = 0; k < p.value.numel(); ++k) {
      const float g = p.grad[k] + wd * p.value[k];
      v[k] = m * v[k] + g;
      p.value[k] -= step * (g + m * v[k]);
    }
  }
}

std::vector<int> permutation(int n, std::mt19937_64& eng) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(eng() % static_cast<std::uint64_t>(i + 1));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  return idx;
}

void dump_batch(const std::filesystem::path& dir, const Dataset& data, const std::vector<int>& indices,
                const std::string& why) {
  Dataset d;
  for (int i : indices) {
    d.images.push_back(data.images[static_cast<std::size_t>(i)]);
    d.annotations.push_back(data.annotations[static_cast<std::size_t>(i)]);
  }
  try {
    write_dataset(d, dir);
    std::ofstream(dir / "reason.txt") << why << "\n";
    log::warn("offending batch written to " + dir.string());
  } catch (const std::exception& e) {
    log::warn(std::string("could not dump the offending batch: ") + e.what());
  }
}

}  // namespace

TrainResult train(Detector& model, const Dataset& data, const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  if (data.empty()) throw IoError("train: dataset is empty");
  const int n = static_cast<int>(data.size());
  const int batch = std::min(cfg.batch_size, n);
  const int per_epoch = (n + batch - 1) / batch;
  const std::int64_t total = static_cast<std::int64_t>(cfg.epochs) * per_epoch;

  OptimizerState local;
  OptimizerState& opt = hooks.optimizer ? *hooks.optimizer : local;

  std::ofstream csv;
  if (!hooks.out_dir.empty()) {
    std::filesystem::create_directories(hooks.out_dir);
    const auto path = hooks.out_dir / "metrics.csv";
    const bool append = hooks.start_epoch > 0 && std::filesystem::exists(path);
    csv.open(path, append ? std::ios::app : std::ios::trunc);
    if (!csv) throw IoError("cannot write " + path.string());
    if (!append) csv << epoch_csv_header() << "\n";
  }

  TrainResult result;
  result.last_epoch = hooks.start_epoch;
  std::vector<NamedTensor> last_good = model.store().state();
  const int report_every = std::max(1, cfg.epochs / 20);

  for (int epoch = hooks.start_epoch + 1; epoch <= cfg.epochs; ++epoch) {
    std::mt19937_64 eng(cfg.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(epoch));
    const std::vector<int> order = permutation(n, eng);
    EpochLog log_row;
    log_row.epoch = epoch;
    for (int b = 0; b < per_epoch; ++b) {
      const std::int64_t step = static_cast<std::int64_t>(epoch - 1) * per_epoch + b;
      std::vector<int> idx(order.begin() + b * batch, order.begin() + std::min(n, (b + 1) * batch));
      std::vector<std::array<bool, 2>> flips;
      if (cfg.flips) {
        for (std::size_t k = 0; k < idx.size(); ++k) flips.push_back({(eng() & 1) != 0, (eng() & 2) != 0});
      }
      const Batch bt = make_batch(data, idx, flips);
      const double lr = scheduled_lr(cfg, step, total);
      const double p = iff_schedule(static_cast<double>(step) / static_cast<double>(total), model.config().iff);

      std::string failure;
      LossReport rep;
      try {
        Graph<float> g;
        ForwardOptions fo;
        fo.training = true;
        fo.iff_p = p;
        const auto out = model.forward(g, g.constant(bt.images), fo);
        const LossTerms<float> terms = detection_loss(g, out.raw, bt.boxes, model.config(), cfg.loss);
        rep = terms.report;
        if (rep.total > 1e4) {
          failure = "loss exceeded 1e4: " + rep.describe();
        } else {
          model.store().zero_grad();
          g.backward(terms.total);
        }
      } catch (const NumericError& e) {
        failure = e.what();
      }
      if (!failure.empty()) {
        result.diverged = true;
        result.divergence = "epoch " + std::to_string(epoch) + " step " + std::to_string(step) + ": " + failure;
        log::warn("training diverged at " + result.divergence + "; keeping the last good weights");
        model.store().load_state(last_good);
        if (!hooks.out_dir.empty()) {
          dump_batch(hooks.out_dir / "diverged_batch", data, idx, result.divergence);
          save_training_checkpoint(hooks.out_dir / "last.ckpt", model, result.last_epoch, &opt);
        }
        return result;
      }
      sgd_step(model.store(), opt, cfg, lr);
      result.steps = step + 1;

      log_row.loss.total += rep.total / per_epoch;
      log_row.loss.box += rep.box / per_epoch;
      log_row.loss.obj += rep.obj / per_epoch;
      log_row.loss.cls += rep.cls / per_epoch;
      log_row.loss.n_positives += rep.n_positives;
      log_row.lr = lr;
      log_row.iff_p = p;
      log_row.step = step + 1;
    }
    result.log.push_back(log_row);
    result.last_epoch = epoch;
    last_good = model.store().state();
    if (csv) csv << epoch_csv_row(log_row) << "\n" << std::flush;
    if (epoch % report_every == 0 || epoch == cfg.epochs) {
      log::info("epoch " + std::to_string(epoch) + "/" + std::to_string(cfg.epochs) + " " + log_row.loss.describe() +
                " lr=" + fmt(log_row.lr) + " iff_p=" + fmt(log_row.iff_p));
    }
    if (!hooks.out_dir.empty() && cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04d.ckpt", epoch);
      save_training_checkpoint(hooks.out_dir / name, model, epoch, &opt);
    }
    if (hooks.on_epoch && !hooks.on_epoch(log_row)) {
      result.stopped_early = true;
      break;
    }
  }
  if (!hooks.out_dir.empty()) save_training_checkpoint(hooks.out_dir / "last.ckpt", model, result.last_epoch, &opt);
  return result;
}

}  // namespace yolod
