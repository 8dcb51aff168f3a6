#include "cli.hpp"

#include <malloc.h>
#include <omp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "svg.hpp"
#include "yolod/amp.hpp"
#include "yolod/dataset.hpp"
#include "yolod/detector.hpp"
#include "yolod/eos.hpp"
#include "yolod/errors.hpp"
#include "yolod/kernels.hpp"
#include "yolod/log.hpp"
#include "yolod/metrics.hpp"
#include "yolod/train.hpp"

namespace yolod::tools {

namespace fs = std::filesystem;

std::vector<ConfigEntry> parse_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::vector<ConfigEntry> out;
  std::string line;
  int no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++no;
    if (no == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(no) + ": expected key=value, got '" + line + "'");
    }
    std::string key = trim(line.substr(0, eq));
    while (key.starts_with("-")) key.erase(0, 1);
    if (key.empty()) throw ConfigError(path.string() + ":" + std::to_string(no) + ": empty key");
    out.push_back({key, trim(line.substr(eq + 1)), no});
  }
  return out;
}

namespace {

struct ModelFlags {
  std::string preset = "s";
  int num_classes = 2;
  std::string neck = "dfp";
  bool pan_tail = false;
  std::string order = "iff_sam_csp";
  bool iff_enabled = true;
  double iff_p_start = 0.05, iff_p_end = 0.005;
  std::string iff_score = "mean";
  bool iff_on_source = true;
  bool amp_enabled = true;
  std::string amp_mode = "yolov5_consistent";
  std::string amp_disabled_tier = "center_only";
  double anchor_ratio = 4.0;
  bool eos_enabled = true;
  double eos_scale = 2.0, eos_alpha = 2.0;

  void add_to(CLI::App* app, bool with_preset = true) {
    if (with_preset) {
      app->add_option("--preset", preset, "Model size")->check(CLI::IsMember({"s", "m", "l", "S", "M", "L"}));
    }
    app->add_option("--classes", num_classes, "Number of defect classes")->check(CLI::PositiveNumber);
    app->add_option("--neck", neck, "Neck type")->check(CLI::IsMember({"dfp", "fpn_pan"}));
    app->add_option("--neck.pan_tail", pan_tail, "Bottom-up tail after the DFP neck");
    app->add_option("--neck.order", order, "Enhancement order in DFP heads")
        ->check(CLI::IsMember({"iff_sam_csp", "csp_iff_sam"}));
    app->add_option("--iff.enabled", iff_enabled, "Invalid feature filtering");
    app->add_option("--iff.p_start", iff_p_start, "IFF ratio at the start of training");
    app->add_option("--iff.p_end", iff_p_end, "IFF ratio at the end of training");
    app->add_option("--iff.score", iff_score, "Channel score")->check(CLI::IsMember({"mean", "abs_mean"}));
    app->add_option("--iff.on_source", iff_on_source, "Also filter the backbone outputs");
    app->add_option("--amp.enabled", amp_enabled, "Adaptive multi positives");
    app->add_option("--amp.mode", amp_mode, "Candidate rule")->check(CLI::IsMember({"literal", "yolov5_consistent"}));
    app->add_option("--amp.disabled_tier", amp_disabled_tier, "Rule used when AMP is off")
        ->check(CLI::IsMember({"center_only", "yolov5"}));
    app->add_option("--amp.anchor_ratio", anchor_ratio, "Anchor shape filter");
    app->add_option("--eos.enabled", eos_enabled, "Slope-stabilized center decode");
    app->add_option("--eos.scale", eos_scale, "Center decode scale");
    app->add_option("--eos.alpha", eos_alpha, "Center decode slope factor");
  }

  ModelConfig build() const {
    ModelConfig c = ModelConfig::preset(preset);
    c.num_classes = num_classes;
    c.neck = neck == "dfp" ? NeckKind::dfp : NeckKind::fpn_pan;
    c.pan_tail = pan_tail;
    c.enhance_order = order == "iff_sam_csp" ? EnhanceOrder::iff_sam_csp : EnhanceOrder::csp_iff_sam;
    c.iff.enabled = iff_enabled;
    c.iff.p_start = iff_p_start;
    c.iff.p_end = iff_p_end;
    c.iff.score = iff_score == "mean" ? IffScore::mean : IffScore::abs_mean;
    c.iff.on_source = iff_on_source;
    c.amp.enabled = amp_enabled;
    c.amp.mode = amp_mode == "literal" ? AmpMode::literal : AmpMode::yolov5_consistent;
    c.amp.disabled_tier = amp_disabled_tier == "yolov5" ? AmpTier::yolov5 : AmpTier::center_only;
    c.amp.anchor_ratio = anchor_ratio;
    c.eos.enabled = eos_enabled;
    c.eos.scale = eos_scale;
    c.eos.alpha = eos_alpha;
    c.validate();
    return c;
  }
};

// Effective option values of a subcommand as key=value lines, loadable with
// --config.
std::string dump_options(const CLI::App* app) {
  std::ostringstream os;
  for (const CLI::Option* opt : app->get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config" || opt->get_positional()) continue;
    std::string value = opt->as<std::string>();
    if (value.empty() && !opt->get_default_str().empty()) value = opt->get_default_str();
    if (value.empty()) continue;
    os << name << "=" << value << "\n";
  }
  return os.str();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
}

std::vector<double> parse_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(what + ": '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw ConfigError(what + ": empty list");
  return out;
}

void set_threads(int threads) {
  if (threads > 0) omp_set_num_threads(threads);
}

// --- generate ---------------------------------------------------------------

struct GenerateArgs {
  fs::path out;
  int count = 100;
  std::uint64_t seed = 0;
  int size = 160;
  std::string ext = "png";
  int min_defects = 1, max_defects = 4;
  double min_size = 4, max_size = 20;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  if (a.size % 32 != 0) {
    throw ConfigError("image size " + std::to_string(a.size) + " must be divisible by 32 (the detector's largest stride)");
  }
  if (a.count < 0) throw ConfigError("count must be >= 0");
  SyntheticSpec spec;
  spec.image_size = a.size;
  spec.seed = a.seed;
  spec.min_defects = a.min_defects;
  spec.max_defects = a.max_defects;
  spec.min_defect_size = a.min_size;
  spec.max_defect_size = a.max_size;
  spec.validate();
  const Dataset d = generate_dataset(spec, a.count, "." + a.ext);
  write_dataset(d, a.out);
  std::size_t boxes = 0;
  for (const Annotation& an : d.annotations) boxes += an.boxes.size();
  out << "wrote " << d.size() << " images with " << boxes << " defects to " << a.out.string() << "\n";
  return kExitOk;
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
  fs::path data, out = "runs/train", resume;
  int epochs = 100;
  TrainConfig tc;
  std::uint64_t init_seed = 0;
};

int cmd_train(TrainArgs a, const ModelFlags& mf, const CLI::App* sub, std::ostream& out) {
  const ModelConfig cfg = mf.build();
  const Dataset data = load_dataset(a.data);
  if (data.empty()) throw IoError("dataset " + a.data.string() + " has no images");
  check_input_size(data.images[0].height, data.images[0].width);
  a.tc.epochs = a.epochs;
  a.tc.validate();

  Detector model(cfg, a.init_seed);
  OptimizerState opt;
  TrainHooks hooks;
  hooks.out_dir = a.out;
  hooks.optimizer = &opt;
  if (!a.resume.empty()) {
    hooks.start_epoch = load_training_checkpoint(a.resume, model, &opt);
    out << "resuming from " << a.resume.string() << " after epoch " << hooks.start_epoch << "\n";
    if (hooks.start_epoch >= a.tc.epochs) {
      out << "nothing to do: checkpoint already at epoch " << hooks.start_epoch << " of " << a.tc.epochs << "\n";
      return kExitOk;
    }
  }
  fs::create_directories(a.out);
  write_text(a.out / "config.txt", dump_options(sub));

  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train(model, data, a.tc, hooks);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  // Whole-run curve from the CSV so resumed runs plot every epoch.
  std::vector<Series> curves(4);
  curves[0].name = "total";
  curves[1].name = "box";
  curves[2].name = "obj";
  curves[3].name = "cls";
  {
    std::ifstream csv(a.out / "metrics.csv");
    std::string line;
    std::getline(csv, line);
    while (std::getline(csv, line)) {
      std::stringstream ss(line);
      std::string cell;
      std::vector<double> v;
      while (std::getline(ss, cell, ',')) v.push_back(std::strtod(cell.c_str(), nullptr));
      if (v.size() < 5) continue;
      for (int k = 0; k < 4; ++k) {
        curves[static_cast<std::size_t>(k)].x.push_back(v[0]);
        curves[static_cast<std::size_t>(k)].y.push_back(v[static_cast<std::size_t>(k) + 1]);
      }
    }
  }
  write_text(a.out / "loss.svg", line_chart("Training loss", "epoch", "loss", curves, true));

  if (!r.log.empty()) {
    const EpochLog& first = r.log.front();
    const EpochLog& last = r.log.back();
    out << "trained epochs " << first.epoch << "-" << last.epoch << " (" << r.steps << " steps) in "
        << fmt("%.1f", secs) << " s\n";
    out << "loss " << fmt("%.5g", first.loss.total) << " -> " << fmt("%.5g", last.loss.total) << " ("
        << fmt("%.2f", first.loss.total / std::max(last.loss.total, 1e-12)) << "x)\n";
    out << "positives per epoch " << first.loss.n_positives << "\n";
  }
  out << "checkpoint " << (a.out / "last.ckpt").string() << "\n";
  if (r.diverged) throw NumericError("training diverged at " + r.divergence);
  return kExitOk;
}

// --- eval -------------------------------------------------------------------

struct EvalArgs {
  fs::path data, ckpt, out;
  double conf = 0.25;
  double det_conf = 0.001;
  double nms_iou = 0.65;
  int batch = 8;
};

int cmd_eval(const EvalArgs& a, const ModelFlags& mf, std::ostream& out) {
  const ModelConfig cfg = mf.build();
  const Dataset data = load_dataset(a.data);
  if (data.empty()) throw IoError("dataset " + a.data.string() + " has no images");
  check_input_size(data.images[0].height, data.images[0].width);
  Detector model(cfg);
  load_training_checkpoint(a.ckpt, model);
  DetectConfig dc;
  dc.conf_thr = a.det_conf;
  dc.iou_thr = a.nms_iou;
  const auto dets = predict(model, data, dc, a.batch);
  std::vector<std::vector<Box>> gts;
  for (const Annotation& an : data.annotations) gts.push_back(an.boxes);
  EvalConfig ec;
  ec.num_classes = cfg.num_classes;
  ec.conf_thr = a.conf;
  const ApReport r = evaluate(dets, gts, ec);
  out << format_report(r);
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_report_csv(a.out / "report.csv", r);
    write_predictions(a.out / "predictions.txt", data, dets);
    out << "wrote " << (a.out / "report.csv").string() << " and " << (a.out / "predictions.txt").string() << "\n";
  }
  return kExitOk;
}

// --- bench ------------------------------------------------------------------

struct BenchArgs {
  std::string presets = "s";
  int repeat = 20, warmup = 5, inner = 5, size = 160, batch = 1;
  std::string backend = "fast";
  fs::path csv;
};

int cmd_bench(const BenchArgs& a, ModelFlags mf, std::ostream& out) {
  if (a.repeat < 2 || a.inner < 1) throw ConfigError("repeat must be >= 2 and inner >= 1");
  check_input_size(a.size, a.size);
  // Every forward frees and reallocates the same activation sizes; keeping
  // them in the heap avoids an mmap/munmap pair and page faults per tensor.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  kernels::set_backend(a.backend == "reference" ? kernels::Backend::reference : kernels::Backend::fast);
  std::vector<std::string> names;
  {
    std::stringstream ss(a.presets);
    std::string p;
    while (std::getline(ss, p, ',')) names.push_back(p);
  }
  std::ostringstream table;
  table << "preset,params,mult_adds,latency_ms_mean,latency_ms_std,cv\n";
  out << "preset  params(M)  GMACs    latency(ms)  std(ms)  std/mean\n";
  for (const std::string& name : names) {
    mf.preset = name;
    const ModelConfig cfg = mf.build();
    Detector model(cfg);
    const GraphReport rep = inspect_graph(model, a.size);
    Tensor x(Shape{a.batch, 3, a.size, a.size}, 0.5f);
    std::vector<double> ms;
    for (int i = 0; i < a.warmup + a.repeat; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      for (int k = 0; k < a.inner; ++k) {
        Graph<float> g;
        model.forward(g, g.constant(x), {});
      }
      const double dt =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() / a.inner;
      if (i >= a.warmup) ms.push_back(dt);
    }
    double mean = 0, var = 0;
    for (double v : ms) mean += v;
    mean /= static_cast<double>(ms.size());
    for (double v : ms) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(ms.size() - 1));
    char line[160];
    std::snprintf(line, sizeof line, "%-7s %-10.3f %-8.3f %-12.2f %-8.2f %.3f\n", name.c_str(), rep.params / 1e6,
                  static_cast<double>(rep.mult_adds) * a.batch / 1e9, mean, sd, sd / mean);
    out << line;
    table << name << "," << rep.params << "," << rep.mult_adds * a.batch << "," << mean << "," << sd << ","
          << sd / mean << "\n";
  }
  if (!a.csv.empty()) write_text(a.csv, table.str());
  return kExitOk;
}

// --- curves -----------------------------------------------------------------

struct CurvesArgs {
  std::string scales = "2,3,4";
  double alpha = 2.0;
  double t_min = -10, t_max = 10;
  int points = 2001;
  fs::path out = "curves";
};

int cmd_curves(const CurvesArgs& a, std::ostream& out) {
  const std::vector<double> scales = parse_list(a.scales, "--scale");
  if (a.points < 2 || !(a.t_min < a.t_max)) throw ConfigError("curves need at least two points and t_min < t_max");
  fs::create_directories(a.out);
  std::vector<Series> decode, slope;
  out << "scale  max_slope  baseline_max_slope  range\n";
  for (double s : scales) {
    EosConfig eos;
    eos.scale = s;
    eos.alpha = a.alpha;
    eos.validate();
    char name[64];
    std::snprintf(name, sizeof name, "curve_scale%g.csv", s);
    std::ofstream csv(a.out / name);
    if (!csv) throw IoError("cannot write " + (a.out / name).string());
    csv << "t,b,slope,baseline_b,baseline_slope\n";
    Series b{"EOS s=" + fmt("%g", s), {}, {}, false}, b0{"base s=" + fmt("%g", s), {}, {}, true};
    Series d{"EOS s=" + fmt("%g", s), {}, {}, false}, d0{"base s=" + fmt("%g", s), {}, {}, true};
    double max_slope = 0, max_base = 0;
    for (int i = 0; i < a.points; ++i) {
      const double t = a.t_min + (a.t_max - a.t_min) * i / (a.points - 1);
      const double v = decode_xy(t, s, a.alpha, 0.0), dv = xy_slope(t, s, a.alpha);
      const double v0 = baseline_decode_xy(t, s, 0.0), dv0 = baseline_xy_slope(t, s);
      csv << t << "," << v << "," << dv << "," << v0 << "," << dv0 << "\n";
      b.x.push_back(t);
      b.y.push_back(v);
      b0.x.push_back(t);
      b0.y.push_back(v0);
      d.x.push_back(t);
      d.y.push_back(dv);
      d0.x.push_back(t);
      d0.y.push_back(dv0);
      max_slope = std::max(max_slope, dv);
      max_base = std::max(max_base, dv0);
    }
    decode.push_back(b);
    decode.push_back(b0);
    slope.push_back(d);
    slope.push_back(d0);
    char line[160];
    std::snprintf(line, sizeof line, "%-6g %-10.6f %-19.6f (%g, %g)\n", s, max_slope, max_base, -(s - 1) / 2,
                  (s + 1) / 2);
    out << line;
  }
  write_text(a.out / "decode.svg", line_chart("Center decode b(t)", "t", "b - c", decode));
  write_text(a.out / "slope.svg", line_chart("Decode slope db/dt", "t", "slope", slope));
  out << "wrote curves to " << a.out.string() << "\n";
  return kExitOk;
}

// --- assign -----------------------------------------------------------------

struct AssignArgs {
  std::vector<std::string> boxes;
  fs::path data;
  int index = 0;
  int size = 160;
};

int cmd_assign(const AssignArgs& a, const ModelFlags& mf, std::ostream& out) {
  const ModelConfig cfg = mf.build();
  std::vector<Box> gts;
  int size = a.size;
  if (!a.data.empty()) {
    const Dataset d = load_dataset(a.data);
    if (a.index < 0 || a.index >= static_cast<int>(d.size())) {
      throw ConfigError("--index " + std::to_string(a.index) + " outside the " + std::to_string(d.size()) +
                        " images of " + a.data.string());
    }
    gts = d.annotations[static_cast<std::size_t>(a.index)].boxes;
    size = d.images[static_cast<std::size_t>(a.index)].width;
    out << "image " << d.annotations[static_cast<std::size_t>(a.index)].image << "\n";
  }
  for (const std::string& s : a.boxes) {
    const std::vector<double> v = parse_list(s, "--box");
    if (v.size() != 4 && v.size() != 5) throw ConfigError("--box expects cx,cy,w,h[,class], got '" + s + "'");
    gts.push_back({v[0], v[1], v[2], v[3], v.size() == 5 ? static_cast<int>(v[4]) : 0});
  }
  if (gts.empty()) throw ConfigError("assign needs --box or --data");
  check_input_size(size, size);
  std::array<std::array<int, 2>, 3> hw{};
  for (int l = 0; l < 3; ++l) {
    const int g = size / static_cast<int>(cfg.levels[l].stride);
    hw[l] = {g, g};
  }
  std::vector<LevelGrid> grids;
  for (int l = 0; l < 3; ++l) grids.push_back({cfg.levels[l], hw[l][1], hw[l][0]});
  const auto as = assign(gts, grids, cfg.amp);
  out << "gt  level stride tier         col row anchor offset_x offset_y\n";
  for (const Assignment& x : as) {
    const Box& b = gts[static_cast<std::size_t>(x.gt)];
    const double stride = cfg.levels[x.level].stride;
    const CenterCell cc = center_offset(b.cx, b.cy, stride, hw[x.level][1], hw[x.level][0]);
    const AmpTier tier = cfg.amp.enabled ? size_gate(b.w, b.h, stride) : cfg.amp.disabled_tier;
    char line[160];
    std::snprintf(line, sizeof line, "%-3d %-5d %-6g %-12s %-3d %-3d %-6d %-8.3f %.3f\n", x.gt, x.level, stride,
                  to_string(tier), x.col, x.row, x.anchor, cc.offset.x, cc.offset.y);
    out << line;
  }
  out << as.size() << " positives for " << gts.size() << " ground truths\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args_in, std::ostream& out, std::ostream& err) {
  CLI::App app{"YOLOD desk-scale defect detector"};
  app.name("yolod");
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
  std::string config_path;
  app.add_option("--config", config_path, "key=value file; command-line flags take precedence");

  int threads = 0;
  ModelFlags mf;

  GenerateArgs ga;
  CLI::App* gen = app.add_subcommand("generate", "Write a synthetic leather-defect dataset");
  gen->add_option("--out", ga.out, "Output directory")->required();
  gen->add_option("--count", ga.count, "Number of images");
  gen->add_option("--seed", ga.seed, "Random seed");
  gen->add_option("--size", ga.size, "Image side in pixels (multiple of 32)");
  gen->add_option("--ext", ga.ext, "Image format")->check(CLI::IsMember({"png", "pgm"}));
  gen->add_option("--min-defects", ga.min_defects, "Fewest defects per image");
  gen->add_option("--max-defects", ga.max_defects, "Most defects per image");
  gen->add_option("--min-size", ga.min_size, "Smallest defect in pixels");
  gen->add_option("--max-size", ga.max_size, "Largest defect in pixels");
  gen->add_option("--threads", threads, "OpenMP threads (0 keeps the default)");

  TrainArgs ta;
  CLI::App* tr = app.add_subcommand("train", "Train a detector");
  tr->add_option("--data", ta.data, "Dataset directory")->required();
  tr->add_option("--out", ta.out, "Run directory (metrics.csv, checkpoints, loss.svg)");
  tr->add_option("--epochs", ta.epochs, "Epochs");
  tr->add_option("--batch", ta.tc.batch_size, "Batch size");
  tr->add_option("--lr0", ta.tc.lr0, "Initial learning rate");
  tr->add_option("--lr-final", ta.tc.lr_final, "Final learning rate as a fraction of lr0");
  tr->add_option("--cosine", ta.tc.cosine, "Cosine annealing");
  tr->add_option("--warmup", ta.tc.warmup_steps, "Warmup steps (-1: min(100, total/10))");
  tr->add_option("--momentum", ta.tc.momentum, "SGD momentum");
  tr->add_option("--weight-decay", ta.tc.weight_decay, "Weight decay on conv weights");
  tr->add_option("--loss.box", ta.tc.loss.box, "Box loss weight");
  tr->add_option("--loss.obj", ta.tc.loss.obj, "Objectness loss weight");
  tr->add_option("--loss.cls", ta.tc.loss.cls, "Class loss weight");
  tr->add_option("--seed", ta.tc.seed, "Shuffle and augmentation seed");
  tr->add_option("--init-seed", ta.init_seed, "Weight initialisation seed");
  tr->add_option("--flips", ta.tc.flips, "Random horizontal and vertical flips");
  tr->add_option("--checkpoint-every", ta.tc.checkpoint_every, "Epochs between checkpoints (0: final only)");
  tr->add_option("--resume", ta.resume, "Checkpoint to continue from");
  tr->add_option("--threads", threads, "OpenMP threads (0 keeps the default)");
  mf.add_to(tr);

  EvalArgs ea;
  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  ev->add_option("--data", ea.data, "Dataset directory")->required();
  ev->add_option("--ckpt", ea.ckpt, "Checkpoint")->required();
  ev->add_option("--out", ea.out, "Directory for report.csv and predictions.txt");
  ev->add_option("--conf", ea.conf, "Operating confidence for ED, precision and recall");
  ev->add_option("--det-conf", ea.det_conf, "Lowest confidence kept for AP");
  ev->add_option("--nms-iou", ea.nms_iou, "NMS IoU threshold");
  ev->add_option("--batch", ea.batch, "Inference batch size")->check(CLI::PositiveNumber);
  ev->add_option("--threads", threads, "OpenMP threads (0 keeps the default)");
  mf.add_to(ev);

  BenchArgs ba;
  CLI::App* be = app.add_subcommand("bench", "Parameters, mult-adds and forward latency");
  mf.add_to(be, false);
  be->add_option("--preset", ba.presets, "Comma-separated presets (s,m,l)");
  be->add_option("--repeat", ba.repeat, "Timed runs");
  be->add_option("--warmup", ba.warmup, "Untimed runs first");
  be->add_option("--inner", ba.inner, "Forwards averaged into each timed run");
  be->add_option("--size", ba.size, "Input side in pixels");
  be->add_option("--batch", ba.batch, "Batch size")->check(CLI::PositiveNumber);
  be->add_option("--backend", ba.backend, "Kernel backend")->check(CLI::IsMember({"fast", "reference"}));
  be->add_option("--csv", ba.csv, "Also write the table as CSV");
  be->add_option("--threads", threads, "OpenMP threads (0 keeps the default)");

  CurvesArgs ca;
  CLI::App* cu = app.add_subcommand("curves", "Center decode and slope curves per scale");
  cu->add_option("--scale", ca.scales, "Comma-separated scales");
  cu->add_option("--alpha", ca.alpha, "Slope factor");
  cu->add_option("--t-min", ca.t_min, "Smallest logit");
  cu->add_option("--t-max", ca.t_max, "Largest logit");
  cu->add_option("--points", ca.points, "Samples per curve");
  cu->add_option("--out", ca.out, "Output directory");

  AssignArgs aa;
  CLI::App* as = app.add_subcommand("assign", "Dump the positive samples chosen for ground-truth boxes");
  as->add_option("--box", aa.boxes, "cx,cy,w,h[,class] in pixels (repeatable)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  as->add_option("--data", aa.data, "Dataset directory (uses the image at --index)");
  as->add_option("--index", aa.index, "Image index within --data");
  as->add_option("--size", aa.size, "Image side when only --box is given");
  mf.add_to(as);

  // The config file becomes --key=value tokens placed right after the
  // subcommand; TakeLast then lets explicit flags win.
  std::vector<std::string> args;
  std::string cfg_file;
  for (std::size_t i = 0; i < args_in.size(); ++i) {
    const std::string& s = args_in[i];
    if (s == "--config" && i + 1 < args_in.size()) {
      cfg_file = args_in[++i];
    } else if (s.starts_with("--config=")) {
      cfg_file = s.substr(9);
    } else {
      args.push_back(s);
    }
  }
  try {
    if (!cfg_file.empty()) {
      std::size_t sub_pos = args.size();
      CLI::App* sub = nullptr;
      for (std::size_t i = 0; i < args.size(); ++i) {
        if (!args[i].starts_with("-")) {
          sub = app.get_subcommand_no_throw(args[i]);
          if (sub) sub_pos = i;
          break;
        }
      }
      std::vector<std::string> injected;
      for (const ConfigEntry& e : parse_config_file(cfg_file)) {
        const std::string flag = "--" + e.key;
        bool known = false;
        for (const CLI::App* s : app.get_subcommands({})) {
          known = known || s->get_option_no_throw(flag) != nullptr;
        }
        if (!known) {
          throw ConfigError(cfg_file + ":" + std::to_string(e.line) + ": unknown key '" + e.key + "'");
        }
        if (sub && sub->get_option_no_throw(flag)) injected.push_back(flag + "=" + e.value);
      }
      if (sub) args.insert(args.begin() + static_cast<std::ptrdiff_t>(sub_pos) + 1, injected.begin(), injected.end());
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    set_threads(threads);
    if (gen->parsed()) return cmd_generate(ga, out);
    if (tr->parsed()) return cmd_train(ta, mf, tr, out);
    if (ev->parsed()) return cmd_eval(ea, mf, out);
    if (be->parsed()) return cmd_bench(ba, mf, out);
    if (cu->parsed()) return cmd_curves(ca, out);
    if (as->parsed()) return cmd_assign(aa, mf, out);
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return kExitState;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kExitState;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 1;
  }
  return kExitUsage;
}

}  // namespace yolod::tools
