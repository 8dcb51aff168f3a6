#include <algorithm>
#include <charconv>
#include <fstream>

#include "yolod/eos.hpp"
#include "yolod/errors.hpp"
#include "yolod/metrics.hpp"
#include "yolod/train.hpp"

namespace yolod {

template <typename T>
std::vector<Detection> detect(const std::array<const BasicTensor<T>*, 3>& raw, int image, const ModelConfig& cfg,
                              const DetectConfig& dc) {
  std::vector<Detection> dets;
  for (int l = 0; l < 3; ++l) {
    for (const Candidate& c : decode_all(*raw[l], image, cfg.levels[l], cfg.num_classes, cfg.eos)) {
      const auto best = std::max_element(c.cls.begin(), c.cls.end());
      const double conf = c.obj * *best;
      if (conf < dc.conf_thr || !(c.box.w > 0) || !(c.box.h > 0)) continue;
      Detection d{c.box, conf};
      d.box.cls = static_cast<int>(best - c.cls.begin());
      dets.push_back(d);
    }
  }
  dets = nms(std::move(dets), dc.iou_thr, dc.conf_thr);
  if (static_cast<int>(dets.size()) > dc.max_dets) dets.resize(static_cast<std::size_t>(dc.max_dets));
  return dets;
}

std::vector<std::vector<Detection>> predict(const Detector& model, const Dataset& data, const DetectConfig& dc,
                                            int batch_size) {
  std::vector<std::vector<Detection>> out(data.size());
  const int n = static_cast<int>(data.size());
  for (int start = 0; start < n; start += batch_size) {
    std::vector<const GrayImage*> ims;
    for (int i = start; i < std::min(n, start + batch_size); ++i) ims.push_back(&data.images[static_cast<std::size_t>(i)]);
    Graph<float> g;
    const Tensor x = image_tensor(ims);
    const auto res = model.forward(g, g.constant(x), {});
    const std::array<const Tensor*, 3> raw{&g.value(res.raw[0]), &g.value(res.raw[1]), &g.value(res.raw[2])};
    for (int k = 0; k < static_cast<int>(ims.size()); ++k) {
      out[static_cast<std::size_t>(start + k)] = detect(raw, k, model.config(), dc);
    }
  }
  return out;
}

void write_predictions(const std::filesystem::path& path, const Dataset& data,
                       const std::vector<std::vector<Detection>>& dets) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  auto f = [](double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
  };
  for (std::size_t i = 0; i < data.size() && i < dets.size(); ++i) {
    os << data.annotations[i].image;
    for (std::size_t k = 0; k < dets[i].size(); ++k) {
      const Detection& d = dets[i][k];
      os << (k ? "; " : " ") << f(d.box.cx) << "," << f(d.box.cy) << "," << f(d.box.w) << "," << f(d.box.h) << ","
         << d.box.cls << "," << f(d.confidence);
    }
    os << "\n";
  }
}

template std::vector<Detection> detect<float>(const std::array<const Tensor*, 3>&, int, const ModelConfig&,
                                              const DetectConfig&);
template std::vector<Detection> detect<double>(const std::array<const TensorD*, 3>&, int, const ModelConfig&,
                                               const DetectConfig&);

}  // namespace yolod
