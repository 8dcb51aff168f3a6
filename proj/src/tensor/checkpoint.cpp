#include "yolod/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include "yolod/errors.hpp"

namespace yolod {
namespace {

constexpr char kMagic[4] = {'Y', 'L', 'D', 'W'};

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  Reader(const std::vector<unsigned char>& bytes, const std::string& file) : bytes_(bytes), file_(file) {}

  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint " + file_ + " is truncated");
  }

  const std::vector<unsigned char>& bytes_;
  std::string file_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& records) {
  std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kCheckpointVersion);
  for (const NamedTensor& r : records) {
    put_u32(out, static_cast<std::uint32_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    put_u32(out, static_cast<std::uint32_t>(r.tensor.rank()));
    for (int d : r.tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : r.tensor.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing checkpoint: " + path.string());
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader in(bytes, path.string());
  if (in.str(4) != std::string(kMagic, 4)) throw FormatError("not a YLDW checkpoint: " + path.string());
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  }
  std::vector<NamedTensor> records;
  while (!in.at_end()) {
    NamedTensor r;
    r.name = in.str(in.u32());
    const std::uint32_t rank = in.u32();
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(in.u32()));
    const std::int64_t count = numel(shape);
    if (static_cast<std::uint64_t>(count) * 4 > in.remaining()) {
      throw FormatError("checkpoint " + path.string() + " is truncated in record '" + r.name + "'");
    }
    std::vector<float> data(static_cast<std::size_t>(count));
    for (float& v : data) v = std::bit_cast<float>(in.u32());
    r.tensor = Tensor(std::move(shape), std::move(data));
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace yolod
