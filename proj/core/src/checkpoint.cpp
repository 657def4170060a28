#include "unimixer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "unimixer/config.hpp"
#include "unimixer/errors.hpp"

namespace unimixer {

namespace {

constexpr char kMagic[8] = {'U', 'M', 'X', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  std::string text(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError("checkpoint: truncated file");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(UniMixerModel& model) {
  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, kVersion);
  const std::string header = emit_model_config(model.config);
  put_u64(out, header.size());
  out += header;
  const auto params = parameters(model);
  put_u64(out, params.size());
  for (const auto& p : params) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put_u64(out, p.value->rows());
    put_u64(out, p.value->cols());
    for (double v : p.value->data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

UniMixerModel deserialize_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.text(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) throw IoError("checkpoint: bad magic");
  const auto version = in.uint(4);
  if (version != kVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));
  const std::string header = in.text(in.uint(8));
  ModelConfig config;
  try {
    config = parse_model_config(header);
  } catch (const ConfigError& e) {
    throw IoError(std::string("checkpoint header: ") + e.what());
  }
  UniMixerModel model = init_model(config, 0);
  std::map<std::string, Matrix*> slots;
  for (const auto& p : parameters(model)) slots[p.name] = p.value;

  const auto count = in.uint(8);
  if (count != slots.size()) {
    throw IoError("checkpoint: " + std::to_string(count) + " arrays, model expects " + std::to_string(slots.size()));
  }
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::string name = in.text(in.uint(4));
    const auto it = slots.find(name);
    if (it == slots.end()) throw IoError("checkpoint: unexpected array '" + name + "'");
    Matrix& m = *it->second;
    const auto rows = in.uint(8);
    const auto cols = in.uint(8);
    if (rows != m.rows() || cols != m.cols()) {
      throw IoError("checkpoint: array '" + name + "' has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                    ", model expects " + m.shape_string());
    }
    for (double& v : m.data()) v = std::bit_cast<double>(in.uint(8));
    slots.erase(it);
  }
  if (!in.done()) throw IoError("checkpoint: trailing bytes");
  set_temperature(model, model.config.tau);
  return model;
}

void save_checkpoint(const std::string& path, UniMixerModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  const std::string bytes = serialize_checkpoint(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

UniMixerModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

}  // namespace unimixer
