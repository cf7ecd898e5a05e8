#include "flowsteg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <algorithm>

#include "flowsteg/random.hpp"

namespace flowsteg {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'T', 'S', 'G'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  bool done() const noexcept { return pos_ == bytes_.size(); }
  std::size_t offset() const noexcept { return pos_; }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated in ") + what, pos_);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  void copy(void* dst, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_tensors(const std::map<std::string, Tensor<float>>& tensors) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kCheckpointVersion);
  for (const auto& [name, t] : tensors) {
    if (name.empty()) throw FormatError("checkpoint tensor names must be non-empty");
    if (t.rank() > 255) throw FormatError("tensor " + name + " has too many dimensions");
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    const auto* raw = reinterpret_cast<const std::uint8_t*>(t.data());
    out.insert(out.end(), raw, raw + t.numel() * sizeof(float));
  }
  return out;
}

std::map<std::string, Tensor<float>> decode_tensors(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  char magic[4];
  r.copy(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad checkpoint magic", 0);
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  std::map<std::string, Tensor<float>> out;
  while (!r.done()) {
    const std::size_t record = r.offset();
    const std::uint32_t len = r.u32("name length");
    if (len == 0) throw FormatError("empty tensor name", record);
    std::string name(len, '\0');
    r.copy(name.data(), len, "name");
    const std::uint8_t rank = r.u8("rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.u32("dims");
    const std::size_t n = shape_numel(shape);
    r.need(n * sizeof(float), "payload");
    std::vector<float> data(n);
    r.copy(data.data(), n * sizeof(float), "payload");
    if (!out.emplace(name, Tensor<float>(std::move(shape), std::move(data))).second) {
      throw FormatError("duplicate tensor " + name, record);
    }
  }
  return out;
}

fs::path sidecar_path(const fs::path& path) { return fs::path(path.string() + ".cfg"); }

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  const auto bytes = encode_tensors(ckpt.tensors);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + path.string());
  }
  std::ofstream cfg(sidecar_path(path), std::ios::trunc);
  if (!cfg) throw Error("cannot write " + sidecar_path(path).string());
  cfg << ckpt.config.serialize();
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Checkpoint ckpt;
  ckpt.tensors = decode_tensors(bytes);
  const fs::path cfg = sidecar_path(path);
  if (!fs::exists(cfg)) throw FormatError("missing config sidecar " + cfg.string());
  ckpt.config = TrainConfig::load(cfg.string());
  return ckpt;
}

template <typename T>
Model<T>::Model(const TrainConfig& cfg) : config(cfg), flow(cfg.flow, derive_seed(cfg.seed, 100)) {}

template <typename T>
void Model<T>::add_stego() {
  encoder.emplace(config.stego, derive_seed(config.seed, 200));
  decoder.emplace(config.stego, derive_seed(config.seed, 201));
}

template <typename T>
ParamList<T> Model<T>::stego_parameters() const {
  ParamList<T> out;
  if (encoder) out = encoder->parameters();
  if (decoder) {
    auto d = decoder->parameters();
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

template <typename T>
ParamList<T> Model<T>::parameters() const {
  ParamList<T> out = flow_parameters();
  auto s = stego_parameters();
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

Checkpoint to_checkpoint(const Model<float>& model) {
  Checkpoint ckpt;
  ckpt.config = model.config;
  for (const auto& p : model.parameters()) {
    if (!ckpt.tensors.emplace(p.name, p.var.value()).second) throw Error("duplicate parameter name " + p.name);
  }
  return ckpt;
}

Model<float> from_checkpoint(const Checkpoint& ckpt, const FlowConfig* expected) {
  if (expected && !(*expected == ckpt.config.flow)) {
    throw ConfigError("checkpoint flow structure does not match the requested configuration");
  }
  ckpt.config.validate();
  Model<float> model(ckpt.config);
  const bool stego = std::any_of(ckpt.tensors.begin(), ckpt.tensors.end(),
                                 [](const auto& kv) { return kv.first.rfind("stego.", 0) == 0; });
  if (stego) model.add_stego();

  std::set<std::string> assigned;
  for (auto& p : model.parameters()) {
    const auto it = ckpt.tensors.find(p.name);
    if (it == ckpt.tensors.end()) throw FormatError("checkpoint lacks tensor " + p.name);
    if (it->second.shape() != p.var.shape()) {
      throw FormatError("tensor " + p.name + " has shape " + shape_str(it->second.shape()) + ", expected " +
                        shape_str(p.var.shape()));
    }
    p.var.mutable_value() = it->second;
    assigned.insert(p.name);
  }
  for (const auto& [name, t] : ckpt.tensors) {
    if (!assigned.count(name)) throw FormatError("unknown tensor name " + name);
  }
  for (auto& block : model.flow.blocks()) {
    for (auto& step : block) step.actnorm.initialized = true;
  }
  return model;
}

template struct Model<float>;

}  // namespace flowsteg
