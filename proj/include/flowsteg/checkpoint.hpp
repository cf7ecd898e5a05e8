#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowsteg/config.hpp"
#include "flowsteg/flow.hpp"
#include "flowsteg/stego.hpp"

namespace flowsteg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Named parameter tensors plus the configuration they were trained under.
///
/// Binary layout, little-endian: magic "STSG", u32 version, then records
/// sorted by name, each {u32 name length, name bytes, u8 rank, u32 dims[rank],
/// f32 payload}, until end of file. The configuration is stored beside the
/// binary file in a key=value sidecar named <path>.cfg.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::map<std::string, Tensor<float>> tensors;
  TrainConfig config;
};

std::vector<std::uint8_t> encode_tensors(const std::map<std::string, Tensor<float>>& tensors);
/// Throws FormatError, with the byte offset, on bad magic, unsupported
/// version, truncation or duplicate names.
std::map<std::string, Tensor<float>> decode_tensors(std::span<const std::uint8_t> bytes);

std::filesystem::path sidecar_path(const std::filesystem::path& path);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws ConfigError if the file is missing, FormatError if it is malformed.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Everything a run trains: the flow and, once stage 2 has run, the stego pair.
template <typename T>
struct Model {
  TrainConfig config;
  FlowNetwork<T> flow;
  std::optional<StegoEncoder<T>> encoder;
  std::optional<StegoDecoder<T>> decoder;

  /// Fresh flow from the config seed; no stego networks.
  explicit Model(const TrainConfig& cfg);

  bool has_stego() const noexcept { return encoder.has_value() && decoder.has_value(); }
  /// Untrained stego networks seeded from the config.
  void add_stego();

  ParamList<T> flow_parameters() const { return flow.parameters(); }
  ParamList<T> stego_parameters() const;
  ParamList<T> parameters() const;
};

Checkpoint to_checkpoint(const Model<float>& model);

/// Rebuilds a model. Every tensor must match a parameter of the structure the
/// stored config describes; unknown or missing names and shape mismatches
/// throw FormatError. With `expected`, a differing flow structure throws
/// ConfigError.
Model<float> from_checkpoint(const Checkpoint& ckpt, const FlowConfig* expected = nullptr);

extern template struct Model<float>;

}  // namespace flowsteg
