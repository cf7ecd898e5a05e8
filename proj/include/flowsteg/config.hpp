#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "flowsteg/flow.hpp"
#include "flowsteg/perceptual.hpp"
#include "flowsteg/stego.hpp"
#include "flowsteg/transfer.hpp"

namespace flowsteg {

enum class Stage { One, Two, Joint };

std::string to_string(Stage stage);
/// Accepts "1", "2" and "joint".
Stage parse_stage(const std::string& text);

struct TrainConfig {
  Stage stage = Stage::One;
  std::size_t batch = 4;
  std::size_t steps = 200;
  double lr = 1e-4;
  double lambda_c = 1.0;
  double lambda_s = 10.0;
  StegoLossWeights stego_weights;
  double lambda_style_anchor = 1.0;
  TransferMode mode = TransferMode::MeanStd;
  std::uint64_t seed = 0;
  std::uint64_t extractor_seed = kDefaultExtractorSeed;
  /// Styles drawn for pairing; clamped to the number of style images.
  std::size_t n_styles = 10;
  /// Corpus size when no image directories are given.
  std::size_t synth_images = 16;
  FlowConfig flow;
  StegoConfig stego;

  std::size_t image_size() const noexcept { return flow.image_size; }

  /// Throws ConfigError when the combination cannot be trained.
  void validate() const;

  /// Sets one field from its key=value text form. Throws ConfigError on an
  /// unknown key or malformed value.
  void set(const std::string& key, const std::string& value);

  /// Flat key=value text, one field per line in a fixed order.
  std::string serialize() const;

  /// Applies every key=value line of `text` on top of `base`. Blank lines and
  /// lines starting with '#' are ignored.
  static TrainConfig parse(const std::string& text, TrainConfig base);
  static TrainConfig load(const std::string& path, TrainConfig base);
  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::string& path);
};

}  // namespace flowsteg
