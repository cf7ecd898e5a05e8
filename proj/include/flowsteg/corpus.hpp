#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "flowsteg/tensor.hpp"

namespace flowsteg {

/// Training images, each (1, 3, S, S) in [0, 1].
struct Corpus {
  std::vector<Tensor<float>> content;
  std::vector<Tensor<float>> style;
  std::uint64_t pairing_seed = 0;

  std::size_t image_size() const;
};

/// Loads every decodable image in both directories (sorted by file name),
/// resizes the shorter side to 2 * image_size and takes a seeded random
/// image_size x image_size crop. Undecodable files are skipped with a warning.
/// Throws ConfigError on an empty or fully undecodable directory, or when the
/// two sets share an image.
Corpus load_corpus(const std::filesystem::path& content_dir, const std::filesystem::path& style_dir,
                   std::size_t image_size, std::uint64_t seed);

/// Procedural images cycling through linear gradients, checkerboards and
/// band-limited noise. The first n/2 become content, the rest style.
Corpus synth_corpus(std::uint64_t seed, std::size_t n, std::size_t image_size);

struct StylePair {
  std::size_t content;
  std::size_t style;
};

/// Samples k distinct styles once, then pairs every content image with one of
/// them uniformly at random.
std::vector<StylePair> pair_styles(const Corpus& corpus, std::size_t k, std::uint64_t seed);

}  // namespace flowsteg
