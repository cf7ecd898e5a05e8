#include "flowsteg/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "flowsteg/image_io.hpp"
#include "flowsteg/random.hpp"

namespace flowsteg {

namespace fs = std::filesystem;

std::size_t Corpus::image_size() const {
  if (!content.empty()) return content.front().height();
  if (!style.empty()) return style.front().height();
  return 0;
}

namespace {

// FNV-1a over the shape and pixel bits of a decoded image.
std::uint64_t fingerprint(const Tensor<float>& img) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) h = (h ^ p[i]) * 0x100000001b3ull;
  };
  for (std::size_t d : img.shape()) mix(&d, sizeof d);
  mix(img.data(), img.numel() * sizeof(float));
  return h;
}

std::vector<Tensor<float>> load_dir(const fs::path& dir, std::size_t image_size, std::uint64_t seed,
                                    std::vector<std::uint64_t>& prints) {
  if (!fs::is_directory(dir)) throw ConfigError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  if (files.empty()) throw ConfigError("no images in " + dir.string());
  std::sort(files.begin(), files.end());

  std::vector<Tensor<float>> out;
  for (std::size_t i = 0; i < files.size(); ++i) {
    Tensor<float> img;
    try {
      img = read_png(files[i]);
    } catch (const FormatError& e) {
      std::cerr << "warning: skipping " << files[i].string() << ": " << e.what() << '\n';
      continue;
    }
    prints.push_back(fingerprint(img));
    img = resize_shorter_side(img, 2 * image_size);
    Rng rng(derive_seed(seed, i));
    const std::size_t y0 = rng.index(img.height() - image_size + 1);
    const std::size_t x0 = rng.index(img.width() - image_size + 1);
    out.push_back(crop(img, y0, x0, image_size, image_size));
  }
  if (out.empty()) throw ConfigError("no decodable images in " + dir.string());
  return out;
}

Tensor<float> gradient_image(Rng& rng, std::size_t s) {
  const double theta = rng.uniform(0.0, 6.283185307179586);
  const double dx = std::cos(theta), dy = std::sin(theta);
  double c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = rng.uniform();
    c1[c] = rng.uniform();
  }
  // Projection onto the direction, normalized to [0, 1] over the image corners.
  const double span = (std::abs(dx) + std::abs(dy)) * static_cast<double>(s - 1);
  const double lo = std::min(0.0, dx * (s - 1)) + std::min(0.0, dy * (s - 1));
  Tensor<float> img({1, 3, s, s});
  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t x = 0; x < s; ++x) {
      const double t = std::clamp((dx * x + dy * y - lo) / span, 0.0, 1.0);
      for (std::size_t c = 0; c < 3; ++c) img.at(0, c, y, x) = static_cast<float>(c0[c] + (c1[c] - c0[c]) * t);
    }
  }
  return img;
}

Tensor<float> checker_image(Rng& rng, std::size_t s) {
  const std::size_t cells[] = {4, 8, 16};
  const std::size_t cell = cells[rng.index(3)];
  const std::size_t oy = rng.index(cell), ox = rng.index(cell);
  double a[3], b[3];
  for (int c = 0; c < 3; ++c) {
    a[c] = rng.uniform();
    b[c] = rng.uniform();
  }
  Tensor<float> img({1, 3, s, s});
  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t x = 0; x < s; ++x) {
      const bool on = (((y + oy) / cell) + ((x + ox) / cell)) % 2 == 0;
      for (std::size_t c = 0; c < 3; ++c) img.at(0, c, y, x) = static_cast<float>(on ? a[c] : b[c]);
    }
  }
  return img;
}

Tensor<float> noise_image(Rng& rng, std::size_t s) {
  constexpr int kWaves = 6;
  constexpr double kMaxFreq = 4.0;
  constexpr double kTwoPi = 6.283185307179586;
  Tensor<float> img({1, 3, s, s});
  for (std::size_t c = 0; c < 3; ++c) {
    double fy[kWaves], fx[kWaves], ph[kWaves], amp[kWaves];
    for (int k = 0; k < kWaves; ++k) {
      fy[k] = rng.uniform(-kMaxFreq, kMaxFreq);
      fx[k] = rng.uniform(-kMaxFreq, kMaxFreq);
      ph[k] = rng.uniform(0.0, kTwoPi);
      amp[k] = rng.uniform(0.5, 1.0);
    }
    std::vector<double> v(s * s);
    for (std::size_t y = 0; y < s; ++y) {
      for (std::size_t x = 0; x < s; ++x) {
        double acc = 0.0;
        for (int k = 0; k < kWaves; ++k) {
          acc += amp[k] * std::sin(kTwoPi * (fy[k] * y + fx[k] * x) / static_cast<double>(s) + ph[k]);
        }
        v[y * s + x] = acc;
      }
    }
    const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    const double lo = *mn, range = *mx - *mn;
    float* dst = img.plane(0, c);
    for (std::size_t i = 0; i < v.size(); ++i) {
      dst[i] = range > 0.0 ? static_cast<float>(std::clamp((v[i] - lo) / range, 0.0, 1.0)) : 0.5f;
    }
  }
  return img;
}

}  // namespace

Corpus load_corpus(const fs::path& content_dir, const fs::path& style_dir, std::size_t image_size,
                   std::uint64_t seed) {
  if (image_size == 0) throw ConfigError("image_size must be positive");
  if (fs::exists(content_dir) && fs::exists(style_dir) && fs::equivalent(content_dir, style_dir)) {
    throw ConfigError("content and style directories must differ");
  }
  Corpus corpus;
  std::vector<std::uint64_t> content_prints, style_prints;
  corpus.content = load_dir(content_dir, image_size, derive_seed(seed, 0), content_prints);
  corpus.style = load_dir(style_dir, image_size, derive_seed(seed, 1), style_prints);
  corpus.pairing_seed = seed;
  std::sort(content_prints.begin(), content_prints.end());
  for (std::uint64_t p : style_prints) {
    if (std::binary_search(content_prints.begin(), content_prints.end(), p)) {
      throw ConfigError("content and style sets share an image");
    }
  }
  return corpus;
}

Corpus synth_corpus(std::uint64_t seed, std::size_t n, std::size_t image_size) {
  if (n < 2) throw ConfigError("synth_corpus needs at least 2 images");
  if (image_size < 2) throw ConfigError("image_size must be at least 2");
  Corpus corpus;
  corpus.pairing_seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, i));
    Tensor<float> img;
    switch (i % 3) {
      case 0: img = gradient_image(rng, image_size); break;
      case 1: img = checker_image(rng, image_size); break;
      default: img = noise_image(rng, image_size); break;
    }
    (i < n / 2 ? corpus.content : corpus.style).push_back(std::move(img));
  }
  return corpus;
}

std::vector<StylePair> pair_styles(const Corpus& corpus, std::size_t k, std::uint64_t seed) {
  if (k == 0 || k > corpus.style.size()) {
    throw ConfigError("pair_styles: k=" + std::to_string(k) + " but corpus has " +
                      std::to_string(corpus.style.size()) + " style images");
  }
  Rng rng(seed);
  std::vector<std::size_t> order(corpus.style.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < k; ++i) std::swap(order[i], order[i + rng.index(order.size() - i)]);
  order.resize(k);

  std::vector<StylePair> pairs;
  pairs.reserve(corpus.content.size());
  for (std::size_t c = 0; c < corpus.content.size(); ++c) pairs.push_back({c, order[rng.index(k)]});
  return pairs;
}

}  // namespace flowsteg
