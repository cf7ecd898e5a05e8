#pragma once

#include <cstddef>
#include <filesystem>

#include "flowsteg/tensor.hpp"

namespace flowsteg {

/// 8-bit PNG as a (1, 3, H, W) tensor in [0, 1]. Grey, palette and alpha
/// images are converted to RGB. Throws FormatError on undecodable input.
Tensor<float> read_png(const std::filesystem::path& path);

/// Writes sample 0 of a 3-channel image as 8-bit RGB PNG. Values are clamped
/// to [0, 1] and rounded half-up.
void write_png(const std::filesystem::path& path, const Tensor<float>& image);

/// The values write_png followed by read_png would produce.
Tensor<float> quantize_8bit(const Tensor<float>& image);

/// Bilinear resampling with half-pixel centres.
Tensor<float> resize_bilinear(const Tensor<float>& image, std::size_t height, std::size_t width);

/// Resizes so the shorter side equals `target`, keeping the aspect ratio.
Tensor<float> resize_shorter_side(const Tensor<float>& image, std::size_t target);

Tensor<float> crop(const Tensor<float>& image, std::size_t y0, std::size_t x0, std::size_t height, std::size_t width);

Tensor<float> center_crop(const Tensor<float>& image, std::size_t size);

}  // namespace flowsteg
