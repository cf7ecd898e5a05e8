#include "flowsteg/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

namespace flowsteg {

namespace {

void require_image(const Tensor<float>& image, const char* what) {
  if (image.rank() != 4 || image.batch() < 1 || image.channels() != 3) {
    throw ShapeError(std::string(what) + ": expected a (N, 3, H, W) image, got " + shape_str(image.shape()));
  }
}

std::uint8_t to_byte(float v) {
  const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(c * 255.0 + 0.5));
}

}  // namespace

Tensor<float> read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw FormatError("cannot decode " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw FormatError("cannot decode " + path.string() + ": " + msg);
  }
  const std::size_t h = img.height, w = img.width;
  Tensor<float> out({1, 3, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) out.at(0, c, y, x) = static_cast<float>(buf[(y * w + x) * 3 + c]) / 255.0f;
    }
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Tensor<float>& image) {
  require_image(image, "write_png");
  const std::size_t h = image.height(), w = image.width();
  std::vector<std::uint8_t> buf(h * w * 3);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) buf[(y * w + x) * 3 + c] = to_byte(image.at(0, c, y, x));
    }
  }
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw Error("cannot write " + path.string() + ": " + img.message);
  }
}

Tensor<float> quantize_8bit(const Tensor<float>& image) {
  Tensor<float> out = image;
  for (auto& v : out.values()) v = static_cast<float>(to_byte(v)) / 255.0f;
  return out;
}

Tensor<float> resize_bilinear(const Tensor<float>& image, std::size_t height, std::size_t width) {
  if (image.rank() != 4 || height == 0 || width == 0) {
    throw ShapeError("resize_bilinear: bad request for " + shape_str(image.shape()));
  }
  const std::size_t ih = image.height(), iw = image.width();
  const double sy = static_cast<double>(ih) / static_cast<double>(height);
  const double sx = static_cast<double>(iw) / static_cast<double>(width);

  struct Tap {
    std::size_t i0, i1;
    double frac;
  };
  auto taps = [](std::size_t n_out, std::size_t n_in, double s) {
    std::vector<Tap> t(n_out);
    for (std::size_t o = 0; o < n_out; ++o) {
      const double src = std::clamp((static_cast<double>(o) + 0.5) * s - 0.5, 0.0, static_cast<double>(n_in - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(src));
      t[o] = {i0, std::min(i0 + 1, n_in - 1), src - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(height, ih, sy);
  const auto tx = taps(width, iw, sx);

  Tensor<float> out({image.batch(), image.channels(), height, width});
  for (std::size_t n = 0; n < image.batch(); ++n) {
    for (std::size_t c = 0; c < image.channels(); ++c) {
      const float* src = image.plane(n, c);
      float* dst = out.plane(n, c);
      for (std::size_t y = 0; y < height; ++y) {
        const float* r0 = src + ty[y].i0 * iw;
        const float* r1 = src + ty[y].i1 * iw;
        for (std::size_t x = 0; x < width; ++x) {
          const double top = r0[tx[x].i0] + tx[x].frac * (r0[tx[x].i1] - r0[tx[x].i0]);
          const double bot = r1[tx[x].i0] + tx[x].frac * (r1[tx[x].i1] - r1[tx[x].i0]);
          dst[y * width + x] = static_cast<float>(top + ty[y].frac * (bot - top));
        }
      }
    }
  }
  return out;
}

Tensor<float> resize_shorter_side(const Tensor<float>& image, std::size_t target) {
  if (image.rank() != 4) throw ShapeError("resize_shorter_side: expected rank-4 image");
  const std::size_t h = image.height(), w = image.width();
  const std::size_t shorter = std::min(h, w);
  auto scaled = [&](std::size_t n) {
    return std::max<std::size_t>(target, static_cast<std::size_t>(std::llround(static_cast<double>(n) * target / shorter)));
  };
  return resize_bilinear(image, h == shorter ? target : scaled(h), w == shorter ? target : scaled(w));
}

Tensor<float> crop(const Tensor<float>& image, std::size_t y0, std::size_t x0, std::size_t height, std::size_t width) {
  if (image.rank() != 4 || y0 + height > image.height() || x0 + width > image.width()) {
    throw ShapeError("crop: window out of bounds for " + shape_str(image.shape()));
  }
  Tensor<float> out({image.batch(), image.channels(), height, width});
  for (std::size_t n = 0; n < image.batch(); ++n) {
    for (std::size_t c = 0; c < image.channels(); ++c) {
      for (std::size_t y = 0; y < height; ++y) {
        const float* src = image.plane(n, c) + (y0 + y) * image.width() + x0;
        std::copy(src, src + width, out.plane(n, c) + y * width);
      }
    }
  }
  return out;
}

Tensor<float> center_crop(const Tensor<float>& image, std::size_t size) {
  if (image.rank() != 4 || image.height() < size || image.width() < size) {
    throw ShapeError("center_crop: image " + shape_str(image.shape()) + " smaller than " + std::to_string(size));
  }
  return crop(image, (image.height() - size) / 2, (image.width() - size) / 2, size, size);
}

}  // namespace flowsteg
