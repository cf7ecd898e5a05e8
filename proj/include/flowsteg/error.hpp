#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace flowsteg {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor dimensions, channel counts or element counts.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An actnorm scale whose magnitude is too small to invert.
class SingularScale : public Error {
 public:
  using Error::Error;
};

/// An invertible 1x1 convolution whose matrix determinant fell below threshold.
class SingularMatrix : public Error {
 public:
  explicit SingularMatrix(const std::string& what, std::optional<std::size_t> block = {},
                          std::optional<std::size_t> step = {})
      : Error(what), block_(block), step_(step) {}

  std::optional<std::size_t> block() const noexcept { return block_; }
  std::optional<std::size_t> step() const noexcept { return step_; }

 private:
  std::optional<std::size_t> block_;
  std::optional<std::size_t> step_;
};

/// Malformed checkpoint or image file.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what, std::optional<std::size_t> offset = {})
      : Error(offset ? what + " (at byte offset " + std::to_string(*offset) + ")" : what),
        offset_(offset) {}

  std::optional<std::size_t> offset() const noexcept { return offset_; }

 private:
  std::optional<std::size_t> offset_;
};

/// Invalid configuration, missing inputs or mismatched checkpoint structure.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradient during optimization.
class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& what, std::optional<std::size_t> step = {})
      : Error(step ? what + " at step " + std::to_string(*step) : what), step_(step) {}

  std::optional<std::size_t> step() const noexcept { return step_; }

 private:
  std::optional<std::size_t> step_;
};

/// Non-finite analytic or numeric gradient encountered during verification.
class GradientError : public Error {
 public:
  using Error::Error;
};

}  // namespace flowsteg
