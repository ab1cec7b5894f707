#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "atsdf/error.hpp"

namespace atsdf {

/// Row-major interleaved image. 8-bit for inputs, float for working buffers.
template <typename T>
class ImageBuffer {
 public:
  ImageBuffer() = default;
  ImageBuffer(int width, int height, int channels, T fill = T{})
      : width_(width), height_(height), channels_(channels) {
    if (width < 0 || height < 0 || channels < 1) {
      throw Error(ErrorCode::kInvalidArgument, "image: bad dimensions");
    }
    data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
  }
  ImageBuffer(int width, int height, int channels, std::vector<T> data)
      : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
    if (data_.size() != static_cast<std::size_t>(width) * height * channels) {
      throw Error(ErrorCode::kInvalidArgument, "image: data length mismatch");
    }
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  bool empty() const noexcept { return data_.empty(); }

  bool contains(int x, int y) const noexcept {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  T& at(int x, int y, int c = 0) noexcept { return data_[index(x, y, c)]; }
  const T& at(int x, int y, int c = 0) const noexcept { return data_[index(x, y, c)]; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;

 private:
  std::size_t index(int x, int y, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 1;
  std::vector<T> data_;
};

using Image8 = ImageBuffer<std::uint8_t>;
using ImageF = ImageBuffer<float>;

/// Bilinear sample at continuous pixel coordinates where pixel (x, y) has its
/// center at (x + 0.5, y + 0.5). Coordinates are clamped to the image.
template <typename T>
double sample_bilinear(const ImageBuffer<T>& img, double u, double v, int c) {
  double fx = u - 0.5;
  double fy = v - 0.5;
  const double max_x = img.width() - 1;
  const double max_y = img.height() - 1;
  fx = fx < 0 ? 0 : (fx > max_x ? max_x : fx);
  fy = fy < 0 ? 0 : (fy > max_y ? max_y : fy);
  const int x0 = static_cast<int>(fx);
  const int y0 = static_cast<int>(fy);
  const int x1 = x0 + 1 < img.width() ? x0 + 1 : x0;
  const int y1 = y0 + 1 < img.height() ? y0 + 1 : y0;
  const double ax = fx - x0;
  const double ay = fy - y0;
  const double top = (1 - ax) * img.at(x0, y0, c) + ax * img.at(x1, y0, c);
  const double bot = (1 - ax) * img.at(x0, y1, c) + ax * img.at(x1, y1, c);
  return (1 - ay) * top + ay * bot;
}

}  // namespace atsdf
