#pragma once

// Dense NCHW tensor of doubles plus the volume-preserving reshapes used by
// the multi-scale flow (squeeze, channel split, batch slicing).

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace cdflow::flow {

struct Shape {
  std::size_t batch = 0, channels = 0, height = 0, width = 0;

  std::size_t spatial() const { return height * width; }
  std::size_t per_sample() const { return channels * height * width; }
  std::size_t size() const { return batch * per_sample(); }
  friend bool operator==(const Shape&, const Shape&) = default;
};

class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Shape s, double fill = 0.0) : shape_(s), data_(s.size(), fill) {}
  Tensor4(std::size_t b, std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : Tensor4(Shape{b, c, h, w}, fill) {}

  const Shape& shape() const { return shape_; }
  std::size_t batch() const { return shape_.batch; }
  std::size_t channels() const { return shape_.channels; }
  std::size_t height() const { return shape_.height; }
  std::size_t width() const { return shape_.width; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t b, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((b * shape_.channels + c) * shape_.height + y) * shape_.width + x];
  }
  double operator()(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((b * shape_.channels + c) * shape_.height + y) * shape_.width + x];
  }

  // One channel plane of one sample.
  std::span<double> plane(std::size_t b, std::size_t c) {
    return {data_.data() + (b * shape_.channels + c) * shape_.spatial(), shape_.spatial()};
  }
  std::span<const double> plane(std::size_t b, std::size_t c) const {
    return {data_.data() + (b * shape_.channels + c) * shape_.spatial(), shape_.spatial()};
  }
  std::span<double> sample(std::size_t b) {
    return {data_.data() + b * shape_.per_sample(), shape_.per_sample()};
  }
  std::span<const double> sample(std::size_t b) const {
    return {data_.data() + b * shape_.per_sample(), shape_.per_sample()};
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  friend bool operator==(const Tensor4&, const Tensor4&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// (B, C, H, W) -> (B, 4C, H/2, W/2). Output channel 4c + 2i + j holds
// position (2y + i, 2x + j) of input channel c.
Tensor4 squeeze(const Tensor4& x);
Tensor4 unsqueeze(const Tensor4& x);

// First k channels and the rest.
std::pair<Tensor4, Tensor4> split_channels(const Tensor4& x, std::size_t k);
Tensor4 concat_channels(const Tensor4& a, const Tensor4& b);

Tensor4 slice_batch(const Tensor4& x, std::size_t begin, std::size_t count);
Tensor4 concat_batch(const std::vector<Tensor4>& parts);

void check_finite(const Tensor4& x);

}  // namespace cdflow::flow
