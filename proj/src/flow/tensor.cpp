#include "cdflow/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "cdflow/error.hpp"

namespace cdflow::flow {

Tensor4 squeeze(const Tensor4& x) {
  const Shape& s = x.shape();
  if (s.height % 2 != 0 || s.width % 2 != 0)
    throw DimensionError("squeeze: height and width must be even");
  Tensor4 y(s.batch, 4 * s.channels, s.height / 2, s.width / 2);
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t c = 0; c < s.channels; ++c)
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j)
          for (std::size_t yy = 0; yy < s.height / 2; ++yy)
            for (std::size_t xx = 0; xx < s.width / 2; ++xx)
              y(b, 4 * c + 2 * i + j, yy, xx) = x(b, c, 2 * yy + i, 2 * xx + j);
  return y;
}

Tensor4 unsqueeze(const Tensor4& x) {
  const Shape& s = x.shape();
  if (s.channels % 4 != 0) throw DimensionError("unsqueeze: channels must be a multiple of 4");
  Tensor4 y(s.batch, s.channels / 4, s.height * 2, s.width * 2);
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t c = 0; c < s.channels / 4; ++c)
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j)
          for (std::size_t yy = 0; yy < s.height; ++yy)
            for (std::size_t xx = 0; xx < s.width; ++xx)
              y(b, c, 2 * yy + i, 2 * xx + j) = x(b, 4 * c + 2 * i + j, yy, xx);
  return y;
}

std::pair<Tensor4, Tensor4> split_channels(const Tensor4& x, std::size_t k) {
  const Shape& s = x.shape();
  if (k > s.channels) throw DimensionError("split_channels: k exceeds channel count");
  Tensor4 a(s.batch, k, s.height, s.width);
  Tensor4 r(s.batch, s.channels - k, s.height, s.width);
  const std::size_t hw = s.spatial();
  for (std::size_t b = 0; b < s.batch; ++b) {
    const auto src = x.sample(b);
    std::copy_n(src.begin(), k * hw, a.sample(b).begin());
    std::copy(src.begin() + k * hw, src.end(), r.sample(b).begin());
  }
  return {std::move(a), std::move(r)};
}

Tensor4 concat_channels(const Tensor4& a, const Tensor4& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.batch != sb.batch || sa.height != sb.height || sa.width != sb.width)
    throw DimensionError("concat_channels: shape mismatch");
  Tensor4 y(sa.batch, sa.channels + sb.channels, sa.height, sa.width);
  for (std::size_t i = 0; i < sa.batch; ++i) {
    auto dst = y.sample(i);
    const auto pa = a.sample(i);
    std::copy(pa.begin(), pa.end(), dst.begin());
    const auto pb = b.sample(i);
    std::copy(pb.begin(), pb.end(), dst.begin() + pa.size());
  }
  return y;
}

Tensor4 slice_batch(const Tensor4& x, std::size_t begin, std::size_t count) {
  if (begin + count > x.batch()) throw DimensionError("slice_batch: range out of bounds");
  Shape s = x.shape();
  s.batch = count;
  Tensor4 y(s);
  const auto src = x.data().subspan(begin * s.per_sample(), count * s.per_sample());
  std::copy(src.begin(), src.end(), y.data().begin());
  return y;
}

Tensor4 concat_batch(const std::vector<Tensor4>& parts) {
  if (parts.empty()) return {};
  Shape s = parts.front().shape();
  s.batch = 0;
  for (const auto& p : parts) {
    Shape q = p.shape();
    if (q.channels != s.channels || q.height != s.height || q.width != s.width)
      throw DimensionError("concat_batch: shape mismatch");
    s.batch += q.batch;
  }
  Tensor4 y(s);
  auto out = y.data().begin();
  for (const auto& p : parts) out = std::copy(p.data().begin(), p.data().end(), out);
  return y;
}

void check_finite(const Tensor4& x) {
  for (double v : x.data())
    if (!std::isfinite(v)) throw NonFiniteError();
}

}  // namespace cdflow::flow
