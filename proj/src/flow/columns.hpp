#pragma once

// Conversions between NCHW tensors and channel-by-position matrices, where
// column p = b * H * W + y * W + x holds one position's channel vector.

#include <Eigen/Dense>

#include "cdflow/structured.hpp"
#include "cdflow/tensor.hpp"

namespace cdflow::flow::detail {

using MatrixX = Eigen::MatrixXd;
using RowMatrixX = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Channels [c0, c0 + count) of x.
inline MatrixX channel_matrix(const Tensor4& x, std::size_t c0, std::size_t count) {
  const std::size_t hw = x.shape().spatial();
  MatrixX m(count, x.batch() * hw);
  for (std::size_t b = 0; b < x.batch(); ++b)
    for (std::size_t c = 0; c < count; ++c) {
      const auto p = x.plane(b, c0 + c);
      for (std::size_t i = 0; i < hw; ++i) m(c, b * hw + i) = p[i];
    }
  return m;
}

inline void write_channels(const MatrixX& m, Tensor4& x, std::size_t c0) {
  const std::size_t hw = x.shape().spatial();
  for (std::size_t b = 0; b < x.batch(); ++b)
    for (std::size_t c = 0; c < static_cast<std::size_t>(m.rows()); ++c) {
      auto p = x.plane(b, c0 + c);
      for (std::size_t i = 0; i < hw; ++i) p[i] = m(c, b * hw + i);
    }
}

inline structured::ColumnBatch to_columns(const Tensor4& x) {
  const std::size_t hw = x.shape().spatial();
  structured::ColumnBatch cols(x.channels(), x.batch() * hw);
  for (std::size_t b = 0; b < x.batch(); ++b)
    for (std::size_t c = 0; c < x.channels(); ++c) {
      const auto p = x.plane(b, c);
      for (std::size_t i = 0; i < hw; ++i) cols(c, b * hw + i) = p[i];
    }
  return cols;
}

inline Tensor4 from_columns(const structured::ColumnBatch& cols, const Shape& s) {
  Tensor4 x(s);
  const std::size_t hw = s.spatial();
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t c = 0; c < s.channels; ++c) {
      auto p = x.plane(b, c);
      for (std::size_t i = 0; i < hw; ++i) p[i] = cols(c, b * hw + i);
    }
  return x;
}

inline Eigen::Map<const MatrixX> view(const structured::ColumnBatch& c) {
  return {c.data().data(), static_cast<Eigen::Index>(c.rows()),
          static_cast<Eigen::Index>(c.cols())};
}

}  // namespace cdflow::flow::detail
