#include "forms/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "forms/errors.hpp"

namespace forms {

double Matrix::column_norm(std::size_t c) const {
  double s = 0.0;
  for (std::size_t r = 0; r < rows_; ++r) s += (*this)(r, c) * (*this)(r, c);
  return std::sqrt(s);
}

double Matrix::row_norm(std::size_t r) const {
  double s = 0.0;
  for (std::size_t c = 0; c < cols_; ++c) s += (*this)(r, c) * (*this)(r, c);
  return std::sqrt(s);
}

double frobenius_distance(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("frobenius_distance: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  return std::sqrt(s);
}

WeightTensor::WeightTensor(std::string id, std::vector<std::size_t> dims)
    : layer_id(std::move(id)), shape(std::move(dims)) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d == 0) throw ShapeError("weight tensor dims must be >= 1");
    n *= d;
  }
  values.assign(n, 0.0);
}

std::size_t WeightTensor::filter_size() const {
  if (shape.size() < 2) return 1;
  return std::accumulate(shape.begin() + 1, shape.end(), std::size_t{1},
                         std::multiplies<>());
}

Weight2D reshape_conv_to_2d(const WeightTensor& w) {
  if (w.shape.size() != 2 && w.shape.size() != 4)
    throw ShapeError("reshape_conv_to_2d: expected rank 2 or 4, got rank " +
                     std::to_string(w.shape.size()));
  const std::size_t f = w.filters(), k = w.filter_size();
  Weight2D h(k, f);
  for (std::size_t j = 0; j < f; ++j)
    for (std::size_t r = 0; r < k; ++r) h(r, j) = w.values[j * k + r];
  return h;
}

WeightTensor reshape_2d_to_conv(const Weight2D& h, const std::string& layer_id,
                                const std::vector<std::size_t>& shape) {
  WeightTensor w(layer_id, shape);
  if (w.filters() != h.cols() || w.filter_size() != h.rows())
    throw ShapeError("reshape_2d_to_conv: matrix does not match target shape");
  const std::size_t k = h.rows();
  for (std::size_t j = 0; j < h.cols(); ++j)
    for (std::size_t r = 0; r < k; ++r) w.values[j * k + r] = h(r, j);
  return w;
}

}  // namespace forms
