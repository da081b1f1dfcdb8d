#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace forms {

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  double column_norm(std::size_t c) const;
  double row_norm(std::size_t r) const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Frobenius distance between equally shaped matrices.
double frobenius_distance(const Matrix& a, const Matrix& b);

// Conv weights are (F, C, H, W); dense weights are (out, in). Values are
// row-major over the shape, so filter j occupies a contiguous block.
struct WeightTensor {
  std::string layer_id;
  std::vector<std::size_t> shape;
  std::vector<double> values;

  WeightTensor() = default;
  WeightTensor(std::string id, std::vector<std::size_t> dims);

  std::size_t filters() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t filter_size() const;
  std::size_t channels() const { return shape.size() > 1 ? shape[1] : 1; }
  std::size_t height() const { return shape.size() == 4 ? shape[2] : 1; }
  std::size_t width() const { return shape.size() == 4 ? shape[3] : 1; }

  friend bool operator==(const WeightTensor&, const WeightTensor&) = default;
};

// Filter-shape matrix: column j holds filter j, row k holds filter position k
// (k = (c * H + h) * W + w) across all filters.
using Weight2D = Matrix;

Weight2D reshape_conv_to_2d(const WeightTensor& w);
WeightTensor reshape_2d_to_conv(const Weight2D& h, const std::string& layer_id,
                                const std::vector<std::size_t>& shape);

}  // namespace forms
