#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "cascadelab/error.hpp"

namespace cascadelab {

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  Matrix select_rows(std::span<const std::size_t> which) const {
    Matrix out(which.size(), cols);
    for (std::size_t r = 0; r < which.size(); ++r) {
      if (which[r] >= rows) throw DimensionError("Matrix::select_rows: row index out of range");
      const auto src = row(which[r]);
      std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
  }

  Matrix select_cols(std::span<const std::size_t> which) const {
    Matrix out(rows, which.size());
    for (std::size_t c = 0; c < which.size(); ++c) {
      if (which[c] >= cols) throw DimensionError("Matrix::select_cols: column index out of range");
    }
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < which.size(); ++c) out(r, c) = (*this)(r, which[c]);
    }
    return out;
  }

  /// Rows of `other` appended below this matrix.
  void append_rows(const Matrix& other) {
    if (rows == 0 && cols == 0) cols = other.cols;
    if (other.rows > 0 && other.cols != cols) throw DimensionError("Matrix::append_rows: column count mismatch");
    data.insert(data.end(), other.data.begin(), other.data.end());
    rows += other.rows;
  }
};

}  // namespace cascadelab
