#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace tide {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct SparseEntry {
  std::size_t row;
  std::size_t col;
  double value;
};

// Square sparse matrix in coordinate form, entries kept sorted by (row, col)
// with a row index for fast row-wise products.
class SparseMatrix {
 public:
  SparseMatrix() = default;

  // Duplicate (row, col) pairs and non-finite values are rejected.
  SparseMatrix(std::size_t n, std::vector<SparseEntry> entries);

  std::size_t size() const { return n_; }
  std::size_t nnz() const { return entries_.size(); }
  const std::vector<SparseEntry>& entries() const { return entries_; }

  // Value at (row, col), 0 when absent.
  double at(std::size_t row, std::size_t col) const;
  double row_sum(std::size_t row) const;

  // this * dense
  Matrix multiply(const Matrix& dense) const;
  // this^T * dense
  Matrix transpose_multiply(const Matrix& dense) const;

  Matrix to_dense() const;

 private:
  std::size_t n_ = 0;
  std::vector<SparseEntry> entries_;
  std::vector<std::size_t> row_start_;
};

}  // namespace tide
