#include "tide/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tide/errors.hpp"

namespace tide {

SparseMatrix::SparseMatrix(std::size_t n, std::vector<SparseEntry> entries)
    : n_(n), entries_(std::move(entries)) {
  std::sort(entries_.begin(), entries_.end(), [](const SparseEntry& a, const SparseEntry& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  row_start_.assign(n_ + 1, 0);
  for (std::size_t k = 0; k < entries_.size(); ++k) {
    const auto& e = entries_[k];
    if (e.row >= n_ || e.col >= n_) {
      throw ShapeError("sparse entry (" + std::to_string(e.row) + ", " + std::to_string(e.col) +
                       ") outside " + std::to_string(n_) + "x" + std::to_string(n_));
    }
    if (!std::isfinite(e.value)) throw NumericError("sparse entry value is not finite");
    if (k > 0 && entries_[k - 1].row == e.row && entries_[k - 1].col == e.col) {
      throw ContractError("duplicate sparse entry (" + std::to_string(e.row) + ", " +
                          std::to_string(e.col) + ")");
    }
    ++row_start_[e.row + 1];
  }
  for (std::size_t r = 0; r < n_; ++r) row_start_[r + 1] += row_start_[r];
}

double SparseMatrix::at(std::size_t row, std::size_t col) const {
  if (row >= n_) return 0.0;
  auto first = entries_.begin() + static_cast<std::ptrdiff_t>(row_start_[row]);
  auto last = entries_.begin() + static_cast<std::ptrdiff_t>(row_start_[row + 1]);
  auto it = std::lower_bound(first, last, col,
                             [](const SparseEntry& e, std::size_t c) { return e.col < c; });
  return (it != last && it->col == col) ? it->value : 0.0;
}

double SparseMatrix::row_sum(std::size_t row) const {
  double s = 0.0;
  for (std::size_t k = row_start_[row]; k < row_start_[row + 1]; ++k) s += entries_[k].value;
  return s;
}

Matrix SparseMatrix::multiply(const Matrix& dense) const {
  if (static_cast<std::size_t>(dense.rows()) != n_) {
    throw ShapeError("sparse multiply: " + std::to_string(n_) + "x" + std::to_string(n_) +
                     " vs " + std::to_string(dense.rows()) + "x" + std::to_string(dense.cols()));
  }
  Matrix out = Matrix::Zero(dense.rows(), dense.cols());
  for (std::size_t r = 0; r < n_; ++r) {
    for (std::size_t k = row_start_[r]; k < row_start_[r + 1]; ++k) {
      const auto& e = entries_[k];
      out.row(static_cast<Eigen::Index>(r)) += e.value * dense.row(static_cast<Eigen::Index>(e.col));
    }
  }
  return out;
}

Matrix SparseMatrix::transpose_multiply(const Matrix& dense) const {
  if (static_cast<std::size_t>(dense.rows()) != n_) {
    throw ShapeError("sparse transpose multiply: " + std::to_string(n_) + "x" +
                     std::to_string(n_) + " vs " + std::to_string(dense.rows()) + "x" +
                     std::to_string(dense.cols()));
  }
  Matrix out = Matrix::Zero(dense.rows(), dense.cols());
  for (const auto& e : entries_) {
    out.row(static_cast<Eigen::Index>(e.col)) += e.value * dense.row(static_cast<Eigen::Index>(e.row));
  }
  return out;
}

Matrix SparseMatrix::to_dense() const {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(n_));
  for (const auto& e : entries_) {
    out(static_cast<Eigen::Index>(e.row), static_cast<Eigen::Index>(e.col)) = e.value;
  }
  return out;
}

}  // namespace tide
