#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "srank/error.hpp"

namespace srank {

// T x d row-major matrix of per-token activations. Row i is token i.
// Immutable after construction; every entry is finite.
class HiddenMatrix {
 public:
  HiddenMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows_ == 0 || cols_ == 0) {
      throw ArgumentError("hidden matrix needs at least one row and column");
    }
    if (data_.size() != rows_ * cols_) {
      throw ArgumentError("hidden matrix data has " +
                          std::to_string(data_.size()) + " values, shape needs " +
                          std::to_string(rows_ * cols_));
    }
    for (std::size_t k = 0; k < data_.size(); ++k) {
      if (!std::isfinite(data_[k])) {
        throw InputDomainError("non-finite entry at row " +
                               std::to_string(k / cols_) + ", col " +
                               std::to_string(k % cols_));
      }
    }
  }

  static HiddenMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw ArgumentError("no rows");
    const std::size_t d = rows.front().size();
    std::vector<double> data;
    data.reserve(rows.size() * d);
    for (const auto& r : rows) {
      if (r.size() != d) throw ArgumentError("ragged rows");
      data.insert(data.end(), r.begin(), r.end());
    }
    return {rows.size(), d, std::move(data)};
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t min_dim() const noexcept { return rows_ < cols_ ? rows_ : cols_; }

  double operator()(std::size_t i, std::size_t j) const noexcept {
    return data_[i * cols_ + j];
  }
  std::span<const double> row(std::size_t i) const noexcept {
    return {data_.data() + i * cols_, cols_};
  }
  std::span<const double> data() const noexcept { return data_; }

  bool is_zero() const noexcept {
    for (double v : data_) {
      if (v != 0.0) return false;
    }
    return true;
  }

  friend bool operator==(const HiddenMatrix&, const HiddenMatrix&) = default;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> data_;
};

}  // namespace srank
