#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "automoe/real.hpp"

namespace automoe {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major tensor of rank 1 or 2. Zero-sized extents are legal (an
/// identity expert owns 0×d and d×0 matrices).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0));
  Tensor(Shape shape, std::vector<Real> values);

  static Tensor matrix(std::size_t rows, std::size_t cols, Real fill = Real(0));
  static Tensor vector(std::size_t n, Real fill = Real(0));
  static Tensor scalar(Real v);
  static Tensor from_rows(const std::vector<std::vector<Real>>& rows);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }
  /// A rank-1 tensor is viewed as a single row.
  std::size_t rows() const noexcept { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

  Real* data() noexcept { return values_.data(); }
  const Real* data() const noexcept { return values_.data(); }
  std::span<Real> values() noexcept { return values_; }
  std::span<const Real> values() const noexcept { return values_; }
  std::vector<Real>& storage() noexcept { return values_; }

  Real& operator[](std::size_t i) noexcept { return values_[i]; }
  Real operator[](std::size_t i) const noexcept { return values_[i]; }
  Real& at(std::size_t r, std::size_t c) noexcept { return values_[r * cols() + c]; }
  Real at(std::size_t r, std::size_t c) const noexcept { return values_[r * cols() + c]; }

  void fill(Real v);
  bool all_finite() const;

  /// Bitwise equality of shape and values.
  bool operator==(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<Real> values_;
};

/// Copies the block [0:rows, 0:cols] (rank 2) or [0:rows] (rank 1, cols ignored).
Tensor front_block(const Tensor& src, std::size_t rows, std::size_t cols);

namespace kernels {

/// C[m×n] (+)= op(A) · op(B) where op(X) is X or Xᵀ. Sequential; results do not
/// depend on thread count.
void gemm(const Real* a, bool trans_a, const Real* b, bool trans_b, Real* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate);

}  // namespace kernels

/// Thread-local counter of multiply-accumulate FLOPs (2 per MAC) issued by
/// forward matmul-like ops while a FlopCounterScope is alive.
class FlopCounterScope {
 public:
  FlopCounterScope();
  ~FlopCounterScope();
  FlopCounterScope(const FlopCounterScope&) = delete;
  FlopCounterScope& operator=(const FlopCounterScope&) = delete;

  std::uint64_t count() const noexcept;

 private:
  std::uint64_t saved_count_;
  bool saved_enabled_;
};

namespace detail {
void add_matmul_flops(std::uint64_t flops) noexcept;
}

}  // namespace automoe
