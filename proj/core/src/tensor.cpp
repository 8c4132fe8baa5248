#include "automoe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "automoe/errors.hpp"

namespace automoe {

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

Tensor::Tensor(Shape shape, Real fill) : shape_(std::move(shape)), values_(shape_numel(shape_), fill) {
  if (shape_.empty() || shape_.size() > 2) throw DimensionError("tensor rank must be 1 or 2, got " + shape_str(shape_));
}

Tensor::Tensor(Shape shape, std::vector<Real> values) : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_.empty() || shape_.size() > 2) throw DimensionError("tensor rank must be 1 or 2, got " + shape_str(shape_));
  if (values_.size() != shape_numel(shape_)) {
    throw DimensionError("value count " + std::to_string(values_.size()) + " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, Real fill) { return Tensor({rows, cols}, fill); }

Tensor Tensor::vector(std::size_t n, Real fill) { return Tensor({n}, fill); }

Tensor Tensor::scalar(Real v) { return Tensor({1}, v); }

Tensor Tensor::from_rows(const std::vector<std::vector<Real>>& rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows[0].size() : 0;
  Tensor t = matrix(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    if (rows[i].size() != c) throw DimensionError("ragged rows in Tensor::from_rows");
    std::copy(rows[i].begin(), rows[i].end(), t.data() + i * c);
  }
  return t;
}

void Tensor::fill(Real v) { std::fill(values_.begin(), values_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](Real v) { return std::isfinite(v); });
}

bool Tensor::operator==(const Tensor& other) const {
  if (shape_ != other.shape_) return false;
  return values_.empty() || std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(Real)) == 0;
}

Tensor front_block(const Tensor& src, std::size_t rows, std::size_t cols) {
  if (src.rank() == 1) {
    if (rows > src.cols()) throw DimensionError("front slice " + std::to_string(rows) + " exceeds " + shape_str(src.shape()));
    Tensor out = Tensor::vector(rows);
    std::copy_n(src.data(), rows, out.data());
    return out;
  }
  if (rows > src.rows() || cols > src.cols()) {
    throw DimensionError("front block [" + std::to_string(rows) + "x" + std::to_string(cols) + "] exceeds " +
                         shape_str(src.shape()));
  }
  Tensor out = Tensor::matrix(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(src.data() + r * src.cols(), cols, out.data() + r * cols);
  return out;
}

namespace kernels {
namespace {

// C[m×n] += A[m×k] · B[k×n], all row-major and contiguous.
void gemm_nn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
  constexpr std::size_t kBlock = 128;
  for (std::size_t p0 = 0; p0 < k; p0 += kBlock) {
    const std::size_t p1 = std::min(k, p0 + kBlock);
    for (std::size_t i = 0; i < m; ++i) {
      Real* ci = c + i * n;
      const Real* ai = a + i * k;
      for (std::size_t p = p0; p < p1; ++p) {
        const Real aip = ai[p];
        const Real* bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
      }
    }
  }
}

std::vector<Real> transposed(const Real* x, std::size_t rows, std::size_t cols) {
  std::vector<Real> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = x[r * cols + c];
  }
  return t;
}

}  // namespace

void gemm(const Real* a, bool trans_a, const Real* b, bool trans_b, Real* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, Real(0));
  if (m == 0 || n == 0 || k == 0) return;
  std::vector<Real> at, bt;
  if (trans_a) {
    at = transposed(a, k, m);
    a = at.data();
  }
  if (trans_b) {
    bt = transposed(b, n, k);
    b = bt.data();
  }
  gemm_nn(a, b, c, m, k, n);
}

}  // namespace kernels

namespace {
thread_local std::uint64_t t_flops = 0;
thread_local bool t_counting = false;
}  // namespace

FlopCounterScope::FlopCounterScope() : saved_count_(t_flops), saved_enabled_(t_counting) {
  t_flops = 0;
  t_counting = true;
}

FlopCounterScope::~FlopCounterScope() {
  t_flops = saved_count_;
  t_counting = saved_enabled_;
}

std::uint64_t FlopCounterScope::count() const noexcept { return t_flops; }

namespace detail {
void add_matmul_flops(std::uint64_t flops) noexcept {
  if (t_counting) t_flops += flops;
}
}  // namespace detail

}  // namespace automoe
