#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace unimixer {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles. Entry (i, j) lives at data()[i * cols() + j].
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix constant(std::size_t rows, std::size_t cols, double value) { return Matrix(rows, cols, value); }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool is_square() const noexcept { return rows_ == cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  std::string shape_string() const;

  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Counts scalar multiplications performed by instrumented kernels on the
// current thread while the counter is alive. Counters nest: an inner
// counter's total is added to the enclosing one when it goes out of scope.
class MultiplyCounter {
 public:
  MultiplyCounter();
  ~MultiplyCounter();
  MultiplyCounter(const MultiplyCounter&) = delete;
  MultiplyCounter& operator=(const MultiplyCounter&) = delete;

  std::uint64_t count() const noexcept { return count_; }

  static void record(std::uint64_t multiplies) noexcept;

 private:
  std::uint64_t count_ = 0;
  MultiplyCounter* parent_ = nullptr;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Vector matvec(const Matrix& a, std::span<const double> x);
// Row vector times matrix: x^T * a.
Vector vecmat(std::span<const double> x, const Matrix& a);
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double factor);
Matrix hadamard(const Matrix& a, const Matrix& b);

Vector flatten_row_major(const Matrix& x);
Matrix reshape(std::span<const double> v, std::size_t rows, std::size_t cols);
std::vector<Vector> split_even(std::span<const double> v, std::size_t parts);
Vector concat(const std::vector<Vector>& parts);

Matrix kron(const Matrix& a, const Matrix& b);
// Block (i, j) of the result is g(i, j) * blocks[j]; every block is square with the same side.
Matrix generalized_kron(const Matrix& g, const std::vector<Matrix>& blocks);

Matrix softmax_rows(const Matrix& x);
Vector rms_norm(std::span<const double> v, double eps = 1e-6);
double sigmoid(double x);
double swish(double x);
Vector swish(std::span<const double> v);

double max_abs(std::span<const double> v);
double max_abs_diff(const Matrix& a, const Matrix& b);
double max_abs_diff(std::span<const double> a, std::span<const double> b);
bool all_finite(std::span<const double> v);
bool is_symmetric(const Matrix& a, double tol = 0.0);

}  // namespace unimixer
