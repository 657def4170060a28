#include "unimixer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "unimixer/errors.hpp"

namespace unimixer {

namespace {

thread_local MultiplyCounter* active_counter = nullptr;

std::string shape_of(std::size_t rows, std::size_t cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw DimensionError("Matrix: " + std::to_string(data_.size()) + " entries cannot fill " + shape_of(rows, cols));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("Matrix: ragged initializer rows");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

std::string Matrix::shape_string() const { return shape_of(rows_, cols_); }

MultiplyCounter::MultiplyCounter() : parent_(active_counter) { active_counter = this; }

MultiplyCounter::~MultiplyCounter() {
  active_counter = parent_;
  if (parent_ != nullptr) parent_->count_ += count_;
}

void MultiplyCounter::record(std::uint64_t multiplies) noexcept {
  if (active_counter != nullptr) active_counter->count_ += multiplies;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: cannot multiply " + a.shape_string() + " by " + b.shape_string());
  }
  Matrix out(a.rows(), b.cols());
  const std::size_t n = a.rows(), k_dim = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double* out_row = out.data().data() + i * m;
    for (std::size_t k = 0; k < k_dim; ++k) {
      const double aik = a(i, k);
      const double* b_row = b.data().data() + k * m;
      for (std::size_t j = 0; j < m; ++j) out_row[j] += aik * b_row[j];
    }
  }
  MultiplyCounter::record(static_cast<std::uint64_t>(n) * k_dim * m);
  return out;
}

Vector matvec(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) {
    throw DimensionError("matvec: cannot multiply " + a.shape_string() + " by vector of length " +
                         std::to_string(x.size()));
  }
  Vector out(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto r = a.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) acc += r[j] * x[j];
    out[i] = acc;
  }
  MultiplyCounter::record(static_cast<std::uint64_t>(a.rows()) * a.cols());
  return out;
}

Vector vecmat(std::span<const double> x, const Matrix& a) {
  if (a.rows() != x.size()) {
    throw DimensionError("vecmat: cannot multiply vector of length " + std::to_string(x.size()) + " by " +
                         a.shape_string());
  }
  Vector out(a.cols(), 0.0);
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const auto r = a.row(k);
    for (std::size_t j = 0; j < r.size(); ++j) out[j] += x[k] * r[j];
  }
  MultiplyCounter::record(static_cast<std::uint64_t>(a.rows()) * a.cols());
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
  return out;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "subtract");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
  return out;
}

Matrix scale(const Matrix& a, double factor) {
  Matrix out = a;
  for (double& v : out.data()) v *= factor;
  return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "hadamard");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.data()[i];
  return out;
}

Vector flatten_row_major(const Matrix& x) { return x.data(); }

Matrix reshape(std::span<const double> v, std::size_t rows, std::size_t cols) {
  if (v.size() != rows * cols) {
    throw DimensionError("reshape: vector of length " + std::to_string(v.size()) + " cannot become " +
                         shape_of(rows, cols));
  }
  return Matrix(rows, cols, std::vector<double>(v.begin(), v.end()));
}

std::vector<Vector> split_even(std::span<const double> v, std::size_t parts) {
  if (parts == 0 || v.size() % parts != 0) {
    throw DimensionError("split_even: length " + std::to_string(v.size()) + " is not divisible into " +
                         std::to_string(parts) + " parts");
  }
  const std::size_t chunk = v.size() / parts;
  std::vector<Vector> out;
  out.reserve(parts);
  for (std::size_t p = 0; p < parts; ++p) {
    out.emplace_back(v.begin() + static_cast<std::ptrdiff_t>(p * chunk),
                     v.begin() + static_cast<std::ptrdiff_t>((p + 1) * chunk));
  }
  return out;
}

Vector concat(const std::vector<Vector>& parts) {
  Vector out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double aij = a(i, j);
      for (std::size_t p = 0; p < b.rows(); ++p)
        for (std::size_t q = 0; q < b.cols(); ++q) out(i * b.rows() + p, j * b.cols() + q) = aij * b(p, q);
    }
  return out;
}

Matrix generalized_kron(const Matrix& g, const std::vector<Matrix>& blocks) {
  if (!g.is_square() || g.rows() != blocks.size()) {
    throw DimensionError("generalized_kron: global matrix " + g.shape_string() + " needs " +
                         std::to_string(g.rows()) + " blocks, got " + std::to_string(blocks.size()));
  }
  if (blocks.empty()) return Matrix();
  const std::size_t side = blocks.front().rows();
  for (const auto& blk : blocks) {
    if (blk.rows() != side || blk.cols() != side) {
      throw DimensionError("generalized_kron: ragged block " + blk.shape_string() + ", expected " +
                           shape_of(side, side));
    }
  }
  const std::size_t n = g.rows();
  Matrix out(n * side, n * side);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double gij = g(i, j);
      const Matrix& blk = blocks[j];
      for (std::size_t p = 0; p < side; ++p)
        for (std::size_t q = 0; q < side; ++q) out(i * side + p, j * side + q) = gij * blk(p, q);
    }
  return out;
}

Matrix softmax_rows(const Matrix& x) {
  if (x.empty()) throw DimensionError("softmax_rows: empty input");
  Matrix out = x;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    const double m = *std::max_element(r.begin(), r.end());
    double total = 0.0;
    for (double& v : r) {
      v = std::exp(v - m);
      total += v;
    }
    for (double& v : r) v /= total;
  }
  return out;
}

Vector rms_norm(std::span<const double> v, double eps) {
  if (v.empty()) throw DimensionError("rms_norm: empty input");
  if (!(eps > 0.0)) throw PreconditionError("rms_norm: eps must be positive");
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double inv = 1.0 / std::sqrt(sq / static_cast<double>(v.size()) + eps);
  Vector out(v.begin(), v.end());
  for (double& x : out) x *= inv;
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double swish(double x) { return x * sigmoid(x); }

Vector swish(std::span<const double> v) {
  if (v.empty()) throw DimensionError("swish: empty input");
  Vector out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), [](double x) { return swish(x); });
  return out;
}

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  return max_abs_diff(std::span<const double>(a.data()), std::span<const double>(b.data()));
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("max_abs_diff: length mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

bool is_symmetric(const Matrix& a, double tol) {
  if (!a.is_square()) return false;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j)
      if (std::abs(a(i, j) - a(j, i)) > tol) return false;
  return true;
}

}  // namespace unimixer
