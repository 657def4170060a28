#include "unimixer/sinkhorn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "unimixer/errors.hpp"

namespace unimixer {

namespace {

constexpr double kMaxExponent = 700.0;

void normalize_rows(Matrix& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    double total = 0.0;
    for (double v : r) total += v;
    for (double& v : r) v /= total;
  }
}

void normalize_cols(Matrix& m) {
  std::vector<double> totals(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) totals[j] += m(i, j);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) /= totals[j];
}

}  // namespace

void ConstraintConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigError("ConstraintConfig: tau must be > 0");
  if (!(tol > 0.0)) throw ConfigError("ConstraintConfig: tol must be > 0");
  if (max_iters < 1) throw ConfigError("ConstraintConfig: max_iters must be >= 1");
}

Matrix symmetrize(const Matrix& w) {
  if (!w.is_square()) throw DimensionError("symmetrize: matrix " + w.shape_string() + " is not square");
  Matrix out(w.rows(), w.cols());
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) out(i, j) = (w(i, j) + w(j, i)) / 2.0;
  return out;
}

double doubly_stochastic_deviation(const Matrix& m) {
  double dev = 0.0;
  std::vector<double> col_totals(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double row_total = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) {
      row_total += m(i, j);
      col_totals[j] += m(i, j);
    }
    dev = std::max(dev, std::abs(row_total - 1.0));
  }
  for (double c : col_totals) dev = std::max(dev, std::abs(c - 1.0));
  return dev;
}

SinkhornResult sinkhorn_knopp(const Matrix& w, const ConstraintConfig& cfg) {
  cfg.validate();
  if (!w.is_square() || w.empty()) {
    throw DimensionError("sinkhorn_knopp: matrix " + w.shape_string() + " must be square and nonempty");
  }
  const double limit = max_abs(w.data()) / cfg.tau;
  if (!(limit <= kMaxExponent)) {
    throw RangeError("sinkhorn_knopp: max |w|/tau = " + std::to_string(limit) +
                     " overflows exp; rescale the weights or raise tau");
  }
  const bool symmetric_input = is_symmetric(w);

  Matrix m(w.rows(), w.cols());
  for (std::size_t i = 0; i < w.size(); ++i) m.data()[i] = std::exp(w.data()[i] / cfg.tau);

  SinkhornResult best;
  best.max_deviation = std::numeric_limits<double>::infinity();
  for (std::size_t iter = 1; iter <= cfg.max_iters; ++iter) {
    normalize_rows(m);
    normalize_cols(m);
    Matrix candidate = symmetric_input ? symmetrize(m) : m;
    const double dev = doubly_stochastic_deviation(candidate);
    const bool done = dev <= cfg.tol;
    if (cfg.mode == SinkhornMode::kFixedDepth) {
      if (iter == cfg.max_iters) return {std::move(candidate), done, iter, dev};
      continue;
    }
    if (dev < best.max_deviation) best = {std::move(candidate), done, iter, dev};
    if (done) return best;
  }
  return best;
}

SparsityStats sparsity_stats(const Matrix& w) {
  if (w.empty()) throw DimensionError("sparsity_stats: empty matrix");
  SparsityStats stats;
  for (std::size_t i = 0; i < w.rows(); ++i) {
    double total = 0.0, entropy = 0.0, top = 0.0;
    for (double v : w.row(i)) {
      total += v;
      if (v > 0.0) entropy -= v * std::log(v);
      top = std::max(top, v);
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw PreconditionError("sparsity_stats: row " + std::to_string(i) + " sums to " + std::to_string(total));
    }
    stats.row_entropy_mean += entropy;
    stats.top1_mass_mean += top;
  }
  stats.row_entropy_mean /= static_cast<double>(w.rows());
  stats.top1_mass_mean /= static_cast<double>(w.rows());
  return stats;
}

}  // namespace unimixer
