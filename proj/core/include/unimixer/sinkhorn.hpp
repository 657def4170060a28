#pragma once

#include <cstddef>

#include "unimixer/tensor.hpp"

namespace unimixer {

enum class SinkhornMode {
  // Stop as soon as every row and column sum is within tol of 1 (analysis).
  kConverge,
  // Always run exactly max_iters row/column sweeps (training, gradient checks).
  kFixedDepth,
};

struct ConstraintConfig {
  double tau = 1.0;
  std::size_t max_iters = 100;
  double tol = 1e-6;
  SinkhornMode mode = SinkhornMode::kConverge;

  void validate() const;
};

struct SinkhornResult {
  Matrix matrix;
  bool converged = false;
  std::size_t iterations = 0;
  double max_deviation = 0.0;  // max |row or column sum - 1|
};

struct SparsityStats {
  double row_entropy_mean = 0.0;
  double top1_mass_mean = 0.0;
};

// (w + w^T) / 2
Matrix symmetrize(const Matrix& w);

// Exponentiates w / tau and alternately normalises rows then columns. A
// symmetric input gets a trailing symmetrisation so the output is exactly
// symmetric. Throws RangeError if some |w_ij| / tau exceeds 700.
SinkhornResult sinkhorn_knopp(const Matrix& w, const ConstraintConfig& cfg);

// Max deviation of any row or column sum from 1.
double doubly_stochastic_deviation(const Matrix& m);

SparsityStats sparsity_stats(const Matrix& w);

}  // namespace unimixer
