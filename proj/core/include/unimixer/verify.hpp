#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace unimixer {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

// Worked TokenMixer example: T = H = 2, D = 6, X = 1..12. Checks the mixed
// output, the permutation matrix and its kron(G, I_3) factorisation exactly.
CheckResult check_tokenmixer_fixture();
// Random X with T = H in {2, 4, 8}: permutation matrix, UniMixing with the
// recovered G and identity locals, and token_mixer all agree bit for bit.
CheckResult check_tokenmixer_random(std::size_t trials, std::uint64_t seed);
// Doubly stochastic, one nonzero per row and column, Kronecker factorisation
// and symmetric exactly when T == H, over a grid of (T, D, H).
CheckResult check_perm_properties();
// Optimised UniMixing against the explicit generalized-Kronecker product.
CheckResult check_pipeline_equivalence(std::size_t trials, std::uint64_t seed, double tol);
// Instrumented multiply counts against L^2 and L^2/B + L B.
CheckResult check_complexity();
// Row and column sums, symmetry preservation and temperature sharpening.
CheckResult check_sinkhorn(std::uint64_t seed);
// Value projection, attention-to-FM identity and the unified dispatcher.
CheckResult check_degeneracies(std::uint64_t seed, double tol);
// Finite differences through a two-block UniMixer-Lite at each temperature.
CheckResult check_gradients(const std::vector<double>& taus, std::size_t samples, double eps, double tol);
// Zero-block SiameseNorm step and activation RMS of an eight-block stack.
CheckResult check_siamese(std::size_t seeds);

std::vector<CheckResult> run_all_checks(std::uint64_t seed);

}  // namespace unimixer
