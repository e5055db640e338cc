#pragma once

#include <cstddef>
#include <vector>

#include "tokenlens/matrix.hpp"

namespace tokenlens {

/// Thin singular value decomposition A = U * diag(S) * V^T of an m x n
/// matrix with r = min(m, n): U is m x r, V is n x r, S descending.
/// Columns of U and V are orthonormal, including those paired with zero
/// singular values (completed by Gram-Schmidt).
struct Svd {
  Matrix u;
  std::vector<double> singular_values;
  Matrix v;
  std::size_t sweeps = 0;
};

struct SvdOptions {
  std::size_t max_sweeps = 80;
  bool canonicalize = true;
};

/// Householder QR followed by one-sided (Hestenes) Jacobi rotations.
/// Throws Error{numerical} if the rotations do not converge within
/// max_sweeps.
Svd svd(const Matrix& a, const SvdOptions& options = {});

/// Flips each singular pair so the largest-magnitude entry of the left
/// singular vector is positive. Near-ties (within 1e-8 relative) resolve to
/// the lowest row index.
void canonicalize_signs(Svd& decomposition);

/// Reconstructs U * diag(S) * V^T.
Matrix reconstruct(const Svd& decomposition);

}  // namespace tokenlens
