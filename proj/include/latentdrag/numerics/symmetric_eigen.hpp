#pragma once

#include "latentdrag/numerics/matrix.hpp"

namespace latentdrag::numerics {

struct SymmetricEigen {
  Vector values;   // descending
  Matrix vectors;  // row k is the unit eigenvector for values[k]
};

// Eigendecomposition of a real symmetric matrix by Householder reduction to
// tridiagonal form followed by implicit QL iterations. Fully deterministic.
// Eigenvectors follow the sign convention: largest-magnitude entry positive
// (first such entry on exact ties).
SymmetricEigen symmetric_eigen(const Matrix& a);

// Flips v in place so its largest-magnitude entry is positive.
void canonicalize_sign(std::span<double> v) noexcept;

}  // namespace latentdrag::numerics
