#pragma once

#include <cstddef>
#include <span>

#include "latentdrag/numerics/matrix.hpp"

namespace latentdrag::numerics {

// Principal axes of a sample set. Rows of `components` are orthonormal and
// ordered by decreasing explained variance.
struct PcaBasis {
  Vector mean;                      // P
  Matrix components;                // n x P
  Vector explained_variance;        // n, eigenvalues of the sample covariance
  Vector explained_variance_ratio;  // n, non-increasing, sums to <= 1
  double total_variance = 0.0;
  std::size_t n_samples_fit = 0;

  std::size_t size() const noexcept { return components.rows(); }
  std::size_t dim() const noexcept { return mean.size(); }

  // Leading n components of this basis.
  PcaBasis truncated(std::size_t n) const;
};

// Fits PCA on the rows of `samples` (N x P). Uses the covariance matrix when
// P <= N and the Gram matrix otherwise; components whose eigenvalue is
// numerically zero are completed to an orthonormal set deterministically.
PcaBasis fit_pca(const Matrix& samples, std::size_t n_components);

// coeffs = components * (w - mean)
Vector pca_project(const PcaBasis& basis, std::span<const double> w);

// w = mean + components^T * coeffs
Vector pca_reconstruct(const PcaBasis& basis, std::span<const double> coeffs);

// components * g, the chain rule for a gradient taken w.r.t. the full vector.
Vector pca_pullback(const PcaBasis& basis, std::span<const double> grad_full);

}  // namespace latentdrag::numerics
