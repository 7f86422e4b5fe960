#include "latentdrag/numerics/pca.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "latentdrag/error.hpp"
#include "latentdrag/numerics/symmetric_eigen.hpp"

namespace latentdrag::numerics {

namespace {

constexpr double kMinTotalVariance = 1e-12;

// Gram-Schmidt completion: fills rows [start, n) of `basis` with unit vectors
// orthogonal to every earlier row, drawn from the canonical axes in order. The
// mean squared residual of the axes is (dim - r) / dim, so some axis always
// clears half of its root.
void complete_basis(Matrix& basis, std::size_t start) {
  const std::size_t dim = basis.cols();
  std::size_t axis = 0;
  for (std::size_t r = start; r < basis.rows(); ++r) {
    for (;; ++axis) {
      if (axis >= dim) throw Error(ErrorCode::BadShape, "cannot complete basis beyond dimension");
      Vector cand(dim, 0.0);
      cand[axis] = 1.0;
      // Two passes keep the result orthogonal to machine precision.
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t q = 0; q < r; ++q) axpy(-dot(cand, basis.row(q)), basis.row(q), cand);
      }
      const double nrm = norm2(cand);
      const double accept = 0.5 * std::sqrt(static_cast<double>(dim - r) / static_cast<double>(dim));
      if (nrm > accept) {
        for (double& x : cand) x /= nrm;
        canonicalize_sign(cand);
        std::copy(cand.begin(), cand.end(), basis.row(r).begin());
        ++axis;
        break;
      }
    }
  }
}

}  // namespace

PcaBasis PcaBasis::truncated(std::size_t n) const {
  if (n > size()) throw Error(ErrorCode::BadShape, "truncation larger than basis");
  PcaBasis out;
  out.mean = mean;
  out.components = Matrix(n, dim());
  for (std::size_t k = 0; k < n; ++k) {
    std::copy_n(components.row(k).begin(), dim(), out.components.row(k).begin());
  }
  out.explained_variance.assign(explained_variance.begin(), explained_variance.begin() + n);
  out.explained_variance_ratio.assign(explained_variance_ratio.begin(),
                                      explained_variance_ratio.begin() + n);
  out.total_variance = total_variance;
  out.n_samples_fit = n_samples_fit;
  return out;
}

PcaBasis fit_pca(const Matrix& samples, std::size_t n_components) {
  const std::size_t n = samples.rows();
  const std::size_t p = samples.cols();
  if (n < 2) throw Error(ErrorCode::BadShape, "fit_pca needs at least 2 samples");
  if (n_components == 0 || n_components > std::min(n, p)) {
    throw Error(ErrorCode::BadShape, "n_components=" + std::to_string(n_components) +
                                         " must be in [1, min(N, P)=" +
                                         std::to_string(std::min(n, p)) + "]");
  }

  PcaBasis basis;
  basis.n_samples_fit = n;
  basis.mean.assign(p, 0.0);
  for (std::size_t i = 0; i < n; ++i) axpy(1.0, samples.row(i), basis.mean);
  for (double& m : basis.mean) m /= static_cast<double>(n);

  Matrix centered(n, p);
  double sumsq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto src = samples.row(i);
    auto dst = centered.row(i);
    for (std::size_t j = 0; j < p; ++j) {
      dst[j] = src[j] - basis.mean[j];
      sumsq += dst[j] * dst[j];
    }
  }
  const double denom = static_cast<double>(n - 1);
  basis.total_variance = sumsq / denom;
  if (!(basis.total_variance > kMinTotalVariance)) {
    throw Error(ErrorCode::DegenerateData, "total sample variance below threshold");
  }

  basis.components = Matrix(n_components, p);
  basis.explained_variance.assign(n_components, 0.0);
  std::size_t valid = n_components;

  if (p <= n) {
    Matrix cov(p, p);
    for (std::size_t i = 0; i < n; ++i) {
      auto x = centered.row(i);
      for (std::size_t a = 0; a < p; ++a) {
        const double xa = x[a];
        if (xa == 0.0) continue;
        auto row = cov.row(a);
        for (std::size_t b = a; b < p; ++b) row[b] += xa * x[b];
      }
    }
    for (std::size_t a = 0; a < p; ++a) {
      for (std::size_t b = a; b < p; ++b) {
        cov(a, b) /= denom;
        cov(b, a) = cov(a, b);
      }
    }
    const SymmetricEigen eig = symmetric_eigen(cov);
    for (std::size_t k = 0; k < n_components; ++k) {
      basis.explained_variance[k] = eig.values[k];
      std::copy_n(eig.vectors.row(k).begin(), p, basis.components.row(k).begin());
    }
  } else {
    Matrix gram(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i; j < n; ++j) {
        gram(i, j) = dot(centered.row(i), centered.row(j)) / denom;
        gram(j, i) = gram(i, j);
      }
    }
    const SymmetricEigen eig = symmetric_eigen(gram);
    const double cutoff = 1e-10 * std::max(eig.values[0], 0.0);
    for (std::size_t k = 0; k < n_components; ++k) {
      const double lambda = eig.values[k];
      if (!(lambda > cutoff)) {
        valid = k;
        break;
      }
      basis.explained_variance[k] = lambda;
      auto comp = basis.components.row(k);
      auto u = eig.vectors.row(k);
      for (std::size_t i = 0; i < n; ++i) axpy(u[i], centered.row(i), comp);
      const double nrm = norm2(comp);
      for (double& x : comp) x /= nrm;
      canonicalize_sign(comp);
    }
    for (std::size_t k = valid; k < n_components; ++k) {
      basis.explained_variance[k] = std::max(eig.values[k], 0.0);
    }
    complete_basis(basis.components, valid);
  }

  basis.explained_variance_ratio.resize(n_components);
  for (std::size_t k = 0; k < n_components; ++k) {
    basis.explained_variance[k] = std::max(basis.explained_variance[k], 0.0);
    basis.explained_variance_ratio[k] = basis.explained_variance[k] / basis.total_variance;
  }
  return basis;
}

Vector pca_project(const PcaBasis& basis, std::span<const double> w) {
  if (w.size() != basis.dim()) throw Error(ErrorCode::BadShape, "pca_project dimension mismatch");
  Vector centered(w.begin(), w.end());
  for (std::size_t j = 0; j < centered.size(); ++j) centered[j] -= basis.mean[j];
  Vector coeffs(basis.size());
  for (std::size_t k = 0; k < basis.size(); ++k) coeffs[k] = dot(basis.components.row(k), centered);
  return coeffs;
}

Vector pca_reconstruct(const PcaBasis& basis, std::span<const double> coeffs) {
  if (coeffs.size() != basis.size()) {
    throw Error(ErrorCode::BadShape, "pca_reconstruct coefficient count mismatch");
  }
  Vector w = basis.mean;
  for (std::size_t k = 0; k < basis.size(); ++k) axpy(coeffs[k], basis.components.row(k), w);
  return w;
}

Vector pca_pullback(const PcaBasis& basis, std::span<const double> grad_full) {
  if (grad_full.size() != basis.dim()) {
    throw Error(ErrorCode::BadShape, "pca_pullback dimension mismatch");
  }
  Vector g(basis.size());
  for (std::size_t k = 0; k < basis.size(); ++k) g[k] = dot(basis.components.row(k), grad_full);
  return g;
}

}  // namespace latentdrag::numerics
