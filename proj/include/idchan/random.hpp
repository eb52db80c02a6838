#pragma once

// Seeded random matrix/state generators. Every randomized routine in the
// library threads one of these generators through explicitly so that runs
// are reproducible from the recorded seed.

#include "idchan/matrix.hpp"

#include <random>

namespace idchan {

using rng_t = std::mt19937_64;

inline cvec random_unit_vector(int dim, rng_t& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  cvec v(dim);
  for (int i = 0; i < dim; ++i) v[i] = cplx(gauss(rng), gauss(rng));
  return v / v.norm();
}

inline cmat random_matrix(int rows, int cols, rng_t& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  cmat m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = cplx(gauss(rng), gauss(rng));
  }
  return m;
}

inline cmat random_hermitian(int dim, rng_t& rng) {
  cmat g = random_matrix(dim, dim, rng);
  return 0.5 * (g + g.adjoint().eval());
}

inline cmat random_unitary(int dim, rng_t& rng) {
  cmat g = random_matrix(dim, dim, rng);
  Eigen::HouseholderQR<cmat> qr(g);
  cmat q = qr.householderQ();
  cmat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int i = 0; i < dim; ++i) {
    const cplx d = r(i, i);
    q.col(i) *= (std::abs(d) > 0 ? d / std::abs(d) : 1.0);
  }
  return q;
}

// Full-rank Ginibre state, optionally with a floor on the smallest eigenvalue
// so that inverses stay well conditioned in tests.
inline cmat random_state(int dim, rng_t& rng, double min_eig = 0.0) {
  cmat g = random_matrix(dim, dim, rng);
  cmat rho = g * g.adjoint();
  rho /= rho.trace().real();
  if (min_eig > 0.0) {
    rho = (1.0 - min_eig * dim) * rho + min_eig * cmat::Identity(dim, dim);
  }
  return rho;
}

inline cmat random_psd(int dim, int rank, rng_t& rng) {
  cmat g = random_matrix(dim, rank, rng);
  return g * g.adjoint();
}

}  // namespace idchan
