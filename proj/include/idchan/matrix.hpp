#pragma once

// Dense complex Hermitian linear-algebra kernel used by the rest of the
// library: eigendecompositions, spectral matrix functions, partial traces,
// Ky Fan partial sums, Schatten norms and tensor/direct-sum assembly.
//
// All operations are pure functions on immutable values.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace idchan {

using cplx = std::complex<double>;
using cmat = Eigen::MatrixXcd;
using cvec = Eigen::VectorXcd;
using rvec = Eigen::VectorXd;

inline constexpr double kRankTol = 1e-10;   // relative support cutoff
inline constexpr double kHermTol = 1e-10;   // relative Hermiticity slack
inline constexpr int kDimCap = 4096;        // largest matrix dimension we accept

inline double inf() { return std::numeric_limits<double>::infinity(); }

inline double log2_safe(double x) { return std::log2(x); }

inline void check_dim_cap(Eigen::Index d, const char* what) {
  if (d > kDimCap) {
    throw std::invalid_argument(std::string(what) + ": dimension " +
                                std::to_string(d) + " exceeds cap " +
                                std::to_string(kDimCap));
  }
}

inline double max_abs(const cmat& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

// Largest deviation from Hermiticity, ||M - M^dagger||_max.
inline double hermiticity_error(const cmat& m) {
  return max_abs(m - m.adjoint().eval());
}

// Symmetrizes when the asymmetry is below kHermTol * ||M||_max, rejects
// otherwise with the measured asymmetry in the message.
inline cmat require_hermitian(const cmat& m, const char* what = "matrix") {
  if (m.rows() != m.cols()) {
    throw std::invalid_argument(std::string(what) + ": not square");
  }
  const double scale = std::max(max_abs(m), 1.0);
  const double asym = hermiticity_error(m);
  if (asym > kHermTol * scale) {
    throw std::invalid_argument(std::string(what) +
                                ": not Hermitian, max asymmetry " +
                                std::to_string(asym));
  }
  return 0.5 * (m + m.adjoint().eval());
}

struct HermitianEig {
  rvec values;   // descending
  cmat vectors;  // unitary, columns matched to values
};

inline HermitianEig eigh(const cmat& h_in, const char* what = "eigh") {
  cmat h = require_hermitian(h_in, what);
  Eigen::SelfAdjointEigenSolver<cmat> solver(h);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error(std::string(what) + ": eigensolver failed");
  }
  const Eigen::Index d = h.rows();
  HermitianEig out;
  out.values = solver.eigenvalues().reverse();
  out.vectors = cmat(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    out.vectors.col(i) = solver.eigenvectors().col(d - 1 - i);
  }
  return out;
}

// Number of eigenvalues above the relative support cutoff.
inline int numerical_rank(const rvec& eigenvalues, double tol = kRankTol) {
  const double top = eigenvalues.size() == 0 ? 0.0 : eigenvalues.cwiseAbs().maxCoeff();
  if (top == 0.0) return 0;
  int r = 0;
  for (Eigen::Index i = 0; i < eigenvalues.size(); ++i) {
    if (std::abs(eigenvalues[i]) > tol * top) ++r;
  }
  return r;
}

inline int numerical_rank(const cmat& h, double tol = kRankTol) {
  return numerical_rank(eigh(h, "numerical_rank").values, tol);
}

// U f(diag) U^dagger with the support convention: when support_only is set,
// eigenvalues below the relative cutoff map to zero and f is never evaluated
// there. f evaluated at a retained eigenvalue outside its domain rejects.
inline cmat matrix_function(const cmat& h, const std::function<double(double)>& f,
                            bool support_only = false,
                            const char* what = "matrix_function") {
  HermitianEig eig = eigh(h, what);
  const double top = eig.values.size() == 0 ? 0.0 : eig.values.cwiseAbs().maxCoeff();
  rvec mapped(eig.values.size());
  for (Eigen::Index i = 0; i < eig.values.size(); ++i) {
    const double lam = eig.values[i];
    if (support_only && std::abs(lam) <= kRankTol * top) {
      mapped[i] = 0.0;
      continue;
    }
    const double v = f(lam);
    if (!std::isfinite(v)) {
      throw std::domain_error(std::string(what) + ": f undefined at eigenvalue " +
                              std::to_string(lam));
    }
    mapped[i] = v;
  }
  return eig.vectors * mapped.asDiagonal() * eig.vectors.adjoint();
}

// Support-restricted power: negative and fractional exponents act on the
// support only, so eigenvalues below the rank cutoff map to zero instead of
// feeding pow() out of domain.
inline cmat matrix_power(const cmat& h, double a) {
  const bool restricted = a < 0.0 || std::nearbyint(a) != a;
  return matrix_function(
      h, [a](double x) { return std::pow(x, a); }, restricted, "matrix_power");
}

inline cmat support_projector(const cmat& h) {
  HermitianEig eig = eigh(h, "support_projector");
  const double top = eig.values.size() == 0 ? 0.0 : eig.values.cwiseAbs().maxCoeff();
  cmat proj = cmat::Zero(h.rows(), h.cols());
  for (Eigen::Index i = 0; i < eig.values.size(); ++i) {
    if (std::abs(eig.values[i]) > kRankTol * top) {
      proj += eig.vectors.col(i) * eig.vectors.col(i).adjoint();
    }
  }
  return proj;
}

// Partial trace of a multipartite operator. dims lists the tensor factors in
// order, keep the (sorted ascending) indices of factors retained. keep = {}
// yields the 1x1 matrix [Tr M].
inline cmat partial_trace(const cmat& m, const std::vector<int>& dims,
                          const std::vector<int>& keep) {
  const Eigen::Index total =
      std::accumulate(dims.begin(), dims.end(), Eigen::Index(1),
                      [](Eigen::Index a, int b) { return a * b; });
  if (m.rows() != total || m.cols() != total) {
    throw std::invalid_argument("partial_trace: dims do not match matrix size");
  }
  for (size_t i = 0; i + 1 < keep.size(); ++i) {
    if (keep[i] >= keep[i + 1]) {
      throw std::invalid_argument("partial_trace: keep indices must be strictly increasing");
    }
  }
  for (int k : keep) {
    if (k < 0 || k >= static_cast<int>(dims.size())) {
      throw std::invalid_argument("partial_trace: keep index out of range");
    }
  }

  const int n = static_cast<int>(dims.size());
  std::vector<int> traced;
  for (int i = 0; i < n; ++i) {
    if (!std::binary_search(keep.begin(), keep.end(), i)) traced.push_back(i);
  }
  Eigen::Index dkeep = 1, dtrace = 1;
  for (int k : keep) dkeep *= dims[k];
  for (int t : traced) dtrace *= dims[t];

  // strides of each factor in the row-major composite index
  std::vector<Eigen::Index> stride(n, 1);
  for (int i = n - 2; i >= 0; --i) stride[i] = stride[i + 1] * dims[i + 1];

  auto compose = [&](const std::vector<int>& subsys, Eigen::Index idx) {
    Eigen::Index full = 0;
    for (int j = static_cast<int>(subsys.size()) - 1; j >= 0; --j) {
      const int s = subsys[j];
      full += (idx % dims[s]) * stride[s];
      idx /= dims[s];
    }
    return full;
  };

  cmat out = cmat::Zero(dkeep, dkeep);
  for (Eigen::Index r = 0; r < dkeep; ++r) {
    for (Eigen::Index c = 0; c < dkeep; ++c) {
      const Eigen::Index rk = compose(keep, r);
      const Eigen::Index ck = compose(keep, c);
      cplx acc = 0.0;
      for (Eigen::Index t = 0; t < dtrace; ++t) {
        const Eigen::Index ti = compose(traced, t);
        acc += m(rk + ti, ck + ti);
      }
      out(r, c) = acc;
    }
  }
  return out;
}

// Reorders the tensor factors of a multipartite operator. perm[i] names the
// old position of the factor that ends up at position i.
inline cmat permute_systems(const cmat& m, const std::vector<int>& dims,
                            const std::vector<int>& perm) {
  const int n = static_cast<int>(dims.size());
  if (static_cast<int>(perm.size()) != n) {
    throw std::invalid_argument("permute_systems: perm size mismatch");
  }
  Eigen::Index total = 1;
  for (int d : dims) total *= d;
  if (m.rows() != total || m.cols() != total) {
    throw std::invalid_argument("permute_systems: dims do not match matrix size");
  }
  std::vector<Eigen::Index> stride(n, 1);
  for (int i = n - 2; i >= 0; --i) stride[i] = stride[i + 1] * dims[i + 1];

  // map new composite index -> old composite index
  std::vector<Eigen::Index> remap(total);
  std::vector<int> digits(n);
  for (Eigen::Index idx = 0; idx < total; ++idx) {
    Eigen::Index rest = idx;
    for (int i = n - 1; i >= 0; --i) {
      digits[i] = static_cast<int>(rest % dims[perm[i]]);
      rest /= dims[perm[i]];
    }
    Eigen::Index old = 0;
    for (int i = 0; i < n; ++i) old += digits[i] * stride[perm[i]];
    remap[idx] = old;
  }
  cmat out(total, total);
  for (Eigen::Index r = 0; r < total; ++r) {
    for (Eigen::Index c = 0; c < total; ++c) {
      out(r, c) = m(remap[r], remap[c]);
    }
  }
  return out;
}

// Sum of the k largest eigenvalues (Ky Fan k-trace).
inline double ky_fan(const cmat& h, int k) {
  HermitianEig eig = eigh(h, "ky_fan");
  if (k < 1 || k > eig.values.size()) {
    throw std::invalid_argument("ky_fan: k out of range");
  }
  return eig.values.head(k).sum();
}

inline double schatten_norm(const cmat& m, double p) {
  if (p < 1.0) throw std::invalid_argument("schatten_norm: p must be >= 1");
  if (!m.allFinite()) throw std::invalid_argument("schatten_norm: non-finite entries");
  if (p == 2.0) return m.norm();
  // singular values from the Hermitian Gram matrix; cheaper than SVD at the
  // dimensions we care about and accurate enough for the library tolerances
  const cmat gram = m.adjoint() * m;
  Eigen::SelfAdjointEigenSolver<cmat> solver(gram);
  rvec s = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  if (std::isinf(p)) return s.size() == 0 ? 0.0 : s.maxCoeff();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) acc += std::pow(s[i], p);
  return std::pow(acc, 1.0 / p);
}

inline double trace_norm(const cmat& m) { return schatten_norm(m, 1.0); }
inline double op_norm(const cmat& m) { return schatten_norm(m, inf()); }

inline cmat kron(const cmat& a, const cmat& b) {
  check_dim_cap(a.rows() * b.rows(), "kron");
  cmat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

inline cmat direct_sum(const cmat& a, const cmat& b) {
  check_dim_cap(a.rows() + b.rows(), "direct_sum");
  cmat out = cmat::Zero(a.rows() + b.rows(), a.cols() + b.cols());
  out.topLeftCorner(a.rows(), a.cols()) = a;
  out.bottomRightCorner(b.rows(), b.cols()) = b;
  return out;
}

inline bool is_psd(const cmat& h, double tol = 1e-9) {
  HermitianEig eig = eigh(h, "is_psd");
  return eig.values.size() == 0 || eig.values.minCoeff() >= -tol;
}

// Hilbert-Schmidt inner product <A,B> = Tr(A^dagger B).
inline cplx hs_inner(const cmat& a, const cmat& b) {
  return (a.adjoint() * b).trace();
}

inline double hs_norm(const cmat& a) { return a.norm(); }

}  // namespace idchan
