#pragma once

// Channel representations and the algebraic structure of idempotent channels:
// transfer-matrix superoperators, block form (direct sums of id (x) replacer),
// fixed-point algebra extraction, block decomposition of *-subalgebras, and
// the nested three-layer decomposition induced by two included algebras.

#include "idchan/matrix.hpp"
#include "idchan/random.hpp"
#include "idchan/states.hpp"

#include <optional>
#include <utility>
#include <vector>

namespace idchan {

// ---------------------------------------------------------------------------
// vectorization (column stacking): vec(AXB) = (B^T (x) A) vec(X)
// ---------------------------------------------------------------------------

inline cvec vec(const cmat& x) {
  return Eigen::Map<const cvec>(x.data(), x.size());
}

inline cmat unvec(const cvec& v, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const cmat>(v.data(), rows, cols);
}

// ---------------------------------------------------------------------------
// Superoperator: a linear map B(C^din) -> B(C^dout) as a transfer matrix
// ---------------------------------------------------------------------------

struct Superoperator {
  int dim_in = 0;
  int dim_out = 0;
  cmat transfer;  // (dout^2) x (din^2), acts on column-stacked operators

  int dim() const { return dim_in; }  // convenience for square channels
  bool square() const { return dim_in == dim_out; }
};

inline cmat apply_channel(const Superoperator& ch, const cmat& x) {
  if (x.rows() != ch.dim_in || x.cols() != ch.dim_in) {
    throw std::invalid_argument("Superoperator apply: dimension mismatch");
  }
  return unvec(ch.transfer * vec(x), ch.dim_out, ch.dim_out);
}

// Hilbert-Schmidt adjoint; for column stacking this is the conjugate
// transpose of the transfer matrix.
inline Superoperator adjoint(const Superoperator& ch) {
  return Superoperator{ch.dim_out, ch.dim_in, ch.transfer.adjoint()};
}

inline cmat adjoint_apply(const Superoperator& ch, const cmat& y) {
  return apply_channel(adjoint(ch), y);
}

inline Superoperator identity_superop(int d) {
  return Superoperator{d, d, cmat::Identity(Eigen::Index(d) * d, Eigen::Index(d) * d)};
}

// first ch1, then ch2
inline Superoperator compose(const Superoperator& ch2, const Superoperator& ch1) {
  if (ch2.dim_in != ch1.dim_out) {
    throw std::invalid_argument("compose: dimension mismatch");
  }
  return Superoperator{ch1.dim_in, ch2.dim_out, ch2.transfer * ch1.transfer};
}

inline Superoperator superop_power(const Superoperator& ch, int n) {
  if (!ch.square() || n < 1) throw std::invalid_argument("superop_power: bad arguments");
  Superoperator out = ch;
  for (int i = 1; i < n; ++i) out = compose(out, ch);
  return out;
}

// Choi matrix J = sum_ij |i><j| (x) ch(|i><j|), input factor first.
inline cmat choi(const Superoperator& ch) {
  const int din = ch.dim_in, dout = ch.dim_out;
  check_dim_cap(Eigen::Index(din) * dout, "choi");
  cmat j = cmat::Zero(Eigen::Index(din) * dout, Eigen::Index(din) * dout);
  cmat e = cmat::Zero(din, din);
  for (int i = 0; i < din; ++i) {
    for (int jj = 0; jj < din; ++jj) {
      e(i, jj) = 1.0;
      const cmat img = apply_channel(ch, e);
      e(i, jj) = 0.0;
      j.block(Eigen::Index(i) * dout, Eigen::Index(jj) * dout, dout, dout) = img;
    }
  }
  return j;
}

inline Superoperator superop_from_choi(const cmat& j, int din, int dout) {
  if (j.rows() != Eigen::Index(din) * dout || j.cols() != j.rows()) {
    throw std::invalid_argument("superop_from_choi: size mismatch");
  }
  Superoperator ch{din, dout, cmat::Zero(Eigen::Index(dout) * dout, Eigen::Index(din) * din)};
  for (int i = 0; i < din; ++i) {
    for (int jj = 0; jj < din; ++jj) {
      const cmat img = j.block(Eigen::Index(i) * dout, Eigen::Index(jj) * dout, dout, dout);
      ch.transfer.col(Eigen::Index(jj) * din + i) = vec(img);
    }
  }
  return ch;
}

inline Superoperator superop_from_kraus(const std::vector<cmat>& kraus) {
  if (kraus.empty()) throw std::invalid_argument("superop_from_kraus: empty list");
  const int dout = static_cast<int>(kraus[0].rows());
  const int din = static_cast<int>(kraus[0].cols());
  cmat t = cmat::Zero(Eigen::Index(dout) * dout, Eigen::Index(din) * din);
  for (const cmat& k : kraus) {
    if (k.rows() != dout || k.cols() != din) {
      throw std::invalid_argument("superop_from_kraus: inconsistent Kraus shapes");
    }
    t += kron(k.conjugate(), k);
  }
  return Superoperator{din, dout, t};
}

// Tensor product of channels, assembled at the Choi level so the transfer
// matrix respects the (in1 in2 | out1 out2) leg ordering.
inline Superoperator superop_kron(const Superoperator& a, const Superoperator& b) {
  const cmat ja = choi(a), jb = choi(b);
  cmat j = kron(ja, jb);  // legs (in_a, out_a, in_b, out_b)
  j = permute_systems(j, {a.dim_in, a.dim_out, b.dim_in, b.dim_out}, {0, 2, 1, 3});
  return superop_from_choi(j, a.dim_in * b.dim_in, a.dim_out * b.dim_out);
}

struct ChannelCheck {
  double cp_violation = 0.0;  // most negative Choi eigenvalue, clipped at 0
  double tp_residual = 0.0;   // || Tr_out J - 1 ||_max
  bool ok(double tol = 1e-9) const { return cp_violation <= tol && tp_residual <= tol; }
};

inline ChannelCheck check_channel(const Superoperator& ch) {
  const cmat j = choi(ch);
  HermitianEig eig = eigh(0.5 * (j + j.adjoint().eval()), "check_channel");
  ChannelCheck out;
  out.cp_violation = std::max(0.0, -eig.values.minCoeff());
  const cmat marginal = partial_trace(j, {ch.dim_in, ch.dim_out}, {0});
  out.tp_residual = max_abs(marginal - cmat::Identity(ch.dim_in, ch.dim_in));
  return out;
}

inline double unitality_residual(const Superoperator& ch) {
  if (!ch.square()) return inf();
  return max_abs(apply_channel(ch, cmat::Identity(ch.dim_in, ch.dim_in)) -
                 cmat::Identity(ch.dim_out, ch.dim_out));
}

struct IdempotencyCheck {
  bool idempotent = false;
  double residual = 0.0;  // || T^2 - T ||_inf
};

inline IdempotencyCheck is_idempotent(const Superoperator& ch, double tol = 1e-8) {
  if (!ch.square()) throw std::invalid_argument("is_idempotent: channel not square");
  IdempotencyCheck out;
  out.residual = op_norm(ch.transfer * ch.transfer - ch.transfer);
  out.idempotent = out.residual <= tol;
  return out;
}

// Applies ch to the second tensor factor of an operator on C^ref (x) C^din.
inline cmat apply_to_second(const Superoperator& ch, const cmat& x, int ref_dim) {
  const int din = ch.dim_in, dout = ch.dim_out;
  if (x.rows() != Eigen::Index(ref_dim) * din || x.cols() != x.rows()) {
    throw std::invalid_argument("apply_to_second: dimension mismatch");
  }
  cmat out(Eigen::Index(ref_dim) * dout, Eigen::Index(ref_dim) * dout);
  for (int r = 0; r < ref_dim; ++r) {
    for (int c = 0; c < ref_dim; ++c) {
      const cmat blk = x.block(Eigen::Index(r) * din, Eigen::Index(c) * din, din, din);
      out.block(Eigen::Index(r) * dout, Eigen::Index(c) * dout, dout, dout) = apply_channel(ch, blk);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// BlockIdempotent: (+)_l id_{A_l} (x) R_{omega_l} after a basis change
// ---------------------------------------------------------------------------

struct Block {
  int dA = 0;
  int dB = 0;
  cmat omega;  // full-rank state on the B factor
};

struct BlockIdempotent {
  int dim = 0;
  cmat basis;  // unitary; columns are the block-layout basis vectors
  std::vector<Block> blocks;

  Eigen::Index block_offset(size_t l) const {
    Eigen::Index off = 0;
    for (size_t i = 0; i < l; ++i) off += Eigen::Index(blocks[i].dA) * blocks[i].dB;
    return off;
  }
};

inline void validate(const BlockIdempotent& bi) {
  Eigen::Index total = 0;
  for (const Block& b : bi.blocks) {
    if (b.dA < 1 || b.dB < 1) throw std::invalid_argument("BlockIdempotent: bad block dims");
    total += Eigen::Index(b.dA) * b.dB;
    HermitianEig eig = eigh(b.omega, "BlockIdempotent omega");
    if (b.omega.rows() != b.dB) throw std::invalid_argument("BlockIdempotent: omega size");
    if (std::abs(b.omega.trace().real() - 1.0) > 1e-9) {
      throw std::invalid_argument("BlockIdempotent: omega trace differs from 1");
    }
    if (eig.values.minCoeff() <= kRankTol * eig.values.maxCoeff()) {
      throw std::invalid_argument("BlockIdempotent: omega not full rank");
    }
  }
  if (total != bi.dim) throw std::invalid_argument("BlockIdempotent: block dims do not sum to dim");
  if (bi.basis.rows() != bi.dim || bi.basis.cols() != bi.dim ||
      max_abs(bi.basis.adjoint() * bi.basis - cmat::Identity(bi.dim, bi.dim)) > 1e-9) {
    throw std::invalid_argument("BlockIdempotent: basis_change not unitary");
  }
}

inline cmat apply_channel(const BlockIdempotent& bi, const cmat& x) {
  if (x.rows() != bi.dim || x.cols() != bi.dim) {
    throw std::invalid_argument("BlockIdempotent apply: dimension mismatch");
  }
  const cmat y = bi.basis.adjoint() * x * bi.basis;
  cmat out = cmat::Zero(bi.dim, bi.dim);
  for (size_t l = 0; l < bi.blocks.size(); ++l) {
    const Block& b = bi.blocks[l];
    const Eigen::Index off = bi.block_offset(l);
    const Eigen::Index sz = Eigen::Index(b.dA) * b.dB;
    const cmat sub = y.block(off, off, sz, sz);
    const cmat reduced = partial_trace(sub, {b.dA, b.dB}, {0});
    out.block(off, off, sz, sz) = kron(reduced, b.omega);
  }
  return bi.basis * out * bi.basis.adjoint();
}

// Adjoint action: (+)_l Tr_{B_l}( Y_l (1 (x) omega_l) ) (x) 1_{B_l}.
inline cmat adjoint_apply(const BlockIdempotent& bi, const cmat& y_in) {
  if (y_in.rows() != bi.dim || y_in.cols() != bi.dim) {
    throw std::invalid_argument("BlockIdempotent adjoint_apply: dimension mismatch");
  }
  const cmat y = bi.basis.adjoint() * y_in * bi.basis;
  cmat out = cmat::Zero(bi.dim, bi.dim);
  for (size_t l = 0; l < bi.blocks.size(); ++l) {
    const Block& b = bi.blocks[l];
    const Eigen::Index off = bi.block_offset(l);
    const Eigen::Index sz = Eigen::Index(b.dA) * b.dB;
    const cmat sub = y.block(off, off, sz, sz);
    const cmat weighted = sub * kron(cmat::Identity(b.dA, b.dA), b.omega);
    const cmat reduced = partial_trace(weighted, {b.dA, b.dB}, {0});
    out.block(off, off, sz, sz) = kron(reduced, cmat::Identity(b.dB, b.dB));
  }
  return bi.basis * out * bi.basis.adjoint();
}

inline Superoperator to_superoperator(const BlockIdempotent& bi) {
  const int d = bi.dim;
  Superoperator ch{d, d, cmat::Zero(Eigen::Index(d) * d, Eigen::Index(d) * d)};
  cmat e = cmat::Zero(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      e(i, j) = 1.0;
      ch.transfer.col(Eigen::Index(j) * d + i) = vec(apply_channel(bi, e));
      e(i, j) = 0.0;
    }
  }
  return ch;
}

inline cmat choi(const BlockIdempotent& bi) { return choi(to_superoperator(bi)); }

inline DensityMatrix apply_state(const BlockIdempotent& bi, const DensityMatrix& rho) {
  return DensityMatrix(apply_channel(bi, rho.mat()));
}

inline DensityMatrix apply_state(const Superoperator& ch, const DensityMatrix& rho) {
  return DensityMatrix(apply_channel(ch, rho.mat()));
}

// n-fold tensor power with the block list expanded combinatorially; the
// basis change bundles the layout permutation with the per-factor bases.
inline BlockIdempotent tensor_power(const BlockIdempotent& bi, int n) {
  if (n < 1 || n > 3) throw std::invalid_argument("tensor_power: n must be 1..3");
  Eigen::Index big = 1;
  for (int i = 0; i < n; ++i) big *= bi.dim;
  check_dim_cap(big, "tensor_power");
  if (n == 1) return bi;

  const int d = bi.dim;
  const size_t nl = bi.blocks.size();
  BlockIdempotent out;
  out.dim = static_cast<int>(big);
  out.basis = cmat::Zero(big, big);

  std::vector<size_t> multi(n, 0);
  Eigen::Index col = 0;
  while (true) {
    Block nb;
    nb.dA = 1;
    nb.dB = 1;
    nb.omega = cmat::Identity(1, 1);
    for (int i = 0; i < n; ++i) {
      const Block& b = bi.blocks[multi[i]];
      nb.dA *= b.dA;
      nb.dB *= b.dB;
      nb.omega = kron(nb.omega, b.omega);
    }
    // layout basis columns for this product block: A-major then B, with the
    // per-factor (a_i, b_i) digits recombined into per-factor layout columns
    std::vector<Eigen::Index> offs(n), dAs(n), dBs(n);
    for (int i = 0; i < n; ++i) {
      offs[i] = bi.block_offset(multi[i]);
      dAs[i] = bi.blocks[multi[i]].dA;
      dBs[i] = bi.blocks[multi[i]].dB;
    }
    std::vector<Eigen::Index> a_digit(n, 0), b_digit(n, 0);
    for (Eigen::Index a = 0; a < nb.dA; ++a) {
      Eigen::Index ra = a;
      for (int i = n - 1; i >= 0; --i) {
        a_digit[i] = ra % dAs[i];
        ra /= dAs[i];
      }
      for (Eigen::Index bidx = 0; bidx < nb.dB; ++bidx) {
        Eigen::Index rb = bidx;
        for (int i = n - 1; i >= 0; --i) {
          b_digit[i] = rb % dBs[i];
          rb /= dBs[i];
        }
        cvec column = cvec::Ones(1);
        for (int i = 0; i < n; ++i) {
          const Eigen::Index p = offs[i] + a_digit[i] * dBs[i] + b_digit[i];
          cvec factor = bi.basis.col(p);
          cvec next(column.size() * factor.size());
          for (Eigen::Index u = 0; u < column.size(); ++u) {
            next.segment(u * factor.size(), factor.size()) = column[u] * factor;
          }
          column = next;
        }
        out.basis.col(col++) = column;
      }
    }
    out.blocks.push_back(std::move(nb));

    int pos = n - 1;
    while (pos >= 0 && ++multi[pos] == nl) multi[pos--] = 0;
    if (pos < 0) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fixed-point algebra of an idempotent channel
// ---------------------------------------------------------------------------

namespace detail {

inline double span_residual(const cmat& candidate, const std::vector<cmat>& basis) {
  cvec v = vec(candidate);
  cvec res = v;
  for (const cmat& f : basis) {
    res -= hs_inner(f, candidate) * vec(f);
  }
  return res.norm();
}

}  // namespace detail

// Hilbert-Schmidt-orthonormal basis of im(ch^*). Requires ch idempotent with
// ch(1) of full rank; verified here. Closure under products and adjoints is
// checked to 1e-8.
inline std::vector<cmat> fixed_point_algebra(const Superoperator& ch) {
  IdempotencyCheck idem = is_idempotent(ch);
  if (!idem.idempotent) {
    throw std::invalid_argument("fixed_point_algebra: channel not idempotent, residual " +
                                std::to_string(idem.residual));
  }
  const int d = ch.dim_in;
  const cmat ch1 = apply_channel(ch, cmat::Identity(d, d));
  if (numerical_rank(ch1) < d) {
    throw std::invalid_argument(
        "fixed_point_algebra: ch(1) is rank-deficient; full-rank unit image required");
  }
  // The images of the matrix units under the adjoint stack into transfer^dagger;
  // the nonzero singular values of an idempotent map are >= 1, so the image
  // space splits off cleanly at 1/2.
  Eigen::BDCSVD<cmat> svd(ch.transfer.adjoint().eval(), Eigen::ComputeThinU);
  std::vector<cmat> basis;
  for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i) {
    if (svd.singularValues()[i] > 0.5) {
      basis.push_back(unvec(svd.matrixU().col(i), d, d));
    }
  }
  // closure checks
  if (detail::span_residual(cmat::Identity(d, d), basis) > 1e-8 * std::sqrt(double(d))) {
    throw std::runtime_error("fixed_point_algebra: identity not in image");
  }
  for (const cmat& f : basis) {
    if (detail::span_residual(f.adjoint(), basis) > 1e-8) {
      throw std::runtime_error("fixed_point_algebra: image not closed under adjoints");
    }
    for (const cmat& g : basis) {
      if (detail::span_residual(f * g, basis) > 1e-8 * std::max(1.0, op_norm(f * g))) {
        throw std::runtime_error("fixed_point_algebra: image not closed under products");
      }
    }
  }
  return basis;
}

// ---------------------------------------------------------------------------
// Block decomposition of a unital *-subalgebra
// ---------------------------------------------------------------------------

struct AlgebraBlocks {
  cmat basis_change;  // unitary U with U^dagger A U = (+)_l B(A_l) (x) 1_{B_l}
  std::vector<std::pair<int, int>> dims;  // (a_l, b_l)
};

namespace detail {

// Hermitian spanning set closed under real linear combinations.
inline std::vector<cmat> hermitian_span(const std::vector<cmat>& elems) {
  std::vector<cmat> out;
  for (const cmat& e : elems) {
    cmat h = 0.5 * (e + e.adjoint().eval());
    cmat a = cplx(0, -0.5) * (e - e.adjoint().eval());
    for (cmat* cand : {&h, &a}) {
      cmat c = *cand;
      for (const cmat& f : out) c -= hs_inner(f, c).real() * f;
      const double nrm = c.norm();
      if (nrm > 1e-9) out.push_back(c / nrm);
    }
  }
  return out;
}

// Basis of the center: elements of span(basis) commuting with every basis
// element, found from the null space of the stacked commutator system.
inline std::vector<cmat> center_basis(const std::vector<cmat>& basis) {
  const int m = static_cast<int>(basis.size());
  const Eigen::Index d2 = basis[0].size();
  cmat sys(Eigen::Index(m) * d2, m);
  for (int k = 0; k < m; ++k) {
    for (int j = 0; j < m; ++j) {
      sys.block(Eigen::Index(k) * d2, j, d2, 1) = vec(basis[k] * basis[j] - basis[j] * basis[k]);
    }
  }
  Eigen::BDCSVD<cmat> svd(sys, Eigen::ComputeFullV);
  const double smax = svd.singularValues().size() ? svd.singularValues()[0] : 0.0;
  const double cut = std::max(1e-8, 1e-10 * smax);
  std::vector<cmat> out;
  for (int j = 0; j < m; ++j) {
    if (j >= svd.singularValues().size() || svd.singularValues()[j] <= cut) {
      cmat z = cmat::Zero(basis[0].rows(), basis[0].cols());
      for (int i = 0; i < m; ++i) z += svd.matrixV()(i, j) * basis[i];
      out.push_back(z);
    }
  }
  return hermitian_span(out);
}

// Eigenvalue clusters of a Hermitian matrix, split at gaps above tol.
inline std::vector<std::vector<int>> eigen_clusters(const rvec& vals, double tol) {
  std::vector<std::vector<int>> clusters;
  for (int i = 0; i < vals.size(); ++i) {
    if (i == 0 || vals[i - 1] - vals[i] > tol) clusters.emplace_back();
    clusters.back().push_back(i);
  }
  return clusters;
}

// Factors a *-algebra acting irreducibly-with-multiplicity on C^m, i.e.
// isomorphic to B(C^a) (x) 1_b, into its tensor components. Returns the
// unitary W: C^a (x) C^b -> C^m (columns indexed a-major) or nullopt when the
// random elements collide and the caller should retry.
inline std::optional<cmat> factor_isotypic(const std::vector<cmat>& herm_elems, int m,
                                           rng_t& rng, int* a_out, int* b_out) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  cmat s = cmat::Zero(m, m);
  for (const cmat& h : herm_elems) s += gauss(rng) * h;
  HermitianEig eig = eigh(s, "factor_isotypic");
  const double scale = std::max(1.0, eig.values.cwiseAbs().maxCoeff());
  auto clusters = eigen_clusters(eig.values, 1e-7 * scale);
  const int a = static_cast<int>(clusters.size());
  if (m % a != 0) return std::nullopt;
  const int b = m / a;
  for (const auto& cl : clusters) {
    if (static_cast<int>(cl.size()) != b) return std::nullopt;
  }
  *a_out = a;
  *b_out = b;
  if (a == 1) {
    return cmat::Identity(m, m);  // algebra is scalar; any basis works
  }

  cmat r = cmat::Zero(m, m);
  for (const cmat& h : herm_elems) r += gauss(rng) * h;

  cmat w(m, m);
  // reference multiplicity space from the first cluster
  for (int beta = 0; beta < b; ++beta) w.col(beta) = eig.vectors.col(clusters[0][beta]);
  for (int j = 1; j < a; ++j) {
    cmat proj_j = cmat::Zero(m, m);
    for (int idx : clusters[j]) {
      proj_j += eig.vectors.col(idx) * eig.vectors.col(idx).adjoint();
    }
    // P_j R P_1 acts as r_{j1} |e_j><e_1| (x) 1 on the multiplicity space
    cvec probe = proj_j * (r * w.col(0));
    const double z = probe.norm();
    if (z < 1e-7) return std::nullopt;
    for (int beta = 0; beta < b; ++beta) {
      w.col(Eigen::Index(j) * b + beta) = (proj_j * (r * w.col(beta))) / z;
    }
  }
  // clean up residual non-orthogonality (Loewdin)
  Eigen::SelfAdjointEigenSolver<cmat> gram(w.adjoint() * w);
  if (gram.eigenvalues().minCoeff() < 0.5) return std::nullopt;
  cmat inv_sqrt = gram.eigenvectors() *
                  gram.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
                  gram.eigenvectors().adjoint();
  return w * inv_sqrt;
}

inline double block_form_residual(const cmat& conj, int a, int b) {
  // distance of a (a*b)x(a*b) matrix from the form X (x) 1_b
  const cmat x = partial_trace(conj, {a, b}, {0}) / double(b);
  return max_abs(conj - kron(x, cmat::Identity(b, b)));
}

}  // namespace detail

// Decomposes a unital *-subalgebra (given as an orthonormal basis) into
// (+)_l B(A_l) (x) 1_{B_l}. Degenerate random spectra are retried up to
// eight times; blocks are sorted by (a_l, b_l, discovery order).
inline AlgebraBlocks algebra_blocks(const std::vector<cmat>& basis, rng_t& rng) {
  if (basis.empty()) throw std::invalid_argument("algebra_blocks: empty basis");
  const int d = static_cast<int>(basis[0].rows());
  if (detail::span_residual(cmat::Identity(d, d), basis) > 1e-8 * std::sqrt(double(d))) {
    throw std::invalid_argument("algebra_blocks: basis does not contain the identity");
  }
  for (const cmat& f : basis) {
    for (const cmat& g : basis) {
      if (detail::span_residual(f * g, basis) > 1e-8 * std::max(1.0, op_norm(f * g))) {
        throw std::invalid_argument("algebra_blocks: basis not closed under products");
      }
    }
  }

  const std::vector<cmat> center = detail::center_basis(basis);
  const int n_central = static_cast<int>(center.size());

  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int attempt = 0; attempt < 8; ++attempt) {
    cmat z = cmat::Zero(d, d);
    for (const cmat& g : center) z += gauss(rng) * g;
    HermitianEig eig = eigh(z, "algebra_blocks center");
    const double scale = std::max(1.0, eig.values.cwiseAbs().maxCoeff());
    auto clusters = detail::eigen_clusters(eig.values, 1e-7 * scale);
    if (static_cast<int>(clusters.size()) != n_central) continue;  // collision, retry

    struct Piece {
      cmat columns;  // d x (a*b), global basis for this block (a-major)
      int a = 0, b = 0;
    };
    std::vector<Piece> pieces;
    bool ok = true;
    for (const auto& cl : clusters) {
      const int mk = static_cast<int>(cl.size());
      cmat vk(d, mk);
      for (int i = 0; i < mk; ++i) vk.col(i) = eig.vectors.col(cl[i]);
      std::vector<cmat> compressed;
      for (const cmat& f : basis) compressed.push_back(vk.adjoint() * f * vk);
      const std::vector<cmat> herm = detail::hermitian_span(compressed);
      int a = 0, b = 0;
      auto w = detail::factor_isotypic(herm, mk, rng, &a, &b);
      if (!w) {
        ok = false;
        break;
      }
      for (const cmat& f : compressed) {
        if (detail::block_form_residual(w->adjoint() * f * *w, a, b) > 1e-8) {
          ok = false;
          break;
        }
      }
      if (!ok) break;
      pieces.push_back(Piece{vk * *w, a, b});
    }
    if (!ok) continue;

    std::vector<int> order(pieces.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
      if (pieces[x].a != pieces[y].a) return pieces[x].a < pieces[y].a;
      if (pieces[x].b != pieces[y].b) return pieces[x].b < pieces[y].b;
      return x < y;
    });

    AlgebraBlocks out;
    out.basis_change = cmat(d, d);
    Eigen::Index col = 0;
    for (int idx : order) {
      out.dims.emplace_back(pieces[idx].a, pieces[idx].b);
      out.basis_change.block(0, col, d, pieces[idx].columns.cols()) = pieces[idx].columns;
      col += pieces[idx].columns.cols();
    }
    return out;
  }
  throw std::runtime_error("algebra_blocks: persistent eigenvalue collisions after 8 retries");
}

// ---------------------------------------------------------------------------
// im(Q^*) subset-of im(P^*) test and witnesses
// ---------------------------------------------------------------------------

inline bool inclusion_holds(const std::vector<cmat>& p_basis,
                            const std::vector<cmat>& q_basis, double tol = 1e-8) {
  for (const cmat& g : q_basis) {
    if (detail::span_residual(g, p_basis) > tol) return false;
  }
  return true;
}

inline bool inclusion_holds(const Superoperator& p, const Superoperator& q) {
  return inclusion_holds(fixed_point_algebra(p), fixed_point_algebra(q));
}

// ---------------------------------------------------------------------------
// Common invariant state
// ---------------------------------------------------------------------------

struct InvariantStateResult {
  cmat state;
  bool full_rank = false;
  double residual = 0.0;  // max of ||P(tau)-tau||, ||Q(tau)-tau||
};

// Solves P(tau) = tau = Q(tau), tau = tau^dagger, Tr tau = 1 by null-space
// computation and returns a maximal-rank PSD solution if one exists.
inline std::optional<InvariantStateResult> common_invariant_state(const Superoperator& p,
                                                                  const Superoperator& q) {
  if (!p.square() || !q.square() || p.dim_in != q.dim_in) {
    throw std::invalid_argument("common_invariant_state: dimension mismatch");
  }
  const int d = p.dim_in;
  const Eigen::Index d2 = Eigen::Index(d) * d;
  cmat sys(2 * d2, d2);
  sys.topRows(d2) = p.transfer - cmat::Identity(d2, d2);
  sys.bottomRows(d2) = q.transfer - cmat::Identity(d2, d2);
  Eigen::BDCSVD<cmat> svd(sys, Eigen::ComputeFullV);
  const double smax = svd.singularValues().size() ? svd.singularValues()[0] : 0.0;
  const double cut = std::max(1e-9, 1e-11 * smax);
  std::vector<cmat> fixed;
  for (Eigen::Index j = 0; j < d2; ++j) {
    if (j >= svd.singularValues().size() || svd.singularValues()[j] <= cut) {
      fixed.push_back(unvec(svd.matrixV().col(j), d, d));
    }
  }
  if (fixed.empty()) return std::nullopt;
  const std::vector<cmat> herm = detail::hermitian_span(fixed);
  if (herm.empty()) return std::nullopt;

  // HS projection of the identity onto the fixed subspace is the natural
  // maximal-rank candidate; polish with a supergradient ascent of the
  // smallest eigenvalue over the unit-trace slice if needed.
  cmat cand = cmat::Zero(d, d);
  for (const cmat& z : herm) cand += hs_inner(z, cmat::Identity(d, d)).real() * z;
  auto lam_min = [](const cmat& h) {
    return eigh(0.5 * (h + h.adjoint().eval())).values.minCoeff();
  };
  double tr = cand.trace().real();
  if (std::abs(tr) <= 1e-12) {
    // every Hermitian fixed point is traceless, so no fixed state exists
    return std::nullopt;
  }
  cand /= tr;
  if (lam_min(cand) < kRankTol) {
    cmat best = cand;
    double best_val = lam_min(best);
    cmat cur = best;
    for (int it = 0; it < 400 && best_val < 1.0 / (2.0 * d); ++it) {
      HermitianEig eig = eigh(cur);
      const cvec vmin = eig.vectors.col(d - 1);
      cmat grad = vmin * vmin.adjoint();
      // project the supergradient onto the traceless part of the fixed subspace
      cmat step = cmat::Zero(d, d);
      for (const cmat& z : herm) step += hs_inner(z, grad).real() * z;
      step -= (step.trace().real() / d) * cmat::Identity(d, d);
      const double nrm = step.norm();
      if (nrm < 1e-14) break;
      cur += (0.5 / (it + 1.0)) * step / nrm;
      cur = 0.5 * (cur + cur.adjoint().eval());
      cur /= cur.trace().real();
      const double v = lam_min(cur);
      if (v > best_val) {
        best_val = v;
        best = cur;
      }
    }
    cand = best;
  }
  if (lam_min(cand) < -1e-10) return std::nullopt;

  InvariantStateResult res;
  res.state = 0.5 * (cand + cand.adjoint().eval());
  // clip negligible negative eigenvalues
  res.state = matrix_function(res.state, [](double x) { return std::max(x, 0.0); });
  res.state /= res.state.trace().real();
  res.full_rank = numerical_rank(res.state) == d;
  res.residual = std::max(max_abs(apply_channel(p, res.state) - res.state),
                          max_abs(apply_channel(q, res.state) - res.state));
  if (res.residual > 1e-9) return std::nullopt;
  return res;
}

// ---------------------------------------------------------------------------
// Multiplicative domain membership via rank preservation
// ---------------------------------------------------------------------------

inline bool multiplicative_domain_member(const Superoperator& ch, const cmat& proj) {
  if (unitality_residual(ch) > 1e-9) {
    throw std::invalid_argument("multiplicative_domain_member: channel not unital");
  }
  if (max_abs(proj * proj - proj) > 1e-9 || hermiticity_error(proj) > 1e-9) {
    throw std::invalid_argument("multiplicative_domain_member: input is not an orthogonal projection");
  }
  const cmat img = apply_channel(ch, proj);
  return numerical_rank(img) == numerical_rank(proj);
}

// ---------------------------------------------------------------------------
// Normalization: superoperator -> block form
// ---------------------------------------------------------------------------

// Extracts the block data of an idempotent channel with full-rank unit image:
// fixed-point algebra, block split, then the replacer states read off from
// the channel action on block-supported inputs. The result is certified
// against the original channel at the Choi level.
inline BlockIdempotent superop_to_block_idempotent(const Superoperator& ch, rng_t& rng) {
  const std::vector<cmat> algebra = fixed_point_algebra(ch);
  const AlgebraBlocks ab = algebra_blocks(algebra, rng);
  const int d = ch.dim_in;

  BlockIdempotent bi;
  bi.dim = d;
  bi.basis = ab.basis_change;
  Eigen::Index off = 0;
  for (const auto& [a, b] : ab.dims) {
    // feed in |0><0|_A (x) 1_B / b supported on this block
    cmat probe = cmat::Zero(d, d);
    for (int i = 0; i < b; ++i) probe(off + i, off + i) = 1.0 / b;
    const cmat in_comp = bi.basis * probe * bi.basis.adjoint();
    const cmat out_layout = bi.basis.adjoint() * apply_channel(ch, in_comp) * bi.basis;
    const cmat blk = out_layout.block(off, off, Eigen::Index(a) * b, Eigen::Index(a) * b);
    cmat omega = partial_trace(blk, {a, b}, {1});
    omega = 0.5 * (omega + omega.adjoint().eval());
    omega /= omega.trace().real();
    bi.blocks.push_back(Block{a, b, omega});
    off += Eigen::Index(a) * b;
  }
  validate(bi);
  const double dist = max_abs(choi(bi) - choi(ch));
  if (dist > 1e-9 * d) {
    throw std::runtime_error(
        "superop_to_block_idempotent: reconstructed channel deviates by " + std::to_string(dist));
  }
  return bi;
}

// ---------------------------------------------------------------------------
// Three-layer decomposition
// ---------------------------------------------------------------------------

// H = (+)_{k,l} A_l (x) B_{k,l} (x) C_k, laid out k-major then l, with
// im(P^*) = (+)_k B(D_k) (x) 1_{C_k} and im(Q^*) = (+)_l B(A_l) (x) 1_{E_l}.
struct ThreeLayer {
  int K = 0, L = 0;
  std::vector<int> a;               // dim A_l
  std::vector<int> c;               // dim C_k
  std::vector<std::vector<int>> b;  // dim B_{k,l} (zeros allowed), indexed [k][l]
  cmat basis_change;                // unitary; columns are the layout basis
  std::vector<cmat> delta;          // delta_k on C_k
  std::vector<cmat> omega;          // omega_l on E_l = (+)_k B_{k,l} (x) C_k (k-major)
  bool common_invariant = false;
  std::vector<std::vector<double>> p;  // p[k][l], defined when common_invariant
  std::vector<std::vector<cmat>> tau;  // tau[k][l] on B_{k,l}, when b[k][l] > 0

  int total_dim() const {
    int t = 0;
    for (int k = 0; k < K; ++k) {
      for (int l = 0; l < L; ++l) t += a[l] * b[k][l] * c[k];
    }
    return t;
  }

  Eigen::Index block_offset(int k, int l) const {
    Eigen::Index off = 0;
    for (int kk = 0; kk < K; ++kk) {
      for (int ll = 0; ll < L; ++ll) {
        if (kk == k && ll == l) return off;
        off += Eigen::Index(a[ll]) * b[kk][ll] * c[kk];
      }
    }
    return off;
  }

  int e_dim(int l) const {
    int e = 0;
    for (int k = 0; k < K; ++k) e += b[k][l] * c[k];
    return e;
  }

  int d_dim(int k) const {
    int dd = 0;
    for (int l = 0; l < L; ++l) dd += a[l] * b[k][l];
    return dd;
  }

  // Global indices of the A_l (x) E_l subspace, (alpha, k, beta, gamma) with
  // alpha-major ordering, matching id_{A_l} (x) R_{omega_l}.
  std::vector<Eigen::Index> l_subspace_indices(int l) const {
    std::vector<Eigen::Index> idx;
    idx.reserve(Eigen::Index(a[l]) * e_dim(l));
    for (int alpha = 0; alpha < a[l]; ++alpha) {
      for (int k = 0; k < K; ++k) {
        if (b[k][l] == 0) continue;
        const Eigen::Index off = block_offset(k, l);
        for (int beta = 0; beta < b[k][l]; ++beta) {
          for (int gamma = 0; gamma < c[k]; ++gamma) {
            idx.push_back(off + (Eigen::Index(alpha) * b[k][l] + beta) * c[k] + gamma);
          }
        }
      }
    }
    return idx;
  }
};

// Rebuilds P = (+)_k id_{D_k} (x) R_{delta_k} from the decomposition data.
inline BlockIdempotent three_layer_p_channel(const ThreeLayer& t) {
  BlockIdempotent bi;
  bi.dim = t.total_dim();
  bi.basis = t.basis_change;
  for (int k = 0; k < t.K; ++k) bi.blocks.push_back(Block{t.d_dim(k), t.c[k], t.delta[k]});
  return bi;
}

// Rebuilds Q = (+)_l id_{A_l} (x) R_{omega_l} as a superoperator (the A_l (x) E_l
// summands are not contiguous in the k-major layout).
inline Superoperator three_layer_q_channel(const ThreeLayer& t) {
  const int d = t.total_dim();
  Superoperator ch{d, d, cmat::Zero(Eigen::Index(d) * d, Eigen::Index(d) * d)};
  cmat e = cmat::Zero(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      e(i, j) = 1.0;
      const cmat x = t.basis_change.adjoint() * e * t.basis_change;
      e(i, j) = 0.0;
      cmat out = cmat::Zero(d, d);
      for (int l = 0; l < t.L; ++l) {
        const auto idx = t.l_subspace_indices(l);
        const int al = t.a[l], el = t.e_dim(l);
        if (el == 0) continue;
        cmat sub(idx.size(), idx.size());
        for (size_t r = 0; r < idx.size(); ++r) {
          for (size_t cc = 0; cc < idx.size(); ++cc) sub(r, cc) = x(idx[r], idx[cc]);
        }
        const cmat reduced = partial_trace(sub, {al, el}, {0});
        const cmat mapped = kron(reduced, t.omega[l]);
        for (size_t r = 0; r < idx.size(); ++r) {
          for (size_t cc = 0; cc < idx.size(); ++cc) out(idx[r], idx[cc]) += mapped(r, cc);
        }
      }
      ch.transfer.col(Eigen::Index(j) * d + i) = vec(t.basis_change * out * t.basis_change.adjoint());
    }
  }
  return ch;
}

namespace detail {

// Partial trace over the leading a-dimensional factor of a rectangular
// cross-block, rows on a (x) R, cols on a (x) S.
inline cmat trace_out_first(const cmat& m, int a, int rrest, int crest) {
  cmat out = cmat::Zero(rrest, crest);
  for (int al = 0; al < a; ++al) {
    out += m.block(Eigen::Index(al) * rrest, Eigen::Index(al) * crest, rrest, crest);
  }
  return out;
}

}  // namespace detail

// Joint decomposition of two idempotent channels with im(Q^*) in im(P^*).
// Throws when the inclusion fails (the divergence is then infinite; see
// infinite_divergence_witness).
inline ThreeLayer three_layer_decompose(const Superoperator& p, const Superoperator& q,
                                        rng_t& rng) {
  const std::vector<cmat> p_alg = fixed_point_algebra(p);
  const std::vector<cmat> q_alg = fixed_point_algebra(q);
  if (!inclusion_holds(p_alg, q_alg)) {
    throw std::invalid_argument(
        "three_layer_decompose: im(Q^*) is not contained in im(P^*); "
        "the channel divergence is infinite");
  }
  const int d = p.dim_in;

  // coarse split along im(P^*)
  const AlgebraBlocks pb = algebra_blocks(p_alg, rng);
  const int K = static_cast<int>(pb.dims.size());

  // global minimal central projections of im(Q^*)
  const std::vector<cmat> q_center = detail::center_basis(q_alg);
  const int L = static_cast<int>(q_center.size());
  std::vector<cmat> q_central_projs;
  {
    std::normal_distribution<double> gauss(0.0, 1.0);
    bool done = false;
    for (int attempt = 0; attempt < 8 && !done; ++attempt) {
      cmat z = cmat::Zero(d, d);
      for (const cmat& g : q_center) z += gauss(rng) * g;
      HermitianEig eig = eigh(z, "three_layer center");
      const double scale = std::max(1.0, eig.values.cwiseAbs().maxCoeff());
      auto clusters = detail::eigen_clusters(eig.values, 1e-7 * scale);
      if (static_cast<int>(clusters.size()) != L) continue;
      q_central_projs.clear();
      for (const auto& cl : clusters) {
        cmat pr = cmat::Zero(d, d);
        for (int i : cl) pr += eig.vectors.col(i) * eig.vectors.col(i).adjoint();
        q_central_projs.push_back(pr);
      }
      done = true;
    }
    if (!done) throw std::runtime_error("three_layer_decompose: central collisions persist");
  }

  struct SubBlock {
    bool present = false;
    int a = 0, b = 0;
    cmat embed;  // d_k x (a*b): maps A (x) B coordinates into the D_k factor
  };

  std::vector<int> dk(K), ck(K);
  std::vector<Eigen::Index> k_offset(K);
  {
    Eigen::Index off = 0;
    for (int k = 0; k < K; ++k) {
      dk[k] = pb.dims[k].first;
      ck[k] = pb.dims[k].second;
      k_offset[k] = off;
      off += Eigen::Index(dk[k]) * ck[k];
    }
  }

  // compress the Q algebra into each D_k factor
  auto compress_to_dk = [&](const cmat& f, int k) {
    const Eigen::Index sz = Eigen::Index(dk[k]) * ck[k];
    const cmat rot = pb.basis_change.adjoint() * f * pb.basis_change;
    const cmat blk = rot.block(k_offset[k], k_offset[k], sz, sz);
    const cmat x = partial_trace(blk, {dk[k], ck[k]}, {0}) / double(ck[k]);
    if (max_abs(blk - kron(x, cmat::Identity(ck[k], ck[k]))) > 1e-7) {
      throw std::runtime_error("three_layer_decompose: Q algebra is not of the expected form on a P block");
    }
    return x;
  };

  std::vector<int> a_of_l(L, 0);
  std::vector<std::vector<SubBlock>> sub(K, std::vector<SubBlock>(L));
  std::vector<std::vector<std::vector<cmat>>> rep(K);  // rep[k][l][j]: A_l factor of q_alg[j]

  for (int k = 0; k < K; ++k) {
    rep[k].resize(L);
    std::vector<cmat> xq;
    for (const cmat& f : q_alg) xq.push_back(compress_to_dk(f, k));
    for (int l = 0; l < L; ++l) {
      const cmat ql = compress_to_dk(q_central_projs[l], k);
      const double tr = ql.trace().real();
      const int rank = static_cast<int>(std::lround(tr));
      if (rank == 0) continue;
      HermitianEig qe = eigh(ql, "three_layer q-central");
      cmat iso(dk[k], rank);
      for (int i = 0; i < rank; ++i) iso.col(i) = qe.vectors.col(i);
      std::vector<cmat> corner;
      for (const cmat& x : xq) corner.push_back(iso.adjoint() * x * iso);
      int a = 0, b = 0;
      std::optional<cmat> w;
      for (int attempt = 0; attempt < 8 && !w; ++attempt) {
        w = detail::factor_isotypic(detail::hermitian_span(corner), rank, rng, &a, &b);
      }
      if (!w) throw std::runtime_error("three_layer_decompose: isotypic split failed");
      if (a_of_l[l] == 0) a_of_l[l] = a;
      if (a_of_l[l] != a) throw std::runtime_error("three_layer_decompose: inconsistent A_l dims");
      SubBlock sb;
      sb.present = true;
      sb.a = a;
      sb.b = b;
      sb.embed = iso * *w;
      sub[k][l] = std::move(sb);
      // A_l factor of each algebra element in this corner
      rep[k][l].reserve(corner.size());
      for (const cmat& x : corner) {
        const cmat conj = w->adjoint() * x * *w;
        rep[k][l].push_back(partial_trace(conj, {a, b}, {0}) / double(b));
      }
    }
  }

  // align the A_l bases across k blocks (the representations are unitarily
  // equivalent irreps, so the intertwiner space is one-dimensional)
  for (int l = 0; l < L; ++l) {
    int k0 = -1;
    for (int k = 0; k < K; ++k) {
      if (sub[k][l].present) {
        k0 = k;
        break;
      }
    }
    if (k0 < 0) throw std::runtime_error("three_layer_decompose: empty Q block");
    const int al = a_of_l[l];
    for (int k = k0 + 1; k < K; ++k) {
      if (!sub[k][l].present) continue;
      const Eigen::Index a2 = Eigen::Index(al) * al;
      cmat sys(Eigen::Index(q_alg.size()) * a2, a2);
      for (size_t j = 0; j < q_alg.size(); ++j) {
        // S rep_k = rep_k0 S  <=>  (rep_k^T (x) 1 - 1 (x) rep_k0) vec(S) = 0
        sys.block(Eigen::Index(j) * a2, 0, a2, a2) =
            kron(rep[k][l][j].transpose(), cmat::Identity(al, al)) -
            kron(cmat::Identity(al, al), rep[k0][l][j]);
      }
      Eigen::BDCSVD<cmat> svd(sys, Eigen::ComputeFullV);
      cmat s = unvec(svd.matrixV().col(a2 - 1), al, al);
      // polar: keep the unitary factor
      Eigen::BDCSVD<cmat> pol(s, Eigen::ComputeFullU | Eigen::ComputeFullV);
      s = pol.matrixU() * pol.matrixV().adjoint();
      sub[k][l].embed = sub[k][l].embed * kron(s.adjoint(), cmat::Identity(sub[k][l].b, sub[k][l].b));
      for (size_t j = 0; j < q_alg.size(); ++j) {
        rep[k][l][j] = s * rep[k][l][j] * s.adjoint();
      }
    }
  }

  // assemble the result; k blocks are already sorted by algebra_blocks, and
  // the paper leaves block labels free, so we keep l in central-split order
  ThreeLayer t;
  t.K = K;
  t.L = L;
  t.a = a_of_l;
  t.c = ck;
  t.b.assign(K, std::vector<int>(L, 0));
  for (int k = 0; k < K; ++k) {
    for (int l = 0; l < L; ++l) t.b[k][l] = sub[k][l].present ? sub[k][l].b : 0;
  }
  t.basis_change = cmat::Zero(d, d);
  {
    Eigen::Index col = 0;
    for (int k = 0; k < K; ++k) {
      for (int l = 0; l < L; ++l) {
        if (t.b[k][l] == 0) continue;
        const SubBlock& sb = sub[k][l];
        for (int ab = 0; ab < sb.a * sb.b; ++ab) {
          // lift D_k coordinates to H: tensor with C_k, then rotate by the P basis
          for (int g = 0; g < ck[k]; ++g) {
            cvec v = cvec::Zero(d);
            for (int r = 0; r < dk[k]; ++r) {
              v(k_offset[k] + Eigen::Index(r) * ck[k] + g) = sb.embed(r, ab);
            }
            t.basis_change.col(col + g) = pb.basis_change * v;
          }
          col += ck[k];
        }
      }
    }
  }

  // delta_k from the action of P on a block-supported probe
  for (int k = 0; k < K; ++k) {
    const int dkk = t.d_dim(k), ckk = t.c[k];
    Eigen::Index off = 0;
    for (int kk = 0; kk < k; ++kk) off += Eigen::Index(t.d_dim(kk)) * t.c[kk];
    cmat probe = cmat::Zero(d, d);
    for (int g = 0; g < ckk; ++g) probe(off + g, off + g) = 1.0 / ckk;
    const cmat out =
        t.basis_change.adjoint() * apply_channel(p, (t.basis_change * probe * t.basis_change.adjoint()).eval()) *
        t.basis_change;
    cmat delta = partial_trace(out.block(off, off, Eigen::Index(dkk) * ckk, Eigen::Index(dkk) * ckk),
                               {dkk, ckk}, {1});
    delta = 0.5 * (delta + delta.adjoint().eval());
    delta /= delta.trace().real();
    t.delta.push_back(delta);
  }

  // omega_l from the action of Q on a probe supported in one (k0, l) block
  for (int l = 0; l < L; ++l) {
    const int el = t.e_dim(l);
    int k0 = 0;
    while (t.b[k0][l] == 0) ++k0;
    const Eigen::Index off0 = t.block_offset(k0, l);
    const Eigen::Index sz0 = Eigen::Index(t.a[l]) * t.b[k0][l] * t.c[k0];
    cmat probe = cmat::Zero(d, d);
    for (Eigen::Index i = 0; i < sz0; ++i) probe(off0 + i, off0 + i) = 1.0 / double(sz0);
    const cmat out =
        t.basis_change.adjoint() * apply_channel(q, (t.basis_change * probe * t.basis_change.adjoint()).eval()) *
        t.basis_change;
    cmat omega = cmat::Zero(el, el);
    Eigen::Index er = 0;
    for (int k = 0; k < K; ++k) {
      if (t.b[k][l] == 0) continue;
      const int rrest = t.b[k][l] * t.c[k];
      Eigen::Index ec = 0;
      for (int k2 = 0; k2 < K; ++k2) {
        if (t.b[k2][l] == 0) continue;
        const int crest = t.b[k2][l] * t.c[k2];
        const cmat cross = out.block(t.block_offset(k, l), t.block_offset(k2, l),
                                     Eigen::Index(t.a[l]) * rrest, Eigen::Index(t.a[l]) * crest);
        omega.block(er, ec, rrest, crest) = detail::trace_out_first(cross, t.a[l], rrest, crest);
        ec += crest;
      }
      er += rrest;
    }
    omega = 0.5 * (omega + omega.adjoint().eval());
    omega /= omega.trace().real();
    t.omega.push_back(omega);
  }

  // certify the decomposition against both channels
  if (max_abs(choi(three_layer_p_channel(t)) - choi(p)) > 1e-8 * d) {
    throw std::runtime_error("three_layer_decompose: P reconstruction failed");
  }
  if (max_abs(choi(three_layer_q_channel(t)) - choi(q)) > 1e-8 * d) {
    throw std::runtime_error("three_layer_decompose: Q reconstruction failed");
  }

  // common invariant state: flag plus the p_{k,l}, tau_{k,l} refinement
  if (auto inv = common_invariant_state(p, q); inv && inv->full_rank) {
    t.common_invariant = true;
    t.p.assign(K, std::vector<double>(L, 0.0));
    t.tau.assign(K, std::vector<cmat>(L));
    for (int l = 0; l < L; ++l) {
      Eigen::Index er = 0;
      for (int k = 0; k < K; ++k) {
        if (t.b[k][l] == 0) continue;
        const int bl = t.b[k][l], cl = t.c[k];
        const cmat blk = t.omega[l].block(er, er, Eigen::Index(bl) * cl, Eigen::Index(bl) * cl);
        const double w = blk.trace().real();
        t.p[k][l] = w;
        cmat tau = partial_trace(blk, {bl, cl}, {0}) / w;
        tau = 0.5 * (tau + tau.adjoint().eval());
        tau /= tau.trace().real();
        t.tau[k][l] = tau;
        er += Eigen::Index(bl) * cl;
      }
    }
    // validate the product refinement omega_l = (+)_k p_{k,l} tau_{k,l} (x) delta_k
    for (int l = 0; l < L; ++l) {
      cmat rebuilt = cmat::Zero(t.e_dim(l), t.e_dim(l));
      Eigen::Index er = 0;
      for (int k = 0; k < K; ++k) {
        if (t.b[k][l] == 0) continue;
        const Eigen::Index sz = Eigen::Index(t.b[k][l]) * t.c[k];
        rebuilt.block(er, er, sz, sz) = t.p[k][l] * kron(t.tau[k][l], t.delta[k]);
        er += sz;
      }
      if (max_abs(rebuilt - t.omega[l]) > 1e-9) {
        t.common_invariant = false;  // shared state exists but is not full rank compatible
        t.p.clear();
        t.tau.clear();
        break;
      }
    }
  }
  return t;
}

}  // namespace idchan
