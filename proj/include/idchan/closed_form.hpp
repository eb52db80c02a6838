#pragma once

// Single-letter formulas for discriminating idempotent channels: the
// identity-vs-channel divergence and its completely bounded version, the
// common-invariant-state generalization with its achieving inputs, the
// log-sum-exp upper bound for the fully general case, subalgebra inclusion
// indices, error exponents, and the simplex optimizations behind the
// achievability constructions.

#include "idchan/channels.hpp"
#include "idchan/states.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace idchan {

// ---------------------------------------------------------------------------
// simplex optimizations (closed forms with optimizers)
// ---------------------------------------------------------------------------

enum class SimplexObjective { Softmax, Harmonic, Hoelder };

struct SimplexOptimum {
  double value = 0.0;
  std::vector<double> weights;
};

// Softmax: max_mu H(mu) + sum mu_i c_i = log2 sum 2^{c_i} at mu_i prop 2^{c_i}.
// Harmonic: min_mu sum mu_i^2 c_i = 1 / sum 1/c_i at mu_i prop 1/c_i.
// Hoelder: max_p (a/(a-1)) log2 sum p_i^{1/a} c_i^{(a-1)/a} = log2 sum c_i
//          at p_i prop c_i, for any a > 1.
inline SimplexOptimum simplex_optimum(SimplexObjective kind, const std::vector<double>& c,
                                      double alpha = 2.0) {
  if (c.empty()) throw std::invalid_argument("simplex_optimum: empty coefficient list");
  SimplexOptimum out;
  out.weights.resize(c.size());
  switch (kind) {
    case SimplexObjective::Softmax: {
      double z = 0.0;
      for (double ci : c) {
        if (!std::isfinite(ci)) throw std::invalid_argument("simplex_optimum: non-finite c");
        z += std::exp2(ci);
      }
      out.value = std::log2(z);
      for (size_t i = 0; i < c.size(); ++i) out.weights[i] = std::exp2(c[i]) / z;
      return out;
    }
    case SimplexObjective::Harmonic: {
      double z = 0.0;
      for (double ci : c) {
        if (!(ci > 0.0)) throw std::invalid_argument("simplex_optimum: harmonic needs c > 0");
        z += 1.0 / ci;
      }
      out.value = 1.0 / z;
      for (size_t i = 0; i < c.size(); ++i) out.weights[i] = (1.0 / c[i]) / z;
      return out;
    }
    case SimplexObjective::Hoelder: {
      if (!(alpha > 1.0)) throw std::invalid_argument("simplex_optimum: hoelder needs alpha > 1");
      double z = 0.0;
      for (double ci : c) {
        if (!(ci >= 0.0)) throw std::invalid_argument("simplex_optimum: hoelder needs c >= 0");
        z += ci;
      }
      out.value = std::log2(z);
      for (size_t i = 0; i < c.size(); ++i) out.weights[i] = c[i] / z;
      return out;
    }
  }
  throw std::logic_error("simplex_optimum: unreachable");
}

// ---------------------------------------------------------------------------
// identity vs idempotent channel
// ---------------------------------------------------------------------------

namespace detail {

// eigenvalues of omega^{-1} in descending order
inline std::vector<double> inverse_spectrum(const cmat& omega, const char* what) {
  HermitianEig eig = eigh(omega, what);
  if (eig.values.minCoeff() <= kRankTol * eig.values.maxCoeff()) {
    throw std::invalid_argument(std::string(what) + ": replacer state is rank-deficient");
  }
  std::vector<double> inv;
  inv.reserve(eig.values.size());
  for (Eigen::Index i = eig.values.size() - 1; i >= 0; --i) inv.push_back(1.0 / eig.values[i]);
  return inv;
}

}  // namespace detail

// D(id || Q) = log2 sum_l Tr_{min(dA, dB)}(omega_l^{-1}), in bits.
inline double d_id_q(const BlockIdempotent& q) {
  double total = 0.0;
  for (const Block& b : q.blocks) {
    const auto inv = detail::inverse_spectrum(b.omega, "d_id_q");
    const int m = std::min(b.dA, b.dB);
    for (int i = 0; i < m; ++i) total += inv[i];
  }
  return std::log2(total);
}

// Completely bounded version: the Ky Fan cut saturates at the full trace.
inline double d_id_q_cb(const BlockIdempotent& q) {
  double total = 0.0;
  for (const Block& b : q.blocks) {
    for (double x : detail::inverse_spectrum(b.omega, "d_id_q_cb")) total += x;
  }
  return std::log2(total);
}

// Pure input achieving D(id || Q) (or the cb version on C^d (x) H): Schmidt
// vectors are the top eigenvectors of omega_l^{-1}, Schmidt weights follow the
// softmax optimum, block weights follow the Hoelder optimum.
inline DensityMatrix optimal_input_id_q(const BlockIdempotent& q, bool cb) {
  const int ref = cb ? q.dim : 1;
  const size_t nl = q.blocks.size();
  std::vector<std::vector<double>> inv(nl);
  std::vector<int> m(nl);
  std::vector<double> mass(nl);
  double total = 0.0;
  for (size_t l = 0; l < nl; ++l) {
    inv[l] = detail::inverse_spectrum(q.blocks[l].omega, "optimal_input_id_q");
    m[l] = std::min(ref * q.blocks[l].dA, q.blocks[l].dB);
    for (int i = 0; i < m[l]; ++i) mass[l] += inv[l][i];
    total += mass[l];
  }
  cvec psi = cvec::Zero(Eigen::Index(ref) * q.dim);
  for (size_t l = 0; l < nl; ++l) {
    const Block& blk = q.blocks[l];
    HermitianEig eig = eigh(blk.omega);
    const Eigen::Index off = q.block_offset(l);
    for (int i = 0; i < m[l]; ++i) {
      const double weight = std::sqrt((mass[l] / total) * (inv[l][i] / mass[l]));
      // i-th largest eigenvalue of omega^{-1} = i-th smallest of omega
      const cvec beta = eig.vectors.col(blk.dB - 1 - i);
      const int r = i / blk.dA;          // reference leg of the Schmidt vector
      const int a = i % blk.dA;          // A_l leg
      for (int bidx = 0; bidx < blk.dB; ++bidx) {
        const cvec layout_col = q.basis.col(off + Eigen::Index(a) * blk.dB + bidx);
        // psi += weight * |r> (x) U(:, a,b) * beta[bidx]
        for (int h = 0; h < q.dim; ++h) {
          psi(Eigen::Index(r) * q.dim + h) += weight * beta[bidx] * layout_col[h];
        }
      }
    }
  }
  return DensityMatrix::pure(psi);
}

// ---------------------------------------------------------------------------
// two idempotent channels with a common invariant state
// ---------------------------------------------------------------------------

struct BlockFormula {
  double bits = 0.0;
  int kstar = 0;
  std::vector<double> block_sums;  // linear-scale sum per k
};

namespace detail {

inline BlockFormula d_p_q_impl(const ThreeLayer& t, bool cb) {
  if (!t.common_invariant) {
    throw std::invalid_argument("d_p_q_common: decomposition lacks the common-invariant data");
  }
  BlockFormula out;
  out.bits = -inf();
  for (int k = 0; k < t.K; ++k) {
    double sum = 0.0;
    for (int l = 0; l < t.L; ++l) {
      if (t.b[k][l] == 0) continue;
      const auto inv = inverse_spectrum(t.tau[k][l], "d_p_q_common");
      const int m = cb ? t.b[k][l] : std::min(t.a[l], t.b[k][l]);
      double tr = 0.0;
      for (int i = 0; i < m; ++i) tr += inv[i];
      sum += tr / t.p[k][l];
    }
    out.block_sums.push_back(sum);
    if (std::log2(sum) > out.bits) {
      out.bits = std::log2(sum);
      out.kstar = k;
    }
  }
  return out;
}

}  // namespace detail

// D(P || Q) = max_k log2 sum_l Tr_{min(a_l, b_kl)}(tau_kl^{-1}) / p_kl.
inline BlockFormula d_p_q_common(const ThreeLayer& t) { return detail::d_p_q_impl(t, false); }

// cb version with the full trace of tau_kl^{-1}.
inline BlockFormula d_p_q_common_cb(const ThreeLayer& t) { return detail::d_p_q_impl(t, true); }

// Achieving input psi* (x) delta_{k*} supported on the best P block: the
// l weights follow the Hoelder optimum over Tr_m(tau^{-1})/p, the Schmidt
// weights within each (k*, l) follow the softmax optimum.
inline DensityMatrix optimal_input_p_q(const ThreeLayer& t) {
  const BlockFormula f = d_p_q_common(t);
  const int k = f.kstar;

  double total = 0.0;
  std::vector<double> mass(t.L, 0.0);
  std::vector<std::vector<double>> inv(t.L);
  for (int l = 0; l < t.L; ++l) {
    if (t.b[k][l] == 0) continue;
    inv[l] = detail::inverse_spectrum(t.tau[k][l], "optimal_input_p_q");
    const int m = std::min(t.a[l], t.b[k][l]);
    for (int i = 0; i < m; ++i) mass[l] += inv[l][i];
    mass[l] /= t.p[k][l];
    total += mass[l];
  }

  // psi* components on the (A_l, B_kl) legs, keyed by the global layout index
  // of the C_k ground slot (gamma = 0); the C leg is tensored with delta_k
  struct Amp {
    Eigen::Index base;  // layout index with gamma = 0
    cplx value;
  };
  std::vector<Amp> amps;
  for (int l = 0; l < t.L; ++l) {
    if (t.b[k][l] == 0) continue;
    const int bkl = t.b[k][l];
    const int m = std::min(t.a[l], bkl);
    HermitianEig eig = eigh(t.tau[k][l]);
    const Eigen::Index off = t.block_offset(k, l);
    for (int i = 0; i < m; ++i) {
      const double mu = (mass[l] / total) * ((inv[l][i] / t.p[k][l]) / mass[l]);
      const cvec beta = eig.vectors.col(bkl - 1 - i);  // i-th largest of tau^{-1}
      for (int bidx = 0; bidx < bkl; ++bidx) {
        const Eigen::Index base = off + (Eigen::Index(i) * bkl + bidx) * t.c[k];
        amps.push_back(Amp{base, std::sqrt(mu) * beta[bidx]});
      }
    }
  }

  const int d = t.total_dim();
  cmat rho = cmat::Zero(d, d);
  for (const Amp& u : amps) {
    for (const Amp& v : amps) {
      const cplx w = u.value * std::conj(v.value);
      for (int g1 = 0; g1 < t.c[k]; ++g1) {
        for (int g2 = 0; g2 < t.c[k]; ++g2) {
          rho(u.base + g1, v.base + g2) += w * t.delta[k](g1, g2);
        }
      }
    }
  }
  const cmat rho_comp = t.basis_change * rho * t.basis_change.adjoint();
  return DensityMatrix(0.5 * (rho_comp + rho_comp.adjoint().eval()));
}

// ---------------------------------------------------------------------------
// infinite-divergence witness when the image inclusion fails
// ---------------------------------------------------------------------------

// Scans spectral projections of im(Q^*) elements for one outside im(P^*);
// its normalization has rank(P(rho)) > rank(Q(rho)), forcing D = +inf.
inline std::optional<DensityMatrix> infinite_divergence_witness(const Superoperator& p,
                                                                const Superoperator& q,
                                                                rng_t& rng) {
  const std::vector<cmat> p_alg = fixed_point_algebra(p);
  const std::vector<cmat> q_alg = fixed_point_algebra(q);
  if (inclusion_holds(p_alg, q_alg)) return std::nullopt;
  const int d = p.dim_in;

  std::vector<cmat> herm = detail::hermitian_span(q_alg);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int extra = 0; extra < 8; ++extra) {
    cmat g = cmat::Zero(d, d);
    for (const cmat& h : herm) g += gauss(rng) * h;
    herm.push_back(g / g.norm());
  }

  for (const cmat& g : herm) {
    HermitianEig eig = eigh(g, "infinite_divergence_witness");
    const double scale = std::max(1.0, eig.values.cwiseAbs().maxCoeff());
    const auto clusters = detail::eigen_clusters(eig.values, 1e-7 * scale);
    cmat proj = cmat::Zero(d, d);
    for (size_t ci = 0; ci + 1 < clusters.size() || (clusters.size() == 1 && ci < 1); ++ci) {
      for (int idx : clusters[ci]) proj += eig.vectors.col(idx) * eig.vectors.col(idx).adjoint();
      if (detail::span_residual(proj, q_alg) > 1e-7) continue;  // numerical safety
      if (detail::span_residual(proj, p_alg) <= 1e-6) continue;
      cmat rho = proj / proj.trace().real();
      const int rp = numerical_rank(apply_channel(p, rho));
      const int rq = numerical_rank(apply_channel(q, rho));
      if (rp > rq) return DensityMatrix(rho);
    }
  }
  throw std::runtime_error("infinite_divergence_witness: no witness found among spectral projections");
}

// ---------------------------------------------------------------------------
// general upper bound via per-block divergences
// ---------------------------------------------------------------------------

struct GeneralBound {
  double bits = 0.0;
  int kstar = 0;
  bool exact = false;  // omega_l are k-block-diagonal products with a shared C_k factor
};

namespace detail {

// Tests omega_l = (+)_k p_kl tau_kl (x) nu_k with nu_k independent of l.
inline bool block_product_structure(const ThreeLayer& t, double tol = 1e-9) {
  std::vector<cmat> nu(t.K);
  std::vector<bool> seen(t.K, false);
  for (int l = 0; l < t.L; ++l) {
    Eigen::Index off = 0;
    const cmat& omega = t.omega[l];
    for (int k = 0; k < t.K; ++k) {
      if (t.b[k][l] == 0) continue;
      const Eigen::Index sz = Eigen::Index(t.b[k][l]) * t.c[k];
      // off-diagonal coupling to other k blocks must vanish
      if (max_abs(omega.block(off, 0, sz, off)) > tol) return false;
      if (max_abs(omega.block(off, off + sz, sz, omega.cols() - off - sz)) > tol) return false;
      const cmat blk = omega.block(off, off, sz, sz);
      const double w = blk.trace().real();
      if (w <= tol) return false;
      cmat nu_cand = partial_trace(blk, {t.b[k][l], t.c[k]}, {1}) / w;
      cmat tau_cand = partial_trace(blk, {t.b[k][l], t.c[k]}, {0}) / w;
      if (max_abs(blk - w * kron(tau_cand, nu_cand)) > tol) return false;
      if (!seen[k]) {
        nu[k] = nu_cand;
        seen[k] = true;
      } else if (max_abs(nu[k] - nu_cand) > tol) {
        return false;
      }
      off += sz;
    }
  }
  return true;
}

}  // namespace detail

// max_k log2 sum_l 2^{dkl[k][l]} over the supplied per-block divergences
// (bits). Entries for b_kl = 0 are ignored; missing finite entries reject.
inline GeneralBound general_upper_bound(const ThreeLayer& t, double alpha,
                                        const std::vector<std::vector<double>>& dkl_bits) {
  if (!(alpha > 1.0)) throw std::invalid_argument("general_upper_bound: alpha must exceed 1");
  if (static_cast<int>(dkl_bits.size()) != t.K) {
    throw std::invalid_argument("general_upper_bound: per-block table has wrong row count");
  }
  GeneralBound out;
  out.bits = -inf();
  for (int k = 0; k < t.K; ++k) {
    if (static_cast<int>(dkl_bits[k].size()) != t.L) {
      throw std::invalid_argument("general_upper_bound: per-block table has wrong column count");
    }
    double sum = 0.0;
    for (int l = 0; l < t.L; ++l) {
      if (t.b[k][l] == 0) continue;
      if (!std::isfinite(dkl_bits[k][l])) {
        throw std::invalid_argument("general_upper_bound: missing per-block divergence entry");
      }
      sum += std::exp2(dkl_bits[k][l]);
    }
    const double bits = std::log2(sum);
    if (bits > out.bits) {
      out.bits = bits;
      out.kstar = k;
    }
  }
  out.exact = detail::block_product_structure(t);
  return out;
}

// ---------------------------------------------------------------------------
// restricted per-block channels (inputs on A_l (x) B_kl (x) C_k, outputs on
// A_l (x) E_l), used to evaluate the per-block divergences
// ---------------------------------------------------------------------------

namespace detail {

inline Eigen::Index e_offset(const ThreeLayer& t, int k, int l) {
  Eigen::Index off = 0;
  for (int kk = 0; kk < k; ++kk) off += Eigen::Index(t.b[kk][l]) * t.c[kk];
  return off;
}

}  // namespace detail

// W_l^* o P|_{kl}: keep A_l (x) B_kl, replace C_k by delta_k, embed into E_l.
inline Superoperator restricted_p_channel(const ThreeLayer& t, int k, int l) {
  if (t.b[k][l] == 0) throw std::invalid_argument("restricted_p_channel: empty block");
  const int a = t.a[l], b = t.b[k][l], c = t.c[k], el = t.e_dim(l);
  const int din = a * b * c, dout = a * el;
  const Eigen::Index eoff = detail::e_offset(t, k, l);
  Superoperator ch{din, dout, cmat::Zero(Eigen::Index(dout) * dout, Eigen::Index(din) * din)};
  cmat e = cmat::Zero(din, din);
  for (int i = 0; i < din; ++i) {
    for (int j = 0; j < din; ++j) {
      e(i, j) = 1.0;
      const cmat ab = partial_trace(e, {a * b, c}, {0});
      cmat out = cmat::Zero(dout, dout);
      const cmat mapped = kron(ab, t.delta[k]);  // on A (x) B (x) C
      // scatter (alpha beta gamma) into (alpha, eoff + beta*c + gamma)
      for (int a1 = 0; a1 < a; ++a1) {
        for (int a2 = 0; a2 < a; ++a2) {
          for (int bc1 = 0; bc1 < b * c; ++bc1) {
            for (int bc2 = 0; bc2 < b * c; ++bc2) {
              out(Eigen::Index(a1) * el + eoff + bc1, Eigen::Index(a2) * el + eoff + bc2) =
                  mapped(Eigen::Index(a1) * b * c + bc1, Eigen::Index(a2) * b * c + bc2);
            }
          }
        }
      }
      ch.transfer.col(Eigen::Index(j) * din + i) = vec(out);
      e(i, j) = 0.0;
    }
  }
  return ch;
}

// W_l^* o Q|_{kl}: id_{A_l} (x) R_{omega_l} on the restricted input.
inline Superoperator restricted_q_channel(const ThreeLayer& t, int k, int l) {
  if (t.b[k][l] == 0) throw std::invalid_argument("restricted_q_channel: empty block");
  const int a = t.a[l], b = t.b[k][l], c = t.c[k], el = t.e_dim(l);
  const int din = a * b * c, dout = a * el;
  Superoperator ch{din, dout, cmat::Zero(Eigen::Index(dout) * dout, Eigen::Index(din) * din)};
  cmat e = cmat::Zero(din, din);
  for (int i = 0; i < din; ++i) {
    for (int j = 0; j < din; ++j) {
      e(i, j) = 1.0;
      const cmat a_part = partial_trace(e, {a, b * c}, {0});
      ch.transfer.col(Eigen::Index(j) * din + i) = vec(kron(a_part, t.omega[l]).eval());
      e(i, j) = 0.0;
    }
  }
  return ch;
}

// ---------------------------------------------------------------------------
// subalgebra inclusion indices
// ---------------------------------------------------------------------------

struct IndexPair {
  double c = 0.0;     // smallest c with rho <= c E(rho)
  double c_cb = 0.0;  // stabilized version
};

// Index of a conditional expectation (+)_l id (x) R_{omega_l}: linear-scale
// sums of inverse replacer spectra.
inline IndexPair conditional_expectation_index(const BlockIdempotent& e) {
  return IndexPair{std::exp2(d_id_q(e)), std::exp2(d_id_q_cb(e))};
}

// Nested index for two conditional expectations with the common-invariant
// decomposition; with the trace-preserving flag the states must be maximally
// mixed and the formula reduces to pure dimension counting.
inline IndexPair nested_index(const ThreeLayer& t, bool trace_preserving) {
  if (trace_preserving) {
    for (int k = 0; k < t.K; ++k) {
      if (max_abs(t.delta[k] - cmat::Identity(t.c[k], t.c[k]) / double(t.c[k])) > 1e-9) {
        throw std::invalid_argument("nested_index: delta_k is not maximally mixed");
      }
    }
    for (int l = 0; l < t.L; ++l) {
      const int el = t.e_dim(l);
      if (max_abs(t.omega[l] - cmat::Identity(el, el) / double(el)) > 1e-9) {
        throw std::invalid_argument("nested_index: omega_l is not maximally mixed");
      }
    }
  }
  return IndexPair{std::exp2(d_p_q_common(t).bits), std::exp2(d_p_q_common_cb(t).bits)};
}

// ---------------------------------------------------------------------------
// error exponents
// ---------------------------------------------------------------------------

struct ExponentReport {
  double stein_bits = 0.0;
  double chernoff_bits = 0.0;
  std::function<double(double)> strong_converse;  // r -> exponent
  double dcb_bits = 0.0;
  bool additive = false;
  bool exact = false;
  bool perfect_discrimination = false;  // dcb = +inf
};

// Stein, Chernoff and strong-converse exponents all collapse onto the cb
// divergence; for r above it the strong-converse exponent is r - dcb.
inline ExponentReport exponents(double dcb_bits, bool exact) {
  ExponentReport rep;
  rep.dcb_bits = dcb_bits;
  rep.stein_bits = dcb_bits;
  rep.chernoff_bits = dcb_bits;
  rep.exact = exact;
  rep.additive = exact;
  rep.perfect_discrimination = std::isinf(dcb_bits) && dcb_bits > 0;
  rep.strong_converse = [dcb_bits](double r) {
    if (std::isinf(dcb_bits)) return 0.0;
    return r > dcb_bits ? r - dcb_bits : 0.0;
  };
  return rep;
}

// ---------------------------------------------------------------------------
// data-level tensor square of a decomposition (for additivity checks)
// ---------------------------------------------------------------------------

// Expands the block data of the two-copy channel pair; the basis is not
// tracked (formula evaluation only touches dims, weights and states).
inline ThreeLayer tensor_square_data(const ThreeLayer& t) {
  ThreeLayer s;
  s.K = t.K * t.K;
  s.L = t.L * t.L;
  s.common_invariant = t.common_invariant;
  for (int l1 = 0; l1 < t.L; ++l1) {
    for (int l2 = 0; l2 < t.L; ++l2) s.a.push_back(t.a[l1] * t.a[l2]);
  }
  for (int k1 = 0; k1 < t.K; ++k1) {
    for (int k2 = 0; k2 < t.K; ++k2) s.c.push_back(t.c[k1] * t.c[k2]);
  }
  s.b.assign(s.K, std::vector<int>(s.L, 0));
  if (t.common_invariant) {
    s.p.assign(s.K, std::vector<double>(s.L, 0.0));
    s.tau.assign(s.K, std::vector<cmat>(s.L));
  }
  for (int k1 = 0; k1 < t.K; ++k1) {
    for (int k2 = 0; k2 < t.K; ++k2) {
      const int k = k1 * t.K + k2;
      for (int l1 = 0; l1 < t.L; ++l1) {
        for (int l2 = 0; l2 < t.L; ++l2) {
          const int l = l1 * t.L + l2;
          s.b[k][l] = t.b[k1][l1] * t.b[k2][l2];
          if (t.common_invariant && s.b[k][l] > 0) {
            s.p[k][l] = t.p[k1][l1] * t.p[k2][l2];
            s.tau[k][l] = kron(t.tau[k1][l1], t.tau[k2][l2]);
          }
        }
      }
    }
  }
  for (int k1 = 0; k1 < t.K; ++k1) {
    for (int k2 = 0; k2 < t.K; ++k2) s.delta.push_back(kron(t.delta[k1], t.delta[k2]));
  }
  s.basis_change = cmat::Identity(s.total_dim(), s.total_dim());
  // omega_l from the refinement (only needed when serialized or checked)
  for (int l = 0; l < s.L; ++l) {
    const int el = s.e_dim(l);
    cmat omega = cmat::Zero(el, el);
    Eigen::Index off = 0;
    for (int k = 0; k < s.K; ++k) {
      if (s.b[k][l] == 0) continue;
      const Eigen::Index sz = Eigen::Index(s.b[k][l]) * s.c[k];
      if (s.common_invariant) {
        omega.block(off, off, sz, sz) = s.p[k][l] * kron(s.tau[k][l], s.delta[k]);
      }
      off += sz;
    }
    s.omega.push_back(omega);
  }
  return s;
}

}  // namespace idchan
