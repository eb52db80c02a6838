#pragma once

// Built-in demonstration instance for the strict-gap phenomenon: a single
// coarse block (K = 1) with two fine blocks whose replacer states are
// diagonal but not of product form across the B-C cut. The log-sum-exp
// upper bound is then strictly above the true sandwiched divergence at
// alpha = 2. All constants for this instance live here.

#include "idchan/channels.hpp"

namespace idchan {

// K = 1, L = 2, a = (1,1), b = (2,2), c = (2);
// delta_1 = 1/2, omega_1 = diag(1,2,3,2)/8, omega_2 = diag(2,1,2,3)/8.
inline ThreeLayer strict_gap_instance() {
  ThreeLayer t;
  t.K = 1;
  t.L = 2;
  t.a = {1, 1};
  t.c = {2};
  t.b = {{2, 2}};
  t.basis_change = cmat::Identity(8, 8);
  t.delta = {0.5 * cmat::Identity(2, 2)};
  cmat w1 = cmat::Zero(4, 4), w2 = cmat::Zero(4, 4);
  w1.diagonal() << 1.0 / 8, 2.0 / 8, 3.0 / 8, 2.0 / 8;
  w2.diagonal() << 2.0 / 8, 1.0 / 8, 2.0 / 8, 3.0 / 8;
  t.omega = {w1, w2};
  t.common_invariant = false;
  return t;
}

struct StrictGapAnalysis {
  double per_block_linear[2] = {0.0, 0.0};  // 2^{D2(1,l)}
  double q_star[2] = {0.0, 0.0};            // argmax of the per-block family
  double bound_bits = 0.0;                  // log2 sum of per-block values
  double true_bits = 0.0;                   // sandwiched alpha=2 channel divergence
  double p_star = 0.0;                      // block weight achieving the true value
  double gap_bits = 0.0;
};

namespace detail {

inline double golden_max(const std::function<double(double)>& f, double lo, double hi,
                         double tol) {
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = lo, b = hi;
  double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
  double f1 = f(x1), f2 = f(x2);
  while (b - a > tol) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + gr * (b - a);
      f2 = f(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - gr * (b - a);
      f1 = f(x1);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace detail

// Exact evaluation along the diagonal input family that carries the optimum:
// within each fine block the objective is entrywise increasing in the B-leg
// population q, and the block weight p is optimized by golden section.
inline StrictGapAnalysis strict_gap_analysis() {
  const ThreeLayer t = strict_gap_instance();
  StrictGapAnalysis out;

  // sqrt(delta) Tr_B[(v v^+ (x) 1_C) omega_l^{-1/2}] sqrt(delta) for the
  // diagonal family v = (sqrt(q), sqrt(1-q))
  auto x_op = [&](int l, double q) {
    const cmat omega_inv_sqrt = matrix_power(t.omega[l], -0.5);
    cmat vv = cmat::Zero(2, 2);
    vv(0, 0) = q;
    vv(1, 1) = 1.0 - q;
    const cmat weighted = kron(vv, cmat::Identity(2, 2)) * omega_inv_sqrt;
    const cmat reduced = partial_trace(weighted, {2, 2}, {1});
    const cmat sq = matrix_power(t.delta[0], 0.5);
    return (sq * reduced * sq).eval();
  };

  for (int l = 0; l < 2; ++l) {
    auto f = [&](double q) { return (x_op(l, q) * x_op(l, q)).trace().real(); };
    const double q = detail::golden_max(f, 0.0, 1.0, 1e-12);
    out.q_star[l] = f(1.0) >= f(q) ? 1.0 : q;  // the boundary is admissible
    out.per_block_linear[l] = f(out.q_star[l]);
  }
  out.bound_bits = std::log2(out.per_block_linear[0] + out.per_block_linear[1]);

  // full-channel value on the same family with block weights (p, 1-p)
  auto total = [&](double p) {
    const cmat x = std::sqrt(p) * x_op(0, out.q_star[0]) +
                   std::sqrt(1.0 - p) * x_op(1, out.q_star[1]);
    return (x * x).trace().real();
  };
  out.p_star = detail::golden_max(total, 0.0, 1.0, 1e-12);
  out.true_bits = std::log2(total(out.p_star));
  out.gap_bits = out.bound_bits - out.true_bits;
  return out;
}

// The pure input on H achieving the true value: psi* in the D_1 layer with
// weights (sqrt(p), sqrt(1-p)) on the q = 1 basis vectors, tensored with a
// C-leg basis state.
inline cvec strict_gap_optimal_input(double p_star) {
  cvec psi = cvec::Zero(8);
  // layout (k=0, l, beta, gamma): block l starts at 4 l, index beta*2 + gamma
  psi(0) = std::sqrt(p_star);        // l = 0, beta = 0, gamma = 0
  psi(4) = std::sqrt(1.0 - p_star);  // l = 1, beta = 0, gamma = 0
  return psi;
}

}  // namespace idchan
