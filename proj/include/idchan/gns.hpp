#pragma once

// Channels satisfying detailed balance in the GNS inner product of a
// full-rank invariant state: the detailed-balance test, spectral and
// peripheral decomposition of the transfer matrix, eigenvalue-based mixing
// constants, and the divergence sandwich for large even iterates against
// the idempotent peripheral projections.

#include "idchan/channels.hpp"
#include "idchan/closed_form.hpp"
#include "idchan/oracle.hpp"

#include <vector>

namespace idchan {

struct GnsCheck {
  bool symmetric = false;
  double residual = 0.0;  // max violation of the detailed-balance bilinear form
};

// Tests Tr(Phi^*(X) Y delta) = Tr(X Phi^*(Y) delta) over the matrix-unit
// basis. Requires delta to be full rank and invariant under the channel.
inline GnsCheck is_gns_symmetric(const Superoperator& ch, const cmat& delta_in,
                                 double tol = 1e-8) {
  if (!ch.square()) throw std::invalid_argument("is_gns_symmetric: channel not square");
  const int d = ch.dim_in;
  const cmat delta = require_hermitian(delta_in, "is_gns_symmetric delta");
  if (numerical_rank(delta) < d) {
    throw std::invalid_argument("is_gns_symmetric: invariant state must be full rank");
  }
  if (max_abs(apply_channel(ch, delta) - delta) > 1e-9) {
    throw std::invalid_argument("is_gns_symmetric: state is not invariant under the channel");
  }

  // With matrix units X = E_ij, Y = E_kl the two sides reduce to entries of
  // delta * Phi*(E_ij) and Phi*(E_kl) * delta.
  std::vector<cmat> left(static_cast<size_t>(d) * d), right(static_cast<size_t>(d) * d);
  cmat e = cmat::Zero(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      e(i, j) = 1.0;
      const cmat adj = adjoint_apply(ch, e);
      e(i, j) = 0.0;
      left[static_cast<size_t>(i) * d + j] = delta * adj;
      right[static_cast<size_t>(i) * d + j] = adj * delta;
    }
  }
  GnsCheck out;
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      for (int k = 0; k < d; ++k) {
        for (int l = 0; l < d; ++l) {
          // Tr(Phi*(E_ij) E_kl delta) = (delta Phi*(E_ij))(l, k)
          // Tr(E_ij Phi*(E_kl) delta) = (Phi*(E_kl) delta)(j, i)
          const cplx lhs = left[static_cast<size_t>(i) * d + j](l, k);
          const cplx rhs = right[static_cast<size_t>(k) * d + l](j, i);
          out.residual = std::max(out.residual, std::abs(lhs - rhs));
        }
      }
    }
  }
  out.symmetric = out.residual <= tol;
  return out;
}

struct SpectralData {
  Eigen::VectorXcd eigenvalues;       // all transfer eigenvalues
  Superoperator peripheral_projection;  // idempotent channel P_Phi
  double mu = 0.0;                    // largest non-peripheral magnitude
  bool gns_symmetric = false;
  cmat invariant_state;
};

// Spectral split of the transfer matrix at |lambda| >= 1 - tol. For
// GNS-symmetric channels the transfer matrix is similar to a Hermitian one
// through the invariant-state weighting, which keeps the eigenproblem
// well conditioned and the spectrum real; that route is taken whenever a
// full-rank invariant state is available and detailed balance holds.
inline SpectralData spectral_decompose(const Superoperator& ch, double tol = 1e-8) {
  if (!ch.square()) throw std::invalid_argument("spectral_decompose: channel not square");
  const int d = ch.dim_in;
  const Eigen::Index d2 = Eigen::Index(d) * d;

  SpectralData out;

  // invariant state: fixed point of the transfer matrix
  auto inv = common_invariant_state(ch, ch);
  bool hermitian_route = false;
  cmat w, w_inv;  // weighting with T_Phi = W^dagger H W^{-dagger}
  if (inv && inv->full_rank) {
    out.invariant_state = inv->state;
    GnsCheck gns = is_gns_symmetric(ch, inv->state);
    out.gns_symmetric = gns.symmetric;
    if (gns.symmetric) {
      hermitian_route = true;
      const cmat sq = matrix_power(inv->state, 0.5);
      const cmat sq_inv = matrix_power(inv->state, -0.5);
      w = kron(sq.transpose(), cmat::Identity(d, d));
      w_inv = kron(sq_inv.transpose(), cmat::Identity(d, d));
    }
  }

  cmat projector = cmat::Zero(d2, d2);
  double mu = 0.0;
  if (hermitian_route) {
    // adjoint transfer is self-adjoint in the weighted inner product; the
    // residual asymmetry is bounded by the detailed-balance residual
    cmat h = w * ch.transfer.adjoint() * w_inv;
    h = 0.5 * (h + h.adjoint().eval());
    HermitianEig eig = eigh(h, "spectral_decompose");
    out.eigenvalues = eig.values.cast<cplx>();
    cmat peri = cmat::Zero(d2, d2);
    for (Eigen::Index i = 0; i < d2; ++i) {
      const double lam = eig.values[i];
      if (std::abs(lam) >= 1.0 - tol) {
        peri += eig.vectors.col(i) * eig.vectors.col(i).adjoint();
      } else {
        mu = std::max(mu, std::abs(lam));
      }
    }
    // back-transform; P_Phi projects onto the peripheral space of Phi itself
    const cmat p_adj = w_inv * peri * w;
    projector = p_adj.adjoint();
  } else {
    Eigen::ComplexEigenSolver<cmat> solver(ch.transfer);
    if (solver.info() != Eigen::Success) {
      throw std::runtime_error("spectral_decompose: eigensolver failed");
    }
    out.eigenvalues = solver.eigenvalues();
    const cmat v = solver.eigenvectors();
    Eigen::FullPivLU<cmat> lu(v);
    if (!lu.isInvertible()) {
      throw std::runtime_error(
          "spectral_decompose: defective peripheral eigenspace; cannot form the spectral projector");
    }
    const cmat v_inv = lu.inverse();
    for (Eigen::Index i = 0; i < d2; ++i) {
      const double mag = std::abs(out.eigenvalues[i]);
      if (mag >= 1.0 - tol) {
        projector += v.col(i) * v_inv.row(i);
      } else {
        mu = std::max(mu, mag);
      }
    }
  }
  if (mu > 1.0 - 10.0 * tol) {
    throw std::runtime_error("spectral_decompose: spectral gap below resolution");
  }

  out.mu = mu;
  out.peripheral_projection = Superoperator{d, d, projector};
  // the peripheral projection of a channel with real peripheral spectrum in
  // {-1, 1} squares to itself; certify it behaves as an idempotent channel
  IdempotencyCheck idem = is_idempotent(out.peripheral_projection);
  if (!idem.idempotent) {
    throw std::runtime_error("spectral_decompose: peripheral projection not idempotent, residual " +
                             std::to_string(idem.residual));
  }
  const ChannelCheck cc = check_channel(out.peripheral_projection);
  if (cc.cp_violation > 1e-8 || cc.tp_residual > 1e-8) {
    throw std::runtime_error("spectral_decompose: peripheral projection is not a channel");
  }
  const double comm = max_abs(ch.transfer * projector - projector * ch.transfer);
  if (comm > 1e-8) {
    throw std::runtime_error("spectral_decompose: projector does not commute with the channel");
  }
  return out;
}

struct MixingEstimate {
  double mu = 0.0;
  double dcb_bits = 0.0;      // D^cb(id || P_Phi)
  double epsilon = 0.0;       // mu^{2k} * dcb_bits
  double threshold_2k = 0.0;  // even-power threshold log2(dcb) / log2(1/mu)
  bool valid = false;         // 2k above the threshold
};

// epsilon^{2k} = mu^{2k} D^cb(id || P_Phi) with the divergence in bits; the
// estimate is meaningful once 2k exceeds log2(dcb) / log2(1/mu).
inline MixingEstimate mixing_epsilon(const Superoperator& ch, int k, rng_t& rng) {
  if (k < 1) throw std::invalid_argument("mixing_epsilon: k must be positive");
  SpectralData sd = spectral_decompose(ch);
  MixingEstimate out;
  out.mu = sd.mu;
  const BlockIdempotent proj = superop_to_block_idempotent(sd.peripheral_projection, rng);
  out.dcb_bits = d_id_q_cb(proj);
  if (sd.mu == 0.0) {
    out.epsilon = 0.0;
    out.threshold_2k = 0.0;
    out.valid = true;
    return out;
  }
  out.epsilon = std::pow(sd.mu, 2.0 * k) * out.dcb_bits;
  out.threshold_2k =
      out.dcb_bits <= 1.0 ? 0.0 : std::log2(out.dcb_bits) / std::log2(1.0 / sd.mu);
  out.valid = 2.0 * k > out.threshold_2k;
  return out;
}

struct IterateBounds {
  double lower_bits = 0.0;
  double upper_bits = 0.0;
  double peripheral_dcb_bits = 0.0;  // D^cb(P_Phi || P_Psi)
  MixingEstimate phi;
  MixingEstimate psi;
  bool valid = false;  // both 2k thresholds met
  // exponent brackets implied by the sandwich
  double stein_lower = 0.0, stein_upper = 0.0;
  double chernoff_lower = 0.0, chernoff_upper = 0.0;
};

// Divergence sandwich for Phi^{2k} vs Psi^{2k}:
//   D^cb(P_Phi || P_Psi) - log2(1 + eps_Psi) <= D^cb_min <= D^cb_max
//     <= D^cb(P_Phi || P_Psi) + log2(1 + eps_Phi) - log2(1 - eps_Psi).
// Requires GNS symmetry of both channels w.r.t. tau and the peripheral
// image inclusion im(P_Psi^*) in im(P_Phi^*).
inline IterateBounds iterate_bounds(const Superoperator& phi, const Superoperator& psi,
                                    const cmat& tau, int k, rng_t& rng) {
  GnsCheck g1 = is_gns_symmetric(phi, tau);
  GnsCheck g2 = is_gns_symmetric(psi, tau);
  if (!g1.symmetric || !g2.symmetric) {
    throw std::invalid_argument("iterate_bounds: detailed balance fails, residuals " +
                                std::to_string(g1.residual) + ", " + std::to_string(g2.residual));
  }
  SpectralData sp = spectral_decompose(phi);
  SpectralData sq = spectral_decompose(psi);
  if (!inclusion_holds(sp.peripheral_projection, sq.peripheral_projection)) {
    throw std::invalid_argument(
        "iterate_bounds: im(P_Psi^*) not contained in im(P_Phi^*); the peripheral divergence is infinite");
  }

  IterateBounds out;
  out.phi = mixing_epsilon(phi, k, rng);
  out.psi = mixing_epsilon(psi, k, rng);
  out.valid = out.phi.valid && out.psi.valid;

  ThreeLayer t = three_layer_decompose(sp.peripheral_projection, sq.peripheral_projection, rng);
  out.peripheral_dcb_bits = d_p_q_common_cb(t).bits;

  out.lower_bits = out.peripheral_dcb_bits - std::log2(1.0 + out.psi.epsilon);
  out.upper_bits = out.psi.epsilon >= 1.0
                       ? inf()
                       : out.peripheral_dcb_bits + std::log2(1.0 + out.phi.epsilon) -
                             std::log2(1.0 - out.psi.epsilon);
  out.stein_lower = out.lower_bits;
  out.stein_upper = out.upper_bits;
  out.chernoff_lower = out.lower_bits;
  out.chernoff_upper = out.upper_bits;
  return out;
}

}  // namespace idchan
