#pragma once

// State-level divergences: Umegaki relative entropy, Petz and sandwiched
// Renyi families, min/max relative entropies, hypothesis-testing relative
// entropy with an exact Neyman-Pearson optimizer, Chernoff divergence and
// the Helstrom error.
//
// All values are reported in bits (base-2 logarithms). +infinity is an
// ordinary double infinity here; serialization renders it as "inf".

#include "idchan/matrix.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace idchan {

struct Diagnostics {
  std::vector<std::string> warnings;
  void warn(std::string msg) { warnings.push_back(std::move(msg)); }
};

// Positive semi-definite, unit-trace Hermitian matrix.
class DensityMatrix {
 public:
  explicit DensityMatrix(const cmat& m) : mat_(require_hermitian(m, "DensityMatrix")) {
    HermitianEig eig = eigh(mat_, "DensityMatrix");
    if (eig.values.size() == 0) throw std::invalid_argument("DensityMatrix: empty");
    if (eig.values.minCoeff() < -1e-10) {
      throw std::invalid_argument("DensityMatrix: not PSD, min eigenvalue " +
                                  std::to_string(eig.values.minCoeff()));
    }
    const double tr = mat_.trace().real();
    if (std::abs(tr - 1.0) > 1e-10) {
      throw std::invalid_argument("DensityMatrix: trace " + std::to_string(tr) +
                                  " differs from 1");
    }
  }

  static DensityMatrix pure(const cvec& psi) {
    cvec v = psi / psi.norm();
    return DensityMatrix(v * v.adjoint());
  }

  const cmat& mat() const { return mat_; }
  int dim() const { return static_cast<int>(mat_.rows()); }

 private:
  cmat mat_;
};

namespace detail {

inline void check_same_dim(const cmat& rho, const cmat& sigma, const char* what) {
  if (rho.rows() != sigma.rows() || rho.cols() != sigma.cols()) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch");
  }
}

// Mass of rho outside the support of sigma (given sigma's eigensystem).
inline double mass_outside_support(const cmat& rho, const HermitianEig& sig) {
  const double top = sig.values.size() == 0 ? 0.0 : sig.values.cwiseAbs().maxCoeff();
  double outside = 0.0;
  for (Eigen::Index i = 0; i < sig.values.size(); ++i) {
    if (std::abs(sig.values[i]) <= kRankTol * top) {
      outside += (sig.vectors.col(i).adjoint() * rho * sig.vectors.col(i))(0, 0).real();
    }
  }
  return outside;
}

inline bool support_contained(const cmat& rho, const HermitianEig& sig,
                              Diagnostics* diag = nullptr) {
  const double outside = mass_outside_support(rho, sig);
  const bool ok = outside <= 1e-9;
  if (diag && ok && outside > 1e-12) {
    diag->warn("near-degenerate support: sigma-kernel mass " + std::to_string(outside));
  }
  return ok;
}

}  // namespace detail

// Umegaki relative entropy D(rho||sigma) in bits; +inf on support violation.
inline double relative_entropy(const cmat& rho_in, const cmat& sigma_in,
                               Diagnostics* diag = nullptr) {
  detail::check_same_dim(rho_in, sigma_in, "relative_entropy");
  const cmat rho = require_hermitian(rho_in, "relative_entropy rho");
  const cmat sigma = require_hermitian(sigma_in, "relative_entropy sigma");
  HermitianEig sig = eigh(sigma);
  if (!detail::support_contained(rho, sig, diag)) return inf();

  HermitianEig re = eigh(rho);
  const double rtop = re.values.cwiseAbs().maxCoeff();
  double h_rho = 0.0;  // Tr rho log2 rho
  for (Eigen::Index i = 0; i < re.values.size(); ++i) {
    const double lam = re.values[i];
    if (lam > kRankTol * rtop) h_rho += lam * std::log2(lam);
  }
  const cmat log_sigma = matrix_function(
      sigma, [](double x) { return std::log2(x); }, true, "relative_entropy log");
  const double cross = (rho * log_sigma).trace().real();
  return h_rho - cross;
}

// Petz Renyi relative entropy D_alpha, alpha in (0,1) u (1,inf).
inline double petz_renyi(const cmat& rho_in, const cmat& sigma_in, double alpha,
                         Diagnostics* diag = nullptr) {
  detail::check_same_dim(rho_in, sigma_in, "petz_renyi");
  if (alpha <= 0.0 || alpha == 1.0) {
    throw std::invalid_argument("petz_renyi: alpha must lie in (0,1) or (1,inf)");
  }
  const cmat rho = require_hermitian(rho_in, "petz_renyi rho");
  const cmat sigma = require_hermitian(sigma_in, "petz_renyi sigma");
  if (alpha > 1.0) {
    HermitianEig sig = eigh(sigma);
    if (!detail::support_contained(rho, sig, diag)) return inf();
  }
  const cmat rho_a = matrix_power(rho, alpha);
  const cmat sigma_b = matrix_power(sigma, 1.0 - alpha);
  const double q = (rho_a * sigma_b).trace().real();
  if (alpha < 1.0 && q <= 1e-14) return inf();  // rho sigma = 0
  return std::log2(q) / (alpha - 1.0);
}

// Sandwiched Renyi relative entropy D-tilde_alpha.
inline double sandwiched_renyi(const cmat& rho_in, const cmat& sigma_in, double alpha,
                               Diagnostics* diag = nullptr) {
  detail::check_same_dim(rho_in, sigma_in, "sandwiched_renyi");
  if (alpha <= 0.0 || alpha == 1.0) {
    throw std::invalid_argument("sandwiched_renyi: alpha must lie in (0,1) or (1,inf)");
  }
  const cmat rho = require_hermitian(rho_in, "sandwiched_renyi rho");
  const cmat sigma = require_hermitian(sigma_in, "sandwiched_renyi sigma");
  if (alpha > 1.0) {
    HermitianEig sig = eigh(sigma);
    if (!detail::support_contained(rho, sig, diag)) return inf();
  }
  const double expo = (1.0 - alpha) / (2.0 * alpha);
  const cmat s = matrix_power(sigma, expo);
  const cmat g = require_hermitian((s * rho * s).eval(), "sandwiched_renyi core");
  HermitianEig ge = eigh(g);
  // Tr g^alpha in the log domain so large alpha does not overflow
  const double top = std::max(ge.values.maxCoeff(), 0.0);
  if (top <= 0.0) return alpha < 1.0 ? inf() : -inf();
  double scaled = 0.0;
  for (Eigen::Index i = 0; i < ge.values.size(); ++i) {
    const double lam = std::max(ge.values[i], 0.0);
    if (lam > 0.0) scaled += std::pow(lam / top, alpha);
  }
  const double log2_q = alpha * std::log2(top) + std::log2(scaled);
  if (alpha < 1.0 && log2_q < -45.0) return inf();  // rho sigma = 0 numerically
  return log2_q / (alpha - 1.0);
}

// Max-relative entropy D_max = log2 ||sigma^{-1/2} rho sigma^{-1/2}||_inf.
inline double max_relative_entropy(const cmat& rho_in, const cmat& sigma_in,
                                   Diagnostics* diag = nullptr) {
  detail::check_same_dim(rho_in, sigma_in, "max_relative_entropy");
  const cmat rho = require_hermitian(rho_in, "max_relative_entropy rho");
  const cmat sigma = require_hermitian(sigma_in, "max_relative_entropy sigma");
  HermitianEig sig = eigh(sigma);
  if (!detail::support_contained(rho, sig, diag)) return inf();
  const cmat si = matrix_power(sigma, -0.5);
  const cmat core = require_hermitian((si * rho * si).eval(), "max_relative_entropy core");
  const double top = eigh(core).values.maxCoeff();
  if (top <= 0.0) return -inf();
  return std::log2(top);
}

// Min-relative entropy D_min = -log2 Tr(Pi_rho sigma); +inf when rho sigma = 0.
inline double min_relative_entropy(const cmat& rho_in, const cmat& sigma_in,
                                   Diagnostics* diag = nullptr) {
  (void)diag;
  detail::check_same_dim(rho_in, sigma_in, "min_relative_entropy");
  const cmat rho = require_hermitian(rho_in, "min_relative_entropy rho");
  const cmat sigma = require_hermitian(sigma_in, "min_relative_entropy sigma");
  const cmat proj = support_projector(rho);
  const double overlap = (proj * sigma).trace().real();
  if (overlap <= 1e-14) return inf();
  return -std::log2(overlap);
}

// Optimal Neyman-Pearson test: M = P_+ + gamma P_0 of rho - t sigma.
struct NeymanPearsonTest {
  double threshold = 0.0;        // t
  double boundary_weight = 0.0;  // gamma in [0,1]
  cmat M;                        // 0 <= M <= 1, Tr(M rho) = 1 - eps
};

struct HypothesisTestingResult {
  double bits = 0.0;
  bool infinite = false;
  NeymanPearsonTest test;
};

// Exact optimum of min Tr(M sigma) subject to Tr(M rho) >= 1 - eps,
// 0 <= M <= 1. The threshold t is bisected until the target type-I success
// 1 - eps is bracketed; the boundary eigenspace weight gamma then meets the
// constraint exactly.
inline HypothesisTestingResult hypothesis_testing(const cmat& rho_in,
                                                  const cmat& sigma_in, double eps) {
  detail::check_same_dim(rho_in, sigma_in, "hypothesis_testing");
  if (eps <= 0.0 || eps >= 1.0) {
    throw std::invalid_argument("hypothesis_testing: eps must lie in (0,1)");
  }
  const cmat rho = require_hermitian(rho_in, "hypothesis_testing rho");
  const cmat sigma = require_hermitian(sigma_in, "hypothesis_testing sigma");
  const Eigen::Index d = rho.rows();
  const double target = 1.0 - eps;

  // Tr(P_+(t) rho), with P_+ the strictly-positive eigenspace of rho - t sigma.
  auto success = [&](double t, double ktol) {
    HermitianEig eig = eigh((rho - t * sigma).eval(), "hypothesis_testing");
    double s = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
      if (eig.values[i] > ktol) {
        s += (eig.vectors.col(i).adjoint() * rho * eig.vectors.col(i))(0, 0).real();
      }
    }
    return s;
  };

  HermitianEig sig = eigh(sigma);
  const double sig_top = sig.values.cwiseAbs().maxCoeff();
  double lam_min_pos = 0.0;
  for (Eigen::Index i = d - 1; i >= 0; --i) {
    if (sig.values[i] > kRankTol * sig_top) {
      lam_min_pos = sig.values[i];
      break;
    }
  }
  if (lam_min_pos <= 0.0) {
    // sigma = 0: every feasible test has Tr(M sigma) = 0
    HypothesisTestingResult res;
    res.infinite = true;
    res.bits = inf();
    res.test.M = cmat::Identity(d, d) * target;
    res.test.boundary_weight = target;
    return res;
  }
  const double t_max = 2.0 / lam_min_pos;

  double lo = 0.0, hi = t_max;  // success(lo) >= target, aim: success(hi) < target
  const double base_ktol = 1e-13 * std::max(max_abs(rho) + t_max * max_abs(sigma), 1.0);
  if (success(hi, base_ktol) >= target) {
    // rho keeps enough mass outside supp(sigma); optimum is beta = 0
    HypothesisTestingResult res;
    res.infinite = true;
    res.bits = inf();
    HermitianEig eig = eigh((rho - hi * sigma).eval());
    cmat M = cmat::Zero(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
      if (eig.values[i] > base_ktol) M += eig.vectors.col(i) * eig.vectors.col(i).adjoint();
    }
    res.test.threshold = hi;
    res.test.M = M;
    return res;
  }
  for (int it = 0; it < 200 && (hi - lo) > 1e-13 * t_max; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (success(mid, base_ktol) >= target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }

  // Assemble the test at the bracket midpoint; the kernel tolerance absorbs
  // the eigenvalue that crosses zero inside the bracket. Widen if gamma
  // fails to land in [0,1].
  const double t_star = 0.5 * (lo + hi);
  double ktol = std::max(base_ktol, 4.0 * (hi - lo) * op_norm(sigma));
  for (int attempt = 0; attempt < 12; ++attempt) {
    HermitianEig eig = eigh((rho - t_star * sigma).eval());
    cmat p_plus = cmat::Zero(d, d), p_zero = cmat::Zero(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
      if (eig.values[i] > ktol) {
        p_plus += eig.vectors.col(i) * eig.vectors.col(i).adjoint();
      } else if (eig.values[i] > -ktol) {
        p_zero += eig.vectors.col(i) * eig.vectors.col(i).adjoint();
      }
    }
    const double s_plus = (p_plus * rho).trace().real();
    const double s_zero = (p_zero * rho).trace().real();
    double gamma = 0.0;
    // In the non-commuting case the success probability crosses the target
    // continuously (the positive eigenspace rotates without an eigenvalue
    // hitting zero); the tight bisection bracket then already meets the
    // constraint and no boundary weight is needed.
    if (target - s_plus > 1e-10) {
      if (s_zero <= 0.0) {
        ktol *= 10.0;
        continue;
      }
      gamma = (target - s_plus) / s_zero;
    }
    if (gamma < -1e-9 || gamma > 1.0 + 1e-9) {
      ktol *= 10.0;
      continue;
    }
    gamma = std::min(std::max(gamma, 0.0), 1.0);
    HypothesisTestingResult res;
    res.test.threshold = t_star;
    res.test.boundary_weight = gamma;
    res.test.M = p_plus + gamma * p_zero;
    const double beta = (res.test.M * sigma).trace().real();
    if (beta <= 1e-300) {
      res.infinite = true;
      res.bits = inf();
    } else {
      res.bits = -std::log2(beta);
    }
    return res;
  }
  throw std::runtime_error("hypothesis_testing: could not bracket the boundary eigenspace");
}

// Quantum Chernoff divergence sup_{alpha in (0,1)} -log2 Tr(rho^a sigma^{1-a}).
// The map alpha -> Tr(rho^a sigma^{1-a}) is log-convex, so the objective is
// unimodal and golden-section search applies.
inline double chernoff_divergence(const cmat& rho_in, const cmat& sigma_in) {
  detail::check_same_dim(rho_in, sigma_in, "chernoff_divergence");
  const cmat rho = require_hermitian(rho_in, "chernoff rho");
  const cmat sigma = require_hermitian(sigma_in, "chernoff sigma");
  auto q = [&](double a) {
    const cmat ra = matrix_power(rho, a);
    const cmat sb = matrix_power(sigma, 1.0 - a);
    return (ra * sb).trace().real();
  };
  if (q(0.5) <= 1e-14) return inf();  // orthogonal pair

  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = 1e-4, b = 1.0 - 1e-4;
  double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
  double f1 = -std::log2(q(x1)), f2 = -std::log2(q(x2));
  while (b - a > 1e-8) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + gr * (b - a);
      f2 = -std::log2(q(x2));
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - gr * (b - a);
      f1 = -std::log2(q(x1));
    }
  }
  const double inner = std::max(f1, f2);
  // the supremum may sit at the (open) interval ends
  return std::max({inner, -std::log2(q(1e-4)), -std::log2(q(1.0 - 1e-4))});
}

// Symmetric one-shot error (1 - ||rho - sigma||_1 / 2) / 2.
inline double helstrom_error(const cmat& rho, const cmat& sigma) {
  detail::check_same_dim(rho, sigma, "helstrom_error");
  return 0.5 * (1.0 - 0.5 * trace_norm(rho - sigma));
}

}  // namespace idchan
