#pragma once

// Independent verification machinery: brute-force maximization of channel
// divergences over (entangled) pure inputs by restarted finite-difference
// ascent on the unit sphere, the exact Choi-matrix evaluation of the cb
// max-divergence, simplex-grid oracles, diamond-norm lower bounds and
// finite-copy symmetric error estimates.

#include "idchan/channels.hpp"
#include "idchan/closed_form.hpp"
#include "idchan/random.hpp"
#include "idchan/states.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace idchan {

struct OptimizerConfig {
  int restarts = 64;
  int max_iters = 2000;
  double step_tol = 1e-9;
  double value_tol = 1e-8;
  std::uint64_t seed = 0;
};

struct DivergenceKind {
  enum Family { Dmin, Umegaki, Petz, Sandwiched, Dmax } family = Umegaki;
  double alpha = 0.0;

  static DivergenceKind dmin() { return {Dmin, 0.0}; }
  static DivergenceKind umegaki() { return {Umegaki, 0.0}; }
  static DivergenceKind petz(double a) { return {Petz, a}; }
  static DivergenceKind sandwiched(double a) { return {Sandwiched, a}; }
  static DivergenceKind dmax() { return {Dmax, 0.0}; }

  // true when the value can blow up at support boundaries, in which case the
  // ascent runs on a floored second argument
  bool needs_smoothing() const {
    return family == Umegaki || family == Dmax ||
           ((family == Petz || family == Sandwiched) && alpha > 1.0);
  }

  std::string name() const {
    switch (family) {
      case Dmin: return "dmin";
      case Umegaki: return "umegaki";
      case Petz: return "petz";
      case Sandwiched: return "sandwiched";
      case Dmax: return "dmax";
    }
    return "?";
  }
};

inline double evaluate_divergence(const DivergenceKind& kind, const cmat& rho,
                                  const cmat& sigma) {
  switch (kind.family) {
    case DivergenceKind::Dmin: return min_relative_entropy(rho, sigma);
    case DivergenceKind::Umegaki: return relative_entropy(rho, sigma);
    case DivergenceKind::Petz: return petz_renyi(rho, sigma, kind.alpha);
    case DivergenceKind::Sandwiched: return sandwiched_renyi(rho, sigma, kind.alpha);
    case DivergenceKind::Dmax: return max_relative_entropy(rho, sigma);
  }
  throw std::logic_error("evaluate_divergence: unreachable");
}

namespace detail {

// Type-erased channel action; block channels use their structured formula,
// which is much cheaper than the transfer matrix at stabilized dimensions,
// and the identity channel short-circuits entirely.
struct Applier {
  int dim_in = 0;
  int dim_out = 0;
  std::function<cmat(const cmat&)> fn;
};

inline Applier make_applier(const Superoperator& s) {
  Applier a{s.dim_in, s.dim_out, {}};
  if (s.square() &&
      max_abs(s.transfer - cmat::Identity(s.transfer.rows(), s.transfer.cols())) == 0.0) {
    a.fn = [](const cmat& x) { return x; };
  } else {
    a.fn = [t = s.transfer, dout = s.dim_out](const cmat& x) {
      return unvec(t * vec(x), dout, dout);
    };
  }
  return a;
}

inline Applier make_applier(const BlockIdempotent& b) {
  return Applier{b.dim, b.dim, [b](const cmat& x) { return apply_channel(b, x); }};
}

// (id_ref (x) ch) on a Hermitian input, mirroring the lower ref-blocks.
inline cmat apply_to_second_herm(const Applier& ch, const cmat& x, int ref_dim) {
  const int din = ch.dim_in, dout = ch.dim_out;
  cmat out(Eigen::Index(ref_dim) * dout, Eigen::Index(ref_dim) * dout);
  for (int r = 0; r < ref_dim; ++r) {
    for (int c = r; c < ref_dim; ++c) {
      const cmat blk =
          ch.fn(x.block(Eigen::Index(r) * din, Eigen::Index(c) * din, din, din));
      out.block(Eigen::Index(r) * dout, Eigen::Index(c) * dout, dout, dout) = blk;
      if (c != r) {
        out.block(Eigen::Index(c) * dout, Eigen::Index(r) * dout, dout, dout) = blk.adjoint();
      }
    }
  }
  return out;
}

struct SphereResult {
  double value = -1e300;
  cvec point;
  int seed_index = -1;  // index into the seed list, -1 for a random start
};

// Restarted projected ascent of a smooth objective on the unit sphere of
// C^n, with central finite-difference gradients (relative step 1e-6) and
// backtracking line search.
template <typename F>
SphereResult sphere_maximize(const F& objective, Eigen::Index n,
                             const std::vector<cvec>& seeds, const OptimizerConfig& cfg,
                             rng_t& rng) {
  auto eval = [&](const cvec& x) { return objective((x / x.norm()).eval()); };

  SphereResult best;
  const int total = static_cast<int>(seeds.size()) + cfg.restarts;
  for (int start = 0; start < total; ++start) {
    cvec x;
    if (start < static_cast<int>(seeds.size())) {
      x = seeds[start] / seeds[start].norm();
    } else {
      x = random_unit_vector(static_cast<int>(n), rng);
    }
    double v = eval(x);
    if (best.point.size() == 0) best.point = x;
    if (!std::isfinite(v)) {
      if (v > best.value || (std::isinf(v) && v > 0)) {
        best.value = v;
        best.point = x;
        best.seed_index = start < static_cast<int>(seeds.size()) ? start : -1;
        if (std::isinf(v) && v > 0) return best;
      }
      continue;
    }

    double step = 0.1;
    int stale = 0;
    for (int iter = 0; iter < cfg.max_iters; ++iter) {
      // finite-difference gradient in the 2n real coordinates
      cvec grad = cvec::Zero(n);
      bool grad_ok = true;
      for (Eigen::Index i = 0; i < n && grad_ok; ++i) {
        for (int part = 0; part < 2; ++part) {
          const cplx dir = part == 0 ? cplx(1, 0) : cplx(0, 1);
          const double h = 1e-6 * std::max(1.0, std::abs(x[i]));
          cvec xp = x, xm = x;
          xp[i] += h * dir;
          xm[i] -= h * dir;
          const double fp = eval(xp), fm = eval(xm);
          if (!std::isfinite(fp) || !std::isfinite(fm)) {
            grad_ok = false;
            break;
          }
          grad[i] += dir * ((fp - fm) / (2 * h));
        }
      }
      if (!grad_ok) break;
      // project onto the tangent space of the sphere
      grad -= x * x.dot(grad).real();
      const double gnorm = grad.norm();
      if (gnorm < 1e-12) break;

      double s = step;
      double v_new = v;
      cvec x_new = x;
      while (s > cfg.step_tol) {
        cvec trial = x + s * grad / gnorm;
        trial /= trial.norm();
        const double ft = eval(trial);
        if (std::isfinite(ft) && ft > v + 1e-12) {
          x_new = trial;
          v_new = ft;
          break;
        }
        s *= 0.5;
      }
      if (s <= cfg.step_tol) break;
      stale = (v_new - v < cfg.value_tol) ? stale + 1 : 0;
      x = x_new;
      v = v_new;
      step = std::min(2.0 * s, 0.5);
      if (stale >= 12) break;
    }
    if (v > best.value) {
      best.value = v;
      best.point = x;
      best.seed_index = start < static_cast<int>(seeds.size()) ? start : -1;
    }
  }
  return best;
}

}  // namespace detail

struct OracleResult {
  double bits = 0.0;
  bool infinite = false;
  DensityMatrix state;  // achieving input on C^ref (x) C^din
  bool from_seed = false;
  std::uint64_t seed = 0;
};

namespace detail {

inline OracleResult maximize_impl(const DivergenceKind& kind, const Applier& phi,
                                  const Applier& psi, int ref_dim,
                                  const OptimizerConfig& cfg, std::vector<cvec> seeds) {
  if (phi.dim_in != psi.dim_in || phi.dim_out != psi.dim_out) {
    throw std::invalid_argument("maximize_channel_divergence: channel dimensions differ");
  }
  if (ref_dim != 1 && ref_dim != phi.dim_in) {
    throw std::invalid_argument(
        "maximize_channel_divergence: ref_dim must be 1 or the input dimension");
  }
  const Eigen::Index n = Eigen::Index(ref_dim) * phi.dim_in;
  const cmat floor_term = 1e-12 * cmat::Identity(Eigen::Index(ref_dim) * phi.dim_out,
                                                 Eigen::Index(ref_dim) * phi.dim_out);
  const bool smooth = kind.needs_smoothing();

  auto outputs = [&](const cvec& x) {
    const cmat rho_in = x * x.adjoint();
    return std::pair<cmat, cmat>(apply_to_second_herm(phi, rho_in, ref_dim),
                                 apply_to_second_herm(psi, rho_in, ref_dim));
  };
  auto smoothed = [&](const cvec& x) {
    auto [o1, o2] = outputs(x);
    if (smooth) o2 += floor_term;
    return evaluate_divergence(kind, o1, o2);
  };

  if (ref_dim == phi.dim_in) {
    cvec ent = cvec::Zero(n);
    for (int i = 0; i < phi.dim_in; ++i) ent[Eigen::Index(i) * phi.dim_in + i] = 1.0;
    seeds.push_back(ent / ent.norm());
  }

  rng_t rng(cfg.seed);
  detail::SphereResult res = detail::sphere_maximize(smoothed, n, seeds, cfg, rng);

  OracleResult out{0.0, false, DensityMatrix::pure(res.point), res.seed_index >= 0, cfg.seed};
  auto [o1, o2] = outputs(res.point / res.point.norm());
  const double unsmoothed = evaluate_divergence(kind, o1, o2);
  if (std::isinf(unsmoothed) && unsmoothed > 0) {
    out.infinite = true;
    out.bits = inf();
  } else {
    out.bits = unsmoothed;
  }
  return out;
}

}  // namespace detail

// Lower-bounds the channel divergence sup_nu D(Phi(nu) || Psi(nu)) (plain) or
// its stabilized version (ref_dim = input dimension) by ascent over pure
// inputs; quasi-convexity of the divergences makes pure inputs sufficient.
// Alpha > 1 and max families ascend on a floored second argument (1e-12); the
// reported value is always unsmoothed. Extra seeds (for instance the
// formula-optimal input) are tried before the random restarts. Channels may
// be given in superoperator or block form in any combination.
template <typename ChanA, typename ChanB>
OracleResult maximize_channel_divergence(const DivergenceKind& kind, const ChanA& phi,
                                         const ChanB& psi, int ref_dim,
                                         const OptimizerConfig& cfg,
                                         std::vector<cvec> seeds = {}) {
  return detail::maximize_impl(kind, detail::make_applier(phi), detail::make_applier(psi),
                               ref_dim, cfg, std::move(seeds));
}

// Exact evaluation of the cb max-divergence: for D_max the supremum over
// stabilized inputs is attained on the maximally entangled state, so it
// equals the max-divergence of the (normalized) Choi matrices.
inline double choi_dmax_cb(const Superoperator& phi, const Superoperator& psi,
                           Diagnostics* diag = nullptr) {
  if (phi.dim_in != psi.dim_in || phi.dim_out != psi.dim_out) {
    throw std::invalid_argument("choi_dmax_cb: channel dimensions differ");
  }
  const double d = phi.dim_in;
  return max_relative_entropy(choi(phi) / d, choi(psi) / d, diag);
}

// Exhaustive simplex-grid evaluation of the closed-form optima; the grid
// optimum approaches the analytic one at rate O(1/resolution).
inline double grid_simplex_max(SimplexObjective kind, const std::vector<double>& c,
                               int resolution, double alpha = 2.0) {
  const int n = static_cast<int>(c.size());
  if (n < 1 || n > 4) throw std::invalid_argument("grid_simplex_max: list length must be 1..4");
  if (resolution < 1 || resolution > 200) {
    throw std::invalid_argument("grid_simplex_max: resolution must be 1..200");
  }
  const bool minimize = kind == SimplexObjective::Harmonic;
  double best = minimize ? inf() : -inf();
  std::vector<int> counts(n, 0);
  std::vector<double> mu(n, 0.0);

  auto value = [&]() {
    for (int i = 0; i < n; ++i) mu[i] = double(counts[i]) / resolution;
    switch (kind) {
      case SimplexObjective::Softmax: {
        double h = 0.0, lin = 0.0;
        for (int i = 0; i < n; ++i) {
          if (mu[i] > 0) h -= mu[i] * std::log2(mu[i]);
          lin += mu[i] * c[i];
        }
        return h + lin;
      }
      case SimplexObjective::Harmonic: {
        double acc = 0.0;
        for (int i = 0; i < n; ++i) acc += mu[i] * mu[i] * c[i];
        return acc;
      }
      case SimplexObjective::Hoelder: {
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
          acc += std::pow(mu[i], 1.0 / alpha) * std::pow(c[i], (alpha - 1.0) / alpha);
        }
        return acc <= 0.0 ? -inf() : (alpha / (alpha - 1.0)) * std::log2(acc);
      }
    }
    return 0.0;
  };

  // enumerate all weak compositions of `resolution` into n parts
  std::function<void(int, int)> walk = [&](int idx, int remaining) {
    if (idx == n - 1) {
      counts[idx] = remaining;
      const double v = value();
      if (minimize ? v < best : v > best) best = v;
      return;
    }
    for (int kk = 0; kk <= remaining; ++kk) {
      counts[idx] = kk;
      walk(idx + 1, remaining - kk);
    }
  };
  walk(0, resolution);
  return best;
}

// Lower bound on the diamond norm: the trace distance of stabilized outputs,
// maximized over pure inputs by the same ascent machinery.
template <typename ChanA, typename ChanB>
double diamond_lower(const ChanA& phi_in, const ChanB& psi_in, const OptimizerConfig& cfg) {
  const detail::Applier phi = detail::make_applier(phi_in);
  const detail::Applier psi = detail::make_applier(psi_in);
  if (phi.dim_in != psi.dim_in || phi.dim_out != psi.dim_out) {
    throw std::invalid_argument("diamond_lower: channel dimensions differ");
  }
  const int ref = phi.dim_in;
  const Eigen::Index n = Eigen::Index(ref) * phi.dim_in;
  auto objective = [&](const cvec& x) {
    const cmat rho_in = x * x.adjoint();
    return trace_norm(detail::apply_to_second_herm(phi, rho_in, ref) -
                      detail::apply_to_second_herm(psi, rho_in, ref));
  };
  std::vector<cvec> seeds;
  cvec ent = cvec::Zero(n);
  for (int i = 0; i < ref; ++i) ent[Eigen::Index(i) * ref + i] = 1.0;
  seeds.push_back(ent / ent.norm());
  rng_t rng(cfg.seed);
  return detail::sphere_maximize(objective, n, seeds, cfg, rng).value;
}

// Upper bound on the n-copy symmetric error probability via the diamond-norm
// lower bound: (1 - diamond_lower / 2) / 2.
inline double finite_n_perr(const BlockIdempotent& phi, const BlockIdempotent& psi, int n,
                            const OptimizerConfig& cfg) {
  if (n < 1 || n > 2) throw std::invalid_argument("finite_n_perr: n must be 1 or 2");
  return 0.5 * (1.0 - 0.5 * diamond_lower(tensor_power(phi, n), tensor_power(psi, n), cfg));
}

// Randomized check of rank(Phi(X)) >= rank(X) for unital channels.
inline bool rank_nondecreasing_check(const Superoperator& ch, int trials, rng_t& rng) {
  if (unitality_residual(ch) > 1e-9) {
    throw std::invalid_argument("rank_nondecreasing_check: channel not unital");
  }
  for (int t = 0; t < trials; ++t) {
    const int rank = 1 + static_cast<int>(rng() % ch.dim_in);
    const cmat x = random_psd(ch.dim_in, rank, rng);
    if (numerical_rank(apply_channel(ch, x)) < numerical_rank(x)) return false;
  }
  return true;
}

}  // namespace idchan
