#pragma once

// Named verification suites behind the command-line `verify` command and the
// acceptance harness: divergence ordering, formula-vs-oracle collapse,
// cb additivity, the pinching certificate, simplex-grid cross-checks and the
// iterate sandwich for detailed-balance channels.

#include "idchan/closed_form.hpp"
#include "idchan/gns.hpp"
#include "idchan/oracle.hpp"
#include "idchan/random.hpp"

#include <sstream>
#include <string>
#include <vector>

namespace idchan {

struct CheckResult {
  std::string name;
  bool pass = false;
  double measured = 0.0;  // the governing residual / slack / gap
  std::string detail;
};

struct SuiteResult {
  std::string suite;
  std::vector<CheckResult> checks;
  bool pass() const {
    for (const auto& c : checks) {
      if (!c.pass) return false;
    }
    return !checks.empty();
  }
};

// ---------------------------------------------------------------------------
// seeded instance generators
// ---------------------------------------------------------------------------

inline BlockIdempotent random_block_channel(rng_t& rng, int max_blocks, int max_d,
                                            int max_total_dim) {
  for (;;) {
    BlockIdempotent bi;
    const int nl = 1 + static_cast<int>(rng() % max_blocks);
    bi.dim = 0;
    for (int l = 0; l < nl; ++l) {
      const int da = 1 + static_cast<int>(rng() % max_d);
      const int db = 1 + static_cast<int>(rng() % max_d);
      bi.blocks.push_back(Block{da, db, random_state(db, rng, 0.05)});
      bi.dim += da * db;
    }
    if (bi.dim > max_total_dim) continue;
    bi.basis = random_unitary(bi.dim, rng);
    return bi;
  }
}

inline ThreeLayer random_common_invariant_instance(rng_t& rng, int max_kl, int max_dim,
                                                   int max_total_dim) {
  for (;;) {
    ThreeLayer t;
    t.K = 1 + static_cast<int>(rng() % max_kl);
    t.L = 1 + static_cast<int>(rng() % max_kl);
    t.a.resize(t.L);
    t.c.resize(t.K);
    t.b.assign(t.K, std::vector<int>(t.L, 0));
    for (int l = 0; l < t.L; ++l) t.a[l] = 1 + static_cast<int>(rng() % max_dim);
    for (int k = 0; k < t.K; ++k) t.c[k] = 1 + static_cast<int>(rng() % max_dim);
    for (int k = 0; k < t.K; ++k) {
      for (int l = 0; l < t.L; ++l) t.b[k][l] = static_cast<int>(rng() % (max_dim + 1));
    }
    for (int l = 0; l < t.L; ++l) {
      if (t.e_dim(l) == 0) t.b[0][l] = 1;
    }
    for (int k = 0; k < t.K; ++k) {
      if (t.d_dim(k) == 0) t.b[k][0] = 1;
    }
    if (t.total_dim() > max_total_dim || t.total_dim() < 2) continue;
    t.basis_change = random_unitary(t.total_dim(), rng);
    for (int k = 0; k < t.K; ++k) t.delta.push_back(random_state(t.c[k], rng, 0.05));
    t.common_invariant = true;
    t.p.assign(t.K, std::vector<double>(t.L, 0.0));
    t.tau.assign(t.K, std::vector<cmat>(t.L));
    for (int l = 0; l < t.L; ++l) {
      double norm = 0.0;
      for (int k = 0; k < t.K; ++k) {
        if (t.b[k][l] == 0) continue;
        t.p[k][l] = 0.2 + double(rng() % 100) / 100.0;
        norm += t.p[k][l];
        t.tau[k][l] = random_state(t.b[k][l], rng, 0.05);
      }
      cmat omega = cmat::Zero(t.e_dim(l), t.e_dim(l));
      Eigen::Index off = 0;
      for (int k = 0; k < t.K; ++k) {
        if (t.b[k][l] == 0) continue;
        t.p[k][l] /= norm;
        const Eigen::Index sz = Eigen::Index(t.b[k][l]) * t.c[k];
        omega.block(off, off, sz, sz) = t.p[k][l] * kron(t.tau[k][l], t.delta[k]);
        off += sz;
      }
      t.omega.push_back(omega);
    }
    return t;
  }
}

namespace detail {

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// ordering: the divergence chain and the one-shot hypothesis-testing sandwich
// ---------------------------------------------------------------------------

inline SuiteResult run_ordering_suite(int pairs, std::uint64_t seed) {
  rng_t rng(seed);
  SuiteResult out{"ordering", {}};
  double worst_chain = inf(), worst_sandwich = inf();
  for (int trial = 0; trial < pairs; ++trial) {
    const int d = 2 + static_cast<int>(rng() % 3);
    const cmat rho = random_state(d, rng, 0.01);
    const cmat sigma = random_state(d, rng, 0.01);
    const double vals[7] = {min_relative_entropy(rho, sigma), petz_renyi(rho, sigma, 0.3),
                            petz_renyi(rho, sigma, 0.7),     relative_entropy(rho, sigma),
                            sandwiched_renyi(rho, sigma, 1.5), sandwiched_renyi(rho, sigma, 3.0),
                            max_relative_entropy(rho, sigma)};
    for (int i = 0; i + 1 < 7; ++i) worst_chain = std::min(worst_chain, vals[i + 1] - vals[i]);
    for (double eps : {0.1, 0.5, 0.9}) {
      const double dh = hypothesis_testing(rho, sigma, eps).bits;
      const double lower = petz_renyi(rho, sigma, 0.5) - std::log2(1.0 / eps);
      const double upper =
          sandwiched_renyi(rho, sigma, 2.0) + 2.0 * std::log2(1.0 / (1.0 - eps));
      worst_sandwich = std::min({worst_sandwich, dh - lower, upper - dh});
    }
  }
  out.checks.push_back({"divergence chain slack", worst_chain >= -1e-9, worst_chain,
                        std::to_string(pairs) + " random full-rank pairs, dims 2-4"});
  out.checks.push_back({"one-shot sandwich slack", worst_sandwich >= -1e-9, worst_sandwich,
                        "alpha = 1/2, alpha' = 2, eps in {0.1, 0.5, 0.9}"});
  return out;
}

// ---------------------------------------------------------------------------
// collapse: oracle vs closed form for both theorems
// ---------------------------------------------------------------------------

inline SuiteResult run_collapse_id_suite(int instances, std::uint64_t seed) {
  rng_t rng(seed);
  SuiteResult out{"collapse-id", {}};
  double worst_seeded = 0.0, worst_excess = -inf();
  for (int trial = 0; trial < instances; ++trial) {
    const BlockIdempotent q = random_block_channel(rng, 3, 3, 6);
    const Superoperator id_d = identity_superop(q.dim);
    const double formula = d_id_q_cb(q);
    const DensityMatrix opt = optimal_input_id_q(q, true);
    HermitianEig opt_eig = eigh(opt.mat());
    const cvec seed_vec = opt_eig.vectors.col(0);

    OptimizerConfig cfg;
    cfg.restarts = 2;
    cfg.max_iters = 12;
    cfg.seed = seed + 1000 + trial;
    for (auto kind : {DivergenceKind::dmin(), DivergenceKind::umegaki(), DivergenceKind::dmax()}) {
      OptimizerConfig seeded_cfg = cfg;
      seeded_cfg.restarts = 0;
      seeded_cfg.max_iters = 4;
      const auto seeded =
          maximize_channel_divergence(kind, id_d, q, q.dim, seeded_cfg, {seed_vec});
      worst_seeded = std::max(worst_seeded, std::abs(seeded.bits - formula));
      const auto random_run = maximize_channel_divergence(kind, id_d, q, q.dim, cfg);
      worst_excess = std::max(worst_excess, random_run.bits - formula);
    }
  }
  out.checks.push_back({"seeded oracle hits the formula", worst_seeded <= 1e-6, worst_seeded,
                        std::to_string(instances) + " random instances, dmin/umegaki/dmax"});
  out.checks.push_back({"random-start oracle never exceeds", worst_excess <= 1e-6, worst_excess,
                        "largest oracle - formula over all runs"});
  return out;
}

inline SuiteResult run_collapse_common_suite(int instances, std::uint64_t seed) {
  rng_t rng(seed);
  SuiteResult out{"collapse-common", {}};
  double worst_choi = 0.0, worst_additivity = 0.0, worst_achieve = 0.0;
  for (int trial = 0; trial < instances; ++trial) {
    const ThreeLayer t = random_common_invariant_instance(rng, 2, 2, 10);
    const double formula_cb = d_p_q_common_cb(t).bits;
    const Superoperator p = to_superoperator(three_layer_p_channel(t));
    const Superoperator q = three_layer_q_channel(t);
    worst_choi = std::max(worst_choi, std::abs(choi_dmax_cb(p, q) - formula_cb));
    worst_additivity = std::max(
        worst_additivity, std::abs(d_p_q_common_cb(tensor_square_data(t)).bits - 2 * formula_cb));
    const DensityMatrix rho = optimal_input_p_q(t);
    const double achieved =
        min_relative_entropy(apply_channel(p, rho.mat()), apply_channel(q, rho.mat()));
    worst_achieve = std::max(worst_achieve, std::abs(achieved - d_p_q_common(t).bits));
  }
  out.checks.push_back({"choi dmax equals the cb formula", worst_choi <= 1e-8, worst_choi,
                        std::to_string(instances) + " random common-invariant instances"});
  out.checks.push_back({"two-copy cb value doubles", worst_additivity <= 1e-8, worst_additivity,
                        "data-level tensor square"});
  out.checks.push_back({"achieving state evaluates to the formula", worst_achieve <= 1e-7,
                        worst_achieve, "dmin at the constructed input"});
  return out;
}

inline SuiteResult run_collapse_suite(int id_instances, int common_instances,
                                      std::uint64_t seed) {
  SuiteResult a = run_collapse_id_suite(id_instances, seed);
  SuiteResult b = run_collapse_common_suite(common_instances, seed + 17);
  SuiteResult out{"collapse", a.checks};
  out.checks.insert(out.checks.end(), b.checks.begin(), b.checks.end());
  return out;
}

// ---------------------------------------------------------------------------
// additivity of the cb closed forms
// ---------------------------------------------------------------------------

inline SuiteResult run_additivity_suite(int trials, std::uint64_t seed) {
  rng_t rng(seed);
  SuiteResult out{"additivity", {}};
  double worst_id = 0.0, worst_common = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    const BlockIdempotent q = random_block_channel(rng, 2, 2, 8);
    worst_id =
        std::max(worst_id, std::abs(d_id_q_cb(tensor_power(q, 2)) - 2.0 * d_id_q_cb(q)));
    const ThreeLayer t = random_common_invariant_instance(rng, 2, 2, 8);
    worst_common = std::max(worst_common, std::abs(d_p_q_common_cb(tensor_square_data(t)).bits -
                                                   2.0 * d_p_q_common_cb(t).bits));
  }
  out.checks.push_back({"identity-vs-channel cb additivity", worst_id <= 1e-9, worst_id,
                        std::to_string(trials) + " tensor squares"});
  out.checks.push_back({"common-invariant cb additivity", worst_common <= 1e-9, worst_common,
                        std::to_string(trials) + " data-level squares"});
  return out;
}

// ---------------------------------------------------------------------------
// pinching certificate: 2^{Dcb} Choi(Q) dominates Choi(id), tightly
// ---------------------------------------------------------------------------

inline SuiteResult run_pinching_suite(int trials, std::uint64_t seed) {
  rng_t rng(seed);
  SuiteResult out{"pinching", {}};
  double worst_dom = inf(), worst_tight = inf();
  for (int trial = 0; trial < trials; ++trial) {
    const BlockIdempotent q = random_block_channel(rng, 2, 2, 8);
    const double t_lin = std::exp2(d_id_q_cb(q));
    const cmat jq = choi(q);
    const cmat jid = choi(identity_superop(q.dim));
    worst_dom = std::min(worst_dom, eigh(t_lin * jq - jid).values.minCoeff());
    worst_tight = std::min(worst_tight, -eigh((t_lin - 1e-3) * jq - jid).values.minCoeff());
  }
  out.checks.push_back({"domination at the formula constant", worst_dom >= -1e-8, worst_dom,
                        "smallest eigenvalue of 2^Dcb J_Q - J_id"});
  out.checks.push_back({"tightness below the constant", worst_tight > 0.0, worst_tight,
                        "shifting the constant by 1e-3 breaks positivity"});
  return out;
}

// ---------------------------------------------------------------------------
// simplex grids vs closed forms
// ---------------------------------------------------------------------------

inline SuiteResult run_simplex_suite(int sets, int resolution, std::uint64_t seed) {
  rng_t rng(seed);
  SuiteResult out{"simplex", {}};
  auto run_kind = [&](SimplexObjective kind, const char* name, bool positive) {
    double worst = 0.0;
    for (int trial = 0; trial < sets; ++trial) {
      const int n = 2 + static_cast<int>(rng() % 3);
      std::vector<double> c;
      for (int i = 0; i < n; ++i) {
        c.push_back(positive ? 0.3 + double(rng() % 100) / 40.0
                             : -1.0 + double(rng() % 100) / 25.0);
      }
      const double grid = grid_simplex_max(kind, c, resolution, 2.0);
      const double formula = simplex_optimum(kind, c, 2.0).value;
      worst = std::max(worst, std::abs(grid - formula));
    }
    out.checks.push_back({std::string(name) + " grid matches the closed form", worst <= 1e-3,
                          worst, std::to_string(sets) + " random coefficient sets"});
  };
  run_kind(SimplexObjective::Softmax, "softmax", false);
  run_kind(SimplexObjective::Harmonic, "harmonic", true);
  run_kind(SimplexObjective::Hoelder, "hoelder", true);
  return out;
}

// ---------------------------------------------------------------------------
// iterate sandwich for the canonical detailed-balance family
// ---------------------------------------------------------------------------

inline SuiteResult run_gns_suite(std::uint64_t seed) {
  rng_t rng(seed);
  SuiteResult out{"gns", {}};
  BlockIdempotent deph;
  deph.dim = 2;
  deph.basis = cmat::Identity(2, 2);
  deph.blocks = {Block{1, 1, cmat::Identity(1, 1)}, Block{1, 1, cmat::Identity(1, 1)}};
  const Superoperator deph_s = to_superoperator(deph);
  const Superoperator id2 = identity_superop(2);
  const Superoperator phi{2, 2, 0.5 * (id2.transfer + deph_s.transfer)};
  const cmat tau = 0.5 * cmat::Identity(2, 2);

  double prev_width = inf();
  bool inside = true, widths_ok = true, monotone = true;
  for (int k : {1, 2, 3}) {
    const IterateBounds b = iterate_bounds(phi, deph_s, tau, k, rng);
    const double middle = choi_dmax_cb(superop_power(phi, 2 * k), deph_s);
    inside = inside && middle >= b.lower_bits - 1e-9 && middle <= b.upper_bits + 1e-9;
    const double width = b.upper_bits - b.lower_bits;
    widths_ok = widths_ok && width <= std::log2(1.0 + std::pow(2.0, -2.0 * k)) + 1e-12;
    monotone = monotone && width <= prev_width + 1e-12;
    prev_width = width;
  }
  out.checks.push_back({"oracle middle value inside the sandwich", inside, 0.0,
                        "2k in {2, 4, 6} for the mixture-vs-projection pair"});
  out.checks.push_back({"bracket width within the mixing budget", widths_ok, prev_width,
                        "upper - lower <= log2(1 + 2^{-2k})"});
  out.checks.push_back({"bracket width shrinks monotonically", monotone, prev_width, ""});
  return out;
}

}  // namespace idchan
