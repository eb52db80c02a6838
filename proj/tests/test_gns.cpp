#include "idchan/gns.hpp"

#include "idchan/random.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace idchan;

namespace {

BlockIdempotent qubit_dephasing() {
  BlockIdempotent bi;
  bi.dim = 2;
  bi.basis = cmat::Identity(2, 2);
  bi.blocks = {Block{1, 1, cmat::Identity(1, 1)}, Block{1, 1, cmat::Identity(1, 1)}};
  return bi;
}

// convex mixture s id + (1-s) dephasing
Superoperator dephasing_mixture(double s) {
  const Superoperator deph = to_superoperator(qubit_dephasing());
  const Superoperator id2 = identity_superop(2);
  return Superoperator{2, 2, s * id2.transfer + (1.0 - s) * deph.transfer};
}

}  // namespace

TEST_CASE("GNS detailed balance test") {
  rng_t rng(501);
  SECTION("identity channel is symmetric for any full-rank state") {
    cmat tau = random_state(2, rng, 0.05);
    auto check = is_gns_symmetric(identity_superop(2), tau);
    REQUIRE(check.symmetric);
    REQUIRE(check.residual < 1e-12);
  }
  SECTION("trace-preserving conditional expectation with the mixed state") {
    auto check = is_gns_symmetric(to_superoperator(qubit_dephasing()),
                                  0.5 * cmat::Identity(2, 2));
    REQUIRE(check.symmetric);
    REQUIRE(check.residual < 1e-10);
  }
  SECTION("phase-gate conjugation is not symmetric") {
    cmat u = cmat::Identity(2, 2);
    u(1, 1) = std::exp(cplx(0, 0.25 * M_PI));
    auto check = is_gns_symmetric(superop_from_kraus({u}), 0.5 * cmat::Identity(2, 2));
    REQUIRE_FALSE(check.symmetric);
    REQUIRE(check.residual > 1e-3);
  }
  SECTION("rank-deficient or non-invariant states are rejected") {
    cmat pure = cmat::Zero(2, 2);
    pure(0, 0) = 1.0;
    REQUIRE_THROWS_AS(is_gns_symmetric(identity_superop(2), pure), std::invalid_argument);
    // amplitude damping: the fixed point is pure, outside the full-rank regime
    cmat k0 = cmat::Zero(2, 2), k1 = cmat::Zero(2, 2);
    k0(0, 0) = 1.0;
    k0(1, 1) = std::sqrt(0.5);
    k1(0, 1) = std::sqrt(0.5);
    const Superoperator ad = superop_from_kraus({k0, k1});
    REQUIRE_THROWS_AS(is_gns_symmetric(ad, 0.5 * cmat::Identity(2, 2)),
                      std::invalid_argument);  // 1/2 is not invariant
    REQUIRE_THROWS_AS(is_gns_symmetric(ad, pure), std::invalid_argument);  // not full rank
  }
}

TEST_CASE("spectral decomposition") {
  SECTION("identity channel") {
    SpectralData sd = spectral_decompose(identity_superop(2));
    REQUIRE(sd.mu == 0.0);
    REQUIRE(max_abs(sd.peripheral_projection.transfer - cmat::Identity(4, 4)) < 1e-10);
  }
  SECTION("dephasing mixture splits at the dephasing projection") {
    SpectralData sd = spectral_decompose(dephasing_mixture(0.5));
    REQUIRE(sd.mu == Catch::Approx(0.5));
    REQUIRE(sd.gns_symmetric);
    rvec mags(4);
    for (int i = 0; i < 4; ++i) mags[i] = std::abs(sd.eigenvalues[i]);
    std::sort(mags.data(), mags.data() + 4);
    REQUIRE(mags[0] == Catch::Approx(0.5));
    REQUIRE(mags[1] == Catch::Approx(0.5));
    REQUIRE(mags[2] == Catch::Approx(1.0));
    REQUIRE(mags[3] == Catch::Approx(1.0));
    REQUIRE(max_abs(choi(sd.peripheral_projection) - choi(to_superoperator(qubit_dephasing()))) <
            1e-9);
  }
  SECTION("Pauli-X conjugation has a pure 2-cycle periphery") {
    cmat px(2, 2);
    px << 0, 1, 1, 0;
    SpectralData sd = spectral_decompose(superop_from_kraus({px}));
    REQUIRE(sd.mu == 0.0);
    rvec real_parts(4);
    for (int i = 0; i < 4; ++i) real_parts[i] = sd.eigenvalues[i].real();
    std::sort(real_parts.data(), real_parts.data() + 4);
    REQUIRE(real_parts[0] == Catch::Approx(-1.0));
    REQUIRE(real_parts[1] == Catch::Approx(-1.0));
    REQUIRE(real_parts[2] == Catch::Approx(1.0));
    REQUIRE(real_parts[3] == Catch::Approx(1.0));
    // every eigenvalue is peripheral, so the projection is the identity map
    REQUIRE(max_abs(sd.peripheral_projection.transfer - cmat::Identity(4, 4)) < 1e-9);
  }
}

TEST_CASE("mixing estimates") {
  rng_t rng(503);
  SECTION("idempotent channels mix instantly") {
    MixingEstimate est = mixing_epsilon(to_superoperator(qubit_dephasing()), 3, rng);
    REQUIRE(est.epsilon == 0.0);
    REQUIRE(est.valid);
  }
  SECTION("dephasing mixture: eps^{2k} = 2^{-2k}") {
    for (int k : {1, 2, 3}) {
      MixingEstimate est = mixing_epsilon(dephasing_mixture(0.5), k, rng);
      REQUIRE(est.mu == Catch::Approx(0.5));
      REQUIRE(est.dcb_bits == Catch::Approx(1.0));
      REQUIRE(est.epsilon == Catch::Approx(std::pow(2.0, -2.0 * k)));
      REQUIRE(est.valid);
    }
  }
  SECTION("doubling k squares the mu factor") {
    MixingEstimate e1 = mixing_epsilon(dephasing_mixture(0.7), 2, rng);
    MixingEstimate e2 = mixing_epsilon(dephasing_mixture(0.7), 4, rng);
    REQUIRE(e2.epsilon * e1.dcb_bits == Catch::Approx(e1.epsilon * e1.epsilon).margin(1e-12));
  }
}

TEST_CASE("iterate sandwich") {
  rng_t rng(505);
  const Superoperator deph = to_superoperator(qubit_dephasing());
  SECTION("idempotent channel against itself collapses to zero") {
    IterateBounds b = iterate_bounds(deph, deph, 0.5 * cmat::Identity(2, 2), 2, rng);
    REQUIRE(b.lower_bits == Catch::Approx(0.0).margin(1e-10));
    REQUIRE(b.upper_bits == Catch::Approx(0.0).margin(1e-10));
    REQUIRE(b.valid);
  }
  SECTION("mixture against dephasing matches the plug-in bound") {
    IterateBounds b = iterate_bounds(dephasing_mixture(0.5), deph, 0.5 * cmat::Identity(2, 2),
                                     2, rng);  // 2k = 4
    REQUIRE(b.peripheral_dcb_bits == Catch::Approx(0.0).margin(1e-10));
    REQUIRE(b.psi.epsilon == 0.0);
    REQUIRE(b.phi.epsilon == Catch::Approx(1.0 / 16.0));
    REQUIRE(b.lower_bits == Catch::Approx(0.0).margin(1e-10));
    REQUIRE(b.upper_bits == Catch::Approx(std::log2(1.0 + 1.0 / 16.0)).margin(1e-10));
    REQUIRE(b.valid);
  }
  SECTION("oracle middle value sits inside the bracket") {
    for (int k : {1, 2, 3}) {
      IterateBounds b = iterate_bounds(dephasing_mixture(0.5), deph,
                                       0.5 * cmat::Identity(2, 2), k, rng);
      const Superoperator phi_2k = superop_power(dephasing_mixture(0.5), 2 * k);
      const double middle = choi_dmax_cb(phi_2k, deph);
      REQUIRE(middle >= b.lower_bits - 1e-8);
      REQUIRE(middle <= b.upper_bits + 1e-8);
      REQUIRE(b.lower_bits <= b.upper_bits);
    }
  }
  SECTION("bracket width shrinks monotonically in k") {
    double prev = inf();
    for (int k : {1, 2, 3, 4}) {
      IterateBounds b = iterate_bounds(dephasing_mixture(0.5), deph,
                                       0.5 * cmat::Identity(2, 2), k, rng);
      const double width = b.upper_bits - b.lower_bits;
      REQUIRE(width <= prev + 1e-12);
      prev = width;
    }
  }
}

TEST_CASE("peripheral absorption and cp-order mixing") {
  rng_t rng(507);
  const Superoperator phi = dephasing_mixture(0.5);
  SpectralData sd = spectral_decompose(phi);
  SECTION("Phi^{2k} absorbs its peripheral projection") {
    for (int k : {1, 2, 4, 8}) {
      const Superoperator phi_2k = superop_power(phi, 2 * k);
      const Superoperator lhs = compose(phi_2k, sd.peripheral_projection);
      const Superoperator rhs = compose(sd.peripheral_projection, phi_2k);
      REQUIRE(max_abs(choi(lhs) - choi(sd.peripheral_projection)) < 1e-8);
      REQUIRE(max_abs(choi(rhs) - choi(sd.peripheral_projection)) < 1e-8);
    }
  }
  SECTION("cp-order mixing bounds hold above the threshold") {
    for (int k : {1, 2, 3}) {
      MixingEstimate est = mixing_epsilon(phi, k, rng);
      REQUIRE(est.valid);
      const cmat j_2k = choi(superop_power(phi, 2 * k));
      const cmat j_p = choi(sd.peripheral_projection);
      REQUIRE(eigh((1.0 + est.epsilon) * j_p - j_2k).values.minCoeff() >= -1e-8);
      REQUIRE(eigh(j_2k - (1.0 - est.epsilon) * j_p).values.minCoeff() >= -1e-8);
    }
  }
  SECTION("diamond distance to the peripheral projection decays in k") {
    OptimizerConfig cfg;
    cfg.restarts = 3;
    cfg.max_iters = 40;
    cfg.seed = 7;
    double prev = inf();
    for (int k : {1, 2, 3}) {
      const double dl =
          diamond_lower(superop_power(phi, 2 * k), sd.peripheral_projection, cfg);
      REQUIRE(dl <= prev + 1e-9);
      prev = dl;
    }
  }
}
