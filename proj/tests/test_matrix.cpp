#include "idchan/matrix.hpp"
#include "idchan/random.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace idchan;

namespace {

cmat diag3(double a, double b, double c) {
  cmat m = cmat::Zero(3, 3);
  m(0, 0) = a;
  m(1, 1) = b;
  m(2, 2) = c;
  return m;
}

cmat pauli_x() {
  cmat m(2, 2);
  m << 0, 1, 1, 0;
  return m;
}

}  // namespace

TEST_CASE("eigh on simple matrices") {
  SECTION("identity") {
    HermitianEig e = eigh(cmat::Identity(2, 2));
    REQUIRE(e.values[0] == Catch::Approx(1.0));
    REQUIRE(e.values[1] == Catch::Approx(1.0));
  }
  SECTION("diagonal gets sorted descending") {
    HermitianEig e = eigh(diag3(3, 1, 2));
    REQUIRE(e.values[0] == Catch::Approx(3.0));
    REQUIRE(e.values[1] == Catch::Approx(2.0));
    REQUIRE(e.values[2] == Catch::Approx(1.0));
  }
  SECTION("Pauli-X eigenvectors are the +/- states") {
    HermitianEig e = eigh(pauli_x());
    REQUIRE(e.values[0] == Catch::Approx(1.0));
    REQUIRE(e.values[1] == Catch::Approx(-1.0));
    // |<+|v0>| = 1
    cvec plus(2);
    plus << 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0);
    REQUIRE(std::abs(plus.dot(e.vectors.col(0))) == Catch::Approx(1.0).margin(1e-12));
  }
  SECTION("non-Hermitian input rejected with asymmetry in the message") {
    cmat bad(2, 2);
    bad << 0, 1, 0, 0;
    REQUIRE_THROWS_WITH(eigh(bad), Catch::Matchers::ContainsSubstring("asymmetry"));
  }
}

TEST_CASE("eigh reconstruction and unitarity invariants") {
  rng_t rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 2 + static_cast<int>(rng() % 7);
    cmat h = random_hermitian(d, rng);
    HermitianEig e = eigh(h);
    const cmat recon = e.vectors * e.values.asDiagonal() * e.vectors.adjoint();
    REQUIRE(max_abs(recon - h) <= 1e-10 * std::max(1.0, max_abs(h)));
    REQUIRE(max_abs(e.vectors.adjoint() * e.vectors - cmat::Identity(d, d)) <= 1e-10);
    for (int i = 0; i + 1 < d; ++i) REQUIRE(e.values[i] >= e.values[i + 1]);
  }
}

TEST_CASE("matrix_function basics") {
  SECTION("identity function is the identity map") {
    rng_t rng(3);
    cmat h = random_hermitian(4, rng);
    REQUIRE(max_abs(matrix_function(h, [](double x) { return x; }) - h) < 1e-12);
  }
  SECTION("inverse square root") {
    cmat h = cmat::Zero(2, 2);
    h(0, 0) = 4.0;
    h(1, 1) = 1.0;
    const cmat r = matrix_power(h, -0.5);
    REQUIRE(r(0, 0).real() == Catch::Approx(0.5));
    REQUIRE(r(1, 1).real() == Catch::Approx(1.0));
  }
  SECTION("log2 of the maximally mixed qubit") {
    const cmat r = matrix_function(
        0.5 * cmat::Identity(2, 2), [](double x) { return std::log2(x); }, true);
    REQUIRE(r(0, 0).real() == Catch::Approx(-1.0));
    REQUIRE(r(1, 1).real() == Catch::Approx(-1.0));
  }
  SECTION("function evaluated outside its domain rejects") {
    cmat h = cmat::Identity(2, 2);
    h(1, 1) = -1.0;
    REQUIRE_THROWS_AS(matrix_power(h, 0.5), std::domain_error);
  }
}

TEST_CASE("matrix_power composes additively on positive definite input") {
  rng_t rng(11);
  for (int trial = 0; trial < 8; ++trial) {
    const int d = 2 + static_cast<int>(rng() % 3);
    cmat h = random_psd(d, d, rng) + 0.1 * cmat::Identity(d, d);
    const double a = 0.3, b = -0.7;
    const cmat lhs = matrix_power(matrix_power(h, a), b);
    const cmat rhs = matrix_power(h, a * b);
    REQUIRE(max_abs(lhs - rhs) < 1e-9 * std::max(1.0, max_abs(rhs)));
  }
}

TEST_CASE("partial_trace") {
  rng_t rng(5);
  SECTION("product state reduces to its factor") {
    cmat rho = random_state(2, rng);
    cmat sig = random_state(3, rng);
    const cmat red = partial_trace(kron(rho, sig), {2, 3}, {0});
    REQUIRE(max_abs(red - rho) < 1e-12);
  }
  SECTION("Bell state reduces to maximally mixed") {
    cvec bell(4);
    bell << 1, 0, 0, 1;
    bell /= std::sqrt(2.0);
    const cmat red = partial_trace(bell * bell.adjoint(), {2, 2}, {0});
    REQUIRE(max_abs(red - 0.5 * cmat::Identity(2, 2)) < 1e-12);
  }
  SECTION("tracing everything yields the scalar trace") {
    cmat m = random_matrix(6, 6, rng);
    const cmat t = partial_trace(m, {2, 3}, {});
    REQUIRE(t.rows() == 1);
    REQUIRE(std::abs(t(0, 0) - m.trace()) < 1e-12);
  }
  SECTION("dims mismatch rejected") {
    REQUIRE_THROWS_AS(partial_trace(cmat::Identity(5, 5), {2, 2}, {0}),
                      std::invalid_argument);
  }
  SECTION("linearity on random inputs") {
    for (int trial = 0; trial < 10; ++trial) {
      cmat m1 = random_matrix(6, 6, rng), m2 = random_matrix(6, 6, rng);
      const double w = 0.3;
      const cmat lhs = partial_trace(w * m1 + (1 - w) * m2, {3, 2}, {1});
      const cmat rhs = w * partial_trace(m1, {3, 2}, {1}) +
                       (1 - w) * partial_trace(m2, {3, 2}, {1});
      REQUIRE(max_abs(lhs - rhs) < 1e-12);
    }
  }
  SECTION("trace preserved") {
    cmat m = random_state(12, rng);
    const cmat red = partial_trace(m, {2, 3, 2}, {0, 2});
    REQUIRE(std::abs(red.trace() - m.trace()) < 1e-12);
  }
}

TEST_CASE("permute_systems relabels tensor factors") {
  rng_t rng(9);
  cmat a = random_matrix(2, 2, rng), b = random_matrix(3, 3, rng);
  const cmat swapped = permute_systems(kron(a, b), {2, 3}, {1, 0});
  REQUIRE(max_abs(swapped - kron(b, a)) < 1e-12);
}

TEST_CASE("ky_fan") {
  REQUIRE(ky_fan(diag3(3, 1, 2), 2) == Catch::Approx(5.0));
  REQUIRE(ky_fan(diag3(3, 1, 2), 3) == Catch::Approx(6.0));
  REQUIRE(ky_fan(2.0 * cmat::Identity(2, 2), 1) == Catch::Approx(2.0));
  REQUIRE_THROWS_AS(ky_fan(diag3(1, 2, 3), 0), std::invalid_argument);
  REQUIRE_THROWS_AS(ky_fan(diag3(1, 2, 3), 4), std::invalid_argument);

  SECTION("equals the best rank-k projection overlap") {
    rng_t rng(13);
    cmat h = random_hermitian(4, rng);
    HermitianEig e = eigh(h);
    for (int k = 1; k <= 4; ++k) {
      cmat proj = cmat::Zero(4, 4);
      for (int i = 0; i < k; ++i) proj += e.vectors.col(i) * e.vectors.col(i).adjoint();
      REQUIRE(ky_fan(h, k) == Catch::Approx((proj * h).trace().real()).margin(1e-10));
    }
  }
  SECTION("increments are non-increasing in k") {
    rng_t rng(17);
    cmat h = random_hermitian(6, rng);
    double prev = inf();
    for (int k = 1; k <= 6; ++k) {
      const double inc = ky_fan(h, k) - (k == 1 ? 0.0 : ky_fan(h, k - 1));
      REQUIRE(inc <= prev + 1e-12);
      prev = inc;
    }
  }
}

TEST_CASE("schatten norms") {
  cmat pz(2, 2);
  pz << 1, 0, 0, -1;
  REQUIRE(schatten_norm(pz, 1.0) == Catch::Approx(2.0));
  REQUIRE(schatten_norm(pz, inf()) == Catch::Approx(1.0));
  REQUIRE(schatten_norm(cmat::Identity(2, 2), 2.0) == Catch::Approx(std::sqrt(2.0)));
  REQUIRE_THROWS_AS(schatten_norm(pz, 0.5), std::invalid_argument);

  SECTION("p-ordering on random matrices") {
    rng_t rng(23);
    for (int trial = 0; trial < 10; ++trial) {
      cmat m = random_matrix(5, 5, rng);
      const double n1 = schatten_norm(m, 1.0);
      const double n2 = schatten_norm(m, 2.0);
      const double ninf = schatten_norm(m, inf());
      REQUIRE(n1 >= n2 - 1e-9);
      REQUIRE(n2 >= ninf - 1e-9);
    }
  }
}

TEST_CASE("kron and direct_sum") {
  REQUIRE(max_abs(kron(cmat::Identity(2, 2), cmat::Identity(3, 3)) -
                  cmat::Identity(6, 6)) == 0.0);
  cmat a(1, 1), b(2, 2);
  a << 1;
  b << 2, 0, 0, 3;
  const cmat ds = direct_sum(a, b);
  REQUIRE(ds.rows() == 3);
  REQUIRE(ds(0, 0).real() == 1.0);
  REQUIRE(ds(1, 1).real() == 2.0);
  REQUIRE(ds(2, 2).real() == 3.0);

  SECTION("kron associativity on a random triple") {
    rng_t rng(29);
    cmat x = random_matrix(2, 2, rng), y = random_matrix(3, 3, rng),
         z = random_matrix(2, 2, rng);
    REQUIRE(max_abs(kron(kron(x, y), z) - kron(x, kron(y, z))) < 1e-12);
  }
  SECTION("dimension cap enforced") {
    REQUIRE_THROWS_WITH(kron(cmat::Identity(80, 80), cmat::Identity(80, 80)),
                        Catch::Matchers::ContainsSubstring("cap"));
  }
}
