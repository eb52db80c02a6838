#include "idchan/channels.hpp"

#include "idchan/random.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>

using namespace idchan;

namespace {

BlockIdempotent qubit_dephasing() {
  BlockIdempotent bi;
  bi.dim = 2;
  bi.basis = cmat::Identity(2, 2);
  bi.blocks = {Block{1, 1, cmat::Identity(1, 1)}, Block{1, 1, cmat::Identity(1, 1)}};
  return bi;
}

BlockIdempotent replacer(const cmat& omega) {
  BlockIdempotent bi;
  bi.dim = static_cast<int>(omega.rows());
  bi.basis = cmat::Identity(bi.dim, bi.dim);
  bi.blocks = {Block{1, bi.dim, omega}};
  return bi;
}

BlockIdempotent identity_block(int d) {
  BlockIdempotent bi;
  bi.dim = d;
  bi.basis = cmat::Identity(d, d);
  bi.blocks = {Block{d, 1, cmat::Identity(1, 1)}};
  return bi;
}

BlockIdempotent random_block_idempotent(rng_t& rng, int max_blocks = 3, int max_d = 2) {
  BlockIdempotent bi;
  const int nl = 1 + static_cast<int>(rng() % max_blocks);
  bi.dim = 0;
  for (int l = 0; l < nl; ++l) {
    const int da = 1 + static_cast<int>(rng() % max_d);
    const int db = 1 + static_cast<int>(rng() % max_d);
    bi.blocks.push_back(Block{da, db, random_state(db, rng, 0.05)});
    bi.dim += da * db;
  }
  bi.basis = random_unitary(bi.dim, rng);
  return bi;
}

cmat plus_state() {
  cmat m(2, 2);
  m << 0.5, 0.5, 0.5, 0.5;
  return m;
}

std::vector<std::pair<int, int>> sorted_dims(const BlockIdempotent& bi) {
  std::vector<std::pair<int, int>> d;
  for (const Block& b : bi.blocks) d.emplace_back(b.dA, b.dB);
  std::sort(d.begin(), d.end());
  return d;
}

}  // namespace

TEST_CASE("block channel action") {
  rng_t rng(201);
  SECTION("replacer maps everything to omega") {
    cmat omega = random_state(3, rng, 0.05);
    BlockIdempotent r = replacer(omega);
    cmat rho = random_state(3, rng);
    REQUIRE(max_abs(apply_channel(r, rho) - omega) < 1e-12);
  }
  SECTION("identity block acts as the identity") {
    BlockIdempotent id3 = identity_block(3);
    cmat rho = random_state(3, rng);
    REQUIRE(max_abs(apply_channel(id3, rho) - rho) < 1e-12);
  }
  SECTION("dephasing wipes coherences") {
    REQUIRE(max_abs(apply_channel(qubit_dephasing(), plus_state()) - 0.5 * cmat::Identity(2, 2)) <
            1e-12);
  }
  SECTION("trace and positivity are preserved") {
    BlockIdempotent bi = random_block_idempotent(rng);
    cmat rho = random_state(bi.dim, rng);
    cmat out = apply_channel(bi, rho);
    REQUIRE(std::abs(out.trace().real() - 1.0) < 1e-10);
    REQUIRE(is_psd(out, 1e-10));
  }
}

TEST_CASE("adjoint action") {
  rng_t rng(203);
  SECTION("unitality") {
    BlockIdempotent bi = random_block_idempotent(rng);
    REQUIRE(max_abs(adjoint_apply(bi, cmat::Identity(bi.dim, bi.dim)) -
                    cmat::Identity(bi.dim, bi.dim)) < 1e-10);
  }
  SECTION("adjoint identity Tr(Y Phi(X)) = Tr(Phi*(Y) X)") {
    BlockIdempotent bi = random_block_idempotent(rng);
    for (int trial = 0; trial < 5; ++trial) {
      cmat x = random_matrix(bi.dim, bi.dim, rng);
      cmat y = random_matrix(bi.dim, bi.dim, rng);
      const cplx lhs = (y * apply_channel(bi, x)).trace();
      const cplx rhs = (adjoint_apply(bi, y) * x).trace();
      REQUIRE(std::abs(lhs - rhs) < 1e-10 * std::max(1.0, std::abs(lhs)));
    }
  }
  SECTION("replacer adjoint is Y -> Tr(omega Y) 1") {
    cmat omega = random_state(2, rng, 0.05);
    BlockIdempotent r = replacer(omega);
    cmat y = random_matrix(2, 2, rng);
    const cmat expected = (omega * y).trace() * cmat::Identity(2, 2);
    REQUIRE(max_abs(adjoint_apply(r, y) - expected) < 1e-12);
  }
  SECTION("superoperator adjoint matches the block adjoint") {
    BlockIdempotent bi = random_block_idempotent(rng);
    Superoperator s = to_superoperator(bi);
    cmat y = random_matrix(bi.dim, bi.dim, rng);
    REQUIRE(max_abs(adjoint_apply(s, y) - adjoint_apply(bi, y)) < 1e-10);
  }
}

TEST_CASE("Choi matrices") {
  rng_t rng(207);
  SECTION("identity channel gives twice the Bell projector") {
    cmat j = choi(identity_superop(2));
    cvec bell(4);
    bell << 1, 0, 0, 1;
    REQUIRE(max_abs(j - bell * bell.adjoint()) < 1e-12);
  }
  SECTION("replacer gives 1 (x) omega") {
    cmat omega = random_state(2, rng, 0.05);
    REQUIRE(max_abs(choi(replacer(omega)) - kron(cmat::Identity(2, 2), omega)) < 1e-12);
  }
  SECTION("choi of a composition matches the structured path") {
    BlockIdempotent p = random_block_idempotent(rng, 2, 2);
    BlockIdempotent q = random_block_idempotent(rng, 2, 2);
    while (q.dim != p.dim) q = random_block_idempotent(rng, 2, 2);
    const Superoperator comp = compose(to_superoperator(q), to_superoperator(p));
    // independent route: apply both structured maps to each matrix unit
    const int d = p.dim;
    cmat j = cmat::Zero(Eigen::Index(d) * d, Eigen::Index(d) * d);
    cmat e = cmat::Zero(d, d);
    for (int i = 0; i < d; ++i) {
      for (int k = 0; k < d; ++k) {
        e(i, k) = 1.0;
        j.block(Eigen::Index(i) * d, Eigen::Index(k) * d, d, d) = apply_channel(q, apply_channel(p, e));
        e(i, k) = 0.0;
      }
    }
    REQUIRE(max_abs(choi(comp) - j) < 1e-9);
  }
  SECTION("channel checks hold for block channels") {
    BlockIdempotent bi = random_block_idempotent(rng);
    REQUIRE(check_channel(to_superoperator(bi)).ok());
  }
}

TEST_CASE("idempotency detection") {
  rng_t rng(211);
  REQUIRE(is_idempotent(to_superoperator(qubit_dephasing())).idempotent);
  cmat px(2, 2);
  px << 0, 1, 1, 0;
  REQUIRE_FALSE(is_idempotent(superop_from_kraus({px})).idempotent);
  BlockIdempotent bi = random_block_idempotent(rng);
  REQUIRE(is_idempotent(to_superoperator(bi)).idempotent);
}

TEST_CASE("fixed-point algebra extraction") {
  rng_t rng(213);
  SECTION("identity channel spans the full matrix algebra") {
    REQUIRE(fixed_point_algebra(identity_superop(3)).size() == 9);
  }
  SECTION("replacer spans the scalars") {
    cmat omega = random_state(3, rng, 0.05);
    auto basis = fixed_point_algebra(to_superoperator(replacer(omega)));
    REQUIRE(basis.size() == 1);
    const cplx lead = basis[0](0, 0);
    REQUIRE(max_abs(basis[0] - lead * cmat::Identity(3, 3)) < 1e-9);
  }
  SECTION("dephasing spans the diagonal algebra") {
    auto basis = fixed_point_algebra(to_superoperator(qubit_dephasing()));
    REQUIRE(basis.size() == 2);
    for (const cmat& f : basis) {
      REQUIRE(std::abs(f(0, 1)) < 1e-10);
      REQUIRE(std::abs(f(1, 0)) < 1e-10);
    }
  }
  SECTION("non-idempotent input rejected") {
    cmat px(2, 2);
    px << 0, 1, 1, 0;
    REQUIRE_THROWS_AS(fixed_point_algebra(superop_from_kraus({px})), std::invalid_argument);
  }
}

TEST_CASE("algebra block split") {
  rng_t rng(217);
  SECTION("full matrix algebra") {
    auto ab = algebra_blocks(fixed_point_algebra(identity_superop(3)), rng);
    REQUIRE(ab.dims == std::vector<std::pair<int, int>>{{3, 1}});
  }
  SECTION("scalars") {
    cmat omega = random_state(3, rng, 0.05);
    auto ab = algebra_blocks(fixed_point_algebra(to_superoperator(replacer(omega))), rng);
    REQUIRE(ab.dims == std::vector<std::pair<int, int>>{{1, 3}});
  }
  SECTION("diagonal algebra of C^2") {
    auto ab = algebra_blocks(fixed_point_algebra(to_superoperator(qubit_dephasing())), rng);
    REQUIRE(ab.dims == std::vector<std::pair<int, int>>{{1, 1}, {1, 1}});
  }
  SECTION("random conjugated block algebra recovers its dims") {
    for (int trial = 0; trial < 6; ++trial) {
      BlockIdempotent bi = random_block_idempotent(rng);
      auto basis = fixed_point_algebra(to_superoperator(bi));
      auto ab = algebra_blocks(basis, rng);
      std::vector<std::pair<int, int>> expect = sorted_dims(bi);
      std::vector<std::pair<int, int>> got = ab.dims;
      std::sort(got.begin(), got.end());
      REQUIRE(got == expect);
      // conjugating every algebra element must give the block-diagonal form
      for (const cmat& f : basis) {
        const cmat rot = ab.basis_change.adjoint() * f * ab.basis_change;
        Eigen::Index off = 0;
        for (const auto& [a, b] : ab.dims) {
          const Eigen::Index sz = Eigen::Index(a) * b;
          const cmat blk = rot.block(off, off, sz, sz);
          const cmat x = partial_trace(blk, {a, b}, {0}) / double(b);
          REQUIRE(max_abs(blk - kron(x, cmat::Identity(b, b))) < 1e-8);
          off += sz;
        }
      }
    }
  }
}

TEST_CASE("round trip through the superoperator form") {
  rng_t rng(219);
  for (int trial = 0; trial < 5; ++trial) {
    BlockIdempotent bi = random_block_idempotent(rng);
    Superoperator s = to_superoperator(bi);
    REQUIRE(is_idempotent(s).idempotent);
    BlockIdempotent back = superop_to_block_idempotent(s, rng);
    REQUIRE(sorted_dims(back) == sorted_dims(bi));
    REQUIRE(max_abs(choi(back) - choi(bi)) < 1e-9);
  }
}

TEST_CASE("rank non-decrease under the unital adjoint") {
  rng_t rng(223);
  for (int trial = 0; trial < 8; ++trial) {
    BlockIdempotent bi = random_block_idempotent(rng);
    const int rank = 1 + static_cast<int>(rng() % bi.dim);
    cmat x = random_psd(bi.dim, rank, rng);
    REQUIRE(numerical_rank(adjoint_apply(bi, x)) >= numerical_rank(x));
  }
}

TEST_CASE("image inclusion") {
  rng_t rng(227);
  cmat omega = random_state(2, rng, 0.05);
  const Superoperator rep = to_superoperator(replacer(omega));
  const Superoperator id2 = identity_superop(2);
  const Superoperator deph = to_superoperator(qubit_dephasing());
  REQUIRE(inclusion_holds(id2, rep));  // im(rep*) = C 1 inside everything
  REQUIRE_FALSE(inclusion_holds(rep, id2));
  REQUIRE(inclusion_holds(deph, rep));
  REQUIRE_FALSE(inclusion_holds(rep, deph));

  SECTION("Q o P = Q whenever im(Q*) is contained in im(P*)") {
    const Superoperator qp = compose(rep, deph);
    REQUIRE(max_abs(choi(qp) - choi(rep)) < 1e-9);
  }
}

TEST_CASE("support growth under an idempotent channel") {
  rng_t rng(229);
  for (int trial = 0; trial < 6; ++trial) {
    BlockIdempotent bi = random_block_idempotent(rng);
    const int rank = 1 + static_cast<int>(rng() % bi.dim);
    cmat rho = random_psd(bi.dim, rank, rng);
    rho /= rho.trace().real();
    const cmat grown = support_projector(apply_channel(bi, rho));
    const cmat pr = support_projector(rho);
    REQUIRE(max_abs(pr - grown * pr) < 1e-8);  // supp rho inside supp P(rho)
  }
}

TEST_CASE("common invariant state") {
  rng_t rng(233);
  SECTION("any channel shares a state with itself") {
    BlockIdempotent bi = random_block_idempotent(rng);
    Superoperator s = to_superoperator(bi);
    auto inv = common_invariant_state(s, s);
    REQUIRE(inv.has_value());
    REQUIRE(inv->residual < 1e-9);
  }
  SECTION("two unital conditional expectations accept the maximally mixed state") {
    auto inv =
        common_invariant_state(to_superoperator(qubit_dephasing()), identity_superop(2));
    REQUIRE(inv.has_value());
    REQUIRE(inv->full_rank);
    REQUIRE(max_abs(apply_channel(to_superoperator(qubit_dephasing()), inv->state) - inv->state) <
            1e-9);
  }
  SECTION("replacers with different targets share nothing") {
    cmat w1 = random_state(2, rng, 0.05), w2 = random_state(2, rng, 0.05);
    auto inv = common_invariant_state(to_superoperator(replacer(w1)),
                                      to_superoperator(replacer(w2)));
    REQUIRE_FALSE(inv.has_value());
  }
}

TEST_CASE("multiplicative domain membership") {
  const Superoperator deph = to_superoperator(qubit_dephasing());
  REQUIRE(multiplicative_domain_member(deph, cmat::Identity(2, 2)));
  cmat p0 = cmat::Zero(2, 2);
  p0(0, 0) = 1.0;
  REQUIRE(multiplicative_domain_member(deph, p0));
  REQUIRE_FALSE(multiplicative_domain_member(deph, plus_state()));
  REQUIRE_THROWS_AS(multiplicative_domain_member(deph, 0.5 * p0), std::invalid_argument);
}

TEST_CASE("tensor powers") {
  rng_t rng(239);
  SECTION("n = 1 is the channel itself") {
    BlockIdempotent bi = random_block_idempotent(rng);
    REQUIRE(max_abs(choi(tensor_power(bi, 1)) - choi(bi)) < 1e-12);
  }
  SECTION("replacer (x) replacer is the replacer with omega (x) omega") {
    cmat omega = random_state(2, rng, 0.05);
    BlockIdempotent r2 = tensor_power(replacer(omega), 2);
    REQUIRE(r2.blocks.size() == 1);
    REQUIRE(max_abs(r2.blocks[0].omega - kron(omega, omega)) < 1e-12);
  }
  SECTION("dephasing squared is the diagonal algebra of C^4") {
    BlockIdempotent d2 = tensor_power(qubit_dephasing(), 2);
    REQUIRE(d2.blocks.size() == 4);
    for (const Block& b : d2.blocks) {
      REQUIRE(b.dA == 1);
      REQUIRE(b.dB == 1);
    }
  }
  SECTION("agrees with the superoperator Kronecker power on the Choi matrix") {
    for (int trial = 0; trial < 4; ++trial) {
      BlockIdempotent bi = random_block_idempotent(rng, 2, 2);
      const Superoperator s = to_superoperator(bi);
      REQUIRE(max_abs(choi(tensor_power(bi, 2)) - choi(superop_kron(s, s))) < 1e-9);
    }
  }
  SECTION("dimension cap enforced") {
    BlockIdempotent big = identity_block(17);
    REQUIRE_THROWS_WITH(tensor_power(big, 3), Catch::Matchers::ContainsSubstring("cap"));
  }
}

TEST_CASE("three-layer decomposition") {
  rng_t rng(241);
  SECTION("dephasing against itself pairs the diagonal blocks") {
    const Superoperator deph = to_superoperator(qubit_dephasing());
    ThreeLayer t = three_layer_decompose(deph, deph, rng);
    REQUIRE(t.K == 2);
    REQUIRE(t.L == 2);
    REQUIRE(t.total_dim() == 2);
    int nonzero = 0;
    for (int k = 0; k < 2; ++k) {
      for (int l = 0; l < 2; ++l) {
        if (t.b[k][l] > 0) {
          ++nonzero;
          REQUIRE(t.b[k][l] == 1);
        }
      }
    }
    REQUIRE(nonzero == 2);
    REQUIRE(t.common_invariant);
  }
  SECTION("identity against a replacer") {
    cmat omega = random_state(3, rng, 0.05);
    ThreeLayer t =
        three_layer_decompose(identity_superop(3), to_superoperator(replacer(omega)), rng);
    REQUIRE(t.K == 1);
    REQUIRE(t.L == 1);
    REQUIRE(t.a == std::vector<int>{1});
    REQUIRE(t.c == std::vector<int>{1});
    REQUIRE(t.b[0][0] == 3);
    // omega is recovered up to the basis chosen for E_1: spectra must agree
    REQUIRE(max_abs(eigh(t.omega[0]).values - eigh(omega).values) < 1e-8);
  }
  SECTION("inclusion failure rejects") {
    cmat omega = random_state(2, rng, 0.05);
    REQUIRE_THROWS_WITH(
        three_layer_decompose(to_superoperator(replacer(omega)), identity_superop(2), rng),
        Catch::Matchers::ContainsSubstring("not contained"));
  }
  SECTION("randomized nested instances round-trip their dimensions") {
    for (int trial = 0; trial < 6; ++trial) {
      // build a synthetic nested pair directly from three-layer data
      ThreeLayer t;
      t.K = 1 + static_cast<int>(rng() % 2);
      t.L = 1 + static_cast<int>(rng() % 2);
      t.a.resize(t.L);
      t.c.resize(t.K);
      t.b.assign(t.K, std::vector<int>(t.L, 0));
      for (int l = 0; l < t.L; ++l) t.a[l] = 1 + static_cast<int>(rng() % 2);
      for (int k = 0; k < t.K; ++k) t.c[k] = 1 + static_cast<int>(rng() % 2);
      for (int k = 0; k < t.K; ++k) {
        for (int l = 0; l < t.L; ++l) t.b[k][l] = static_cast<int>(rng() % 3);  // 0 allowed
      }
      for (int l = 0; l < t.L; ++l) {
        if (t.e_dim(l) == 0) t.b[0][l] = 1;  // every A_l must appear somewhere
      }
      for (int k = 0; k < t.K; ++k) {
        if (t.d_dim(k) == 0) t.b[k][0] = 1;  // every D_k must be nonempty
      }
      if (t.total_dim() < 2) continue;
      t.basis_change = random_unitary(t.total_dim(), rng);
      for (int k = 0; k < t.K; ++k) t.delta.push_back(random_state(t.c[k], rng, 0.05));
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

      const BlockIdempotent p_chan = three_layer_p_channel(t);
      const Superoperator p_sup = to_superoperator(p_chan);
      const Superoperator q_sup = three_layer_q_channel(t);
      REQUIRE(is_idempotent(q_sup).idempotent);

      ThreeLayer got = three_layer_decompose(p_sup, q_sup, rng);
      REQUIRE(got.total_dim() == t.total_dim());
      REQUIRE(got.K == t.K);
      REQUIRE(got.L == t.L);
      REQUIRE(got.common_invariant);
      // dimension multisets agree up to block relabeling
      auto multiset = [](const ThreeLayer& x) {
        std::vector<std::vector<int>> rows;
        for (int k = 0; k < x.K; ++k) {
          std::vector<int> row;
          row.push_back(x.c[k]);
          std::vector<int> cols;
          for (int l = 0; l < x.L; ++l) cols.push_back(x.a[l] * 100 + x.b[k][l]);
          std::sort(cols.begin(), cols.end());
          row.insert(row.end(), cols.begin(), cols.end());
          rows.push_back(row);
        }
        std::sort(rows.begin(), rows.end());
        return rows;
      };
      REQUIRE(multiset(got) == multiset(t));
    }
  }
}
