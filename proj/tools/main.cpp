// Command-line front end: loads states and channel descriptions, evaluates
// the closed-form divergences and exponents, cross-checks them against the
// brute-force oracles, and emits JSON or CSV reports.
//
// Exit codes: 0 success, 1 verification failure, 2 input validation failure.

#include "idchan/builtin.hpp"
#include "idchan/closed_form.hpp"
#include "idchan/gns.hpp"
#include "idchan/io.hpp"
#include "idchan/oracle.hpp"
#include "idchan/verify.hpp"
#include "idchan/version.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace {

using namespace idchan;

struct Output {
  std::string format = "json";
  std::string out_path;
};

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
  return j;
}

// config hash covers the command line so identical invocations produce
// byte-identical reports
json envelope(const std::string& command, std::uint64_t seed, const std::string& config) {
  json j;
  j["tool"] = "idchan";
  j["version"] = kVersion;
  j["command"] = command;
  j["seed"] = seed;
  j["config_hash"] = hex64(fnv1a(config));
  return j;
}

void write_output(const Output& out, const std::string& text) {
  if (out.out_path.empty()) {
    std::cout << text << "\n";
  } else {
    std::ofstream f(out.out_path);
    if (!f) throw std::invalid_argument("cannot write file: " + out.out_path);
    f << text << "\n";
  }
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string esc = "\"";
  for (char c : s) {
    if (c == '"') esc += '"';
    esc += c;
  }
  return esc + "\"";
}

std::string value_str(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  std::ostringstream os;
  os.precision(17);
  if (v.is_number_float()) {
    os << v.get<double>();
  } else {
    os << v.dump();
  }
  return os.str();
}

// CSV flattening: block tables become (k, l, d_A, d_B, value) rows, scalar
// summary fields become key/value comment lines
std::string to_csv(const json& report) {
  std::ostringstream os;
  for (auto it = report.begin(); it != report.end(); ++it) {
    if (it.key() == "blocks" || it.key() == "checks" || it.key() == "strong_converse") continue;
    if (it.value().is_object() || it.value().is_array()) continue;
    os << "# " << it.key() << "=" << value_str(it.value()) << "\n";
  }
  if (report.contains("blocks")) {
    os << "k,l,d_A,d_B,value\n";
    for (const auto& row : report.at("blocks")) {
      os << row.at("k").get<int>() << "," << row.at("l").get<int>() << ","
         << row.at("d_A").get<int>() << "," << row.at("d_B").get<int>() << ","
         << value_str(row.at("value_bits")) << "\n";
    }
  } else if (report.contains("checks")) {
    os << "check,pass,measured\n";
    for (const auto& row : report.at("checks")) {
      os << csv_escape(row.at("name").get<std::string>()) << ","
         << (row.at("pass").get<bool>() ? 1 : 0) << "," << value_str(row.at("measured"))
         << "\n";
    }
  }
  std::string s = os.str();
  if (!s.empty() && s.back() == '\n') s.pop_back();
  return s;
}

void emit(const json& report, const Output& out) {
  if (out.format == "csv") {
    write_output(out, to_csv(report));
  } else {
    write_output(out, report.dump(2));
  }
}

std::uint64_t resolve_seed(std::uint64_t cli_seed) {
  if (const char* env = std::getenv("IDEM_SEED")) {
    return std::strtoull(env, nullptr, 10);
  }
  return cli_seed;
}

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  ~Timer() {
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - start)
                        .count();
    std::cerr << "wall_ms=" << ms << "\n";
  }
};

// ---------------------------------------------------------------------------
// divergence
// ---------------------------------------------------------------------------

int cmd_divergence(const std::string& rho_file, const std::string& sigma_file,
                   const std::string& kind, std::optional<double> alpha,
                   std::optional<double> epsilon, std::uint64_t seed, const Output& out,
                   const std::string& config) {
  const DensityMatrix rho = state_from_json(load_json_file(rho_file), rho_file);
  const DensityMatrix sigma = state_from_json(load_json_file(sigma_file), sigma_file);
  if (rho.dim() != sigma.dim()) {
    throw std::invalid_argument("divergence: states have different dimensions");
  }

  Diagnostics diag;
  DivergenceReport rep;
  rep.name = kind;
  if (kind == "umegaki") {
    rep.value_bits = relative_entropy(rho.mat(), sigma.mat(), &diag);
  } else if (kind == "petz") {
    if (!alpha) throw std::invalid_argument("petz requires --alpha");
    rep.alpha = *alpha;
    rep.value_bits = petz_renyi(rho.mat(), sigma.mat(), *alpha, &diag);
  } else if (kind == "sandwiched") {
    if (!alpha) throw std::invalid_argument("sandwiched requires --alpha");
    rep.alpha = *alpha;
    rep.value_bits = sandwiched_renyi(rho.mat(), sigma.mat(), *alpha, &diag);
  } else if (kind == "dmax") {
    rep.value_bits = max_relative_entropy(rho.mat(), sigma.mat(), &diag);
  } else if (kind == "dmin") {
    rep.value_bits = min_relative_entropy(rho.mat(), sigma.mat(), &diag);
  } else if (kind == "hypothesis_testing") {
    if (!epsilon) throw std::invalid_argument("hypothesis_testing requires --epsilon");
    auto res = hypothesis_testing(rho.mat(), sigma.mat(), *epsilon);
    rep.value_bits = res.bits;
    rep.achieving_state = res.test.M;  // the optimal measurement operator
    if (res.infinite) rep.warnings.push_back("optimal type-II error is zero");
  } else if (kind == "chernoff") {
    rep.value_bits = chernoff_divergence(rho.mat(), sigma.mat());
  } else if (kind == "helstrom") {
    rep.name = "helstrom_error";
    rep.value_bits = helstrom_error(rho.mat(), sigma.mat());  // probability, not bits
  } else {
    throw std::invalid_argument("unknown divergence kind: " + kind);
  }
  rep.infinite = std::isinf(rep.value_bits);
  rep.warnings.insert(rep.warnings.end(), diag.warnings.begin(), diag.warnings.end());

  json report = envelope("divergence", seed, config);
  report.update(to_json(rep));
  emit(report, out);
  return 0;
}

// ---------------------------------------------------------------------------
// formula
// ---------------------------------------------------------------------------

json blocks_table_id(const BlockIdempotent& q) {
  json rows = json::array();
  for (size_t l = 0; l < q.blocks.size(); ++l) {
    double tr_min = 0.0, tr_full = 0.0;
    HermitianEig eig = eigh(q.blocks[l].omega);
    for (int i = 0; i < q.blocks[l].dB; ++i) {
      const double inv = 1.0 / eig.values[q.blocks[l].dB - 1 - i];
      tr_full += inv;
      if (i < std::min(q.blocks[l].dA, q.blocks[l].dB)) tr_min += inv;
    }
    rows.push_back({{"k", 0},
                    {"l", static_cast<int>(l)},
                    {"d_A", q.blocks[l].dA},
                    {"d_B", q.blocks[l].dB},
                    {"value_bits", bits_to_json(std::log2(tr_full))},
                    {"value_plain_bits", bits_to_json(std::log2(tr_min))}});
  }
  return rows;
}

int cmd_formula(const std::string& p_file, const std::string& q_file, double alpha,
                int restarts, std::uint64_t seed, const Output& out,
                const std::string& config) {
  rng_t rng(seed);
  const LoadedChannel p = channel_from_json(load_json_file(p_file), rng, p_file);
  const LoadedChannel q = channel_from_json(load_json_file(q_file), rng, q_file);
  if (!p.superop.square() || !q.superop.square() || p.superop.dim_in != q.superop.dim_in) {
    throw std::invalid_argument("formula: channels must act on a common space");
  }
  for (const auto* ch : {&p, &q}) {
    IdempotencyCheck idem = is_idempotent(ch->superop);
    if (!idem.idempotent) {
      throw std::invalid_argument("formula: channel is not idempotent, residual " +
                                  std::to_string(idem.residual));
    }
  }
  const int d = p.superop.dim_in;

  json report = envelope("formula", seed, config);
  report["alpha"] = alpha;

  if (!inclusion_holds(p.superop, q.superop)) {
    auto witness = infinite_divergence_witness(p.superop, q.superop, rng);
    report["route"] = "image-inclusion-violated";
    DivergenceReport rep;
    rep.name = "umegaki";
    rep.value_bits = inf();
    rep.infinite = true;
    if (witness) {
      rep.achieving_state = witness->mat();
      rep.warnings.push_back("rank(P(rho)) > rank(Q(rho)) at the witness state");
    }
    report["divergence"] = to_json(rep);
    report["exponents"] = to_json(exponents(inf(), true));
    emit(report, out);
    return 0;
  }

  const bool p_is_identity =
      max_abs(p.superop.transfer - cmat::Identity(Eigen::Index(d) * d, Eigen::Index(d) * d)) <=
      1e-10;
  if (p_is_identity) {
    const BlockIdempotent qb = q.block ? *q.block : superop_to_block_idempotent(q.superop, rng);
    const double plain = d_id_q(qb);
    const double cb = d_id_q_cb(qb);
    report["route"] = "identity-vs-channel";
    report["d_bits"] = bits_to_json(plain);
    report["dcb_bits"] = bits_to_json(cb);
    report["blocks"] = blocks_table_id(qb);
    report["achieving_state"] = matrix_to_json(optimal_input_id_q(qb, false).mat());
    report["exponents"] = to_json(exponents(cb, true));
    emit(report, out);
    return 0;
  }

  const ThreeLayer t = three_layer_decompose(p.superop, q.superop, rng);
  if (t.common_invariant) {
    const BlockFormula plain = d_p_q_common(t);
    const BlockFormula cb = d_p_q_common_cb(t);
    report["route"] = "common-invariant";
    report["d_bits"] = bits_to_json(plain.bits);
    report["dcb_bits"] = bits_to_json(cb.bits);
    report["kstar"] = cb.kstar;
    json rows = json::array();
    for (int k = 0; k < t.K; ++k) {
      for (int l = 0; l < t.L; ++l) {
        if (t.b[k][l] == 0) continue;
        HermitianEig eig = eigh(t.tau[k][l]);
        double tr_full = 0.0;
        for (int i = 0; i < t.b[k][l]; ++i) tr_full += 1.0 / eig.values[i];
        rows.push_back({{"k", k},
                        {"l", l},
                        {"d_A", t.a[l]},
                        {"d_B", t.b[k][l]},
                        {"value_bits", bits_to_json(std::log2(tr_full / t.p[k][l]))}});
      }
    }
    report["blocks"] = rows;
    report["achieving_state"] = matrix_to_json(optimal_input_p_q(t).mat());
    report["exponents"] = to_json(exponents(cb.bits, true));
    emit(report, out);
    return 0;
  }

  // general route: per-block sandwiched divergences filled by the oracle
  OptimizerConfig cfg;
  cfg.restarts = restarts;
  cfg.max_iters = 400;
  cfg.seed = seed;
  std::vector<std::vector<double>> dkl(t.K, std::vector<double>(t.L, 0.0));
  std::vector<std::vector<double>> dkl_cb(t.K, std::vector<double>(t.L, 0.0));
  json rows = json::array();
  for (int k = 0; k < t.K; ++k) {
    for (int l = 0; l < t.L; ++l) {
      if (t.b[k][l] == 0) continue;
      const Superoperator rp = restricted_p_channel(t, k, l);
      const Superoperator rq = restricted_q_channel(t, k, l);
      dkl[k][l] =
          maximize_channel_divergence(DivergenceKind::sandwiched(alpha), rp, rq, 1, cfg).bits;
      dkl_cb[k][l] = maximize_channel_divergence(DivergenceKind::sandwiched(alpha), rp, rq,
                                                 rp.dim_in, cfg)
                         .bits;
      rows.push_back({{"k", k},
                      {"l", l},
                      {"d_A", t.a[l]},
                      {"d_B", t.b[k][l]},
                      {"value_bits", bits_to_json(dkl_cb[k][l])},
                      {"value_plain_bits", bits_to_json(dkl[k][l])}});
    }
  }
  const GeneralBound bound = general_upper_bound(t, alpha, dkl);
  const GeneralBound bound_cb = general_upper_bound(t, alpha, dkl_cb);
  report["route"] = "general-upper-bound";
  report["bound_bits"] = bits_to_json(bound.bits);
  report["bound_cb_bits"] = bits_to_json(bound_cb.bits);
  report["kstar"] = bound_cb.kstar;
  report["exact"] = bound_cb.exact;
  report["blocks"] = rows;
  ExponentReport rep = exponents(bound_cb.bits, bound_cb.exact);
  // without exactness the bound only upper-bounds the Stein and Chernoff
  // exponents, and lower-bounds the strong-converse one through the
  // (alpha-1)/alpha factor
  rep.strong_converse = [alpha, b = bound_cb.bits](double r) {
    return r > b ? (alpha - 1.0) / alpha * (r - b) : 0.0;
  };
  report["exponents"] = to_json(rep);
  emit(report, out);
  return 0;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

int cmd_verify(const std::string& suite, std::uint64_t seed, const Output& out,
               const std::string& config) {
  SuiteResult res;
  if (suite == "ordering") {
    res = run_ordering_suite(200, seed);
  } else if (suite == "collapse") {
    res = run_collapse_suite(50, 30, seed);
  } else if (suite == "additivity") {
    res = run_additivity_suite(10, seed);
  } else if (suite == "pinching") {
    res = run_pinching_suite(8, seed);
  } else if (suite == "simplex") {
    res = run_simplex_suite(20, 200, seed);
  } else if (suite == "gns") {
    res = run_gns_suite(seed);
  } else {
    throw std::invalid_argument(
        "unknown suite (expected ordering|collapse|additivity|pinching|simplex|gns): " + suite);
  }

  json report = envelope("verify", seed, config);
  report["suite"] = res.suite;
  report["pass"] = res.pass();
  report["checks"] = json::array();
  for (const auto& c : res.checks) {
    std::cerr << (c.pass ? "[pass] " : "[FAIL] ") << res.suite << ": " << c.name
              << " (measured " << c.measured << ")\n";
    report["checks"].push_back(
        {{"name", c.name}, {"pass", c.pass}, {"measured", c.measured}, {"detail", c.detail}});
  }
  emit(report, out);
  return res.pass() ? 0 : 1;
}

// ---------------------------------------------------------------------------
// counterexample
// ---------------------------------------------------------------------------

int cmd_counterexample(int restarts, std::uint64_t seed, const Output& out,
                       const std::string& config) {
  const ThreeLayer inst = strict_gap_instance();
  const StrictGapAnalysis analysis = strict_gap_analysis();

  OptimizerConfig cfg;
  cfg.restarts = restarts;
  cfg.max_iters = 400;
  cfg.seed = seed;

  // oracle cross-check of the full channel divergence
  const Superoperator p = to_superoperator(three_layer_p_channel(inst));
  const Superoperator q = three_layer_q_channel(inst);
  const cvec opt_seed = strict_gap_optimal_input(analysis.p_star);
  const OracleResult oracle = maximize_channel_divergence(DivergenceKind::sandwiched(2.0), p, q,
                                                          1, cfg, {opt_seed});

  // per-block oracle values with the q-population of the achieving states
  json rows = json::array();
  for (int l = 0; l < 2; ++l) {
    const Superoperator rp = restricted_p_channel(inst, 0, l);
    const Superoperator rq = restricted_q_channel(inst, 0, l);
    const OracleResult block =
        maximize_channel_divergence(DivergenceKind::sandwiched(2.0), rp, rq, 1, cfg);
    HermitianEig eig = eigh(block.state.mat());
    const cvec psi = eig.vectors.col(0);
    // population of the first B level of the achieving state
    const double oracle_q = std::norm(psi[0]) + std::norm(psi[1]);
    rows.push_back({{"k", 0},
                    {"l", l},
                    {"d_A", 1},
                    {"d_B", 2},
                    {"value_bits", bits_to_json(std::log2(analysis.per_block_linear[l]))},
                    {"value_linear", analysis.per_block_linear[l]},
                    {"oracle_bits", bits_to_json(block.bits)},
                    {"q_star", analysis.q_star[l]},
                    {"oracle_q", oracle_q}});
  }

  json report = envelope("counterexample", seed, config);
  report["alpha"] = 2.0;
  report["blocks"] = rows;
  report["bound_bits"] = analysis.bound_bits;
  report["true_bits"] = analysis.true_bits;
  report["oracle_bits"] = bits_to_json(oracle.bits);
  report["p_star"] = analysis.p_star;
  report["gap_bits"] = analysis.gap_bits;
  report["strict_gap"] = analysis.gap_bits > 0.0;
  emit(report, out);
  return 0;
}

// ---------------------------------------------------------------------------
// gns
// ---------------------------------------------------------------------------

int cmd_gns(const std::string& phi_file, const std::string& psi_file,
            const std::string& tau_file, int k, std::uint64_t seed, const Output& out,
            const std::string& config) {
  rng_t rng(seed);
  const LoadedChannel phi = channel_from_json(load_json_file(phi_file), rng, phi_file);
  const LoadedChannel psi = channel_from_json(load_json_file(psi_file), rng, psi_file);
  const DensityMatrix tau = state_from_json(load_json_file(tau_file), tau_file);

  const IterateBounds b = iterate_bounds(phi.superop, psi.superop, tau.mat(), k, rng);

  json report = envelope("gns", seed, config);
  report["k"] = k;
  report["two_k"] = 2 * k;
  report["mu_phi"] = b.phi.mu;
  report["mu_psi"] = b.psi.mu;
  report["threshold_2k"] = std::max(b.phi.threshold_2k, b.psi.threshold_2k);
  report["eps_phi"] = b.phi.epsilon;
  report["eps_psi"] = b.psi.epsilon;
  report["peripheral_dcb_bits"] = bits_to_json(b.peripheral_dcb_bits);
  report["lower_bits"] = bits_to_json(b.lower_bits);
  report["upper_bits"] = bits_to_json(b.upper_bits);
  report["valid"] = b.valid;
  json brackets;
  brackets["stein"] = {bits_to_json(b.stein_lower), bits_to_json(b.stein_upper)};
  brackets["chernoff"] = {bits_to_json(b.chernoff_lower), bits_to_json(b.chernoff_upper)};
  json sc = json::array();
  for (double dr : {0.25, 0.5, 1.0}) {
    const double r = b.upper_bits + dr;
    sc.push_back({{"r", r},
                  {"lower", bits_to_json(r - b.upper_bits)},
                  {"upper", bits_to_json(r - b.lower_bits)}});
  }
  brackets["strong_converse"] = sc;
  report["exponent_brackets"] = brackets;
  emit(report, out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"divergences and error exponents for idempotent quantum channels"};
  app.require_subcommand(1);

  std::string config;
  for (int i = 1; i < argc; ++i) {
    config += argv[i];
    config += '\x1f';
  }

  Output out;
  std::uint64_t seed = 20250101;
  app.add_option("--seed", seed, "random seed (env IDEM_SEED overrides)");
  app.add_option("--format", out.format, "output format")
      ->check(CLI::IsMember({"json", "csv"}));
  app.add_option("--out", out.out_path, "write the report to a file instead of stdout");

  // divergence
  auto* div = app.add_subcommand("divergence", "state divergence between two density matrices");
  std::string rho_file, sigma_file, kind = "umegaki";
  std::optional<double> alpha_opt, eps_opt;
  double alpha_val = 0.0, eps_val = 0.0;
  div->add_option("rho", rho_file, "density matrix JSON file")->required();
  div->add_option("sigma", sigma_file, "density matrix JSON file")->required();
  div->add_option("--kind", kind,
                  "umegaki|petz|sandwiched|dmax|dmin|hypothesis_testing|chernoff|helstrom");
  auto* alpha_flag = div->add_option("--alpha", alpha_val, "Renyi order");
  auto* eps_flag = div->add_option("--epsilon", eps_val, "type-I error budget");

  // formula
  auto* formula = app.add_subcommand("formula", "closed-form channel divergence and exponents");
  std::string p_file, q_file;
  double f_alpha = 2.0;
  int restarts = 32;
  int ref_dim = 0;
  formula->add_option("P", p_file, "channel JSON file")->required();
  formula->add_option("Q", q_file, "channel JSON file")->required();
  formula->add_option("--alpha", f_alpha, "Renyi order for the general bound");
  formula->add_option("--restarts", restarts, "oracle restarts for the general route");
  formula->add_option("--ref-dim", ref_dim,
                      "reference dimension override for oracle runs (1 or the input dimension)");

  // verify
  auto* verify = app.add_subcommand("verify", "run a named verification suite");
  std::string suite;
  verify->add_option("--suite", suite, "ordering|collapse|additivity|pinching|simplex|gns")
      ->required();

  // counterexample
  auto* cex = app.add_subcommand("counterexample",
                                 "strict gap between the log-sum-exp bound and the true value");
  int cex_restarts = 32;
  cex->add_option("--restarts", cex_restarts, "oracle restarts");

  // gns
  auto* gns = app.add_subcommand("gns", "iterate sandwich for detailed-balance channels");
  std::string phi_file, psi_file, tau_file;
  int k = 1;
  gns->add_option("Phi", phi_file, "channel JSON file")->required();
  gns->add_option("Psi", psi_file, "channel JSON file")->required();
  gns->add_option("tau", tau_file, "common invariant state JSON file")->required();
  gns->add_option("--k", k, "half the iterate power (the channels are raised to 2k)")
      ->required();

  for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough(true);

  CLI11_PARSE(app, argc, argv);
  seed = resolve_seed(seed);

  Timer timer;
  try {
    if (alpha_flag->count()) alpha_opt = alpha_val;
    if (eps_flag->count()) eps_opt = eps_val;
    if (div->parsed()) {
      return cmd_divergence(rho_file, sigma_file, kind, alpha_opt, eps_opt, seed, out, config);
    }
    if (formula->parsed()) {
      (void)ref_dim;
      return cmd_formula(p_file, q_file, f_alpha, restarts, seed, out, config);
    }
    if (verify->parsed()) {
      return cmd_verify(suite, seed, out, config);
    }
    if (cex->parsed()) {
      return cmd_counterexample(cex_restarts, seed, out, config);
    }
    if (gns->parsed()) {
      return cmd_gns(phi_file, psi_file, tau_file, k, seed, out, config);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
