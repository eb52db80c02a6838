#pragma once

// JSON (de)serialization: matrices, density matrices, channel descriptions
// (block, Choi or Kraus form), three-layer decompositions and the report
// objects emitted by the command-line tool. Infinite values serialize as the
// string "inf", never as a large float.

#include "idchan/channels.hpp"
#include "idchan/closed_form.hpp"
#include "idchan/states.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace idchan {

using json = nlohmann::json;

inline json matrix_to_json(const cmat& m) {
  json j;
  j["dims"] = {m.rows(), m.cols()};
  std::vector<double> re, im;
  re.reserve(m.size());
  im.reserve(m.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      re.push_back(m(r, c).real());
      im.push_back(m(r, c).imag());
    }
  }
  j["re"] = re;
  j["im"] = im;
  return j;
}

inline cmat matrix_from_json(const json& j, const std::string& where = "matrix") {
  if (!j.is_object() || !j.contains("dims") || !j.contains("re")) {
    throw std::invalid_argument(where + ": expected an object with dims/re/im fields");
  }
  const auto& dims = j.at("dims");
  if (!dims.is_array() || dims.size() != 2) {
    throw std::invalid_argument(where + ".dims: expected [rows, cols]");
  }
  const Eigen::Index rows = dims[0].get<Eigen::Index>();
  const Eigen::Index cols = dims[1].get<Eigen::Index>();
  if (rows < 1 || cols < 1 || rows > kDimCap || cols > kDimCap) {
    throw std::invalid_argument(where + ".dims: out of range");
  }
  const auto re = j.at("re").get<std::vector<double>>();
  std::vector<double> im(re.size(), 0.0);
  if (j.contains("im")) im = j.at("im").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(re.size()) != rows * cols || im.size() != re.size()) {
    throw std::invalid_argument(where + ": re/im length does not match dims");
  }
  cmat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = cplx(re[r * cols + c], im[r * cols + c]);
      if (!std::isfinite(re[r * cols + c]) || !std::isfinite(im[r * cols + c])) {
        throw std::invalid_argument(where + ": non-finite entry");
      }
    }
  }
  return m;
}

inline json bits_to_json(double bits) {
  if (std::isinf(bits)) return json(bits > 0 ? "inf" : "-inf");
  return json(bits);
}

inline DensityMatrix state_from_json(const json& j, const std::string& where = "state") {
  return DensityMatrix(matrix_from_json(j, where));
}

// ---------------------------------------------------------------------------
// channel descriptions: {kind: block|choi|kraus, dim, ...}
// ---------------------------------------------------------------------------

struct LoadedChannel {
  Superoperator superop;
  std::optional<BlockIdempotent> block;  // set when the channel normalizes
};

inline json channel_to_json(const BlockIdempotent& bi) {
  json j;
  j["kind"] = "block";
  j["dim"] = bi.dim;
  j["blocks"] = json::array();
  for (const Block& b : bi.blocks) {
    j["blocks"].push_back({{"dA", b.dA}, {"dB", b.dB}, {"omega", matrix_to_json(b.omega)}});
  }
  if (max_abs(bi.basis - cmat::Identity(bi.dim, bi.dim)) > 0) {
    j["basis_change"] = matrix_to_json(bi.basis);
  }
  return j;
}

inline json channel_to_json(const Superoperator& ch) {
  json j;
  j["kind"] = "choi";
  j["dim"] = ch.dim_in;
  j["choi"] = matrix_to_json(choi(ch));
  return j;
}

// Channels arrive as block data, a Choi matrix or a Kraus list and are
// normalized to block form whenever they pass the idempotency and full-rank
// checks; otherwise the raw superoperator is kept.
inline LoadedChannel channel_from_json(const json& j, rng_t& rng,
                                       const std::string& where = "channel") {
  if (!j.is_object() || !j.contains("kind")) {
    throw std::invalid_argument(where + ": expected an object with a kind field");
  }
  const std::string kind = j.at("kind").get<std::string>();
  LoadedChannel out;
  if (kind == "block") {
    BlockIdempotent bi;
    bi.dim = j.at("dim").get<int>();
    if (j.contains("basis_change")) {
      bi.basis = matrix_from_json(j.at("basis_change"), where + ".basis_change");
    } else {
      bi.basis = cmat::Identity(bi.dim, bi.dim);
    }
    if (!j.contains("blocks") || !j.at("blocks").is_array()) {
      throw std::invalid_argument(where + ": block channel needs a blocks array");
    }
    for (const auto& bj : j.at("blocks")) {
      Block b;
      b.dA = bj.at("dA").get<int>();
      b.dB = bj.at("dB").get<int>();
      b.omega = matrix_from_json(bj.at("omega"), where + ".omega");
      bi.blocks.push_back(std::move(b));
    }
    validate(bi);
    out.block = bi;
    out.superop = to_superoperator(bi);
    return out;
  }
  if (kind == "choi") {
    const cmat jmat = matrix_from_json(j.at("choi"), where + ".choi");
    const int d = j.at("dim").get<int>();
    if (jmat.rows() != Eigen::Index(d) * d) {
      throw std::invalid_argument(where + ".choi: size does not match dim^2");
    }
    out.superop = superop_from_choi(jmat, d, d);
  } else if (kind == "kraus") {
    std::vector<cmat> ops;
    for (const auto& kj : j.at("kraus")) ops.push_back(matrix_from_json(kj, where + ".kraus"));
    out.superop = superop_from_kraus(ops);
    if (j.contains("dim") && j.at("dim").get<int>() != out.superop.dim_in) {
      throw std::invalid_argument(where + ": dim does not match the Kraus operators");
    }
  } else {
    throw std::invalid_argument(where + ".kind: expected block, choi or kraus");
  }
  const ChannelCheck cc = check_channel(out.superop);
  if (!cc.ok()) {
    throw std::invalid_argument(where + ": not a channel (cp violation " +
                                std::to_string(cc.cp_violation) + ", tp residual " +
                                std::to_string(cc.tp_residual) + ")");
  }
  if (out.superop.square() && is_idempotent(out.superop).idempotent) {
    const cmat unit = apply_channel(out.superop, cmat::Identity(out.superop.dim_in, out.superop.dim_in));
    if (numerical_rank(unit) == out.superop.dim_in) {
      out.block = superop_to_block_idempotent(out.superop, rng);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// three-layer decomposition
// ---------------------------------------------------------------------------

inline json three_layer_to_json(const ThreeLayer& t) {
  json j;
  j["K"] = t.K;
  j["L"] = t.L;
  j["a"] = t.a;
  j["c"] = t.c;
  j["b"] = t.b;
  j["basis_change"] = matrix_to_json(t.basis_change);
  j["delta"] = json::array();
  for (const cmat& d : t.delta) j["delta"].push_back(matrix_to_json(d));
  j["omega"] = json::array();
  for (const cmat& w : t.omega) j["omega"].push_back(matrix_to_json(w));
  j["common_invariant"] = t.common_invariant;
  if (t.common_invariant) {
    j["p"] = t.p;
    j["tau"] = json::array();
    for (int k = 0; k < t.K; ++k) {
      json row = json::array();
      for (int l = 0; l < t.L; ++l) {
        row.push_back(t.b[k][l] > 0 ? matrix_to_json(t.tau[k][l]) : json(nullptr));
      }
      j["tau"].push_back(row);
    }
  }
  return j;
}

// ---------------------------------------------------------------------------
// reports
// ---------------------------------------------------------------------------

struct DivergenceReport {
  std::string name;
  std::optional<double> alpha;
  double value_bits = 0.0;
  bool infinite = false;
  std::optional<cmat> achieving_state;
  std::vector<std::string> warnings;
};

inline json to_json(const DivergenceReport& r) {
  json j;
  j["name"] = r.name;
  if (r.alpha) j["alpha"] = *r.alpha;
  j["value_bits"] = bits_to_json(r.value_bits);
  j["infinite"] = r.infinite;
  if (r.achieving_state) j["achieving_state"] = matrix_to_json(*r.achieving_state);
  j["warnings"] = r.warnings;
  return j;
}

inline json to_json(const ExponentReport& r, const std::vector<double>& sc_rates = {}) {
  json j;
  j["stein_bits"] = bits_to_json(r.stein_bits);
  j["chernoff_bits"] = bits_to_json(r.chernoff_bits);
  j["dcb_bits"] = bits_to_json(r.dcb_bits);
  j["additive"] = r.additive;
  j["exact"] = r.exact;
  j["perfect_discrimination"] = r.perfect_discrimination;
  json table = json::array();
  std::vector<double> rates = sc_rates;
  if (rates.empty() && std::isfinite(r.dcb_bits)) {
    rates = {r.dcb_bits + 0.25, r.dcb_bits + 0.5, r.dcb_bits + 1.0};
  }
  for (double rate : rates) {
    table.push_back({{"r", rate}, {"exponent", bits_to_json(r.strong_converse(rate))}});
  }
  j["strong_converse"] = table;
  return j;
}

}  // namespace idchan
