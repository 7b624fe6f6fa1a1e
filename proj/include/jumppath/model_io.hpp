#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "jumppath/committor.hpp"
#include "jumppath/doob.hpp"
#include "jumppath/errors.hpp"
#include "jumppath/path_record.hpp"
#include "jumppath/rate_kernel.hpp"
#include "jumppath/state_set.hpp"

namespace jumppath::io {

using nlohmann::json;

struct ModelFile {
  RateKernel kernel;
  StateSet A;
  StateSet B;
};

inline json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  out << j.dump(2) << '\n';
}

namespace detail {

inline const json& require(const json& j, const char* field, const std::string& ctx) {
  auto it = j.find(field);
  if (it == j.end()) throw ParseError(ctx + ": missing field \"" + field + "\"");
  return *it;
}

inline std::vector<int> int_list(const json& j, const char* field, const std::string& ctx) {
  if (!j.is_array()) throw ParseError(ctx + ": field \"" + field + "\" must be an array");
  std::vector<int> out;
  for (const auto& v : j) {
    if (!v.is_number_integer()) {
      throw ParseError(ctx + ": field \"" + field + "\" must hold integers");
    }
    out.push_back(v.get<int>());
  }
  return out;
}

}  // namespace detail

/// Extended scalar entries: +inf is written as the string "inf".
inline json field_to_json(const ScalarField& f) {
  json arr = json::array();
  for (double v : f) {
    if (std::isinf(v)) {
      arr.push_back("inf");
    } else {
      arr.push_back(v);
    }
  }
  return arr;
}

inline ScalarField field_from_json(const json& arr, const std::string& ctx) {
  if (!arr.is_array()) throw ParseError(ctx + ": expected an array of values");
  ScalarField out;
  for (const auto& v : arr) {
    if (v.is_number()) {
      out.push_back(v.get<double>());
    } else if (v.is_string()) {
      const std::string s = v.get<std::string>();
      if (s == "inf" || s == "+inf" || s == "Infinity") {
        out.push_back(std::numeric_limits<double>::infinity());
      } else {
        throw ParseError(ctx + ": unrecognized value \"" + s + "\"");
      }
    } else {
      throw ParseError(ctx + ": values must be numbers or \"inf\"");
    }
  }
  return out;
}

inline json model_to_json(const RateKernel& k, const StateSet& A = {}, const StateSet& B = {}) {
  json j;
  j["n_states"] = k.n_states();
  json rates = json::array();
  for (const RateEntry& e : k.triplets()) {
    rates.push_back(json::array({e.from, e.to, e.rate}));
  }
  j["rates"] = std::move(rates);
  if (!k.labels().empty()) j["labels"] = k.labels();
  j["A"] = A.members();
  j["B"] = B.members();
  return j;
}

inline ModelFile model_from_json(const json& j, const std::string& ctx = "model") {
  if (!j.is_object()) throw ParseError(ctx + ": expected a JSON object");
  const json& jn = detail::require(j, "n_states", ctx);
  if (!jn.is_number_integer()) throw ParseError(ctx + ": \"n_states\" must be an integer");
  const int n = jn.get<int>();

  const json& jr = detail::require(j, "rates", ctx);
  if (!jr.is_array()) throw ParseError(ctx + ": \"rates\" must be an array of triplets");
  std::vector<RateEntry> rates;
  for (const auto& t : jr) {
    if (!t.is_array() || t.size() != 3 || !t[0].is_number_integer() ||
        !t[1].is_number_integer() || !t[2].is_number()) {
      throw ParseError(ctx + ": each rate entry must be [from, to, rate]");
    }
    rates.push_back({t[0].get<int>(), t[1].get<int>(), t[2].get<double>()});
  }

  std::vector<std::string> labels;
  if (j.contains("labels")) {
    for (const auto& l : j["labels"]) {
      if (!l.is_string()) throw ParseError(ctx + ": labels must be strings");
      labels.push_back(l.get<std::string>());
    }
  }

  StateSet A, B;
  if (j.contains("A")) A = StateSet(detail::int_list(j["A"], "A", ctx));
  if (j.contains("B")) B = StateSet(detail::int_list(j["B"], "B", ctx));

  RateKernel kernel(n, std::move(rates), std::move(labels));
  A.check_bounds(n, "A");
  B.check_bounds(n, "B");
  return ModelFile{std::move(kernel), std::move(A), std::move(B)};
}

inline ModelFile load_model(const std::string& path) {
  return model_from_json(read_json(path), path);
}

inline void emit_model(const std::string& path, const RateKernel& k, const StateSet& A = {},
                       const StateSet& B = {}) {
  write_json(path, model_to_json(k, A, B));
}

inline json committor_to_json(const CommittorSolution& sol) {
  json j;
  j["h"] = field_to_json(sol.h);
  j["residual"] = sol.residual;
  if (sol.regularization_n.has_value()) j["n"] = *sol.regularization_n;
  return j;
}

inline ScalarField committor_field_from_json(const json& j, const std::string& ctx) {
  return field_from_json(detail::require(j, "h", ctx), ctx);
}

inline Distribution distribution_from_json(const json& j, const std::string& ctx) {
  const json& w = j.is_object() ? detail::require(j, "weights", ctx) : j;
  ScalarField f = field_from_json(w, ctx);
  for (double v : f) {
    if (!std::isfinite(v)) throw ParseError(ctx + ": weights must be finite");
  }
  try {
    return Distribution(std::move(f));
  } catch (const Error& e) {
    throw ParseError(ctx + ": " + e.what());
  }
}

/// Controlled model: the controlled kernel in the standard format plus the
/// velocity map and the field it came from.
inline json controlled_to_json(const RateKernel& base, const ControlSpec& spec,
                               const RateKernel& controlled) {
  json j = model_to_json(controlled, {}, {});
  json vel = json::array();
  for (int x = 0; x < base.n_states(); ++x) {
    auto row = base.out(x);
    const auto& vr = spec.velocity.row(x);
    for (std::size_t s = 0; s < row.size(); ++s) {
      vel.push_back(json::array({x, row[s].state, vr[s]}));
    }
  }
  j["velocity"] = std::move(vel);
  j["absorbing"] = spec.absorbing.members();
  j["source_h"] = field_to_json(spec.source_field);
  return j;
}

/// Rebuilds a ControlSpec (and its controlled kernel) against the base
/// kernel from a controlled-model file.
inline std::pair<ControlSpec, RateKernel> controlled_from_json(const RateKernel& base,
                                                               const json& j,
                                                               const std::string& ctx) {
  ControlSpec spec;
  spec.absorbing = StateSet(detail::int_list(detail::require(j, "absorbing", ctx), "absorbing", ctx));
  spec.source_field = field_from_json(detail::require(j, "source_h", ctx), ctx);
  spec.velocity = PairField(base, 0.0);
  const json& vel = detail::require(j, "velocity", ctx);
  for (const auto& t : vel) {
    if (!t.is_array() || t.size() != 3) {
      throw ParseError(ctx + ": velocity entries must be [from, to, v]");
    }
    const int x = t[0].get<int>();
    const int y = t[1].get<int>();
    const double v = t[2].get<double>();
    auto row = base.out(x);
    bool found = false;
    for (std::size_t s = 0; s < row.size(); ++s) {
      if (row[s].state == y) {
        spec.velocity.row(x)[s] = v;
        found = true;
        break;
      }
    }
    if (!found) {
      throw ParseError(ctx + ": velocity entry (" + std::to_string(x) + ", " +
                       std::to_string(y) + ") is off the base kernel support");
    }
  }
  RateKernel controlled = controlled_kernel(base, spec);
  return {std::move(spec), std::move(controlled)};
}

namespace detail {

inline json finite_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

inline json mean_to_json(const MeanWithError& m) {
  json j;
  j["mean"] = finite_or_null(m.mean);
  j["std_error"] = finite_or_null(m.std_error);
  j["n"] = m.n;
  return j;
}

}  // namespace detail

inline json stats_to_json(const EnsembleStats& st) {
  json j;
  j["n_paths"] = st.n_paths;
  j["n_hit_a"] = st.n_hit_a;
  j["n_hit_b"] = st.n_hit_b;
  j["n_horizon"] = st.n_horizon;
  j["n_max_jumps"] = st.n_max_jumps;
  j["hit_b_fraction"] = detail::mean_to_json(st.hit_b_fraction);
  j["tau"] = detail::mean_to_json(st.mean_tau);
  j["exp_tau"] = detail::mean_to_json(st.mean_exp_tau);
  j["log_weight"] = detail::mean_to_json(st.mean_log_weight);
  j["running_cost"] = detail::mean_to_json(st.mean_running_cost);
  j["heavy_tail_warning"] = st.heavy_tail_warning;
  j["seed"] = st.seed;
  return j;
}

/// paths.csv columns: path_id, jump_index, time, state. The start state is
/// written as jump_index -1 at time 0.
inline void append_path_csv(std::ostream& out, std::size_t path_id, const PathRecord& rec) {
  out << path_id << ",-1,0," << rec.start << '\n';
  for (std::size_t i = 0; i < rec.states.size(); ++i) {
    out << path_id << ',' << i << ',';
    std::ostringstream ts;
    ts.precision(17);
    ts << rec.jump_times[i];
    out << ts.str() << ',' << rec.states[i] << '\n';
  }
}

}  // namespace jumppath::io
