#include "modlink/reports.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include <fmt/format.h>
#include <json.hpp>

#include "modlink/error.hpp"
#include "modlink/matrix_market.hpp"

namespace modlink {

using json = nlohmann::ordered_json;

namespace {

std::vector<std::pair<Index, Index>> resolve_entries(const FrfSweep& s,
                                                     const std::vector<std::pair<std::string, std::string>>& sel) {
  std::vector<std::pair<Index, Index>> out;
  if (sel.empty()) {
    for (Index j = 0; j < s.cols(); ++j)
      for (Index i = 0; i < s.rows(); ++i) out.emplace_back(i, j);
    return out;
  }
  std::vector<std::string> issues;
  for (const auto& [o, in] : sel) {
    const auto& ol = s.output_labels();
    const auto& il = s.input_labels();
    const auto oi = std::find(ol.begin(), ol.end(), o);
    const auto ii = std::find(il.begin(), il.end(), in);
    if (oi == ol.end() || ii == il.end()) issues.push_back(fmt::format("unknown entry {}/{}", o, in));
    else out.emplace_back(oi - ol.begin(), ii - il.begin());
  }
  if (!issues.empty()) throw ValidationError("invalid entry selection", issues);
  return out;
}

const char* method_name(ReductionMethod m) { return to_string(m).data(); }

}  // namespace

std::string sweep_csv(const std::vector<FrfSweep>& sweeps, const SweepTableOptions& options) {
  if (sweeps.empty()) throw ValidationError("no sweeps to tabulate");
  const auto pairs = resolve_entries(sweeps.front(), options.entries);
  std::string out = "omega_rad_s,op";
  if (options.normalize_hz) out += ",f_norm";
  for (const auto& [i, j] : pairs)
    out += fmt::format(",mag:{0}/{1},phase:{0}/{1}", sweeps.front().output_labels()[i],
                       sweeps.front().input_labels()[j]);
  out += '\n';
  for (std::size_t op = 0; op < sweeps.size(); ++op) {
    const auto& s = sweeps[op];
    for (std::size_t k = 0; k < s.size(); ++k) {
      const double w = s.frequencies()[k];
      out += fmt::format("{:.17g},{}", w, op);
      if (options.normalize_hz) out += fmt::format(",{:.17g}", w / (2.0 * std::numbers::pi) / *options.normalize_hz);
      for (const auto& [i, j] : pairs) {
        const Complex g = s.at(k)(i, j);
        out += fmt::format(",{:.17g},{:.17g}", std::abs(g), std::arg(g));
      }
      out += '\n';
    }
  }
  return out;
}

std::string sweep_index_json(const SweepIndex& index) {
  json j;
  j["csv"] = index.csv_file;
  j["frequencies"] = index.frequencies;
  j["operating_points"] = json::array();
  for (std::size_t k = 0; k < index.ops.size(); ++k)
    j["operating_points"].push_back(json{{"index", k}, {"offsets", index.ops[k].offsets}});
  j["entries"] = json::array();
  for (const auto& [o, i] : index.entries) j["entries"].push_back(json{{"output", o}, {"input", i}});
  j["phase_unit"] = "rad";
  j["omega_unit"] = "rad/s";
  if (index.normalize_hz) j["normalize_hz"] = *index.normalize_hz;
  if (index.cache)
    j["cache"] = json{{"hits", index.cache->hits},
                      {"misses", index.cache->misses},
                      {"subsystem_frf_evaluations", index.cache->evaluations}};
  return j.dump(2) + "\n";
}

std::string error_report_csv(const ErrorReport& report) {
  std::string out = "output,input,op,max_relative_error,worst_omega_rad_s,evaluated_frequencies,pass\n";
  for (const auto& e : report.entries)
    out += fmt::format("{},{},{},{:.17g},{:.17g},{},{}\n", e.output, e.input, e.op, e.max_relative, e.worst_omega,
                       e.evaluated, e.pass ? "true" : "false");
  return out;
}

namespace {

json error_report_object(const ErrorReport& report) {
  json j;
  j["threshold"] = report.threshold;
  j["floor"] = report.floor;
  j["pass"] = report.pass();
  j["max_relative_error"] = report.max_error();
  j["note"] = "verified only at the listed operating points and frequencies";
  j["entries"] = json::array();
  for (const auto& e : report.entries)
    j["entries"].push_back(json{{"output", e.output},
                                {"input", e.input},
                                {"op", e.op},
                                {"max_relative_error", e.max_relative},
                                {"worst_omega_rad_s", e.worst_omega},
                                {"evaluated_frequencies", e.evaluated},
                                {"pass", e.pass}});
  return j;
}

}  // namespace

std::string error_report_json(const ErrorReport& report) { return error_report_object(report).dump(2) + "\n"; }

double reduction_percent(Index n, Index r) {
  if (n <= 0) throw ValidationError("reduction percentage needs n > 0");
  return 100.0 * (1.0 - static_cast<double>(r) / static_cast<double>(n));
}

std::string order_table_csv(const SearchResult& result) {
  std::string out = "subsystem,method";
  const std::size_t nops = result.per_op_states.empty() ? 0 : result.per_op_states.front().size();
  for (std::size_t o = 0; o < nops; ++o) out += fmt::format(",op{}", o + 1);
  out += '\n';
  for (std::size_t j = 0; j < result.names.size(); ++j) {
    out += fmt::format("{},{}", result.names[j], method_name(result.methods[j]));
    for (Index s : result.per_op_states[j]) out += fmt::format(",{}", s);
    out += '\n';
  }
  return out;
}

std::string final_order_csv(const SearchResult& result) {
  std::string out = "subsystem,method,n_states,r_states,reduction_percent\n";
  for (std::size_t j = 0; j < result.names.size(); ++j)
    out += fmt::format("{},{},{},{},{:.1f}\n", result.names[j], method_name(result.methods[j]),
                       result.full_states[j], result.final_states[j],
                       reduction_percent(result.full_states[j], result.final_states[j]));
  return out;
}

std::string search_json(const SearchResult& result, const std::vector<OperatingPoint>& ops) {
  json j;
  j["reduction_percent_formula"] = "100 * (1 - r_states / n_states)";
  j["operating_points"] = json::array();
  for (const auto& op : ops) j["operating_points"].push_back(op.offsets);
  j["subsystems"] = json::array();
  for (std::size_t k = 0; k < result.names.size(); ++k) {
    json s;
    s["name"] = result.names[k];
    s["method"] = method_name(result.methods[k]);
    s["n_states"] = result.full_states[k];
    s["per_op_states"] = result.per_op_states[k];
    s["per_op_level"] = result.per_op_level[k];
    s["final_level"] = result.final_level[k];
    s["r_states"] = result.final_states[k];
    s["reduction_percent"] = reduction_percent(result.full_states[k], result.final_states[k]);
    const auto& w = result.witnesses[k];
    s["minimality_witness"] = w.at_minimum
                                  ? json{{"at_minimum_admissible_level", true}, {"level", w.level}}
                                  : json{{"level", w.level}, {"fails_at_op", w.op}, {"relative_error", w.error}};
    j["subsystems"].push_back(std::move(s));
  }
  j["repair_steps"] = result.repair_steps;
  j["evaluations"] = result.evaluations;
  j["final_report"] = error_report_object(result.final_report);
  return j.dump(2) + "\n";
}

void export_basis(const ReductionBasis& basis, const std::filesystem::path& directory, const std::string& stem) {
  std::filesystem::create_directories(directory);
  write_matrix_market_dense(directory / (stem + "_V.mtx"), basis.V);
  const bool two_sided = basis.method == ReductionMethod::bt;
  if (two_sided) write_matrix_market_dense(directory / (stem + "_W.mtx"), basis.W);
  json j;
  j["method"] = method_name(basis.method);
  j["r"] = basis.r;
  j["r_unit"] = basis.method == ReductionMethod::bt ? "states" : "dofs";
  j["V"] = stem + "_V.mtx";
  if (two_sided) j["W"] = stem + "_W.mtx";
  j["boundary_ports"] = basis.boundary_ports;
  j["boundary_dofs"] = basis.boundary_dofs;
  j["n_modes"] = basis.n_modes;
  j["n_rigid"] = basis.n_rigid;
  if (basis.method == ReductionMethod::bt) j["hankel_singular_values"] = basis.hankel_singular_values;
  else j["cutoff_hz"] = basis.cutoff_hz;
  if (basis.rank_deficient) j["rank_deficient"] = true;
  write_text_file(directory / (stem + ".json"), j.dump(2) + "\n");
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw ValidationError(fmt::format("cannot write '{}'", path.string()));
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace modlink
