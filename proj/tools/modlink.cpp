// modlink: command-line front end for position-dependent interconnected models.
//
//   modlink gen      --out DIR [--nv N] [--scale S] [--interfaces 1|2]
//   modlink assemble --manifest M --out DIR [--ops ...] [--freq ...] [--static]
//   modlink sweep    --manifest M --out DIR [--ops ...] [--freq ...] [--cache DIR]
//   modlink reduce   --manifest M --out DIR --method name=bt:20 ...
//   modlink search   --manifest M --out DIR [--method name=cb ...] [--threshold 0.1]
//   modlink compare  --manifest M --against OTHER|static --out DIR
//
// Exit codes: 0 success, 1 validation failure, 2 numerical failure.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "modlink/cache.hpp"
#include "modlink/error.hpp"
#include "modlink/log.hpp"
#include "modlink/manifest.hpp"
#include "modlink/matrix_market.hpp"
#include "modlink/models.hpp"
#include "modlink/mor.hpp"
#include "modlink/reports.hpp"

namespace fs = std::filesystem;
using namespace modlink;

namespace {

struct Common {
  std::string manifest;
  std::string out = "out";
  std::string ops;
  std::string freq;
  std::optional<double> normalize;
  unsigned threads = 1;
  std::vector<std::string> entries;
};

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& text, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(fmt::format("{}: '{}' is not a number", what, text));
  }
}

/// "min:max:count[:log|lin]" in Hz.
FrequencySpec parse_freq(const std::string& text, FrequencySpec fallback) {
  if (text.empty()) return fallback;
  const auto parts = split(text, ':');
  if (parts.size() < 3 || parts.size() > 4) throw ValidationError("--freq expects min:max:count[:log|lin] (Hz)");
  FrequencySpec f;
  f.min_hz = parse_double(parts[0], "--freq min");
  f.max_hz = parse_double(parts[1], "--freq max");
  f.count = static_cast<std::size_t>(parse_double(parts[2], "--freq count"));
  f.log = parts.size() < 4 || parts[3] == "log";
  if (parts.size() == 4 && parts[3] != "log" && parts[3] != "lin")
    throw ValidationError("--freq spacing must be 'log' or 'lin'");
  return f;
}

/// Comma-separated per-interface items, each "value" or "lo:hi:count".
OperatingSpec parse_ops(const std::string& text, const OperatingSpec& fallback, std::size_t n_interfaces) {
  if (text.empty()) return fallback;
  OperatingSpec spec;
  for (const auto& item : split(text, ',')) {
    const auto parts = split(item, ':');
    if (parts.size() == 1) {
      const double v = parse_double(parts[0], "--ops");
      spec.ranges.push_back({v, v, 1});
    } else if (parts.size() == 3) {
      spec.ranges.push_back({parse_double(parts[0], "--ops lo"), parse_double(parts[1], "--ops hi"),
                             static_cast<std::size_t>(parse_double(parts[2], "--ops count"))});
    } else {
      throw ValidationError(fmt::format("--ops item '{}' must be 'value' or 'lo:hi:count'", item));
    }
  }
  if (spec.ranges.size() != n_interfaces)
    throw ValidationError(fmt::format("--ops gives {} ranges for {} interfaces", spec.ranges.size(), n_interfaces));
  return spec;
}

std::vector<std::pair<std::string, std::string>> parse_entries(const std::vector<std::string>& items) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : items) {
    const auto parts = split(e, '/');
    if (parts.size() != 2) throw ValidationError(fmt::format("--entry '{}' must be output/input", e));
    out.emplace_back(parts[0], parts[1]);
  }
  return out;
}

struct MethodSpec {
  ReductionMethod method;
  std::optional<Index> level;
};

/// name=method[:level]
std::map<std::string, MethodSpec> parse_methods(const std::vector<std::string>& items) {
  std::map<std::string, MethodSpec> out;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ValidationError(fmt::format("--method '{}' must be name=method[:level]", item));
    const auto parts = split(item.substr(eq + 1), ':');
    MethodSpec spec{parse_method(parts[0]), std::nullopt};
    if (parts.size() == 2) spec.level = static_cast<Index>(parse_double(parts[1], "--method level"));
    if (parts.size() > 2) throw ValidationError(fmt::format("--method '{}' has too many fields", item));
    out[item.substr(0, eq)] = spec;
  }
  return out;
}

std::vector<FrfSweep> evaluate(const MaterializedModel& model, const std::vector<OperatingPoint>& ops,
                               const std::vector<double>& omega, unsigned threads, FrfCache* cache,
                               bool static_model = false) {
  const BlockSystem block{model.descriptors, model.layout};
  const FrfOptions frf{threads};
  const BlockFrf gb = cache ? cache->block(block, omega, frf) : block_frf(block, omega, frf);
  SweepOptions sweep;
  sweep.threads = threads;
  if (model.interfaces.empty()) {
    const FrfSweep g = lft_assemble(gb.block_sweep(), model.outer);
    return std::vector<FrfSweep>(ops.size(), g);
  }
  if (static_model) {
    std::vector<FrfSweep> out;
    for (const auto& op : ops)
      out.push_back(lft_assemble(gb.block_sweep(), model.outer.with_k11(static_k11(model.interfaces, op, model.layout))));
    return out;
  }
  return sweep_operating_points(gb, model.interfaces, ops, model.outer, omega, sweep);
}

void write_sweep(const Common& c, const std::vector<FrfSweep>& sweeps, const std::vector<OperatingPoint>& ops,
                 std::optional<FrfCache::Stats> stats) {
  SweepTableOptions table;
  table.entries = parse_entries(c.entries);
  table.normalize_hz = c.normalize;
  write_text_file(fs::path(c.out) / "sweep.csv", sweep_csv(sweeps, table));
  SweepIndex index;
  index.csv_file = "sweep.csv";
  index.ops = ops;
  index.frequencies = sweeps.front().size();
  index.entries = table.entries;
  if (index.entries.empty())
    for (const auto& in : sweeps.front().input_labels())
      for (const auto& out : sweeps.front().output_labels()) index.entries.emplace_back(out, in);
  index.cache = stats;
  index.normalize_hz = c.normalize;
  write_text_file(fs::path(c.out) / "sweep.json", sweep_index_json(index));
}

int cmd_gen(const std::string& out, const StageModelConfig& cfg) {
  const auto bench = make_two_stage_bench(cfg);
  write_bench_manifest(bench, out);
  fmt::print("wrote {}\n", (fs::path(out) / "manifest.json").string());
  return 0;
}

int cmd_assemble(const Common& c, bool use_static, const std::string& cache_dir) {
  const auto manifest = load_manifest(c.manifest);
  const auto model = materialize(manifest, use_static);
  const auto omega = parse_freq(c.freq, manifest.frequency).omega();
  const auto ops = parse_ops(c.ops, manifest.operating, manifest.interfaces.size()).expand();
  std::optional<FrfCache> cache;
  if (!cache_dir.empty()) cache.emplace(cache_dir);
  const auto t0 = std::chrono::steady_clock::now();
  const auto sweeps = evaluate(model, ops, omega, c.threads, cache ? &*cache : nullptr, use_static);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_sweep(c, sweeps, ops, cache ? std::optional(cache->stats()) : std::nullopt);
  fmt::print("{} operating points x {} frequencies in {:.2f} s\n", ops.size(), omega.size(), seconds);
  if (cache)
    fmt::print("cache: {} hits, {} misses, {} subsystem FRF evaluations\n", cache->stats().hits,
               cache->stats().misses, cache->stats().evaluations);
  return 0;
}

int cmd_reduce(const Common& c, const std::vector<std::string>& method_items) {
  const auto manifest = load_manifest(c.manifest);
  const auto model = materialize(manifest);
  const auto methods = parse_methods(method_items);
  const fs::path out(c.out);
  fs::create_directories(out);

  ModelManifest reduced = manifest;
  reduced.base_dir = out;
  reduced.static_subsystems.clear();
  reduced.static_interfaces.clear();
  for (auto& s : reduced.subsystems) {
    auto absolute = [&](std::string& f) {
      if (!f.empty()) f = fs::absolute(manifest.base_dir / f).lexically_normal().string();
    };
    absolute(s.mass);
    absolute(s.stiffness);
    absolute(s.damping.file);
    absolute(s.e);
    absolute(s.a);
    absolute(s.b);
    absolute(s.c);
    absolute(s.d);
  }

  for (const auto& [name, spec] : methods) {
    const auto it = std::find_if(manifest.subsystems.begin(), manifest.subsystems.end(),
                                 [&](const SubsystemEntry& s) { return s.name == name; });
    if (it == manifest.subsystems.end()) throw ValidationError(fmt::format("--method names unknown subsystem '{}'", name));
    const std::size_t j = static_cast<std::size_t>(it - manifest.subsystems.begin());
    if (!spec.level) throw ValidationError(fmt::format("--method for '{}' needs a level (name=method:level)", name));
    auto& entry = reduced.subsystems[j];
    ReductionBasis basis;
    if (spec.method == ReductionMethod::bt) {
      auto [ss, b] = reduce_bt(model.descriptors[j], *spec.level);
      basis = std::move(b);
      entry = SubsystemEntry{};
      entry.name = name;
      entry.type = SubsystemEntry::Type::state_space;
      entry.e = name + "_E.mtx";
      entry.a = name + "_A.mtx";
      entry.b = name + "_B.mtx";
      entry.c = name + "_C.mtx";
      entry.d = name + "_D.mtx";
      entry.inputs = ss.input_labels();
      entry.outputs = ss.output_labels();
      write_matrix_market(out / entry.e, ss.E());
      write_matrix_market(out / entry.a, ss.A());
      write_matrix_market(out / entry.b, ss.B());
      write_matrix_market(out / entry.c, ss.C());
      write_matrix_market_dense(out / entry.d, ss.D());
    } else {
      if (!model.second_order[j]) throw ValidationError(fmt::format("'{}' is not second-order; use bt", name));
      const CmsReducer reducer(spec.method, *model.second_order[j]);
      auto [sys, b] = reducer.reduce(*spec.level);
      basis = std::move(b);
      const std::string keep_name = entry.name;
      auto ports = entry.ports;
      entry = SubsystemEntry{};
      entry.name = keep_name;
      entry.mass = name + "_Mr.mtx";
      entry.stiffness = name + "_Kr.mtx";
      entry.damping = {DampingSpec::Kind::file, name + "_Dr.mtx", 0.0};
      write_matrix_market(out / entry.mass, sys.mass(), true);
      write_matrix_market(out / entry.stiffness, sys.stiffness(), true);
      write_matrix_market(out / entry.damping.file, sys.damping(), true);
      for (auto& p : ports) {
        const auto pos = std::lower_bound(basis.boundary_dofs.begin(), basis.boundary_dofs.end(), p.dof);
        p.dof = static_cast<Index>(pos - basis.boundary_dofs.begin());
      }
      entry.ports = ports;
    }
    export_basis(basis, out, name + "_basis");
    fmt::print("{}: {} r = {} ({})\n", name, to_string(spec.method), basis.r,
               spec.method == ReductionMethod::bt ? "states" : "dofs");
  }
  save_manifest(reduced, out / "reduced.json");
  fmt::print("wrote {}\n", (out / "reduced.json").string());
  return 0;
}

int cmd_search(const Common& c, const std::vector<std::string>& method_items, double threshold, bool use_reference) {
  const auto manifest = load_manifest(c.manifest);
  const auto model = materialize(manifest);
  const auto fspec = parse_freq(c.freq, manifest.frequency);
  const auto ops = parse_ops(c.ops, manifest.operating, manifest.interfaces.size()).expand();
  const auto methods = parse_methods(method_items);

  std::vector<SearchSubsystem> subs;
  for (std::size_t j = 0; j < model.descriptors.size(); ++j) {
    if (!model.second_order[j])
      throw ValidationError(fmt::format("order search needs second-order subsystems ('{}' is state_space)",
                                        model.descriptors[j].name()));
    const auto it = methods.find(model.descriptors[j].name());
    subs.push_back({*model.second_order[j], it == methods.end() ? ReductionMethod::cb : it->second.method, {}});
  }

  // Verification grid: log-spaced, refined around resonances of the full model
  // at the first operating point.
  const double two_pi = 2.0 * std::numbers::pi;
  const auto omega = verification_grid(
      two_pi * fspec.min_hz, two_pi * fspec.max_hz,
      [&](const std::vector<double>& w) { return evaluate(model, {ops.front()}, w, c.threads, nullptr).front(); },
      fspec.count, 4);

  SearchOptions options;
  options.error.threshold = threshold;
  options.error.entries = parse_entries(c.entries);
  options.frf.threads = c.threads;
  options.sweep.threads = c.threads;
  if (use_reference) {
    if (!manifest.has_static_model()) throw ValidationError("--reference-static needs a static_model section");
    options.reference = evaluate(materialize(manifest, true), ops, omega, c.threads, nullptr, true);
  }

  const auto t0 = std::chrono::steady_clock::now();
  const SearchResult result = minimal_order_search(subs, model.interfaces, ops, model.external, omega, options);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  // Independent re-verification of the final orders.
  std::vector<DescriptorStateSpace> reduced;
  for (std::size_t j = 0; j < subs.size(); ++j)
    reduced.push_back(Reducer(subs[j].system, subs[j].method).reduce(result.final_level[j]).first);
  const auto full = evaluate(model, ops, omega, c.threads, nullptr);
  const auto red = assemble_reduced(reduced, model.layout, model.interfaces, ops, model.outer, omega);
  ErrorReport check;
  check.threshold = threshold;
  for (std::size_t o = 0; o < ops.size(); ++o) check.append(relative_error(full[o], red[o], options.error, o));

  const fs::path out(c.out);
  write_text_file(out / "orders_per_op.csv", order_table_csv(result));
  write_text_file(out / "final_orders.csv", final_order_csv(result));
  write_text_file(out / "search.json", search_json(result, ops));
  write_text_file(out / "error_report.csv", error_report_csv(check));
  write_text_file(out / "error_report.json", error_report_json(check));
  fmt::print("{}", final_order_csv(result));
  fmt::print("search: {} evaluations, {} repair steps, {:.1f} s; re-verification {} (max error {:.4g})\n",
             result.evaluations, result.repair_steps, seconds, check.pass() ? "passed" : "FAILED", check.max_error());
  if (!check.pass()) throw NumericalError("re-verification of the found orders failed");
  return 0;
}

int cmd_compare(const Common& c, const std::string& against, double threshold) {
  const auto manifest = load_manifest(c.manifest);
  const auto model = materialize(manifest);
  const auto omega = parse_freq(c.freq, manifest.frequency).omega();
  const auto ops = parse_ops(c.ops, manifest.operating, manifest.interfaces.size()).expand();
  const auto full = evaluate(model, ops, omega, c.threads, nullptr);

  std::vector<FrfSweep> other;
  if (against == "static") {
    other = evaluate(materialize(manifest, true), ops, omega, c.threads, nullptr, true);
  } else {
    const auto other_manifest = load_manifest(against);
    other = evaluate(materialize(other_manifest), ops, omega, c.threads, nullptr);
  }

  ErrorOptions eo;
  eo.threshold = threshold;
  eo.entries = parse_entries(c.entries);
  ErrorReport report;
  report.threshold = threshold;
  for (std::size_t o = 0; o < ops.size(); ++o) {
    // The second model is compared against the first one as reference.
    report.append(relative_error(against == "static" ? other[o] : full[o], against == "static" ? full[o] : other[o],
                                 eo, o));
  }
  write_text_file(fs::path(c.out) / "error_report.csv", error_report_csv(report));
  write_text_file(fs::path(c.out) / "error_report.json", error_report_json(report));
  fmt::print("max relative error {:.4g} ({})\n", report.max_error(), report.pass() ? "pass" : "fail");
  return 0;
}

void add_common(CLI::App* app, Common& c, bool needs_manifest = true) {
  if (needs_manifest) app->add_option("--manifest", c.manifest, "Model manifest (JSON)")->required()->check(CLI::ExistingFile);
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--ops", c.ops, "Operating points per interface: value or lo:hi:count, comma-separated");
  app->add_option("--freq", c.freq, "Frequency grid min:max:count[:log|lin] in Hz");
  app->add_option("--normalize", c.normalize, "Add a normalized-frequency column f / F_REF (presentation only)");
  app->add_option("--threads", c.threads, "Worker threads");
  app->add_option("--entry", c.entries, "Restrict to output/input entries");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"modlink: modular, position-dependent interconnected system models"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log progress to stderr");

  Common c;
  StageModelConfig gen_cfg;
  std::string gen_out = "bench";
  auto* gen = app.add_subcommand("gen", "Generate the two-stage bench (manifest + Matrix Market files)");
  gen->add_option("--out", gen_out, "Output directory");
  gen->add_option("--nv", gen_cfg.n_v, "Virtual points per interface side");
  gen->add_option("--scale", gen_cfg.stiffness_scale, "Stiffness scale of both stages");
  gen->add_option("--interfaces", gen_cfg.interfaces, "1 or 2 interfaces");
  gen->add_option("--zeta", gen_cfg.zeta, "Modal damping ratio");
  gen->add_option("--fmax", gen_cfg.f_max_hz, "Largest frequency of interest [Hz]");
  gen->add_option("--ks", gen_cfg.spring_stiffness, "Spring stiffness [N/m]");

  bool use_static = false;
  std::string cache_dir;
  auto* assemble = app.add_subcommand("assemble", "Evaluate the interconnected FRF at operating points");
  add_common(assemble, c);
  assemble->add_flag("--static", use_static, "Use the static ground-truth model");

  auto* sweep = app.add_subcommand("sweep", "Operating-point sweep on cached subsystem FRFs");
  add_common(sweep, c);
  sweep->add_option("--cache", cache_dir, "FRF cache directory (default OUT/cache)");

  std::vector<std::string> methods;
  double threshold = 0.1;
  auto* reduce = app.add_subcommand("reduce", "Reduce subsystems and write a reduced manifest");
  add_common(reduce, c);
  reduce->add_option("--method", methods, "name=bt|cb|hh:level")->required();

  auto* search = app.add_subcommand("search", "Minimal subsystem orders meeting the relative-error threshold");
  add_common(search, c);
  search->add_option("--method", methods, "name=bt|cb|hh (default cb)");
  search->add_option("--threshold", threshold, "Relative FRF error threshold");
  bool use_reference = false;
  search->add_flag("--reference-static", use_reference,
                   "Fail early if the full-order model already misses the threshold against the static model");

  std::string against;
  auto* compare = app.add_subcommand("compare", "Relative error between two models");
  add_common(compare, c);
  compare->add_option("--against", against, "Second manifest, or 'static' for the ground-truth section")->required();
  compare->add_option("--threshold", threshold, "Relative FRF error threshold");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  if (verbose) set_log_level(LogLevel::info);

  try {
    if (*gen) return cmd_gen(gen_out, gen_cfg);
    if (*assemble) return cmd_assemble(c, use_static, "");
    if (*sweep) return cmd_assemble(c, false, cache_dir.empty() ? (fs::path(c.out) / "cache").string() : cache_dir);
    if (*reduce) return cmd_reduce(c, methods);
    if (*search) return cmd_search(c, methods, threshold, use_reference);
    if (*compare) return cmd_compare(c, against, threshold);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
