#include "modlink/models.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "modlink/error.hpp"

namespace modlink {

namespace {

using Triplet = Eigen::Triplet<double>;

SparseMatrix assemble(Index n, const std::vector<Triplet>& triplets) {
  SparseMatrix out(n, n);
  out.setFromTriplets(triplets.begin(), triplets.end());
  out.makeCompressed();
  return out;
}

}  // namespace

SecondOrderSystem make_chain(const ChainSpec& spec) {
  if (spec.n < 1) throw ValidationError("chain needs at least one dof");
  const Index n = spec.n;
  std::vector<Triplet> m, k, d;
  auto element = [&](std::vector<Triplet>& out, double value, Index a, Index b) {
    out.emplace_back(a, a, value);
    out.emplace_back(b, b, value);
    out.emplace_back(a, b, -value);
    out.emplace_back(b, a, -value);
  };
  for (Index i = 0; i < n; ++i) m.emplace_back(i, i, spec.mass);
  for (Index i = 0; i + 1 < n; ++i) {
    element(k, spec.stiffness, i, i + 1);
    if (spec.damping != 0.0) element(d, spec.damping, i, i + 1);
  }
  const bool ground_first = spec.boundary != ChainBoundary::free_free;
  const bool ground_last = spec.boundary == ChainBoundary::fixed_fixed;
  if (ground_first) {
    k.emplace_back(0, 0, spec.stiffness);
    if (spec.damping != 0.0) d.emplace_back(0, 0, spec.damping);
  }
  if (ground_last) {
    k.emplace_back(n - 1, n - 1, spec.stiffness);
    if (spec.damping != 0.0) d.emplace_back(n - 1, n - 1, spec.damping);
  }
  PortSet ports;
  for (Index dof : spec.io_dofs) ports.add_io(fmt::format("q{}", dof), dof);
  return {spec.name, assemble(n, m), assemble(n, d), assemble(n, k), std::move(ports)};
}

BeamMatrices beam_matrices(Index n_elements, double length, double ei, double rho_a, bool clamped) {
  if (n_elements < 2) throw ValidationError("beam needs at least 2 elements");
  const Index nodes = n_elements + 1;
  const double h = length / static_cast<double>(n_elements);
  const double kscale = ei / (h * h * h);

  // Curvature rows l (second differences) with quadrature weights c:
  // K = EI / h^3 * sum c l l^T. A clamped end contributes the ghost-node row
  // [2 at the neighbour] with half weight.
  std::vector<Triplet> k;
  auto add_row = [&](const std::vector<std::pair<Index, double>>& row, double c) {
    for (const auto& [i, li] : row)
      for (const auto& [j, lj] : row) k.emplace_back(i, j, kscale * c * li * lj);
  };
  for (Index i = 1; i + 1 < nodes; ++i) add_row({{i - 1, 1.0}, {i, -2.0}, {i + 1, 1.0}}, 1.0);
  if (clamped) {
    add_row({{1, 2.0}}, 0.5);
    add_row({{nodes - 2, 2.0}}, 0.5);
  }

  std::vector<Triplet> m;
  for (Index i = 0; i < nodes; ++i) m.emplace_back(i, i, rho_a * h * ((i == 0 || i == nodes - 1) ? 0.5 : 1.0));

  const SparseMatrix kf = assemble(nodes, k);
  const SparseMatrix mf = assemble(nodes, m);
  BeamMatrices out;
  if (!clamped) {
    out.stiffness = kf;
    out.mass = mf;
    for (Index i = 0; i < nodes; ++i) out.node_of_dof.push_back(i);
    return out;
  }
  const Index nd = nodes - 2;
  SparseMatrix select(nodes, nd);
  std::vector<Triplet> s;
  for (Index d = 0; d < nd; ++d) {
    s.emplace_back(d + 1, d, 1.0);
    out.node_of_dof.push_back(d + 1);
  }
  select.setFromTriplets(s.begin(), s.end());
  out.stiffness = SparseMatrix(select.transpose() * kf * select);
  out.mass = SparseMatrix(select.transpose() * mf * select);
  out.stiffness.makeCompressed();
  out.mass.makeCompressed();
  return out;
}

void StageModelConfig::validate() const {
  std::vector<std::string> issues;
  auto positive = [&](double v, const char* what) {
    if (!(v > 0.0) || !std::isfinite(v)) issues.push_back(fmt::format("{} must be positive (got {})", what, v));
  };
  if (rail_elements < 2) issues.push_back("rail_elements must be >= 2");
  if (carriage_elements < 2) issues.push_back("carriage_elements must be >= 2");
  if (n_v < 2) issues.push_back("n_v must be >= 2");
  positive(rail_length, "rail_length");
  positive(carriage_length, "carriage_length");
  positive(youngs_modulus, "youngs_modulus");
  positive(stiffness_scale, "stiffness_scale");
  positive(density, "density");
  positive(density_scale, "density_scale");
  positive(section_width, "section_width");
  positive(section_height, "section_height");
  positive(spring_stiffness, "spring_stiffness");
  positive(f_max_hz, "f_max_hz");
  if (!(zeta >= 0.0 && zeta < 1.0)) issues.push_back(fmt::format("zeta {} outside [0, 1)", zeta));
  if (anchors.empty()) issues.push_back("at least one spring anchor is required");
  if (interfaces != 1 && interfaces != 2) issues.push_back("interfaces must be 1 or 2");
  if (interfaces == 2 && anchors.size() < 2) issues.push_back("two interfaces need at least two springs");
  if (!(rail_grid_lo >= 0.0 && rail_grid_hi <= rail_length && rail_grid_lo < rail_grid_hi))
    issues.push_back("rail grid must be an increasing span inside the rail");
  if (!(carriage_grid_lo >= 0.0 && carriage_grid_hi <= carriage_length && carriage_grid_lo < carriage_grid_hi))
    issues.push_back("carriage grid must be an increasing span inside the carriage");
  for (double a : anchors) {
    if (a < carriage_grid_lo || a > carriage_grid_hi)
      issues.push_back(fmt::format("anchor {} outside the carriage grid [{}, {}]", a, carriage_grid_lo, carriage_grid_hi));
    const double rail_pos = carriage_origin + a;
    if (rail_pos < rail_grid_lo || rail_pos > rail_grid_hi)
      issues.push_back(fmt::format("anchor {} maps to rail position {} outside the rail grid", a, rail_pos));
  }
  if (!issues.empty()) throw ValidationError("invalid two-stage bench configuration", issues);
}

namespace {

// Mesh node at coordinate x of a beam with element length h, or an error if x
// is not on a node.
Index node_at(double x, double h, Index nodes, const char* stage) {
  const double t = x / h;
  const double r = std::round(t);
  if (std::abs(t - r) > 1e-6 || r < 0 || r >= static_cast<double>(nodes))
    throw ValidationError(fmt::format("virtual point {} on the {} is not on a mesh node (h = {})", x, stage, h));
  return static_cast<Index>(r);
}

std::vector<double> grid(double lo, double hi, Index n) {
  std::vector<double> out(n);
  for (Index k = 0; k < n; ++k) out[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n - 1);
  return out;
}

}  // namespace

TwoStageBench make_two_stage_bench(const StageModelConfig& cfg) {
  cfg.validate();
  const double area = cfg.section_width * cfg.section_height;
  const double inertia = cfg.section_width * std::pow(cfg.section_height, 3) / 12.0;
  const double ei = cfg.youngs_modulus * cfg.stiffness_scale * inertia;
  const double rho_a = cfg.density * cfg.density_scale * area;

  const BeamMatrices rail = beam_matrices(cfg.rail_elements, cfg.rail_length, ei, rho_a, true);
  const BeamMatrices carriage = beam_matrices(cfg.carriage_elements, cfg.carriage_length, ei, rho_a, false);
  const double h_rail = cfg.rail_length / static_cast<double>(cfg.rail_elements);
  const double h_car = cfg.carriage_length / static_cast<double>(cfg.carriage_elements);

  auto dof_of_node = [](const BeamMatrices& b, Index node) -> Index {
    for (std::size_t d = 0; d < b.node_of_dof.size(); ++d)
      if (b.node_of_dof[d] == node) return static_cast<Index>(d);
    throw ValidationError(fmt::format("virtual point on constrained node {}", node));
  };

  TwoStageBench out;
  out.config = cfg;
  out.omega_max = 2.0 * std::numbers::pi * cfg.f_max_hz;

  // Virtual-grid subsystems.
  InterfaceSide rail_side{"rail", {}}, car_side{"carriage", {}};
  PortSet rail_ports, car_ports;
  const auto rail_grid = grid(cfg.rail_grid_lo, cfg.rail_grid_hi, cfg.n_v);
  const auto car_grid = grid(cfg.carriage_grid_lo, cfg.carriage_grid_hi, cfg.n_v);
  for (Index k = 0; k < cfg.n_v; ++k) {
    const std::string label = fmt::format("v{}", k);
    rail_ports.add_io(label, dof_of_node(rail, node_at(rail_grid[k], h_rail, cfg.rail_elements + 1, "rail")));
    car_ports.add_io(label, dof_of_node(carriage, node_at(car_grid[k], h_car, cfg.carriage_elements + 1, "carriage")));
    rail_side.points.push_back({label, rail_grid[k]});
    car_side.points.push_back({label, car_grid[k]});
  }
  const Index tip = dof_of_node(carriage, cfg.carriage_elements);
  car_ports.add_input("tip", tip).add_output("tip", tip);

  // Node-resolution subsystems for the static model.
  InterfaceSide rail_static{"rail", {}}, car_static{"carriage", {}};
  PortSet rail_all, car_all;
  for (std::size_t d = 0; d < rail.node_of_dof.size(); ++d) {
    const Index node = rail.node_of_dof[d];
    const std::string label = fmt::format("n{}", node);
    rail_all.add_io(label, static_cast<Index>(d));
    rail_static.points.push_back({label, static_cast<double>(node) * h_rail});
  }
  for (std::size_t d = 0; d < carriage.node_of_dof.size(); ++d) {
    const Index node = carriage.node_of_dof[d];
    const std::string label = fmt::format("n{}", node);
    car_all.add_io(label, static_cast<Index>(d));
    car_static.points.push_back({label, static_cast<double>(node) * h_car});
  }
  car_all.add_input("tip", tip).add_output("tip", tip);

  const SparseMatrix rail_d = build_modal_damping(rail.mass, rail.stiffness, cfg.zeta);
  const SparseMatrix car_d = build_modal_damping(carriage.mass, carriage.stiffness, cfg.zeta);
  out.subsystems.emplace_back("rail", rail.mass, rail_d, rail.stiffness, rail_ports);
  out.subsystems.emplace_back("carriage", carriage.mass, car_d, carriage.stiffness, car_ports);
  out.static_subsystems.emplace_back("rail", rail.mass, rail_d, rail.stiffness, rail_all);
  out.static_subsystems.emplace_back("carriage", carriage.mass, car_d, carriage.stiffness, car_all);

  std::vector<std::vector<SpringSpec>> groups(cfg.interfaces);
  const std::size_t split = (cfg.anchors.size() + 1) / 2;
  for (std::size_t s = 0; s < cfg.anchors.size(); ++s) {
    const std::size_t g = (cfg.interfaces == 2 && s >= split) ? 1 : 0;
    groups[g].push_back({cfg.spring_stiffness, cfg.anchors[s], cfg.carriage_origin + cfg.anchors[s]});
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const std::string id = cfg.interfaces == 1 ? "guide" : fmt::format("guide{}", g);
    out.interfaces.push_back({id, car_side, rail_side, groups[g], "x", SlidingSide::ell});
    out.static_interfaces.push_back({id, car_static, rail_static, groups[g], "x", SlidingSide::ell});
  }

  out.external.inputs.push_back({"carriage", "tip", "F_tip"});
  out.external.outputs.push_back({"carriage", "tip", "z_tip"});
  return out;
}

std::vector<OperatingPoint> make_operating_grid(const std::vector<OperatingRange>& ranges) {
  std::vector<std::string> issues;
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    if (ranges[i].count < 1) issues.push_back(fmt::format("range {} has count 0", i));
    if (!(ranges[i].hi >= ranges[i].lo)) issues.push_back(fmt::format("range {} has hi < lo", i));
  }
  if (!issues.empty()) throw ValidationError("invalid operating ranges", issues);

  std::vector<std::vector<double>> axes;
  for (const auto& r : ranges) {
    if (r.count == 1) {
      axes.push_back({0.5 * (r.lo + r.hi)});
      continue;
    }
    std::vector<double> axis(r.count);
    for (std::size_t k = 0; k < r.count; ++k)
      axis[k] = r.lo + (r.hi - r.lo) * static_cast<double>(k) / static_cast<double>(r.count - 1);
    axis.back() = r.hi;
    axes.push_back(std::move(axis));
  }
  std::vector<OperatingPoint> out{OperatingPoint{}};
  for (const auto& axis : axes) {
    std::vector<OperatingPoint> next;
    for (const auto& op : out)
      for (double v : axis) {
        OperatingPoint p = op;
        p.offsets.push_back(v);
        next.push_back(std::move(p));
      }
    out = std::move(next);
  }
  return out;
}

}  // namespace modlink
