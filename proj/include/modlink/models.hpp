#pragma once

// Deterministic test-system generators: lumped chains and the two-stage
// guided-carriage bench used by the acceptance experiments.

#include <string>
#include <vector>

#include "modlink/interconnect.hpp"
#include "modlink/lti.hpp"

namespace modlink {

enum class ChainBoundary { fixed_free, free_free, fixed_fixed };

/// n equal masses joined by n-1 springs/dampers; "fixed" ends add one more
/// spring/damper to ground. Every dof in io_dofs gets an io port "q<dof>".
struct ChainSpec {
  std::string name = "chain";
  Index n = 1;
  double mass = 1.0;
  double stiffness = 1.0;
  double damping = 0.0;
  ChainBoundary boundary = ChainBoundary::fixed_free;
  std::vector<Index> io_dofs;
};

SecondOrderSystem make_chain(const ChainSpec& spec);

/// Parameters of the two-stage bench: a clamped rail (side ell, "x-stage") and
/// a free-free carriage (side j, "yz-stage") coupled by vertical springs. Both
/// stages are lumped transverse-dof Euler-Bernoulli beams with element length
/// length / n_elements. Coordinates are in metres along the rail axis.
struct StageModelConfig {
  Index rail_elements = 64;
  double rail_length = 0.64;
  Index carriage_elements = 32;
  double carriage_length = 0.32;

  double youngs_modulus = 2.1e11;
  double stiffness_scale = 1.0;  ///< multiplies the Young's modulus of both stages
  double density = 7800.0;
  double density_scale = 1.0;
  double section_width = 0.02;
  double section_height = 0.01;

  double spring_stiffness = 2e6;
  std::vector<double> anchors{0.04, 0.16, 0.28};  ///< spring positions on the carriage
  double carriage_origin = 0.16;  ///< rail coordinate of carriage coordinate 0 at zero offset

  Index n_v = 9;               ///< virtual points per interface side
  double rail_grid_lo = 0.16;  ///< rail-side virtual grid span
  double rail_grid_hi = 0.48;
  double carriage_grid_lo = 0.0;
  double carriage_grid_hi = 0.32;

  double zeta = 0.03;
  double f_max_hz = 400.0;  ///< largest frequency of interest

  /// 1: one interface carrying every spring. 2: springs split over two
  /// interfaces (first ceil(n/2) springs, then the rest) that share the grids,
  /// giving a two-dimensional operating space.
  Index interfaces = 1;

  /// Throws ValidationError listing every violated invariant.
  void validate() const;
};

struct TwoStageBench {
  StageModelConfig config;
  /// Rail and carriage with io ports "v0".."v<n_v-1>" on the virtual grid; the
  /// carriage also has the external input/output "tip" at its free end.
  std::vector<SecondOrderSystem> subsystems;
  std::vector<InterfaceSpec> interfaces;
  /// Same matrices with an io port "n<node>" on every mesh node, for the
  /// static ground-truth model.
  std::vector<SecondOrderSystem> static_subsystems;
  std::vector<InterfaceSpec> static_interfaces;
  ExternalPorts external;
  double omega_max = 0.0;  ///< rad/s
};

TwoStageBench make_two_stage_bench(const StageModelConfig& cfg = {});

/// Stiffness and lumped mass of a transverse beam on n_elements + 1 nodes.
/// Clamped ends are removed from the dof list.
struct BeamMatrices {
  SparseMatrix mass;
  SparseMatrix stiffness;
  std::vector<Index> node_of_dof;
};

BeamMatrices beam_matrices(Index n_elements, double length, double ei, double rho_a, bool clamped);

struct OperatingRange {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 1;  ///< count 1 yields the midpoint

  bool operator==(const OperatingRange&) const = default;
};

/// Cartesian product of per-interface offsets; the first interface varies
/// slowest.
std::vector<OperatingPoint> make_operating_grid(const std::vector<OperatingRange>& ranges);

}  // namespace modlink
