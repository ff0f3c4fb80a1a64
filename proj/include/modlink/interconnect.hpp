#pragma once

// Block collection of subsystems, static and position-dependent interconnection
// matrices, and the upper LFT that closes the interconnection.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "modlink/lti.hpp"

namespace modlink {

/// Subsystem port bookkeeping of the block system: which global input/output
/// indices of u_b / y_b belong to which subsystem port.
class PortLayout {
 public:
  struct Entry {
    std::string name;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    Index input_offset = 0;
    Index output_offset = 0;
  };

  PortLayout() = default;
  explicit PortLayout(std::vector<Entry> entries);

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  Index m_b() const noexcept { return m_b_; }
  Index p_b() const noexcept { return p_b_; }

  std::optional<std::size_t> find_subsystem(const std::string& name) const;
  std::optional<Index> input_index(const std::string& subsystem, const std::string& label) const;
  std::optional<Index> output_index(const std::string& subsystem, const std::string& label) const;

  bool operator==(const PortLayout&) const = default;

 private:
  std::vector<Entry> entries_;
  Index m_b_ = 0;
  Index p_b_ = 0;
};

/// G_b = diag(G_1, ..., G_k) over the subsystem realizations.
struct BlockSystem {
  std::vector<DescriptorStateSpace> subsystems;
  PortLayout layout;

  Index m_b() const noexcept { return layout.m_b(); }
  Index p_b() const noexcept { return layout.p_b(); }
};

/// Concatenates subsystems in order. Subsystem names must be unique.
BlockSystem block_collect(std::vector<DescriptorStateSpace> systems);

/// Per-subsystem FRFs on a shared frequency grid, the read-only cache used for
/// operating-point sweeps.
struct BlockFrf {
  PortLayout layout;
  std::vector<FrfSweep> subsystems;

  const std::vector<double>& frequencies() const;
  /// Dense block-diagonal G_b sweep.
  FrfSweep block_sweep() const;
};

/// Evaluates every subsystem of `block` on `omega`.
BlockFrf block_frf(const BlockSystem& block, const std::vector<double>& omega, const FrfOptions& options = {});

/// Assembles a BlockFrf from precomputed sweeps (e.g. cache hits).
BlockFrf block_frf_from(const std::vector<FrfSweep>& sweeps, const std::vector<std::string>& names);

/// [u_b; y_c] = [K11 K12; K21 K22] [y_b; u_c].
struct InterconnectionMatrix {
  SparseMatrix k11;  ///< m_b x p_b
  SparseMatrix k12;  ///< m_b x m_c
  SparseMatrix k21;  ///< p_c x p_b
  SparseMatrix k22;  ///< p_c x m_c
  std::vector<std::string> external_inputs;
  std::vector<std::string> external_outputs;

  Index m_c() const noexcept { return k12.cols(); }
  Index p_c() const noexcept { return k21.rows(); }

  /// Throws ValidationError unless the partitions fit the layout and each other.
  void validate(const PortLayout& layout) const;
  InterconnectionMatrix with_k11(SparseMatrix k11_new) const;
};

struct PortRef {
  std::string subsystem;
  std::string port;
  std::string label;  ///< external name; defaults to "<subsystem>.<port>"

  bool operator==(const PortRef&) const = default;
};

/// External port selection: u_c entries drive subsystem inputs, y_c entries
/// read subsystem outputs.
struct ExternalPorts {
  std::vector<PortRef> inputs;
  std::vector<PortRef> outputs;

  bool operator==(const ExternalPorts&) const = default;
};

/// K12 / K21 selection matrices with K11 = 0 and K22 = 0 (or `feedthrough`).
InterconnectionMatrix outer_interconnection(const PortLayout& layout, const ExternalPorts& external,
                                            const std::optional<Matrix>& feedthrough = {});

struct LftOptions {
  double warn_rcond = 1e-10;
  double error_rcond = 1e-14;
};

struct LftDiagnostics {
  double min_rcond = 1.0;
  double worst_omega = 0.0;
  std::size_t warnings = 0;
};

/// G_c = K21 G_b (I - K11 G_b)^{-1} K12 + K22 at every frequency.
FrfSweep lft_assemble(const FrfSweep& gb, const InterconnectionMatrix& k, const LftOptions& options = {},
                      LftDiagnostics* diagnostics = nullptr);

// ---------------------------------------------------------------------------
// Interfaces

/// A virtual interconnection point: an io port on the subsystem and its
/// coordinate along the translation axis.
struct VirtualPoint {
  std::string port;
  double coordinate = 0.0;

  bool operator==(const VirtualPoint&) const = default;
};

struct InterfaceSide {
  std::string subsystem;
  std::vector<VirtualPoint> points;  ///< strictly increasing coordinates

  std::vector<double> coordinates() const;
  bool operator==(const InterfaceSide&) const = default;
};

struct SpringSpec {
  double stiffness = 0.0;        ///< N/m, > 0
  double anchor_j = 0.0;         ///< coordinate on side j
  double anchor_ell_base = 0.0;  ///< coordinate on side ell at zero offset

  bool operator==(const SpringSpec&) const = default;
};

/// Which side the springs slide along when the operating point changes.
enum class SlidingSide { ell, j };

struct InterfaceSpec {
  std::string id;
  InterfaceSide side_j;
  InterfaceSide side_ell;
  std::vector<SpringSpec> springs;
  std::string axis = "x";
  SlidingSide sliding = SlidingSide::ell;

  /// Spring position on side j and side ell for a relative offset.
  double position_j(const SpringSpec& spring, double offset) const;
  double position_ell(const SpringSpec& spring, double offset) const;

  /// Checks grids, stiffness signs and (with a layout) port existence.
  void validate(const PortLayout* layout = nullptr) const;
  bool operator==(const InterfaceSpec&) const = default;
};

/// One relative offset per interface, in interface order.
struct OperatingPoint {
  std::vector<double> offsets;

  bool operator==(const OperatingPoint&) const = default;
};

/// Bracketing virtual points and linear weights for a position on a grid.
/// Weight on a point is proportional to the distance to the other point, so a
/// coincident point gets weight 1. Exact coincidence with grid[a] yields the
/// bracket [a, a+1] with weights (1, 0) (the last point uses [n-2, n-1], (0, 1)).
struct InterpWeights {
  Index alpha = 0;
  Index beta = 1;
  double w_alpha = 1.0;
  double w_beta = 0.0;
};

InterpWeights interp_weights(const std::vector<double>& grid, double position);

/// The 4x4 active block Q [-k k; k -k] Q^T and the global input/output
/// indices it is routed to, ordered (j_alpha, j_beta, ell_alpha, ell_beta).
struct SpringBlock {
  Eigen::Matrix4d block;
  std::array<Index, 4> inputs{};
  std::array<Index, 4> outputs{};
};

SpringBlock spring_block(const SpringSpec& spring, const InterfaceSpec& iface, double offset,
                         const PortLayout& layout);

/// Contribution of one spring to K11 (m_b x p_b).
SparseMatrix spring_k11(const SpringSpec& spring, const InterfaceSpec& iface, double offset,
                        const PortLayout& layout);

/// Sum over interfaces and springs of spring_k11.
SparseMatrix posdep_k11(const std::vector<InterfaceSpec>& interfaces, const OperatingPoint& op,
                        const PortLayout& layout);

/// Ground-truth K11 for springs that coincide with subsystem ports on both
/// sides (within `snap_tolerance` metres). Never interpolates.
SparseMatrix static_k11(const std::vector<InterfaceSpec>& interfaces, const OperatingPoint& op,
                        const PortLayout& layout, double snap_tolerance = 1e-9);

struct SweepOptions {
  unsigned threads = 1;
  LftOptions lft;
};

/// Rebuilds only K11 per operating point and re-runs the LFT on cached
/// subsystem FRFs. Output order matches `ops`.
std::vector<FrfSweep> sweep_operating_points(const BlockFrf& cache, const std::vector<InterfaceSpec>& interfaces,
                                             const std::vector<OperatingPoint>& ops,
                                             const InterconnectionMatrix& outer, const std::vector<double>& omega,
                                             const SweepOptions& options = {});

}  // namespace modlink
