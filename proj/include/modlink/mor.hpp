#pragma once

// Subsystem model-order reduction (balanced truncation, Craig-Bampton,
// Hintz-Herting), assembly of reduced subsystems, relative FRF error and the
// minimal-order search over operating points.

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "modlink/interconnect.hpp"
#include "modlink/lti.hpp"

namespace modlink {

enum class ReductionMethod { bt, cb, hh };

std::string_view to_string(ReductionMethod method);
/// Accepts "bt", "cb", "hh" (case-insensitive).
ReductionMethod parse_method(std::string_view text);

/// Projection basis and metadata of one reduction.
///
/// BT: V and W act on the descriptor state x = [q; q'] with W^T E V = I, so the
/// reduced model is (I, W^T A V, W^T B, C V). r counts states.
/// CMS: V acts on the generalized coordinates, W = V, the reduced model is
/// (V^T M V, V^T D V, V^T K V). The first boundary_dofs.size() reduced
/// coordinates are the boundary dofs themselves. r counts reduced dofs.
struct ReductionBasis {
  ReductionMethod method = ReductionMethod::bt;
  Matrix V;
  Matrix W;
  std::vector<std::string> boundary_ports;
  std::vector<Index> boundary_dofs;
  Index r = 0;
  Index n_modes = 0;  ///< CMS: kept (effective) modes
  Index n_rigid = 0;  ///< rigid-body modes of the full model
  std::vector<double> hankel_singular_values;  ///< BT, elastic part, non-increasing
  double cutoff_hz = 0.0;                      ///< CMS: highest kept mode
  bool rank_deficient = false;                 ///< HH: orthogonalization dropped modes
};

// ---------------------------------------------------------------------------
// Balanced truncation

struct BtOptions {
  double rigid_tolerance = 1e-10;
  double rigid_damping_tolerance = 1e-8;  ///< ||D Phi_r|| relative to ||D||
};

/// Balanced-truncation data of one system, computed once and truncated to any
/// order. Mechanical descriptor systems are transformed to modal coordinates;
/// rigid-body modes are split off and kept at every order. The stable elastic
/// remainder is reduced with the balancing-free square-root method.
class BalancedRealization {
 public:
  static BalancedRealization compute(const DescriptorStateSpace& ss, const BtOptions& options = {});

  Index order() const noexcept { return n_; }
  Index rigid_states() const noexcept { return n_rigid_states_; }
  /// Smallest admissible order: max(1, rigid_states()).
  Index min_order() const noexcept { return std::max<Index>(1, n_rigid_states_); }
  const std::vector<double>& hankel_singular_values() const noexcept { return hsv_; }

  /// 2 * sum of the elastic Hankel singular values beyond order r.
  double error_bound(Index r) const;

  std::pair<DescriptorStateSpace, ReductionBasis> truncate(Index r) const;

 private:
  std::string name_;
  std::vector<std::string> inputs_, outputs_;
  Index n_ = 0;
  Index n_rigid_ = 0;
  Index n_rigid_states_ = 0;
  // Modal-coordinate realization z' = Az z + Bz u, y = Cz z + D u with
  // x = T z and z = S x' for the original E x' = A x + B u (S = T^{-1} E^{-1}).
  Matrix az_, bz_, cz_, d_;
  Matrix t_, s_;
  Matrix lp_, lq_;  ///< gramian factors of the elastic block
  Matrix svd_u_, svd_v_;
  std::vector<double> hsv_;
};

std::pair<DescriptorStateSpace, ReductionBasis> reduce_bt(const DescriptorStateSpace& ss, Index r,
                                                          const BtOptions& options = {});

// ---------------------------------------------------------------------------
// Component mode synthesis

struct CmsOptions {
  double rigid_tolerance = 1e-10;
  double rank_tolerance = 1e-10;  ///< HH: M-norm^2 below which a residual mode is dropped
};

/// Craig-Bampton or Hintz-Herting basis data of one system, computed once and
/// truncated to any number of kept modes. The boundary always contains every
/// port dof so that the reduced system exposes the original ports.
///
/// CB: V = [I 0; Psi Phi_i] with constraint modes Psi = -K_ii^{-1} K_ib and
/// fixed-interface modes Phi_i of (K_ii, M_ii).
/// HH: V = [I 0; Psi X] where X spans the interior residuals phi_i - Psi phi_b
/// of the rigid-body and lowest free-interface modes, M_ii-orthonormalized,
/// rank-reduced and K_ii-diagonalized. Rigid-body modes lie in span[I; Psi]
/// already, so their residuals vanish.
class CmsReducer {
 public:
  CmsReducer(ReductionMethod method, const SecondOrderSystem& sys, std::vector<Index> boundary_dofs = {},
             const CmsOptions& options = {});

  ReductionMethod method() const noexcept { return method_; }
  Index n_boundary() const noexcept { return static_cast<Index>(boundary_.size()); }
  Index n_dof() const noexcept { return sys_.n_dof(); }
  /// Largest meaningful n_modes: interior dofs (CB) or elastic modes (HH).
  Index max_modes() const noexcept { return max_modes_; }
  const std::vector<Index>& boundary_dofs() const noexcept { return boundary_; }

  std::pair<SecondOrderSystem, ReductionBasis> reduce(Index n_modes) const;

 private:
  ReductionMethod method_;
  SecondOrderSystem sys_;
  CmsOptions options_;
  std::vector<Index> boundary_, interior_;
  Matrix psi_;           ///< n_i x n_b
  Matrix modes_i_;       ///< CB: fixed-interface modes; HH: free-mode residuals (interior rows)
  Vector modes_omega_;   ///< matching angular frequencies (HH: free-mode frequencies)
  Index n_rigid_ = 0;
  Index max_modes_ = 0;
};

std::pair<SecondOrderSystem, ReductionBasis> reduce_cb(const SecondOrderSystem& sys,
                                                       const std::vector<Index>& boundary_dofs, Index n_modes,
                                                       const CmsOptions& options = {});
std::pair<SecondOrderSystem, ReductionBasis> reduce_hh(const SecondOrderSystem& sys,
                                                       const std::vector<Index>& boundary_dofs, Index n_modes,
                                                       const CmsOptions& options = {});

/// K_bb - K_bi K_ii^{-1} K_ib for the given boundary dofs (static condensation).
Matrix condensed_stiffness(const SparseMatrix& stiffness, const std::vector<Index>& boundary_dofs);

// ---------------------------------------------------------------------------
// Uniform handle used by the search and the CLI

/// A per-subsystem reducer with one integer "level": states for BT, kept modes
/// for CB/HH. Level max_level() reproduces the full model.
class Reducer {
 public:
  Reducer(const SecondOrderSystem& sys, ReductionMethod method, const std::vector<Index>& boundary_dofs = {});

  ReductionMethod method() const noexcept { return method_; }
  const std::string& name() const noexcept { return name_; }
  Index min_level() const;
  Index max_level() const;
  /// Number of states of the reduced descriptor realization at `level`.
  Index states(Index level) const;
  Index full_states() const noexcept { return full_states_; }

  std::pair<DescriptorStateSpace, ReductionBasis> reduce(Index level) const;

 private:
  ReductionMethod method_;
  std::string name_;
  Index full_states_ = 0;
  std::optional<BalancedRealization> bt_;
  std::optional<CmsReducer> cms_;
};

// ---------------------------------------------------------------------------
// Assembly and verification

/// Throws ValidationError unless every reduced block has the name and port
/// labels (in order) recorded in `layout`.
void check_reduced_ports(const std::vector<DescriptorStateSpace>& reduced, const PortLayout& layout);

FrfSweep assemble_reduced(const std::vector<DescriptorStateSpace>& reduced, const PortLayout& layout,
                          const InterconnectionMatrix& k, const std::vector<double>& omega,
                          const FrfOptions& frf = {}, const LftOptions& lft = {});

std::vector<FrfSweep> assemble_reduced(const std::vector<DescriptorStateSpace>& reduced, const PortLayout& layout,
                                       const std::vector<InterfaceSpec>& interfaces,
                                       const std::vector<OperatingPoint>& ops, const InterconnectionMatrix& outer,
                                       const std::vector<double>& omega, const FrfOptions& frf = {},
                                       const SweepOptions& sweep = {});

struct ErrorEntry {
  std::string output;
  std::string input;
  std::size_t op = 0;
  double max_relative = 0.0;
  double worst_omega = 0.0;
  std::size_t evaluated = 0;  ///< frequencies above the floor
  bool pass = true;
};

struct ErrorOptions {
  double threshold = 0.1;
  /// Frequencies with |G| < floor * max_w |G| are skipped for that entry.
  double floor = 1e-12;
  /// (output, input) label pairs; empty selects every entry.
  std::vector<std::pair<std::string, std::string>> entries;
};

struct ErrorReport {
  double threshold = 0.1;
  double floor = 1e-12;
  std::vector<ErrorEntry> entries;

  bool pass() const;
  double max_error() const;
  void append(const ErrorReport& other);
};

/// max_w |G_red - G_full| / |G_full| per entry; pass iff max < threshold.
ErrorReport relative_error(const FrfSweep& full, const FrfSweep& reduced, const ErrorOptions& options = {},
                           std::size_t op = 0);

/// Inserts factor - 1 evenly spaced points into each interval adjacent to a
/// local maximum of max_ij |G_ij|.
std::vector<double> refine_around_peaks(const FrfSweep& sweep, int factor = 4);

/// Log grid of `count` points on [lo, hi], refined around the resonances of
/// `probe` evaluated on that grid.
std::vector<double> verification_grid(double lo, double hi, const std::function<FrfSweep(const std::vector<double>&)>& probe,
                                      std::size_t count = 400, int factor = 4);

// ---------------------------------------------------------------------------
// Minimal-order search

struct SearchSubsystem {
  SecondOrderSystem system;
  ReductionMethod method = ReductionMethod::cb;
  std::vector<Index> boundary_dofs;  ///< CMS extra boundary; port dofs are always included
};

struct SearchOptions {
  ErrorOptions error;
  FrfOptions frf;
  SweepOptions sweep;
  /// Optional ground truth per operating point (e.g. the static model). The
  /// full-order position-dependent model must meet the threshold against it,
  /// otherwise the threshold is unreachable.
  std::vector<FrfSweep> reference;
  std::size_t max_repair_steps = 10000;
};

struct OrderWitness {
  std::size_t subsystem = 0;
  Index level = 0;         ///< failing level (final level - 1)
  std::size_t op = 0;      ///< operating point where it fails
  double error = 0.0;      ///< relative error there
  bool at_minimum = false; ///< final level is the smallest admissible one
};

struct SearchResult {
  std::vector<std::string> names;
  std::vector<ReductionMethod> methods;
  std::vector<Index> full_states;
  /// Stage 1: least passing level / states per subsystem and operating point
  /// with all other subsystems at full order.
  std::vector<std::vector<Index>> per_op_level;
  std::vector<std::vector<Index>> per_op_states;
  std::vector<Index> final_level;
  std::vector<Index> final_states;
  std::vector<OrderWitness> witnesses;
  ErrorReport final_report;
  std::size_t repair_steps = 0;
  std::size_t evaluations = 0;
};

SearchResult minimal_order_search(const std::vector<SearchSubsystem>& subsystems,
                                  const std::vector<InterfaceSpec>& interfaces,
                                  const std::vector<OperatingPoint>& ops, const ExternalPorts& external,
                                  const std::vector<double>& omega, const SearchOptions& options = {});

}  // namespace modlink
