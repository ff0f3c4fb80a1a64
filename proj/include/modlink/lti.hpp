#pragma once

// Subsystem models in second-order and descriptor state-space form, modal
// damping construction and pointwise frequency-response evaluation.

#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace modlink {

using Index = Eigen::Index;
using Complex = std::complex<double>;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using ComplexMatrix = Eigen::MatrixXcd;
using SparseMatrix = Eigen::SparseMatrix<double>;

enum class OutputKind { displacement, velocity };

/// Force input on one generalized coordinate: F[dof] += scale * u.
struct InputPort {
  std::string label;
  Index dof = 0;
  double scale = 1.0;

  bool operator==(const InputPort&) const = default;
};

/// Measured output: y = scale * q[dof] (or q'[dof] for velocity outputs).
struct OutputPort {
  std::string label;
  Index dof = 0;
  double scale = 1.0;
  OutputKind kind = OutputKind::displacement;

  bool operator==(const OutputPort&) const = default;
};

/// Input and output port lists of one subsystem. An "io" port is a force input
/// and a displacement output with the same label on the same dof; interface
/// ports are always io ports so that input and output orderings coincide.
struct PortSet {
  std::vector<InputPort> inputs;
  std::vector<OutputPort> outputs;

  PortSet& add_io(std::string label, Index dof, double scale = 1.0);
  PortSet& add_input(std::string label, Index dof, double scale = 1.0);
  PortSet& add_output(std::string label, Index dof, OutputKind kind = OutputKind::displacement, double scale = 1.0);

  std::vector<std::string> input_labels() const;
  std::vector<std::string> output_labels() const;
  std::optional<Index> find_input(const std::string& label) const;
  std::optional<Index> find_output(const std::string& label) const;

  /// Sorted, de-duplicated dofs touched by any port.
  std::vector<Index> dofs() const;

  bool operator==(const PortSet&) const = default;
};

/// Numerical acceptance thresholds for model invariants.
struct Tolerances {
  double symmetry = 1e-10;   ///< relative to max |entry|
  double psd_floor = 1e-8;   ///< smallest mass eigenvalue must exceed -psd_floor * ||M||
  Index psd_dense_limit = 3000;
};

/// M q'' + D q' + K q = F with port maps. Immutable; invariants are checked
/// on construction and violations are reported together.
class SecondOrderSystem {
 public:
  SecondOrderSystem(std::string name, SparseMatrix mass, SparseMatrix damping, SparseMatrix stiffness,
                    PortSet ports, const Tolerances& tol = {});

  const std::string& name() const noexcept { return name_; }
  Index n_dof() const noexcept { return mass_.rows(); }
  const SparseMatrix& mass() const noexcept { return mass_; }
  const SparseMatrix& damping() const noexcept { return damping_; }
  const SparseMatrix& stiffness() const noexcept { return stiffness_; }
  const PortSet& ports() const noexcept { return ports_; }
  Index n_inputs() const noexcept { return static_cast<Index>(ports_.inputs.size()); }
  Index n_outputs() const noexcept { return static_cast<Index>(ports_.outputs.size()); }

  SecondOrderSystem with_damping(SparseMatrix damping) const;
  SecondOrderSystem with_ports(PortSet ports) const;
  SecondOrderSystem renamed(std::string name) const;

 private:
  std::string name_;
  SparseMatrix mass_;
  SparseMatrix damping_;
  SparseMatrix stiffness_;
  PortSet ports_;
  Tolerances tol_;
};

/// E x' = A x + B u, y = C x + D u.
class DescriptorStateSpace {
 public:
  DescriptorStateSpace(std::string name, SparseMatrix e, SparseMatrix a, SparseMatrix b, SparseMatrix c,
                       Matrix d, std::vector<std::string> input_labels, std::vector<std::string> output_labels);

  const std::string& name() const noexcept { return name_; }
  Index n() const noexcept { return a_.rows(); }
  Index m() const noexcept { return b_.cols(); }
  Index p() const noexcept { return c_.rows(); }
  const SparseMatrix& E() const noexcept { return e_; }
  const SparseMatrix& A() const noexcept { return a_; }
  const SparseMatrix& B() const noexcept { return b_; }
  const SparseMatrix& C() const noexcept { return c_; }
  const Matrix& D() const noexcept { return d_; }
  const std::vector<std::string>& input_labels() const noexcept { return input_labels_; }
  const std::vector<std::string>& output_labels() const noexcept { return output_labels_; }

  /// Number of generalized coordinates if E = [I 0; 0 M] and A = [0 I; -K -D]
  /// hold entry-wise, otherwise empty.
  std::optional<Index> mechanical_dofs() const;

  /// Throws NumericalError unless det(sE - A) != 0 at a pseudo-random complex point.
  void check_regular(std::uint64_t seed = 0x5eed) const;

  DescriptorStateSpace renamed(std::string name) const;

 private:
  std::string name_;
  SparseMatrix e_, a_, b_, c_;
  Matrix d_;
  std::vector<std::string> input_labels_;
  std::vector<std::string> output_labels_;
};

/// Complex p x m response matrices over strictly increasing angular frequencies.
class FrfSweep {
 public:
  FrfSweep() = default;
  FrfSweep(std::vector<double> frequencies, std::vector<ComplexMatrix> data, std::vector<std::string> input_labels,
           std::vector<std::string> output_labels);

  std::size_t size() const noexcept { return frequencies_.size(); }
  Index rows() const noexcept { return static_cast<Index>(output_labels_.size()); }
  Index cols() const noexcept { return static_cast<Index>(input_labels_.size()); }
  const std::vector<double>& frequencies() const noexcept { return frequencies_; }
  const std::vector<ComplexMatrix>& data() const noexcept { return data_; }
  const ComplexMatrix& at(std::size_t k) const { return data_.at(k); }
  const std::vector<std::string>& input_labels() const noexcept { return input_labels_; }
  const std::vector<std::string>& output_labels() const noexcept { return output_labels_; }

  bool operator==(const FrfSweep&) const = default;

 private:
  std::vector<double> frequencies_;
  std::vector<ComplexMatrix> data_;
  std::vector<std::string> input_labels_;
  std::vector<std::string> output_labels_;
};

/// Realization E = [I 0; 0 M], A = [0 I; -K -D]; B places inputs in the force
/// partition, C reads q (displacement ports) or q' (velocity ports).
DescriptorStateSpace to_descriptor(const SecondOrderSystem& sys, const std::optional<Matrix>& feedthrough = {});

struct FrfOptions {
  unsigned threads = 1;
};

/// data[k] = C (i w_k E - A)^{-1} B + D, one sparse LU per frequency.
FrfSweep frf_eval(const DescriptorStateSpace& ss, const std::vector<double>& omega, const FrfOptions& options = {});

/// Undamped modes of (K, M), mass-normalized, ascending.
struct ModalBasis {
  Vector omega;    ///< rad/s; exactly zero for rigid-body modes
  Matrix shapes;   ///< columns are mass-normalized mode shapes
  Index n_rigid = 0;
};

/// A mode is rigid when lambda <= rigid_tolerance * lambda_max.
ModalBasis undamped_modes(const SparseMatrix& mass, const SparseMatrix& stiffness, double rigid_tolerance = 1e-10);

struct ModalDampingOptions {
  double rigid_tolerance = 1e-10;
};

/// D = M Phi diag(2 zeta w_r) Phi^T M with Phi mass-normalized; rigid modes
/// receive no damping.
SparseMatrix build_modal_damping(const SparseMatrix& mass, const SparseMatrix& stiffness, double zeta,
                                 const ModalDampingOptions& options = {});

/// Log-spaced (or linear) frequency grid of `count` points on [lo, hi].
std::vector<double> frequency_grid(double lo, double hi, std::size_t count, bool log_spaced = true);

}  // namespace modlink
