#include "modlink/lti.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>
#include <fmt/format.h>

#include "modlink/error.hpp"
#include "modlink/parallel.hpp"

namespace modlink {

namespace {

using ComplexSparse = Eigen::SparseMatrix<Complex>;

double max_abs(const SparseMatrix& x) {
  double out = 0.0;
  for (Index k = 0; k < x.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(x, k); it; ++it) out = std::max(out, std::abs(it.value()));
  return out;
}

bool all_finite(const SparseMatrix& x) {
  for (Index k = 0; k < x.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(x, k); it; ++it)
      if (!std::isfinite(it.value())) return false;
  return true;
}

void check_symmetric(const SparseMatrix& x, const char* what, double tol, std::vector<std::string>& issues) {
  const double scale = max_abs(x);
  if (scale == 0.0) return;
  const SparseMatrix diff = x - SparseMatrix(x.transpose());
  const double asym = max_abs(diff);
  if (asym > tol * scale)
    issues.push_back(fmt::format("{} is not symmetric: max |X - X^T| = {:.3e} exceeds {:.1e} * {:.3e}", what, asym,
                                 tol, scale));
}

void check_psd(const SparseMatrix& mass, const Tolerances& tol, std::vector<std::string>& issues) {
  const Index n = mass.rows();
  if (n == 0) return;
  if (n <= tol.psd_dense_limit) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(Matrix(mass), Eigen::EigenvaluesOnly);
    if (eig.info() != Eigen::Success) {
      issues.push_back("mass eigenvalue check did not converge");
      return;
    }
    const double norm = eig.eigenvalues().cwiseAbs().maxCoeff();
    const double smallest = eig.eigenvalues().minCoeff();
    if (smallest < -tol.psd_floor * norm)
      issues.push_back(fmt::format("mass matrix is not positive semidefinite (smallest eigenvalue {:.3e})", smallest));
    return;
  }
  Eigen::SimplicialLDLT<SparseMatrix> ldlt(mass);
  if (ldlt.info() != Eigen::Success) {
    issues.push_back("mass matrix LDLT factorization failed");
    return;
  }
  const Vector d = ldlt.vectorD();
  const double norm = d.cwiseAbs().maxCoeff();
  if (d.minCoeff() < -tol.psd_floor * norm) issues.push_back("mass matrix has a negative pivot");
}

bool row_is_zero(const SparseMatrix& x, Index row) {
  // x is symmetric, so a zero row is a zero column.
  for (SparseMatrix::InnerIterator it(x, row); it; ++it)
    if (it.value() != 0.0) return false;
  return true;
}

void check_unique(const std::vector<std::string>& labels, const char* what, std::vector<std::string>& issues) {
  std::set<std::string> seen;
  for (const auto& l : labels) {
    if (l.empty()) issues.push_back(fmt::format("{} port with empty label", what));
    if (!seen.insert(l).second) issues.push_back(fmt::format("duplicate {} port label '{}'", what, l));
  }
}

ComplexSparse to_complex(const SparseMatrix& x) { return x.cast<Complex>(); }

}  // namespace

// ---------------------------------------------------------------------------
// PortSet

PortSet& PortSet::add_io(std::string label, Index dof, double scale) {
  inputs.push_back({label, dof, scale});
  outputs.push_back({std::move(label), dof, scale, OutputKind::displacement});
  return *this;
}

PortSet& PortSet::add_input(std::string label, Index dof, double scale) {
  inputs.push_back({std::move(label), dof, scale});
  return *this;
}

PortSet& PortSet::add_output(std::string label, Index dof, OutputKind kind, double scale) {
  outputs.push_back({std::move(label), dof, scale, kind});
  return *this;
}

std::vector<std::string> PortSet::input_labels() const {
  std::vector<std::string> out;
  out.reserve(inputs.size());
  for (const auto& p : inputs) out.push_back(p.label);
  return out;
}

std::vector<std::string> PortSet::output_labels() const {
  std::vector<std::string> out;
  out.reserve(outputs.size());
  for (const auto& p : outputs) out.push_back(p.label);
  return out;
}

std::optional<Index> PortSet::find_input(const std::string& label) const {
  for (std::size_t k = 0; k < inputs.size(); ++k)
    if (inputs[k].label == label) return static_cast<Index>(k);
  return std::nullopt;
}

std::optional<Index> PortSet::find_output(const std::string& label) const {
  for (std::size_t k = 0; k < outputs.size(); ++k)
    if (outputs[k].label == label) return static_cast<Index>(k);
  return std::nullopt;
}

std::vector<Index> PortSet::dofs() const {
  std::set<Index> all;
  for (const auto& p : inputs) all.insert(p.dof);
  for (const auto& p : outputs) all.insert(p.dof);
  return {all.begin(), all.end()};
}

// ---------------------------------------------------------------------------
// SecondOrderSystem

SecondOrderSystem::SecondOrderSystem(std::string name, SparseMatrix mass, SparseMatrix damping,
                                     SparseMatrix stiffness, PortSet ports, const Tolerances& tol)
    : name_(std::move(name)),
      mass_(std::move(mass)),
      damping_(std::move(damping)),
      stiffness_(std::move(stiffness)),
      ports_(std::move(ports)),
      tol_(tol) {
  std::vector<std::string> issues;
  const Index n = mass_.rows();
  if (n < 1) issues.push_back("system has no degrees of freedom");
  auto check_shape = [&](const SparseMatrix& x, const char* what) {
    if (x.rows() != n || x.cols() != n)
      issues.push_back(fmt::format("{} is {}x{}, expected {}x{}", what, x.rows(), x.cols(), n, n));
  };
  check_shape(mass_, "M");
  check_shape(damping_, "D");
  check_shape(stiffness_, "K");
  if (issues.empty()) {
    if (!all_finite(mass_) || !all_finite(damping_) || !all_finite(stiffness_))
      issues.push_back("system matrices contain NaN or Inf");
    check_symmetric(mass_, "M", tol_.symmetry, issues);
    check_symmetric(damping_, "D", tol_.symmetry, issues);
    check_symmetric(stiffness_, "K", tol_.symmetry, issues);
    if (issues.empty()) check_psd(mass_, tol_, issues);
  }
  for (const auto& p : ports_.inputs)
    if (p.dof < 0 || p.dof >= n) issues.push_back(fmt::format("input port '{}' dof {} outside [0, {})", p.label, p.dof, n));
  for (const auto& p : ports_.outputs)
    if (p.dof < 0 || p.dof >= n)
      issues.push_back(fmt::format("output port '{}' dof {} outside [0, {})", p.label, p.dof, n));
  check_unique(ports_.input_labels(), "input", issues);
  check_unique(ports_.output_labels(), "output", issues);
  if (!issues.empty()) throw ValidationError(fmt::format("invalid second-order system '{}'", name_), issues);
  mass_.makeCompressed();
  damping_.makeCompressed();
  stiffness_.makeCompressed();
}

SecondOrderSystem SecondOrderSystem::with_damping(SparseMatrix damping) const {
  return {name_, mass_, std::move(damping), stiffness_, ports_, tol_};
}

SecondOrderSystem SecondOrderSystem::with_ports(PortSet ports) const {
  return {name_, mass_, damping_, stiffness_, std::move(ports), tol_};
}

SecondOrderSystem SecondOrderSystem::renamed(std::string name) const {
  SecondOrderSystem out = *this;
  out.name_ = std::move(name);
  return out;
}

// ---------------------------------------------------------------------------
// DescriptorStateSpace

DescriptorStateSpace::DescriptorStateSpace(std::string name, SparseMatrix e, SparseMatrix a, SparseMatrix b,
                                           SparseMatrix c, Matrix d, std::vector<std::string> input_labels,
                                           std::vector<std::string> output_labels)
    : name_(std::move(name)),
      e_(std::move(e)),
      a_(std::move(a)),
      b_(std::move(b)),
      c_(std::move(c)),
      d_(std::move(d)),
      input_labels_(std::move(input_labels)),
      output_labels_(std::move(output_labels)) {
  std::vector<std::string> issues;
  const Index n = a_.rows();
  if (a_.cols() != n) issues.push_back(fmt::format("A is {}x{}, not square", a_.rows(), a_.cols()));
  if (e_.rows() != n || e_.cols() != n) issues.push_back(fmt::format("E is {}x{}, expected {}x{}", e_.rows(), e_.cols(), n, n));
  if (b_.rows() != n) issues.push_back(fmt::format("B has {} rows, expected {}", b_.rows(), n));
  if (c_.cols() != n) issues.push_back(fmt::format("C has {} columns, expected {}", c_.cols(), n));
  if (d_.rows() != c_.rows() || d_.cols() != b_.cols())
    issues.push_back(fmt::format("D is {}x{}, expected {}x{}", d_.rows(), d_.cols(), c_.rows(), b_.cols()));
  if (static_cast<Index>(input_labels_.size()) != b_.cols())
    issues.push_back(fmt::format("{} input labels for {} inputs", input_labels_.size(), b_.cols()));
  if (static_cast<Index>(output_labels_.size()) != c_.rows())
    issues.push_back(fmt::format("{} output labels for {} outputs", output_labels_.size(), c_.rows()));
  check_unique(input_labels_, "input", issues);
  check_unique(output_labels_, "output", issues);
  if (!issues.empty()) throw ValidationError(fmt::format("invalid descriptor system '{}'", name_), issues);
  e_.makeCompressed();
  a_.makeCompressed();
  b_.makeCompressed();
  c_.makeCompressed();
}

std::optional<Index> DescriptorStateSpace::mechanical_dofs() const {
  const Index n = a_.rows();
  if (n == 0 || n % 2 != 0) return std::nullopt;
  const Index h = n / 2;
  std::vector<int> e_diag(h, 0), a_ident(h, 0);
  for (Index k = 0; k < e_.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(e_, k); it; ++it) {
      const Index i = it.row(), j = it.col();
      if (it.value() == 0.0) continue;
      if (i < h && j < h) {
        if (i != j || it.value() != 1.0) return std::nullopt;
        e_diag[i] = 1;
      } else if ((i < h) != (j < h)) {
        return std::nullopt;
      }
    }
  }
  for (Index k = 0; k < a_.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(a_, k); it; ++it) {
      const Index i = it.row(), j = it.col();
      if (it.value() == 0.0 || i >= h) continue;
      if (j != i + h || it.value() != 1.0) return std::nullopt;
      a_ident[i] = 1;
    }
  }
  for (Index i = 0; i < h; ++i)
    if (!e_diag[i] || !a_ident[i]) return std::nullopt;
  return h;
}

void DescriptorStateSpace::check_regular(std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.5, 1.5);
  const double scale_a = std::max(1.0, max_abs(a_));
  const double scale_e = std::max(1e-300, max_abs(e_));
  const double radius = std::sqrt(scale_a / scale_e);
  const Complex s(radius * unit(rng) * 0.3, radius * unit(rng));
  ComplexSparse pencil = s * to_complex(e_) - to_complex(a_);
  pencil.makeCompressed();
  Eigen::SparseLU<ComplexSparse> lu;
  lu.compute(pencil);
  if (lu.info() != Eigen::Success || !std::isfinite(std::real(lu.logAbsDeterminant())))
    throw NumericalError(fmt::format("descriptor system '{}' has a singular pencil (det(sE - A) = 0 at s = {}{:+}i)",
                                     name_, s.real(), s.imag()));
}

DescriptorStateSpace DescriptorStateSpace::renamed(std::string name) const {
  DescriptorStateSpace out = *this;
  out.name_ = std::move(name);
  return out;
}

// ---------------------------------------------------------------------------
// FrfSweep

FrfSweep::FrfSweep(std::vector<double> frequencies, std::vector<ComplexMatrix> data,
                   std::vector<std::string> input_labels, std::vector<std::string> output_labels)
    : frequencies_(std::move(frequencies)),
      data_(std::move(data)),
      input_labels_(std::move(input_labels)),
      output_labels_(std::move(output_labels)) {
  if (data_.size() != frequencies_.size())
    throw ValidationError(fmt::format("FRF sweep has {} matrices for {} frequencies", data_.size(), frequencies_.size()));
  for (std::size_t k = 0; k < frequencies_.size(); ++k) {
    if (!std::isfinite(frequencies_[k])) throw ValidationError("FRF sweep frequency is not finite");
    if (k > 0 && !(frequencies_[k] > frequencies_[k - 1]))
      throw ValidationError(fmt::format("FRF sweep frequencies not strictly increasing at index {}", k));
  }
  const Index p = rows(), m = cols();
  for (std::size_t k = 0; k < data_.size(); ++k) {
    const auto& g = data_[k];
    if (g.rows() != p || g.cols() != m)
      throw ValidationError(
          fmt::format("FRF matrix {} is {}x{}, expected {}x{}", k, g.rows(), g.cols(), p, m));
    if (!g.allFinite())
      throw NumericalError(fmt::format("FRF matrix at omega = {:.17g} contains NaN or Inf", frequencies_[k]));
  }
}

// ---------------------------------------------------------------------------
// Realization and evaluation

DescriptorStateSpace to_descriptor(const SecondOrderSystem& sys, const std::optional<Matrix>& feedthrough) {
  const Index nd = sys.n_dof();
  const Index n = 2 * nd;
  const auto& ports = sys.ports();
  const Index m = sys.n_inputs();
  const Index p = sys.n_outputs();

  std::vector<std::string> issues;
  for (const auto& out : ports.outputs)
    if (out.kind == OutputKind::velocity && row_is_zero(sys.mass(), out.dof))
      issues.push_back(fmt::format("velocity output '{}' on massless dof {} has no strictly proper realization",
                                   out.label, out.dof));
  if (feedthrough && (feedthrough->rows() != p || feedthrough->cols() != m))
    issues.push_back(fmt::format("feedthrough is {}x{}, expected {}x{}", feedthrough->rows(), feedthrough->cols(), p, m));
  if (!issues.empty()) throw ValidationError(fmt::format("cannot realize '{}'", sys.name()), issues);

  using Triplet = Eigen::Triplet<double>;
  std::vector<Triplet> e, a, b, c;
  e.reserve(nd + sys.mass().nonZeros());
  a.reserve(nd + sys.stiffness().nonZeros() + sys.damping().nonZeros());
  for (Index i = 0; i < nd; ++i) {
    e.emplace_back(i, i, 1.0);
    a.emplace_back(i, nd + i, 1.0);
  }
  auto append_block = [nd](std::vector<Triplet>& out, const SparseMatrix& x, Index col_offset, double sign) {
    for (Index k = 0; k < x.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(x, k); it; ++it)
        out.emplace_back(nd + it.row(), col_offset + it.col(), sign * it.value());
  };
  append_block(e, sys.mass(), nd, 1.0);
  append_block(a, sys.stiffness(), 0, -1.0);
  append_block(a, sys.damping(), nd, -1.0);
  for (Index j = 0; j < m; ++j) b.emplace_back(nd + ports.inputs[j].dof, j, ports.inputs[j].scale);
  for (Index i = 0; i < p; ++i) {
    const auto& out = ports.outputs[i];
    const Index col = out.kind == OutputKind::displacement ? out.dof : nd + out.dof;
    c.emplace_back(i, col, out.scale);
  }

  SparseMatrix E(n, n), A(n, n), B(n, m), C(p, n);
  E.setFromTriplets(e.begin(), e.end());
  A.setFromTriplets(a.begin(), a.end());
  B.setFromTriplets(b.begin(), b.end());
  C.setFromTriplets(c.begin(), c.end());
  Matrix D = feedthrough ? *feedthrough : Matrix::Zero(p, m);
  return {sys.name(), std::move(E), std::move(A), std::move(B), std::move(C), std::move(D), ports.input_labels(),
          ports.output_labels()};
}

namespace {

// Blocks of a mechanical realization E = [I 0; 0 M], A = [0 I; -K -D] with
// forces entering the velocity rows only.
struct MechanicalBlocks {
  ComplexSparse m, d, k, b;
  ComplexSparse c_disp, c_vel;
};

std::optional<MechanicalBlocks> mechanical_blocks(const DescriptorStateSpace& ss) {
  const auto h = ss.mechanical_dofs();
  if (!h) return std::nullopt;
  const Index n = *h;
  const SparseMatrix& b = ss.B();
  for (Index k = 0; k < b.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(b, k); it; ++it)
      if (it.row() < n && it.value() != 0.0) return std::nullopt;
  MechanicalBlocks out;
  out.m = to_complex(SparseMatrix(ss.E().bottomRightCorner(n, n)));
  out.k = to_complex(SparseMatrix(-ss.A().bottomLeftCorner(n, n)));
  out.d = to_complex(SparseMatrix(-ss.A().bottomRightCorner(n, n)));
  out.b = to_complex(SparseMatrix(b.bottomRows(n)));
  const SparseMatrix ct = ss.C().transpose();
  out.c_disp = to_complex(SparseMatrix(SparseMatrix(ct.topRows(n)).transpose()));
  out.c_vel = to_complex(SparseMatrix(SparseMatrix(ct.bottomRows(n)).transpose()));
  return out;
}

}  // namespace

FrfSweep frf_eval(const DescriptorStateSpace& ss, const std::vector<double>& omega, const FrfOptions& options) {
  // Mechanical realizations are solved in dynamic-stiffness form
  // (K - w^2 M + i w D) q = B_f u, which is half the size of the pencil and
  // keeps small transmission entries accurate to working precision.
  const auto mech = mechanical_blocks(ss);
  const ComplexSparse e = mech ? ComplexSparse() : to_complex(ss.E());
  const ComplexSparse a = mech ? ComplexSparse() : to_complex(ss.A());
  const ComplexMatrix b = mech ? ComplexMatrix(mech->b) : ComplexMatrix(to_complex(ss.B()));
  const ComplexSparse c = mech ? ComplexSparse() : to_complex(ss.C());
  const ComplexMatrix d = ss.D().cast<Complex>();

  std::vector<ComplexMatrix> data(omega.size());
  const std::size_t chunks = std::max<std::size_t>(1, std::min<std::size_t>(options.threads, omega.size()));
  const std::size_t per_chunk = (omega.size() + chunks - 1) / chunks;

  parallel_for(
      chunks,
      [&](std::size_t chunk) {
        const std::size_t lo = chunk * per_chunk;
        const std::size_t hi = std::min(omega.size(), lo + per_chunk);
        Eigen::SparseLU<ComplexSparse> lu;
        bool analyzed = false;
        for (std::size_t k = lo; k < hi; ++k) {
          const double w = omega[k];
          ComplexSparse pencil = mech ? ComplexSparse(mech->k - (w * w) * mech->m + Complex(0.0, w) * mech->d)
                                      : ComplexSparse(Complex(0.0, w) * e - a);
          pencil.makeCompressed();
          if (!analyzed) {
            lu.analyzePattern(pencil);
            analyzed = true;
          }
          lu.factorize(pencil);
          if (lu.info() != Eigen::Success)
            throw SingularFrequencyError(
                fmt::format("(i*omega*E - A) is singular for '{}' (undamped resonance on the grid?)", ss.name()), w,
                0.0);
          ComplexMatrix x = lu.solve(b);
          if (!x.allFinite())
            throw SingularFrequencyError(fmt::format("non-finite response for '{}'", ss.name()), w, 0.0);
          data[k] = mech ? ComplexMatrix(mech->c_disp * x + Complex(0.0, w) * (mech->c_vel * x) + d)
                         : ComplexMatrix(c * x + d);
        }
      },
      static_cast<unsigned>(chunks));

  return {omega, std::move(data), ss.input_labels(), ss.output_labels()};
}

// ---------------------------------------------------------------------------
// Modal analysis

ModalBasis undamped_modes(const SparseMatrix& mass, const SparseMatrix& stiffness, double rigid_tolerance) {
  const Matrix m = Matrix(mass);
  const Matrix k = Matrix(stiffness);
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> eig(k, m, Eigen::ComputeEigenvectors | Eigen::Ax_lBx);
  if (eig.info() != Eigen::Success)
    throw NumericalError("generalized eigenproblem (K, M) failed; M must be positive definite");
  const Vector& lambda = eig.eigenvalues();
  const double lambda_max = lambda.cwiseAbs().maxCoeff();

  ModalBasis out;
  out.shapes = eig.eigenvectors();
  out.omega.resize(lambda.size());
  for (Index r = 0; r < lambda.size(); ++r) {
    if (lambda(r) <= rigid_tolerance * lambda_max) {
      if (lambda(r) < -1e-8 * lambda_max)
        throw NumericalError(fmt::format("stiffness matrix is indefinite (eigenvalue {:.3e})", lambda(r)));
      out.omega(r) = 0.0;
      ++out.n_rigid;
    } else {
      out.omega(r) = std::sqrt(lambda(r));
    }
  }
  return out;
}

SparseMatrix build_modal_damping(const SparseMatrix& mass, const SparseMatrix& stiffness, double zeta,
                                 const ModalDampingOptions& options) {
  if (!(zeta >= 0.0 && zeta < 1.0)) throw ValidationError(fmt::format("damping ratio {} outside [0, 1)", zeta));
  const Index n = mass.rows();
  if (zeta == 0.0) return SparseMatrix(n, n);
  const ModalBasis modes = undamped_modes(mass, stiffness, options.rigid_tolerance);
  const Matrix mphi = mass * modes.shapes;
  const Vector c = 2.0 * zeta * modes.omega;
  Matrix d = mphi * c.asDiagonal() * mphi.transpose();
  d = 0.5 * (d + d.transpose()).eval();
  return d.sparseView();
}

std::vector<double> frequency_grid(double lo, double hi, std::size_t count, bool log_spaced) {
  if (count == 0) throw ValidationError("frequency grid needs at least one point");
  if (!(hi >= lo)) throw ValidationError(fmt::format("frequency grid bounds [{}, {}] are not ordered", lo, hi));
  if (log_spaced && !(lo > 0.0)) throw ValidationError("log-spaced frequency grid needs a positive lower bound");
  if (count == 1) return {lo};
  if (!(hi > lo)) throw ValidationError("frequency grid with more than one point needs hi > lo");
  std::vector<double> out(count);
  for (std::size_t k = 0; k < count; ++k) {
    const double t = static_cast<double>(k) / static_cast<double>(count - 1);
    out[k] = log_spaced ? lo * std::pow(hi / lo, t) : lo + t * (hi - lo);
  }
  out.front() = lo;
  out.back() = hi;
  return out;
}

}  // namespace modlink
