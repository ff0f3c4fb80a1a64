#include "modlink/mor.hpp"

#include <cctype>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <fmt/format.h>

#include "modlink/error.hpp"
#include "modlink/log.hpp"
#include "modlink/lyapunov.hpp"
#include "modlink/parallel.hpp"

namespace modlink {

namespace {

constexpr double two_pi = 2.0 * std::numbers::pi;

Matrix symmetrized(const Matrix& x) { return 0.5 * (x + x.transpose()); }

Matrix orthonormal_columns(const Matrix& x) {
  Eigen::HouseholderQR<Matrix> qr(x);
  return qr.householderQ() * Matrix::Identity(x.rows(), x.cols());
}

SparseMatrix identity_sparse(Index n) {
  SparseMatrix out(n, n);
  out.setIdentity();
  return out;
}

}  // namespace

std::string_view to_string(ReductionMethod method) {
  switch (method) {
    case ReductionMethod::bt: return "bt";
    case ReductionMethod::cb: return "cb";
    case ReductionMethod::hh: return "hh";
  }
  return "?";
}

ReductionMethod parse_method(std::string_view text) {
  std::string lower(text);
  for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "bt") return ReductionMethod::bt;
  if (lower == "cb") return ReductionMethod::cb;
  if (lower == "hh") return ReductionMethod::hh;
  throw ValidationError(fmt::format("unknown reduction method '{}' (expected bt, cb or hh)", text));
}

// ---------------------------------------------------------------------------
// Balanced truncation

BalancedRealization BalancedRealization::compute(const DescriptorStateSpace& ss, const BtOptions& options) {
  BalancedRealization out;
  out.name_ = ss.name();
  out.inputs_ = ss.input_labels();
  out.outputs_ = ss.output_labels();
  out.n_ = ss.n();
  out.d_ = ss.D();
  const Index n = ss.n();
  if (n == 0) throw ValidationError(fmt::format("'{}' has no states to reduce", ss.name()));

  const Matrix e = Matrix(ss.E());
  const Matrix a = Matrix(ss.A());
  const Matrix b = Matrix(ss.B());
  const Matrix c = Matrix(ss.C());

  const auto nd_opt = ss.mechanical_dofs();
  const bool mechanical = nd_opt && b.topRows(*nd_opt).cwiseAbs().maxCoeff() == 0.0;

  if (mechanical) {
    const Index nd = *nd_opt;
    const Matrix m = e.bottomRightCorner(nd, nd);
    const Matrix k = -a.bottomLeftCorner(nd, nd);
    const Matrix d = -a.bottomRightCorner(nd, nd);
    const ModalBasis modes = undamped_modes(m.sparseView(), k.sparseView(), options.rigid_tolerance);
    const Index nr = modes.n_rigid;
    const Index ne = nd - nr;
    const Matrix phi_r = modes.shapes.leftCols(nr);
    const Matrix phi_e = modes.shapes.rightCols(ne);

    if (nr > 0) {
      const double dnorm = d.cwiseAbs().maxCoeff();
      const double leak = (d * phi_r).cwiseAbs().maxCoeff();
      if (leak > options.rigid_damping_tolerance * dnorm * phi_r.cwiseAbs().maxCoeff())
        throw NumericalError(fmt::format(
            "'{}' has {} rigid-body modes that are damped (||D Phi_r|| = {:.3e}); they cannot be deflated", ss.name(),
            nr, leak));
    }

    const Vector w = modes.omega.tail(ne);
    const Vector w_inv = w.cwiseInverse();
    const Matrix k_hat = symmetrized(phi_e.transpose() * k * phi_e);
    const Matrix d_hat = symmetrized(phi_e.transpose() * d * phi_e);
    const Matrix bf = b.bottomRows(nd);
    const Matrix cq = c.leftCols(nd);
    const Matrix cv = c.rightCols(nd);

    // z = [eta_r; eta_r'; Omega eta_e; eta_e']
    out.n_rigid_ = nr;
    out.n_rigid_states_ = 2 * nr;
    out.az_ = Matrix::Zero(n, n);
    out.bz_ = Matrix::Zero(n, b.cols());
    out.cz_ = Matrix::Zero(c.rows(), n);
    out.t_ = Matrix::Zero(n, n);
    out.s_ = Matrix::Zero(n, n);
    const Index r0 = 0, r1 = nr, e0 = 2 * nr, e1 = 2 * nr + ne;

    out.az_.block(r0, r1, nr, nr).setIdentity();
    out.az_.block(e0, e1, ne, ne) = w.asDiagonal();
    out.az_.block(e1, e0, ne, ne) = -k_hat * w_inv.asDiagonal();
    out.az_.block(e1, e1, ne, ne) = -d_hat;

    out.bz_.middleRows(r1, nr) = phi_r.transpose() * bf;
    out.bz_.middleRows(e1, ne) = phi_e.transpose() * bf;

    out.cz_.middleCols(r0, nr) = cq * phi_r;
    out.cz_.middleCols(r1, nr) = cv * phi_r;
    out.cz_.middleCols(e0, ne) = cq * phi_e * w_inv.asDiagonal();
    out.cz_.middleCols(e1, ne) = cv * phi_e;

    out.t_.block(0, r0, nd, nr) = phi_r;
    out.t_.block(nd, r1, nd, nr) = phi_r;
    out.t_.block(0, e0, nd, ne) = phi_e * w_inv.asDiagonal();
    out.t_.block(nd, e1, nd, ne) = phi_e;

    out.s_.block(r0, 0, nr, nd) = phi_r.transpose() * m;
    out.s_.block(r1, nd, nr, nd) = phi_r.transpose();
    out.s_.block(e0, 0, ne, nd) = w.asDiagonal() * phi_e.transpose() * m;
    out.s_.block(e1, nd, ne, nd) = phi_e.transpose();
  } else {
    Eigen::FullPivLU<Matrix> lu(e);
    if (!lu.isInvertible())
      throw NumericalError(fmt::format(
          "'{}' has a singular E and no second-order structure; balanced truncation needs E invertible", ss.name()));
    out.s_ = lu.inverse();
    out.t_ = Matrix::Identity(n, n);
    out.az_ = out.s_ * a;
    out.bz_ = out.s_ * b;
    out.cz_ = c;
  }

  const Index nz = n - out.n_rigid_states_;
  if (nz > 0) {
    const Matrix ae = out.az_.bottomRightCorner(nz, nz);
    const Matrix be = out.bz_.bottomRows(nz);
    const Matrix ce = out.cz_.rightCols(nz);
    Matrix p, q;
    try {
      p = controllability_gramian(ae, be);
      q = observability_gramian(ae, ce);
    } catch (const NumericalError& err) {
      throw NumericalError(fmt::format("balanced truncation of '{}': {}", ss.name(), err.what()));
    }
    out.lp_ = psd_factor(p);
    out.lq_ = psd_factor(q);
    Eigen::JacobiSVD<Matrix> svd(out.lq_.transpose() * out.lp_, Eigen::ComputeFullU | Eigen::ComputeFullV);
    out.svd_u_ = svd.matrixU();
    out.svd_v_ = svd.matrixV();
    out.hsv_.assign(svd.singularValues().data(), svd.singularValues().data() + svd.singularValues().size());
  }
  return out;
}

double BalancedRealization::error_bound(Index r) const {
  const Index re = std::max<Index>(0, r - n_rigid_states_);
  double tail = 0.0;
  for (std::size_t k = static_cast<std::size_t>(re); k < hsv_.size(); ++k) tail += hsv_[k];
  return 2.0 * tail;
}

std::pair<DescriptorStateSpace, ReductionBasis> BalancedRealization::truncate(Index r) const {
  if (r < min_order() || r > n_)
    throw ValidationError(
        fmt::format("balanced truncation order {} for '{}' outside [{}, {}]", r, name_, min_order(), n_));
  const Index nrs = n_rigid_states_;
  const Index nz = n_ - nrs;
  const Index re = r - nrs;

  Matrix vz = Matrix::Zero(n_, r), wz = Matrix::Zero(n_, r);
  vz.topLeftCorner(nrs, nrs).setIdentity();
  wz.topLeftCorner(nrs, nrs).setIdentity();
  if (re == nz) {
    vz.bottomRightCorner(nz, re).setIdentity();
    wz.bottomRightCorner(nz, re).setIdentity();
  } else if (re > 0) {
    const Matrix v = orthonormal_columns(lp_ * svd_v_.leftCols(re));
    const Matrix w = orthonormal_columns(lq_ * svd_u_.leftCols(re));
    const Matrix wv = w.transpose() * v;
    Eigen::FullPivLU<Matrix> lu(wv);
    if (!lu.isInvertible())
      throw NumericalError(fmt::format("balanced truncation of '{}' to order {} is ill-posed (W^T V singular)", name_, r));
    vz.bottomRightCorner(nz, re) = v;
    wz.bottomRightCorner(nz, re) = w * lu.inverse().transpose();
  }

  const Matrix ar = wz.transpose() * az_ * vz;
  const Matrix br = wz.transpose() * bz_;
  const Matrix cr = cz_ * vz;

  ReductionBasis basis;
  basis.method = ReductionMethod::bt;
  basis.V = t_ * vz;
  basis.W = s_.transpose() * wz;
  basis.boundary_ports = inputs_;
  basis.r = r;
  basis.n_rigid = n_rigid_;
  basis.hankel_singular_values = hsv_;

  DescriptorStateSpace reduced(name_, identity_sparse(r), ar.sparseView(), br.sparseView(), cr.sparseView(), d_,
                               inputs_, outputs_);
  return {std::move(reduced), std::move(basis)};
}

std::pair<DescriptorStateSpace, ReductionBasis> reduce_bt(const DescriptorStateSpace& ss, Index r,
                                                          const BtOptions& options) {
  return BalancedRealization::compute(ss, options).truncate(r);
}

// ---------------------------------------------------------------------------
// Component mode synthesis

namespace {

Matrix select(const Matrix& x, const std::vector<Index>& rows, const std::vector<Index>& cols) {
  Matrix out(rows.size(), cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = x(rows[i], cols[j]);
  return out;
}

std::vector<Index> complement(Index n, const std::vector<Index>& sorted) {
  std::vector<Index> out;
  std::size_t p = 0;
  for (Index i = 0; i < n; ++i) {
    if (p < sorted.size() && sorted[p] == i) ++p;
    else out.push_back(i);
  }
  return out;
}

std::vector<Index> normalized_boundary(const SecondOrderSystem& sys, std::vector<Index> extra) {
  std::vector<std::string> issues;
  for (Index d : extra)
    if (d < 0 || d >= sys.n_dof()) issues.push_back(fmt::format("boundary dof {} outside [0, {})", d, sys.n_dof()));
  if (!issues.empty()) throw ValidationError(fmt::format("invalid boundary for '{}'", sys.name()), issues);
  for (Index d : sys.ports().dofs()) extra.push_back(d);
  std::sort(extra.begin(), extra.end());
  extra.erase(std::unique(extra.begin(), extra.end()), extra.end());
  if (extra.empty()) throw ValidationError(fmt::format("'{}' has no boundary dofs to retain", sys.name()));
  return extra;
}

Matrix solve_interior(const Matrix& kii, const Matrix& rhs, const std::string& name) {
  Eigen::LLT<Matrix> llt(kii);
  if (llt.info() != Eigen::Success || !(llt.rcond() > 1e-14))
    throw NumericalError(fmt::format(
        "interior stiffness of '{}' is singular: the boundary does not restrain all rigid-body motion; add boundary "
        "dofs",
        name));
  return llt.solve(rhs);
}

}  // namespace

Matrix condensed_stiffness(const SparseMatrix& stiffness, const std::vector<Index>& boundary_dofs) {
  std::vector<Index> b = boundary_dofs;
  std::sort(b.begin(), b.end());
  const std::vector<Index> i = complement(stiffness.rows(), b);
  const Matrix k = Matrix(stiffness);
  const Matrix kbb = select(k, b, b);
  if (i.empty()) return kbb;
  const Matrix kbi = select(k, b, i);
  const Matrix kii = select(k, i, i);
  return symmetrized(kbb - kbi * solve_interior(kii, kbi.transpose(), "system"));
}

CmsReducer::CmsReducer(ReductionMethod method, const SecondOrderSystem& sys, std::vector<Index> boundary_dofs,
                       const CmsOptions& options)
    : method_(method), sys_(sys), options_(options) {
  if (method == ReductionMethod::bt) throw ValidationError("CmsReducer needs method cb or hh");
  boundary_ = normalized_boundary(sys, std::move(boundary_dofs));
  interior_ = complement(sys.n_dof(), boundary_);

  const Matrix k = Matrix(sys.stiffness());
  const Matrix m = Matrix(sys.mass());
  const Matrix kii = select(k, interior_, interior_);
  const Matrix kib = select(k, interior_, boundary_);
  const Matrix mii = select(m, interior_, interior_);
  psi_ = interior_.empty() ? Matrix(0, boundary_.size()) : Matrix(-solve_interior(kii, kib, sys.name()));

  if (method == ReductionMethod::cb) {
    max_modes_ = static_cast<Index>(interior_.size());
    if (max_modes_ > 0) {
      Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> eig(kii, mii, Eigen::ComputeEigenvectors | Eigen::Ax_lBx);
      if (eig.info() != Eigen::Success)
        throw NumericalError(fmt::format("fixed-interface eigenproblem of '{}' failed", sys.name()));
      modes_i_ = eig.eigenvectors();
      modes_omega_ = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    }
  } else {
    const ModalBasis modes = undamped_modes(sys.mass(), sys.stiffness(), options.rigid_tolerance);
    n_rigid_ = modes.n_rigid;
    max_modes_ = sys.n_dof() - n_rigid_;
    const Matrix phi_b = select(modes.shapes, boundary_, [&] {
      std::vector<Index> all(modes.shapes.cols());
      for (Index c = 0; c < modes.shapes.cols(); ++c) all[c] = c;
      return all;
    }());
    Matrix phi_i(interior_.size(), modes.shapes.cols());
    for (std::size_t r = 0; r < interior_.size(); ++r) phi_i.row(r) = modes.shapes.row(interior_[r]);
    modes_i_ = phi_i - psi_ * phi_b;
    modes_omega_ = modes.omega;
  }
}

std::pair<SecondOrderSystem, ReductionBasis> CmsReducer::reduce(Index n_modes) const {
  if (n_modes < 0 || n_modes > max_modes_)
    throw ValidationError(
        fmt::format("{} mode count {} for '{}' outside [0, {}]", to_string(method_), n_modes, sys_.name(), max_modes_));
  const Index nb = n_boundary();
  const Index ni = static_cast<Index>(interior_.size());

  ReductionBasis basis;
  basis.method = method_;
  basis.boundary_dofs = boundary_;
  basis.n_rigid = n_rigid_;

  Matrix x;
  if (method_ == ReductionMethod::cb) {
    x = modes_i_.leftCols(n_modes);
    basis.cutoff_hz = n_modes > 0 ? modes_omega_(n_modes - 1) / two_pi : 0.0;
  } else {
    const Matrix mii = select(Matrix(sys_.mass()), interior_, interior_);
    const Matrix kii = select(Matrix(sys_.stiffness()), interior_, interior_);
    const Matrix residual = modes_i_.leftCols(n_rigid_ + n_modes);
    Index kept = 0;
    if (residual.cols() > 0 && ni > 0) {
      Eigen::SelfAdjointEigenSolver<Matrix> gram(symmetrized(residual.transpose() * mii * residual));
      const Vector& g = gram.eigenvalues();
      std::vector<Index> keep;
      for (Index c = 0; c < g.size(); ++c)
        if (g(c) > options_.rank_tolerance) keep.push_back(c);
      kept = static_cast<Index>(keep.size());
      Matrix x0(ni, kept);
      for (Index c = 0; c < kept; ++c) x0.col(c) = residual * gram.eigenvectors().col(keep[c]) / std::sqrt(g(keep[c]));
      if (kept > 0) {
        Eigen::SelfAdjointEigenSolver<Matrix> kdiag(symmetrized(x0.transpose() * kii * x0));
        x = x0 * kdiag.eigenvectors();
        basis.cutoff_hz = std::sqrt(std::max(0.0, kdiag.eigenvalues().maxCoeff())) / two_pi;
      } else {
        x = Matrix(ni, 0);
      }
    } else {
      x = Matrix(ni, 0);
    }
    if (kept < n_modes) {
      basis.rank_deficient = true;
      log_warn("Hintz-Herting basis of '{}' is rank deficient: {} of {} free-interface modes retained", sys_.name(),
               kept, n_modes);
    }
  }

  const Index nk = x.cols();
  const Index r = nb + nk;
  Matrix v = Matrix::Zero(sys_.n_dof(), r);
  for (Index j = 0; j < nb; ++j) v(boundary_[j], j) = 1.0;
  for (Index i = 0; i < ni; ++i) {
    v.row(interior_[i]).head(nb) = psi_.row(i);
    v.row(interior_[i]).tail(nk) = x.row(i);
  }
  basis.V = v;
  basis.W = v;
  basis.r = r;
  basis.n_modes = nk;

  const Matrix mr = symmetrized(v.transpose() * (sys_.mass() * v));
  const Matrix dr = symmetrized(v.transpose() * (sys_.damping() * v));
  const Matrix kr = symmetrized(v.transpose() * (sys_.stiffness() * v));

  auto position = [&](Index dof) {
    return static_cast<Index>(std::lower_bound(boundary_.begin(), boundary_.end(), dof) - boundary_.begin());
  };
  PortSet ports;
  for (const auto& in : sys_.ports().inputs) ports.inputs.push_back({in.label, position(in.dof), in.scale});
  for (const auto& out : sys_.ports().outputs)
    ports.outputs.push_back({out.label, position(out.dof), out.scale, out.kind});
  for (const auto& in : sys_.ports().inputs) basis.boundary_ports.push_back(in.label);

  SecondOrderSystem reduced(sys_.name(), mr.sparseView(), dr.sparseView(), kr.sparseView(), std::move(ports));
  return {std::move(reduced), std::move(basis)};
}

std::pair<SecondOrderSystem, ReductionBasis> reduce_cb(const SecondOrderSystem& sys,
                                                       const std::vector<Index>& boundary_dofs, Index n_modes,
                                                       const CmsOptions& options) {
  return CmsReducer(ReductionMethod::cb, sys, boundary_dofs, options).reduce(n_modes);
}

std::pair<SecondOrderSystem, ReductionBasis> reduce_hh(const SecondOrderSystem& sys,
                                                       const std::vector<Index>& boundary_dofs, Index n_modes,
                                                       const CmsOptions& options) {
  return CmsReducer(ReductionMethod::hh, sys, boundary_dofs, options).reduce(n_modes);
}

// ---------------------------------------------------------------------------
// Reducer

Reducer::Reducer(const SecondOrderSystem& sys, ReductionMethod method, const std::vector<Index>& boundary_dofs)
    : method_(method), name_(sys.name()), full_states_(2 * sys.n_dof()) {
  if (method == ReductionMethod::bt) bt_ = BalancedRealization::compute(to_descriptor(sys));
  else cms_.emplace(method, sys, boundary_dofs);
}

Index Reducer::min_level() const { return bt_ ? bt_->min_order() : 0; }

Index Reducer::max_level() const { return bt_ ? bt_->order() : cms_->max_modes(); }

Index Reducer::states(Index level) const {
  if (bt_) return level;
  if (method_ == ReductionMethod::cb) return 2 * (cms_->n_boundary() + level);
  return 2 * cms_->reduce(level).second.r;
}

std::pair<DescriptorStateSpace, ReductionBasis> Reducer::reduce(Index level) const {
  if (bt_) return bt_->truncate(level);
  auto [sys, basis] = cms_->reduce(level);
  return {to_descriptor(sys), std::move(basis)};
}

// ---------------------------------------------------------------------------
// Assembly and verification

void check_reduced_ports(const std::vector<DescriptorStateSpace>& reduced, const PortLayout& layout) {
  std::vector<std::string> issues;
  const auto& entries = layout.entries();
  if (reduced.size() != entries.size())
    issues.push_back(fmt::format("{} reduced subsystems for {} in the layout", reduced.size(), entries.size()));
  for (std::size_t s = 0; s < std::min(reduced.size(), entries.size()); ++s) {
    if (reduced[s].name() != entries[s].name)
      issues.push_back(fmt::format("subsystem {} is '{}', expected '{}'", s, reduced[s].name(), entries[s].name));
    if (reduced[s].input_labels() != entries[s].inputs)
      issues.push_back(fmt::format("'{}': reduced inputs differ from the full-order ports", entries[s].name));
    if (reduced[s].output_labels() != entries[s].outputs)
      issues.push_back(fmt::format("'{}': reduced outputs differ from the full-order ports", entries[s].name));
  }
  if (!issues.empty()) throw ValidationError("reduction did not preserve the subsystem ports", issues);
}

FrfSweep assemble_reduced(const std::vector<DescriptorStateSpace>& reduced, const PortLayout& layout,
                          const InterconnectionMatrix& k, const std::vector<double>& omega, const FrfOptions& frf,
                          const LftOptions& lft) {
  check_reduced_ports(reduced, layout);
  k.validate(layout);
  const BlockFrf cache = block_frf(block_collect(reduced), omega, frf);
  return lft_assemble(cache.block_sweep(), k, lft);
}

std::vector<FrfSweep> assemble_reduced(const std::vector<DescriptorStateSpace>& reduced, const PortLayout& layout,
                                       const std::vector<InterfaceSpec>& interfaces,
                                       const std::vector<OperatingPoint>& ops, const InterconnectionMatrix& outer,
                                       const std::vector<double>& omega, const FrfOptions& frf,
                                       const SweepOptions& sweep) {
  check_reduced_ports(reduced, layout);
  const BlockFrf cache = block_frf(block_collect(reduced), omega, frf);
  return sweep_operating_points(cache, interfaces, ops, outer, omega, sweep);
}

bool ErrorReport::pass() const {
  return std::all_of(entries.begin(), entries.end(), [](const ErrorEntry& e) { return e.pass; });
}

double ErrorReport::max_error() const {
  double out = 0.0;
  for (const auto& e : entries) out = std::max(out, e.max_relative);
  return out;
}

void ErrorReport::append(const ErrorReport& other) {
  entries.insert(entries.end(), other.entries.begin(), other.entries.end());
}

ErrorReport relative_error(const FrfSweep& full, const FrfSweep& reduced, const ErrorOptions& options,
                           std::size_t op) {
  if (full.frequencies() != reduced.frequencies())
    throw ValidationError("relative error needs identical frequency grids");
  if (full.input_labels() != reduced.input_labels() || full.output_labels() != reduced.output_labels())
    throw ValidationError("relative error needs identical port labels");
  if (!(options.threshold > 0.0)) throw ValidationError("error threshold must be positive");

  std::vector<std::pair<Index, Index>> pairs;
  if (options.entries.empty()) {
    for (Index j = 0; j < full.cols(); ++j)
      for (Index i = 0; i < full.rows(); ++i) pairs.emplace_back(i, j);
  } else {
    std::vector<std::string> issues;
    for (const auto& [out, in] : options.entries) {
      const auto& ol = full.output_labels();
      const auto& il = full.input_labels();
      const auto oi = std::find(ol.begin(), ol.end(), out);
      const auto ii = std::find(il.begin(), il.end(), in);
      if (oi == ol.end()) issues.push_back(fmt::format("unknown output '{}'", out));
      if (ii == il.end()) issues.push_back(fmt::format("unknown input '{}'", in));
      if (oi != ol.end() && ii != il.end()) pairs.emplace_back(oi - ol.begin(), ii - il.begin());
    }
    if (!issues.empty()) throw ValidationError("invalid error entry selection", issues);
  }

  ErrorReport report;
  report.threshold = options.threshold;
  report.floor = options.floor;
  const auto& w = full.frequencies();
  for (const auto& [i, j] : pairs) {
    double gmax = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) gmax = std::max(gmax, std::abs(full.at(k)(i, j)));
    ErrorEntry entry;
    entry.output = full.output_labels()[i];
    entry.input = full.input_labels()[j];
    entry.op = op;
    const double cutoff = options.floor * gmax;
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double g = std::abs(full.at(k)(i, j));
      if (g == 0.0 || g < cutoff) continue;
      ++entry.evaluated;
      const double rel = std::abs(reduced.at(k)(i, j) - full.at(k)(i, j)) / g;
      if (entry.evaluated == 1 || rel > entry.max_relative) {
        entry.max_relative = rel;
        entry.worst_omega = w[k];
      }
    }
    entry.pass = entry.max_relative < options.threshold;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

std::vector<double> refine_around_peaks(const FrfSweep& sweep, int factor) {
  const auto& w = sweep.frequencies();
  if (factor < 1) throw ValidationError("refinement factor must be >= 1");
  if (factor == 1 || w.size() < 3) return w;
  std::vector<double> mag(w.size());
  for (std::size_t k = 0; k < w.size(); ++k) mag[k] = sweep.at(k).cwiseAbs().maxCoeff();
  std::vector<char> refine(w.size() - 1, 0);
  for (std::size_t k = 1; k + 1 < w.size(); ++k) {
    if (mag[k] > mag[k - 1] && mag[k] >= mag[k + 1]) {
      refine[k - 1] = 1;
      refine[k] = 1;
    }
  }
  std::vector<double> out;
  out.reserve(w.size() * 2);
  for (std::size_t k = 0; k + 1 < w.size(); ++k) {
    out.push_back(w[k]);
    if (!refine[k]) continue;
    const bool geometric = w[k] > 0.0;
    for (int s = 1; s < factor; ++s) {
      const double t = static_cast<double>(s) / factor;
      out.push_back(geometric ? w[k] * std::pow(w[k + 1] / w[k], t) : w[k] + t * (w[k + 1] - w[k]));
    }
  }
  out.push_back(w.back());
  return out;
}

std::vector<double> verification_grid(double lo, double hi,
                                      const std::function<FrfSweep(const std::vector<double>&)>& probe,
                                      std::size_t count, int factor) {
  const std::vector<double> base = frequency_grid(lo, hi, count, true);
  if (!probe) return base;
  return refine_around_peaks(probe(base), factor);
}

// ---------------------------------------------------------------------------
// Minimal-order search

namespace {

class SearchContext {
 public:
  SearchContext(const std::vector<SearchSubsystem>& subsystems, const std::vector<InterfaceSpec>& interfaces,
                const std::vector<OperatingPoint>& ops, const ExternalPorts& external,
                const std::vector<double>& omega, const SearchOptions& options)
      : interfaces_(interfaces), ops_(ops), omega_(omega), options_(options) {
    if (subsystems.empty()) throw ValidationError("order search needs at least one subsystem");
    if (ops.empty()) throw ValidationError("order search needs at least one operating point");

    std::vector<DescriptorStateSpace> full;
    for (const auto& s : subsystems) {
      full.push_back(to_descriptor(s.system));
      names_.push_back(s.system.name());
    }
    layout_ = block_collect(full).layout;
    outer_ = outer_interconnection(layout_, external);

    reducers_.resize(subsystems.size());
    parallel_for(
        subsystems.size(),
        [&](std::size_t j) {
          try {
            reducers_[j].emplace(subsystems[j].system, subsystems[j].method, subsystems[j].boundary_dofs);
          } catch (const ValidationError& e) {
            throw ValidationError(fmt::format("subsystem '{}': {}", names_[j], e.what()));
          } catch (const NumericalError& e) {
            throw NumericalError(fmt::format("subsystem '{}': {}", names_[j], e.what()));
          }
        },
        options.sweep.threads);

    for (std::size_t j = 0; j < full.size(); ++j) full_frf_.push_back(frf_eval(full[j], omega_, options_.frf));
    reference_ = sweep_operating_points(block_frf_from(full_frf_, names_), interfaces_, ops_, outer_, omega_,
                                        options_.sweep);

    if (!options.reference.empty()) {
      if (options.reference.size() != ops.size())
        throw ValidationError(fmt::format("{} reference sweeps for {} operating points", options.reference.size(),
                                          ops.size()));
      for (std::size_t o = 0; o < ops.size(); ++o) {
        const ErrorReport rep = relative_error(options.reference[o], reference_[o], options.error, o);
        if (!rep.pass())
          throw NumericalError(fmt::format(
              "threshold {} unreachable: the full-order position-dependent model already deviates by {:.4g} from the "
              "reference at operating point {}",
              options.error.threshold, rep.max_error(), o));
      }
    }
  }

  std::size_t size() const noexcept { return reducers_.size(); }
  const Reducer& reducer(std::size_t j) const { return *reducers_[j]; }
  const std::vector<std::string>& names() const noexcept { return names_; }
  std::size_t evaluations() const noexcept { return evaluations_; }

  std::vector<Index> full_levels() const {
    std::vector<Index> out;
    for (const auto& r : reducers_) out.push_back(r->max_level());
    return out;
  }

  ErrorReport evaluate(const std::vector<Index>& levels, const std::vector<std::size_t>& op_indices) {
    ++evaluations_;
    std::vector<FrfSweep> sweeps;
    for (std::size_t j = 0; j < levels.size(); ++j) sweeps.push_back(subsystem_frf(j, levels[j]));
    std::vector<OperatingPoint> ops;
    for (auto o : op_indices) ops.push_back(ops_[o]);
    const auto results =
        sweep_operating_points(block_frf_from(sweeps, names_), interfaces_, ops, outer_, omega_, options_.sweep);
    ErrorReport report;
    report.threshold = options_.error.threshold;
    report.floor = options_.error.floor;
    for (std::size_t k = 0; k < op_indices.size(); ++k)
      report.append(relative_error(reference_[op_indices[k]], results[k], options_.error, op_indices[k]));
    return report;
  }

  ErrorReport evaluate_all(const std::vector<Index>& levels) {
    std::vector<std::size_t> all(ops_.size());
    for (std::size_t o = 0; o < all.size(); ++o) all[o] = o;
    return evaluate(levels, all);
  }

 private:
  const FrfSweep& subsystem_frf(std::size_t j, Index level) {
    if (level == reducers_[j]->max_level()) return full_frf_[j];
    const auto key = std::make_pair(j, level);
    auto it = frf_cache_.find(key);
    if (it == frf_cache_.end()) {
      const auto reduced = reducers_[j]->reduce(level).first;
      it = frf_cache_.emplace(key, frf_eval(reduced, omega_, options_.frf)).first;
    }
    return it->second;
  }

  const std::vector<InterfaceSpec>& interfaces_;
  const std::vector<OperatingPoint>& ops_;
  const std::vector<double>& omega_;
  const SearchOptions& options_;
  std::vector<std::string> names_;
  PortLayout layout_;
  InterconnectionMatrix outer_;
  std::vector<std::optional<Reducer>> reducers_;
  std::vector<FrfSweep> full_frf_;
  std::vector<FrfSweep> reference_;
  std::map<std::pair<std::size_t, Index>, FrfSweep> frf_cache_;
  std::size_t evaluations_ = 0;
};

}  // namespace

SearchResult minimal_order_search(const std::vector<SearchSubsystem>& subsystems,
                                  const std::vector<InterfaceSpec>& interfaces,
                                  const std::vector<OperatingPoint>& ops, const ExternalPorts& external,
                                  const std::vector<double>& omega, const SearchOptions& options) {
  SearchContext ctx(subsystems, interfaces, ops, external, omega, options);
  const std::size_t k = ctx.size();
  const std::vector<Index> full = ctx.full_levels();

  SearchResult result;
  result.names = ctx.names();
  for (std::size_t j = 0; j < k; ++j) {
    result.methods.push_back(ctx.reducer(j).method());
    result.full_states.push_back(ctx.reducer(j).full_states());
  }

  auto with_level = [&](std::vector<Index> levels, std::size_t j, Index level) {
    levels[j] = level;
    return levels;
  };

  // Stage 1: one subsystem reduced at a time, bisection per operating point.
  result.per_op_level.assign(k, std::vector<Index>(ops.size(), 0));
  std::vector<Index> levels(k);
  for (std::size_t j = 0; j < k; ++j) {
    const Index lo0 = ctx.reducer(j).min_level();
    for (std::size_t o = 0; o < ops.size(); ++o) {
      auto passes = [&](Index level) { return ctx.evaluate(with_level(full, j, level), {o}).pass(); };
      Index lo = lo0, hi = full[j];
      if (passes(lo)) {
        hi = lo;
      } else {
        while (hi - lo > 1) {
          const Index mid = lo + (hi - lo) / 2;
          if (passes(mid)) hi = mid;
          else lo = mid;
        }
      }
      result.per_op_level[j][o] = hi;
    }
    Index joint = *std::max_element(result.per_op_level[j].begin(), result.per_op_level[j].end());
    while (joint < full[j] && !ctx.evaluate_all(with_level(full, j, joint)).pass()) ++joint;
    levels[j] = joint;
    log_info("order search: '{}' stage-1 level {}", result.names[j], joint);
  }

  // Stage 2: all subsystems reduced together; grow the worst contributor.
  while (!ctx.evaluate_all(levels).pass()) {
    if (result.repair_steps >= options.max_repair_steps)
      throw NumericalError("order search repair did not converge within the step limit");
    std::size_t worst = k;
    double worst_error = -1.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (levels[j] >= full[j]) continue;
      const double e = ctx.evaluate_all(with_level(full, j, levels[j])).max_error();
      if (e > worst_error) {
        worst_error = e;
        worst = j;
      }
    }
    if (worst == k) break;
    ++levels[worst];
    ++result.repair_steps;
  }

  // Trim so that every final level is locally minimal.
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t j = 0; j < k; ++j) {
      while (levels[j] > ctx.reducer(j).min_level() &&
             ctx.evaluate_all(with_level(levels, j, levels[j] - 1)).pass()) {
        --levels[j];
        changed = true;
      }
    }
  }

  for (std::size_t j = 0; j < k; ++j) {
    OrderWitness witness;
    witness.subsystem = j;
    if (levels[j] == ctx.reducer(j).min_level()) {
      witness.level = levels[j];
      witness.at_minimum = true;
    } else {
      witness.level = levels[j] - 1;
      const ErrorReport rep = ctx.evaluate_all(with_level(levels, j, levels[j] - 1));
      for (const auto& e : rep.entries) {
        if (e.max_relative >= witness.error) {
          witness.error = e.max_relative;
          witness.op = e.op;
        }
      }
    }
    result.witnesses.push_back(witness);
  }

  result.final_level = levels;
  result.final_report = ctx.evaluate_all(levels);
  for (std::size_t j = 0; j < k; ++j) {
    result.final_states.push_back(ctx.reducer(j).states(levels[j]));
    std::vector<Index> states;
    for (Index level : result.per_op_level[j]) states.push_back(ctx.reducer(j).states(level));
    result.per_op_states.push_back(std::move(states));
  }
  result.evaluations = ctx.evaluations();
  return result;
}

}  // namespace modlink
