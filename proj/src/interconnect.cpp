#include "modlink/interconnect.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "modlink/error.hpp"
#include "modlink/log.hpp"
#include "modlink/parallel.hpp"

namespace modlink {

namespace {

using Triplet = Eigen::Triplet<double>;
using ComplexSparse = Eigen::SparseMatrix<Complex>;

SparseMatrix from_triplets(Index rows, Index cols, const std::vector<Triplet>& triplets) {
  SparseMatrix out(rows, cols);
  out.setFromTriplets(triplets.begin(), triplets.end());
  out.prune(0.0);
  out.makeCompressed();
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// PortLayout / BlockSystem

PortLayout::PortLayout(std::vector<Entry> entries) : entries_(std::move(entries)) {
  std::set<std::string> names;
  for (auto& e : entries_) {
    if (!names.insert(e.name).second) throw ValidationError(fmt::format("duplicate subsystem name '{}'", e.name));
    e.input_offset = m_b_;
    e.output_offset = p_b_;
    m_b_ += static_cast<Index>(e.inputs.size());
    p_b_ += static_cast<Index>(e.outputs.size());
  }
}

std::optional<std::size_t> PortLayout::find_subsystem(const std::string& name) const {
  for (std::size_t k = 0; k < entries_.size(); ++k)
    if (entries_[k].name == name) return k;
  return std::nullopt;
}

std::optional<Index> PortLayout::input_index(const std::string& subsystem, const std::string& label) const {
  const auto s = find_subsystem(subsystem);
  if (!s) return std::nullopt;
  const auto& e = entries_[*s];
  const auto it = std::find(e.inputs.begin(), e.inputs.end(), label);
  if (it == e.inputs.end()) return std::nullopt;
  return e.input_offset + static_cast<Index>(it - e.inputs.begin());
}

std::optional<Index> PortLayout::output_index(const std::string& subsystem, const std::string& label) const {
  const auto s = find_subsystem(subsystem);
  if (!s) return std::nullopt;
  const auto& e = entries_[*s];
  const auto it = std::find(e.outputs.begin(), e.outputs.end(), label);
  if (it == e.outputs.end()) return std::nullopt;
  return e.output_offset + static_cast<Index>(it - e.outputs.begin());
}

BlockSystem block_collect(std::vector<DescriptorStateSpace> systems) {
  if (systems.empty()) throw ValidationError("block system needs at least one subsystem");
  std::vector<PortLayout::Entry> entries;
  entries.reserve(systems.size());
  for (const auto& s : systems) entries.push_back({s.name(), s.input_labels(), s.output_labels()});
  return {std::move(systems), PortLayout(std::move(entries))};
}

const std::vector<double>& BlockFrf::frequencies() const {
  if (subsystems.empty()) throw ValidationError("empty block FRF");
  return subsystems.front().frequencies();
}

FrfSweep BlockFrf::block_sweep() const {
  const auto& omega = frequencies();
  std::vector<ComplexMatrix> data(omega.size());
  const auto& entries = layout.entries();
  for (std::size_t k = 0; k < omega.size(); ++k) {
    ComplexMatrix g = ComplexMatrix::Zero(layout.p_b(), layout.m_b());
    for (std::size_t s = 0; s < subsystems.size(); ++s) {
      const auto& gs = subsystems[s].at(k);
      g.block(entries[s].output_offset, entries[s].input_offset, gs.rows(), gs.cols()) = gs;
    }
    data[k] = std::move(g);
  }
  std::vector<std::string> inputs, outputs;
  for (const auto& e : entries) {
    for (const auto& l : e.inputs) inputs.push_back(e.name + "." + l);
    for (const auto& l : e.outputs) outputs.push_back(e.name + "." + l);
  }
  return {omega, std::move(data), std::move(inputs), std::move(outputs)};
}

BlockFrf block_frf(const BlockSystem& block, const std::vector<double>& omega, const FrfOptions& options) {
  BlockFrf out{block.layout, {}};
  out.subsystems.reserve(block.subsystems.size());
  for (const auto& s : block.subsystems) out.subsystems.push_back(frf_eval(s, omega, options));
  return out;
}

BlockFrf block_frf_from(const std::vector<FrfSweep>& sweeps, const std::vector<std::string>& names) {
  if (sweeps.empty() || sweeps.size() != names.size())
    throw ValidationError("block FRF needs one non-empty name per subsystem sweep");
  std::vector<PortLayout::Entry> entries;
  for (std::size_t s = 0; s < sweeps.size(); ++s) {
    if (sweeps[s].frequencies() != sweeps.front().frequencies())
      throw ValidationError(fmt::format("subsystem '{}' FRF uses a different frequency grid", names[s]));
    entries.push_back({names[s], sweeps[s].input_labels(), sweeps[s].output_labels()});
  }
  return {PortLayout(std::move(entries)), sweeps};
}

// ---------------------------------------------------------------------------
// Interconnection matrix

void InterconnectionMatrix::validate(const PortLayout& layout) const {
  std::vector<std::string> issues;
  auto expect = [&](const SparseMatrix& x, Index r, Index c, const char* what) {
    if (x.rows() != r || x.cols() != c)
      issues.push_back(fmt::format("{} is {}x{}, expected {}x{}", what, x.rows(), x.cols(), r, c));
  };
  const Index mc = k12.cols(), pc = k21.rows();
  expect(k11, layout.m_b(), layout.p_b(), "K11");
  expect(k12, layout.m_b(), mc, "K12");
  expect(k21, pc, layout.p_b(), "K21");
  expect(k22, pc, mc, "K22");
  if (static_cast<Index>(external_inputs.size()) != mc)
    issues.push_back(fmt::format("{} external input labels for m_c = {}", external_inputs.size(), mc));
  if (static_cast<Index>(external_outputs.size()) != pc)
    issues.push_back(fmt::format("{} external output labels for p_c = {}", external_outputs.size(), pc));
  if (!issues.empty()) throw ValidationError("inconsistent interconnection matrix", issues);
}

InterconnectionMatrix InterconnectionMatrix::with_k11(SparseMatrix k11_new) const {
  InterconnectionMatrix out = *this;
  out.k11 = std::move(k11_new);
  return out;
}

InterconnectionMatrix outer_interconnection(const PortLayout& layout, const ExternalPorts& external,
                                            const std::optional<Matrix>& feedthrough) {
  std::vector<std::string> issues;
  std::vector<Triplet> k12, k21;
  InterconnectionMatrix out;
  const Index mc = static_cast<Index>(external.inputs.size());
  const Index pc = static_cast<Index>(external.outputs.size());
  for (Index c = 0; c < mc; ++c) {
    const auto& ref = external.inputs[c];
    const auto idx = layout.input_index(ref.subsystem, ref.port);
    if (!idx) issues.push_back(fmt::format("external input '{}.{}' does not exist", ref.subsystem, ref.port));
    else k12.emplace_back(*idx, c, 1.0);
    out.external_inputs.push_back(ref.label.empty() ? ref.subsystem + "." + ref.port : ref.label);
  }
  for (Index c = 0; c < pc; ++c) {
    const auto& ref = external.outputs[c];
    const auto idx = layout.output_index(ref.subsystem, ref.port);
    if (!idx) issues.push_back(fmt::format("external output '{}.{}' does not exist", ref.subsystem, ref.port));
    else k21.emplace_back(c, *idx, 1.0);
    out.external_outputs.push_back(ref.label.empty() ? ref.subsystem + "." + ref.port : ref.label);
  }
  if (feedthrough && (feedthrough->rows() != pc || feedthrough->cols() != mc))
    issues.push_back(fmt::format("feedthrough is {}x{}, expected {}x{}", feedthrough->rows(), feedthrough->cols(), pc, mc));
  if (!issues.empty()) throw ValidationError("invalid external port selection", issues);
  out.k11 = SparseMatrix(layout.m_b(), layout.p_b());
  out.k12 = from_triplets(layout.m_b(), mc, k12);
  out.k21 = from_triplets(pc, layout.p_b(), k21);
  out.k22 = feedthrough ? SparseMatrix(feedthrough->sparseView()) : SparseMatrix(pc, mc);
  return out;
}

FrfSweep lft_assemble(const FrfSweep& gb, const InterconnectionMatrix& k, const LftOptions& options,
                      LftDiagnostics* diagnostics) {
  const Index mb = gb.cols(), pb = gb.rows();
  if (k.k11.rows() != mb || k.k11.cols() != pb || k.k12.rows() != mb || k.k21.cols() != pb ||
      k.k22.rows() != k.k21.rows() || k.k22.cols() != k.k12.cols())
    throw ValidationError(fmt::format("interconnection partitions do not fit a {}x{} block system", pb, mb));

  // Only ports touched by K11 take part in the feedback. With R the rows and
  // C the columns of its nonzeros, K11 = S_R Kt S_C^T and
  //   (I - K11 G)^{-1} = I + S_R (I - Kt G[C,R])^{-1} Kt G[C,:].
  std::vector<Index> rows, cols;
  {
    std::vector<char> used_r(static_cast<std::size_t>(mb), 0), used_c(static_cast<std::size_t>(pb), 0);
    for (int o = 0; o < k.k11.outerSize(); ++o)
      for (SparseMatrix::InnerIterator it(k.k11, o); it; ++it)
        if (it.value() != 0.0) {
          used_r[static_cast<std::size_t>(it.row())] = 1;
          used_c[static_cast<std::size_t>(it.col())] = 1;
        }
    for (Index i = 0; i < mb; ++i)
      if (used_r[static_cast<std::size_t>(i)]) rows.push_back(i);
    for (Index i = 0; i < pb; ++i)
      if (used_c[static_cast<std::size_t>(i)]) cols.push_back(i);
  }
  const Matrix k11_dense(k.k11);
  ComplexMatrix kt(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
  for (std::size_t a = 0; a < rows.size(); ++a)
    for (std::size_t b = 0; b < cols.size(); ++b)
      kt(static_cast<Index>(a), static_cast<Index>(b)) = k11_dense(rows[a], cols[b]);
  const ComplexMatrix k12 = ComplexMatrix(k.k12.cast<Complex>());
  const ComplexSparse k21 = k.k21.cast<Complex>();
  const ComplexMatrix k22 = ComplexMatrix(k.k22.cast<Complex>());
  const Index nr = static_cast<Index>(rows.size());

  LftDiagnostics local;
  std::vector<ComplexMatrix> data(gb.size());
  for (std::size_t f = 0; f < gb.size(); ++f) {
    const ComplexMatrix& g = gb.at(f);
    const double w = gb.frequencies()[f];
    ComplexMatrix gk12 = g * k12;
    if (nr == 0) {
      data[f] = k21 * gk12 + k22;
      continue;
    }
    ComplexMatrix g_cr(static_cast<Index>(cols.size()), nr);
    ComplexMatrix gk12_c(static_cast<Index>(cols.size()), k12.cols());
    for (std::size_t b = 0; b < cols.size(); ++b) {
      for (Index a = 0; a < nr; ++a) g_cr(static_cast<Index>(b), a) = g(cols[b], rows[static_cast<std::size_t>(a)]);
      gk12_c.row(static_cast<Index>(b)) = gk12.row(cols[b]);
    }
    const ComplexMatrix feedback = ComplexMatrix::Identity(nr, nr) - kt * g_cr;
    Eigen::PartialPivLU<ComplexMatrix> lu(feedback);
    const double rcond = lu.rcond();
    if (rcond < local.min_rcond) {
      local.min_rcond = rcond;
      local.worst_omega = w;
    }
    if (!(rcond >= options.error_rcond))
      throw SingularFrequencyError("LFT feedback matrix (I - K11 G_b) is singular", w, rcond);
    if (rcond < options.warn_rcond) {
      ++local.warnings;
      log_warn("LFT feedback matrix ill-conditioned at omega = {:.6g} rad/s (rcond = {:.3e})", w, rcond);
    }
    const ComplexMatrix y = lu.solve(kt * gk12_c);
    for (Index a = 0; a < nr; ++a) gk12 += g.col(rows[static_cast<std::size_t>(a)]) * y.row(a);
    data[f] = k21 * gk12 + k22;
  }
  log_debug("LFT assembled over {} frequencies, min rcond {:.3e} at omega = {:.6g}", gb.size(), local.min_rcond,
            local.worst_omega);
  if (diagnostics) *diagnostics = local;
  return {gb.frequencies(), std::move(data), k.external_inputs, k.external_outputs};
}

// ---------------------------------------------------------------------------
// Interfaces

std::vector<double> InterfaceSide::coordinates() const {
  std::vector<double> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(p.coordinate);
  return out;
}

double InterfaceSpec::position_j(const SpringSpec& spring, double offset) const {
  return sliding == SlidingSide::j ? spring.anchor_j + offset : spring.anchor_j;
}

double InterfaceSpec::position_ell(const SpringSpec& spring, double offset) const {
  return sliding == SlidingSide::ell ? spring.anchor_ell_base + offset : spring.anchor_ell_base;
}

void InterfaceSpec::validate(const PortLayout* layout) const {
  std::vector<std::string> issues;
  auto check_side = [&](const InterfaceSide& side, const char* which) {
    if (side.points.size() < 2)
      issues.push_back(fmt::format("side {} ('{}') needs at least 2 virtual points", which, side.subsystem));
    for (std::size_t k = 1; k < side.points.size(); ++k)
      if (!(side.points[k].coordinate > side.points[k - 1].coordinate))
        issues.push_back(fmt::format("side {} coordinates not strictly increasing at point {}", which, k));
    if (!layout) return;
    if (!layout->find_subsystem(side.subsystem)) {
      issues.push_back(fmt::format("side {} references unknown subsystem '{}'", which, side.subsystem));
      return;
    }
    for (const auto& p : side.points) {
      if (!layout->input_index(side.subsystem, p.port) || !layout->output_index(side.subsystem, p.port))
        issues.push_back(fmt::format("side {}: '{}.{}' is not an io port", which, side.subsystem, p.port));
    }
  };
  check_side(side_j, "j");
  check_side(side_ell, "ell");
  for (std::size_t s = 0; s < springs.size(); ++s)
    if (!(springs[s].stiffness > 0.0) || !std::isfinite(springs[s].stiffness))
      issues.push_back(fmt::format("spring {} stiffness {} must be positive", s, springs[s].stiffness));
  if (!issues.empty()) throw ValidationError(fmt::format("invalid interface '{}'", id), issues);
}

InterpWeights interp_weights(const std::vector<double>& grid, double position) {
  const std::size_t n = grid.size();
  if (n < 2) throw ValidationError("interpolation grid needs at least 2 points");
  for (std::size_t k = 1; k < n; ++k)
    if (!(grid[k] > grid[k - 1])) throw ValidationError("interpolation grid is not strictly increasing");
  const double span = grid.back() - grid.front();
  const double slack = 1e-12 * span;
  if (!(position >= grid.front() - slack && position <= grid.back() + slack))
    throw ValidationError(fmt::format("position {:.17g} outside grid span [{:.17g}, {:.17g}]", position, grid.front(),
                                      grid.back()));
  position = std::clamp(position, grid.front(), grid.back());
  // Positions within the tolerance of a grid point snap onto it exactly, so
  // aligned springs reproduce the static interconnection bit for bit.
  const auto nearest = std::lower_bound(grid.begin(), grid.end(), position - slack);
  if (nearest != grid.end() && std::abs(*nearest - position) <= slack) position = *nearest;
  auto upper = std::upper_bound(grid.begin(), grid.end(), position);
  auto alpha = static_cast<Index>(upper - grid.begin()) - 1;
  alpha = std::min<Index>(alpha, static_cast<Index>(n) - 2);
  const Index beta = alpha + 1;
  const double ga = grid[alpha], gb = grid[beta];
  InterpWeights w;
  w.alpha = alpha;
  w.beta = beta;
  w.w_alpha = (gb - position) / (gb - ga);
  w.w_beta = (position - ga) / (gb - ga);
  return w;
}

SpringBlock spring_block(const SpringSpec& spring, const InterfaceSpec& iface, double offset,
                         const PortLayout& layout) {
  const InterpWeights wj = interp_weights(iface.side_j.coordinates(), iface.position_j(spring, offset));
  const InterpWeights wl = interp_weights(iface.side_ell.coordinates(), iface.position_ell(spring, offset));

  Eigen::Matrix<double, 4, 2> q = Eigen::Matrix<double, 4, 2>::Zero();
  q(0, 0) = wj.w_alpha;
  q(1, 0) = wj.w_beta;
  q(2, 1) = wl.w_alpha;
  q(3, 1) = wl.w_beta;
  Eigen::Matrix2d kernel;
  kernel << -spring.stiffness, spring.stiffness, spring.stiffness, -spring.stiffness;

  SpringBlock out;
  const Eigen::Matrix4d block = q * kernel * q.transpose();
  out.block = 0.5 * (block + block.transpose());
  const std::array<std::pair<const InterfaceSide*, Index>, 4> active{
      {{&iface.side_j, wj.alpha}, {&iface.side_j, wj.beta}, {&iface.side_ell, wl.alpha}, {&iface.side_ell, wl.beta}}};
  for (std::size_t a = 0; a < 4; ++a) {
    const auto& side = *active[a].first;
    const auto& port = side.points[active[a].second].port;
    const auto in = layout.input_index(side.subsystem, port);
    const auto out_idx = layout.output_index(side.subsystem, port);
    if (!in || !out_idx)
      throw ValidationError(fmt::format("interface '{}': '{}.{}' is not an io port", iface.id, side.subsystem, port));
    out.inputs[a] = *in;
    out.outputs[a] = *out_idx;
  }
  return out;
}

namespace {

void append_spring(const SpringBlock& sb, std::vector<Triplet>& triplets) {
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      if (sb.block(r, c) != 0.0) triplets.emplace_back(sb.inputs[r], sb.outputs[c], sb.block(r, c));
}

void check_offsets(const std::vector<InterfaceSpec>& interfaces, const OperatingPoint& op) {
  if (op.offsets.size() != interfaces.size())
    throw ValidationError(fmt::format("operating point has {} offsets for {} interfaces", op.offsets.size(),
                                      interfaces.size()));
}

}  // namespace

SparseMatrix spring_k11(const SpringSpec& spring, const InterfaceSpec& iface, double offset,
                        const PortLayout& layout) {
  std::vector<Triplet> triplets;
  append_spring(spring_block(spring, iface, offset, layout), triplets);
  return from_triplets(layout.m_b(), layout.p_b(), triplets);
}

SparseMatrix posdep_k11(const std::vector<InterfaceSpec>& interfaces, const OperatingPoint& op,
                        const PortLayout& layout) {
  check_offsets(interfaces, op);
  std::vector<Triplet> triplets;
  std::vector<std::string> issues;
  for (std::size_t i = 0; i < interfaces.size(); ++i) {
    const auto& iface = interfaces[i];
    for (std::size_t s = 0; s < iface.springs.size(); ++s) {
      try {
        append_spring(spring_block(iface.springs[s], iface, op.offsets[i], layout), triplets);
      } catch (const ValidationError& e) {
        issues.push_back(fmt::format("interface '{}' spring {}: {}", iface.id, s, e.what()));
      }
    }
  }
  if (!issues.empty()) throw ValidationError("cannot build position-dependent K11", issues);
  return from_triplets(layout.m_b(), layout.p_b(), triplets);
}

SparseMatrix static_k11(const std::vector<InterfaceSpec>& interfaces, const OperatingPoint& op,
                        const PortLayout& layout, double snap_tolerance) {
  check_offsets(interfaces, op);
  std::vector<Triplet> triplets;
  std::vector<std::string> issues;

  auto snap = [&](const InterfaceSide& side, double position) -> std::optional<std::pair<Index, Index>> {
    for (const auto& p : side.points) {
      if (std::abs(p.coordinate - position) <= snap_tolerance) {
        const auto in = layout.input_index(side.subsystem, p.port);
        const auto out = layout.output_index(side.subsystem, p.port);
        if (in && out) return std::make_pair(*in, *out);
      }
    }
    return std::nullopt;
  };

  for (std::size_t i = 0; i < interfaces.size(); ++i) {
    const auto& iface = interfaces[i];
    for (std::size_t s = 0; s < iface.springs.size(); ++s) {
      const auto& spring = iface.springs[s];
      const double pj = iface.position_j(spring, op.offsets[i]);
      const double pl = iface.position_ell(spring, op.offsets[i]);
      const auto a = snap(iface.side_j, pj);
      const auto b = snap(iface.side_ell, pl);
      if (!a || !b) {
        issues.push_back(fmt::format("interface '{}' spring {}: no port coincides with position {:.17g} on side {}",
                                     iface.id, s, !a ? pj : pl, !a ? "j" : "ell"));
        continue;
      }
      const double k = spring.stiffness;
      triplets.emplace_back(a->first, a->second, -k);
      triplets.emplace_back(a->first, b->second, k);
      triplets.emplace_back(b->first, a->second, k);
      triplets.emplace_back(b->first, b->second, -k);
    }
  }
  if (!issues.empty()) throw ValidationError("cannot build static K11", issues);
  return from_triplets(layout.m_b(), layout.p_b(), triplets);
}

std::vector<FrfSweep> sweep_operating_points(const BlockFrf& cache, const std::vector<InterfaceSpec>& interfaces,
                                             const std::vector<OperatingPoint>& ops,
                                             const InterconnectionMatrix& outer, const std::vector<double>& omega,
                                             const SweepOptions& options) {
  if (cache.frequencies() != omega)
    throw ValidationError("subsystem FRF cache does not cover the requested frequency grid");
  outer.validate(cache.layout);
  for (const auto& iface : interfaces) iface.validate(&cache.layout);
  const FrfSweep gb = cache.block_sweep();

  std::vector<FrfSweep> out(ops.size());
  parallel_for(
      ops.size(),
      [&](std::size_t k) {
        try {
          const SparseMatrix k11 = posdep_k11(interfaces, ops[k], cache.layout);
          out[k] = lft_assemble(gb, outer.with_k11(k11), options.lft);
        } catch (const ValidationError& e) {
          throw ValidationError(fmt::format("operating point {}: {}", k, e.what()));
        } catch (const NumericalError& e) {
          throw NumericalError(fmt::format("operating point {}: {}", k, e.what()));
        }
      },
      options.threads);
  return out;
}

}  // namespace modlink
