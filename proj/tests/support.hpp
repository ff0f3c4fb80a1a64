#pragma once

// Test-only oracles and generators. Nothing here calls the code under test
// for the quantity being checked: FRFs come from dense second-order solves,
// Lyapunov solutions from the Kronecker form, and so on.

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/Dense>

#include "modlink/interconnect.hpp"
#include "modlink/lti.hpp"
#include "modlink/models.hpp"

namespace testing {

using namespace modlink;

inline std::mt19937_64& rng() {
  static std::mt19937_64 gen(20240611);
  return gen;
}

inline double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng()); }
inline Index uniform_int(Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng()); }

inline double max_rel(const ComplexMatrix& a, const ComplexMatrix& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), 1e-300);
}

/// max_w ||A(w) - B(w)||_max / ||B(w)||_max (reference = b).
inline double sweep_rel(const FrfSweep& a, const FrfSweep& b) {
  double worst = 0.0;
  for (std::size_t k = 0; k < b.size(); ++k) worst = std::max(worst, max_rel(a.at(k), b.at(k)));
  return worst;
}

/// Dense C (K - w^2 M + i w D)^{-1} B from the port maps.
inline ComplexMatrix dense_second_order(const Matrix& m, const Matrix& d, const Matrix& k, const PortSet& ports,
                                        double w) {
  const Index n = m.rows();
  const Complex iw(0.0, w);
  const ComplexMatrix dyn = k.cast<Complex>() - w * w * m.cast<Complex>() + iw * d.cast<Complex>();
  ComplexMatrix b = ComplexMatrix::Zero(n, static_cast<Index>(ports.inputs.size()));
  for (std::size_t c = 0; c < ports.inputs.size(); ++c)
    b(ports.inputs[c].dof, static_cast<Index>(c)) = ports.inputs[c].scale;
  const ComplexMatrix q = dyn.fullPivLu().solve(b);
  ComplexMatrix g(static_cast<Index>(ports.outputs.size()), b.cols());
  for (std::size_t r = 0; r < ports.outputs.size(); ++r) {
    const auto& o = ports.outputs[r];
    const Complex factor = o.kind == OutputKind::velocity ? iw * o.scale : Complex(o.scale);
    g.row(static_cast<Index>(r)) = factor * q.row(o.dof);
  }
  return g;
}

inline FrfSweep dense_sweep(const SecondOrderSystem& sys, const std::vector<double>& omega) {
  const Matrix m(sys.mass()), d(sys.damping()), k(sys.stiffness());
  std::vector<ComplexMatrix> data;
  for (double w : omega) data.push_back(dense_second_order(m, d, k, sys.ports(), w));
  return {omega, data, sys.ports().input_labels(), sys.ports().output_labels()};
}

/// X with A X + X A^T + Q = 0 through (I (x) A + A (x) I) vec X = -vec Q.
inline Matrix kron_lyapunov(const Matrix& a, const Matrix& q) {
  const Index n = a.rows();
  Matrix big = Matrix::Zero(n * n, n * n);
  const Matrix id = Matrix::Identity(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      big.block(i * n, j * n, n, n) += id(i, j) * a;
      big.block(i * n, j * n, n, n) += a(i, j) * id;
    }
  const Vector x = big.fullPivLu().solve(-Eigen::Map<const Vector>(q.data(), n * n));
  return Eigen::Map<const Matrix>(x.data(), n, n);
}

/// Random stable E = I system with n states.
inline DescriptorStateSpace random_stable(Index n, Index m, Index p, const std::string& name = "g") {
  Matrix a = Matrix::NullaryExpr(n, n, [] { return uniform(-1.0, 1.0); });
  const double shift = a.eigenvalues().real().maxCoeff();
  a -= (shift + uniform(0.1, 1.0)) * Matrix::Identity(n, n);
  const Matrix b = Matrix::NullaryExpr(n, m, [] { return uniform(-1.0, 1.0); });
  const Matrix c = Matrix::NullaryExpr(p, n, [] { return uniform(-1.0, 1.0); });
  std::vector<std::string> in, out;
  for (Index i = 0; i < m; ++i) in.push_back("u" + std::to_string(i));
  for (Index i = 0; i < p; ++i) out.push_back("y" + std::to_string(i));
  SparseMatrix e(n, n);
  e.setIdentity();
  return {name, e, a.sparseView(), b.sparseView(), c.sparseView(), Matrix::Zero(p, m), in, out};
}

/// Dense FRF of an E = I state-space model: C (i w - A)^{-1} B + D.
inline ComplexMatrix dense_ss(const DescriptorStateSpace& ss, double w) {
  const Matrix a(ss.A()), b(ss.B()), c(ss.C()), e(ss.E());
  const ComplexMatrix pencil = Complex(0.0, w) * e.cast<Complex>() - a.cast<Complex>();
  return c.cast<Complex>() * pencil.fullPivLu().solve(b.cast<Complex>()) + ss.D().cast<Complex>();
}

/// A set of spring-coupled chains and the equivalent monolithic system.
struct CoupledChains {
  std::vector<SecondOrderSystem> chains;
  std::vector<InterfaceSpec> interfaces;
  ExternalPorts external;
  // Monolithic data (global dof numbering: chains concatenated).
  Matrix m, d, k;
  PortSet ports;
};

/// 2-3 random chains (<= 40 dofs in total); consecutive chains are joined by
/// 1-3 springs between io ports. External force on the first chain, response
/// on the last one.
inline CoupledChains random_coupled_chains() {
  CoupledChains out;
  const Index n_chains = uniform_int(2, 3);
  std::vector<Index> offset;
  Index total = 0;
  for (Index c = 0; c < n_chains; ++c) {
    ChainSpec spec;
    spec.name = "c" + std::to_string(c);
    spec.n = uniform_int(2, 40 / n_chains);
    spec.mass = uniform(0.5, 2.0);
    spec.stiffness = uniform(50.0, 500.0);
    spec.damping = uniform(0.05, 0.5);
    spec.boundary = c == 0 ? ChainBoundary::fixed_free : static_cast<ChainBoundary>(uniform_int(0, 2));
    for (Index dof = 0; dof < spec.n; ++dof) spec.io_dofs.push_back(dof);
    out.chains.push_back(make_chain(spec));
    offset.push_back(total);
    total += spec.n;
  }
  out.m = Matrix::Zero(total, total);
  out.d = Matrix::Zero(total, total);
  out.k = Matrix::Zero(total, total);
  for (Index c = 0; c < n_chains; ++c) {
    const auto& s = out.chains[static_cast<std::size_t>(c)];
    const Index o = offset[static_cast<std::size_t>(c)], n = s.n_dof();
    out.m.block(o, o, n, n) = Matrix(s.mass());
    out.d.block(o, o, n, n) = Matrix(s.damping());
    out.k.block(o, o, n, n) = Matrix(s.stiffness());
  }
  auto side = [](const SecondOrderSystem& s) {
    InterfaceSide side;
    side.subsystem = s.name();
    for (Index dof = 0; dof < s.n_dof(); ++dof)
      side.points.push_back({"q" + std::to_string(dof), static_cast<double>(dof)});
    return side;
  };
  for (Index c = 0; c + 1 < n_chains; ++c) {
    const auto& sj = out.chains[static_cast<std::size_t>(c)];
    const auto& sl = out.chains[static_cast<std::size_t>(c + 1)];
    InterfaceSpec iface;
    iface.id = "i" + std::to_string(c);
    iface.side_j = side(sj);
    iface.side_ell = side(sl);
    const Index n_springs = uniform_int(1, 3);
    for (Index s = 0; s < n_springs; ++s) {
      const Index a = uniform_int(0, sj.n_dof() - 1), b = uniform_int(0, sl.n_dof() - 1);
      const double ks = uniform(20.0, 400.0);
      iface.springs.push_back({ks, static_cast<double>(a), static_cast<double>(b)});
      const Index ga = offset[static_cast<std::size_t>(c)] + a, gb = offset[static_cast<std::size_t>(c + 1)] + b;
      out.k(ga, ga) += ks;
      out.k(gb, gb) += ks;
      out.k(ga, gb) -= ks;
      out.k(gb, ga) -= ks;
    }
    out.interfaces.push_back(iface);
  }
  const auto& first = out.chains.front();
  const auto& last = out.chains.back();
  const Index in_dof = uniform_int(0, first.n_dof() - 1), out_dof = uniform_int(0, last.n_dof() - 1);
  out.external.inputs.push_back({first.name(), "q" + std::to_string(in_dof), "F"});
  out.external.outputs.push_back({last.name(), "q" + std::to_string(out_dof), "z"});
  out.ports.add_input("F", in_dof);
  out.ports.add_output("z", offset.back() + out_dof);
  return out;
}

/// Position-dependent and static (node-resolution) assemblies of a bench.
struct BenchAssembly {
  TwoStageBench bench;
  BlockSystem block, static_block;
  InterconnectionMatrix outer, static_outer;

  explicit BenchAssembly(const StageModelConfig& cfg) : bench(make_two_stage_bench(cfg)) {
    std::vector<DescriptorStateSpace> pd, st;
    for (const auto& s : bench.subsystems) pd.push_back(to_descriptor(s));
    for (const auto& s : bench.static_subsystems) st.push_back(to_descriptor(s));
    block = block_collect(pd);
    static_block = block_collect(st);
    outer = outer_interconnection(block.layout, bench.external);
    static_outer = outer_interconnection(static_block.layout, bench.external);
  }

  BlockFrf frf(const std::vector<double>& omega) const { return block_frf(block, omega); }
  BlockFrf static_frf(const std::vector<double>& omega) const { return block_frf(static_block, omega); }

  FrfSweep posdep(const BlockFrf& gb, const OperatingPoint& op) const {
    return lft_assemble(gb.block_sweep(), outer.with_k11(posdep_k11(bench.interfaces, op, block.layout)));
  }
  FrfSweep exact(const BlockFrf& gb, const OperatingPoint& op) const {
    return lft_assemble(gb.block_sweep(),
                        static_outer.with_k11(static_k11(bench.static_interfaces, op, static_block.layout)));
  }
};

/// max_w |G(w) - R(w)| / |R(w)| for SISO sweeps.
inline double siso_rel(const FrfSweep& g, const FrfSweep& ref) {
  double worst = 0.0;
  for (std::size_t k = 0; k < ref.size(); ++k)
    worst = std::max(worst, std::abs(g.at(k)(0, 0) - ref.at(k)(0, 0)) / std::abs(ref.at(k)(0, 0)));
  return worst;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& stem) {
    path = std::filesystem::temp_directory_path() /
           (stem + "-" + std::to_string(std::random_device{}()) + "-" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace testing
