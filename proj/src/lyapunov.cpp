#include "modlink/lyapunov.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include "modlink/error.hpp"

namespace modlink {

Matrix solve_continuous_lyapunov(const Matrix& a, const Matrix& q, double stability_tolerance) {
  const Index n = a.rows();
  if (a.cols() != n || q.rows() != n || q.cols() != n)
    throw ValidationError(fmt::format("Lyapunov operands must be square and equal size (A {}x{}, Q {}x{})", a.rows(),
                                      a.cols(), q.rows(), q.cols()));
  if (n == 0) return Matrix(0, 0);

  Eigen::ComplexSchur<ComplexMatrix> schur(a.cast<Complex>());
  if (schur.info() != Eigen::Success) throw NumericalError("complex Schur decomposition failed");
  const ComplexMatrix& t = schur.matrixT();
  const ComplexMatrix& u = schur.matrixU();

  const double scale = std::max(a.cwiseAbs().maxCoeff(), 1e-300);
  for (Index k = 0; k < n; ++k) {
    if (!(t(k, k).real() < -stability_tolerance * scale))
      throw NumericalError(fmt::format("Lyapunov operator is not stable: eigenvalue {:.6g}{:+.6g}i", t(k, k).real(),
                                       t(k, k).imag()));
  }

  // T Y + Y T^H + Qt = 0, solved column by column from the last.
  const ComplexMatrix qt = u.adjoint() * q.cast<Complex>() * u;
  ComplexMatrix y = ComplexMatrix::Zero(n, n);
  ComplexMatrix shifted = t;
  for (Index j = n - 1; j >= 0; --j) {
    Eigen::VectorXcd rhs = -qt.col(j);
    for (Index k = j + 1; k < n; ++k) rhs -= std::conj(t(j, k)) * y.col(k);
    shifted.diagonal() = t.diagonal().array() + std::conj(t(j, j));
    y.col(j) = shifted.triangularView<Eigen::Upper>().solve(rhs);
  }
  Matrix x = (u * y * u.adjoint()).real();
  x = 0.5 * (x + x.transpose()).eval();
  if (!x.allFinite()) throw NumericalError("Lyapunov solution is not finite");
  return x;
}

Matrix controllability_gramian(const Matrix& a, const Matrix& b) {
  return solve_continuous_lyapunov(a, b * b.transpose());
}

Matrix observability_gramian(const Matrix& a, const Matrix& c) {
  return solve_continuous_lyapunov(a.transpose(), c.transpose() * c);
}

Matrix psd_factor(const Matrix& x) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(x);
  if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition of gramian failed");
  const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal();
}

}  // namespace modlink
