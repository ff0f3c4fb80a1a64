#pragma once

#include "modlink/lti.hpp"

namespace modlink {

/// Solves A X + X A^T + Q = 0 for stable A (all eigenvalues in the open left
/// half plane) with the Bartels-Stewart method on a complex Schur form.
/// Throws NumericalError if A has eigenvalues with Re >= -tol * ||A||.
Matrix solve_continuous_lyapunov(const Matrix& a, const Matrix& q, double stability_tolerance = 1e-13);

/// P with A P + P A^T + B B^T = 0.
Matrix controllability_gramian(const Matrix& a, const Matrix& b);

/// Q with A^T Q + Q A + C^T C = 0.
Matrix observability_gramian(const Matrix& a, const Matrix& c);

/// Factor L with X = L L^T for a symmetric positive semidefinite X; negative
/// eigenvalues from roundoff are clipped to zero.
Matrix psd_factor(const Matrix& x);

}  // namespace modlink
