#pragma once

#include "cppruner/tensor.hpp"

#include <vector>

namespace cppruner {

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
/// Iterates until every off-diagonal magnitude falls below `tol` or
/// `max_sweeps` sweeps have run.
std::vector<double> symmetric_eigenvalues(Matrix a, double tol, int max_sweeps = 100);

/// Singular values, descending, from the Jacobi spectrum of the smaller Gram
/// matrix. Eigenvalues within round-off of zero (below n * eps * lambda_max)
/// are reported as exact zeros.
std::vector<double> singular_values(const Matrix& m);

/// sum_i sigma_i(m)^p for p in (0, 1].
double schatten_p(const Matrix& m, double p);

inline double nuclear_norm(const Matrix& m) { return schatten_p(m, 1.0); }

/// Number of singular values above rel_tol * sigma_1.
std::size_t numerical_rank(const Matrix& m, double rel_tol = 1e-8);

Matrix transpose(const Matrix& m);

} // namespace cppruner
