#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "modlink/lti.hpp"

namespace modlink {

/// Reads real/integer/pattern matrices in coordinate or array format with
/// general, symmetric or skew-symmetric storage. Symmetric storage is
/// expanded. Errors carry the source name and line number.
SparseMatrix read_matrix_market(const std::filesystem::path& path);
SparseMatrix parse_matrix_market(std::istream& in, const std::string& source = "<stream>");

/// Coordinate real general, or symmetric (lower triangle) when `symmetric`.
/// Values are printed with 17 significant digits, so a read-back is exact.
void write_matrix_market(const std::filesystem::path& path, const SparseMatrix& x, bool symmetric = false);

/// Array real general (column-major).
void write_matrix_market_dense(const std::filesystem::path& path, const Matrix& x);

}  // namespace modlink
