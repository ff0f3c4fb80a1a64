#include "modlink/matrix_market.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <vector>

#include <fmt/format.h>
#include <fmt/os.h>

#include "modlink/error.hpp"

namespace modlink {

namespace {

std::string lowercase(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view text, T& value) {
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  const auto* end = text.data() + text.size();
  const auto result = std::from_chars(text.data(), end, value);
  return result.ec == std::errc() && result.ptr == end;
}

}  // namespace

SparseMatrix parse_matrix_market(std::istream& in, const std::string& source) {
  auto fail = [&](std::size_t line, const std::string& what) -> ValidationError {
    return ValidationError(fmt::format("{}:{}: {}", source, line, what));
  };

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw fail(1, "empty file");
  ++line_no;
  const auto banner = split_ws(line);
  if (banner.size() != 5 || lowercase(std::string(banner[0])) != "%%matrixmarket" ||
      lowercase(std::string(banner[1])) != "matrix")
    throw fail(line_no, "missing '%%MatrixMarket matrix <format> <field> <symmetry>' banner");
  const std::string format = lowercase(std::string(banner[2]));
  const std::string field = lowercase(std::string(banner[3]));
  const std::string symmetry = lowercase(std::string(banner[4]));
  if (format != "coordinate" && format != "array") throw fail(line_no, fmt::format("unsupported format '{}'", format));
  if (field != "real" && field != "integer" && field != "pattern" && field != "double")
    throw fail(line_no, fmt::format("unsupported field '{}' (real, integer or pattern expected)", field));
  if (field == "pattern" && format == "array") throw fail(line_no, "pattern field requires coordinate format");
  if (symmetry != "general" && symmetry != "symmetric" && symmetry != "skew-symmetric")
    throw fail(line_no, fmt::format("unsupported symmetry '{}'", symmetry));
  const bool symmetric = symmetry == "symmetric";
  const bool skew = symmetry == "skew-symmetric";

  auto next_data_line = [&](std::vector<std::string_view>& tokens) -> bool {
    while (std::getline(in, line)) {
      ++line_no;
      tokens = split_ws(line);
      if (tokens.empty() || tokens[0].front() == '%') continue;
      return true;
    }
    return false;
  };

  std::vector<std::string_view> tok;
  if (!next_data_line(tok)) throw fail(line_no, "missing size line");
  Index rows = 0, cols = 0, entries = 0;
  if (format == "coordinate") {
    if (tok.size() != 3 || !parse_number(tok[0], rows) || !parse_number(tok[1], cols) ||
        !parse_number(tok[2], entries))
      throw fail(line_no, "size line must be '<rows> <cols> <entries>'");
  } else {
    if (tok.size() != 2 || !parse_number(tok[0], rows) || !parse_number(tok[1], cols))
      throw fail(line_no, "size line must be '<rows> <cols>'");
  }
  if (rows < 0 || cols < 0 || entries < 0) throw fail(line_no, "negative dimension");
  if ((symmetric || skew) && rows != cols) throw fail(line_no, "symmetric storage requires a square matrix");

  std::vector<Eigen::Triplet<double>> triplets;
  auto push = [&](Index i, Index j, double v) {
    triplets.emplace_back(i, j, v);
    if (i != j) {
      if (symmetric) triplets.emplace_back(j, i, v);
      if (skew) triplets.emplace_back(j, i, -v);
    }
  };

  if (format == "coordinate") {
    triplets.reserve(static_cast<std::size_t>(entries) * (symmetric || skew ? 2 : 1));
    for (Index k = 0; k < entries; ++k) {
      if (!next_data_line(tok)) throw fail(line_no, fmt::format("expected {} entries, found {}", entries, k));
      const std::size_t want = field == "pattern" ? 2 : 3;
      Index i = 0, j = 0;
      double v = 1.0;
      if (tok.size() != want || !parse_number(tok[0], i) || !parse_number(tok[1], j) ||
          (want == 3 && !parse_number(tok[2], v)))
        throw fail(line_no, "malformed entry");
      if (i < 1 || i > rows || j < 1 || j > cols)
        throw fail(line_no, fmt::format("index ({}, {}) outside {}x{}", i, j, rows, cols));
      if ((symmetric || skew) && j > i) throw fail(line_no, "symmetric storage must list the lower triangle only");
      if (skew && i == j) throw fail(line_no, "skew-symmetric storage cannot have diagonal entries");
      push(i - 1, j - 1, v);
    }
  } else {
    // Column-major; symmetric storage lists the lower triangle only.
    for (Index j = 0; j < cols; ++j) {
      const Index first = symmetric ? j : (skew ? j + 1 : 0);
      for (Index i = first; i < rows; ++i) {
        if (!next_data_line(tok)) throw fail(line_no, "too few array values");
        double v = 0.0;
        if (tok.size() != 1 || !parse_number(tok[0], v)) throw fail(line_no, "malformed array value");
        if (v != 0.0) push(i, j, v);
      }
    }
  }
  if (next_data_line(tok)) throw fail(line_no, "unexpected trailing data");

  SparseMatrix out(rows, cols);
  out.setFromTriplets(triplets.begin(), triplets.end());
  out.makeCompressed();
  return out;
}

SparseMatrix read_matrix_market(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(fmt::format("cannot open matrix file '{}'", path.string()));
  return parse_matrix_market(in, path.string());
}

void write_matrix_market(const std::filesystem::path& path, const SparseMatrix& x, bool symmetric) {
  if (symmetric && x.rows() != x.cols()) throw ValidationError("symmetric output requires a square matrix");
  std::vector<Eigen::Triplet<double>> entries;
  for (Index k = 0; k < x.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(x, k); it; ++it)
      if (!symmetric || it.row() >= it.col()) entries.emplace_back(it.row(), it.col(), it.value());
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    return a.col() != b.col() ? a.col() < b.col() : a.row() < b.row();
  });
  auto out = fmt::output_file(path.string());
  out.print("%%MatrixMarket matrix coordinate real {}\n", symmetric ? "symmetric" : "general");
  out.print("{} {} {}\n", x.rows(), x.cols(), entries.size());
  for (const auto& e : entries) out.print("{} {} {:.17g}\n", e.row() + 1, e.col() + 1, e.value());
}

void write_matrix_market_dense(const std::filesystem::path& path, const Matrix& x) {
  auto out = fmt::output_file(path.string());
  out.print("%%MatrixMarket matrix array real general\n");
  out.print("{} {}\n", x.rows(), x.cols());
  for (Index j = 0; j < x.cols(); ++j)
    for (Index i = 0; i < x.rows(); ++i) out.print("{:.17g}\n", x(i, j));
}

}  // namespace modlink
