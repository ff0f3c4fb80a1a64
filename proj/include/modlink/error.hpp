#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace modlink {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: dimensions, dangling references, out-of-range positions,
/// unparsable files. Carries every issue found, not only the first.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& message);
  ValidationError(const std::string& summary, std::vector<std::string> issues);

  const std::vector<std::string>& issues() const noexcept { return issues_; }

 private:
  std::vector<std::string> issues_;
};

/// Numerical breakdown: singular solves, failed eigen or Lyapunov solves,
/// unreachable accuracy targets.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A linear solve became singular at a specific angular frequency.
class SingularFrequencyError : public NumericalError {
 public:
  SingularFrequencyError(const std::string& message, double omega, double rcond);

  double omega() const noexcept { return omega_; }
  double rcond() const noexcept { return rcond_; }

 private:
  double omega_;
  double rcond_;
};

}  // namespace modlink
