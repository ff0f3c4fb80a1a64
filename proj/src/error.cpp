#include "modlink/error.hpp"

#include <fmt/format.h>

namespace modlink {

namespace {

std::string join_issues(const std::string& summary, const std::vector<std::string>& issues) {
  std::string out = summary;
  for (const auto& issue : issues) {
    out += "\n  - ";
    out += issue;
  }
  return out;
}

}  // namespace

ValidationError::ValidationError(const std::string& message) : Error(message), issues_{message} {}

ValidationError::ValidationError(const std::string& summary, std::vector<std::string> issues)
    : Error(join_issues(summary, issues)), issues_(std::move(issues)) {}

SingularFrequencyError::SingularFrequencyError(const std::string& message, double omega, double rcond)
    : NumericalError(fmt::format("{} (omega = {:.17g} rad/s, rcond = {:.3e})", message, omega, rcond)),
      omega_(omega),
      rcond_(rcond) {}

}  // namespace modlink
