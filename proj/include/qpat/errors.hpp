#pragma once

#include <stdexcept>
#include <string>

namespace qpat {

/// File or stream content does not match an expected on-disk layout.
class format_error : public std::runtime_error {
public:
  explicit format_error(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid or inconsistent pipeline configuration.
class config_error : public std::runtime_error {
public:
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

/// A linear solve failed (singular problem or non-convergence).
/// Carries the last relative residual when applicable.
class solver_error : public std::runtime_error {
public:
  solver_error(const std::string& what, double residual = -1.0)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

private:
  double residual_;
};

} // namespace qpat
