#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qad {

enum class ErrorKind {
  invalid_input,
  invalid_config,
  unsupported_kernel,
  usage,
  format,
  shape,
  undefined_metric,
  numeric,
  io,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Every failure raised by the toolkit carries one of the kinds above so the
/// CLI can map it onto an exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

}  // namespace qad
