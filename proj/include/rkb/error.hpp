#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rkb {

enum class ErrorCode {
  missing_key,
  dimension_mismatch,
  not_positive_definite,
  invalid_value,
  bound_violation,
  grid_mismatch,
  domain_violation,
  not_adapted,
  not_proper,
  too_many_blocks,
  unknown_subcommand,
  io,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library; the code tells callers (and the CLI
// exit-code mapping) which contract was broken.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace rkb
