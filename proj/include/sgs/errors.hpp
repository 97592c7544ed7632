#pragma once
// Error taxonomy shared across the tool: UserError marks bad input
// (configs, data files, CLI usage) and maps to exit code 2; everything
// else that escapes is a runtime failure and maps to exit code 1.

#include <stdexcept>
#include <string>

namespace sgs {

struct UserError : std::runtime_error {
  explicit UserError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace sgs
