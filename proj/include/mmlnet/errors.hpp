#pragma once

#include <stdexcept>
#include <string>

namespace mmlnet {

/// Bad usage or bad configuration (CLI exit code 1).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid input data: manifests, masks, images, rates (CLI exit code 2).
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Broken internal invariant; any other uncaught exception maps to the same
/// CLI exit code 3.
struct InternalError : std::runtime_error {
  explicit InternalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mmlnet
