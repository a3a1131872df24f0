#pragma once

#include <stdexcept>
#include <string>

namespace rvd {

// Shape disagreement between operands; message names the op and both shapes.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// A primitive produced NaN/Inf from finite inputs, or a loss went non-finite.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

enum class IoErrorCode {
  kOpenFailed,
  kTruncated,
  kBadMagic,
  kBadVersion,
  kDimOverflow,
  kBadRecord,
};

class IoError : public std::runtime_error {
 public:
  IoError(IoErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  IoErrorCode code() const { return code_; }

 private:
  IoErrorCode code_;
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace rvd
