#pragma once

#include <stdexcept>
#include <string>

namespace tandem {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Dimension mismatch in a tensor kernel. Message carries both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid attention layout or mask construction.
class LayoutError : public Error {
 public:
  using Error::Error;
};

// KV snapshot store misuse: stale publish, cold read, shape drift.
class CacheError : public Error {
 public:
  using Error::Error;
};

// Bad run configuration: unknown key, unparsable value, digest mismatch.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed dataset / checkpoint / snapshot file.
class DataError : public Error {
 public:
  using Error::Error;
};

// A kernel produced NaN/Inf from finite inputs, or training diverged.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace tandem
