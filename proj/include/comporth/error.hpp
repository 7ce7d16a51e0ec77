#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace comporth {

// Bad user-supplied configuration (empty alphabet, invalid grid, ...).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A factor assignment that cannot be rasterized on the given canvas.
struct RenderBoundsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shape mismatch between operands.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// NaN/Inf or other numerical breakdown; message carries diagnostics.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File format / filesystem problems.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string shape_string(const std::vector<long>& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

}  // namespace comporth
