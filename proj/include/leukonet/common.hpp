// Shared scalar type, error hierarchy and small formatting helpers.
#pragma once

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace leukonet {

#if defined(LEUKONET_SINGLE_PRECISION)
using Real = float;
#else
using Real = double;
#endif

using Shape = std::vector<std::int64_t>;

inline constexpr double kLn10 = 2.302585092994045684;

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Tensor dimensions disagree with an operation's contract.
class ShapeError : public Error {
public:
  using Error::Error;
};

// A precondition on values (not shapes) was violated.
class ContractError : public Error {
public:
  using Error::Error;
};

// Input values outside the documented domain.
class RangeError : public Error {
public:
  using Error::Error;
};

// Non-finite values or diverging computations.
class NumericError : public Error {
public:
  using Error::Error;
};

// Bad configuration: unknown options, mismatched checkpoints, unparsable files.
class ConfigError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

class SingularMatrixError : public Error {
public:
  using Error::Error;
};

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

// Fixed-decimal formatting; all persisted logs go through this so that
// identical runs produce identical bytes.
inline std::string fmt_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return std::string(buf);
}

// Debug-log hook for degenerate-but-legal situations (all-zero feature maps,
// empty threshold masks). Messages go to stderr when LEUKONET_DEBUG is set;
// the counter is always maintained.
namespace debuglog {
inline std::atomic<std::uint64_t>& count() {
  static std::atomic<std::uint64_t> c{0};
  return c;
}
inline void note(const char* msg) {
  count().fetch_add(1, std::memory_order_relaxed);
  static const bool enabled = std::getenv("LEUKONET_DEBUG") != nullptr;
  if (enabled) std::fprintf(stderr, "[leukonet-debug] %s\n", msg);
}
}  // namespace debuglog

// FNV-1a, used for config hashes and parameter-freeze audits.
inline std::uint64_t fnv1a64(const void* bytes, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(s.data(), s.size());
}

}  // namespace leukonet
