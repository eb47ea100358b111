#pragma once

#include <stdexcept>
#include <string>

namespace resflow {

// Error categories. The numeric values are mirrored by rf_status in resflow.h.
enum class Errc : int {
  invalid_argument = 1,
  io = 2,
  bad_magic = 3,
  truncated = 4,
  dim_mismatch = 5,
  numeric = 6,
  state = 7,
  unsupported_version = 8,
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace resflow
