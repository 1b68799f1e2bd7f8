#pragma once

#include <stdexcept>
#include <string>

namespace wsampler {

enum class Errc {
  invalid_argument,
  dimension_mismatch,
  not_spd,
  grid_too_narrow,
  non_finite,
  non_convergence,
  indefinite_hessian,
  disconnection,
  starvation,
  unreachable_target,
  schema_mismatch,
  unsupported,
  io,
  config,
};

const char* errc_name(Errc code) noexcept;

/// Library-wide exception. `code()` lets callers map failures to exit codes
/// without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, Errc code, const char* what) {
  if (!cond) fail(code, what);
}

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace wsampler
