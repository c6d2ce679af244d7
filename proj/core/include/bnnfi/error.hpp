#pragma once

#include <stdexcept>
#include <string>

namespace bnnfi {

// Error categories surfaced to callers; tests match on these rather than on
// message text.
enum class Errc {
  invalid_argument,
  shape_mismatch,
  out_of_range,
  empty_input,
  bad_magic,
  truncated,
  count_mismatch,
  crc_mismatch,
  bad_version,
  bad_payload,
  io_failure,
  diverged,
  degenerate_channel,
};

class Error : public std::runtime_error {
public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& msg) { throw Error(code, msg); }

}  // namespace bnnfi
