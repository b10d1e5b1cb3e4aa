#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace apfl {

// Stable numeric values: they cross the C API and the ErrorReply wire payload.
enum class Errc : int {
  ok = 0,
  invalid_argument = 1,
  shape_mismatch = 2,
  length_mismatch = 3,
  name_too_long = 4,
  truncated = 5,
  bad_dtype_tag = 6,
  trailing_bytes = 7,
  empty_dataset = 8,
  infeasible_partition = 9,
  empty_update_list = 10,
  negative_staleness = 11,
  duplicate_update = 12,
  invalid_bounds = 13,
  unknown_client = 14,
  not_clipped = 15,
  non_finite_value = 16,
  corrupt_blob = 17,
  checksum_mismatch = 18,
  bad_magic = 19,
  unsupported_version = 20,
  oversized_payload = 21,
  unauthenticated = 22,
  unknown_connector = 23,
  missing_key = 24,
  unknown_type = 25,
  missing_leaf_update = 26,
  dim_mismatch = 27,
  parse_error = 28,
  unknown_key = 29,
  missing_required = 30,
  unknown_strategy_name = 31,
  config_error = 32,
  non_terminating = 33,
  connection_refused = 34,
  protocol_error = 35,
  io_error = 36,
  not_implemented = 37,
  internal = 99,
};

std::string_view errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) { throw Error(code, message); }

}  // namespace apfl
