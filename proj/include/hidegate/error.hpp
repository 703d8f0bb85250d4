#pragma once

#include <stdexcept>
#include <string>

namespace hidegate {

enum class ErrorKind {
  parse,
  asset_consistency,
  empty_input,
  invalid_id,
  degenerate_embedding,
  index_out_of_range,
  config,
  init,
  mode,
  insufficient_samples,
  template_error,
  sampling,
  format,
  dimension_mismatch,
  duplicate_id,
  zero_vector,
  unknown_id,
  transport,
  undefined_query,
  mismatched_queries,
  degenerate_data,
  insufficient_topics,
  io,
  invariant,
};

const char* to_string(ErrorKind kind) noexcept;

// Single exception type for the toolkit; callers dispatch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace hidegate
