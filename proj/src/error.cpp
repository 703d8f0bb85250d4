#include "hidegate/error.hpp"

namespace hidegate {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::parse: return "parse";
    case ErrorKind::asset_consistency: return "asset-consistency";
    case ErrorKind::empty_input: return "empty-input";
    case ErrorKind::invalid_id: return "invalid-id";
    case ErrorKind::degenerate_embedding: return "degenerate-embedding";
    case ErrorKind::index_out_of_range: return "index-out-of-range";
    case ErrorKind::config: return "config";
    case ErrorKind::init: return "init";
    case ErrorKind::mode: return "mode";
    case ErrorKind::insufficient_samples: return "insufficient-samples";
    case ErrorKind::template_error: return "template";
    case ErrorKind::sampling: return "sampling";
    case ErrorKind::format: return "format";
    case ErrorKind::dimension_mismatch: return "dimension-mismatch";
    case ErrorKind::duplicate_id: return "duplicate-id";
    case ErrorKind::zero_vector: return "zero-vector";
    case ErrorKind::unknown_id: return "unknown-id";
    case ErrorKind::transport: return "transport";
    case ErrorKind::undefined_query: return "undefined-query";
    case ErrorKind::mismatched_queries: return "mismatched-queries";
    case ErrorKind::degenerate_data: return "degenerate-data";
    case ErrorKind::insufficient_topics: return "insufficient-topics";
    case ErrorKind::io: return "io";
    case ErrorKind::invariant: return "invariant";
  }
  return "unknown";
}

}  // namespace hidegate
