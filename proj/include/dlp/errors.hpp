#pragma once

#include <stdexcept>
#include <string>

namespace dlp {

// Every recoverable failure in the library carries one of these codes so
// callers can branch without string matching.
enum class Errc {
  // icap
  malformed_start_line,
  unknown_method,
  bad_encapsulated,
  chunk_framing,
  message_too_large,
  unsupported_version,
  invariant_violation,
  // http envelope
  malformed_http_header,
  empty_input,
  // detectors
  bad_pattern,
  doc_too_short,
  tag_collision,
  missing_class,
  empty_corpus,
  // policy
  unknown_detector_ref,
  duplicate_rule_id,
  threshold_out_of_range,
  body_rewrite_failure,
  // stores / resources
  io_failure,
  permission_denied,
  bad_config,
  bad_keystore,
};

class Error : public std::runtime_error {
public:
  Error(Errc code, std::string message)
      : std::runtime_error(std::move(message)), code_(code) {}

  Errc code() const noexcept { return code_; }

private:
  Errc code_;
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::malformed_start_line: return "malformed_start_line";
    case Errc::unknown_method: return "unknown_method";
    case Errc::bad_encapsulated: return "bad_encapsulated";
    case Errc::chunk_framing: return "chunk_framing";
    case Errc::message_too_large: return "message_too_large";
    case Errc::unsupported_version: return "unsupported_version";
    case Errc::invariant_violation: return "invariant_violation";
    case Errc::malformed_http_header: return "malformed_http_header";
    case Errc::empty_input: return "empty_input";
    case Errc::bad_pattern: return "bad_pattern";
    case Errc::doc_too_short: return "doc_too_short";
    case Errc::tag_collision: return "tag_collision";
    case Errc::missing_class: return "missing_class";
    case Errc::empty_corpus: return "empty_corpus";
    case Errc::unknown_detector_ref: return "unknown_detector_ref";
    case Errc::duplicate_rule_id: return "duplicate_rule_id";
    case Errc::threshold_out_of_range: return "threshold_out_of_range";
    case Errc::body_rewrite_failure: return "body_rewrite_failure";
    case Errc::io_failure: return "io_failure";
    case Errc::permission_denied: return "permission_denied";
    case Errc::bad_config: return "bad_config";
    case Errc::bad_keystore: return "bad_keystore";
  }
  return "unknown";
}

}  // namespace dlp
