#pragma once

#include <string>

namespace dlp {

enum class DetectorKind {
  keyword,
  regex,
  fingerprint,
  tag,
  classifier,
  opacity,  // the built-in undecryptable-payload rule, not a text detector
};

inline const char* detector_kind_name(DetectorKind k) {
  switch (k) {
    case DetectorKind::keyword: return "keyword";
    case DetectorKind::regex: return "regex";
    case DetectorKind::fingerprint: return "fingerprint";
    case DetectorKind::tag: return "tag";
    case DetectorKind::classifier: return "classifier";
    case DetectorKind::opacity: return "opacity";
  }
  return "?";
}

// Span within one extracted segment's normalized text; segment < 0 means
// the detection applies to the whole message.
struct Span {
  int segment = -1;
  size_t begin = 0;
  size_t end = 0;

  friend bool operator==(const Span&, const Span&) = default;
};

inline constexpr size_t kSnippetLimit = 64;

struct Detection {
  DetectorKind detector = DetectorKind::keyword;
  std::string resource;  // ruleset / corpus / registry / model name
  std::string rule_id;   // pattern id, doc id, tag name, or "posterior"
  Span span;
  std::string snippet;   // at most kSnippetLimit chars of matched text
  double confidence = 1.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

inline std::string clip_snippet(std::string_view text) {
  if (text.size() <= kSnippetLimit) return std::string(text);
  return std::string(text.substr(0, kSnippetLimit));
}

}  // namespace dlp
