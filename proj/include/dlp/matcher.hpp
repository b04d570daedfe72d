#pragma once

#include <array>
#include <memory>
#include <queue>
#include <string>
#include <string_view>
#include <vector>

#include "dlp/detect.hpp"
#include "dlp/errors.hpp"
#include "dlp/extract.hpp"
#include "dlp/regex_lite.hpp"
#include "dlp/text.hpp"

// Keyword and regular-expression scanning. All literals are matched in one
// pass over each segment (Aho-Corasick with dense goto tables), so scan
// time is linear in text length plus matches; regexes are scanned
// per-pattern by the NFA engine.

namespace dlp {

class AhoCorasick {
public:
  void add(std::string_view pattern) { patterns_.emplace_back(pattern); }

  void build() {
    nodes_.clear();
    nodes_.emplace_back();  // root
    for (size_t p = 0; p < patterns_.size(); ++p) {
      size_t cur = 0;
      for (unsigned char c : patterns_[p]) {
        int nxt = nodes_[cur].next[c];
        if (nxt < 0) {
          nxt = static_cast<int>(nodes_.size());
          nodes_[cur].next[c] = nxt;
          nodes_.emplace_back();
        }
        cur = static_cast<size_t>(nxt);
      }
      nodes_[cur].outputs.push_back(static_cast<int>(p));
    }
    // BFS: fail links, then convert to a full DFA and union reachable
    // outputs through the fail chain.
    std::queue<int> q;
    for (int c = 0; c < 256; ++c) {
      int nxt = nodes_[0].next[c];
      if (nxt < 0) {
        nodes_[0].next[c] = 0;
      } else {
        nodes_[static_cast<size_t>(nxt)].fail = 0;
        q.push(nxt);
      }
    }
    while (!q.empty()) {
      int u = q.front();
      q.pop();
      const int fail = nodes_[static_cast<size_t>(u)].fail;
      for (int out : nodes_[static_cast<size_t>(fail)].outputs)
        nodes_[static_cast<size_t>(u)].outputs.push_back(out);
      for (int c = 0; c < 256; ++c) {
        int nxt = nodes_[static_cast<size_t>(u)].next[c];
        if (nxt < 0) {
          nodes_[static_cast<size_t>(u)].next[c] =
              nodes_[static_cast<size_t>(fail)].next[c];
        } else {
          nodes_[static_cast<size_t>(nxt)].fail =
              nodes_[static_cast<size_t>(fail)].next[c];
          q.push(nxt);
        }
      }
    }
  }

  // Reports every occurrence of every pattern, overlaps included.
  // emit(pattern_index, end_offset) — start = end - pattern length.
  template <typename Emit>
  void scan(std::string_view text, Emit&& emit) const {
    if (nodes_.empty()) return;
    size_t state = 0;
    for (size_t i = 0; i < text.size(); ++i) {
      unsigned char c = static_cast<unsigned char>(text[i]);
      state = static_cast<size_t>(nodes_[state].next[c]);
      for (int p : nodes_[state].outputs) emit(static_cast<size_t>(p), i + 1);
    }
  }

  const std::vector<std::string>& patterns() const { return patterns_; }

private:
  struct Node {
    Node() { next.fill(-1); }
    std::array<int, 256> next;
    int fail = 0;
    std::vector<int> outputs;
  };

  std::vector<std::string> patterns_;
  std::vector<Node> nodes_;
};

struct PatternSpec {
  std::string rule_id;
  std::string pattern;
};

class CompiledMatcher {
public:
  struct Literal {
    std::string rule_id;
    std::string normalized;
  };
  struct Regex {
    std::string rule_id;
    std::string source;
    RegexLite re;
  };

  std::vector<Literal> literals;
  std::vector<Regex> regexes;
  AhoCorasick automaton;
};

// Validates and compiles one named ruleset. Literals are stored in
// normalized form since scanning happens over normalized text.
inline CompiledMatcher compile_ruleset(const std::vector<PatternSpec>& keywords,
                                       const std::vector<PatternSpec>& regexes) {
  CompiledMatcher m;
  for (const auto& kw : keywords) {
    std::string norm = normalize_text(kw.pattern);
    if (norm.empty())
      throw Error(Errc::bad_pattern,
                  "keyword normalizes to empty [" + kw.rule_id + "]");
    m.automaton.add(norm);
    m.literals.push_back({kw.rule_id, std::move(norm)});
  }
  m.automaton.build();
  for (const auto& rx : regexes) {
    CompiledMatcher::Regex cr;
    cr.rule_id = rx.rule_id;
    cr.source = rx.pattern;
    cr.re = RegexLite::compile(rx.pattern, rx.rule_id);
    m.regexes.push_back(std::move(cr));
  }
  return m;
}

// One simultaneous pass for all literals plus per-regex scans, per segment.
inline std::vector<Detection> scan_keywords(const CompiledMatcher& m,
                                            const ExtractedContent& content,
                                            const std::string& resource = {}) {
  std::vector<Detection> out;
  for (size_t si = 0; si < content.segments.size(); ++si) {
    const std::string& text = content.segments[si].text;
    if (text.empty()) continue;
    m.automaton.scan(text, [&](size_t pattern_idx, size_t end) {
      const auto& lit = m.literals[pattern_idx];
      Detection d;
      d.detector = DetectorKind::keyword;
      d.resource = resource;
      d.rule_id = lit.rule_id;
      d.span = {static_cast<int>(si), end - lit.normalized.size(), end};
      d.snippet = clip_snippet(
          std::string_view(text).substr(d.span.begin, end - d.span.begin));
      d.confidence = 1.0;
      out.push_back(std::move(d));
    });
    for (const auto& rx : m.regexes) {
      for (const auto& match : rx.re.find_all(text)) {
        Detection d;
        d.detector = DetectorKind::regex;
        d.resource = resource;
        d.rule_id = rx.rule_id;
        d.span = {static_cast<int>(si), match.begin, match.end};
        d.snippet = clip_snippet(
            std::string_view(text).substr(match.begin, match.end - match.begin));
        d.confidence = 1.0;
        out.push_back(std::move(d));
      }
    }
  }
  return out;
}

}  // namespace dlp
