#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dlp/http_envelope.hpp"
#include "dlp/text.hpp"

// Turns an HttpEnvelope into the normalized text segments the detectors
// consume. Every body byte lands in exactly one segment, opaque entry, or
// framing range; the unit tests check that partition on generated bodies.

namespace dlp {

enum class SegmentSource {
  body,
  form_field,
  multipart_part,
  json_string,
  url_query,
  header_subject,
};

inline const char* segment_source_name(SegmentSource s) {
  switch (s) {
    case SegmentSource::body: return "body";
    case SegmentSource::form_field: return "form-field";
    case SegmentSource::multipart_part: return "multipart-part";
    case SegmentSource::json_string: return "json-string";
    case SegmentSource::url_query: return "url-query";
    case SegmentSource::header_subject: return "header-subject";
  }
  return "?";
}

struct ByteRange {
  size_t begin = 0;
  size_t end = 0;  // exclusive

  friend bool operator==(const ByteRange&, const ByteRange&) = default;
};

struct Segment {
  SegmentSource source = SegmentSource::body;
  std::string name;   // field / part / key name; may be empty
  std::string text;   // normalized
  bool from_body = true;
  ByteRange range{};  // meaningful only when from_body
};

struct OpaquePart {
  SegmentSource source = SegmentSource::body;
  std::string name;
  std::string bytes;
  ByteRange range{};
};

struct ExtractedContent {
  std::vector<Segment> segments;
  std::vector<OpaquePart> raw_opaque;
  std::vector<ByteRange> framing;  // structural body bytes
  bool structural_error = false;   // malformed multipart framing
};

namespace detail {

inline void add_segment(ExtractedContent& out, SegmentSource src,
                        std::string name, std::string_view raw,
                        ByteRange range, bool from_body = true) {
  Segment seg;
  seg.source = src;
  seg.name = std::move(name);
  seg.text = normalize_text(raw);
  seg.from_body = from_body;
  seg.range = range;
  out.segments.push_back(std::move(seg));
}

inline void extract_form_urlencoded(ExtractedContent& out,
                                    std::string_view body, size_t base) {
  size_t pos = 0;
  while (pos <= body.size()) {
    size_t amp = body.find('&', pos);
    size_t end = amp == std::string_view::npos ? body.size() : amp;
    std::string_view token = body.substr(pos, end - pos);
    if (!token.empty()) {
      size_t eq = token.find('=');
      std::string name, value;
      if (eq == std::string_view::npos) {
        name = percent_decode(token);
      } else {
        name = percent_decode(token.substr(0, eq));
        value = percent_decode(token.substr(eq + 1));
      }
      add_segment(out, SegmentSource::form_field, std::move(name), value,
                  {base + pos, base + end});
    } else if (end > pos) {
      out.framing.push_back({base + pos, base + end});
    }
    if (amp == std::string_view::npos) break;
    out.framing.push_back({base + amp, base + amp + 1});
    pos = amp + 1;
  }
}

// --- JSON string extraction with byte offsets ------------------------------
//
// A small recursive-descent scanner of its own: the detectors need the byte
// span of every string value, which a DOM parse does not provide. Structured
// file formats elsewhere in the project use nlohmann/json; this walker only
// serves extraction.
class JsonScanner {
public:
  JsonScanner(std::string_view text, ExtractedContent& out, size_t base)
      : t_(text), out_(out), base_(base) {}

  bool run() {
    skip_ws();
    if (!value(std::string())) return false;
    skip_ws();
    return pos_ == t_.size();
  }

private:
  bool value(const std::string& key) {
    if (pos_ >= t_.size()) return false;
    char c = t_[pos_];
    switch (c) {
      case '{': return object();
      case '[': return array(key);
      case '"': {
        size_t tok_begin = pos_;
        std::string decoded;
        if (!string_token(&decoded)) return false;
        add_segment(out_, SegmentSource::json_string, key, decoded,
                    {base_ + tok_begin, base_ + pos_});
        return true;
      }
      case 't': return literal("true");
      case 'f': return literal("false");
      case 'n': return literal("null");
      default: return number();
    }
  }

  bool object() {
    ++pos_;  // '{'
    skip_ws();
    if (peek() == '}') {
      ++pos_;
      return true;
    }
    while (true) {
      skip_ws();
      std::string key;
      if (peek() != '"' || !string_token(&key)) return false;
      skip_ws();
      if (peek() != ':') return false;
      ++pos_;
      skip_ws();
      if (!value(key)) return false;
      skip_ws();
      if (peek() == ',') {
        ++pos_;
        continue;
      }
      if (peek() == '}') {
        ++pos_;
        return true;
      }
      return false;
    }
  }

  bool array(const std::string& key) {
    ++pos_;  // '['
    skip_ws();
    if (peek() == ']') {
      ++pos_;
      return true;
    }
    while (true) {
      skip_ws();
      if (!value(key)) return false;
      skip_ws();
      if (peek() == ',') {
        ++pos_;
        continue;
      }
      if (peek() == ']') {
        ++pos_;
        return true;
      }
      return false;
    }
  }

  bool string_token(std::string* decoded) {
    ++pos_;  // opening quote
    while (pos_ < t_.size()) {
      char c = t_[pos_];
      if (c == '"') {
        ++pos_;
        return true;
      }
      if (c == '\\') {
        if (pos_ + 1 >= t_.size()) return false;
        char e = t_[pos_ + 1];
        pos_ += 2;
        switch (e) {
          case '"': decoded->push_back('"'); break;
          case '\\': decoded->push_back('\\'); break;
          case '/': decoded->push_back('/'); break;
          case 'b': decoded->push_back('\b'); break;
          case 'f': decoded->push_back('\f'); break;
          case 'n': decoded->push_back('\n'); break;
          case 'r': decoded->push_back('\r'); break;
          case 't': decoded->push_back('\t'); break;
          case 'u': {
            uint32_t cp = 0;
            if (!hex4(&cp)) return false;
            if (cp >= 0xD800 && cp <= 0xDBFF) {
              // surrogate pair
              if (pos_ + 1 >= t_.size() || t_[pos_] != '\\' ||
                  t_[pos_ + 1] != 'u')
                return false;
              pos_ += 2;
              uint32_t lo = 0;
              if (!hex4(&lo) || lo < 0xDC00 || lo > 0xDFFF) return false;
              cp = 0x10000 + ((cp - 0xD800) << 10) + (lo - 0xDC00);
            } else if (cp >= 0xDC00 && cp <= 0xDFFF) {
              return false;
            }
            append_utf8(decoded, cp);
            break;
          }
          default: return false;
        }
        continue;
      }
      decoded->push_back(c);
      ++pos_;
    }
    return false;  // unterminated
  }

  bool hex4(uint32_t* out) {
    if (pos_ + 4 > t_.size()) return false;
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      int h = hex_value(t_[pos_ + static_cast<size_t>(i)]);
      if (h < 0) return false;
      v = (v << 4) | static_cast<uint32_t>(h);
    }
    pos_ += 4;
    *out = v;
    return true;
  }

  static void append_utf8(std::string* s, uint32_t cp) {
    if (cp < 0x80) {
      s->push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      s->push_back(static_cast<char>(0xC0 | (cp >> 6)));
      s->push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
      s->push_back(static_cast<char>(0xE0 | (cp >> 12)));
      s->push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      s->push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
      s->push_back(static_cast<char>(0xF0 | (cp >> 18)));
      s->push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
      s->push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      s->push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
  }

  bool literal(std::string_view word) {
    if (t_.substr(pos_, word.size()) != word) return false;
    pos_ += word.size();
    return true;
  }

  bool number() {
    size_t start = pos_;
    if (peek() == '-') ++pos_;
    while (pos_ < t_.size() &&
           (std::string_view("0123456789+-.eE").find(t_[pos_]) !=
            std::string_view::npos))
      ++pos_;
    return pos_ > start;
  }

  char peek() const { return pos_ < t_.size() ? t_[pos_] : '\0'; }
  void skip_ws() {
    while (pos_ < t_.size() && is_ascii_space(t_[pos_])) ++pos_;
  }

  std::string_view t_;
  ExtractedContent& out_;
  size_t base_;
  size_t pos_ = 0;
};

inline bool extract_json(ExtractedContent& out, std::string_view body,
                         size_t base) {
  ExtractedContent scratch;
  JsonScanner scanner(body, scratch, base);
  if (!scanner.run()) return false;
  // Framing = complement of the string-value token ranges.
  size_t cursor = base;
  for (const auto& seg : scratch.segments) {
    if (seg.range.begin > cursor) out.framing.push_back({cursor, seg.range.begin});
    cursor = seg.range.end;
  }
  if (cursor < base + body.size())
    out.framing.push_back({cursor, base + body.size()});
  for (auto& seg : scratch.segments) out.segments.push_back(std::move(seg));
  return true;
}

struct MultipartPart {
  HeaderMap headers;
  size_t content_begin = 0;
  size_t content_end = 0;
};

// RFC 2046 framing: parts delimited by CRLF "--" boundary, closed by
// "--" boundary "--". Returns nullopt on any framing violation.
inline std::optional<std::vector<MultipartPart>> split_multipart(
    std::string_view body, std::string_view boundary,
    std::vector<ByteRange>* framing) {
  if (boundary.empty()) return std::nullopt;
  std::string delim = "--" + std::string(boundary);
  std::vector<MultipartPart> parts;

  // First delimiter: at offset 0 or after a preamble terminated by CRLF.
  size_t first = 0;
  if (body.substr(0, delim.size()) != delim) {
    std::string with_crlf = "\r\n" + delim;
    size_t at = body.find(with_crlf);
    if (at == std::string_view::npos) return std::nullopt;
    first = at + 2;
  }
  if (first > 0) framing->push_back({0, first});

  size_t pos = first;
  while (true) {
    if (body.substr(pos, delim.size()) != delim) return std::nullopt;
    size_t line_start = pos;
    pos += delim.size();
    if (body.substr(pos, 2) == "--") {
      // close-delimiter; trailing transport padding and epilogue are framing
      framing->push_back({line_start, body.size()});
      return parts;
    }
    if (body.substr(pos, 2) != "\r\n") return std::nullopt;
    pos += 2;

    MultipartPart part;
    size_t hdr_end = body.find("\r\n\r\n", pos);
    if (hdr_end == std::string_view::npos) return std::nullopt;
    std::string_view hdr_block = body.substr(pos, hdr_end - pos);
    size_t hpos = 0;
    while (hpos < hdr_block.size()) {
      size_t eol = hdr_block.find("\r\n", hpos);
      std::string_view hline = hdr_block.substr(
          hpos, eol == std::string_view::npos ? std::string_view::npos
                                              : eol - hpos);
      hpos = eol == std::string_view::npos ? hdr_block.size() : eol + 2;
      size_t colon = hline.find(':');
      if (colon == std::string_view::npos || colon == 0) return std::nullopt;
      part.headers.add(std::string(trim(hline.substr(0, colon))),
                       std::string(trim(hline.substr(colon + 1))));
    }
    part.content_begin = hdr_end + 4;
    std::string next_delim = "\r\n" + delim;
    size_t content_end = body.find(next_delim, part.content_begin);
    if (content_end == std::string_view::npos) return std::nullopt;
    part.content_end = content_end;
    framing->push_back({line_start, part.content_begin});
    framing->push_back({content_end, content_end + 2});  // delimiter CRLF
    parts.push_back(std::move(part));
    pos = content_end + 2;
  }
}

inline bool is_textual_media(const MediaType& mt) {
  if (mt.type == "text") return true;
  if (mt.type == "application" &&
      (mt.subtype == "json" || mt.subtype.ends_with("+json") ||
       mt.subtype == "x-www-form-urlencoded" || mt.subtype == "xml" ||
       mt.subtype.ends_with("+xml") || mt.subtype == "javascript"))
    return true;
  return false;
}

inline void extract_body(ExtractedContent& out, std::string_view body,
                         const MediaType& mt, size_t base, bool allow_multipart);

inline void extract_multipart(ExtractedContent& out, std::string_view body,
                              const MediaType& mt, size_t base) {
  auto it = mt.params.find("boundary");
  std::vector<ByteRange> framing;
  auto parts = it == mt.params.end()
                   ? std::nullopt
                   : split_multipart(body, it->second, &framing);
  if (!parts) {
    // Demote the whole body; the gateway treats this as a structural fault.
    out.structural_error = true;
    out.raw_opaque.push_back({SegmentSource::multipart_part, "", std::string(body),
                              {base, base + body.size()}});
    return;
  }
  for (auto& r : framing) out.framing.push_back({base + r.begin, base + r.end});
  for (const auto& part : *parts) {
    std::string name;
    if (const std::string* cd = part.headers.get("Content-Disposition")) {
      MediaType disp = parse_media_type(*cd);
      auto nit = disp.params.find("name");
      auto fit = disp.params.find("filename");
      if (nit != disp.params.end()) name = nit->second;
      else if (fit != disp.params.end()) name = fit->second;
    }
    MediaType part_type;  // multipart parts default to text/plain
    part_type.type = "text";
    part_type.subtype = "plain";
    if (const std::string* ct = part.headers.get("Content-Type"))
      part_type = parse_media_type(*ct);
    std::string_view content =
        body.substr(part.content_begin, part.content_end - part.content_begin);
    ByteRange content_range{base + part.content_begin, base + part.content_end};
    // Nested multipart is kept opaque: one level of part recursion only.
    if (part_type.type == "multipart" || !is_textual_media(part_type)) {
      out.raw_opaque.push_back({SegmentSource::multipart_part, name,
                                std::string(content), content_range});
      continue;
    }
    if (part_type.is("application", "json") ||
        part_type.subtype.ends_with("+json") ||
        part_type.is("application", "x-www-form-urlencoded")) {
      extract_body(out, content, part_type, base + part.content_begin,
                   /*allow_multipart=*/false);
      continue;
    }
    add_segment(out, SegmentSource::multipart_part, name, content,
                content_range);
  }
}

inline void extract_body(ExtractedContent& out, std::string_view body,
                         const MediaType& mt, size_t base,
                         bool allow_multipart) {
  if (body.empty()) return;
  if (mt.type == "text" || mt.is("application", "javascript") ||
      mt.is("application", "xml") || mt.subtype.ends_with("+xml")) {
    add_segment(out, SegmentSource::body, "", body, {base, base + body.size()});
    return;
  }
  if (mt.is("application", "x-www-form-urlencoded")) {
    extract_form_urlencoded(out, body, base);
    return;
  }
  if (mt.is("application", "json") || mt.subtype.ends_with("+json")) {
    if (!extract_json(out, body, base)) {
      // Not actually JSON; inspect it as plain text rather than letting a
      // mislabeled payload skip detection.
      out.segments.clear();
      out.framing.clear();
      add_segment(out, SegmentSource::body, "", body,
                  {base, base + body.size()});
    }
    return;
  }
  if (mt.type == "multipart" && allow_multipart) {
    extract_multipart(out, body, mt, base);
    return;
  }
  out.raw_opaque.push_back(
      {SegmentSource::body, "", std::string(body), {base, base + body.size()}});
}

}  // namespace detail

inline ExtractedContent extract_text(const HttpEnvelope& env) {
  ExtractedContent out;

  // URL query parameters of the request target.
  if (env.kind == HttpEnvelope::Kind::request) {
    size_t q = env.target.find('?');
    if (q != std::string::npos) {
      std::string_view query = std::string_view(env.target).substr(q + 1);
      size_t pos = 0;
      while (pos <= query.size() && !query.empty()) {
        size_t amp = query.find('&', pos);
        size_t end = amp == std::string_view::npos ? query.size() : amp;
        std::string_view token = query.substr(pos, end - pos);
        if (!token.empty()) {
          size_t eq = token.find('=');
          std::string name = eq == std::string_view::npos
                                 ? percent_decode(token)
                                 : percent_decode(token.substr(0, eq));
          std::string value = eq == std::string_view::npos
                                  ? std::string()
                                  : percent_decode(token.substr(eq + 1));
          Segment seg;
          seg.source = SegmentSource::url_query;
          seg.name = std::move(name);
          seg.text = normalize_text(value);
          seg.from_body = false;
          out.segments.push_back(std::move(seg));
        }
        if (amp == std::string_view::npos) break;
        pos = amp + 1;
      }
    }
  }

  // Message subject, when the carried protocol exposes one (webmail).
  if (const std::string* subject = env.headers.get("Subject")) {
    Segment seg;
    seg.source = SegmentSource::header_subject;
    seg.name = "subject";
    seg.text = normalize_text(*subject);
    seg.from_body = false;
    out.segments.push_back(std::move(seg));
  }

  if (env.body.empty()) return out;
  if (env.body_opaque) {
    out.raw_opaque.push_back(
        {SegmentSource::body, "", env.body, {0, env.body.size()}});
    return out;
  }
  detail::extract_body(out, env.body, env.content_type, 0,
                       /*allow_multipart=*/true);
  return out;
}

// Concatenation of all segment texts, used by the message-level classifier.
inline std::string joined_text(const ExtractedContent& content) {
  std::string all;
  for (const auto& seg : content.segments) {
    if (seg.text.empty()) continue;
    if (!all.empty()) all += ' ';
    all += seg.text;
  }
  return all;
}

}  // namespace dlp
