#pragma once

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "dlp/errors.hpp"
#include "dlp/icap.hpp"
#include "dlp/text.hpp"

// Parsed view of the HTTP transaction carried inside an ICAP message, plus
// the entropy/magic triage that decides whether a body is worth decrypting.

namespace dlp {

struct MediaType {
  std::string type = "application";  // lowercased
  std::string subtype = "octet-stream";
  std::map<std::string, std::string> params;  // lowercased names

  std::string full() const { return type + "/" + subtype; }
  bool is(std::string_view t, std::string_view st) const {
    return type == t && subtype == st;
  }

  friend bool operator==(const MediaType&, const MediaType&) = default;
};

inline MediaType parse_media_type(std::string_view value) {
  MediaType mt;
  size_t semi = value.find(';');
  std::string_view base = trim(value.substr(0, semi));
  size_t slash = base.find('/');
  if (slash != std::string_view::npos && slash > 0) {
    mt.type = to_lower_ascii(base.substr(0, slash));
    mt.subtype = to_lower_ascii(trim(base.substr(slash + 1)));
  } else if (!base.empty()) {
    mt.type = to_lower_ascii(base);
    mt.subtype.clear();
  }
  while (semi != std::string_view::npos) {
    size_t start = semi + 1;
    semi = value.find(';', start);
    std::string_view param = trim(value.substr(
        start, semi == std::string_view::npos ? std::string_view::npos
                                              : semi - start));
    size_t eq = param.find('=');
    if (eq == std::string_view::npos) continue;
    std::string name = to_lower_ascii(trim(param.substr(0, eq)));
    std::string_view v = trim(param.substr(eq + 1));
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"')
      v = v.substr(1, v.size() - 2);
    mt.params[name] = std::string(v);
  }
  return mt;
}

struct HttpEnvelope {
  enum class Kind { request, response };

  Kind kind = Kind::request;
  std::string method;      // requests
  int status = 0;          // responses
  std::string reason;      // responses
  std::string target;      // request-target (responses: taken from context)
  std::string version = "HTTP/1.1";
  HeaderMap headers;
  std::string body;        // after Content-Encoding removal when possible
  MediaType content_type;
  std::optional<std::string> content_encoding;
  bool body_opaque = false;  // encoding could not be undone; body left raw
};

namespace detail {

// gzip/zlib inflate with an expansion cap. Returns nullopt when the stream
// is not decodable or would expand beyond `max_ratio`.
inline std::optional<std::string> gunzip(std::string_view in,
                                         size_t max_ratio = 100) {
  if (in.empty()) return std::string();
  z_stream zs{};
  // 15 window bits | 32 => auto-detect gzip or zlib headers.
  if (inflateInit2(&zs, 15 + 32) != Z_OK) return std::nullopt;
  std::string out;
  const size_t cap = in.size() * max_ratio + 1024;
  char buf[16384];
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  int rc = Z_OK;
  do {
    zs.next_out = reinterpret_cast<Bytef*>(buf);
    zs.avail_out = sizeof buf;
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      return std::nullopt;
    }
    out.append(buf, sizeof buf - zs.avail_out);
    if (out.size() > cap) {
      inflateEnd(&zs);
      return std::nullopt;  // decompression bomb; caller keeps raw bytes
    }
  } while (rc != Z_STREAM_END && (zs.avail_in > 0 || zs.avail_out == 0));
  inflateEnd(&zs);
  if (rc != Z_STREAM_END) return std::nullopt;
  return out;
}

inline std::string gzip_compress(std::string_view in) {
  z_stream zs{};
  deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 15 + 16, 8,
               Z_DEFAULT_STRATEGY);
  std::string out;
  char buf[16384];
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  int rc;
  do {
    zs.next_out = reinterpret_cast<Bytef*>(buf);
    zs.avail_out = sizeof buf;
    rc = deflate(&zs, Z_FINISH);
    out.append(buf, sizeof buf - zs.avail_out);
  } while (rc != Z_STREAM_END);
  deflateEnd(&zs);
  return out;
}

}  // namespace detail

// `section_bytes` is an HTTP/1.1 header section, optionally followed by the
// already-dechunked body. Gzip-encoded bodies are decompressed before
// storage; failure to decompress leaves the body raw and flags it opaque.
inline HttpEnvelope parse_http_envelope(std::string_view section_bytes,
                                        HttpEnvelope::Kind kind) {
  HttpEnvelope env;
  env.kind = kind;

  size_t hdr_end = section_bytes.find("\r\n\r\n");
  size_t body_begin;
  std::string_view block;
  if (hdr_end == std::string_view::npos) {
    // A bare header section (as carried by ICAP) ends with a single CRLF
    // pair; tolerate a missing blank line when there is no body.
    block = section_bytes;
    body_begin = section_bytes.size();
  } else {
    block = section_bytes.substr(0, hdr_end + 2);
    body_begin = hdr_end + 4;
  }

  size_t line_end = block.find("\r\n");
  if (line_end == std::string_view::npos)
    throw Error(Errc::malformed_http_header, "missing HTTP start line");
  std::string_view start = block.substr(0, line_end);
  if (kind == HttpEnvelope::Kind::request) {
    size_t sp1 = start.find(' ');
    size_t sp2 = start.rfind(' ');
    if (sp1 == std::string_view::npos || sp2 == sp1)
      throw Error(Errc::malformed_http_header,
                  "bad request line: " + std::string(start));
    env.method = std::string(start.substr(0, sp1));
    env.target = std::string(trim(start.substr(sp1 + 1, sp2 - sp1 - 1)));
    env.version = std::string(start.substr(sp2 + 1));
    if (env.method.empty() || env.target.empty() ||
        !env.version.starts_with("HTTP/"))
      throw Error(Errc::malformed_http_header,
                  "bad request line: " + std::string(start));
  } else {
    size_t sp1 = start.find(' ');
    if (sp1 == std::string_view::npos || !start.starts_with("HTTP/"))
      throw Error(Errc::malformed_http_header,
                  "bad status line: " + std::string(start));
    env.version = std::string(start.substr(0, sp1));
    size_t sp2 = start.find(' ', sp1 + 1);
    std::string_view code = start.substr(
        sp1 + 1, sp2 == std::string_view::npos ? std::string_view::npos
                                               : sp2 - sp1 - 1);
    env.status = 0;
    for (char c : code) {
      if (c < '0' || c > '9')
        throw Error(Errc::malformed_http_header, "non-numeric status code");
      env.status = env.status * 10 + (c - '0');
    }
    env.reason = sp2 == std::string_view::npos
                     ? std::string()
                     : std::string(trim(start.substr(sp2 + 1)));
  }

  size_t pos = line_end + 2;
  while (pos < block.size()) {
    size_t eol = block.find("\r\n", pos);
    if (eol == std::string_view::npos) break;
    std::string_view hline = block.substr(pos, eol - pos);
    pos = eol + 2;
    if (hline.empty()) break;
    size_t colon = hline.find(':');
    if (colon == std::string_view::npos || colon == 0)
      throw Error(Errc::malformed_http_header,
                  "malformed header line: " + std::string(hline));
    env.headers.add(std::string(trim(hline.substr(0, colon))),
                    std::string(trim(hline.substr(colon + 1))));
  }

  if (const std::string* ct = env.headers.get("Content-Type"))
    env.content_type = parse_media_type(*ct);

  env.body = std::string(section_bytes.substr(body_begin));
  if (const std::string* ce = env.headers.get("Content-Encoding")) {
    std::string coding = to_lower_ascii(trim(*ce));
    env.content_encoding = coding;
    if (!env.body.empty()) {
      if (coding == "gzip" || coding == "x-gzip" || coding == "deflate") {
        if (auto plain = detail::gunzip(env.body))
          env.body = std::move(*plain);
        else
          env.body_opaque = true;
      } else if (coding != "identity") {
        env.body_opaque = true;
      }
    }
  }
  return env;
}

// ---------------------------------------------------------------------------
// Opacity triage

enum class OpacityClass { plaintext, compressed, encrypted_or_unknown };

struct OpacityVerdict {
  OpacityClass cls = OpacityClass::plaintext;
  double entropy_bits_per_byte = 0.0;
  std::optional<std::string> magic;
};

// H = -sum p(b) log2 p(b) over byte frequencies; in [0, 8].
inline double shannon_entropy(std::string_view data) {
  if (data.empty()) throw Error(Errc::empty_input, "entropy of empty input");
  size_t freq[256] = {};
  for (unsigned char b : data) ++freq[b];
  const double n = static_cast<double>(data.size());
  double h = 0.0;
  for (size_t i = 0; i < 256; ++i) {
    if (freq[i] == 0) continue;
    double p = static_cast<double>(freq[i]) / n;
    h -= p * std::log2(p);
  }
  if (h < 0.0) h = 0.0;
  if (h > 8.0) h = 8.0;
  return h;
}

inline std::optional<std::string> recognize_magic(std::string_view data) {
  auto b = [&](size_t i) { return static_cast<unsigned char>(data[i]); };
  if (data.size() >= 2 && b(0) == 0x1F && b(1) == 0x8B) return "gzip";
  if (data.size() >= 4 && b(0) == 'P' && b(1) == 'K' &&
      (b(2) == 0x03 || b(2) == 0x05 || b(2) == 0x07) &&
      (b(3) == 0x04 || b(3) == 0x06 || b(3) == 0x08))
    return "zip";
  if (data.size() >= 2 && b(0) == 0x78 &&
      (b(1) == 0x01 || b(1) == 0x5E || b(1) == 0x9C || b(1) == 0xDA))
    return "zlib";
  return std::nullopt;
}

struct OpacityConfig {
  double entropy_threshold = 7.5;
  size_t min_length = 256;
};

inline OpacityVerdict classify_opacity(std::string_view data,
                                       const OpacityConfig& cfg = {}) {
  if (data.empty()) throw Error(Errc::empty_input, "classify of empty input");
  OpacityVerdict v;
  v.entropy_bits_per_byte = shannon_entropy(data);
  if (auto magic = recognize_magic(data)) {
    v.cls = OpacityClass::compressed;
    v.magic = magic;
    return v;
  }
  if (v.entropy_bits_per_byte >= cfg.entropy_threshold &&
      data.size() >= cfg.min_length)
    v.cls = OpacityClass::encrypted_or_unknown;
  else
    v.cls = OpacityClass::plaintext;
  return v;
}

}  // namespace dlp
