#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dlp/errors.hpp"
#include "dlp/text.hpp"

// ICAP/1.0 wire handling: parsing, serialization, Encapsulated bookkeeping
// and chunked body framing (including the ieof preview extension). Values
// are plain structs; nothing here touches sockets.

namespace dlp {

enum class IcapMethod { options, reqmod, respmod };

inline const char* icap_method_name(IcapMethod m) {
  switch (m) {
    case IcapMethod::options: return "OPTIONS";
    case IcapMethod::reqmod: return "REQMOD";
    case IcapMethod::respmod: return "RESPMOD";
  }
  return "?";
}

// Ordered multimap. Names keep their original casing; lookups are
// case-insensitive.
class HeaderMap {
public:
  void add(std::string name, std::string value) {
    entries_.emplace_back(std::move(name), std::move(value));
  }

  const std::string* get(std::string_view name) const {
    for (const auto& [n, v] : entries_)
      if (iequals(n, name)) return &v;
    return nullptr;
  }

  void remove(std::string_view name) {
    std::erase_if(entries_, [&](const auto& e) { return iequals(e.first, name); });
  }

  void set(std::string name, std::string value) {
    for (auto& [n, v] : entries_) {
      if (iequals(n, name)) {
        v = std::move(value);
        return;
      }
    }
    add(std::move(name), std::move(value));
  }

  bool contains(std::string_view name) const { return get(name) != nullptr; }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  friend bool operator==(const HeaderMap&, const HeaderMap&) = default;

private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

enum class EncTag { req_hdr, res_hdr, req_body, res_body, null_body, opt_body };

inline const char* enc_tag_name(EncTag t) {
  switch (t) {
    case EncTag::req_hdr: return "req-hdr";
    case EncTag::res_hdr: return "res-hdr";
    case EncTag::req_body: return "req-body";
    case EncTag::res_body: return "res-body";
    case EncTag::null_body: return "null-body";
    case EncTag::opt_body: return "opt-body";
  }
  return "?";
}

inline bool enc_tag_is_body(EncTag t) {
  return t == EncTag::req_body || t == EncTag::res_body ||
         t == EncTag::null_body || t == EncTag::opt_body;
}

struct EncapsulatedLayout {
  std::vector<std::pair<EncTag, size_t>> entries;

  friend bool operator==(const EncapsulatedLayout&,
                         const EncapsulatedLayout&) = default;
};

// Offsets must be strictly increasing starting at 0, with exactly one body
// tag as the final entry.
inline void validate_layout(const EncapsulatedLayout& layout) {
  const auto& e = layout.entries;
  if (e.empty())
    throw Error(Errc::bad_encapsulated, "Encapsulated has no entries");
  if (e.front().second != 0)
    throw Error(Errc::bad_encapsulated, "first Encapsulated offset is not 0");
  int bodies = 0, req_hdrs = 0, res_hdrs = 0;
  for (size_t i = 0; i < e.size(); ++i) {
    if (i > 0 && e[i].second <= e[i - 1].second)
      throw Error(Errc::bad_encapsulated, "offsets not strictly increasing");
    if (enc_tag_is_body(e[i].first)) {
      ++bodies;
      if (i + 1 != e.size())
        throw Error(Errc::bad_encapsulated, "body tag is not last");
    } else if (e[i].first == EncTag::req_hdr) {
      ++req_hdrs;
    } else {
      ++res_hdrs;
    }
  }
  if (bodies != 1)
    throw Error(Errc::bad_encapsulated, "expected exactly one body tag");
  if (req_hdrs > 1 || res_hdrs > 1)
    throw Error(Errc::bad_encapsulated, "duplicate header section tag");
}

// (tag, byte-length) per section -> layout with running-sum offsets. A
// missing body section yields null-body at the total header length.
inline EncapsulatedLayout compute_encapsulated(
    const std::vector<std::pair<EncTag, size_t>>& sections) {
  EncapsulatedLayout out;
  size_t offset = 0;
  bool saw_body = false;
  for (const auto& [tag, len] : sections) {
    if (saw_body)
      throw Error(Errc::invariant_violation, "section after body section");
    if (enc_tag_is_body(tag)) {
      if (tag == EncTag::null_body)
        throw Error(Errc::invariant_violation,
                    "null-body is computed, not supplied");
      saw_body = true;
      out.entries.emplace_back(tag, offset);
      continue;
    }
    out.entries.emplace_back(tag, offset);
    offset += len;
  }
  if (!saw_body) out.entries.emplace_back(EncTag::null_body, offset);
  validate_layout(out);
  return out;
}

inline std::string format_encapsulated(const EncapsulatedLayout& layout) {
  std::string s;
  for (const auto& [tag, off] : layout.entries) {
    if (!s.empty()) s += ", ";
    s += enc_tag_name(tag);
    s += '=';
    s += std::to_string(off);
  }
  return s;
}

inline EncapsulatedLayout parse_encapsulated(std::string_view value) {
  EncapsulatedLayout layout;
  size_t pos = 0;
  while (pos < value.size()) {
    size_t comma = value.find(',', pos);
    std::string_view item = trim(value.substr(
        pos, comma == std::string_view::npos ? std::string_view::npos
                                             : comma - pos));
    pos = comma == std::string_view::npos ? value.size() : comma + 1;
    if (item.empty()) continue;
    size_t eq = item.find('=');
    if (eq == std::string_view::npos)
      throw Error(Errc::bad_encapsulated, "missing '=' in Encapsulated");
    std::string_view tag = trim(item.substr(0, eq));
    std::string_view num = trim(item.substr(eq + 1));
    EncTag t;
    if (tag == "req-hdr") t = EncTag::req_hdr;
    else if (tag == "res-hdr") t = EncTag::res_hdr;
    else if (tag == "req-body") t = EncTag::req_body;
    else if (tag == "res-body") t = EncTag::res_body;
    else if (tag == "null-body") t = EncTag::null_body;
    else if (tag == "opt-body") t = EncTag::opt_body;
    else
      throw Error(Errc::bad_encapsulated,
                  "unknown Encapsulated tag: " + std::string(tag));
    if (num.empty())
      throw Error(Errc::bad_encapsulated, "empty Encapsulated offset");
    size_t off = 0;
    for (char c : num) {
      if (c < '0' || c > '9')
        throw Error(Errc::bad_encapsulated, "non-numeric offset");
      off = off * 10 + static_cast<size_t>(c - '0');
      if (off > (1ULL << 40))
        throw Error(Errc::bad_encapsulated, "offset out of range");
    }
    layout.entries.emplace_back(t, off);
  }
  validate_layout(layout);
  return layout;
}

// ---------------------------------------------------------------------------
// Chunked body framing

// Incremental decoder usable both for whole-buffer decoding and for the
// gateway's streaming reads (preview continuation).
class ChunkDecoder {
public:
  enum class State { size_line, data, data_crlf, final_crlf, done };

  explicit ChunkDecoder(size_t max_body = default_max_body())
      : max_body_(max_body) {}

  static constexpr size_t default_max_body() { return 64ULL << 20; }

  // Consumes framing from `in`, appending payload to body(). Returns the
  // number of bytes consumed; check done() to see whether the terminating
  // chunk has been read.
  size_t feed(std::string_view in) {
    size_t consumed = 0;
    while (consumed < in.size() && state_ != State::done) {
      std::string_view rest = in.substr(consumed);
      switch (state_) {
        case State::size_line: {
          size_t eol = rest.find("\r\n");
          if (eol == std::string_view::npos) {
            if (rest.size() > 1024)
              throw Error(Errc::chunk_framing, "chunk size line too long");
            return consumed;  // need more input
          }
          parse_size_line(rest.substr(0, eol));
          consumed += eol + 2;
          state_ = remaining_ == 0 ? State::final_crlf : State::data;
          break;
        }
        case State::data: {
          size_t take = std::min<size_t>(remaining_, rest.size());
          body_.append(rest.data(), take);
          if (body_.size() > max_body_)
            throw Error(Errc::message_too_large, "chunked body exceeds limit");
          remaining_ -= take;
          consumed += take;
          if (remaining_ == 0) state_ = State::data_crlf;
          break;
        }
        case State::data_crlf: {
          if (rest.size() < 2) return consumed;
          if (rest[0] != '\r' || rest[1] != '\n')
            throw Error(Errc::chunk_framing, "missing CRLF after chunk data");
          consumed += 2;
          state_ = State::size_line;
          break;
        }
        case State::final_crlf: {
          // Trailers are out of scope: the zero chunk must be followed by a
          // bare CRLF.
          if (rest.size() < 2) return consumed;
          if (rest[0] != '\r' || rest[1] != '\n')
            throw Error(Errc::chunk_framing, "expected CRLF after last chunk");
          consumed += 2;
          state_ = State::done;
          break;
        }
        case State::done:
          break;
      }
    }
    return consumed;
  }

  bool done() const { return state_ == State::done; }
  bool ieof() const { return ieof_; }
  const std::string& body() const { return body_; }
  std::string take_body() { return std::move(body_); }

private:
  void parse_size_line(std::string_view line) {
    size_t i = 0;
    uint64_t size = 0;
    while (i < line.size() && hex_value(line[i]) >= 0) {
      size = size * 16 + static_cast<uint64_t>(hex_value(line[i]));
      if (size > (1ULL << 40))
        throw Error(Errc::message_too_large, "chunk size out of range");
      ++i;
    }
    if (i == 0)
      throw Error(Errc::chunk_framing, "chunk size line is not hex");
    bool has_ieof = false;
    // Extensions: ";" token, of which only `ieof` is meaningful.
    std::string_view ext = line.substr(i);
    while (!ext.empty()) {
      ext = trim(ext);
      if (ext.empty()) break;
      if (ext[0] != ';')
        throw Error(Errc::chunk_framing, "garbage after chunk size");
      ext.remove_prefix(1);
      size_t next = ext.find(';');
      std::string_view token =
          trim(next == std::string_view::npos ? ext : ext.substr(0, next));
      if (token == "ieof") has_ieof = true;
      ext = next == std::string_view::npos ? std::string_view{}
                                           : ext.substr(next);
    }
    if (has_ieof && size != 0)
      throw Error(Errc::chunk_framing, "ieof on a non-terminal chunk");
    if (has_ieof) ieof_ = true;
    remaining_ = size;
  }

  State state_ = State::size_line;
  uint64_t remaining_ = 0;
  bool ieof_ = false;
  std::string body_;
  size_t max_body_;
};

// Whole-buffer convenience. Throws on malformed or truncated input.
inline std::pair<std::string, bool> decode_chunked(std::string_view raw) {
  ChunkDecoder dec;
  size_t used = dec.feed(raw);
  (void)used;
  if (!dec.done())
    throw Error(Errc::chunk_framing, "truncated chunk stream");
  return {dec.take_body(), dec.ieof()};
}

inline std::string encode_chunked(std::string_view body, bool ieof = false,
                                  size_t chunk_size = 0) {
  std::string out;
  if (chunk_size == 0) chunk_size = body.size();
  size_t pos = 0;
  char sizebuf[32];
  while (pos < body.size()) {
    size_t take = std::min(chunk_size, body.size() - pos);
    int n = std::snprintf(sizebuf, sizeof sizebuf, "%zx\r\n", take);
    out.append(sizebuf, static_cast<size_t>(n));
    out.append(body.substr(pos, take));
    out += "\r\n";
    pos += take;
  }
  out += ieof ? "0; ieof\r\n\r\n" : "0\r\n\r\n";
  return out;
}

// ---------------------------------------------------------------------------
// Messages

struct IcapLimits {
  size_t max_message = 64ULL << 20;
};

struct IcapRequest {
  IcapMethod method = IcapMethod::options;
  std::string uri;
  std::string version = "ICAP/1.0";
  HeaderMap headers;  // excludes Encapsulated and Preview (kept as fields)
  EncapsulatedLayout encapsulated;
  std::optional<size_t> preview_size;
  std::string enc_req_hdr;  // raw bytes of the req-hdr section, if any
  std::string enc_res_hdr;  // raw bytes of the res-hdr section, if any
  std::string body;         // de-chunked body (preview prefix when previewing)
  bool preview_ieof = false;

  EncTag body_tag() const {
    return encapsulated.entries.empty() ? EncTag::null_body
                                        : encapsulated.entries.back().first;
  }
  bool has_body() const { return body_tag() != EncTag::null_body; }
  // Preview without ieof means the rest of the body is still on the wire.
  bool body_complete() const { return !preview_size || preview_ieof; }

  friend bool operator==(const IcapRequest& a, const IcapRequest& b) {
    return a.method == b.method && a.uri == b.uri && a.version == b.version &&
           a.headers == b.headers && a.preview_size == b.preview_size &&
           a.enc_req_hdr == b.enc_req_hdr && a.enc_res_hdr == b.enc_res_hdr &&
           a.body == b.body && a.preview_ieof == b.preview_ieof &&
           a.encapsulated == b.encapsulated;
  }
};

// Fills enc_* sections and computes a consistent layout. `body` empty with
// has_body=false yields null-body.
inline void set_icap_sections(IcapRequest& req, std::string req_hdr,
                              std::string res_hdr, std::string body,
                              bool has_body) {
  req.enc_req_hdr = std::move(req_hdr);
  req.enc_res_hdr = std::move(res_hdr);
  req.body = std::move(body);
  std::vector<std::pair<EncTag, size_t>> sections;
  if (!req.enc_req_hdr.empty())
    sections.emplace_back(EncTag::req_hdr, req.enc_req_hdr.size());
  if (!req.enc_res_hdr.empty())
    sections.emplace_back(EncTag::res_hdr, req.enc_res_hdr.size());
  if (has_body)
    sections.emplace_back(req.method == IcapMethod::respmod ? EncTag::res_body
                                                            : EncTag::req_body,
                          0);
  req.encapsulated = compute_encapsulated(sections);
}

enum class IcapBodyKind { none, req_body, res_body, opt_body };

struct IcapResponse {
  int status = 200;
  std::string reason = "OK";
  std::string version = "ICAP/1.0";
  HeaderMap headers;  // excludes Encapsulated
  std::string enc_req_hdr;
  std::string enc_res_hdr;
  std::string body;
  IcapBodyKind body_kind = IcapBodyKind::none;

  friend bool operator==(const IcapResponse&, const IcapResponse&) = default;
};

inline std::string icap_reason_for(int status) {
  switch (status) {
    case 100: return "Continue";
    case 200: return "OK";
    case 204: return "No Content";
    case 400: return "Bad Request";
    case 404: return "ICAP Service Not Found";
    case 500: return "Server Error";
    case 501: return "Method Not Implemented";
    case 505: return "ICAP Version Not Supported";
    default: return "Unknown";
  }
}

namespace detail {

struct HeaderBlock {
  std::string start_line;
  HeaderMap headers;
  size_t end;  // offset just past the terminating CRLFCRLF
};

inline std::optional<HeaderBlock> read_header_block(std::string_view data,
                                                    size_t limit) {
  size_t end = data.find("\r\n\r\n");
  if (end == std::string_view::npos) {
    if (data.size() > limit)
      throw Error(Errc::message_too_large, "header block exceeds limit");
    return std::nullopt;
  }
  HeaderBlock blk;
  blk.end = end + 4;
  std::string_view block = data.substr(0, end + 2);
  size_t line_end = block.find("\r\n");
  blk.start_line = std::string(block.substr(0, line_end));
  size_t pos = line_end + 2;
  while (pos < block.size()) {
    size_t eol = block.find("\r\n", pos);
    std::string_view line = block.substr(pos, eol - pos);
    pos = eol + 2;
    if (line.empty()) break;
    size_t colon = line.find(':');
    if (colon == std::string_view::npos || colon == 0)
      throw Error(Errc::malformed_start_line,
                  "malformed header line: " + std::string(line));
    blk.headers.add(std::string(trim(line.substr(0, colon))),
                    std::string(trim(line.substr(colon + 1))));
  }
  return blk;
}

inline void split_sections(const EncapsulatedLayout& layout,
                           std::string_view payload, std::string* req_hdr,
                           std::string* res_hdr, size_t* body_start,
                           bool* have_all_headers) {
  *have_all_headers = true;
  size_t body_off = layout.entries.back().second;
  *body_start = body_off;
  if (payload.size() < body_off) {
    *have_all_headers = false;
    return;
  }
  for (size_t i = 0; i + 1 < layout.entries.size(); ++i) {
    auto [tag, off] = layout.entries[i];
    size_t next = layout.entries[i + 1].second;
    std::string_view sec = payload.substr(off, next - off);
    if (tag == EncTag::req_hdr) *req_hdr = std::string(sec);
    else *res_hdr = std::string(sec);
  }
}

}  // namespace detail

struct ParsedRequest {
  IcapRequest request;
  size_t consumed = 0;
};

// Parses one complete ICAP request from the front of `data`. Returns
// std::nullopt when more bytes are needed; throws on malformed input.
// Trailing bytes past the message are left for the caller (pipelining).
inline std::optional<ParsedRequest> parse_icap_request(
    std::string_view data, const IcapLimits& limits = {}) {
  auto blk = detail::read_header_block(data, limits.max_message);
  if (!blk) return std::nullopt;

  // Start line: METHOD SP uri SP ICAP/x.y
  std::string_view line = blk->start_line;
  size_t sp1 = line.find(' ');
  size_t sp2 = line.rfind(' ');
  if (sp1 == std::string_view::npos || sp2 == sp1)
    throw Error(Errc::malformed_start_line,
                "bad ICAP request line: " + std::string(line));
  std::string_view method = line.substr(0, sp1);
  std::string_view uri = trim(line.substr(sp1 + 1, sp2 - sp1 - 1));
  std::string_view version = line.substr(sp2 + 1);
  if (uri.empty())
    throw Error(Errc::malformed_start_line, "empty ICAP URI");

  IcapRequest req;
  if (method == "OPTIONS") req.method = IcapMethod::options;
  else if (method == "REQMOD") req.method = IcapMethod::reqmod;
  else if (method == "RESPMOD") req.method = IcapMethod::respmod;
  else
    throw Error(Errc::unknown_method,
                "unknown ICAP method: " + std::string(method));
  if (!version.starts_with("ICAP/"))
    throw Error(Errc::malformed_start_line,
                "bad ICAP version: " + std::string(version));
  if (version != "ICAP/1.0")
    throw Error(Errc::unsupported_version,
                "unsupported ICAP version: " + std::string(version));
  req.uri = std::string(uri);
  req.version = std::string(version);

  for (const auto& [name, value] : blk->headers) {
    if (iequals(name, "Encapsulated")) {
      req.encapsulated = parse_encapsulated(value);
    } else if (iequals(name, "Preview")) {
      size_t v = 0;
      std::string_view sv = trim(value);
      if (sv.empty())
        throw Error(Errc::malformed_start_line, "empty Preview value");
      for (char c : sv) {
        if (c < '0' || c > '9')
          throw Error(Errc::malformed_start_line, "non-numeric Preview");
        v = v * 10 + static_cast<size_t>(c - '0');
      }
      req.preview_size = v;
    } else {
      req.headers.add(name, value);
    }
  }
  if (req.encapsulated.entries.empty()) {
    if (req.method != IcapMethod::options)
      throw Error(Errc::bad_encapsulated, "missing Encapsulated header");
    req.encapsulated.entries.emplace_back(EncTag::null_body, 0);
  }

  std::string_view payload = data.substr(blk->end);
  size_t body_start = 0;
  bool have_headers = false;
  detail::split_sections(req.encapsulated, payload, &req.enc_req_hdr,
                         &req.enc_res_hdr, &body_start, &have_headers);
  if (!have_headers) {
    if (data.size() > limits.max_message)
      throw Error(Errc::message_too_large, "message exceeds limit");
    return std::nullopt;
  }

  size_t consumed = blk->end + body_start;
  if (req.has_body()) {
    ChunkDecoder dec(limits.max_message);
    size_t used = dec.feed(payload.substr(body_start));
    if (!dec.done()) {
      if (data.size() > limits.max_message)
        throw Error(Errc::message_too_large, "message exceeds limit");
      return std::nullopt;
    }
    if (dec.ieof()) {
      if (!req.preview_size)
        throw Error(Errc::chunk_framing, "ieof outside preview");
      req.preview_ieof = true;
    }
    req.body = dec.take_body();
    consumed += used;
  }
  if (consumed > limits.max_message)
    throw Error(Errc::message_too_large, "message exceeds limit");
  return ParsedRequest{std::move(req), consumed};
}

struct ParsedResponse {
  IcapResponse response;
  size_t consumed = 0;
};

inline std::optional<ParsedResponse> parse_icap_response(
    std::string_view data, const IcapLimits& limits = {}) {
  auto blk = detail::read_header_block(data, limits.max_message);
  if (!blk) return std::nullopt;

  std::string_view line = blk->start_line;
  size_t sp1 = line.find(' ');
  if (sp1 == std::string_view::npos || !line.starts_with("ICAP/"))
    throw Error(Errc::malformed_start_line,
                "bad ICAP status line: " + std::string(line));
  size_t sp2 = line.find(' ', sp1 + 1);
  std::string_view code = line.substr(
      sp1 + 1, sp2 == std::string_view::npos ? std::string_view::npos
                                             : sp2 - sp1 - 1);
  IcapResponse resp;
  resp.version = std::string(line.substr(0, sp1));
  resp.status = 0;
  for (char c : code) {
    if (c < '0' || c > '9')
      throw Error(Errc::malformed_start_line, "non-numeric status");
    resp.status = resp.status * 10 + (c - '0');
  }
  resp.reason = sp2 == std::string_view::npos
                    ? std::string()
                    : std::string(trim(line.substr(sp2 + 1)));

  EncapsulatedLayout layout;
  for (const auto& [name, value] : blk->headers) {
    if (iequals(name, "Encapsulated"))
      layout = parse_encapsulated(value);
    else
      resp.headers.add(name, value);
  }
  size_t consumed = blk->end;
  if (!layout.entries.empty()) {
    std::string_view payload = data.substr(blk->end);
    size_t body_start = 0;
    bool have_headers = false;
    detail::split_sections(layout, payload, &resp.enc_req_hdr,
                           &resp.enc_res_hdr, &body_start, &have_headers);
    if (!have_headers) return std::nullopt;
    consumed += body_start;
    EncTag bt = layout.entries.back().first;
    if (bt != EncTag::null_body) {
      resp.body_kind = bt == EncTag::req_body ? IcapBodyKind::req_body
                       : bt == EncTag::res_body ? IcapBodyKind::res_body
                                                : IcapBodyKind::opt_body;
      ChunkDecoder dec(limits.max_message);
      size_t used = dec.feed(payload.substr(body_start));
      if (!dec.done()) return std::nullopt;
      resp.body = dec.take_body();
      consumed += used;
    }
  }
  return ParsedResponse{std::move(resp), consumed};
}

// Serializers recompute Encapsulated last, from the actual section lengths.

inline std::string serialize_icap_request(const IcapRequest& req) {
  std::vector<std::pair<EncTag, size_t>> sections;
  if (!req.enc_req_hdr.empty())
    sections.emplace_back(EncTag::req_hdr, req.enc_req_hdr.size());
  if (!req.enc_res_hdr.empty())
    sections.emplace_back(EncTag::res_hdr, req.enc_res_hdr.size());
  EncTag bt = req.body_tag();
  if (bt != EncTag::null_body) sections.emplace_back(bt, 0);
  EncapsulatedLayout layout = compute_encapsulated(sections);

  std::string out;
  out += icap_method_name(req.method);
  out += ' ';
  out += req.uri;
  out += ' ';
  out += req.version;
  out += "\r\n";
  for (const auto& [n, v] : req.headers) out += n + ": " + v + "\r\n";
  if (req.preview_size)
    out += "Preview: " + std::to_string(*req.preview_size) + "\r\n";
  out += "Encapsulated: " + format_encapsulated(layout) + "\r\n\r\n";
  out += req.enc_req_hdr;
  out += req.enc_res_hdr;
  if (bt != EncTag::null_body)
    out += encode_chunked(req.body, req.preview_ieof);
  return out;
}

inline std::string serialize_icap_response(const IcapResponse& resp) {
  if (resp.status == 204 &&
      (resp.body_kind != IcapBodyKind::none || !resp.enc_req_hdr.empty() ||
       !resp.enc_res_hdr.empty()))
    throw Error(Errc::invariant_violation, "204 must carry no sections");
  if (resp.body_kind == IcapBodyKind::none && !resp.body.empty())
    throw Error(Errc::invariant_violation, "body bytes without a body tag");

  std::string out;
  out += resp.version + " " + std::to_string(resp.status) + " " +
         resp.reason + "\r\n";
  for (const auto& [n, v] : resp.headers) out += n + ": " + v + "\r\n";
  if (resp.status != 100) {
    std::vector<std::pair<EncTag, size_t>> sections;
    if (!resp.enc_req_hdr.empty())
      sections.emplace_back(EncTag::req_hdr, resp.enc_req_hdr.size());
    if (!resp.enc_res_hdr.empty())
      sections.emplace_back(EncTag::res_hdr, resp.enc_res_hdr.size());
    switch (resp.body_kind) {
      case IcapBodyKind::req_body:
        sections.emplace_back(EncTag::req_body, 0);
        break;
      case IcapBodyKind::res_body:
        sections.emplace_back(EncTag::res_body, 0);
        break;
      case IcapBodyKind::opt_body:
        sections.emplace_back(EncTag::opt_body, 0);
        break;
      case IcapBodyKind::none:
        break;
    }
    EncapsulatedLayout layout = compute_encapsulated(sections);
    out += "Encapsulated: " + format_encapsulated(layout) + "\r\n";
  }
  out += "\r\n";
  out += resp.enc_req_hdr;
  out += resp.enc_res_hdr;
  if (resp.body_kind != IcapBodyKind::none) out += encode_chunked(resp.body);
  return out;
}

inline IcapResponse make_icap_error(int status, std::string_view service_id) {
  IcapResponse resp;
  resp.status = status;
  resp.reason = icap_reason_for(status);
  resp.headers.add("ISTag", std::string(service_id));
  resp.headers.add("Connection", "close");
  return resp;
}

}  // namespace dlp
