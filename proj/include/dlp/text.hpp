#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dlp/errors.hpp"

namespace dlp {

// FNV-1a, 64 bit. Used for fingerprint k-grams and tag chunk hashes.
inline uint64_t fnv1a64(std::string_view data) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : data) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline bool is_ascii_space(char c) {
  return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' ||
         c == '\v';
}

// Canonical text form consumed by all detectors: UTF-8 with invalid
// sequences replaced by U+FFFD, ASCII and Latin-1 letters lowercased,
// whitespace runs (including U+00A0) collapsed to single spaces, ends
// trimmed.
inline std::string normalize_text(std::string_view in) {
  std::string out;
  out.reserve(in.size());
  bool pending_space = false;
  bool emitted = false;
  auto push_space = [&] { pending_space = emitted; };
  auto push = [&](const char* s, size_t n) {
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.append(s, n);
    emitted = true;
  };

  size_t i = 0;
  const size_t n = in.size();
  while (i < n) {
    unsigned char c = static_cast<unsigned char>(in[i]);
    if (c < 0x80) {
      if (is_ascii_space(static_cast<char>(c))) {
        push_space();
        ++i;
        continue;
      }
      char lc = (c >= 'A' && c <= 'Z') ? static_cast<char>(c + 32)
                                       : static_cast<char>(c);
      push(&lc, 1);
      ++i;
      continue;
    }
    // Decode one UTF-8 sequence; bad bytes become U+FFFD.
    uint32_t cp = 0;
    size_t len = 0;
    if ((c & 0xE0) == 0xC0) {
      cp = c & 0x1F;
      len = 2;
    } else if ((c & 0xF0) == 0xE0) {
      cp = c & 0x0F;
      len = 3;
    } else if ((c & 0xF8) == 0xF0) {
      cp = c & 0x07;
      len = 4;
    } else {
      push("\xEF\xBF\xBD", 3);
      ++i;
      continue;
    }
    if (i + len > n) {
      push("\xEF\xBF\xBD", 3);
      ++i;
      continue;
    }
    bool ok = true;
    for (size_t j = 1; j < len; ++j) {
      unsigned char cc = static_cast<unsigned char>(in[i + j]);
      if ((cc & 0xC0) != 0x80) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (cc & 0x3F);
    }
    if (!ok || cp > 0x10FFFF) {
      push("\xEF\xBF\xBD", 3);
      ++i;
      continue;
    }
    i += len;
    if (cp == 0xA0 || cp == 0x2028 || cp == 0x2029 ||
        (cp >= 0x2000 && cp <= 0x200A) || cp == 0x3000) {
      push_space();
      continue;
    }
    // Latin-1 supplement uppercase -> lowercase (except the multiplication
    // sign at 0xD7); everything else passes through unchanged.
    if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) cp += 0x20;
    char buf[4];
    size_t m = 0;
    if (cp < 0x800) {
      buf[m++] = static_cast<char>(0xC0 | (cp >> 6));
      buf[m++] = static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
      buf[m++] = static_cast<char>(0xE0 | (cp >> 12));
      buf[m++] = static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
      buf[m++] = static_cast<char>(0x80 | (cp & 0x3F));
    } else {
      buf[m++] = static_cast<char>(0xF0 | (cp >> 18));
      buf[m++] = static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
      buf[m++] = static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
      buf[m++] = static_cast<char>(0x80 | (cp & 0x3F));
    }
    push(buf, m);
  }
  return out;
}

inline std::vector<std::string> tokenize(std::string_view normalized) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < normalized.size()) {
    while (i < normalized.size() && normalized[i] == ' ') ++i;
    size_t j = i;
    while (j < normalized.size() && normalized[j] != ' ') ++j;
    if (j > i) out.emplace_back(normalized.substr(i, j - i));
    i = j;
  }
  return out;
}

inline int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

inline std::string hex_encode(std::string_view data) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(data.size() * 2);
  for (unsigned char b : data) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0xF]);
  }
  return out;
}

inline std::string hex_decode(std::string_view hex) {
  if (hex.size() % 2 != 0)
    throw Error(Errc::bad_config, "hex string has odd length");
  std::string out;
  out.reserve(hex.size() / 2);
  for (size_t i = 0; i < hex.size(); i += 2) {
    int hi = hex_value(hex[i]);
    int lo = hex_value(hex[i + 1]);
    if (hi < 0 || lo < 0)
      throw Error(Errc::bad_config, "invalid hex digit");
    out.push_back(static_cast<char>((hi << 4) | lo));
  }
  return out;
}

// application/x-www-form-urlencoded decoding: '+' is space, %XX is a byte.
inline std::string percent_decode(std::string_view in, bool plus_as_space = true) {
  std::string out;
  out.reserve(in.size());
  for (size_t i = 0; i < in.size(); ++i) {
    char c = in[i];
    if (c == '+' && plus_as_space) {
      out.push_back(' ');
    } else if (c == '%' && i + 2 < in.size() && hex_value(in[i + 1]) >= 0 &&
               hex_value(in[i + 2]) >= 0) {
      out.push_back(static_cast<char>((hex_value(in[i + 1]) << 4) |
                                      hex_value(in[i + 2])));
      i += 2;
    } else {
      out.push_back(c);
    }
  }
  return out;
}

inline std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c += 32;
  return out;
}

inline bool iequals(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    char ca = a[i], cb = b[i];
    if (ca >= 'A' && ca <= 'Z') ca += 32;
    if (cb >= 'A' && cb <= 'Z') cb += 32;
    if (ca != cb) return false;
  }
  return true;
}

inline std::string_view trim(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && is_ascii_space(s[b])) ++b;
  while (e > b && is_ascii_space(s[e - 1])) --e;
  return s.substr(b, e - b);
}

inline std::string base64_decode(std::string_view in) {
  auto val = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::string out;
  int acc = 0, bits = 0;
  for (char c : in) {
    if (c == '=' || is_ascii_space(c)) continue;
    int v = val(c);
    if (v < 0) return {};  // not base64; caller keeps the raw value instead
    acc = (acc << 6) | v;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<char>((acc >> bits) & 0xFF));
    }
  }
  return out;
}

}  // namespace dlp
