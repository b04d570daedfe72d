#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "dlp/detect.hpp"
#include "dlp/errors.hpp"
#include "dlp/extract.hpp"
#include "dlp/text.hpp"

// Exact-match data tagging: operators register named texts; the registry
// stores one hash of the whole normalized text plus one per fixed-length
// chunk. Lookup is O(1) per scanned segment — cheap enough for bulk
// traffic, by construction blind to any edit.

namespace dlp {

class TagRegistry {
public:
  explicit TagRegistry(size_t chunk_len = 256) : chunk_len_(chunk_len) {
    if (chunk_len_ == 0)
      throw Error(Errc::bad_config, "chunk_len must be positive");
  }

  size_t chunk_len() const { return chunk_len_; }
  size_t size() const { return entries_.size(); }
  const std::map<uint64_t, std::string>& entries() const { return entries_; }

  // Registers hash(normalize(text)) plus every full chunk's hash under
  // `tag`. A hash already mapped to a different tag is rejected.
  void register_text(std::string_view text, const std::string& tag) {
    if (tag.empty()) throw Error(Errc::bad_config, "empty tag name");
    std::string norm = normalize_text(text);
    add_hash(fnv1a64(norm), tag);
    for (size_t off = 0; off + chunk_len_ <= norm.size(); off += chunk_len_)
      add_hash(fnv1a64(std::string_view(norm).substr(off, chunk_len_)), tag);
  }

  std::vector<Detection> scan(const ExtractedContent& content,
                              const std::string& resource = {}) const {
    std::vector<Detection> out;
    for (size_t si = 0; si < content.segments.size(); ++si) {
      const std::string& text = content.segments[si].text;
      if (text.empty()) continue;
      if (const std::string* tag = lookup(fnv1a64(text)))
        emit(out, si, 0, text.size(), text, *tag, resource);
      for (size_t off = 0; off + chunk_len_ <= text.size(); off += chunk_len_) {
        std::string_view chunk = std::string_view(text).substr(off, chunk_len_);
        if (const std::string* tag = lookup(fnv1a64(chunk)))
          emit(out, si, off, off + chunk_len_, text, *tag, resource);
      }
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json doc;
    doc["chunk_len"] = chunk_len_;
    std::map<std::string, std::string> sorted;
    for (const auto& [hash, tag] : entries_) {
      char buf[17];
      std::snprintf(buf, sizeof buf, "%016llx",
                    static_cast<unsigned long long>(hash));
      sorted[buf] = tag;
    }
    doc["entries"] = nlohmann::json(sorted);
    return doc;
  }

  static TagRegistry from_json(const nlohmann::json& doc) {
    TagRegistry reg(doc.at("chunk_len").get<size_t>());
    for (const auto& [hex, tag] : doc.at("entries").items())
      reg.entries_[std::stoull(hex, nullptr, 16)] = tag.get<std::string>();
    return reg;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io_failure, "cannot write registry: " + path);
    out << to_json().dump(0) << "\n";
  }

  static TagRegistry load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io_failure, "cannot open registry: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
      return from_json(nlohmann::json::parse(ss.str()));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::bad_config,
                  "tag registry parse: " + std::string(e.what()));
    }
  }

private:
  void add_hash(uint64_t hash, const std::string& tag) {
    auto it = entries_.find(hash);
    if (it != entries_.end() && it->second != tag)
      throw Error(Errc::tag_collision, "chunk hash already tagged '" +
                                           it->second + "', refusing '" + tag +
                                           "'");
    entries_[hash] = tag;
  }

  const std::string* lookup(uint64_t hash) const {
    auto it = entries_.find(hash);
    return it == entries_.end() ? nullptr : &it->second;
  }

  static void emit(std::vector<Detection>& out, size_t segment, size_t begin,
                   size_t end, const std::string& text, const std::string& tag,
                   const std::string& resource) {
    Detection d;
    d.detector = DetectorKind::tag;
    d.resource = resource;
    d.rule_id = tag;
    d.span = {static_cast<int>(segment), begin, end};
    d.snippet = clip_snippet(std::string_view(text).substr(begin, end - begin));
    d.confidence = 1.0;
    out.push_back(std::move(d));
  }

  size_t chunk_len_;
  std::map<uint64_t, std::string> entries_;
};

}  // namespace dlp
