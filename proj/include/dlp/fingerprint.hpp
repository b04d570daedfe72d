#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "dlp/detect.hpp"
#include "dlp/errors.hpp"
#include "dlp/extract.hpp"
#include "dlp/text.hpp"

// Document fingerprinting by winnowing: hash every k-gram of the normalized
// text, slide a window of w hashes, keep each window's minimum (rightmost
// on ties). Any shared substring of normalized length >= w + k - 1 is then
// guaranteed to produce at least one shared fingerprint.

namespace dlp {

struct Fingerprint {
  uint64_t hash;
  uint32_t pos;  // k-gram start offset in the normalized text
};

inline std::vector<Fingerprint> winnow(std::string_view normalized, size_t k,
                                       size_t w) {
  std::vector<Fingerprint> out;
  if (normalized.size() < k) return out;
  const size_t n_grams = normalized.size() - k + 1;
  std::vector<uint64_t> grams(n_grams);
  for (size_t i = 0; i < n_grams; ++i)
    grams[i] = fnv1a64(normalized.substr(i, k));

  const size_t win = std::min(w, n_grams);
  const size_t n_windows = n_grams - win + 1;
  size_t last_pos = SIZE_MAX;
  for (size_t start = 0; start < n_windows; ++start) {
    uint64_t min_hash = grams[start];
    size_t min_pos = start;
    for (size_t j = start + 1; j < start + win; ++j) {
      if (grams[j] <= min_hash) {  // rightmost occurrence wins ties
        min_hash = grams[j];
        min_pos = j;
      }
    }
    if (min_pos != last_pos) {
      out.push_back({min_hash, static_cast<uint32_t>(min_pos)});
      last_pos = min_pos;
    }
  }
  return out;
}

class FingerprintIndex {
public:
  struct Posting {
    uint32_t doc;
    uint32_t pos;
  };

  FingerprintIndex() = default;
  FingerprintIndex(size_t k, size_t w) : k_(k), w_(w) {
    if (k < 2) throw Error(Errc::bad_config, "fingerprint k must be >= 2");
    if (w < 1) throw Error(Errc::bad_config, "fingerprint w must be >= 1");
  }

  size_t k() const { return k_; }
  size_t w() const { return w_; }

  // Normalizes and winnows one document into the index.
  void add_document(const std::string& doc_id, std::string_view text) {
    std::string norm = normalize_text(text);
    if (norm.size() < k_)
      throw Error(Errc::doc_too_short,
                  "document too short to fingerprint: " + doc_id);
    uint32_t doc = static_cast<uint32_t>(doc_ids_.size());
    doc_ids_.push_back(doc_id);
    auto prints = winnow(norm, k_, w_);
    for (const auto& fp : prints) postings_[fp.hash].push_back({doc, fp.pos});
    doc_sizes_.push_back(static_cast<uint32_t>(prints.size()));
  }

  const std::vector<std::string>& doc_ids() const { return doc_ids_; }
  const std::vector<uint32_t>& doc_sizes() const { return doc_sizes_; }
  size_t fingerprint_count() const {
    size_t total = 0;
    for (const auto& [h, v] : postings_) total += v.size();
    return total;
  }
  const std::unordered_map<uint64_t, std::vector<Posting>>& postings() const {
    return postings_;
  }

  nlohmann::json to_json() const {
    nlohmann::json doc;
    doc["k"] = k_;
    doc["w"] = w_;
    doc["docs"] = nlohmann::json::array();
    for (size_t i = 0; i < doc_ids_.size(); ++i)
      doc["docs"].push_back({{"id", doc_ids_[i]}, {"size", doc_sizes_[i]}});
    // std::map keys give a canonical serialization order
    std::map<std::string, nlohmann::json> sorted;
    for (const auto& [hash, posts] : postings_) {
      nlohmann::json arr = nlohmann::json::array();
      std::vector<std::pair<uint32_t, uint32_t>> sp;
      for (const auto& p : posts) sp.emplace_back(p.doc, p.pos);
      std::sort(sp.begin(), sp.end());
      for (const auto& [d, pos] : sp) arr.push_back({d, pos});
      char buf[17];
      std::snprintf(buf, sizeof buf, "%016llx",
                    static_cast<unsigned long long>(hash));
      sorted[buf] = std::move(arr);
    }
    doc["postings"] = nlohmann::json(sorted);
    return doc;
  }

  static FingerprintIndex from_json(const nlohmann::json& doc) {
    FingerprintIndex idx(doc.at("k").get<size_t>(), doc.at("w").get<size_t>());
    for (const auto& d : doc.at("docs")) {
      idx.doc_ids_.push_back(d.at("id").get<std::string>());
      idx.doc_sizes_.push_back(d.at("size").get<uint32_t>());
    }
    for (const auto& [hex, arr] : doc.at("postings").items()) {
      uint64_t hash = std::stoull(hex, nullptr, 16);
      auto& posts = idx.postings_[hash];
      for (const auto& p : arr)
        posts.push_back({p.at(0).get<uint32_t>(), p.at(1).get<uint32_t>()});
    }
    return idx;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io_failure, "cannot write index: " + path);
    out << to_json().dump(0) << "\n";
  }

  static FingerprintIndex load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io_failure, "cannot open index: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
      return from_json(nlohmann::json::parse(ss.str()));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::bad_config,
                  "fingerprint index parse: " + std::string(e.what()));
    }
  }

private:
  size_t k_ = 8;
  size_t w_ = 4;
  std::unordered_map<uint64_t, std::vector<Posting>> postings_;
  std::vector<std::string> doc_ids_;
  std::vector<uint32_t> doc_sizes_;
};

// Winnows the message segments with the index parameters and scores each
// registered document by the fraction of its postings whose hash occurs in
// the message. One Detection per document at or above `min_overlap`.
inline std::vector<Detection> fingerprint_scan(const FingerprintIndex& idx,
                                               const ExtractedContent& content,
                                               const std::string& resource = {},
                                               double min_overlap = 0.3) {
  struct MsgPrint {
    int segment;
    uint32_t pos;
  };
  std::unordered_map<uint64_t, MsgPrint> message_prints;
  for (size_t si = 0; si < content.segments.size(); ++si) {
    for (const auto& fp :
         winnow(content.segments[si].text, idx.k(), idx.w())) {
      message_prints.emplace(fp.hash, MsgPrint{static_cast<int>(si), fp.pos});
    }
  }
  if (message_prints.empty()) return {};

  std::vector<uint32_t> matched(idx.doc_ids().size(), 0);
  std::vector<uint64_t> first_hash(idx.doc_ids().size(), 0);
  std::vector<bool> has_first(idx.doc_ids().size(), false);
  for (const auto& [hash, mp] : message_prints) {
    auto it = idx.postings().find(hash);
    if (it == idx.postings().end()) continue;
    for (const auto& posting : it->second) {
      ++matched[posting.doc];
      if (!has_first[posting.doc]) {
        has_first[posting.doc] = true;
        first_hash[posting.doc] = hash;
      }
    }
  }

  std::vector<Detection> out;
  for (size_t d = 0; d < matched.size(); ++d) {
    if (matched[d] == 0 || idx.doc_sizes()[d] == 0) continue;
    double overlap =
        static_cast<double>(matched[d]) / static_cast<double>(idx.doc_sizes()[d]);
    if (overlap < min_overlap) continue;
    Detection det;
    det.detector = DetectorKind::fingerprint;
    det.resource = resource;
    det.rule_id = idx.doc_ids()[d];
    det.confidence = overlap;
    const MsgPrint& mp = message_prints.at(first_hash[d]);
    const std::string& text =
        content.segments[static_cast<size_t>(mp.segment)].text;
    size_t snip_end = std::min(text.size(), mp.pos + kSnippetLimit);
    det.span = {mp.segment, mp.pos, std::min(text.size(), mp.pos + idx.k())};
    det.snippet = clip_snippet(
        std::string_view(text).substr(mp.pos, snip_end - mp.pos));
    out.push_back(std::move(det));
  }
  return out;
}

}  // namespace dlp
