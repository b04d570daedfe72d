#pragma once

#include <sys/stat.h>

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "dlp/errors.hpp"
#include "dlp/text.hpp"

namespace dlp {

// Enterprise AEAD keys, immutable once loaded. key ids are 16 raw bytes
// (32 hex characters in the file), keys are 256 bits.
class KeyStore {
public:
  void add(std::string key_id, std::string key) {
    if (key_id.size() != 16)
      throw Error(Errc::bad_keystore, "key id must be 16 bytes");
    if (key.size() != 32)
      throw Error(Errc::bad_keystore, "key must be 32 bytes");
    auto [it, inserted] = keys_.emplace(std::move(key_id), std::move(key));
    if (!inserted)
      throw Error(Errc::bad_keystore, "duplicate key id");
  }

  const std::string* find(std::string_view key_id) const {
    auto it = keys_.find(std::string(key_id));
    return it == keys_.end() ? nullptr : &it->second;
  }

  size_t size() const { return keys_.size(); }
  bool empty() const { return keys_.empty(); }
  const std::map<std::string, std::string>& entries() const { return keys_; }

private:
  std::map<std::string, std::string> keys_;
};

// File format: {"keys": [{"key_id": <32 hex>, "key": <64 hex>}, ...]}.
// The file must not be readable or writable by others.
inline KeyStore load_keystore(const std::string& path,
                              bool check_permissions = true) {
  if (check_permissions) {
    struct stat st {};
    if (::stat(path.c_str(), &st) != 0)
      throw Error(Errc::io_failure, "keystore not found: " + path);
    if (st.st_mode & (S_IROTH | S_IWOTH))
      throw Error(Errc::permission_denied,
                  "keystore is world-accessible: " + path);
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_failure, "cannot open keystore: " + path);
  std::stringstream ss;
  ss << in.rdbuf();

  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::bad_keystore, std::string("keystore parse: ") + e.what());
  }
  KeyStore ks;
  if (!doc.is_object() || !doc.contains("keys") || !doc["keys"].is_array())
    throw Error(Errc::bad_keystore, "keystore must contain a keys array");
  for (const auto& entry : doc["keys"]) {
    if (!entry.contains("key_id") || !entry.contains("key"))
      throw Error(Errc::bad_keystore, "keystore entry missing fields");
    std::string id_hex = entry["key_id"].get<std::string>();
    std::string key_hex = entry["key"].get<std::string>();
    if (id_hex.size() != 32)
      throw Error(Errc::bad_keystore, "key_id must be 32 hex chars");
    if (key_hex.size() != 64)
      throw Error(Errc::bad_keystore, "key must be 64 hex chars");
    ks.add(hex_decode(id_hex), hex_decode(key_hex));
  }
  return ks;
}

inline void save_keystore(const KeyStore& ks, const std::string& path) {
  nlohmann::json doc;
  doc["keys"] = nlohmann::json::array();
  for (const auto& [id, key] : ks.entries())
    doc["keys"].push_back({{"key_id", hex_encode(id)}, {"key", hex_encode(key)}});
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io_failure, "cannot write keystore: " + path);
  out << doc.dump(2) << "\n";
  out.close();
  ::chmod(path.c_str(), 0600);
}

}  // namespace dlp
