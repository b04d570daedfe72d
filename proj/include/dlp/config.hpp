#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "dlp/errors.hpp"
#include "dlp/text.hpp"

namespace dlp {

// Service configuration. fail_mode is fixed closed: a config may state it
// explicitly but cannot change it.
struct GatewayConfig {
  std::string listen_host = "127.0.0.1";
  uint16_t listen_port = 1344;
  size_t preview_size = 1024;
  size_t max_connections = 64;
  size_t max_message_bytes = 64ULL << 20;

  std::string policy_path;
  std::string keystore_path;
  std::string mac_table_path;
  std::map<std::string, std::string> ruleset_paths;
  std::map<std::string, std::string> corpus_paths;
  std::map<std::string, std::string> tag_paths;
  std::map<std::string, std::string> model_paths;

  std::string incident_dir;
  bool mandatory_audit = false;
  bool fsync_incidents = false;
  std::string decoy_key_id_hex;  // empty: first keystore entry
  std::string service_name = "dlpgw";
  std::string pid_file;
};

inline GatewayConfig parse_gateway_config(const std::string& text,
                                          const std::string& base_dir = {}) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::bad_config, "config parse: " + std::string(e.what()));
  }
  GatewayConfig cfg;
  auto resolve = [&](const std::string& p) -> std::string {
    if (p.empty() || p.front() == '/' || base_dir.empty()) return p;
    return base_dir + "/" + p;
  };

  if (doc.contains("listen")) {
    std::string listen = doc["listen"].get<std::string>();
    size_t colon = listen.rfind(':');
    if (colon == std::string::npos)
      throw Error(Errc::bad_config, "listen must be host:port");
    cfg.listen_host = listen.substr(0, colon);
    int port = std::stoi(listen.substr(colon + 1));
    if (port < 0 || port > 65535)
      throw Error(Errc::bad_config, "listen port out of range");
    cfg.listen_port = static_cast<uint16_t>(port);
  }
  cfg.preview_size = doc.value("preview_size", cfg.preview_size);
  cfg.max_connections = doc.value("max_connections", cfg.max_connections);
  cfg.max_message_bytes = doc.value("max_message_bytes", cfg.max_message_bytes);
  if (doc.contains("fail_mode") && doc["fail_mode"].get<std::string>() != "closed")
    throw Error(Errc::bad_config, "fail_mode is fixed to closed");

  if (!doc.contains("policy"))
    throw Error(Errc::bad_config, "config requires a policy path");
  cfg.policy_path = resolve(doc["policy"].get<std::string>());
  if (doc.contains("keystore"))
    cfg.keystore_path = resolve(doc["keystore"].get<std::string>());
  if (doc.contains("mac_table"))
    cfg.mac_table_path = resolve(doc["mac_table"].get<std::string>());
  for (auto& [key, member] :
       std::map<std::string, std::map<std::string, std::string>*>{
           {"rulesets", &cfg.ruleset_paths},
           {"corpora", &cfg.corpus_paths},
           {"tags", &cfg.tag_paths},
           {"models", &cfg.model_paths}}) {
    if (!doc.contains(key)) continue;
    for (const auto& [name, path] : doc[key].items())
      (*member)[name] = resolve(path.get<std::string>());
  }
  if (!doc.contains("incident_dir"))
    throw Error(Errc::bad_config, "config requires incident_dir");
  cfg.incident_dir = resolve(doc["incident_dir"].get<std::string>());
  cfg.mandatory_audit = doc.value("mandatory_audit", false);
  cfg.fsync_incidents = doc.value("fsync_incidents", false);
  if (doc.contains("decoy_key_id")) {
    cfg.decoy_key_id_hex = doc["decoy_key_id"].get<std::string>();
    if (cfg.decoy_key_id_hex.size() != 32)
      throw Error(Errc::bad_config, "decoy_key_id must be 32 hex chars");
  }
  cfg.service_name = doc.value("service_name", cfg.service_name);
  if (doc.contains("pid_file"))
    cfg.pid_file = resolve(doc["pid_file"].get<std::string>());
  return cfg;
}

inline GatewayConfig load_gateway_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::bad_config, "cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  std::string base;
  size_t slash = path.rfind('/');
  if (slash != std::string::npos) base = path.substr(0, slash);
  return parse_gateway_config(ss.str(), base);
}

}  // namespace dlp
