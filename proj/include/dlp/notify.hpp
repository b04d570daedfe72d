#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "dlp/policy.hpp"

// Administrator notification. Delivery problems are recorded, never
// propagated: the ICAP verdict must not depend on a sink being reachable.

namespace dlp {

struct DeliveryRecord {
  SinkConfig::Type type = SinkConfig::Type::file;
  std::string target;
  bool delivered = false;
  std::string error;
};

namespace detail {

inline bool split_url(const std::string& url, std::string* base,
                      std::string* path) {
  size_t scheme = url.find("://");
  if (scheme == std::string::npos) return false;
  size_t slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) {
    *base = url;
    *path = "/";
  } else {
    *base = url.substr(0, slash);
    *path = url.substr(slash);
  }
  return true;
}

}  // namespace detail

inline std::vector<DeliveryRecord> notify(const std::vector<SinkConfig>& sinks,
                                          const nlohmann::json& incident) {
  std::vector<DeliveryRecord> records;
  const std::string line = incident.dump();
  for (const auto& sink : sinks) {
    DeliveryRecord rec;
    rec.type = sink.type;
    rec.target = sink.target;
    if (sink.type == SinkConfig::Type::file) {
      std::ofstream out(sink.target, std::ios::app | std::ios::binary);
      if (out) {
        out << line << "\n";
        out.flush();
        rec.delivered = static_cast<bool>(out);
        if (!rec.delivered) rec.error = "write failed";
      } else {
        rec.error = "cannot open sink file";
      }
    } else {
      std::string base, path;
      if (!detail::split_url(sink.target, &base, &path)) {
        rec.error = "malformed webhook url";
      } else {
        httplib::Client client(base);
        client.set_connection_timeout(5, 0);
        client.set_read_timeout(5, 0);
        client.set_write_timeout(5, 0);
        auto res = client.Post(path, line, "application/json");
        if (!res) {
          rec.error = "connection failed";
        } else if (res->status < 200 || res->status >= 300) {
          rec.error = "webhook returned " + std::to_string(res->status);
        } else {
          rec.delivered = true;
        }
      }
    }
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace dlp
