#pragma once

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dlp/detect.hpp"
#include "dlp/errors.hpp"
#include "dlp/policy.hpp"

// Append-only audit of every non-allow verdict: one JSON document per line,
// daily-rotated files, sortable ULID-style ids. Crash-truncated final lines
// are tolerated on read.

namespace dlp {

// 48-bit millisecond timestamp + 80 random bits, Crockford base32.
// Monotonic within the process so ids order identically to append order.
inline std::string generate_ulid(int64_t ts_ms) {
  static std::mutex mu;
  static int64_t last_ts = -1;
  static unsigned char last_rand[10];

  unsigned char rnd[10];
  {
    std::lock_guard<std::mutex> lock(mu);
    if (ts_ms == last_ts) {
      // same millisecond: increment the random part
      std::memcpy(rnd, last_rand, sizeof rnd);
      for (int i = 9; i >= 0; --i)
        if (++rnd[i] != 0) break;
    } else {
      std::string fresh = random_bytes(10);
      std::memcpy(rnd, fresh.data(), sizeof rnd);
      last_ts = ts_ms;
    }
    std::memcpy(last_rand, rnd, sizeof rnd);
  }

  unsigned char bytes[16];
  uint64_t ts = static_cast<uint64_t>(ts_ms) & 0xFFFFFFFFFFFFULL;
  for (int i = 0; i < 6; ++i)
    bytes[i] = static_cast<unsigned char>(ts >> (8 * (5 - i)));
  std::memcpy(bytes + 6, rnd, 10);

  static const char* alphabet = "0123456789ABCDEFGHJKMNPQRSTVWXYZ";
  std::string out(26, '0');
  // 128 bits -> 26 base32 chars (leading 2 bits are zero padding)
  int bitpos = -2;  // start offset so 130 bits cover 26 chars
  for (int i = 0; i < 26; ++i) {
    int hi = bitpos;
    uint32_t v = 0;
    for (int b = 0; b < 5; ++b) {
      int bit = hi + b;
      uint32_t val = 0;
      if (bit >= 0 && bit < 128)
        val = (bytes[bit / 8] >> (7 - bit % 8)) & 1u;
      v = (v << 1) | val;
    }
    out[static_cast<size_t>(i)] = alphabet[v];
    bitpos += 5;
  }
  return out;
}

inline int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

inline std::string format_timestamp_ms(int64_t ts_ms) {
  time_t secs = static_cast<time_t>(ts_ms / 1000);
  int ms = static_cast<int>(ts_ms % 1000);
  struct tm tm_utc {};
  gmtime_r(&secs, &tm_utc);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ",
                tm_utc.tm_year + 1900, tm_utc.tm_mon + 1, tm_utc.tm_mday,
                tm_utc.tm_hour, tm_utc.tm_min, tm_utc.tm_sec, ms);
  return buf;
}

inline std::optional<int64_t> parse_timestamp_ms(const std::string& iso) {
  struct tm tm_utc {};
  int ms = 0;
  if (std::sscanf(iso.c_str(), "%d-%d-%dT%d:%d:%d.%dZ", &tm_utc.tm_year,
                  &tm_utc.tm_mon, &tm_utc.tm_mday, &tm_utc.tm_hour,
                  &tm_utc.tm_min, &tm_utc.tm_sec, &ms) != 7)
    return std::nullopt;
  tm_utc.tm_year -= 1900;
  tm_utc.tm_mon -= 1;
  time_t secs = timegm(&tm_utc);
  if (secs == static_cast<time_t>(-1)) return std::nullopt;
  return static_cast<int64_t>(secs) * 1000 + ms;
}

struct FiredRule {
  std::string rule_id;
  DetectorKind detector = DetectorKind::keyword;
  double confidence = 1.0;
  std::string snippet;

  friend bool operator==(const FiredRule&, const FiredRule&) = default;
};

struct Incident {
  std::string id;          // assigned by the store when empty
  int64_t timestamp_ms = 0;
  Direction direction = Direction::outbound;
  ClientIdentity client;
  std::string target;      // host + path
  Action action = Action::allow_log;
  Severity severity = Severity::low;
  std::vector<FiredRule> fired;
  uint64_t bytes_inspected = 0;

  friend bool operator==(const Incident&, const Incident&) = default;
};

inline nlohmann::json incident_to_json(const Incident& inc) {
  nlohmann::json fired = nlohmann::json::array();
  for (const auto& f : inc.fired)
    fired.push_back({{"rule_id", f.rule_id},
                     {"detector", detector_kind_name(f.detector)},
                     {"confidence", f.confidence},
                     {"snippet", f.snippet}});
  return nlohmann::json{
      {"id", inc.id},
      {"timestamp", format_timestamp_ms(inc.timestamp_ms)},
      {"direction", direction_name(inc.direction)},
      {"client", {{"ip", inc.client.ip}, {"mac", inc.client.mac}, {"user", inc.client.user}}},
      {"target", inc.target},
      {"verdict", {{"action", action_name(inc.action)}, {"severity", severity_name(inc.severity)}}},
      {"fired", fired},
      {"bytes_inspected", inc.bytes_inspected},
  };
}

inline std::optional<Incident> incident_from_json(const nlohmann::json& j) {
  try {
    Incident inc;
    inc.id = j.at("id").get<std::string>();
    auto ts = parse_timestamp_ms(j.at("timestamp").get<std::string>());
    if (!ts) return std::nullopt;
    inc.timestamp_ms = *ts;
    auto dir = direction_from_name(j.at("direction").get<std::string>());
    if (!dir) return std::nullopt;
    inc.direction = *dir;
    inc.client.ip = j.at("client").at("ip").get<std::string>();
    inc.client.mac = j.at("client").at("mac").get<std::string>();
    inc.client.user = j.at("client").at("user").get<std::string>();
    inc.target = j.at("target").get<std::string>();
    auto act = action_from_name(j.at("verdict").at("action").get<std::string>());
    auto sev =
        severity_from_name(j.at("verdict").at("severity").get<std::string>());
    if (!act || !sev) return std::nullopt;
    inc.action = *act;
    inc.severity = *sev;
    for (const auto& f : j.at("fired")) {
      FiredRule fr;
      fr.rule_id = f.at("rule_id").get<std::string>();
      std::string det = f.at("detector").get<std::string>();
      if (auto k = detector_kind_from_name(det)) fr.detector = *k;
      else if (det == "opacity") fr.detector = DetectorKind::opacity;
      else return std::nullopt;
      fr.confidence = f.at("confidence").get<double>();
      fr.snippet = f.at("snippet").get<std::string>();
      inc.fired.push_back(std::move(fr));
    }
    inc.bytes_inspected = j.at("bytes_inspected").get<uint64_t>();
    return inc;
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
}

struct IncidentFilter {
  std::optional<int64_t> from_ms;
  std::optional<int64_t> until_ms;
  std::optional<Action> action;
  std::optional<std::string> rule_id;
  std::optional<std::string> client_ip;

  bool matches(const Incident& inc) const {
    if (from_ms && inc.timestamp_ms < *from_ms) return false;
    if (until_ms && inc.timestamp_ms >= *until_ms) return false;
    if (action && inc.action != *action) return false;
    if (client_ip && inc.client.ip != *client_ip) return false;
    if (rule_id) {
      bool hit = false;
      for (const auto& f : inc.fired)
        if (f.rule_id == *rule_id) hit = true;
      if (!hit) return false;
    }
    return true;
  }
};

struct QueryResult {
  std::vector<Incident> incidents;
  size_t corrupt_lines = 0;
};

struct ReportStats {
  size_t total = 0;
  std::map<std::string, size_t> by_action;
  std::map<std::string, size_t> by_detector;
  std::map<std::string, size_t> by_severity;
  std::vector<std::pair<std::string, size_t>> top_clients;  // up to 10
  size_t corrupt_lines = 0;
};

class IncidentStore {
public:
  explicit IncidentStore(std::string dir, bool fsync_each = false)
      : dir_(std::move(dir)), fsync_each_(fsync_each) {}

  const std::string& dir() const { return dir_; }

  // Appends one line to the day's log file and returns the incident id.
  // Throws with permission_denied / io_failure so the gateway can fail
  // closed under mandatory audit.
  std::string append(Incident inc) {
    std::lock_guard<std::mutex> lock(mu_);
    if (inc.timestamp_ms == 0) inc.timestamp_ms = now_ms();
    if (inc.id.empty()) inc.id = generate_ulid(inc.timestamp_ms);
    for (auto& f : inc.fired)
      if (f.snippet.size() > kSnippetLimit) f.snippet.resize(kSnippetLimit);
    std::string line = incident_to_json(inc).dump();
    line += '\n';

    std::string path = dir_ + "/" + file_for(inc.timestamp_ms);
    int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT, 0640);
    if (fd < 0) {
      if (errno == EACCES || errno == EPERM || errno == EROFS)
        throw Error(Errc::permission_denied, "audit log: " + path + ": " +
                                                 std::strerror(errno));
      throw Error(Errc::io_failure,
                  "audit log: " + path + ": " + std::strerror(errno));
    }
    ssize_t written = ::write(fd, line.data(), line.size());
    int saved = errno;
    bool sync_ok = true;
    if (written == static_cast<ssize_t>(line.size()) && fsync_each_)
      sync_ok = ::fsync(fd) == 0;
    ::close(fd);
    if (written != static_cast<ssize_t>(line.size()) || !sync_ok)
      throw Error(Errc::io_failure,
                  "audit log write: " + std::string(std::strerror(saved)));
    return inc.id;
  }

  QueryResult query(const IncidentFilter& filter = {}) const {
    QueryResult result;
    namespace fs = std::filesystem;
    std::vector<std::string> files;
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(dir_, ec)) {
      if (!entry.is_regular_file()) continue;
      std::string name = entry.path().filename().string();
      if (name.starts_with("incidents-") && name.ends_with(".log"))
        files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());
    for (const auto& path : files) {
      std::ifstream in(path, std::ios::binary);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) {
          ++result.corrupt_lines;
          continue;
        }
        auto inc = incident_from_json(j);
        if (!inc) {
          ++result.corrupt_lines;
          continue;
        }
        if (filter.matches(*inc)) result.incidents.push_back(std::move(*inc));
      }
    }
    std::stable_sort(result.incidents.begin(), result.incidents.end(),
                     [](const Incident& a, const Incident& b) {
                       if (a.timestamp_ms != b.timestamp_ms)
                         return a.timestamp_ms < b.timestamp_ms;
                       return a.id < b.id;
                     });
    return result;
  }

  ReportStats aggregate(std::optional<int64_t> from_ms = std::nullopt,
                        std::optional<int64_t> until_ms = std::nullopt) const {
    IncidentFilter filter;
    filter.from_ms = from_ms;
    filter.until_ms = until_ms;
    QueryResult q = query(filter);
    ReportStats stats;
    stats.total = q.incidents.size();
    stats.corrupt_lines = q.corrupt_lines;
    std::map<std::string, size_t> clients;
    for (const auto& inc : q.incidents) {
      ++stats.by_action[action_name(inc.action)];
      ++stats.by_severity[severity_name(inc.severity)];
      std::set<std::string> kinds;
      for (const auto& f : inc.fired)
        kinds.insert(detector_kind_name(f.detector));
      for (const auto& k : kinds) ++stats.by_detector[k];
      if (!inc.client.ip.empty()) ++clients[inc.client.ip];
    }
    std::vector<std::pair<std::string, size_t>> ranked(clients.begin(),
                                                       clients.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    if (ranked.size() > 10) ranked.resize(10);
    stats.top_clients = std::move(ranked);
    return stats;
  }

private:
  static std::string file_for(int64_t ts_ms) {
    time_t secs = static_cast<time_t>(ts_ms / 1000);
    struct tm tm_utc {};
    gmtime_r(&secs, &tm_utc);
    char buf[40];
    std::snprintf(buf, sizeof buf, "incidents-%04d%02d%02d.log",
                  tm_utc.tm_year + 1900, tm_utc.tm_mon + 1, tm_utc.tm_mday);
    return buf;
  }

  std::string dir_;
  bool fsync_each_;
  mutable std::mutex mu_;
};

}  // namespace dlp
