#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <condition_variable>
#include <csignal>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "dlp/config.hpp"
#include "dlp/extract.hpp"
#include "dlp/http_envelope.hpp"
#include "dlp/icap.hpp"
#include "dlp/incident.hpp"
#include "dlp/notify.hpp"
#include "dlp/snapshot.hpp"

// The running service: accept ICAP connections, drive the
// inspect -> decide -> act pipeline, audit every non-allow verdict.

namespace dlp {

struct TransactionOutcome {
  IcapResponse response;
  Verdict verdict;
  std::optional<Incident> incident;
  bool audit_failed = false;
};

namespace detail {

inline std::string target_of(const HttpEnvelope& env,
                             const std::string& req_hdr_section) {
  if (env.kind == HttpEnvelope::Kind::request) {
    const std::string* host = env.headers.get("Host");
    if (host && !env.target.starts_with("http"))
      return *host + env.target;
    return env.target;
  }
  // RESPMOD: recover the target from the request header section
  if (!req_hdr_section.empty()) {
    try {
      HttpEnvelope req =
          parse_http_envelope(req_hdr_section, HttpEnvelope::Kind::request);
      const std::string* host = req.headers.get("Host");
      if (host && !req.target.starts_with("http")) return *host + req.target;
      return req.target;
    } catch (const Error&) {
    }
  }
  return {};
}

inline bool is_textual_type(const MediaType& mt) {
  return is_textual_media(mt) || mt.type == "multipart";
}

}  // namespace detail

// Runs the Figure-style pipeline over one parsed ICAP transaction.
// Never throws: every fault inside becomes a block verdict.
inline TransactionOutcome process_transaction(const ResourceSnapshot& snap,
                                              const GatewayConfig& cfg,
                                              const IcapRequest& req,
                                              IncidentStore* store) {
  const Direction direction = req.method == IcapMethod::respmod
                                  ? Direction::inbound
                                  : Direction::outbound;
  ClientIdentity client = resolve_client_identity(req.headers, snap.mac_table);

  ActionContext ctx;
  ctx.incident_id = generate_ulid(now_ms());
  ctx.service_id = cfg.service_name;
  ctx.keys = &snap.keys;
  ctx.decoy_key_id = snap.decoy_key_id;

  TransactionOutcome out;
  std::string target;
  uint64_t bytes_inspected = 0;
  HttpEnvelope env;

  try {
    const std::string& section = req.method == IcapMethod::respmod
                                     ? req.enc_res_hdr
                                     : req.enc_req_hdr;
    if (section.empty())
      throw Error(Errc::malformed_http_header,
                  "transaction carries no HTTP header section");
    env = parse_http_envelope(
        section + req.body, req.method == IcapMethod::respmod
                                ? HttpEnvelope::Kind::response
                                : HttpEnvelope::Kind::request);
    target = detail::target_of(env, req.enc_req_hdr);
    bytes_inspected = env.body.size();

    // Opacity triage; Figure-5 branch: encrypted payloads are decrypted
    // under enterprise keys or the transaction is blocked.
    OpacityStatus opacity;
    bool treat_as_text = false;
    if (!env.body.empty()) {
      for (int round = 0; round < 2; ++round) {
        OpacityVerdict ov = classify_opacity(env.body);
        if (ov.cls == OpacityClass::compressed) {
          auto plain = detail::gunzip(env.body);
          if (!plain) break;  // unsupported container; stays opaque
          env.body = std::move(*plain);
          treat_as_text = true;  // re-inspect decompressed content
          continue;
        }
        if (ov.cls == OpacityClass::encrypted_or_unknown) {
          OpenResult res = open_envelope(env.body, snap.keys);
          if (res.status == OpenStatus::ok) {
            // decrypted content re-enters extraction
            env.body = std::move(res.plaintext);
            treat_as_text = true;
            continue;
          }
          opacity.undecryptable = true;
          opacity.auth_failure = res.status == OpenStatus::auth_failure;
        }
        break;
      }
    }
    if (treat_as_text && !detail::is_textual_type(env.content_type) &&
        !opacity.undecryptable) {
      env.content_type = MediaType{"text", "plain", {}};
      env.body_opaque = false;
    }

    ExtractedContent content = extract_text(env);
    if (content.structural_error)
      throw Error(Errc::malformed_http_header,
                  "structural fault in body framing");

    std::vector<Detection> detections;
    for (const auto& [name, matcher] : snap.rulesets) {
      auto hits = scan_keywords(matcher, content, name);
      detections.insert(detections.end(), hits.begin(), hits.end());
    }
    for (const auto& [name, index] : snap.corpora) {
      auto hits = fingerprint_scan(index, content, name,
                                   snap.min_fingerprint_threshold(name));
      detections.insert(detections.end(), hits.begin(), hits.end());
    }
    for (const auto& [name, registry] : snap.tags) {
      auto hits = registry.scan(content, name);
      detections.insert(detections.end(), hits.begin(), hits.end());
    }
    if (!snap.models.empty()) {
      std::string all_text = joined_text(content);
      for (const auto& [name, model] : snap.models) {
        Detection d;
        d.detector = DetectorKind::classifier;
        d.resource = name;
        d.rule_id = "posterior";
        d.confidence = classify(model, all_text);
        d.snippet = clip_snippet(all_text);
        detections.push_back(std::move(d));
      }
    }

    out.verdict = evaluate(snap.policy, detections, direction, opacity);
  } catch (const std::exception& e) {
    out.verdict.action = Action::block;
    out.verdict.severity = Severity::critical;
    out.verdict.rationale = std::string("internal-error: ") + e.what();
  }

  ActionOutcome acted = apply_action(out.verdict, env, ctx);
  if (acted.failed_closed) {
    out.verdict.action = Action::block;
    out.verdict.rationale += "; body rewrite failed, blocked";
  }
  out.response = std::move(acted.response);

  if (out.verdict.action != Action::allow) {
    Incident inc;
    inc.id = ctx.incident_id;
    inc.timestamp_ms = now_ms();
    inc.direction = direction;
    inc.client = std::move(client);
    inc.target = target;
    inc.action = out.verdict.action;
    inc.severity = out.verdict.severity;
    for (const auto& [rule_id, det] : out.verdict.fired)
      inc.fired.push_back(
          {rule_id, det.detector, det.confidence, clip_snippet(det.snippet)});
    inc.bytes_inspected = bytes_inspected;
    out.incident = inc;
    if (store) {
      try {
        store->append(inc);
      } catch (const Error&) {
        out.audit_failed = true;
        if (cfg.mandatory_audit && out.verdict.action != Action::block) {
          // an unauditable verdict may not pass traffic
          out.verdict.action = Action::block;
          out.verdict.rationale += "; audit unavailable, blocked";
          ActionOutcome blocked = apply_action(out.verdict, env, ctx);
          out.response = std::move(blocked.response);
        }
      }
    }
  }
  return out;
}

inline IcapResponse handle_options(const IcapRequest& req,
                                   const GatewayConfig& cfg) {
  std::string path;
  size_t scheme = req.uri.find("://");
  if (scheme != std::string::npos) {
    size_t slash = req.uri.find('/', scheme + 3);
    path = slash == std::string::npos ? "/" : req.uri.substr(slash);
  } else {
    path = req.uri;
  }
  IcapResponse resp;
  if (path == "/reqmod" || path == "/respmod") {
    resp.status = 200;
    resp.reason = icap_reason_for(200);
    resp.headers.add("Methods", path == "/reqmod" ? "REQMOD" : "RESPMOD");
    resp.headers.add("Service", cfg.service_name + " DLP gateway");
    resp.headers.add("ISTag", cfg.service_name);
    resp.headers.add("Allow", "204");
    resp.headers.add("Preview", std::to_string(cfg.preview_size));
  } else {
    resp = make_icap_error(404, cfg.service_name);
  }
  return resp;
}

// Serialized notification dispatch so connection handlers never wait on a
// sink.
class NotifyDispatcher {
public:
  NotifyDispatcher() : worker_([this] { run(); }) {}

  ~NotifyDispatcher() { shutdown(); }

  void enqueue(std::vector<SinkConfig> sinks, nlohmann::json incident) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      queue_.push_back({std::move(sinks), std::move(incident)});
    }
    cv_.notify_one();
  }

  // Blocks until everything queued so far has been attempted.
  void flush() {
    std::unique_lock<std::mutex> lock(mu_);
    idle_cv_.wait(lock, [this] { return queue_.empty() && !busy_; });
  }

  void shutdown() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      if (stopping_) return;
      stopping_ = true;
    }
    cv_.notify_all();
    if (worker_.joinable()) worker_.join();
  }

private:
  struct Job {
    std::vector<SinkConfig> sinks;
    nlohmann::json incident;
  };

  void run() {
    while (true) {
      Job job;
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
        if (queue_.empty()) {
          if (stopping_) return;
          continue;
        }
        job = std::move(queue_.front());
        queue_.pop_front();
        busy_ = true;
      }
      notify(job.sinks, job.incident);  // delivery failures stay in records
      {
        std::lock_guard<std::mutex> lock(mu_);
        busy_ = false;
      }
      idle_cv_.notify_all();
    }
  }

  std::mutex mu_;
  std::condition_variable cv_, idle_cv_;
  std::deque<Job> queue_;
  bool busy_ = false;
  bool stopping_ = false;
  std::thread worker_;
};

class GatewayServer {
public:
  explicit GatewayServer(GatewayConfig cfg)
      : cfg_(std::move(cfg)),
        store_(cfg_.incident_dir, cfg_.fsync_incidents) {
    snapshot_ = build_snapshot(cfg_);
  }

  ~GatewayServer() { stop(); }

  // Binds and starts accepting. Throws on bind/listen failure.
  void start() {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0)
      throw Error(Errc::io_failure, "socket: " + std::string(strerror(errno)));
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(cfg_.listen_port);
    if (::inet_pton(AF_INET, cfg_.listen_host.c_str(), &addr.sin_addr) != 1)
      throw Error(Errc::bad_config, "bad listen address: " + cfg_.listen_host);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
      std::string why = strerror(errno);
      ::close(listen_fd_);
      listen_fd_ = -1;
      throw Error(Errc::io_failure,
                  "cannot bind " + cfg_.listen_host + ":" +
                      std::to_string(cfg_.listen_port) + ": " + why);
    }
    if (::listen(listen_fd_, 64) != 0) {
      std::string why = strerror(errno);
      ::close(listen_fd_);
      listen_fd_ = -1;
      throw Error(Errc::io_failure, "listen: " + why);
    }
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    bound_port_ = ntohs(addr.sin_port);
    stopping_ = false;
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  // Graceful: stops accepting, lets in-flight transactions finish, idle
  // connections wind down on their next read timeout.
  void stop() {
    bool expected = false;
    if (!stopping_.compare_exchange_strong(expected, true)) {
      if (acceptor_.joinable()) acceptor_.join();
      return;
    }
    if (listen_fd_ >= 0) {
      ::shutdown(listen_fd_, SHUT_RDWR);
      ::close(listen_fd_);
      listen_fd_ = -1;
    }
    if (acceptor_.joinable()) acceptor_.join();
    {
      std::unique_lock<std::mutex> lock(mu_);
      drained_.wait(lock, [this] { return active_ == 0; });
    }
    dispatcher_.flush();
  }

  // Swaps in a freshly built snapshot; a failed build keeps the old one.
  bool reload() {
    try {
      auto fresh = build_snapshot(cfg_);
      std::lock_guard<std::mutex> lock(snap_mu_);
      snapshot_ = std::move(fresh);
      return true;
    } catch (const std::exception& e) {
      std::fprintf(stderr, "[dlpgw] reload rejected: %s\n", e.what());
      return false;
    }
  }

  uint16_t port() const { return bound_port_; }
  const GatewayConfig& config() const { return cfg_; }
  IncidentStore& incidents() { return store_; }
  NotifyDispatcher& dispatcher() { return dispatcher_; }

  std::shared_ptr<const ResourceSnapshot> snapshot() const {
    std::lock_guard<std::mutex> lock(snap_mu_);
    return snapshot_;
  }

private:
  void accept_loop() {
    while (!stopping_) {
      int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) {
        if (stopping_) break;
        if (errno == EINTR) continue;
        break;
      }
      if (active_ >= cfg_.max_connections) {
        std::string resp =
            serialize_icap_response(make_icap_error(500, cfg_.service_name));
        (void)!::write(fd, resp.data(), resp.size());
        ::close(fd);
        continue;
      }
      struct timeval tv {0, 250000};  // lets idle handlers notice stop()
      ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
      ++active_;
      std::thread([this, fd] {
        handle_connection(fd);
        {
          std::lock_guard<std::mutex> lock(mu_);
          --active_;
        }
        drained_.notify_all();
      }).detach();
    }
  }

  bool send_all(int fd, std::string_view data) {
    size_t sent = 0;
    while (sent < data.size()) {
      ssize_t n = ::send(fd, data.data() + sent, data.size() - sent,
                         MSG_NOSIGNAL);
      if (n <= 0) return false;
      sent += static_cast<size_t>(n);
    }
    return true;
  }

  enum class Fill { data, timeout, closed };

  Fill fill(int fd, std::string& buffer) {
    char chunk[16384];
    ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
    if (n > 0) {
      buffer.append(chunk, static_cast<size_t>(n));
      return Fill::data;
    }
    if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK))
      return Fill::timeout;
    return Fill::closed;
  }

  static bool allows_204(const IcapRequest& req) {
    if (req.preview_size) return true;  // always permitted inside preview
    const std::string* allow = req.headers.get("Allow");
    return allow && allow->find("204") != std::string::npos;
  }

  void handle_connection(int fd) {
    IcapLimits limits;
    limits.max_message = cfg_.max_message_bytes;
    std::string buffer;
    while (true) {
      // accumulate one complete ICAP message
      std::optional<ParsedRequest> parsed;
      while (true) {
        try {
          parsed = parse_icap_request(buffer, limits);
        } catch (const Error& e) {
          int status = 400;
          switch (e.code()) {
            case Errc::unsupported_version: status = 505; break;
            case Errc::unknown_method: status = 501; break;
            case Errc::message_too_large: status = 500; break;
            default: status = 400;
          }
          send_all(fd, serialize_icap_response(
                           make_icap_error(status, cfg_.service_name)));
          ::close(fd);
          return;
        }
        if (parsed) break;
        Fill got = fill(fd, buffer);
        if (got == Fill::closed) { ::close(fd); return; }
        if (got == Fill::timeout && stopping_ && buffer.empty()) {
          ::close(fd);  // idle connection during shutdown
          return;
        }
      }
      bool was_preview = parsed->request.preview_size.has_value();
      buffer.erase(0, parsed->consumed);
      IcapRequest& req = parsed->request;

      // One snapshot per transaction, captured before any preview exchange.
      std::shared_ptr<const ResourceSnapshot> snap = snapshot();

      IcapResponse response;
      std::optional<TransactionOutcome> outcome;
      if (req.method == IcapMethod::options) {
        response = handle_options(req, cfg_);
      } else {
        // Preview negotiation: fingerprints and the classifier need the
        // full body, so an unfinished preview always continues.
        if (req.preview_size && !req.preview_ieof && req.has_body()) {
          if (!send_all(fd, "ICAP/1.0 100 Continue\r\n\r\n")) {
            ::close(fd);
            return;
          }
          ChunkDecoder rest(limits.max_message);
          while (!rest.done()) {
            size_t used = 0;
            try {
              used = rest.feed(buffer);
            } catch (const Error&) {
              send_all(fd, serialize_icap_response(
                               make_icap_error(400, cfg_.service_name)));
              ::close(fd);
              return;
            }
            buffer.erase(0, used);
            if (rest.done()) break;
            Fill got = fill(fd, buffer);
            if (got == Fill::closed) { ::close(fd); return; }
          }
          req.body += rest.body();
          req.preview_size.reset();
          req.preview_ieof = false;
        }
        outcome = process_transaction(*snap, cfg_, req, &store_);
        response = outcome->response;
        if (response.status == 204 && !was_preview && !allows_204(req)) {
          // client did not offer 204: echo the message unmodified instead
          IcapResponse echo;
          echo.status = 200;
          echo.reason = icap_reason_for(200);
          echo.headers.add("ISTag", cfg_.service_name);
          echo.enc_req_hdr = req.enc_req_hdr;
          echo.enc_res_hdr = req.enc_res_hdr;
          if (req.has_body()) {
            echo.body = req.body;
            echo.body_kind = req.method == IcapMethod::respmod
                                 ? IcapBodyKind::res_body
                                 : IcapBodyKind::req_body;
          }
          response = std::move(echo);
        }
      }

      if (!send_all(fd, serialize_icap_response(response))) {
        ::close(fd);
        return;
      }
      if (outcome && outcome->incident &&
          outcome->verdict.action >= Action::notify &&
          !snap->policy.sinks.empty()) {
        dispatcher_.enqueue(snap->policy.sinks,
                            incident_to_json(*outcome->incident));
      }
      const std::string* conn = req.headers.get("Connection");
      if (conn && iequals(trim(*conn), "close")) {
        ::close(fd);
        return;
      }
      if (stopping_ && buffer.empty()) {
        ::close(fd);
        return;
      }
    }
  }

  GatewayConfig cfg_;
  IncidentStore store_;
  NotifyDispatcher dispatcher_;
  mutable std::mutex snap_mu_;
  std::shared_ptr<const ResourceSnapshot> snapshot_;
  int listen_fd_ = -1;
  uint16_t bound_port_ = 0;
  std::atomic<bool> stopping_{false};
  std::atomic<size_t> active_{0};
  std::mutex mu_;
  std::condition_variable drained_;
  std::thread acceptor_;
};

// ---------------------------------------------------------------------------
// Signal-driven runner used by the CLI.

namespace detail {
inline std::atomic<bool> g_shutdown{false};
inline std::atomic<bool> g_reload{false};
inline void on_signal(int sig) {
  if (sig == SIGHUP) g_reload = true;
  else g_shutdown = true;
}
}  // namespace detail

// Runs until SIGINT/SIGTERM; SIGHUP reloads resources. Returns an exit code.
inline int serve(const GatewayConfig& cfg) {
  try {
    GatewayServer server(cfg);
    server.start();
    if (!cfg.pid_file.empty()) {
      std::ofstream pid(cfg.pid_file, std::ios::trunc);
      pid << ::getpid() << "\n";
    }
    std::fprintf(stderr, "[dlpgw] listening on %s:%u\n",
                 cfg.listen_host.c_str(), server.port());

    struct sigaction sa {};
    sa.sa_handler = detail::on_signal;
    ::sigaction(SIGINT, &sa, nullptr);
    ::sigaction(SIGTERM, &sa, nullptr);
    ::sigaction(SIGHUP, &sa, nullptr);
    ::signal(SIGPIPE, SIG_IGN);

    detail::g_shutdown = false;
    detail::g_reload = false;
    while (!detail::g_shutdown) {
      if (detail::g_reload.exchange(false)) {
        if (server.reload())
          std::fprintf(stderr, "[dlpgw] resources reloaded\n");
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    std::fprintf(stderr, "[dlpgw] draining and shutting down\n");
    server.stop();
    if (!cfg.pid_file.empty()) ::unlink(cfg.pid_file.c_str());
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "[dlpgw] fatal: %s\n", e.what());
    return 1;
  }
}

}  // namespace dlp
