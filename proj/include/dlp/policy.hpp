#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dlp/detect.hpp"
#include "dlp/envelope_crypto.hpp"
#include "dlp/errors.hpp"
#include "dlp/http_envelope.hpp"
#include "dlp/icap.hpp"
#include "dlp/keystore.hpp"
#include "dlp/text.hpp"

// Rules bind detector resources and thresholds to actions and severities;
// evaluation reduces a transaction's detections to one Verdict with
// strictest-wins action precedence.

namespace dlp {

enum class Action { allow = 0, allow_log = 1, notify = 2, encrypt_forward = 3, block = 4 };
enum class Severity { low = 0, medium = 1, high = 2, critical = 3 };
enum class Direction { outbound, inbound, both };

inline const char* action_name(Action a) {
  switch (a) {
    case Action::allow: return "allow";
    case Action::allow_log: return "allow_log";
    case Action::notify: return "notify";
    case Action::encrypt_forward: return "encrypt_forward";
    case Action::block: return "block";
  }
  return "?";
}

inline std::optional<Action> action_from_name(std::string_view s) {
  if (s == "allow") return Action::allow;
  if (s == "allow_log") return Action::allow_log;
  if (s == "notify") return Action::notify;
  if (s == "encrypt_forward") return Action::encrypt_forward;
  if (s == "block") return Action::block;
  return std::nullopt;
}

inline const char* severity_name(Severity s) {
  switch (s) {
    case Severity::low: return "low";
    case Severity::medium: return "medium";
    case Severity::high: return "high";
    case Severity::critical: return "critical";
  }
  return "?";
}

inline std::optional<Severity> severity_from_name(std::string_view s) {
  if (s == "low") return Severity::low;
  if (s == "medium") return Severity::medium;
  if (s == "high") return Severity::high;
  if (s == "critical") return Severity::critical;
  return std::nullopt;
}

inline const char* direction_name(Direction d) {
  switch (d) {
    case Direction::outbound: return "outbound";
    case Direction::inbound: return "inbound";
    case Direction::both: return "both";
  }
  return "?";
}

inline std::optional<Direction> direction_from_name(std::string_view s) {
  if (s == "outbound") return Direction::outbound;
  if (s == "inbound") return Direction::inbound;
  if (s == "both") return Direction::both;
  return std::nullopt;
}

inline std::optional<DetectorKind> detector_kind_from_name(std::string_view s) {
  if (s == "keyword") return DetectorKind::keyword;
  if (s == "regex") return DetectorKind::regex;
  if (s == "fingerprint") return DetectorKind::fingerprint;
  if (s == "tag") return DetectorKind::tag;
  if (s == "classifier") return DetectorKind::classifier;
  return std::nullopt;
}

struct Rule {
  std::string id;
  DetectorKind kind = DetectorKind::keyword;
  std::string resource;      // ruleset / corpus / registry / model name
  double threshold = 1.0;    // in (0, 1]
  Severity severity = Severity::medium;
  Action action = Action::notify;
  Direction direction = Direction::outbound;
  bool builtin = false;
};

struct SinkConfig {
  enum class Type { file, webhook };
  Type type = Type::file;
  std::string target;  // path or URL
};

struct PolicySet {
  std::vector<Rule> rules;
  std::vector<SinkConfig> sinks;
  static constexpr Action default_action = Action::allow;
};

// The resource names a policy may reference, gathered by the gateway from
// its loaded detector state.
struct ResourceCatalog {
  std::set<std::string> rulesets;
  std::set<std::string> corpora;
  std::set<std::string> tag_registries;
  std::set<std::string> models;

  bool has(DetectorKind kind, const std::string& name) const {
    switch (kind) {
      case DetectorKind::keyword:
      case DetectorKind::regex: return rulesets.count(name) > 0;
      case DetectorKind::fingerprint: return corpora.count(name) > 0;
      case DetectorKind::tag: return tag_registries.count(name) > 0;
      case DetectorKind::classifier: return models.count(name) > 0;
      case DetectorKind::opacity: return true;
    }
    return false;
  }
};

// Name of the always-present ruleset holding the starter PII patterns.
inline constexpr const char* kBuiltinRulesetName = "builtin";

inline std::vector<Rule> builtin_rules() {
  std::vector<Rule> rules;
  // Outbound payloads that classify encrypted and decrypt under no
  // enterprise key are blocked unconditionally.
  Rule undecryptable;
  undecryptable.id = "builtin.undecryptable-outbound";
  undecryptable.kind = DetectorKind::opacity;
  undecryptable.threshold = 1.0;
  undecryptable.severity = Severity::critical;
  undecryptable.action = Action::block;
  undecryptable.direction = Direction::outbound;
  undecryptable.builtin = true;
  rules.push_back(std::move(undecryptable));
  // Starter rule: SSN / credit-card shaped strings.
  Rule pii;
  pii.id = "builtin.pii-regex";
  pii.kind = DetectorKind::regex;
  pii.resource = kBuiltinRulesetName;
  pii.threshold = 1.0;
  pii.severity = Severity::high;
  pii.action = Action::notify;
  pii.direction = Direction::both;
  pii.builtin = true;
  rules.push_back(std::move(pii));
  return rules;
}

// Pattern specs for the builtin ruleset; compiled by the gateway alongside
// operator rulesets.
inline std::vector<std::pair<std::string, std::string>> builtin_pii_patterns() {
  return {
      {"ssn", R"(\b\d{3}-\d{2}-\d{4}\b)"},
      {"credit-card", R"(\b(?:\d[ -]?){12,15}\d\b)"},
  };
}

inline PolicySet load_policy(const std::string& text,
                             const ResourceCatalog& catalog) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::bad_config, "policy parse: " + std::string(e.what()));
  }
  PolicySet ps;
  ps.rules = builtin_rules();
  std::set<std::string> seen_ids;
  for (const auto& r : ps.rules) seen_ids.insert(r.id);

  if (doc.contains("default_action") &&
      doc["default_action"].get<std::string>() != "allow")
    throw Error(Errc::bad_config, "default_action must be allow");

  for (const auto& jr : doc.value("rules", nlohmann::json::array())) {
    Rule rule;
    rule.id = jr.at("id").get<std::string>();
    if (rule.id.empty()) throw Error(Errc::bad_config, "rule with empty id");
    if (!seen_ids.insert(rule.id).second)
      throw Error(Errc::duplicate_rule_id, "duplicate rule id: " + rule.id);
    auto kind = detector_kind_from_name(jr.at("detector").get<std::string>());
    if (!kind)
      throw Error(Errc::bad_config,
                  "unknown detector kind in rule " + rule.id);
    rule.kind = *kind;
    rule.resource = jr.at("resource").get<std::string>();
    if (!catalog.has(rule.kind, rule.resource))
      throw Error(Errc::unknown_detector_ref,
                  "rule " + rule.id + " references unknown resource '" +
                      rule.resource + "'");
    rule.threshold = jr.value("threshold", 1.0);
    if (!(rule.threshold > 0.0 && rule.threshold <= 1.0))
      throw Error(Errc::threshold_out_of_range,
                  "rule " + rule.id + " threshold must be in (0,1]");
    auto sev = severity_from_name(jr.value("severity", "medium"));
    if (!sev) throw Error(Errc::bad_config, "bad severity in rule " + rule.id);
    rule.severity = *sev;
    auto act = action_from_name(jr.at("action").get<std::string>());
    if (!act || *act == Action::allow)
      throw Error(Errc::bad_config, "bad action in rule " + rule.id);
    rule.action = *act;
    auto dir = direction_from_name(jr.value("direction", "outbound"));
    if (!dir) throw Error(Errc::bad_config, "bad direction in rule " + rule.id);
    rule.direction = *dir;
    ps.rules.push_back(std::move(rule));
  }

  for (const auto& js : doc.value("notification_sinks", nlohmann::json::array())) {
    SinkConfig sink;
    std::string type = js.at("type").get<std::string>();
    if (type == "file") {
      sink.type = SinkConfig::Type::file;
      sink.target = js.at("path").get<std::string>();
    } else if (type == "webhook") {
      sink.type = SinkConfig::Type::webhook;
      sink.target = js.at("url").get<std::string>();
    } else {
      throw Error(Errc::bad_config, "unknown sink type: " + type);
    }
    ps.sinks.push_back(std::move(sink));
  }
  return ps;
}

inline PolicySet load_policy_file(const std::string& path,
                                  const ResourceCatalog& catalog) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_failure, "cannot open policy: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_policy(ss.str(), catalog);
}

// ---------------------------------------------------------------------------
// Evaluation

struct Verdict {
  Action action = Action::allow;
  Severity severity = Severity::low;
  std::vector<std::pair<std::string, Detection>> fired;  // (rule id, hit)
  std::string rationale;
};

struct OpacityStatus {
  bool undecryptable = false;  // encrypted_or_unknown and no enterprise key
  bool auth_failure = false;   // key present but authentication failed
};

inline bool direction_matches(Direction rule_dir, Direction txn_dir) {
  return rule_dir == Direction::both || rule_dir == txn_dir;
}

inline Verdict evaluate(const PolicySet& ps,
                        const std::vector<Detection>& detections,
                        Direction txn_direction,
                        const OpacityStatus& opacity = {}) {
  Verdict verdict;
  for (const auto& rule : ps.rules) {
    if (!direction_matches(rule.direction, txn_direction)) continue;
    if (rule.kind == DetectorKind::opacity) {
      if (opacity.undecryptable) {
        Detection d;
        d.detector = DetectorKind::opacity;
        d.rule_id = opacity.auth_failure ? "authentication-failure"
                                         : "undecryptable-payload";
        d.confidence = 1.0;
        verdict.fired.emplace_back(rule.id, std::move(d));
        if (rule.action > verdict.action) verdict.action = rule.action;
        if (rule.severity > verdict.severity) verdict.severity = rule.severity;
      }
      continue;
    }
    for (const auto& det : detections) {
      if (det.detector != rule.kind || det.resource != rule.resource) continue;
      if (det.confidence < rule.threshold) continue;
      verdict.fired.emplace_back(rule.id, det);
      if (rule.action > verdict.action) verdict.action = rule.action;
      if (rule.severity > verdict.severity) verdict.severity = rule.severity;
    }
  }
  if (verdict.fired.empty()) {
    verdict.action = PolicySet::default_action;
    verdict.rationale = "no rules fired";
  } else {
    verdict.rationale = std::to_string(verdict.fired.size()) +
                        " rule hit(s); strictest action " +
                        action_name(verdict.action);
  }
  return verdict;
}

// ---------------------------------------------------------------------------
// Client identity

struct ClientIdentity {
  std::string ip;
  std::string mac;
  std::string user;

  friend bool operator==(const ClientIdentity&, const ClientIdentity&) = default;
};

class MacTable {
public:
  void add(std::string ip, std::string mac) {
    table_[std::move(ip)] = std::move(mac);
  }

  const std::string* find(const std::string& ip) const {
    auto it = table_.find(ip);
    return it == table_.end() ? nullptr : &it->second;
  }

  size_t size() const { return table_.size(); }

  // Lines of "ip<TAB>mac"; '#' starts a comment.
  static MacTable load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::io_failure, "cannot open mac table: " + path);
    MacTable t;
    std::string line;
    while (std::getline(in, line)) {
      std::string_view sv = trim(line);
      if (sv.empty() || sv.front() == '#') continue;
      size_t tab = sv.find('\t');
      if (tab == std::string_view::npos)
        throw Error(Errc::bad_config, "mac table line missing tab: " + line);
      t.add(std::string(trim(sv.substr(0, tab))),
            std::string(trim(sv.substr(tab + 1))));
    }
    return t;
  }

private:
  std::map<std::string, std::string> table_;
};

// The proxy names the client in ICAP headers; the MAC comes from an
// operator-maintained snapshot since layer-2 identity is not visible here.
inline ClientIdentity resolve_client_identity(const HeaderMap& icap_headers,
                                              const MacTable& mac_table) {
  ClientIdentity id;
  if (const std::string* ip = icap_headers.get("X-Client-IP"))
    id.ip = trim(*ip);
  if (const std::string* user = icap_headers.get("X-Authenticated-User")) {
    std::string decoded = base64_decode(trim(*user));
    id.user = decoded.empty() ? std::string(trim(*user)) : decoded;
    // squid appends a newline inside the encoded value
    while (!id.user.empty() && (id.user.back() == '\n' || id.user.back() == '\r'))
      id.user.pop_back();
  }
  if (!id.ip.empty())
    if (const std::string* mac = mac_table.find(id.ip)) id.mac = *mac;
  return id;
}

// ---------------------------------------------------------------------------
// Actions

struct ActionContext {
  std::string incident_id;  // opaque id named on the block page
  std::string service_id = "dlpgw";
  const KeyStore* keys = nullptr;
  std::string decoy_key_id;  // raw 16 bytes
};

// Decoy encryption: the payload the upstream sees is a DLP1 envelope only
// the enterprise can open.
inline std::string encrypt_decoy(std::string_view body,
                                 std::string_view key_id,
                                 std::string_view key) {
  return seal_envelope(body, key_id, key);
}

namespace detail {

inline std::string rebuild_http_header_block(const HttpEnvelope& env,
                                             size_t new_content_length) {
  std::string out;
  if (env.kind == HttpEnvelope::Kind::request) {
    out = env.method + " " + env.target + " " + env.version + "\r\n";
  } else {
    out = env.version + " " + std::to_string(env.status) + " " + env.reason +
          "\r\n";
  }
  for (const auto& [name, value] : env.headers) {
    if (iequals(name, "Content-Length") || iequals(name, "Content-Encoding") ||
        iequals(name, "Transfer-Encoding"))
      continue;
    out += name + ": " + value + "\r\n";
  }
  out += "Content-Length: " + std::to_string(new_content_length) + "\r\n\r\n";
  return out;
}

inline IcapResponse block_response(const ActionContext& ctx) {
  std::string page =
      "<html><head><title>Request blocked</title></head><body>\n"
      "<h1>403 Forbidden</h1>\n"
      "<p>This request was blocked by your organization's data protection "
      "policy.</p>\n"
      "<p>Incident reference: " +
      ctx.incident_id +
      "</p>\n"
      "</body></html>\n";
  std::string hdr =
      "HTTP/1.1 403 Forbidden\r\n"
      "Content-Type: text/html\r\n"
      "Content-Length: " +
      std::to_string(page.size()) +
      "\r\n"
      "Cache-Control: no-store\r\n\r\n";
  IcapResponse resp;
  resp.status = 200;
  resp.reason = icap_reason_for(200);
  resp.headers.add("ISTag", ctx.service_id);
  resp.enc_res_hdr = std::move(hdr);
  resp.body = std::move(page);
  resp.body_kind = IcapBodyKind::res_body;
  return resp;
}

}  // namespace detail

struct ActionOutcome {
  IcapResponse response;
  bool forwarded_decoy = false;
  bool failed_closed = false;  // body rewrite failed; demoted to block
};

// Maps the verdict onto the wire: allow-family verdicts pass the message
// unmodified (204), block substitutes a 403 page, encrypt_forward rewrites
// the body into a decoy envelope. Rewrite failures fail closed to block.
inline ActionOutcome apply_action(const Verdict& verdict,
                                  const HttpEnvelope& env,
                                  const ActionContext& ctx) {
  ActionOutcome outcome;
  switch (verdict.action) {
    case Action::allow:
    case Action::allow_log:
    case Action::notify: {
      IcapResponse resp;
      resp.status = 204;
      resp.reason = icap_reason_for(204);
      resp.headers.add("ISTag", ctx.service_id);
      outcome.response = std::move(resp);
      return outcome;
    }
    case Action::block: {
      outcome.response = detail::block_response(ctx);
      return outcome;
    }
    case Action::encrypt_forward: {
      try {
        if (!ctx.keys || ctx.decoy_key_id.size() != kEnvelopeKeyIdLen)
          throw Error(Errc::body_rewrite_failure, "no decoy key configured");
        const std::string* key = ctx.keys->find(ctx.decoy_key_id);
        if (!key)
          throw Error(Errc::body_rewrite_failure, "decoy key id not in store");
        if (env.body_opaque && env.content_encoding)
          throw Error(Errc::body_rewrite_failure,
                      "cannot rewrite undecodable body");
        std::string envelope = encrypt_decoy(env.body, ctx.decoy_key_id, *key);
        IcapResponse resp;
        resp.status = 200;
        resp.reason = icap_reason_for(200);
        resp.headers.add("ISTag", ctx.service_id);
        std::string hdr =
            detail::rebuild_http_header_block(env, envelope.size());
        if (env.kind == HttpEnvelope::Kind::request) {
          resp.enc_req_hdr = std::move(hdr);
          resp.body_kind = IcapBodyKind::req_body;
        } else {
          resp.enc_res_hdr = std::move(hdr);
          resp.body_kind = IcapBodyKind::res_body;
        }
        resp.body = std::move(envelope);
        outcome.response = std::move(resp);
        outcome.forwarded_decoy = true;
        return outcome;
      } catch (const Error&) {
        outcome.response = detail::block_response(ctx);
        outcome.failed_closed = true;
        return outcome;
      }
    }
  }
  outcome.response = detail::block_response(ctx);
  outcome.failed_closed = true;
  return outcome;
}

}  // namespace dlp
