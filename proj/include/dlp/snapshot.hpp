#pragma once

#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "dlp/config.hpp"
#include "dlp/fingerprint.hpp"
#include "dlp/keystore.hpp"
#include "dlp/matcher.hpp"
#include "dlp/nb.hpp"
#include "dlp/policy.hpp"
#include "dlp/tags.hpp"

// Everything a transaction needs to reach a verdict, loaded once and shared
// immutably. Reload builds a fresh snapshot and swaps the pointer;
// transactions in flight keep the one they started with.

namespace dlp {

struct ResourceSnapshot {
  PolicySet policy;
  std::map<std::string, CompiledMatcher> rulesets;
  std::map<std::string, FingerprintIndex> corpora;
  std::map<std::string, TagRegistry> tags;
  std::map<std::string, NBModel> models;
  KeyStore keys;
  MacTable mac_table;
  std::string decoy_key_id;  // raw 16 bytes, empty when no keystore

  // Lowest threshold any rule puts on this corpus, so the scan reports
  // everything the policy could act on.
  double min_fingerprint_threshold(const std::string& corpus) const {
    double lo = 1.0;
    bool any = false;
    for (const auto& rule : policy.rules) {
      if (rule.kind != DetectorKind::fingerprint || rule.resource != corpus)
        continue;
      lo = std::min(lo, rule.threshold);
      any = true;
    }
    return any ? lo : 0.3;
  }
};

// Ruleset file: {"keywords": [{"id","pattern"}...], "regexes": [...]}
inline CompiledMatcher load_ruleset_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_failure, "cannot open ruleset: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::bad_config, "ruleset parse: " + std::string(e.what()));
  }
  std::vector<PatternSpec> keywords, regexes;
  for (const auto& k : doc.value("keywords", nlohmann::json::array()))
    keywords.push_back(
        {k.at("id").get<std::string>(), k.at("pattern").get<std::string>()});
  for (const auto& r : doc.value("regexes", nlohmann::json::array()))
    regexes.push_back(
        {r.at("id").get<std::string>(), r.at("pattern").get<std::string>()});
  return compile_ruleset(keywords, regexes);
}

inline std::shared_ptr<const ResourceSnapshot> build_snapshot(
    const GatewayConfig& cfg) {
  auto snap = std::make_shared<ResourceSnapshot>();

  {
    std::vector<PatternSpec> regexes;
    for (const auto& [id, pattern] : builtin_pii_patterns())
      regexes.push_back({id, pattern});
    snap->rulesets.emplace(kBuiltinRulesetName, compile_ruleset({}, regexes));
  }
  for (const auto& [name, path] : cfg.ruleset_paths) {
    if (name == kBuiltinRulesetName)
      throw Error(Errc::bad_config, "ruleset name 'builtin' is reserved");
    snap->rulesets.emplace(name, load_ruleset_file(path));
  }
  for (const auto& [name, path] : cfg.corpus_paths)
    snap->corpora.emplace(name, FingerprintIndex::load(path));
  for (const auto& [name, path] : cfg.tag_paths)
    snap->tags.emplace(name, TagRegistry::load(path));
  for (const auto& [name, path] : cfg.model_paths)
    snap->models.emplace(name, load_model(path));
  if (!cfg.keystore_path.empty()) {
    snap->keys = load_keystore(cfg.keystore_path);
    if (!cfg.decoy_key_id_hex.empty()) {
      snap->decoy_key_id = hex_decode(cfg.decoy_key_id_hex);
      if (!snap->keys.find(snap->decoy_key_id))
        throw Error(Errc::bad_config, "decoy_key_id not present in keystore");
    } else if (!snap->keys.empty()) {
      snap->decoy_key_id = snap->keys.entries().begin()->first;
    }
  }
  if (!cfg.mac_table_path.empty())
    snap->mac_table = MacTable::load(cfg.mac_table_path);

  ResourceCatalog catalog;
  for (const auto& [name, m] : snap->rulesets) catalog.rulesets.insert(name);
  for (const auto& [name, i] : snap->corpora) catalog.corpora.insert(name);
  for (const auto& [name, t] : snap->tags) catalog.tag_registries.insert(name);
  for (const auto& [name, m] : snap->models) catalog.models.insert(name);
  snap->policy = load_policy_file(cfg.policy_path, catalog);

  for (const auto& rule : snap->policy.rules)
    if (rule.action == Action::encrypt_forward && snap->decoy_key_id.empty())
      throw Error(Errc::bad_config,
                  "rule " + rule.id +
                      " uses encrypt_forward but no decoy key is available");
  return snap;
}

}  // namespace dlp
