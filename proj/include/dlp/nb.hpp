#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dlp/errors.hpp"
#include "dlp/text.hpp"

// Multinomial naive Bayes over whitespace tokens of normalized text, two
// classes: sensitive vs public. Small enough to verify by hand, which is
// exactly what the tests do.

namespace dlp {

enum class NBLabel { sensitive = 0, public_ = 1 };

class NBModel {
public:
  double alpha = 1.0;
  std::array<size_t, 2> doc_count{0, 0};
  std::array<size_t, 2> token_count{0, 0};
  std::array<double, 2> log_prior{0.0, 0.0};
  // token -> log P(token|class), Laplace-smoothed
  std::map<std::string, std::array<double, 2>> log_likelihood;

  size_t vocabulary_size() const { return log_likelihood.size(); }

  // Smoothing formula with count 0; applies to any token unseen in a class
  // (in-vocabulary or not).
  double unseen_log_likelihood(size_t cls) const {
    return std::log(alpha /
                    (static_cast<double>(token_count[cls]) +
                     alpha * static_cast<double>(vocabulary_size())));
  }

  double token_log_likelihood(const std::string& token, size_t cls) const {
    auto it = log_likelihood.find(token);
    if (it == log_likelihood.end()) return unseen_log_likelihood(cls);
    return it->second[cls];
  }
};

inline NBModel train_classifier(
    const std::vector<std::pair<NBLabel, std::string>>& corpus, double alpha) {
  if (corpus.empty()) throw Error(Errc::empty_corpus, "no training documents");
  if (alpha <= 0.0) throw Error(Errc::bad_config, "alpha must be positive");

  NBModel model;
  model.alpha = alpha;
  std::map<std::string, std::array<size_t, 2>> counts;
  for (const auto& [label, text] : corpus) {
    size_t cls = static_cast<size_t>(label);
    ++model.doc_count[cls];
    for (const auto& token : tokenize(normalize_text(text))) {
      auto [it, inserted] = counts.emplace(token, std::array<size_t, 2>{0, 0});
      ++it->second[cls];
      ++model.token_count[cls];
    }
  }
  if (model.doc_count[0] == 0)
    throw Error(Errc::missing_class, "no sensitive documents");
  if (model.doc_count[1] == 0)
    throw Error(Errc::missing_class, "no public documents");
  if (counts.empty())
    throw Error(Errc::empty_corpus, "corpus contains no tokens");

  const double total_docs =
      static_cast<double>(model.doc_count[0] + model.doc_count[1]);
  const double vocab = static_cast<double>(counts.size());
  for (size_t cls = 0; cls < 2; ++cls)
    model.log_prior[cls] =
        std::log(static_cast<double>(model.doc_count[cls]) / total_docs);
  for (const auto& [token, c] : counts) {
    std::array<double, 2> ll{};
    for (size_t cls = 0; cls < 2; ++cls)
      ll[cls] = std::log(
          (static_cast<double>(c[cls]) + alpha) /
          (static_cast<double>(model.token_count[cls]) + alpha * vocab));
    model.log_likelihood.emplace(token, ll);
  }
  return model;
}

// P(sensitive | text) with log-sum-exp normalization over both classes.
// `text` is expected in normalized form.
inline double classify(const NBModel& model, std::string_view text) {
  std::array<double, 2> score{model.log_prior[0], model.log_prior[1]};
  for (const auto& token : tokenize(text))
    for (size_t cls = 0; cls < 2; ++cls)
      score[cls] += model.token_log_likelihood(token, cls);
  double m = std::max(score[0], score[1]);
  double denom = std::exp(score[0] - m) + std::exp(score[1] - m);
  return std::exp(score[0] - m) / denom;
}

// Model file: every numeric value is decimal text with 17 significant
// digits, so rebuilds are byte-identical and loads are exact.
namespace detail {
inline std::string num17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
inline double parse17(const std::string& s) { return std::strtod(s.c_str(), nullptr); }
}  // namespace detail

inline nlohmann::json nb_to_json(const NBModel& model) {
  nlohmann::json doc;
  doc["alpha"] = detail::num17(model.alpha);
  doc["docs"] = {model.doc_count[0], model.doc_count[1]};
  doc["tokens"] = {model.token_count[0], model.token_count[1]};
  doc["log_prior"] = {detail::num17(model.log_prior[0]),
                      detail::num17(model.log_prior[1])};
  std::map<std::string, nlohmann::json> lik;
  for (const auto& [token, ll] : model.log_likelihood)
    lik[token] = {detail::num17(ll[0]), detail::num17(ll[1])};
  doc["likelihood"] = nlohmann::json(lik);
  return doc;
}

inline NBModel nb_from_json(const nlohmann::json& doc) {
  NBModel model;
  model.alpha = detail::parse17(doc.at("alpha").get<std::string>());
  model.doc_count = {doc.at("docs")[0].get<size_t>(),
                     doc.at("docs")[1].get<size_t>()};
  model.token_count = {doc.at("tokens")[0].get<size_t>(),
                       doc.at("tokens")[1].get<size_t>()};
  model.log_prior = {detail::parse17(doc.at("log_prior")[0].get<std::string>()),
                     detail::parse17(doc.at("log_prior")[1].get<std::string>())};
  for (const auto& [token, ll] : doc.at("likelihood").items())
    model.log_likelihood[token] = {
        detail::parse17(ll[0].template get<std::string>()),
        detail::parse17(ll[1].template get<std::string>())};
  return model;
}

inline void save_model(const NBModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io_failure, "cannot write model: " + path);
  out << nb_to_json(model).dump(0) << "\n";
}

inline NBModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_failure, "cannot open model: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return nb_from_json(nlohmann::json::parse(ss.str()));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::bad_config, "model parse: " + std::string(e.what()));
  }
}

}  // namespace dlp
