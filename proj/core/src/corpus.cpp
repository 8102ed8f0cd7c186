#include "surveysim/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "surveysim/errors.hpp"
#include "surveysim/fingerprint.hpp"

namespace surveysim {

using nlohmann::ordered_json;

std::string_view to_string(Domain domain) {
  switch (domain) {
    case Domain::gender: return "gender";
    case Domain::politics: return "politics";
    case Domain::religion: return "religion";
  }
  return "?";
}

Domain domain_from_string(std::string_view text) {
  for (Domain d : kAllDomains) {
    if (text == to_string(d)) return d;
  }
  throw ValidationError("unknown domain '" + std::string(text) +
                        "' (expected gender, politics or religion)");
}

std::string_view to_string(BinaryStance stance) {
  return stance == BinaryStance::agree ? "agree" : "disagree";
}

BinaryStance stance_from_string(std::string_view text) {
  if (text == "agree") return BinaryStance::agree;
  if (text == "disagree") return BinaryStance::disagree;
  throw ValidationError("unknown binary stance '" + std::string(text) +
                        "' (expected agree or disagree)");
}

const std::string* DemographicProfile::find(std::string_view category) const {
  for (const auto& [cat, value] : features) {
    if (cat == category) return &value;
  }
  return nullptr;
}

std::optional<std::size_t> SurveyQuestion::label_index(std::string_view label) const {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) return i;
  }
  return std::nullopt;
}

std::string normalize_label(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

namespace {

std::string gold_key(std::string_view respondent_id, std::string_view question_id) {
  std::string key(respondent_id);
  key.push_back('\x1f');
  key.append(question_id);
  return key;
}

[[noreturn]] void parse_fail(std::string_view origin, const std::string& what) {
  throw ParseError(std::string(origin) + ": " + what);
}

std::size_t line_of_offset(std::string_view text, std::size_t byte_offset) {
  byte_offset = std::min(byte_offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + byte_offset, '\n'));
}

const ordered_json& require(const ordered_json& obj, const char* key, std::string_view origin,
                            const std::string& locus) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    parse_fail(origin, locus + ": missing key \"" + key + "\"");
  }
  return *it;
}

std::string require_string(const ordered_json& obj, const char* key, std::string_view origin,
                           const std::string& locus) {
  const auto& value = require(obj, key, origin, locus);
  if (!value.is_string()) {
    parse_fail(origin, locus + ": key \"" + key + "\" must be a string");
  }
  return value.get<std::string>();
}

const ordered_json& require_array(const ordered_json& obj, const char* key,
                                  std::string_view origin, const std::string& locus) {
  const auto& value = require(obj, key, origin, locus);
  if (!value.is_array()) {
    parse_fail(origin, locus + ": key \"" + key + "\" must be an array");
  }
  return value;
}

}  // namespace

const SurveyQuestion* Corpus::question(std::string_view question_id) const {
  auto it = question_index_.find(std::string(question_id));
  return it == question_index_.end() ? nullptr : &questions[it->second];
}

const DemographicProfile* Corpus::respondent(std::string_view respondent_id) const {
  auto it = respondent_index_.find(std::string(respondent_id));
  return it == respondent_index_.end() ? nullptr : &respondents[it->second];
}

const GoldAnswer* Corpus::gold_for(std::string_view respondent_id,
                                   std::string_view question_id) const {
  auto it = gold_index_.find(gold_key(respondent_id, question_id));
  return it == gold_index_.end() ? nullptr : &gold[it->second];
}

std::size_t Corpus::question_count(Domain domain) const {
  return static_cast<std::size_t>(
      std::count_if(questions.begin(), questions.end(),
                    [&](const SurveyQuestion& q) { return q.domain == domain; }));
}

void Corpus::reindex() {
  question_index_.clear();
  respondent_index_.clear();
  gold_index_.clear();
  for (std::size_t i = 0; i < questions.size(); ++i) {
    question_index_.emplace(questions[i].question_id, i);
  }
  for (std::size_t i = 0; i < respondents.size(); ++i) {
    respondent_index_.emplace(respondents[i].respondent_id, i);
  }
  for (std::size_t i = 0; i < gold.size(); ++i) {
    gold_index_.emplace(gold_key(gold[i].respondent_id, gold[i].question_id), i);
  }
}

void validate(const Corpus& corpus) {
  if (corpus.questions.empty()) {
    throw ValidationError("corpus has no questions");
  }

  std::set<std::string> question_ids;
  for (const auto& q : corpus.questions) {
    const std::string locus = "question " + q.question_id;
    if (!question_ids.insert(q.question_id).second) {
      throw ValidationError(locus + ": duplicate question id");
    }
    if (q.labels.size() < 2) {
      throw ValidationError(locus + ": needs at least 2 ordinal labels");
    }
    std::set<std::string> seen;
    for (const auto& label : q.labels) {
      if (label != normalize_label(label)) {
        throw ValidationError(locus + ": label '" + label + "' is not normalized");
      }
      if (!seen.insert(label).second) {
        throw ValidationError(locus + ": labels are not distinct ('" + label + "')");
      }
    }
    // binary_map must cover every label exactly once, nothing else.
    for (const auto& label : q.labels) {
      if (!q.binary_map.contains(label)) {
        throw ValidationError(locus + ": binary_map does not cover label '" + label + "'");
      }
    }
    if (q.binary_map.size() != q.labels.size()) {
      for (const auto& [label, stance] : q.binary_map) {
        if (!seen.contains(label)) {
          throw ValidationError(locus + ": binary_map names unknown label '" + label + "'");
        }
      }
    }
  }

  std::set<std::string> respondent_ids;
  for (const auto& r : corpus.respondents) {
    const std::string locus = "respondent " + r.respondent_id;
    if (!respondent_ids.insert(r.respondent_id).second) {
      throw ValidationError(locus + ": duplicate respondent id");
    }
    std::set<std::string> categories;
    for (const auto& [category, value] : r.features) {
      if (!categories.insert(category).second) {
        throw ValidationError(locus + ": duplicate demographic category '" + category + "'");
      }
    }
  }

  for (std::size_t i = 0; i < corpus.gold.size(); ++i) {
    const auto& g = corpus.gold[i];
    const std::string locus = "gold[" + std::to_string(i) + "] (respondent " + g.respondent_id +
                              ", question " + g.question_id + ")";
    const SurveyQuestion* q = corpus.question(g.question_id);
    if (q == nullptr) {
      throw ValidationError(locus + ": references unknown question");
    }
    if (corpus.respondent(g.respondent_id) == nullptr) {
      throw ValidationError(locus + ": references unknown respondent");
    }
    if (!q->label_index(g.label)) {
      throw ValidationError(locus + ": label '" + g.label +
                            "' is not one of the question's labels");
    }
  }
}

Corpus parse_corpus(std::string_view text, std::string_view origin) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(text);
  } catch (const ordered_json::parse_error& e) {
    parse_fail(origin, "line " + std::to_string(line_of_offset(text, e.byte)) + ": " + e.what());
  }
  if (!doc.is_object()) {
    parse_fail(origin, "top level must be an object with questions/respondents/gold");
  }

  Corpus corpus;

  for (const auto& jq : require_array(doc, "questions", origin, "top level")) {
    SurveyQuestion q;
    q.question_id = require_string(jq, "id", origin, "question record");
    const std::string locus = "question " + q.question_id;
    q.domain = domain_from_string(require_string(jq, "domain", origin, locus));
    q.instruction = require_string(jq, "instruction", origin, locus);
    q.question = require_string(jq, "question", origin, locus);
    const auto& jlabels = require(jq, "labels", origin, locus);
    if (!jlabels.is_array()) parse_fail(origin, locus + ": \"labels\" must be an array");
    for (const auto& jl : jlabels) {
      q.labels.push_back(normalize_label(jl.get<std::string>()));
    }
    const auto& jmap = require(jq, "binary_map", origin, locus);
    if (!jmap.is_object()) parse_fail(origin, locus + ": \"binary_map\" must be an object");
    for (const auto& [key, value] : jmap.items()) {
      q.binary_map[normalize_label(key)] = stance_from_string(value.get<std::string>());
    }
    corpus.questions.push_back(std::move(q));
  }

  for (const auto& jr : require_array(doc, "respondents", origin, "top level")) {
    DemographicProfile r;
    r.respondent_id = require_string(jr, "id", origin, "respondent record");
    const std::string locus = "respondent " + r.respondent_id;
    const auto& jdemo = require(jr, "demographics", origin, locus);
    if (!jdemo.is_array()) {
      parse_fail(origin, locus + ": \"demographics\" must be an array of [category, value] pairs");
    }
    for (const auto& jpair : jdemo) {
      if (!jpair.is_array() || jpair.size() != 2) {
        parse_fail(origin, locus + ": demographics entries must be [category, value] pairs");
      }
      r.features.emplace_back(jpair[0].get<std::string>(), jpair[1].get<std::string>());
    }
    corpus.respondents.push_back(std::move(r));
  }

  for (const auto& jg : require_array(doc, "gold", origin, "top level")) {
    GoldAnswer g;
    g.respondent_id = require_string(jg, "respondent_id", origin, "gold record");
    g.question_id = require_string(jg, "question_id", origin, "gold record");
    g.label = normalize_label(require_string(jg, "label", origin, "gold record"));
    corpus.gold.push_back(std::move(g));
  }

  corpus.reindex();
  validate(corpus);
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open corpus file: " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_corpus(buffer.str(), path.string());
}

std::string serialize_corpus(const Corpus& corpus) {
  ordered_json doc;
  doc["questions"] = ordered_json::array();
  for (const auto& q : corpus.questions) {
    ordered_json jq;
    jq["id"] = q.question_id;
    jq["domain"] = to_string(q.domain);
    jq["instruction"] = q.instruction;
    jq["question"] = q.question;
    jq["labels"] = q.labels;
    ordered_json jmap = ordered_json::object();
    for (const auto& label : q.labels) {
      jmap[label] = to_string(q.binary_map.at(label));
    }
    jq["binary_map"] = std::move(jmap);
    doc["questions"].push_back(std::move(jq));
  }
  doc["respondents"] = ordered_json::array();
  for (const auto& r : corpus.respondents) {
    ordered_json jr;
    jr["id"] = r.respondent_id;
    jr["demographics"] = ordered_json::array();
    for (const auto& [category, value] : r.features) {
      jr["demographics"].push_back(ordered_json::array({category, value}));
    }
    doc["respondents"].push_back(std::move(jr));
  }
  doc["gold"] = ordered_json::array();
  for (const auto& g : corpus.gold) {
    doc["gold"].push_back(
        ordered_json{{"respondent_id", g.respondent_id}, {"question_id", g.question_id},
                     {"label", g.label}});
  }
  return doc.dump(2) + "\n";
}

std::string corpus_checksum(const Corpus& corpus) { return sha256_hex(serialize_corpus(corpus)); }

std::vector<DemographicProfile> sample_respondents(const Corpus& corpus, std::size_t n,
                                                   std::uint64_t seed) {
  if (n == 0) {
    throw UsageError("sample size must be positive");
  }
  if (n > corpus.respondents.size()) {
    throw UsageError("sample size " + std::to_string(n) + " exceeds population of " +
                     std::to_string(corpus.respondents.size()) + " respondents");
  }
  std::vector<std::size_t> order(corpus.respondents.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  // Explicit Fisher-Yates over mt19937_64 rather than std::shuffle: the
  // standard fully specifies the engine but not std::shuffle's draw pattern,
  // and sampled prefixes must be reproducible across implementations.
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }

  std::vector<DemographicProfile> sampled;
  sampled.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    sampled.push_back(corpus.respondents[order[i]]);
  }
  return sampled;
}

BinaryStance binary_of(const SurveyQuestion& question, std::string_view label) {
  auto it = question.binary_map.find(std::string(label));
  if (it == question.binary_map.end()) {
    throw ValidationError("label '" + std::string(label) + "' is not on question " +
                          question.question_id + "'s scale");
  }
  return it->second;
}

}  // namespace surveysim
