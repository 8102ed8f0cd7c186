#include "surveysim/scripted.hpp"

#include <cstring>
#include <optional>
#include <unordered_map>

#include "surveysim/errors.hpp"
#include "surveysim/fingerprint.hpp"

namespace surveysim {

namespace {

// Section markers of the shipped templates.
constexpr std::string_view kDirectDemoMarker =
    "The respondent's demographic details are as follows:\n";
constexpr std::string_view kClaimsimDemoMarker =
    "Below is a simulated demographic profile. Please respond as if you belong to this "
    "background:\n";
constexpr std::string_view kQuestionMarker = "# Question\n";
constexpr std::string_view kLabelChoicesMarker = "\n\n# Label Choices";
constexpr std::string_view kTaskMarker = "\n\n# Task";
constexpr std::string_view kContextMarker = "\n\n# Context";
constexpr std::string_view kClaimPromptMarker = "# Related Question\n";
constexpr std::string_view kSummaryPromptMarker = "# Claims\n";

std::optional<std::string> slice_between(std::string_view text, std::string_view begin_marker,
                                         std::string_view end_marker) {
  const auto begin = text.find(begin_marker);
  if (begin == std::string_view::npos) return std::nullopt;
  const auto content_begin = begin + begin_marker.size();
  const auto end = text.find(end_marker, content_begin);
  if (end == std::string_view::npos) return std::nullopt;
  return std::string(text.substr(content_begin, end - content_begin));
}

std::string demographic_block(const DemographicProfile& profile) {
  std::string block;
  for (const auto& [category, value] : profile.features) {
    block += "- " + category + ": " + value + "\n";
  }
  if (!block.empty()) block.pop_back();  // markers absorb the final newline
  return block;
}

struct CorpusIndex {
  std::unordered_map<std::string, std::string> respondent_by_block;
  std::unordered_map<std::string, const SurveyQuestion*> question_by_text;

  explicit CorpusIndex(const Corpus& corpus) {
    for (const auto& r : corpus.respondents) {
      respondent_by_block.emplace(demographic_block(r), r.respondent_id);
    }
    for (const auto& q : corpus.questions) {
      question_by_text.emplace(q.question, &q);
    }
  }

  const SurveyQuestion* question_of(std::string_view prompt) const {
    auto text = slice_between(prompt, kQuestionMarker, kLabelChoicesMarker);
    if (!text) return nullptr;
    auto it = question_by_text.find(*text);
    return it == question_by_text.end() ? nullptr : it->second;
  }

  std::optional<std::string> respondent_of(std::string_view prompt) const {
    auto block = slice_between(prompt, kDirectDemoMarker, kTaskMarker);
    if (!block) block = slice_between(prompt, kClaimsimDemoMarker, kContextMarker);
    if (!block) return std::nullopt;
    auto it = respondent_by_block.find(*block);
    if (it == respondent_by_block.end()) return std::nullopt;
    return it->second;
  }
};

bool is_claim_prompt(const GenerationRequest& r) {
  return r.prompt.find(kClaimPromptMarker) != std::string::npos;
}

bool is_summary_prompt(const GenerationRequest& r) {
  return r.prompt.find(kSummaryPromptMarker) != std::string::npos &&
         r.prompt.find("- Summary:") != std::string::npos;
}

std::string labeled_response(std::string_view label) {
  return "- Label: " + std::string(label) + "\n- Reasoning: scripted oracle response.";
}

}  // namespace

std::shared_ptr<ScriptedBackend> make_gold_backend(const Corpus& corpus) {
  auto backend = std::make_shared<ScriptedBackend>("scripted-gold");
  auto index = std::make_shared<CorpusIndex>(corpus);
  auto gold = std::make_shared<std::unordered_map<std::string, std::string>>();
  for (const auto& g : corpus.gold) {
    gold->emplace(g.respondent_id + "\x1f" + g.question_id, g.label);
  }

  backend->add_rule({is_claim_prompt, [](const GenerationRequest& r) {
                       return "- Claim: Scripted claim (sample " +
                              std::to_string(r.sample_index) + ").";
                     }});
  backend->add_rule({is_summary_prompt, [](const GenerationRequest&) {
                       return std::string("- Summary: Scripted summary of the claims above.");
                     }});
  backend->set_default([index, gold](const GenerationRequest& r) -> std::string {
    const SurveyQuestion* question = index->question_of(r.prompt);
    auto respondent = index->respondent_of(r.prompt);
    if (question == nullptr || !respondent) {
      throw BackendError(BackendError::Kind::script_miss,
                         "gold backend cannot identify the (respondent, question) pair");
    }
    auto it = gold->find(*respondent + "\x1f" + question->question_id);
    if (it == gold->end()) {
      throw BackendError(BackendError::Kind::script_miss,
                         "no gold answer for respondent " + *respondent + ", question " +
                             question->question_id);
    }
    return labeled_response(it->second);
  });
  return backend;
}

std::shared_ptr<ScriptedBackend> make_uniform_backend(const Corpus& corpus, std::uint64_t salt) {
  auto backend = std::make_shared<ScriptedBackend>("scripted-uniform");
  auto index = std::make_shared<CorpusIndex>(corpus);

  backend->add_rule({is_claim_prompt, [](const GenerationRequest& r) {
                       return "- Claim: Scripted claim (sample " +
                              std::to_string(r.sample_index) + ").";
                     }});
  backend->add_rule({is_summary_prompt, [](const GenerationRequest&) {
                       return std::string("- Summary: Scripted summary of the claims above.");
                     }});
  backend->set_default([index, salt](const GenerationRequest& r) -> std::string {
    const SurveyQuestion* question = index->question_of(r.prompt);
    if (question == nullptr) {
      throw BackendError(BackendError::Kind::script_miss,
                         "uniform backend cannot identify the question");
    }
    // Derived from the fingerprint so the draw is pure in the request.
    const Sha256Digest digest = sha256(fingerprint(r) + "/uniform/" + std::to_string(salt));
    std::uint64_t h = 0;
    std::memcpy(&h, digest.data(), sizeof(h));
    const auto& labels = question->labels;
    return labeled_response(labels[h % labels.size()]);
  });
  return backend;
}

std::shared_ptr<ScriptedBackend> make_fixed_backend(std::string response_text) {
  auto backend = std::make_shared<ScriptedBackend>("scripted-fixed");
  backend->set_default(
      [text = std::move(response_text)](const GenerationRequest&) { return text; });
  return backend;
}

}  // namespace surveysim
