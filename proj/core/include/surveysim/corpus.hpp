#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace surveysim {

enum class Domain { gender, politics, religion };

std::string_view to_string(Domain domain);
Domain domain_from_string(std::string_view text);
inline constexpr Domain kAllDomains[] = {Domain::gender, Domain::politics, Domain::religion};

enum class BinaryStance { agree, disagree };

std::string_view to_string(BinaryStance stance);
BinaryStance stance_from_string(std::string_view text);

/// One respondent: an id plus the ordered (category, value) pairs that make
/// up their demographic profile. Order is the file order and is preserved
/// end-to-end because prompt rendering iterates over it.
struct DemographicProfile {
  std::string respondent_id;
  std::vector<std::pair<std::string, std::string>> features;

  /// Value for a category, or nullptr if the profile lacks it.
  const std::string* find(std::string_view category) const;

  bool operator==(const DemographicProfile&) const = default;
};

/// One survey item. `labels` is the ordinal answer scale ordered from
/// strongest-affirmative to strongest-negative; `binary_map` collapses each
/// label to agree/disagree and is stored explicitly because some scales
/// ("should / should not") cannot be inferred from label text.
struct SurveyQuestion {
  std::string question_id;
  Domain domain = Domain::gender;
  std::string instruction;
  std::string question;
  std::vector<std::string> labels;
  std::map<std::string, BinaryStance> binary_map;

  std::optional<std::size_t> label_index(std::string_view label) const;

  bool operator==(const SurveyQuestion&) const = default;
};

struct GoldAnswer {
  std::string respondent_id;
  std::string question_id;
  std::string label;

  bool operator==(const GoldAnswer&) const = default;
};

struct Corpus {
  std::vector<SurveyQuestion> questions;
  std::vector<DemographicProfile> respondents;
  std::vector<GoldAnswer> gold;

  const SurveyQuestion* question(std::string_view question_id) const;
  const DemographicProfile* respondent(std::string_view respondent_id) const;
  const GoldAnswer* gold_for(std::string_view respondent_id, std::string_view question_id) const;
  std::size_t question_count(Domain domain) const;

  /// Rebuild the id lookup tables. Called by load/parse; call it again after
  /// mutating the record vectors directly (fixtures do).
  void reindex();

  bool operator==(const Corpus& other) const {
    return questions == other.questions && respondents == other.respondents && gold == other.gold;
  }

 private:
  std::unordered_map<std::string, std::size_t> question_index_;
  std::unordered_map<std::string, std::size_t> respondent_index_;
  std::unordered_map<std::string, std::size_t> gold_index_;
};

/// Lowercase, trim, collapse runs of internal whitespace. Applied to every
/// label-valued field at load time.
std::string normalize_label(std::string_view text);

Corpus load_corpus(const std::filesystem::path& path);

/// Parse corpus text; `origin` names the source in diagnostics.
Corpus parse_corpus(std::string_view text, std::string_view origin = "<memory>");

/// Canonical single-document serialization; parse_corpus(serialize_corpus(c))
/// reproduces `c` exactly.
std::string serialize_corpus(const Corpus& corpus);

/// Hex SHA-256 of the canonical serialization. Stable across load/serialize
/// round-trips; used to tie run directories to the corpus they were run on.
std::string corpus_checksum(const Corpus& corpus);

void validate(const Corpus& corpus);

/// Deterministic sample of n distinct respondents: Fisher-Yates shuffle of
/// the respondent list driven by mt19937_64(seed) with modulo draws, then
/// prefix-take. Identical (corpus, n, seed) yields an identical list.
std::vector<DemographicProfile> sample_respondents(const Corpus& corpus, std::size_t n,
                                                   std::uint64_t seed);

/// binary_map lookup; throws ValidationError for labels outside the scale.
BinaryStance binary_of(const SurveyQuestion& question, std::string_view label);

/// Human-readable statement of the sampling PRNG, echoed into report headers.
inline constexpr std::string_view kSamplerPrngSpec =
    "mt19937_64(seed), Fisher-Yates with modulo draws, prefix-take";

}  // namespace surveysim
