#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "surveysim/backend.hpp"
#include "surveysim/corpus.hpp"
#include "surveysim/prompts.hpp"

namespace surveysim {

enum class MethodKind { direct, cot, claimsim };

std::string_view to_string(MethodKind method);
MethodKind method_from_string(std::string_view text);
inline constexpr MethodKind kAllMethods[] = {MethodKind::direct, MethodKind::cot,
                                             MethodKind::claimsim};

/// What the ClaimSim answer prompt's statements are built from: per-feature
/// claim summaries (default) or the raw claims with their counterpoints.
enum class ContextMode { summary, claims };

std::string_view to_string(ContextMode mode);
ContextMode context_mode_from_string(std::string_view text);

/// Claims elicited for one demographic feature, plus their summary.
/// counterpoints[i] aligns with claims[i] and is absent when the model's
/// response carried no counterpoint line.
struct ClaimBundle {
  std::pair<std::string, std::string> feature;
  std::vector<std::string> claims;
  std::vector<std::optional<std::string>> counterpoints;
  std::string summary;
};

/// One (respondent, question, method) prediction with provenance.
struct SimulationRecord {
  std::string respondent_id;
  std::string question_id;
  MethodKind method = MethodKind::direct;
  std::uint32_t repetition = 0;
  std::string raw_text;
  std::optional<std::string> parsed_label;
  std::optional<std::string> reasoning;
  std::vector<ClaimBundle> claim_bundles;  // claimsim only
  std::vector<std::string> fingerprints;
  std::string run_id;
};

struct ParsedAnswer {
  std::string label;
  std::optional<std::string> reasoning;
};

/// Find the first line shaped like an (optionally bulleted / emphasized)
/// "Label:" sigil, normalize what follows on that line, and require an exact
/// match against the scale. Reasoning is everything after the first
/// "Reasoning:" sigil. Absence of a usable label yields an empty optional;
/// this function never throws.
std::optional<ParsedAnswer> parse_label(std::string_view raw_text,
                                        std::span<const std::string> labels);

/// Rest-of-line after the first "Claim:" sigil, markup stripped.
std::optional<std::string> parse_claim(std::string_view raw_text);

/// Rest-of-line after the first "Counterpoint:" sigil, markup stripped.
std::optional<std::string> parse_counterpoint(std::string_view raw_text);

/// Everything after the first "Summary:" sigil (summaries may span lines).
std::optional<std::string> parse_summary(std::string_view raw_text);

struct SimulationOptions {
  std::string model = "scripted";
  double temperature = 0.7;
  std::uint32_t claims_per_feature = 5;
  /// Demographic categories ClaimSim elicits claims for, in this order.
  std::vector<std::string> feature_categories;
  ContextMode context_mode = ContextMode::summary;
  /// Re-asks (fresh sample_index, same prompt) after an unparseable answer.
  std::uint32_t max_reasks = 3;
  std::uint32_t answer_max_output = 2048;
  std::uint32_t claim_max_output = 1024;
  /// Repetition index; offsets sample indices so repetitions decode afresh.
  std::uint32_t repetition = 0;
};

SimulationRecord simulate_direct(const TemplateSet& templates, const DemographicProfile& profile,
                                 const SurveyQuestion& question, TextBackend& backend,
                                 const SimulationOptions& options = {});

SimulationRecord simulate_cot(const TemplateSet& templates, const DemographicProfile& profile,
                              const SurveyQuestion& question, TextBackend& backend,
                              const SimulationOptions& options = {});

/// k generation calls with sample_index base..base+k-1 (base is derived from
/// options.repetition); each parsed for its claim line, with a verbatim-text
/// fallback after bounded re-asks. The returned bundle's summary is empty.
ClaimBundle elicit_claims(const TemplateSet& templates,
                          const std::pair<std::string, std::string>& feature,
                          const SurveyQuestion& question, TextBackend& backend, std::uint32_t k,
                          const SimulationOptions& options = {});

/// One summary call; the whole response text is kept when the response
/// carries no summary sigil.
ClaimBundle summarize_claims(const TemplateSet& templates, ClaimBundle bundle,
                             TextBackend& backend, const SimulationOptions& options = {});

SimulationRecord simulate_claimsim(const TemplateSet& templates,
                                   const DemographicProfile& profile,
                                   const SurveyQuestion& question, TextBackend& backend,
                                   const SimulationOptions& options);

struct RunConfig {
  MethodKind method = MethodKind::direct;
  std::string model = "scripted";
  double temperature = 0.7;
  std::uint64_t seed = 7;
  /// Number of respondents sampled from the corpus.
  std::uint32_t sample_n = 100;
  std::uint32_t repetitions = 3;
  std::vector<std::string> feature_categories;
  std::uint32_t claims_per_feature = 5;
  ContextMode context_mode = ContextMode::summary;
  std::uint32_t max_reasks = 3;
  std::uint32_t concurrency = 4;
  /// Abort once failed pairs exceed this fraction of all attempted pairs.
  double failure_ceiling = 0.05;
  std::filesystem::path out_dir;
};

struct RunManifest {
  std::string run_id;
  MethodKind method = MethodKind::direct;
  std::string model;
  double temperature = 0.7;
  std::uint64_t seed = 0;
  std::string corpus_checksum;
  std::uint32_t respondent_count = 0;
  std::vector<std::string> question_ids;
  std::string started_at;   // ISO-8601 UTC
  std::string finished_at;  // ISO-8601 UTC
  std::uint32_t repetition_index = 0;
  std::string config_echo_json;
};

struct RunResult {
  std::vector<RunManifest> manifests;
  std::vector<std::filesystem::path> run_dirs;
  std::vector<SimulationRecord> records;  // task order: repetition, respondent, question
  BackendStats backend_stats;             // delta over the run
  std::uint64_t pair_count = 0;           // attempted (respondent, question, repetition) tasks
};

/// Drive one method over sampled respondents x all questions x repetitions.
/// Writes one run directory per repetition under config.out_dir (manifest
/// plus append-only JSONL records, flushed in task order as tasks finish).
/// Workers share nothing but the backend; resume comes from the response
/// cache, not from record files. Throws RunAbortedError past the failure
/// ceiling.
RunResult run_experiment(const Corpus& corpus, const TemplateSet& templates, TextBackend& backend,
                         const RunConfig& config);

std::string run_id_for(MethodKind method, std::string_view model, std::uint64_t seed,
                       std::uint32_t repetition_index);

// Run-directory persistence.
struct LoadedRun {
  RunManifest manifest;
  std::vector<SimulationRecord> records;
};

RunManifest load_manifest(const std::filesystem::path& run_dir);
std::vector<SimulationRecord> load_records(const std::filesystem::path& run_dir);
LoadedRun load_run(const std::filesystem::path& run_dir);

/// Accept either run directories (contain manifest.json) or parents of run
/// directories; returns the flat list of run directories found.
std::vector<std::filesystem::path> expand_run_dirs(
    std::span<const std::filesystem::path> paths);

std::string record_to_jsonl(const SimulationRecord& record);
SimulationRecord record_from_jsonl(std::string_view line);

}  // namespace surveysim
