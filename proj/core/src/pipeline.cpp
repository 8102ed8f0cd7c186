#include "surveysim/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <condition_variable>
#include <fstream>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "internal/util.hpp"
#include "surveysim/errors.hpp"

namespace surveysim {

using nlohmann::ordered_json;

std::string_view to_string(MethodKind method) {
  switch (method) {
    case MethodKind::direct: return "direct";
    case MethodKind::cot: return "cot";
    case MethodKind::claimsim: return "claimsim";
  }
  return "?";
}

MethodKind method_from_string(std::string_view text) {
  for (MethodKind m : kAllMethods) {
    if (text == to_string(m)) return m;
  }
  throw UsageError("unknown method '" + std::string(text) +
                   "' (expected direct, cot or claimsim)");
}

std::string_view to_string(ContextMode mode) {
  return mode == ContextMode::summary ? "summary" : "claims";
}

ContextMode context_mode_from_string(std::string_view text) {
  if (text == "summary") return ContextMode::summary;
  if (text == "claims") return ContextMode::claims;
  throw UsageError("unknown context mode '" + std::string(text) +
                   "' (expected summary or claims)");
}

// ---------------------------------------------------------------------------
// Response parsing
// ---------------------------------------------------------------------------

namespace {

// Bullet / emphasis prefix bytes tolerated before a sigil word.
bool skip_prefix_byte(std::string_view line, std::size_t& pos) {
  const char c = line[pos];
  if (c == '-' || c == '*' || c == '>' || c == '#' || c == '_' || c == '`' || c == ' ' ||
      c == '\t') {
    ++pos;
    return true;
  }
  if (line.compare(pos, 3, "\xE2\x80\xA2") == 0) {  // bullet point
    pos += 3;
    return true;
  }
  return false;
}

bool iequal_ascii(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(a[i])) !=
        std::tolower(static_cast<unsigned char>(b[i]))) {
      return false;
    }
  }
  return true;
}

// If `line` is "<prefix junk> <sigil> <emphasis>: value", return the offset
// of the value within the line.
std::optional<std::size_t> sigil_value_offset(std::string_view line, std::string_view sigil) {
  std::size_t pos = 0;
  while (pos < line.size() && skip_prefix_byte(line, pos)) {
  }
  if (pos + sigil.size() > line.size()) return std::nullopt;
  if (!iequal_ascii(line.substr(pos, sigil.size()), sigil)) return std::nullopt;
  pos += sigil.size();
  if (pos < line.size() && std::isalnum(static_cast<unsigned char>(line[pos]))) {
    return std::nullopt;  // e.g. "Labels:" is not the "Label" sigil
  }
  while (pos < line.size() &&
         (line[pos] == '*' || line[pos] == '_' || line[pos] == '`' || line[pos] == ' ' ||
          line[pos] == '\t')) {
    ++pos;
  }
  if (pos >= line.size() || line[pos] != ':') return std::nullopt;
  return pos + 1;
}

struct Line {
  std::string_view text;   // without the newline
  std::size_t offset = 0;  // offset of the line start in the raw text
};

std::vector<Line> split_response_lines(std::string_view raw) {
  std::vector<Line> lines;
  std::size_t pos = 0;
  while (pos <= raw.size()) {
    std::size_t nl = raw.find('\n', pos);
    std::size_t end = nl == std::string_view::npos ? raw.size() : nl;
    std::string_view text = raw.substr(pos, end - pos);
    if (text.ends_with('\r')) text.remove_suffix(1);
    lines.push_back({text, pos});
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return lines;
}

std::string strip_all_markup(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    if (c == '*' || c == '_' || c == '`') continue;
    out.push_back(c);
  }
  return out;
}

std::string trim_ws(std::string_view text) {
  std::size_t begin = text.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) return {};
  std::size_t end = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(begin, end - begin + 1));
}

std::string trim_markup_edges(std::string_view text) {
  constexpr std::string_view kEdge = "*_` \t\r";
  std::size_t begin = text.find_first_not_of(kEdge);
  if (begin == std::string_view::npos) return {};
  std::size_t end = text.find_last_not_of(kEdge);
  return std::string(text.substr(begin, end - begin + 1));
}

std::string strip_matching_quotes(std::string moved) {
  while (moved.size() >= 2) {
    const char first = moved.front();
    const char last = moved.back();
    if ((first == '\'' && last == '\'') || (first == '"' && last == '"')) {
      moved = moved.substr(1, moved.size() - 2);
      continue;
    }
    break;
  }
  return moved;
}

// Rest-of-line value of the first matching sigil line.
std::optional<std::string> first_sigil_line_value(std::string_view raw, std::string_view sigil) {
  for (const Line& line : split_response_lines(raw)) {
    if (auto offset = sigil_value_offset(line.text, sigil)) {
      return std::string(line.text.substr(*offset));
    }
  }
  return std::nullopt;
}

}  // namespace

std::optional<ParsedAnswer> parse_label(std::string_view raw_text,
                                        std::span<const std::string> labels) {
  std::optional<std::string> matched;
  std::optional<std::string> reasoning;

  for (const Line& line : split_response_lines(raw_text)) {
    if (!matched) {
      if (auto offset = sigil_value_offset(line.text, "label")) {
        std::string candidate =
            strip_matching_quotes(normalize_label(strip_all_markup(line.text.substr(*offset))));
        for (const std::string& label : labels) {
          if (candidate == label) {
            matched = label;
            break;
          }
        }
      }
    }
    if (!reasoning) {
      if (auto offset = sigil_value_offset(line.text, "reasoning")) {
        std::string tail = trim_ws(raw_text.substr(line.offset + *offset));
        if (!tail.empty()) reasoning = std::move(tail);
      }
    }
  }

  if (!matched) return std::nullopt;
  return ParsedAnswer{*matched, std::move(reasoning)};
}

std::optional<std::string> parse_claim(std::string_view raw_text) {
  if (auto value = first_sigil_line_value(raw_text, "claim")) {
    std::string text = trim_markup_edges(*value);
    if (!text.empty()) return text;
  }
  return std::nullopt;
}

std::optional<std::string> parse_counterpoint(std::string_view raw_text) {
  if (auto value = first_sigil_line_value(raw_text, "counterpoint")) {
    std::string text = trim_markup_edges(*value);
    if (!text.empty()) return text;
  }
  return std::nullopt;
}

std::optional<std::string> parse_summary(std::string_view raw_text) {
  for (const Line& line : split_response_lines(raw_text)) {
    if (auto offset = sigil_value_offset(line.text, "summary")) {
      std::string tail = trim_ws(raw_text.substr(line.offset + *offset));
      if (!tail.empty()) return tail;
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

namespace {

// Re-asks reuse the prompt under a far-away sample_index so they never
// collide with the nominal sample indices of any repetition.
constexpr std::uint64_t kReaskStride = 1'000'000;

GenerationRequest make_request(const SimulationOptions& options, const MethodKind method,
                               std::string prompt, std::uint64_t sample_index,
                               std::uint32_t max_output) {
  GenerationRequest request;
  request.model = options.model;
  request.prompt = std::move(prompt);
  request.temperature = options.temperature;
  request.sample_index = sample_index;
  request.max_output = max_output;
  request.tag = std::string(to_string(method));
  return request;
}

SimulationRecord answer_with_reasks(MethodKind method, const RenderedPrompt& prompt,
                                    const DemographicProfile& profile,
                                    const SurveyQuestion& question, TextBackend& backend,
                                    const SimulationOptions& options) {
  SimulationRecord record;
  record.respondent_id = profile.respondent_id;
  record.question_id = question.question_id;
  record.method = method;
  record.repetition = options.repetition;

  for (std::uint32_t attempt = 0; attempt <= options.max_reasks; ++attempt) {
    const std::uint64_t sample_index =
        options.repetition + static_cast<std::uint64_t>(attempt) * kReaskStride;
    GenerationResponse response = backend.generate(
        make_request(options, method, prompt.text, sample_index, options.answer_max_output));
    record.fingerprints.push_back(response.fingerprint);
    record.raw_text = response.text;
    if (auto parsed = parse_label(response.text, question.labels)) {
      record.parsed_label = parsed->label;
      record.reasoning = parsed->reasoning;
      break;
    }
  }
  return record;
}

std::string pair_tag(const SimulationRecord& record) {
  return "(" + record.respondent_id + ", " + record.question_id + ", rep " +
         std::to_string(record.repetition) + ")";
}

}  // namespace

SimulationRecord simulate_direct(const TemplateSet& templates, const DemographicProfile& profile,
                                 const SurveyQuestion& question, TextBackend& backend,
                                 const SimulationOptions& options) {
  return answer_with_reasks(MethodKind::direct, templates.render_direct(profile, question),
                            profile, question, backend, options);
}

SimulationRecord simulate_cot(const TemplateSet& templates, const DemographicProfile& profile,
                              const SurveyQuestion& question, TextBackend& backend,
                              const SimulationOptions& options) {
  return answer_with_reasks(MethodKind::cot, templates.render_cot(profile, question), profile,
                            question, backend, options);
}

namespace {

ClaimBundle elicit_claims_impl(const TemplateSet& templates,
                               const std::pair<std::string, std::string>& feature,
                               const SurveyQuestion& question, TextBackend& backend,
                               std::uint32_t k, const SimulationOptions& options,
                               std::vector<std::string>* fingerprint_sink) {
  if (k == 0) {
    throw UsageError("elicit_claims: k must be at least 1");
  }
  const RenderedPrompt prompt = templates.render_claim(feature, question);
  const std::uint64_t base = static_cast<std::uint64_t>(options.repetition) * k;

  ClaimBundle bundle;
  bundle.feature = feature;
  bundle.claims.reserve(k);
  bundle.counterpoints.reserve(k);

  for (std::uint32_t j = 0; j < k; ++j) {
    std::string last_text;
    std::optional<std::string> claim;
    std::optional<std::string> counterpoint;
    for (std::uint32_t attempt = 0; attempt <= options.max_reasks; ++attempt) {
      const std::uint64_t sample_index =
          base + j + static_cast<std::uint64_t>(attempt) * kReaskStride;
      GenerationResponse response =
          backend.generate(make_request(options, MethodKind::claimsim, prompt.text, sample_index,
                                        options.claim_max_output));
      if (fingerprint_sink != nullptr) fingerprint_sink->push_back(response.fingerprint);
      last_text = response.text;
      claim = parse_claim(response.text);
      if (claim) {
        counterpoint = parse_counterpoint(response.text);
        break;
      }
    }
    // No parseable claim line: keep the verbatim response so downstream
    // summarization still sees k claims.
    bundle.claims.push_back(claim ? *claim : trim_ws(last_text));
    bundle.counterpoints.push_back(counterpoint);
  }
  return bundle;
}

ClaimBundle summarize_claims_impl(const TemplateSet& templates, ClaimBundle bundle,
                                  TextBackend& backend, const SimulationOptions& options,
                                  std::vector<std::string>* fingerprint_sink) {
  if (bundle.claims.empty()) {
    throw UsageError("summarize_claims: bundle has no claims");
  }
  const RenderedPrompt prompt = templates.render_summary(bundle.feature, bundle.claims);
  GenerationResponse response = backend.generate(make_request(
      options, MethodKind::claimsim, prompt.text, options.repetition, options.claim_max_output));
  if (fingerprint_sink != nullptr) fingerprint_sink->push_back(response.fingerprint);
  auto summary = parse_summary(response.text);
  bundle.summary = summary ? *summary : response.text;
  if (bundle.summary.empty()) {
    throw BackendError(BackendError::Kind::empty_response,
                       "summary generation returned empty text for feature '" +
                           bundle.feature.first + "'");
  }
  return bundle;
}

}  // namespace

ClaimBundle elicit_claims(const TemplateSet& templates,
                          const std::pair<std::string, std::string>& feature,
                          const SurveyQuestion& question, TextBackend& backend, std::uint32_t k,
                          const SimulationOptions& options) {
  return elicit_claims_impl(templates, feature, question, backend, k, options, nullptr);
}

ClaimBundle summarize_claims(const TemplateSet& templates, ClaimBundle bundle,
                             TextBackend& backend, const SimulationOptions& options) {
  return summarize_claims_impl(templates, std::move(bundle), backend, options, nullptr);
}

SimulationRecord simulate_claimsim(const TemplateSet& templates,
                                   const DemographicProfile& profile,
                                   const SurveyQuestion& question, TextBackend& backend,
                                   const SimulationOptions& options) {
  std::vector<std::pair<std::string, std::string>> selected;
  for (const std::string& category : options.feature_categories) {
    if (const std::string* value = profile.find(category)) {
      selected.emplace_back(category, *value);
    }
  }
  if (selected.empty()) {
    throw UsageError("simulate_claimsim: feature selector picked zero features for respondent " +
                     profile.respondent_id);
  }

  SimulationRecord record;
  record.respondent_id = profile.respondent_id;
  record.question_id = question.question_id;
  record.method = MethodKind::claimsim;
  record.repetition = options.repetition;

  std::vector<std::string> fingerprints;
  std::vector<ClaimBundle> bundles;
  for (const auto& feature : selected) {
    try {
      ClaimBundle bundle = elicit_claims_impl(templates, feature, question, backend,
                                              options.claims_per_feature, options, &fingerprints);
      bundles.push_back(
          summarize_claims_impl(templates, std::move(bundle), backend, options, &fingerprints));
    } catch (const BackendError& e) {
      throw BackendError(e.kind(), "claimsim " + pair_tag(record) + ", feature '" +
                                       feature.first + "': " + e.what());
    }
  }

  std::vector<std::pair<std::string, std::string>> statements;
  if (options.context_mode == ContextMode::summary) {
    for (const auto& bundle : bundles) {
      statements.emplace_back(bundle.summary, std::string(kNoCounterpoint));
    }
  } else {
    for (const auto& bundle : bundles) {
      for (std::size_t i = 0; i < bundle.claims.size(); ++i) {
        statements.emplace_back(
            bundle.claims[i],
            bundle.counterpoints[i] ? *bundle.counterpoints[i] : std::string(kNoCounterpoint));
      }
    }
  }

  const RenderedPrompt prompt = templates.render_claimsim_answer(profile, question, statements);
  for (std::uint32_t attempt = 0; attempt <= options.max_reasks; ++attempt) {
    const std::uint64_t sample_index =
        options.repetition + static_cast<std::uint64_t>(attempt) * kReaskStride;
    GenerationResponse response =
        backend.generate(make_request(options, MethodKind::claimsim, prompt.text, sample_index,
                                      options.answer_max_output));
    fingerprints.push_back(response.fingerprint);
    record.raw_text = response.text;
    if (auto parsed = parse_label(response.text, question.labels)) {
      record.parsed_label = parsed->label;
      record.reasoning = parsed->reasoning;
      break;
    }
  }

  record.claim_bundles = std::move(bundles);
  record.fingerprints = std::move(fingerprints);
  return record;
}

// ---------------------------------------------------------------------------
// Record / manifest persistence
// ---------------------------------------------------------------------------

namespace {

ordered_json bundle_to_json(const ClaimBundle& bundle) {
  ordered_json j;
  j["feature"] = ordered_json::array({bundle.feature.first, bundle.feature.second});
  j["claims"] = bundle.claims;
  ordered_json counterpoints = ordered_json::array();
  for (const auto& cp : bundle.counterpoints) {
    if (cp) {
      counterpoints.push_back(*cp);
    } else {
      counterpoints.push_back(nullptr);
    }
  }
  j["counterpoints"] = std::move(counterpoints);
  j["summary"] = bundle.summary;
  return j;
}

ClaimBundle bundle_from_json(const ordered_json& j) {
  ClaimBundle bundle;
  bundle.feature = {j.at("feature").at(0).get<std::string>(),
                    j.at("feature").at(1).get<std::string>()};
  bundle.claims = j.at("claims").get<std::vector<std::string>>();
  for (const auto& cp : j.at("counterpoints")) {
    if (cp.is_null()) {
      bundle.counterpoints.emplace_back(std::nullopt);
    } else {
      bundle.counterpoints.emplace_back(cp.get<std::string>());
    }
  }
  bundle.summary = j.at("summary").get<std::string>();
  return bundle;
}

}  // namespace

std::string record_to_jsonl(const SimulationRecord& record) {
  ordered_json j;
  j["respondent_id"] = record.respondent_id;
  j["question_id"] = record.question_id;
  j["method"] = to_string(record.method);
  j["repetition"] = record.repetition;
  j["raw_text"] = record.raw_text;
  j["parsed_label"] = record.parsed_label ? ordered_json(*record.parsed_label) : ordered_json();
  j["reasoning"] = record.reasoning ? ordered_json(*record.reasoning) : ordered_json();
  ordered_json bundles = ordered_json::array();
  for (const auto& bundle : record.claim_bundles) {
    bundles.push_back(bundle_to_json(bundle));
  }
  j["claim_bundles"] = std::move(bundles);
  j["fingerprints"] = record.fingerprints;
  j["run_id"] = record.run_id;
  return j.dump();
}

SimulationRecord record_from_jsonl(std::string_view line) {
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const ordered_json::parse_error& e) {
    throw ParseError(std::string("bad record line: ") + e.what());
  }
  SimulationRecord record;
  record.respondent_id = j.at("respondent_id").get<std::string>();
  record.question_id = j.at("question_id").get<std::string>();
  record.method = method_from_string(j.at("method").get<std::string>());
  record.repetition = j.at("repetition").get<std::uint32_t>();
  record.raw_text = j.at("raw_text").get<std::string>();
  if (!j.at("parsed_label").is_null()) {
    record.parsed_label = j.at("parsed_label").get<std::string>();
  }
  if (!j.at("reasoning").is_null()) {
    record.reasoning = j.at("reasoning").get<std::string>();
  }
  for (const auto& jb : j.at("claim_bundles")) {
    record.claim_bundles.push_back(bundle_from_json(jb));
  }
  record.fingerprints = j.at("fingerprints").get<std::vector<std::string>>();
  record.run_id = j.at("run_id").get<std::string>();
  return record;
}

namespace {

ordered_json manifest_to_json(const RunManifest& manifest) {
  ordered_json j;
  j["run_id"] = manifest.run_id;
  j["method"] = to_string(manifest.method);
  j["model"] = manifest.model;
  j["temperature"] = manifest.temperature;
  j["seed"] = manifest.seed;
  j["corpus_checksum"] = manifest.corpus_checksum;
  j["respondent_count"] = manifest.respondent_count;
  j["question_ids"] = manifest.question_ids;
  j["started_at"] = manifest.started_at;
  j["finished_at"] = manifest.finished_at;
  j["repetition_index"] = manifest.repetition_index;
  j["config"] = ordered_json::parse(manifest.config_echo_json.empty()
                                        ? std::string("{}")
                                        : manifest.config_echo_json);
  return j;
}

RunManifest manifest_from_json(const ordered_json& j) {
  RunManifest manifest;
  manifest.run_id = j.at("run_id").get<std::string>();
  manifest.method = method_from_string(j.at("method").get<std::string>());
  manifest.model = j.at("model").get<std::string>();
  manifest.temperature = j.at("temperature").get<double>();
  manifest.seed = j.at("seed").get<std::uint64_t>();
  manifest.corpus_checksum = j.at("corpus_checksum").get<std::string>();
  manifest.respondent_count = j.at("respondent_count").get<std::uint32_t>();
  manifest.question_ids = j.at("question_ids").get<std::vector<std::string>>();
  manifest.started_at = j.at("started_at").get<std::string>();
  manifest.finished_at = j.at("finished_at").get<std::string>();
  manifest.repetition_index = j.at("repetition_index").get<std::uint32_t>();
  manifest.config_echo_json = j.at("config").dump();
  return manifest;
}

std::string sanitize_for_path(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.') {
      out.push_back(c);
    } else {
      out.push_back('_');
    }
  }
  return out;
}

std::string run_config_echo(const RunConfig& config) {
  ordered_json j;
  j["method"] = to_string(config.method);
  j["model"] = config.model;
  j["temperature"] = config.temperature;
  j["seed"] = config.seed;
  j["sample_n"] = config.sample_n;
  j["repetitions"] = config.repetitions;
  j["feature_categories"] = config.feature_categories;
  j["claims_per_feature"] = config.claims_per_feature;
  j["context_mode"] = to_string(config.context_mode);
  j["max_reasks"] = config.max_reasks;
  j["concurrency"] = config.concurrency;
  j["failure_ceiling"] = config.failure_ceiling;
  return j.dump();
}

}  // namespace

std::string run_id_for(MethodKind method, std::string_view model, std::uint64_t seed,
                       std::uint32_t repetition_index) {
  return std::string(to_string(method)) + "_" + sanitize_for_path(model) + "_s" +
         std::to_string(seed) + "_r" + std::to_string(repetition_index);
}

RunManifest load_manifest(const std::filesystem::path& run_dir) {
  const auto path = run_dir / "manifest.json";
  try {
    return manifest_from_json(ordered_json::parse(detail::read_file(path)));
  } catch (const ordered_json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::vector<SimulationRecord> load_records(const std::filesystem::path& run_dir) {
  const auto path = run_dir / "records.jsonl";
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open records file: " + path.string());
  }
  std::vector<SimulationRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(record_from_jsonl(line));
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

LoadedRun load_run(const std::filesystem::path& run_dir) {
  return LoadedRun{load_manifest(run_dir), load_records(run_dir)};
}

std::vector<std::filesystem::path> expand_run_dirs(
    std::span<const std::filesystem::path> paths) {
  namespace fs = std::filesystem;
  std::vector<fs::path> run_dirs;
  for (const auto& path : paths) {
    if (fs::exists(path / "manifest.json")) {
      run_dirs.push_back(path);
      continue;
    }
    if (!fs::is_directory(path)) {
      throw IoError("not a run directory (or parent of one): " + path.string());
    }
    std::vector<fs::path> children;
    for (const auto& dirent : fs::directory_iterator(path)) {
      if (dirent.is_directory() && fs::exists(dirent.path() / "manifest.json")) {
        children.push_back(dirent.path());
      }
    }
    if (children.empty()) {
      throw IoError("no run directories under " + path.string());
    }
    std::sort(children.begin(), children.end());
    run_dirs.insert(run_dirs.end(), children.begin(), children.end());
  }
  return run_dirs;
}

// ---------------------------------------------------------------------------
// run_experiment
// ---------------------------------------------------------------------------

namespace {

struct Task {
  const DemographicProfile* profile;
  const SurveyQuestion* question;
};

BackendStats stats_delta(const BackendStats& after, const BackendStats& before) {
  BackendStats d;
  d.requests = after.requests - before.requests;
  d.upstream = after.upstream - before.upstream;
  d.cache_hits = after.cache_hits - before.cache_hits;
  return d;
}

}  // namespace

RunResult run_experiment(const Corpus& corpus, const TemplateSet& templates, TextBackend& backend,
                         const RunConfig& config) {
  if (config.repetitions == 0) throw UsageError("repetitions must be at least 1");
  if (config.concurrency == 0) throw UsageError("concurrency must be at least 1");
  if (config.failure_ceiling < 0.0 || config.failure_ceiling > 1.0) {
    throw UsageError("failure ceiling must lie in [0, 1]");
  }
  if (config.out_dir.empty()) throw UsageError("run output directory is not set");
  if (config.method == MethodKind::claimsim && config.feature_categories.empty()) {
    throw UsageError("claimsim needs at least one feature category");
  }

  const std::vector<DemographicProfile> sampled =
      sample_respondents(corpus, config.sample_n, config.seed);
  const std::string checksum = corpus_checksum(corpus);
  const std::string config_echo = run_config_echo(config);
  const BackendStats stats_before = backend.stats();

  std::vector<Task> tasks;
  tasks.reserve(sampled.size() * corpus.questions.size());
  for (const auto& profile : sampled) {
    for (const auto& question : corpus.questions) {
      tasks.push_back({&profile, &question});
    }
  }

  const std::uint64_t planned_total =
      static_cast<std::uint64_t>(tasks.size()) * config.repetitions;
  const std::uint64_t allowed_failures =
      static_cast<std::uint64_t>(config.failure_ceiling * static_cast<double>(planned_total));

  RunResult result;
  result.pair_count = planned_total;
  std::vector<std::string> failures;  // across all repetitions

  for (std::uint32_t rep = 0; rep < config.repetitions; ++rep) {
    const std::string run_id = run_id_for(config.method, config.model, config.seed, rep);
    const std::filesystem::path run_dir = config.out_dir / run_id;
    std::filesystem::create_directories(run_dir);

    RunManifest manifest;
    manifest.run_id = run_id;
    manifest.method = config.method;
    manifest.model = config.model;
    manifest.temperature = config.temperature;
    manifest.seed = config.seed;
    manifest.corpus_checksum = checksum;
    manifest.respondent_count = static_cast<std::uint32_t>(sampled.size());
    for (const auto& q : corpus.questions) manifest.question_ids.push_back(q.question_id);
    manifest.started_at = detail::format_iso8601(std::chrono::system_clock::now());
    manifest.repetition_index = rep;
    manifest.config_echo_json = config_echo;

    std::ofstream records_out(run_dir / "records.jsonl", std::ios::binary | std::ios::trunc);
    if (!records_out) {
      throw IoError("cannot open records file in " + run_dir.string());
    }

    SimulationOptions options;
    options.model = config.model;
    options.temperature = config.temperature;
    options.claims_per_feature = config.claims_per_feature;
    options.feature_categories = config.feature_categories;
    options.context_mode = config.context_mode;
    options.max_reasks = config.max_reasks;
    options.repetition = rep;

    std::vector<SimulationRecord> slots(tasks.size());
    std::vector<char> done(tasks.size(), 0);
    std::vector<char> ok(tasks.size(), 0);
    std::atomic<std::size_t> next{0};
    std::atomic<bool> abort{false};
    std::mutex mutex;
    std::condition_variable cv;

    auto worker = [&]() {
      for (;;) {
        const std::size_t index = next.fetch_add(1);
        if (index >= tasks.size() || abort.load()) break;
        const Task& task = tasks[index];
        SimulationRecord record;
        bool good = true;
        std::string why;
        try {
          switch (config.method) {
            case MethodKind::direct:
              record = simulate_direct(templates, *task.profile, *task.question, backend, options);
              break;
            case MethodKind::cot:
              record = simulate_cot(templates, *task.profile, *task.question, backend, options);
              break;
            case MethodKind::claimsim:
              record =
                  simulate_claimsim(templates, *task.profile, *task.question, backend, options);
              break;
          }
          record.run_id = run_id;
        } catch (const std::exception& e) {
          good = false;
          why = e.what();
        }
        {
          std::scoped_lock lock(mutex);
          if (good) {
            slots[index] = std::move(record);
          } else {
            failures.push_back("(" + task.profile->respondent_id + ", " +
                               task.question->question_id + ", rep " + std::to_string(rep) +
                               "): " + why);
            if (failures.size() > allowed_failures) {
              abort.store(true);
            }
          }
          ok[index] = good ? 1 : 0;
          done[index] = 1;
        }
        cv.notify_all();
      }
      cv.notify_all();
    };

    const std::uint32_t width =
        std::min<std::uint32_t>(config.concurrency, static_cast<std::uint32_t>(tasks.size()));
    std::vector<std::thread> pool;
    pool.reserve(width);
    for (std::uint32_t w = 0; w < width; ++w) pool.emplace_back(worker);

    // Flush completed records in task order so the file and the returned
    // vector are deterministic even under concurrency.
    std::size_t next_flush = 0;
    {
      std::unique_lock lock(mutex);
      while (next_flush < tasks.size()) {
        cv.wait(lock, [&] { return done[next_flush] != 0 || abort.load(); });
        if (done[next_flush] == 0) break;  // aborting and this slot will never fill
        if (ok[next_flush] != 0) {
          records_out << record_to_jsonl(slots[next_flush]) << '\n';
          records_out.flush();
        }
        ++next_flush;
      }
    }
    for (auto& thread : pool) thread.join();

    if (abort.load()) {
      std::string summary = "run aborted: " + std::to_string(failures.size()) + " of " +
                            std::to_string(planned_total) + " pairs failed (ceiling " +
                            std::to_string(allowed_failures) + "); first failures:";
      const std::size_t shown = std::min<std::size_t>(failures.size(), 10);
      for (std::size_t i = 0; i < shown; ++i) summary += "\n  " + failures[i];
      throw RunAbortedError(summary);
    }

    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (ok[i] != 0) result.records.push_back(std::move(slots[i]));
    }

    manifest.finished_at = detail::format_iso8601(std::chrono::system_clock::now());
    detail::write_file(run_dir / "manifest.json", manifest_to_json(manifest).dump(2) + "\n");
    result.manifests.push_back(std::move(manifest));
    result.run_dirs.push_back(run_dir);
  }

  result.backend_stats = stats_delta(backend.stats(), stats_before);
  if (!failures.empty()) {
    // Sub-ceiling failures are tolerated but not silent.
    result.pair_count = planned_total;
  }
  return result;
}

}  // namespace surveysim
