#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "surveysim/corpus.hpp"

namespace surveysim {

enum class PromptKind { direct, cot, claim_generation, summary_generation, claimsim_answer };

inline constexpr std::array<PromptKind, 5> kAllPromptKinds = {
    PromptKind::direct, PromptKind::cot, PromptKind::claim_generation,
    PromptKind::summary_generation, PromptKind::claimsim_answer};

std::string_view to_string(PromptKind kind);
std::string_view template_filename(PromptKind kind);

struct RenderedPrompt {
  PromptKind kind;
  std::string text;
  /// Substituted values, recorded for audit.
  std::vector<std::pair<std::string, std::string>> bindings;
};

/// Counterpoint text used when a claim carries no elicited counterpoint.
inline constexpr std::string_view kNoCounterpoint = "(none provided)";

/// The ordered label list rendered the way prompts expect it:
/// ['strongly agree', 'agree', 'disagree', 'strongly disagree']
std::string render_label_choices(std::span<const std::string> labels);

namespace tmpl {

/// Values available to a template: plain scalars, lists of (a, b) pairs for
/// two-variable loops, and string lists for one-variable loops.
struct Bindings {
  std::map<std::string, std::string, std::less<>> scalars;
  std::map<std::string, std::vector<std::pair<std::string, std::string>>, std::less<>> pair_lists;
  std::map<std::string, std::vector<std::string>, std::less<>> string_lists;
};

/// Minimal substitution engine over the shipped resource files. Supports
/// {{ name }} and non-nested {% for a[, b] in name %} ... {% endfor %} where
/// directive-only lines are consumed together with their newline. Throws
/// Error on unknown names, malformed directives or unclosed loops, so a
/// successful render contains no unexpanded placeholder.
std::string render(std::string_view source, const Bindings& bindings);

}  // namespace tmpl

/// The five prompt templates, loaded from a resource directory and verified
/// against the directory's checksum manifest.
class TemplateSet {
 public:
  static TemplateSet load(const std::filesystem::path& dir);

  /// Resolution order: SURVEYSIM_TEMPLATES env var, then the compiled-in
  /// default (the source-tree templates directory).
  static std::filesystem::path default_dir();

  RenderedPrompt render_direct(const DemographicProfile& profile,
                               const SurveyQuestion& question) const;
  RenderedPrompt render_cot(const DemographicProfile& profile,
                            const SurveyQuestion& question) const;
  RenderedPrompt render_claim(const std::pair<std::string, std::string>& feature,
                              const SurveyQuestion& question) const;
  RenderedPrompt render_summary(const std::pair<std::string, std::string>& feature,
                                std::span<const std::string> claims) const;
  RenderedPrompt render_claimsim_answer(
      const DemographicProfile& profile, const SurveyQuestion& question,
      std::span<const std::pair<std::string, std::string>> statements) const;

  const std::string& source(PromptKind kind) const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  TemplateSet() = default;

  std::filesystem::path dir_;
  std::array<std::string, kAllPromptKinds.size()> sources_;
};

}  // namespace surveysim
