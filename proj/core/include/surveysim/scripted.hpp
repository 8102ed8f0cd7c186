#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "surveysim/backend.hpp"
#include "surveysim/corpus.hpp"

namespace surveysim {

/// Deterministic oracle backends built over a corpus. They recognize the
/// prompt family by its section headers and recover the respondent and
/// question from the rendered demographic block and question text, so they
/// are coupled to the shipped templates (which is fine: they exist to drive
/// scripted runs over those templates).

/// Always answers the respondent's gold label; claim and summary prompts get
/// canned parseable text.
std::shared_ptr<ScriptedBackend> make_gold_backend(const Corpus& corpus);

/// Answers a uniformly pseudo-random label from the question's scale. The
/// draw is a pure function of the request (hash of fingerprint and salt), so
/// repeated identical requests agree while distinct sample indices vary.
std::shared_ptr<ScriptedBackend> make_uniform_backend(const Corpus& corpus,
                                                      std::uint64_t salt = 0);

/// Always answers with the given text (label-shaped responses only when the
/// caller formats them; useful for parse-failure paths).
std::shared_ptr<ScriptedBackend> make_fixed_backend(std::string response_text);

}  // namespace surveysim
