#include "surveysim/backend.hpp"

#include "surveysim/errors.hpp"
#include "surveysim/fingerprint.hpp"

namespace surveysim {

void validate_request(const GenerationRequest& request) {
  if (request.prompt.empty()) {
    throw UsageError("generation request has an empty prompt");
  }
  if (!(request.temperature >= 0.0 && request.temperature <= 2.0)) {
    throw UsageError("temperature " + std::to_string(request.temperature) +
                     " outside [0, 2]");
  }
  if (request.model.find('\n') != std::string::npos) {
    throw UsageError("model name must not contain newlines");
  }
  if (request.max_output == 0) {
    throw UsageError("max_output must be positive");
  }
}

std::string fingerprint(const GenerationRequest& request) {
  validate_request(request);
  std::string canonical;
  canonical.reserve(request.prompt.size() + request.model.size() + 64);
  canonical += "surveysim.generation.v1\n";
  canonical += "model ";
  canonical += request.model;
  canonical += "\ntemperature ";
  canonical += canonical_temperature(request.temperature);
  canonical += "\nsample ";
  canonical += std::to_string(request.sample_index);
  canonical += "\nprompt ";
  canonical += request.prompt;
  return sha256_hex(canonical);
}

void ScriptedBackend::add_contains_rule(std::string needle, std::string response) {
  add_rule({[needle = std::move(needle)](const GenerationRequest& request) {
              return request.prompt.find(needle) != std::string::npos;
            },
            [response = std::move(response)](const GenerationRequest&) { return response; }});
}

GenerationResponse ScriptedBackend::generate(const GenerationRequest& request) {
  validate_request(request);
  calls_.fetch_add(1, std::memory_order_relaxed);

  GenerationResponse response;
  response.backend_id = id_;
  response.fingerprint = fingerprint(request);

  for (const auto& rule : rules_) {
    if (rule.matches(request)) {
      response.text = rule.respond(request);
      return response;
    }
  }
  if (default_) {
    response.text = default_(request);
    return response;
  }
  throw BackendError(BackendError::Kind::script_miss,
                     "scripted backend '" + id_ + "' has no rule for prompt starting \"" +
                         request.prompt.substr(0, 60) + "...\"");
}

BackendStats ScriptedBackend::stats() const {
  BackendStats s;
  s.requests = calls_.load();
  s.upstream = s.requests;
  return s;
}

}  // namespace surveysim
