#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>

#include "surveysim/backend.hpp"

namespace surveysim {

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds initial_backoff{1000};
  double multiplier = 2.0;
  /// Each sleep is scaled by a uniform factor in [1-jitter, 1+jitter].
  double jitter = 0.25;
  /// Seed for the jitter PRNG; 0 picks a nondeterministic seed.
  std::uint64_t jitter_seed = 0;
};

struct HttpBackendConfig {
  /// Origin plus optional path prefix, e.g. "https://api.openai.com/v1".
  std::string base_url;
  std::string completions_path = "/chat/completions";
  /// Name of the environment variable holding the bearer credential. The
  /// credential itself is never accepted as a flag or config value.
  std::string credential_env = "SURVEYSIM_API_KEY";
  RetryPolicy retry;
  std::chrono::seconds timeout{120};
};

/// Chat-completions-style HTTP client: the whole rendered prompt is sent as
/// a single user message. Transport faults and rate limits are retried with
/// jittered exponential backoff; authentication failures are surfaced
/// immediately.
class HttpBackend : public TextBackend {
 public:
  explicit HttpBackend(HttpBackendConfig config);
  ~HttpBackend() override;

  GenerationResponse generate(const GenerationRequest& request) override;
  std::string id() const override;
  BackendStats stats() const override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace surveysim
