#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace surveysim {

/// One fully rendered generation request. `sample_index` distinguishes
/// repeated samples of the same prompt and participates in the fingerprint;
/// `tag` is free-form bookkeeping (the pipeline stores the method name) and
/// does not.
struct GenerationRequest {
  std::string model;
  std::string prompt;
  double temperature = 0.7;
  std::uint64_t sample_index = 0;
  std::uint32_t max_output = 1024;
  std::string tag;
};

struct GenerationResponse {
  std::string text;
  std::string backend_id;
  bool cached = false;
  std::chrono::microseconds latency{0};
  std::string fingerprint;  // hex SHA-256 of the canonical request encoding
};

/// Hex SHA-256 over the canonical byte encoding of (model, temperature,
/// prompt, sample_index). Temperature is rendered with fixed 6-decimal
/// formatting so equivalent values collide; the prompt goes last so no field
/// separator can be ambiguous. Stable across processes and platforms.
std::string fingerprint(const GenerationRequest& request);

/// Throws UsageError on empty prompt or temperature outside [0, 2].
void validate_request(const GenerationRequest& request);

struct BackendStats {
  std::uint64_t requests = 0;   // generate() invocations on this layer
  std::uint64_t upstream = 0;   // requests that reached the real generator
  std::uint64_t cache_hits = 0;
};

class TextBackend {
 public:
  virtual ~TextBackend() = default;
  virtual GenerationResponse generate(const GenerationRequest& request) = 0;
  virtual std::string id() const = 0;
  virtual BackendStats stats() const { return {}; }
};

/// Deterministic stand-in for an LLM: an ordered rule list plus an optional
/// default responder. Rules must be pure functions of the request; given
/// that, generate() is safe from any number of threads.
class ScriptedBackend : public TextBackend {
 public:
  using Responder = std::function<std::string(const GenerationRequest&)>;
  using Predicate = std::function<bool(const GenerationRequest&)>;

  struct Rule {
    Predicate matches;
    Responder respond;
  };

  explicit ScriptedBackend(std::string id = "scripted") : id_(std::move(id)) {}

  void add_rule(Rule rule) { rules_.push_back(std::move(rule)); }

  /// Convenience: respond with fixed text whenever the prompt contains needle.
  void add_contains_rule(std::string needle, std::string response);

  void set_default(Responder responder) { default_ = std::move(responder); }

  GenerationResponse generate(const GenerationRequest& request) override;
  std::string id() const override { return id_; }
  BackendStats stats() const override;

  std::uint64_t calls() const { return calls_.load(); }

 private:
  std::string id_;
  std::vector<Rule> rules_;
  Responder default_;
  std::atomic<std::uint64_t> calls_{0};
};

}  // namespace surveysim
