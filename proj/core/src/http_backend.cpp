#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "surveysim/http_backend.hpp"

#include <atomic>
#include <cstdlib>
#include <mutex>
#include <random>
#include <thread>

#include <json.hpp>

#include "surveysim/errors.hpp"
#include "surveysim/fingerprint.hpp"

namespace surveysim {

using nlohmann::json;

namespace {

struct SplitUrl {
  std::string origin;       // scheme://host[:port]
  std::string path_prefix;  // possibly empty, no trailing slash
};

SplitUrl split_url(const std::string& base_url) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) {
    throw UsageError("base URL must start with http:// or https://, got '" + base_url + "'");
  }
  const auto path_begin = base_url.find('/', scheme_end + 3);
  SplitUrl out;
  if (path_begin == std::string::npos) {
    out.origin = base_url;
  } else {
    out.origin = base_url.substr(0, path_begin);
    out.path_prefix = base_url.substr(path_begin);
    while (!out.path_prefix.empty() && out.path_prefix.back() == '/') {
      out.path_prefix.pop_back();
    }
  }
  return out;
}

bool retryable_status(int status) {
  return status == 408 || status == 429 || (status >= 500 && status < 600);
}

}  // namespace

struct HttpBackend::Impl {
  HttpBackendConfig config;
  SplitUrl url;
  std::string credential;
  std::mt19937_64 jitter_rng;
  std::mutex rng_mutex;
  std::atomic<std::uint64_t> requests{0};

  explicit Impl(HttpBackendConfig cfg) : config(std::move(cfg)), url(split_url(config.base_url)) {
    const char* value = std::getenv(config.credential_env.c_str());
    credential = value == nullptr ? "" : value;
    const std::uint64_t seed =
        config.retry.jitter_seed != 0 ? config.retry.jitter_seed : std::random_device{}();
    jitter_rng.seed(seed);
  }

  std::chrono::milliseconds backoff_for(int attempt) {
    double ms = static_cast<double>(config.retry.initial_backoff.count());
    for (int i = 0; i < attempt; ++i) ms *= config.retry.multiplier;
    const double j = config.retry.jitter;
    if (j > 0.0) {
      std::scoped_lock lock(rng_mutex);
      std::uniform_real_distribution<double> dist(1.0 - j, 1.0 + j);
      ms *= dist(jitter_rng);
    }
    return std::chrono::milliseconds(static_cast<std::int64_t>(ms));
  }
};

HttpBackend::HttpBackend(HttpBackendConfig config)
    : impl_(std::make_unique<Impl>(std::move(config))) {}

HttpBackend::~HttpBackend() = default;

std::string HttpBackend::id() const { return "http:" + impl_->config.base_url; }

BackendStats HttpBackend::stats() const {
  BackendStats s;
  s.requests = impl_->requests.load();
  s.upstream = s.requests;
  return s;
}

GenerationResponse HttpBackend::generate(const GenerationRequest& request) {
  validate_request(request);
  if (impl_->credential.empty()) {
    throw BackendError(BackendError::Kind::auth,
                       "credential environment variable " + impl_->config.credential_env +
                           " is empty or unset");
  }

  const json body = {
      {"model", request.model},
      {"temperature", request.temperature},
      {"max_tokens", request.max_output},
      {"messages", json::array({json{{"role", "user"}, {"content", request.prompt}}})},
  };
  const std::string payload = body.dump();
  const std::string path = impl_->url.path_prefix + impl_->config.completions_path;

  const auto started = std::chrono::steady_clock::now();
  std::string last_failure = "no attempt made";
  bool rate_limited = false;

  for (int attempt = 0; attempt < impl_->config.retry.max_attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(impl_->backoff_for(attempt - 1));
    }

    httplib::Client client(impl_->url.origin);
    client.set_connection_timeout(impl_->config.timeout.count(), 0);
    client.set_read_timeout(impl_->config.timeout.count(), 0);
    client.set_bearer_token_auth(impl_->credential);

    impl_->requests.fetch_add(1, std::memory_order_relaxed);
    httplib::Result result = client.Post(path, payload, "application/json");

    if (!result) {
      last_failure = "transport failure: " + httplib::to_string(result.error());
      continue;
    }
    if (result->status == 401 || result->status == 403) {
      throw BackendError(BackendError::Kind::auth,
                         "authentication rejected (HTTP " + std::to_string(result->status) +
                             ") by " + impl_->url.origin);
    }
    if (retryable_status(result->status)) {
      rate_limited = result->status == 429;
      last_failure = "HTTP " + std::to_string(result->status) + " from " + impl_->url.origin;
      continue;
    }
    if (result->status != 200) {
      throw BackendError(BackendError::Kind::transport,
                         "unexpected HTTP " + std::to_string(result->status) + " from " +
                             impl_->url.origin + ": " + result->body.substr(0, 200));
    }

    std::string text;
    try {
      const json parsed = json::parse(result->body);
      text = parsed.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
      throw BackendError(BackendError::Kind::transport,
                         std::string("malformed completion payload: ") + e.what());
    }
    if (text.empty()) {
      throw BackendError(BackendError::Kind::empty_response,
                         "backend returned an empty completion");
    }

    GenerationResponse response;
    response.text = std::move(text);
    response.backend_id = id();
    response.fingerprint = fingerprint(request);
    response.latency = std::chrono::duration_cast<std::chrono::microseconds>(
        std::chrono::steady_clock::now() - started);
    return response;
  }

  throw BackendError(rate_limited ? BackendError::Kind::rate_limit
                                  : BackendError::Kind::transport,
                     "giving up after " + std::to_string(impl_->config.retry.max_attempts) +
                         " attempts; last failure: " + last_failure);
}

}  // namespace surveysim
