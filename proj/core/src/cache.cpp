#include "surveysim/cache.hpp"

#include <unistd.h>

#include <system_error>

#include <json.hpp>

#include "internal/util.hpp"
#include "surveysim/errors.hpp"
#include "surveysim/fingerprint.hpp"

namespace surveysim {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

ordered_json entry_to_json(const CacheEntry& entry) {
  ordered_json j;
  j["fingerprint"] = entry.fingerprint;
  j["model"] = entry.model;
  j["temperature"] = canonical_temperature(entry.temperature);
  j["sample_index"] = entry.sample_index;
  j["prompt"] = entry.prompt;
  j["response_text"] = entry.response_text;
  j["created_at"] = detail::format_iso8601(entry.created_at);
  j["backend_id"] = entry.backend_id;
  j["tag"] = entry.tag;
  return j;
}

CacheEntry entry_from_json(const ordered_json& j) {
  CacheEntry entry;
  entry.fingerprint = j.at("fingerprint").get<std::string>();
  entry.model = j.at("model").get<std::string>();
  entry.temperature = std::stod(j.at("temperature").get<std::string>());
  entry.sample_index = j.at("sample_index").get<std::uint64_t>();
  entry.prompt = j.at("prompt").get<std::string>();
  entry.response_text = j.at("response_text").get<std::string>();
  entry.created_at = detail::parse_iso8601(j.at("created_at").get<std::string>());
  entry.backend_id = j.at("backend_id").get<std::string>();
  entry.tag = j.value("tag", "");
  return entry;
}

}  // namespace

ResponseCache::ResponseCache(fs::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) {
    throw IoError("cannot create cache directory " + dir_.string() + ": " + ec.message());
  }
}

fs::path ResponseCache::entry_path(const std::string& fingerprint) const {
  return dir_ / (fingerprint + ".json");
}

std::optional<CacheEntry> ResponseCache::lookup(const std::string& fingerprint) const {
  const fs::path path = entry_path(fingerprint);
  std::error_code ec;
  if (!fs::exists(path, ec)) {
    return std::nullopt;
  }
  try {
    return entry_from_json(ordered_json::parse(detail::read_file(path)));
  } catch (const ordered_json::exception& e) {
    throw ParseError("corrupt cache entry " + path.string() + ": " + e.what());
  }
}

bool ResponseCache::store(const CacheEntry& entry) {
  const fs::path final_path = entry_path(entry.fingerprint);
  std::error_code ec;
  if (fs::exists(final_path, ec)) {
    return false;
  }

  // Unique temp name per writer, then hard-link into place: link(2) fails if
  // the target exists, which is what gives first-complete-write-wins.
  static std::atomic<std::uint64_t> counter{0};
  const fs::path tmp_path =
      dir_ / (entry.fingerprint + ".tmp." + std::to_string(::getpid()) + "." +
              std::to_string(counter.fetch_add(1)));
  detail::write_file(tmp_path, entry_to_json(entry).dump(2) + "\n");

  fs::create_hard_link(tmp_path, final_path, ec);
  fs::remove(tmp_path);
  if (ec && ec != std::errc::file_exists) {
    throw IoError("cannot publish cache entry " + final_path.string() + ": " + ec.message());
  }
  return !ec;
}

std::size_t ResponseCache::purge(std::optional<std::chrono::seconds> older_than,
                                 std::optional<std::string> tag_filter) {
  if (!fs::exists(dir_)) {
    throw IoError("cache directory does not exist: " + dir_.string());
  }
  const auto now = std::chrono::system_clock::now();
  std::size_t removed = 0;
  for (const auto& dirent : fs::directory_iterator(dir_)) {
    if (!dirent.is_regular_file() || dirent.path().extension() != ".json") continue;
    CacheEntry entry;
    try {
      entry = entry_from_json(ordered_json::parse(detail::read_file(dirent.path())));
    } catch (const std::exception&) {
      continue;  // unreadable entries are left in place
    }
    if (older_than && now - entry.created_at < *older_than) continue;
    if (tag_filter && entry.tag != *tag_filter) continue;
    std::error_code ec;
    if (fs::remove(dirent.path(), ec) && !ec) {
      ++removed;
    }
  }
  return removed;
}

std::size_t ResponseCache::entry_count() const {
  std::size_t n = 0;
  for (const auto& dirent : fs::directory_iterator(dir_)) {
    if (dirent.is_regular_file() && dirent.path().extension() == ".json") ++n;
  }
  return n;
}

CachedBackend::CachedBackend(std::shared_ptr<TextBackend> inner,
                             std::shared_ptr<ResponseCache> cache)
    : inner_(std::move(inner)), cache_(std::move(cache)) {
  if (!inner_ || !cache_) {
    throw UsageError("CachedBackend needs both an inner backend and a cache");
  }
}

GenerationResponse CachedBackend::generate(const GenerationRequest& request) {
  const std::string fp = fingerprint(request);
  if (auto entry = cache_->lookup(fp)) {
    hits_.fetch_add(1, std::memory_order_relaxed);
    GenerationResponse response;
    response.text = entry->response_text;
    response.backend_id = entry->backend_id;
    response.cached = true;
    response.fingerprint = fp;
    return response;
  }

  GenerationResponse response = inner_->generate(request);
  misses_.fetch_add(1, std::memory_order_relaxed);

  CacheEntry entry;
  entry.fingerprint = fp;
  entry.model = request.model;
  entry.temperature = request.temperature;
  entry.sample_index = request.sample_index;
  entry.prompt = request.prompt;
  entry.response_text = response.text;
  entry.created_at = std::chrono::system_clock::now();
  entry.backend_id = response.backend_id;
  entry.tag = request.tag;
  if (!cache_->store(entry)) {
    // Another writer got there first; replay its text so every reader of
    // this fingerprint sees one consistent payload.
    if (auto existing = cache_->lookup(fp)) {
      response.text = existing->response_text;
      response.backend_id = existing->backend_id;
    }
  }
  return response;
}

BackendStats CachedBackend::stats() const {
  BackendStats s = inner_->stats();
  s.requests = hits_.load() + misses_.load();
  s.cache_hits = hits_.load();
  s.upstream = misses_.load();
  return s;
}

}  // namespace surveysim
