#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "surveysim/backend.hpp"

namespace surveysim {

/// One cached generation, stored as a single JSON file named by fingerprint.
struct CacheEntry {
  std::string fingerprint;
  std::string model;
  double temperature = 0.7;
  std::uint64_t sample_index = 0;
  std::string prompt;
  std::string response_text;
  std::chrono::system_clock::time_point created_at;
  std::string backend_id;
  std::string tag;
};

/// Content-addressed on-disk response cache. Entries are written to a
/// temporary file and hard-linked into place, so concurrent writers of the
/// same fingerprint cannot corrupt an entry and the first complete write
/// wins; later duplicates are discarded.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);

  std::optional<CacheEntry> lookup(const std::string& fingerprint) const;

  /// Write-once semantics: returns true if this call created the entry,
  /// false if an entry already existed (the existing entry is kept).
  bool store(const CacheEntry& entry);

  /// Remove entries older than `older_than` (by their created_at field)
  /// and/or whose tag equals `tag_filter`. No filters removes everything.
  /// Returns the number of entries removed.
  std::size_t purge(std::optional<std::chrono::seconds> older_than = std::nullopt,
                    std::optional<std::string> tag_filter = std::nullopt);

  std::size_t entry_count() const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path entry_path(const std::string& fingerprint) const;
  std::filesystem::path dir_;
};

/// Transparent caching layer over any backend: hits replay byte-identical
/// text with cached=true and never touch the inner backend.
class CachedBackend : public TextBackend {
 public:
  CachedBackend(std::shared_ptr<TextBackend> inner, std::shared_ptr<ResponseCache> cache);

  GenerationResponse generate(const GenerationRequest& request) override;
  std::string id() const override { return inner_->id(); }
  BackendStats stats() const override;

  std::uint64_t hits() const { return hits_.load(); }
  std::uint64_t misses() const { return misses_.load(); }

 private:
  std::shared_ptr<TextBackend> inner_;
  std::shared_ptr<ResponseCache> cache_;
  std::atomic<std::uint64_t> hits_{0};
  std::atomic<std::uint64_t> misses_{0};
};

}  // namespace surveysim
