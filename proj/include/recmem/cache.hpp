#pragma once

#include <filesystem>
#include <optional>
#include <string>

namespace recmem {

struct CacheKey;
struct CompletionRequest;

// Content-addressed response store: one JSON file per key under a
// two-level digest-prefix directory. Entries keep the request alongside
// the response for auditability. Writes are write-temp-then-rename, so
// concurrent workers never observe partial entries.
class DiskCache {
public:
    // Creates the directory and probes writability; ConfigError on
    // failure so misconfiguration surfaces at startup, not mid-run.
    explicit DiskCache(std::filesystem::path dir);

    std::optional<std::string> lookup(const CacheKey& key) const;
    void store(const CacheKey& key, const CompletionRequest& request, const std::string& text);

    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path entry_path(const CacheKey& key) const;

    std::filesystem::path dir_;
};

}  // namespace recmem
