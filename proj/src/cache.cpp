#include "recmem/cache.hpp"

#include <unistd.h>

#include <atomic>
#include <fstream>
#include <system_error>

#include <nlohmann/json.hpp>

#include "recmem/backend.hpp"
#include "recmem/errors.hpp"

namespace recmem {

namespace fs = std::filesystem;

DiskCache::DiskCache(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) {
        throw ConfigError("cannot create cache directory " + dir_.string() + ": " + ec.message());
    }
    // Probe writability now; a bad cache directory must fail at startup.
    fs::path probe = dir_ / ".write_probe";
    std::ofstream out(probe, std::ios::trunc);
    out << "ok";
    out.close();
    if (!out) {
        throw ConfigError("cache directory is not writable: " + dir_.string());
    }
    fs::remove(probe, ec);
}

fs::path DiskCache::entry_path(const CacheKey& key) const {
    return dir_ / key.digest.substr(0, 2) / key.digest.substr(2, 2) / (key.digest + ".json");
}

std::optional<std::string> DiskCache::lookup(const CacheKey& key) const {
    fs::path path = entry_path(key);
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    nlohmann::json entry;
    try {
        in >> entry;
        return entry.at("response").get<std::string>();
    } catch (const nlohmann::json::exception&) {
        // A torn or foreign file is treated as a miss; the next store
        // replaces it atomically.
        return std::nullopt;
    }
}

void DiskCache::store(const CacheKey& key, const CompletionRequest& request,
                      const std::string& text) {
    fs::path path = entry_path(key);
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) {
        throw IoError("cannot create cache subdirectory " + path.parent_path().string() + ": " +
                      ec.message());
    }

    nlohmann::json entry{
        {"key", key.digest},
        {"request",
         {{"model_id", request.model_id},
          {"system_text", request.system_text},
          {"user_text", request.user_text},
          {"temperature", request.temperature},
          {"max_output_tokens", request.max_output_tokens}}},
        {"response", text},
    };

    static std::atomic<std::uint64_t> counter{0};
    fs::path tmp = path;
    tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter.fetch_add(1));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << entry.dump(2) << '\n';
        if (!out) {
            throw IoError("cannot write cache entry " + tmp.string());
        }
    }
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw IoError("cannot finalize cache entry " + path.string() + ": " + ec.message());
    }
}

}  // namespace recmem
