#pragma once

// Append-only score cache. One JSON object per line:
//   {"model_name": str, "scoring_mode": str, "text_hash": str, "span_hash": str,
//    "response": {<scorer response without request_id>}}
// The first record for a key wins; a truncated trailing line from an interrupted
// write is skipped on load.

#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>

#include "wire.hpp"

namespace biasaudit {

class ScoreCache {
public:
    /// In-memory cache only.
    ScoreCache() = default;

    /// Cache persisted at `path`; existing records are loaded.
    explicit ScoreCache(std::filesystem::path path) : path_(std::move(path)) {
        std::ifstream in(path_);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            try {
                const json j = json::parse(line);
                CacheKey k{j.at("model_name").get<std::string>(), j.at("scoring_mode").get<ScoringMode>(),
                           j.at("text_hash").get<std::string>(), j.at("span_hash").get<std::string>()};
                entries_.emplace(k.str(), j.at("response").get<ScoreResponse>());
            } catch (const json::exception&) {
                ++skipped_;
            }
        }
    }

    std::optional<ScoreResponse> lookup(const CacheKey& key) const {
        std::lock_guard lock(mu_);
        auto it = entries_.find(key.str());
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    /// Records `response` under `key` unless the key is already present. Returns true
    /// when a new record was written.
    bool store(const CacheKey& key, ScoreResponse response) {
        response.request_id.clear();
        std::lock_guard lock(mu_);
        if (entries_.count(key.str())) return false;
        if (!path_.empty()) {
            if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
            std::ofstream out(path_, std::ios::app);
            if (!out) throw DataError("cannot append to score cache " + path_.string());
            const json j{{"model_name", key.model_name},
                         {"scoring_mode", key.scoring_mode},
                         {"text_hash", key.text_hash},
                         {"span_hash", key.span_hash},
                         {"response", response}};
            out << j.dump() << '\n';
            out.flush();
            if (!out) throw DataError("write to score cache failed: " + path_.string());
        }
        entries_.emplace(key.str(), std::move(response));
        return true;
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return entries_.size();
    }
    std::size_t skipped_lines() const { return skipped_; }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::unordered_map<std::string, ScoreResponse> entries_;
    std::size_t skipped_ = 0;
    mutable std::mutex mu_;
};

} // namespace biasaudit
