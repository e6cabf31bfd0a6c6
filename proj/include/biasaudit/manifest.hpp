#pragma once

// Run manifest: everything that determines a run's outputs, plus digests of the outputs
// written so far. Resuming skips stages whose outputs are still intact.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "domain.hpp"
#include "util.hpp"

namespace biasaudit {

inline constexpr const char* kToolVersion = "0.1.0";

/// A completed stage: fingerprint of everything it depends on plus the files it wrote.
struct StageRecord {
    std::string fingerprint;
    std::vector<std::string> outputs;
    json info = json::object();

    bool operator==(const StageRecord&) const = default;
};

inline void to_json(json& j, const StageRecord& s) {
    j = json{{"fingerprint", s.fingerprint}, {"outputs", s.outputs}, {"info", s.info}};
}
inline void from_json(const json& j, StageRecord& s) {
    j.at("fingerprint").get_to(s.fingerprint);
    s.outputs = j.value("outputs", std::vector<std::string>{});
    s.info = j.value("info", json::object());
}

struct RunManifest {
    std::string run_id;
    std::string tool_version = kToolVersion;
    std::string command;
    json config = json::object();
    std::uint64_t seed = 0;
    std::map<std::string, std::string> inputs;  // path -> digest
    std::map<std::string, std::string> outputs; // file name in the run directory -> digest
    std::map<std::string, StageRecord> stages; // completed stages
    std::string resolved_model;
    std::string created_at;
    std::string updated_at;

    bool operator==(const RunManifest&) const = default;
};

inline void to_json(json& j, const RunManifest& m) {
    j = json{{"run_id", m.run_id},   {"tool_version", m.tool_version}, {"command", m.command},
             {"config", m.config},   {"seed", m.seed},                 {"inputs", m.inputs},
             {"outputs", m.outputs}, {"stages", m.stages},             {"resolved_model", m.resolved_model},
             {"created_at", m.created_at}, {"updated_at", m.updated_at}};
}
inline void from_json(const json& j, RunManifest& m) {
    j.at("run_id").get_to(m.run_id);
    m.tool_version = j.value("tool_version", std::string{});
    m.command = j.value("command", std::string{});
    m.config = j.value("config", json::object());
    m.seed = j.value("seed", std::uint64_t{0});
    m.inputs = j.value("inputs", std::map<std::string, std::string>{});
    m.outputs = j.value("outputs", std::map<std::string, std::string>{});
    m.stages = j.value("stages", std::map<std::string, StageRecord>{});
    m.resolved_model = j.value("resolved_model", std::string{});
    m.created_at = j.value("created_at", std::string{});
    m.updated_at = j.value("updated_at", std::string{});
}

/// Identity of a run: tool version, command, config snapshot, seed and input digests.
/// Timestamps and outputs are excluded.
inline std::string compute_run_id(const RunManifest& m) {
    json key{{"tool_version", m.tool_version},
             {"command", m.command},
             {"config", m.config},
             {"seed", m.seed},
             {"inputs", m.inputs}};
    return to_hex(fnv1a64(key.dump()));
}

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline std::string manifest_path(const std::filesystem::path& dir) { return (dir / "manifest.json").string(); }

inline void write_manifest(const std::filesystem::path& dir, const RunManifest& m) {
    const auto tmp = manifest_path(dir) + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp);
        out << json(m).dump(2) << '\n';
    }
    std::filesystem::rename(tmp, manifest_path(dir));
}

inline std::optional<RunManifest> read_manifest(const std::filesystem::path& dir) {
    const auto path = manifest_path(dir);
    if (!std::filesystem::exists(path)) return std::nullopt;
    try {
        return read_json_file(path).get<RunManifest>();
    } catch (const json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
}

/// Records the digest of an output file in the manifest.
inline void record_output(RunManifest& m, const std::filesystem::path& dir, const std::string& name) {
    m.outputs[name] = file_digest((dir / name).string());
}

/// True when the stage completed with this fingerprint and all its outputs still match
/// their recorded digests.
inline bool stage_current(const RunManifest& m, const std::filesystem::path& dir, const std::string& stage,
                          const std::string& fingerprint) {
    auto st = m.stages.find(stage);
    if (st == m.stages.end() || st->second.fingerprint != fingerprint) return false;
    for (const auto& n : st->second.outputs) {
        auto it = m.outputs.find(n);
        if (it == m.outputs.end() || !std::filesystem::exists(dir / n)) return false;
        if (file_digest((dir / n).string()) != it->second) return false;
    }
    return true;
}

} // namespace biasaudit
