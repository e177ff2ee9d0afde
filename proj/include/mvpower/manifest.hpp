#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"

namespace mvpower {

/// Hex SHA-256 of a file's bytes. Throws io_error when unreadable.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_hex(const std::string& bytes);

struct RunManifest {
    std::string command;
    std::map<std::string, std::string> config;  // resolved settings, flags applied
    std::map<std::string, std::string> inputs;  // role -> path
    std::map<std::string, std::string> digests; // role -> sha256
    std::uint64_t seed = 0;
    std::string started;
    std::string finished;
    std::map<std::string, double> timings;  // seconds; kept out of primary outputs

    /// Records an input path and its digest under `role`.
    void add_input(const std::string& role, const std::filesystem::path& path);
    nlohmann::json to_json() const;
};

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kManifestSchema = "mvpower.manifest/1";

/// UTC, second resolution, ISO 8601.
std::string utc_timestamp();

void write_manifest(const std::filesystem::path& out_dir, const RunManifest& manifest);
RunManifest read_manifest(const std::filesystem::path& out_dir);

/// Roles whose file no longer matches the recorded digest (missing files
/// included).
std::map<std::string, std::string> verify_manifest(const RunManifest& manifest);

}  // namespace mvpower
