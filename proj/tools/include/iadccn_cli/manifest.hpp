#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace iadccn::cli {

/// Git blob id: sha1("blob <size>\0" + bytes), lowercase hex.
std::string git_blob_sha1(const std::filesystem::path& path);

struct RunManifest {
    std::string command;
    std::vector<std::string> arguments;
    std::string config;  ///< key=value snapshot, may be empty
    std::uint64_t seed = 0;
    std::string started;
    std::vector<std::filesystem::path> artifacts;
};

/// Writes `dir/manifest.json` listing each artifact with its size and blob
/// hash. Called after every other output exists.
std::filesystem::path write_manifest(const std::filesystem::path& dir, const RunManifest& manifest);

/// UTC, ISO 8601.
std::string utc_timestamp();

}  // namespace iadccn::cli
