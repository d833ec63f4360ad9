#pragma once

#include "json.hpp"

#include <filesystem>
#include <string>

namespace m3ae {

/// Git blob id: SHA-1 over "blob <size>\0" followed by the content.
std::string git_blob_hash(const std::string& content);
std::string hash_file(const std::filesystem::path& path);
/// Files hash as blobs. Directories hash the sorted "<relative path> <blob id>"
/// lines of every regular file below them, skipping `manifests/`.
std::string hash_path(const std::filesystem::path& path);
/// Relative path -> blob id for every regular file below `root`, skipping `manifests/`.
nlohmann::json list_files(const std::filesystem::path& root);

std::string utc_timestamp();

/// Record of one CLI invocation.
struct RunManifest {
  std::string command;
  std::string config_path;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  nlohmann::json inputs = nlohmann::json::object();   // path -> content hash
  nlohmann::json outputs = nlohmann::json::object();  // relative path -> content hash
  std::string started;
  std::string finished;

  nlohmann::json to_json() const;
};

/// Writes <out>/manifests/<name>-<timestamp>[-k].json without replacing an
/// existing manifest. Returns the path written.
std::filesystem::path write_manifest(const std::filesystem::path& out_dir, const std::string& name,
                                     const RunManifest& manifest);

}  // namespace m3ae
