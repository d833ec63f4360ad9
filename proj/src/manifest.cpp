#include "m3ae/manifest.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <sstream>

#include "m3ae/error.hpp"

namespace m3ae {
namespace {

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

bool skipped(const std::filesystem::path& relative) {
  return !relative.empty() && *relative.begin() == "manifests";
}

}  // namespace

std::string git_blob_hash(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  const std::string data = header + content;
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &length, EVP_sha1(), nullptr) != 1)
    throw Error("SHA-1 digest failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < length; ++i) {
    const unsigned char b = digest[i];
    std::snprintf(buf, sizeof(buf), "%02x", b);
    hex += buf;
  }
  return hex;
}

std::string hash_file(const std::filesystem::path& path) { return git_blob_hash(read_all(path)); }

nlohmann::json list_files(const std::filesystem::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), root);
    if (skipped(rel)) continue;
    files[rel.generic_string()] = hash_file(entry.path());
  }
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [k, v] : files) out[k] = v;
  return out;
}

std::string hash_path(const std::filesystem::path& path) {
  if (std::filesystem::is_regular_file(path)) return hash_file(path);
  if (!std::filesystem::is_directory(path)) throw Error("cannot hash missing path " + path.string());
  std::string listing;
  const auto files = list_files(path);
  for (auto it = files.begin(); it != files.end(); ++it) listing += it.key() + ' ' + it->get<std::string>() + '\n';
  return git_blob_hash(listing);
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof(out), "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

nlohmann::json RunManifest::to_json() const {
  return {{"command", command}, {"config_path", config_path}, {"config", config},   {"seed", seed},
          {"inputs", inputs},   {"outputs", outputs},         {"started", started}, {"finished", finished}};
}

std::filesystem::path write_manifest(const std::filesystem::path& out_dir, const std::string& name,
                                     const RunManifest& manifest) {
  const auto dir = out_dir / "manifests";
  std::filesystem::create_directories(dir);
  std::string stamp = manifest.started;
  for (auto& c : stamp)
    if (c == ':') c = '-';
  for (int k = 0;; ++k) {
    const auto path = dir / (name + "-" + stamp + (k ? "-" + std::to_string(k) : "") + ".json");
    if (std::filesystem::exists(path)) continue;
    std::ofstream out(path, std::ios::binary);
    out << manifest.to_json().dump(2) << '\n';
    if (!out) throw Error("cannot write " + path.string());
    return path;
  }
}

}  // namespace m3ae
