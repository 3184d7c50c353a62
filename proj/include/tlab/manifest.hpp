#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tlab {

inline constexpr std::string_view kToolVersion = "0.1.0";

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::string& path);  // throws std::runtime_error if unreadable

struct FileDigest {
  std::string path;
  std::string sha256;

  bool operator==(const FileDigest&) const = default;
};

/// Provenance record written next to every output as `<output>.manifest.json`.
struct RunManifest {
  std::string command;
  std::vector<std::string> args;
  std::optional<std::string> config_hash;
  std::optional<std::string> dataset_hash;
  std::uint64_t seed = 0;
  std::string tool_version{kToolVersion};
  double wall_clock_s = 0.0;
  std::vector<FileDigest> outputs;

  std::string to_json() const;
  static RunManifest from_json(std::string_view text);  // throws std::runtime_error

  bool operator==(const RunManifest&) const = default;
};

std::string manifest_path(const std::string& output);
void write_manifest(const std::string& output, const RunManifest& manifest);
RunManifest read_manifest(const std::string& path);

}  // namespace tlab
