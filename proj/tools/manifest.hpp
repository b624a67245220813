#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

namespace stemm::cli {

/// Record of one invocation: what ran, with which configuration, and which
/// files it produced. Rewritten atomically whenever it changes.
class RunManifest {
 public:
  RunManifest(std::filesystem::path path, std::string command, std::vector<std::string> argv);
  /// A run that started but never finished is recorded as failed.
  ~RunManifest();
  RunManifest(const RunManifest&) = delete;
  RunManifest& operator=(const RunManifest&) = delete;

  void set_config(nlohmann::json config);
  void add_seed(std::uint64_t seed);
  void add_artifact(const std::string& role, const std::filesystem::path& path);
  /// Writes with status "running"; called once inputs are validated.
  void start();
  void finish(const std::string& status);

  const std::filesystem::path& path() const { return path_; }

 private:
  void write() const;

  std::filesystem::path path_;
  nlohmann::json doc_;
};

}  // namespace stemm::cli
