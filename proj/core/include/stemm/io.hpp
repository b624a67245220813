#pragma once

#include <cstdio>
#include <filesystem>
#include <memory>
#include <nlohmann/json.hpp>
#include <string>
#include <string_view>

namespace stemm {

/// Writes to `<path>.tmp` and renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

/// Parses a JSON file; throws DataError naming the path on failure.
nlohmann::json read_json_file(const std::filesystem::path& path);

/// Appends JSON objects, one per line.
class JsonlWriter {
 public:
  JsonlWriter() = default;
  explicit JsonlWriter(const std::filesystem::path& path);
  bool is_open() const { return file_ != nullptr; }
  void write(const nlohmann::json& row);

 private:
  std::shared_ptr<std::FILE> file_;
};

}  // namespace stemm
