#include "manifest.hpp"

#include <chrono>
#include <ctime>
#include <iomanip>
#include <sstream>

#include "stemm/io.hpp"

#ifndef STEMM_VERSION
#define STEMM_VERSION "unknown"
#endif

namespace stemm::cli {

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

}  // namespace

RunManifest::RunManifest(std::filesystem::path path, std::string command,
                         std::vector<std::string> argv)
    : path_(std::move(path)) {
  doc_ = {{"tool", "stemm"},
          {"version", STEMM_VERSION},
          {"command", std::move(command)},
          {"argv", std::move(argv)},
          {"config", nlohmann::json::object()},
          {"seeds", nlohmann::json::array()},
          {"artifacts", nlohmann::json::object()},
          {"status", "created"}};
}

RunManifest::~RunManifest() {
  if (doc_["status"] != "running") return;
  try {
    finish("failed");
  } catch (...) {
  }
}

void RunManifest::set_config(nlohmann::json config) { doc_["config"] = std::move(config); }

void RunManifest::add_seed(std::uint64_t seed) {
  for (const auto& s : doc_["seeds"])
    if (s.get<std::uint64_t>() == seed) return;
  doc_["seeds"].push_back(seed);
}

void RunManifest::add_artifact(const std::string& role, const std::filesystem::path& path) {
  doc_["artifacts"][role] = path.lexically_normal().string();
}

void RunManifest::start() {
  doc_["started_at"] = utc_now();
  doc_["status"] = "running";
  write();
}

void RunManifest::finish(const std::string& status) {
  doc_["finished_at"] = utc_now();
  doc_["status"] = status;
  write();
}

void RunManifest::write() const { write_file_atomic(path_, doc_.dump(2) + "\n"); }

}  // namespace stemm::cli
