#pragma once

#include <nlohmann/json.hpp>
#include <set>
#include <string>

#include "stemm/errors.hpp"
#include "stemm/model.hpp"

namespace stemm {

/**
 * Reads optional fields from a JSON object and rejects keys nobody asked for.
 *
 *   StrictObject obj(j, "model");
 *   obj.read("d_model", cfg.d_model);
 *   obj.finish();  // ConfigError on unknown keys
 */
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string context);

  template <typename V>
  bool read(const std::string& key, V& out) {
    seen_.insert(key);
    auto it = json_.find(key);
    if (it == json_.end()) return false;
    try {
      out = it->template get<V>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(context_ + "." + key + ": " + e.what());
    }
    return true;
  }

  const nlohmann::json* child(const std::string& key);
  void finish() const;

 private:
  const nlohmann::json& json_;
  std::string context_;
  std::set<std::string> seen_;
};

nlohmann::json to_json(const ModelConfig& config);
/// Starts from `base` and overrides the fields present in `j`.
ModelConfig model_config_from_json(const nlohmann::json& j,
                                   const ModelConfig& base = {});

}  // namespace stemm
