#include "stemm/config.hpp"

namespace stemm {

StrictObject::StrictObject(const nlohmann::json& j, std::string context)
    : json_(j), context_(std::move(context)) {
  if (!json_.is_object()) throw ConfigError(context_ + ": expected a JSON object");
}

const nlohmann::json* StrictObject::child(const std::string& key) {
  seen_.insert(key);
  auto it = json_.find(key);
  return it == json_.end() ? nullptr : &*it;
}

void StrictObject::finish() const {
  for (auto it = json_.begin(); it != json_.end(); ++it) {
    if (!seen_.count(it.key())) {
      throw ConfigError(context_ + ": unknown key \"" + it.key() + "\"");
    }
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size},       {"d_model", c.d_model},
          {"heads", c.heads},                 {"ffn_dim", c.ffn_dim},
          {"encoder_layers", c.encoder_layers}, {"decoder_layers", c.decoder_layers},
          {"dropout", c.dropout},             {"max_positions", c.max_positions},
          {"speech_dim", c.speech_dim},       {"conv_channels", c.conv_channels},
          {"conv_kernel", c.conv_kernel},     {"conv_stride", c.conv_stride},
          {"conv_padding", c.conv_padding}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, const ModelConfig& base) {
  ModelConfig c = base;
  StrictObject obj(j, "model");
  obj.read("vocab_size", c.vocab_size);
  obj.read("d_model", c.d_model);
  obj.read("heads", c.heads);
  obj.read("ffn_dim", c.ffn_dim);
  obj.read("encoder_layers", c.encoder_layers);
  obj.read("decoder_layers", c.decoder_layers);
  obj.read("dropout", c.dropout);
  obj.read("max_positions", c.max_positions);
  obj.read("speech_dim", c.speech_dim);
  obj.read("conv_channels", c.conv_channels);
  obj.read("conv_kernel", c.conv_kernel);
  obj.read("conv_stride", c.conv_stride);
  obj.read("conv_padding", c.conv_padding);
  obj.finish();
  c.validate();
  return c;
}

}  // namespace stemm
