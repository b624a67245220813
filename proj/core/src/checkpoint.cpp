#include "stemm/checkpoint.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

#include "stemm/config.hpp"
#include "stemm/errors.hpp"
#include "stemm/io.hpp"

namespace stemm {

void save_checkpoint(const std::filesystem::path& path,
                     const Seq2SeqModel<float>& model) {
  nlohmann::json params = nlohmann::json::object();
  for (const auto& p : model.params().entries()) {
    params[p.name] = {{"shape", p.value.shape()},
                      {"values", std::vector<float>(p.value.data().begin(),
                                                    p.value.data().end())}};
  }
  nlohmann::json j = {{"format", "stemm-checkpoint"},
                      {"format_version", kCheckpointFormatVersion},
                      {"model", to_json(model.config())},
                      {"params", std::move(params)}};
  write_file_atomic(path, j.dump());
}

Seq2SeqModel<float> load_checkpoint(const std::filesystem::path& path) {
  const nlohmann::json j = read_json_file(path);
  if (j.value("format", "") != "stemm-checkpoint") {
    throw DataError(path.string() + ": not a stemm checkpoint");
  }
  if (j.value("format_version", -1) != kCheckpointFormatVersion) {
    throw DataError(path.string() + ": unsupported checkpoint format_version " +
                    j.value("format_version", nlohmann::json(-1)).dump());
  }
  const ModelConfig config = model_config_from_json(j.at("model"));
  ParamStore<float> store;
  try {
    for (const auto& [name, entry] : j.at("params").items()) {
      auto shape = entry.at("shape").get<Shape>();
      auto values = entry.at("values").get<std::vector<float>>();
      store.add(name, Tensor<float>::from_data(std::move(shape), std::move(values), true));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  } catch (const DimensionError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return Seq2SeqModel<float>(config, std::move(store));
}

template <typename T>
ParamStore<T> snapshot(const ParamStore<T>& params) {
  ParamStore<T> out;
  for (const auto& p : params.entries()) {
    out.add(p.name, Tensor<T>::from_data(p.value.shape(),
                                         std::vector<T>(p.value.data().begin(),
                                                        p.value.data().end()),
                                         true));
  }
  return out;
}

template <typename T>
ParamStore<T> average_checkpoints(std::span<const ParamStore<T>> checkpoints) {
  if (checkpoints.empty()) throw ConfigError("average_checkpoints: no checkpoints");
  const auto& first = checkpoints.front();
  for (std::size_t c = 1; c < checkpoints.size(); ++c) {
    const auto& other = checkpoints[c];
    if (other.size() != first.size()) {
      throw ConfigError("average_checkpoints: checkpoint " + std::to_string(c) +
                        " has " + std::to_string(other.size()) +
                        " parameters, expected " + std::to_string(first.size()));
    }
    for (std::size_t i = 0; i < first.size(); ++i) {
      const auto& a = first.entries()[i];
      const auto& b = other.entries()[i];
      if (a.name != b.name || a.value.shape() != b.value.shape()) {
        throw ConfigError("average_checkpoints: parameter " + a.name +
                          " diverges in checkpoint " + std::to_string(c) + " (" +
                          b.name + " " + shape_string(b.value.shape()) + ")");
      }
    }
  }
  ParamStore<T> out;
  const double inv = 1.0 / static_cast<double>(checkpoints.size());
  for (std::size_t i = 0; i < first.size(); ++i) {
    const auto& ref = first.entries()[i];
    std::vector<double> acc(ref.value.numel(), 0.0);
    for (const auto& ckpt : checkpoints) {
      auto v = ckpt.entries()[i].value.data();
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += v[k];
    }
    std::vector<T> mean(acc.size());
    for (std::size_t k = 0; k < acc.size(); ++k) mean[k] = static_cast<T>(acc[k] * inv);
    out.add(ref.name, Tensor<T>::from_data(ref.value.shape(), std::move(mean), true));
  }
  return out;
}

template ParamStore<float> snapshot(const ParamStore<float>&);
template ParamStore<double> snapshot(const ParamStore<double>&);
template ParamStore<float> average_checkpoints(std::span<const ParamStore<float>>);
template ParamStore<double> average_checkpoints(std::span<const ParamStore<double>>);

}  // namespace stemm
