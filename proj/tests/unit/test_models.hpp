#pragma once

#include "stemm/model.hpp"

namespace testing_support {

/// Small configuration for fast model tests.
inline stemm::ModelConfig tiny_config(std::size_t vocab = 12) {
  stemm::ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 8;
  c.heads = 2;
  c.ffn_dim = 16;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.dropout = 0.0;
  c.max_positions = 128;
  c.speech_dim = 3;
  c.conv_channels = 6;
  return c;
}

inline stemm::FeatureMatrix random_features(std::size_t frames, std::size_t dim, std::uint64_t seed) {
  auto rng = stemm::make_rng(seed, "features");
  stemm::FeatureMatrix f{frames, dim, std::vector<float>(frames * dim)};
  for (auto& v : f.values) v = static_cast<float>(stemm::normal01(rng));
  return f;
}

}  // namespace testing_support

#include "stemm/dataset.hpp"

namespace testing_support {

/// Generator settings matching tiny_config.
inline stemm::GeneratorSpec tiny_spec(std::size_t vocab = 12) {
  stemm::GeneratorSpec s;
  s.vocab_size = vocab;
  s.min_words = 2;
  s.max_words = 3;
  s.feature_dim = 3;
  s.dev_size = 4;
  s.test_size = 4;
  return s;
}

template <typename Item>
std::vector<const Item*> pointers(const std::vector<Item>& items, std::size_t begin = 0,
                                  std::size_t count = static_cast<std::size_t>(-1)) {
  std::vector<const Item*> out;
  for (std::size_t i = begin; i < items.size() && out.size() < count; ++i) out.push_back(&items[i]);
  return out;
}

}  // namespace testing_support
