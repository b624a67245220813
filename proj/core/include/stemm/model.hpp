#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "stemm/ops.hpp"
#include "stemm/rng.hpp"
#include "stemm/tensor.hpp"

namespace stemm {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kNumSpecialIds = 3;

/// Architecture hyperparameters. Defaults are the full-size configuration;
/// desk-scale runs shrink them through the config file.
struct ModelConfig {
  std::size_t vocab_size = 10000;
  std::size_t d_model = 512;
  std::size_t heads = 8;
  std::size_t ffn_dim = 2048;
  std::size_t encoder_layers = 6;
  std::size_t decoder_layers = 6;
  double dropout = 0.1;
  std::size_t max_positions = 1024;
  /// Width of the pre-extracted speech features fed to the downsampler.
  std::size_t speech_dim = 768;
  std::size_t conv_channels = 1024;
  std::size_t conv_kernel = 5;
  std::size_t conv_stride = 2;
  std::size_t conv_padding = 2;

  /// Throws ConfigError on inconsistent sizes.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Pre-extracted speech representation, frames x dim, row-major.
struct FeatureMatrix {
  std::size_t frames = 0;
  std::size_t dim = 0;
  std::vector<float> values;

  bool operator==(const FeatureMatrix&) const = default;
};

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> value;
};

/// Ordered name -> parameter registry. The version counter is bumped by
/// every optimizer update.
template <typename T>
class ParamStore {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> value);
  const Tensor<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const {
    return index_.count(name) != 0;
  }

  std::vector<NamedParam<T>>& entries() { return entries_; }
  const std::vector<NamedParam<T>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t numel() const;
  std::vector<Tensor<T>> tensors() const;
  void zero_grad();

  std::uint64_t version() const { return version_; }
  void bump_version() { ++version_; }

 private:
  std::vector<NamedParam<T>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::uint64_t version_ = 0;
};

/// Train/eval switch plus the seed every dropout site derives its mask from.
struct ForwardContext {
  bool train = false;
  std::uint64_t seed = 0;
  std::uint64_t sites = 0;

  std::uint64_t next_seed() { return mix_seed(seed, sites++); }
};

/// Right-padded batch flattened to [batch·len × width]; example b occupies
/// rows [b·len, b·len + lengths[b]).
template <typename T>
struct SeqBatch {
  Tensor<T> x;
  std::size_t len = 0;
  std::vector<std::size_t> lengths;

  std::size_t batch() const { return lengths.size(); }
  /// batch·len flags, 1 marking padding.
  std::vector<std::uint8_t> pad_mask() const;
  /// Unpadded rows of example b.
  Tensor<T> example(std::size_t b) const;
};

/// Packs variable-length matrices into a padded batch (differentiable).
template <typename T>
SeqBatch<T> pack_sequences(std::span<const Tensor<T>> seqs);

template <typename T>
Tensor<T> features_tensor(const FeatureMatrix& features);

/// Interleaved sinusoid table: row p, column 2i = sin(p / 10000^(2i/d)),
/// column 2i+1 = cos of the same angle.
template <typename T>
std::vector<T> sinusoid_positions(std::size_t count, std::size_t dim);

/// Decoder-side teacher forcing: inputs are BOS+y, targets y+EOS with -1
/// marking padding.
struct TeacherForcing {
  std::vector<std::vector<int>> inputs;
  std::vector<int> targets;
  std::size_t len = 0;
  std::size_t target_count = 0;
};

TeacherForcing make_teacher_forcing(const std::vector<std::vector<int>>& ys);

/**
 * Speech translation model: convolutional acoustic downsampler, a pre-norm
 * transformer translation encoder, and a pre-norm transformer decoder whose
 * output projection is tied to the embedding table.
 *
 * Every encoder input (text, speech, or a mixed sequence) ends with the EOS
 * embedding and passes through the same stem, LayerNorm(x + Pos(x)).
 */
template <typename T>
class Seq2SeqModel {
 public:
  Seq2SeqModel(const ModelConfig& config, std::uint64_t seed);
  /// Adopts existing parameters; throws ConfigError when names or shapes
  /// disagree with the configuration.
  Seq2SeqModel(const ModelConfig& config, ParamStore<T> params);

  template <typename U>
  Seq2SeqModel<U> cast() const {
    ParamStore<U> store;
    for (const auto& p : params_.entries()) {
      store.add(p.name, p.value.template cast<U>(true));
    }
    return Seq2SeqModel<U>(config_, std::move(store));
  }

  const ModelConfig& config() const { return config_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  /// Embedding rows scaled by sqrt(d_model).
  Tensor<T> embed(std::span<const int> ids) const;
  SeqBatch<T> embed_batch(const std::vector<std::vector<int>>& seqs) const;

  /// Two stride-2 convolutions: [L × speech_dim] -> [f(f(L)) × d_model].
  Tensor<T> downsample(const Tensor<T>& features, ForwardContext& ctx) const;
  SeqBatch<T> downsample(const SeqBatch<T>& features, ForwardContext& ctx) const;

  /// Appends the EOS embedding after each example's last row.
  SeqBatch<T> append_eos(const SeqBatch<T>& seqs) const;
  /// LayerNorm(x + Pos(x)) followed by dropout in train mode.
  SeqBatch<T> stem(const SeqBatch<T>& seqs, ForwardContext& ctx) const;
  SeqBatch<T> text_input(const std::vector<std::vector<int>>& xs,
                         ForwardContext& ctx) const;
  SeqBatch<T> speech_input(const SeqBatch<T>& downsampled,
                           ForwardContext& ctx) const;

  /// Runs the encoder stack; with zero layers this is the identity.
  SeqBatch<T> encode(const SeqBatch<T>& chi, ForwardContext& ctx) const;

  /// Logits [batch·len × vocab]; row (b, i) predicts the token after
  /// prefixes[b][0..i].
  Tensor<T> decoder_logits(const SeqBatch<T>& memory,
                           const std::vector<std::vector<int>>& prefixes,
                           ForwardContext& ctx) const;

  /// Next-token distribution after `prefix` given a single-example memory.
  std::vector<double> next_token_distribution(const SeqBatch<T>& memory,
                                              std::span<const int> prefix) const;

  const Tensor<T>& input_norm_gain() const { return input_norm_.gain; }
  const Tensor<T>& input_norm_bias() const { return input_norm_.bias; }

 private:
  struct Linear {
    Tensor<T> weight, bias;
  };
  struct Norm {
    Tensor<T> gain, bias;
  };
  struct Attention {
    Linear q, k, v, out;
  };
  struct EncoderLayer {
    Norm self_norm;
    Attention self_attn;
    Norm ffn_norm;
    Linear fc1, fc2;
  };
  struct DecoderLayer {
    Norm self_norm;
    Attention self_attn;
    Norm cross_norm;
    Attention cross_attn;
    Norm ffn_norm;
    Linear fc1, fc2;
  };

  void init_params(std::uint64_t seed);
  void bind();
  Tensor<T> linear(const Tensor<T>& x, const Linear& l) const;
  Tensor<T> norm(const Tensor<T>& x, const Norm& n) const;
  Tensor<T> attend(const Attention& a, const Tensor<T>& query,
                   const Tensor<T>& memory, const AttentionGeometry& geom,
                   std::span<const std::uint8_t> key_pad) const;
  Tensor<T> feed_forward(const Tensor<T>& x, const Linear& fc1,
                         const Linear& fc2, ForwardContext& ctx) const;
  Tensor<T> drop(const Tensor<T>& x, ForwardContext& ctx) const;
  Tensor<T> positions(std::size_t batch, std::size_t len) const;

  ModelConfig config_;
  ParamStore<T> params_;
  std::vector<T> position_table_;

  Tensor<T> embed_;
  Linear proj_, conv1_, conv2_;
  Norm input_norm_, encoder_final_, decoder_final_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;
extern template class Seq2SeqModel<float>;
extern template class Seq2SeqModel<double>;

}  // namespace stemm
