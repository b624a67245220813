#include "stemm/model.hpp"

#include <algorithm>
#include <cmath>

#include "stemm/errors.hpp"

namespace stemm {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model: " + msg); };
  if (vocab_size <= static_cast<std::size_t>(kNumSpecialIds))
    fail("vocab_size must exceed the " + std::to_string(kNumSpecialIds) +
         " special ids");
  if (d_model == 0 || d_model % 2 != 0) fail("d_model must be positive and even");
  if (heads == 0 || d_model % heads != 0)
    fail("d_model " + std::to_string(d_model) + " is not divisible by " +
         std::to_string(heads) + " heads");
  if (ffn_dim == 0) fail("ffn_dim must be positive");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0, 1)");
  if (max_positions == 0) fail("max_positions must be positive");
  if (speech_dim == 0 || conv_channels == 0) fail("speech_dim and conv_channels must be positive");
  if (conv_kernel == 0 || conv_stride == 0) fail("conv kernel and stride must be positive");
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T>& ParamStore<T>::add(const std::string& name, Tensor<T> value) {
  if (index_.count(name)) throw ConfigError("duplicate parameter " + name);
  index_.emplace(name, entries_.size());
  entries_.push_back({name, std::move(value)});
  return entries_.back().value;
}

template <typename T>
const Tensor<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("missing parameter " + name);
  return entries_[it->second].value;
}

template <typename T>
std::size_t ParamStore<T>::numel() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

template <typename T>
std::vector<Tensor<T>> ParamStore<T>::tensors() const {
  std::vector<Tensor<T>> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.value);
  return out;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& e : entries_) e.value.zero_grad();
}

// ---------------------------------------------------------------------------

template <typename T>
std::vector<std::uint8_t> SeqBatch<T>::pad_mask() const {
  std::vector<std::uint8_t> mask(batch() * len, 1);
  for (std::size_t b = 0; b < batch(); ++b)
    std::fill_n(mask.begin() + b * len, lengths[b], std::uint8_t{0});
  return mask;
}

template <typename T>
Tensor<T> SeqBatch<T>::example(std::size_t b) const {
  return slice_rows(x, b * len, b * len + lengths.at(b));
}

template <typename T>
SeqBatch<T> pack_sequences(std::span<const Tensor<T>> seqs) {
  if (seqs.empty()) throw DimensionError("pack_sequences: empty batch");
  SeqBatch<T> out;
  for (const auto& s : seqs) {
    out.lengths.push_back(s.rows());
    out.len = std::max(out.len, s.rows());
  }
  std::vector<RowRef> refs(seqs.size() * out.len);
  for (std::size_t b = 0; b < seqs.size(); ++b)
    for (std::size_t t = 0; t < out.lengths[b]; ++t)
      refs[b * out.len + t] = {static_cast<int>(b), t};
  out.x = gather_rows<T>(seqs, refs);
  return out;
}

template <typename T>
Tensor<T> features_tensor(const FeatureMatrix& features) {
  std::vector<T> v(features.values.begin(), features.values.end());
  return Tensor<T>::from_data({features.frames, features.dim}, std::move(v));
}

template <typename T>
std::vector<T> sinusoid_positions(std::size_t count, std::size_t dim) {
  std::vector<T> table(count * dim);
  for (std::size_t p = 0; p < count; ++p) {
    for (std::size_t i = 0; i < dim; i += 2) {
      const double angle =
          static_cast<double>(p) /
          std::pow(10000.0, static_cast<double>(i) / static_cast<double>(dim));
      table[p * dim + i] = static_cast<T>(std::sin(angle));
      if (i + 1 < dim) table[p * dim + i + 1] = static_cast<T>(std::cos(angle));
    }
  }
  return table;
}

TeacherForcing make_teacher_forcing(const std::vector<std::vector<int>>& ys) {
  TeacherForcing tf;
  for (const auto& y : ys) tf.len = std::max(tf.len, y.size() + 1);
  tf.targets.assign(ys.size() * tf.len, -1);
  for (std::size_t b = 0; b < ys.size(); ++b) {
    std::vector<int> in{kBosId};
    in.insert(in.end(), ys[b].begin(), ys[b].end());
    tf.inputs.push_back(std::move(in));
    for (std::size_t i = 0; i < ys[b].size(); ++i) tf.targets[b * tf.len + i] = ys[b][i];
    tf.targets[b * tf.len + ys[b].size()] = kEosId;
    tf.target_count += ys[b].size() + 1;
  }
  return tf;
}

// ---------------------------------------------------------------------------

template <typename T>
Seq2SeqModel<T>::Seq2SeqModel(const ModelConfig& config, std::uint64_t seed)
    : config_(config) {
  config_.validate();
  init_params(seed);
  bind();
}

template <typename T>
Seq2SeqModel<T>::Seq2SeqModel(const ModelConfig& config, ParamStore<T> params)
    : config_(config) {
  config_.validate();
  // Build a reference layout and check the given store against it.
  Seq2SeqModel<T> reference(config, 0);
  const auto& want = reference.params_.entries();
  if (params.size() != want.size()) {
    throw ConfigError("parameter count " + std::to_string(params.size()) +
                      " does not match the configured model (" +
                      std::to_string(want.size()) + ")");
  }
  for (const auto& w : want) {
    if (!params.contains(w.name)) throw ConfigError("missing parameter " + w.name);
    const auto& got = params.get(w.name);
    if (got.shape() != w.value.shape()) {
      throw ConfigError("parameter " + w.name + " has shape " +
                        shape_string(got.shape()) + ", expected " +
                        shape_string(w.value.shape()));
    }
  }
  // Re-register in canonical order.
  for (const auto& w : want) params_.add(w.name, params.get(w.name));
  for (std::size_t i = 0; i < params.version(); ++i) params_.bump_version();
  bind();
}

template <typename T>
void Seq2SeqModel<T>::init_params(std::uint64_t seed) {
  Rng rng = make_rng(seed, "init");
  const std::size_t d = config_.d_model;

  auto uniform = [&](const std::string& name, std::size_t rows, std::size_t cols,
                     double bound) {
    std::vector<T> v(rows * cols);
    for (auto& x : v) x = static_cast<T>((2.0 * uniform01(rng) - 1.0) * bound);
    params_.add(name, Tensor<T>::from_data({rows, cols}, std::move(v), true));
  };
  auto xavier = [&](const std::string& name, std::size_t in, std::size_t out) {
    uniform(name, in, out, std::sqrt(6.0 / static_cast<double>(in + out)));
  };
  auto zeros = [&](const std::string& name, std::size_t n) {
    params_.add(name, Tensor<T>::zeros({n}, true));
  };
  auto linear = [&](const std::string& name, std::size_t in, std::size_t out) {
    xavier(name + ".weight", in, out);
    zeros(name + ".bias", out);
  };
  auto norm = [&](const std::string& name) {
    params_.add(name + ".gain", Tensor<T>::full({d}, T(1), true));
    zeros(name + ".bias", d);
  };
  auto attention = [&](const std::string& name) {
    for (const char* p : {".q", ".k", ".v", ".out"}) linear(name + p, d, d);
  };

  {
    std::vector<T> v(config_.vocab_size * d);
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    for (auto& x : v) x = static_cast<T>(normal01(rng) * sd);
    params_.add("embed.weight",
                Tensor<T>::from_data({config_.vocab_size, d}, std::move(v), true));
  }

  const std::size_t C = config_.conv_channels, K = config_.conv_kernel;
  linear("downsample.proj", config_.speech_dim, C);
  uniform("downsample.conv1.weight", K * C, C, 1.0 / std::sqrt(double(K * C)));
  zeros("downsample.conv1.bias", C);
  uniform("downsample.conv2.weight", K * C, d, 1.0 / std::sqrt(double(K * C)));
  zeros("downsample.conv2.bias", d);

  norm("encoder.input_norm");
  for (std::size_t i = 0; i < config_.encoder_layers; ++i) {
    const std::string p = "encoder.layers." + std::to_string(i);
    norm(p + ".self_attn_norm");
    attention(p + ".self_attn");
    norm(p + ".ffn_norm");
    linear(p + ".ffn.fc1", d, config_.ffn_dim);
    linear(p + ".ffn.fc2", config_.ffn_dim, d);
  }
  norm("encoder.final_norm");

  for (std::size_t i = 0; i < config_.decoder_layers; ++i) {
    const std::string p = "decoder.layers." + std::to_string(i);
    norm(p + ".self_attn_norm");
    attention(p + ".self_attn");
    norm(p + ".cross_attn_norm");
    attention(p + ".cross_attn");
    norm(p + ".ffn_norm");
    linear(p + ".ffn.fc1", d, config_.ffn_dim);
    linear(p + ".ffn.fc2", config_.ffn_dim, d);
  }
  norm("decoder.final_norm");
}

template <typename T>
void Seq2SeqModel<T>::bind() {
  const auto& s = params_;
  auto linear = [&](const std::string& n) {
    return Linear{s.get(n + ".weight"), s.get(n + ".bias")};
  };
  auto norm = [&](const std::string& n) {
    return Norm{s.get(n + ".gain"), s.get(n + ".bias")};
  };
  auto attention = [&](const std::string& n) {
    return Attention{linear(n + ".q"), linear(n + ".k"), linear(n + ".v"),
                     linear(n + ".out")};
  };
  embed_ = s.get("embed.weight");
  proj_ = linear("downsample.proj");
  conv1_ = linear("downsample.conv1");
  conv2_ = linear("downsample.conv2");
  input_norm_ = norm("encoder.input_norm");
  encoder_final_ = norm("encoder.final_norm");
  decoder_final_ = norm("decoder.final_norm");
  encoder_.clear();
  for (std::size_t i = 0; i < config_.encoder_layers; ++i) {
    const std::string p = "encoder.layers." + std::to_string(i);
    encoder_.push_back({norm(p + ".self_attn_norm"), attention(p + ".self_attn"),
                        norm(p + ".ffn_norm"), linear(p + ".ffn.fc1"),
                        linear(p + ".ffn.fc2")});
  }
  decoder_.clear();
  for (std::size_t i = 0; i < config_.decoder_layers; ++i) {
    const std::string p = "decoder.layers." + std::to_string(i);
    decoder_.push_back({norm(p + ".self_attn_norm"), attention(p + ".self_attn"),
                        norm(p + ".cross_attn_norm"), attention(p + ".cross_attn"),
                        norm(p + ".ffn_norm"), linear(p + ".ffn.fc1"),
                        linear(p + ".ffn.fc2")});
  }
  position_table_ = sinusoid_positions<T>(config_.max_positions, config_.d_model);
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> Seq2SeqModel<T>::linear(const Tensor<T>& x, const Linear& l) const {
  return add_bias(matmul(x, l.weight), l.bias);
}

template <typename T>
Tensor<T> Seq2SeqModel<T>::norm(const Tensor<T>& x, const Norm& n) const {
  return layer_norm(x, n.gain, n.bias);
}

template <typename T>
Tensor<T> Seq2SeqModel<T>::drop(const Tensor<T>& x, ForwardContext& ctx) const {
  if (!ctx.train || config_.dropout <= 0.0) return x;
  return dropout(x, config_.dropout, ctx.next_seed());
}

template <typename T>
Tensor<T> Seq2SeqModel<T>::positions(std::size_t batch, std::size_t len) const {
  if (len > config_.max_positions) {
    throw DimensionError("sequence length " + std::to_string(len) +
                         " exceeds max_positions " +
                         std::to_string(config_.max_positions));
  }
  const std::size_t d = config_.d_model;
  std::vector<T> v(batch * len * d);
  for (std::size_t b = 0; b < batch; ++b)
    std::copy_n(position_table_.begin(), len * d, v.begin() + b * len * d);
  return Tensor<T>::from_data({batch * len, d}, std::move(v));
}

template <typename T>
Tensor<T> Seq2SeqModel<T>::attend(const Attention& a, const Tensor<T>& query,
                                  const Tensor<T>& memory,
                                  const AttentionGeometry& geom,
                                  std::span<const std::uint8_t> key_pad) const {
  auto q = linear(query, a.q);
  auto k = linear(memory, a.k);
  auto v = linear(memory, a.v);
  return linear(attention(q, k, v, geom, key_pad), a.out);
}

template <typename T>
Tensor<T> Seq2SeqModel<T>::feed_forward(const Tensor<T>& x, const Linear& fc1,
                                        const Linear& fc2,
                                        ForwardContext&) const {
  return linear(relu(linear(x, fc1)), fc2);
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> Seq2SeqModel<T>::embed(std::span<const int> ids) const {
  return scale(embedding(embed_, ids),
               static_cast<T>(std::sqrt(static_cast<double>(config_.d_model))));
}

template <typename T>
SeqBatch<T> Seq2SeqModel<T>::embed_batch(
    const std::vector<std::vector<int>>& seqs) const {
  SeqBatch<T> out;
  for (const auto& s : seqs) {
    out.lengths.push_back(s.size());
    out.len = std::max(out.len, s.size());
  }
  std::vector<int> ids(seqs.size() * out.len, kPadId);
  for (std::size_t b = 0; b < seqs.size(); ++b)
    std::copy(seqs[b].begin(), seqs[b].end(), ids.begin() + b * out.len);
  out.x = embed(ids);
  return out;
}

template <typename T>
Tensor<T> Seq2SeqModel<T>::downsample(const Tensor<T>& features,
                                      ForwardContext& ctx) const {
  SeqBatch<T> one{features, features.rows(), {features.rows()}};
  return downsample(one, ctx).example(0);
}

template <typename T>
SeqBatch<T> Seq2SeqModel<T>::downsample(const SeqBatch<T>& features,
                                        ForwardContext&) const {
  if (features.x.cols() != config_.speech_dim) {
    throw DimensionError("downsample: features " +
                         shape_string(features.x.shape()) + " but speech_dim is " +
                         std::to_string(config_.speech_dim));
  }
  ConvGeometry g1{features.batch(), features.len, config_.conv_kernel,
                  config_.conv_stride, config_.conv_padding, features.lengths};
  auto h = linear(features.x, proj_);
  h = gelu(linear(unfold1d(h, g1), conv1_));
  ConvGeometry g2{features.batch(), g1.out_len(), config_.conv_kernel,
                  config_.conv_stride, config_.conv_padding, g1.out_lengths()};
  auto a = linear(unfold1d(h, g2), conv2_);
  return SeqBatch<T>{a, g2.out_len(), g2.out_lengths()};
}

template <typename T>
SeqBatch<T> Seq2SeqModel<T>::append_eos(const SeqBatch<T>& seqs) const {
  const int eos[] = {kEosId};
  const Tensor<T> sources[] = {seqs.x, embed(eos)};
  SeqBatch<T> out;
  out.len = seqs.len + 1;
  std::vector<RowRef> refs(seqs.batch() * out.len);
  for (std::size_t b = 0; b < seqs.batch(); ++b) {
    const std::size_t n = seqs.lengths[b];
    for (std::size_t t = 0; t < n; ++t) refs[b * out.len + t] = {0, b * seqs.len + t};
    refs[b * out.len + n] = {1, 0};
    out.lengths.push_back(n + 1);
  }
  out.x = gather_rows<T>(sources, refs);
  return out;
}

template <typename T>
SeqBatch<T> Seq2SeqModel<T>::stem(const SeqBatch<T>& seqs,
                                  ForwardContext& ctx) const {
  auto x = add(seqs.x, positions(seqs.batch(), seqs.len));
  x = drop(norm(x, input_norm_), ctx);
  return SeqBatch<T>{x, seqs.len, seqs.lengths};
}

template <typename T>
SeqBatch<T> Seq2SeqModel<T>::text_input(const std::vector<std::vector<int>>& xs,
                                        ForwardContext& ctx) const {
  std::vector<std::vector<int>> with_eos = xs;
  for (auto& x : with_eos) x.push_back(kEosId);
  return stem(embed_batch(with_eos), ctx);
}

template <typename T>
SeqBatch<T> Seq2SeqModel<T>::speech_input(const SeqBatch<T>& downsampled,
                                          ForwardContext& ctx) const {
  return stem(append_eos(downsampled), ctx);
}

template <typename T>
SeqBatch<T> Seq2SeqModel<T>::encode(const SeqBatch<T>& chi,
                                    ForwardContext& ctx) const {
  if (encoder_.empty()) return chi;
  const auto pad = chi.pad_mask();
  const AttentionGeometry geom{chi.batch(), chi.len, chi.len, config_.heads, false};
  Tensor<T> x = chi.x;
  for (const auto& layer : encoder_) {
    auto y = norm(x, layer.self_norm);
    x = add(x, drop(attend(layer.self_attn, y, y, geom, pad), ctx));
    y = norm(x, layer.ffn_norm);
    x = add(x, drop(feed_forward(y, layer.fc1, layer.fc2, ctx), ctx));
  }
  return SeqBatch<T>{norm(x, encoder_final_), chi.len, chi.lengths};
}

template <typename T>
Tensor<T> Seq2SeqModel<T>::decoder_logits(
    const SeqBatch<T>& memory, const std::vector<std::vector<int>>& prefixes,
    ForwardContext& ctx) const {
  if (memory.batch() != prefixes.size()) {
    throw DimensionError("decoder: " + std::to_string(prefixes.size()) +
                         " prefixes for a memory batch of " +
                         std::to_string(memory.batch()));
  }
  auto emb = embed_batch(prefixes);
  const std::size_t B = emb.batch(), Ty = emb.len;
  const auto self_pad = emb.pad_mask();
  const auto mem_pad = memory.pad_mask();
  const AttentionGeometry self_geom{B, Ty, Ty, config_.heads, true};
  const AttentionGeometry cross_geom{B, Ty, memory.len, config_.heads, false};
  Tensor<T> x = drop(add(emb.x, positions(B, Ty)), ctx);
  for (const auto& layer : decoder_) {
    auto y = norm(x, layer.self_norm);
    x = add(x, drop(attend(layer.self_attn, y, y, self_geom, self_pad), ctx));
    y = norm(x, layer.cross_norm);
    x = add(x, drop(attend(layer.cross_attn, y, memory.x, cross_geom, mem_pad), ctx));
    y = norm(x, layer.ffn_norm);
    x = add(x, drop(feed_forward(y, layer.fc1, layer.fc2, ctx), ctx));
  }
  if (!decoder_.empty()) x = norm(x, decoder_final_);
  return matmul_nt(x, embed_);
}

template <typename T>
std::vector<double> Seq2SeqModel<T>::next_token_distribution(
    const SeqBatch<T>& memory, std::span<const int> prefix) const {
  NoGradGuard guard;
  ForwardContext ctx;
  auto logits = decoder_logits(memory, {std::vector<int>(prefix.begin(), prefix.end())}, ctx);
  const std::size_t V = config_.vocab_size;
  auto row = logits.data().subspan((logits.rows() - 1) * V, V);
  const double mx = *std::max_element(row.begin(), row.end());
  std::vector<double> p(V);
  double z = 0.0;
  for (std::size_t j = 0; j < V; ++j) z += p[j] = std::exp(row[j] - mx);
  for (auto& v : p) v /= z;
  return p;
}

template class ParamStore<float>;
template class ParamStore<double>;
template struct SeqBatch<float>;
template struct SeqBatch<double>;
template class Seq2SeqModel<float>;
template class Seq2SeqModel<double>;
template SeqBatch<float> pack_sequences(std::span<const Tensor<float>>);
template SeqBatch<double> pack_sequences(std::span<const Tensor<double>>);
template Tensor<float> features_tensor(const FeatureMatrix&);
template Tensor<double> features_tensor(const FeatureMatrix&);
template std::vector<float> sinusoid_positions(std::size_t, std::size_t);
template std::vector<double> sinusoid_positions(std::size_t, std::size_t);

}  // namespace stemm
