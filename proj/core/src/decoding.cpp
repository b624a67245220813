#include "stemm/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stemm {

namespace {

/// Log-softmax of the last decoder row of every example.
template <typename T>
std::vector<std::vector<double>> last_log_probs(
    const Seq2SeqModel<T>& model, const SeqBatch<T>& memory,
    const std::vector<std::vector<int>>& prefixes) {
  ForwardContext ctx;
  auto logits = model.decoder_logits(memory, prefixes, ctx);
  const std::size_t V = model.config().vocab_size;
  const std::size_t len = prefixes.front().size();
  std::vector<std::vector<double>> out(prefixes.size(), std::vector<double>(V));
  for (std::size_t b = 0; b < prefixes.size(); ++b) {
    auto row = logits.data().subspan((b * len + len - 1) * V, V);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t j = 0; j < V; ++j) z += std::exp(row[j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < V; ++j) out[b][j] = row[j] - lz;
  }
  return out;
}

template <typename T>
SeqBatch<T> replicate(const SeqBatch<T>& memory, std::size_t copies) {
  std::vector<RowRef> refs;
  refs.reserve(copies * memory.len);
  for (std::size_t c = 0; c < copies; ++c)
    for (std::size_t t = 0; t < memory.len; ++t) refs.push_back({0, t});
  const Tensor<T> src[] = {memory.x};
  return SeqBatch<T>{gather_rows<T>(src, refs), memory.len,
                     std::vector<std::size_t>(copies, memory.lengths.front())};
}

struct Beam {
  std::vector<int> prefix;  // BOS + tokens
  double score = 0.0;
};

struct Candidate {
  double score;
  std::size_t parent;
  int token;
};

}  // namespace

template <typename T>
Hypothesis greedy_decode(const Seq2SeqModel<T>& model, const SeqBatch<T>& memory,
                         std::size_t max_len) {
  NoGradGuard guard;
  Hypothesis hyp;
  std::vector<int> prefix{kBosId};
  for (std::size_t step = 0; step < max_len; ++step) {
    const auto lp = last_log_probs(model, memory, {prefix}).front();
    const int tok = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    hyp.log_prob += lp[tok];
    ++hyp.length;
    if (tok == kEosId) return hyp;
    hyp.tokens.push_back(tok);
    prefix.push_back(tok);
  }
  hyp.truncated = true;
  return hyp;
}

template <typename T>
Hypothesis beam_decode(const Seq2SeqModel<T>& model, const SeqBatch<T>& memory,
                       std::size_t beam, std::size_t max_len) {
  if (beam == 0) throw std::invalid_argument("beam size must be at least 1");
  NoGradGuard guard;
  std::vector<Beam> alive{{{kBosId}, 0.0}};
  std::vector<Hypothesis> done;
  auto to_hyp = [](const std::vector<int>& prefix, double score, bool finished) {
    Hypothesis h;
    h.tokens.assign(prefix.begin() + 1, prefix.end());
    h.log_prob = score;
    h.length = h.tokens.size() + (finished ? 1 : 0);
    h.truncated = !finished;
    return h;
  };

  for (std::size_t step = 0; step < max_len && !alive.empty() && done.size() < beam;
       ++step) {
    std::vector<std::vector<int>> prefixes;
    for (const auto& b : alive) prefixes.push_back(b.prefix);
    const auto lps = last_log_probs(model, replicate(memory, alive.size()), prefixes);
    std::vector<Candidate> cands;
    cands.reserve(alive.size() * lps.front().size());
    for (std::size_t p = 0; p < alive.size(); ++p)
      for (std::size_t j = 0; j < lps[p].size(); ++j)
        cands.push_back({alive[p].score + lps[p][j], p, static_cast<int>(j)});
    const std::size_t keep = std::min(beam, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + keep, cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });
    std::vector<Beam> next;
    for (std::size_t c = 0; c < keep; ++c) {
      const auto& cand = cands[c];
      if (cand.token == kEosId) {
        done.push_back(to_hyp(alive[cand.parent].prefix, cand.score, true));
      } else {
        Beam b{alive[cand.parent].prefix, cand.score};
        b.prefix.push_back(cand.token);
        next.push_back(std::move(b));
      }
    }
    alive = std::move(next);
  }

  std::vector<Hypothesis> pool = done;
  if (done.size() < beam) {
    for (const auto& b : alive) pool.push_back(to_hyp(b.prefix, b.score, false));
  }
  // Earlier candidates win ties, which keeps beam = 1 aligned with greedy.
  const Hypothesis* best = &pool.front();
  for (const auto& h : pool)
    if (h.normalized_score() > best->normalized_score()) best = &h;
  return *best;
}

template <typename T>
Hypothesis translate_speech(const Seq2SeqModel<T>& model,
                            const FeatureMatrix& features,
                            const DecodeOptions& options) {
  NoGradGuard guard;
  ForwardContext ctx;
  const Tensor<T> c[] = {features_tensor<T>(features)};
  auto a = model.downsample(pack_sequences<T>(c), ctx);
  auto h = model.encode(model.speech_input(a, ctx), ctx);
  return options.greedy ? greedy_decode(model, h, options.max_len)
                        : beam_decode(model, h, options.beam, options.max_len);
}

template <typename T>
Hypothesis translate_text(const Seq2SeqModel<T>& model, const std::vector<int>& x,
                          const DecodeOptions& options) {
  NoGradGuard guard;
  ForwardContext ctx;
  auto h = model.encode(model.text_input({x}, ctx), ctx);
  return options.greedy ? greedy_decode(model, h, options.max_len)
                        : beam_decode(model, h, options.beam, options.max_len);
}

#define STEMM_INSTANTIATE_DECODING(T)                                               \
  template Hypothesis greedy_decode(const Seq2SeqModel<T>&, const SeqBatch<T>&,     \
                                    std::size_t);                                   \
  template Hypothesis beam_decode(const Seq2SeqModel<T>&, const SeqBatch<T>&,       \
                                  std::size_t, std::size_t);                        \
  template Hypothesis translate_speech(const Seq2SeqModel<T>&, const FeatureMatrix&, \
                                       const DecodeOptions&);                       \
  template Hypothesis translate_text(const Seq2SeqModel<T>&, const std::vector<int>&, \
                                     const DecodeOptions&);

STEMM_INSTANTIATE_DECODING(float)
STEMM_INSTANTIATE_DECODING(double)

}  // namespace stemm
