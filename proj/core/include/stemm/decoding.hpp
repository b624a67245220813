#pragma once

#include <cstddef>
#include <vector>

#include "stemm/model.hpp"

namespace stemm {

struct Hypothesis {
  /// Generated tokens without the terminating EOS.
  std::vector<int> tokens;
  /// Sum of token log-probabilities, EOS included when present.
  double log_prob = 0.0;
  /// Number of scored steps (tokens plus EOS when finished).
  std::size_t length = 0;
  /// True when max_len was reached before EOS.
  bool truncated = false;

  double normalized_score() const {
    return length == 0 ? 0.0 : log_prob / static_cast<double>(length);
  }
};

/// Argmax decoding over a single-example memory; ties go to the lower id.
template <typename T>
Hypothesis greedy_decode(const Seq2SeqModel<T>& model, const SeqBatch<T>& memory,
                         std::size_t max_len);

/**
 * Beam search over a single-example memory.
 *
 * Each step keeps the `beam` best expansions by cumulative log-probability;
 * expansions ending in EOS are set aside as finished. Search stops once
 * `beam` hypotheses finished or max_len steps ran, in which case the live
 * beams become truncated candidates. The result is the candidate with the
 * highest length-normalized log-probability. beam = 1 reproduces
 * greedy_decode exactly.
 */
template <typename T>
Hypothesis beam_decode(const Seq2SeqModel<T>& model, const SeqBatch<T>& memory,
                       std::size_t beam, std::size_t max_len);

struct DecodeOptions {
  std::size_t beam = 5;
  std::size_t max_len = 64;
  /// Use greedy_decode instead of beam search.
  bool greedy = false;
};

/// Encodes speech features (eval mode) and decodes.
template <typename T>
Hypothesis translate_speech(const Seq2SeqModel<T>& model,
                            const FeatureMatrix& features,
                            const DecodeOptions& options);

/// Encodes a transcription (eval mode) and decodes.
template <typename T>
Hypothesis translate_text(const Seq2SeqModel<T>& model, const std::vector<int>& x,
                          const DecodeOptions& options);

}  // namespace stemm
