#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "stemm/alignment.hpp"
#include "stemm/model.hpp"
#include "stemm/rng.hpp"

namespace stemm {

enum class Modality { Text, Speech };

/// Word `word` contributes rows [begin, end) of the mixed sequence.
struct MixupSegment {
  std::size_t word = 0;
  Modality modality = Modality::Text;
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const MixupSegment&) const = default;
};

/// Which rows to copy from where. `rows[i]` refers to source 0 (speech a)
/// or source 1 (text e).
struct MixupPlan {
  std::vector<MixupSegment> segments;
  std::vector<RowRef> rows;
  double ratio = 0.0;

  std::size_t length() const { return rows.size(); }
};

/**
 * Draws one U(0,1) value per word, in word order, and selects the speech
 * span iff the draw is <= ratio. Throws AlignmentError if the alignment is
 * invalid for the given lengths.
 */
MixupPlan plan_mixup(const WordAlignment& align, std::size_t speech_len,
                     std::size_t text_len, double ratio, Rng& rng);

/// Same selection rule with caller-supplied draws, one per word.
MixupPlan plan_mixup(const WordAlignment& align, std::size_t speech_len,
                     std::size_t text_len, double ratio, std::span<const double> draws);

template <typename T>
struct MixupSequence {
  Tensor<T> vectors;
  std::vector<MixupSegment> segments;
  double ratio_used = 0.0;
};

/// Copies the planned rows of `a` and `e` (both [· × d]) in order.
template <typename T>
MixupSequence<T> apply_mixup(const Tensor<T>& a, const Tensor<T>& e,
                             const MixupPlan& plan);

template <typename T>
MixupSequence<T> build_mixup(const Tensor<T>& a, const Tensor<T>& e,
                             const WordAlignment& align, double ratio, Rng& rng);

/// LayerNorm(m + Pos(m)) with fresh positions 0..|m|-1. Passing
/// add_positions = false skips the positional term.
template <typename T>
Tensor<T> finalize_mixup(const MixupSequence<T>& mix, const Tensor<T>& gain,
                         const Tensor<T>& bias, bool add_positions = true);

/// Uses the model's encoder input normalization.
template <typename T>
Tensor<T> finalize_mixup(const Seq2SeqModel<T>& model, const MixupSequence<T>& mix);

/// Mean entropy (nats) of a set of next-token distributions.
double mean_entropy(std::span<const std::vector<double>> distributions);

/**
 * Per-example mean predictive entropy of the speech-only teacher-forced
 * pass, computed in eval mode with gradients disabled.
 */
template <typename T>
std::vector<double> speech_uncertainty(const Seq2SeqModel<T>& model,
                                       const SeqBatch<T>& features,
                                       const std::vector<std::vector<int>>& ys);

/// sigma(u / U - 1/2).
double ratio_from_uncertainty(double u, double U);

struct RatioStrategy {
  enum class Kind { Static, Uncertainty };
  Kind kind = Kind::Static;
  double ratio = 0.4;
  /// Uncertainty normalizer; 0 means ln(vocab size).
  double normalizer = 0.0;

  static RatioStrategy fixed(double p) { return {Kind::Static, p, 0.0}; }
  static RatioStrategy uncertainty(double U = 0.0) { return {Kind::Uncertainty, 0.4, U}; }

  /// "static:<p>" or "uncertainty" (optionally "uncertainty:<U>").
  static RatioStrategy parse(const std::string& text);
  std::string to_string() const;
  void validate() const;
  bool operator==(const RatioStrategy&) const = default;
};

}  // namespace stemm
