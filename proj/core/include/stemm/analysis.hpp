#pragma once

#include <cstddef>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stemm/dataset.hpp"
#include "stemm/decoding.hpp"
#include "stemm/model.hpp"

namespace stemm {

/// Speech-side (alpha) and text-side (epsilon) pooled vectors of one word.
struct WordRepPair {
  std::string utterance;
  std::size_t word = 0;
  /// Subword ids of the word joined by '_'.
  std::string label;
  std::vector<double> alpha;
  std::vector<double> epsilon;
  double cosine = 0.0;
  /// Either vector has zero norm; cosine is meaningless.
  bool degenerate = false;
};

/// Cosine similarity, or nullopt if either vector has zero norm.
std::optional<double> cosine_similarity(std::span<const double> u, std::span<const double> v);

/// Mean-pools rows of `a` over each speech span and rows of `e` over each
/// subword span.
std::vector<WordRepPair> pool_word_pairs(const Tensor<float>& a, const Tensor<float>& e,
                                         const WordAlignment& align,
                                         const std::vector<int>& x = {},
                                         const std::string& utterance = "");

/// `a` is the downsampler output, `e` the scaled embeddings (eval mode).
std::vector<WordRepPair> word_representations(const AlignedTriple& triple,
                                              const Seq2SeqModel<float>& model);

struct SimilarityResult {
  /// Mean cosine over non-degenerate pairs, in percent; nullopt when there
  /// are no valid pairs.
  std::optional<double> similarity_pct;
  std::size_t n_pairs = 0;
  std::size_t n_degenerate = 0;
};

SimilarityResult modality_similarity(std::span<const WordRepPair> pairs);
/// Throws std::invalid_argument on an empty dataset.
SimilarityResult modality_similarity(const std::vector<AlignedTriple>& data,
                                     const Seq2SeqModel<float>& model);

/// Corpus BLEU on token ids, 0-100. Any zero n-gram precision gives 0.
/// Throws std::invalid_argument for empty or mismatched corpora.
double corpus_bleu(const std::vector<std::vector<int>>& hyps,
                   const std::vector<std::vector<int>>& refs, std::size_t max_n = 4);

struct PcaResult {
  /// rows × components, row-major.
  std::vector<double> coords;
  std::size_t rows = 0;
  std::size_t components = 0;
  /// Variance captured by each returned component, descending.
  std::vector<double> variances;
  /// Non-empty when fewer than the requested components exist.
  std::string warning;

  double at(std::size_t r, std::size_t c) const { return coords[r * components + c]; }
};

/// Projects mean-centered vectors onto the top-k covariance eigenvectors.
/// Each axis is oriented so its largest-magnitude loading is positive.
PcaResult pca_project(const std::vector<std::vector<double>>& vectors, std::size_t k = 2);

/// CSV with header label,modality,x,y; alpha rows first, then epsilon rows.
void write_word_projection_csv(const std::filesystem::path& path,
                               std::span<const WordRepPair> pairs);

/// Per-utterance mean of a and of e, one CSV row per (utterance, modality).
void write_sentence_representations_csv(const std::filesystem::path& path,
                                        const std::vector<AlignedTriple>& data,
                                        const Seq2SeqModel<float>& model);

struct AnalysisSummary {
  SimilarityResult similarity;
  std::optional<double> bleu;
  std::optional<double> mean_uncertainty;
};

nlohmann::json to_json(const AnalysisSummary& summary);

/// Mean speech-pass uncertainty over a dataset (eval mode).
double mean_uncertainty(const std::vector<AlignedTriple>& data, const Seq2SeqModel<float>& model,
                        std::size_t batch_size = 32);

/// Speech-input hypotheses for every triple, in order.
std::vector<std::vector<int>> decode_speech(const Seq2SeqModel<float>& model,
                                            const std::vector<AlignedTriple>& data,
                                            const DecodeOptions& options);
/// Text-input (transcription) hypotheses for every triple, in order.
std::vector<std::vector<int>> decode_text(const Seq2SeqModel<float>& model,
                                          const std::vector<AlignedTriple>& data,
                                          const DecodeOptions& options);

struct Evaluation {
  double st_bleu = 0.0;
  /// BLEU when the gold transcription is fed instead of speech.
  double text_bleu = 0.0;
  SimilarityResult similarity;
};

Evaluation evaluate_model(const Seq2SeqModel<float>& model, const std::vector<AlignedTriple>& data,
                          const DecodeOptions& options);

}  // namespace stemm
