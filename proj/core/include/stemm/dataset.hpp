#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "stemm/alignment.hpp"
#include "stemm/model.hpp"

namespace stemm {

/// One speech/transcription/translation example with its word alignment.
struct AlignedTriple {
  std::string id;
  FeatureMatrix speech;
  std::vector<int> x;
  std::vector<int> y;
  WordAlignment align;
  bool operator==(const AlignedTriple&) const = default;
};

struct TextPair {
  std::vector<int> x;
  std::vector<int> y;
  bool operator==(const TextPair&) const = default;
};

/// Total downsampling factor of the acoustic front end.
inline constexpr std::size_t kDownsampleFactor = 4;

/// Length after the two stride-2 convolutions (kernel 5, padding 2).
std::size_t downsampled_length(std::size_t frames);

/**
 * Pseudo-language generator. Content ids start after the special ids; the
 * first two thirds are word-initial subwords, the rest continuations.
 * Each subword emits a run of noisy copies of its prototype vector.
 *
 * The translation maps every subword through a fixed permutation that keeps
 * the initial/continuation split, then swaps word pairs (0,1), (2,3), ...
 * whenever the first subword of the earlier word belongs to a fixed subset
 * covering `swap_rate` of the initial ids.
 */
struct GeneratorSpec {
  std::size_t vocab_size = 64;
  std::size_t min_words = 3;
  std::size_t max_words = 6;
  std::size_t min_subwords = 1;
  std::size_t max_subwords = 2;
  /// Raw frames per subword; at least the downsampling factor.
  std::size_t min_frames = 4;
  std::size_t max_frames = 8;
  std::size_t feature_dim = 16;
  double noise = 0.5;
  bool identity_mapping = false;
  double swap_rate = 0.3;
  std::size_t dev_size = 200;
  std::size_t test_size = 200;
  /// Extra text-only pairs for MT pretraining.
  std::size_t mt_size = 0;
  std::uint64_t seed = 1;

  /// Throws ConfigError on infeasible settings.
  void validate() const;
  std::size_t initial_count() const;
  bool operator==(const GeneratorSpec&) const = default;
};

nlohmann::json to_json(const GeneratorSpec& spec);
GeneratorSpec generator_spec_from_json(const nlohmann::json& j,
                                       const GeneratorSpec& base = {});

/// Deterministic in (spec, first_index + i); `first_index` separates splits.
std::vector<AlignedTriple> generate(const GeneratorSpec& spec, std::size_t n,
                                    std::size_t first_index = 0);

/// Translation of a transcription under the spec's mapping rule.
std::vector<int> translate_reference(const GeneratorSpec& spec,
                                     const std::vector<int>& x,
                                     const WordAlignment& align);

struct Corpus {
  GeneratorSpec spec;
  std::vector<AlignedTriple> train, dev, test;
  std::vector<TextPair> mt;
};

Corpus generate_corpus(const GeneratorSpec& spec, std::size_t train_size);

std::vector<TextPair> text_pairs(const std::vector<AlignedTriple>& triples);

// Container I/O. A split directory holds features.bin, text.jsonl and
// align.json; the corpus root adds spec.json plus train/, dev/, test/ and,
// when non-empty, mt/text.jsonl.
//
// features.bin, little-endian: u64 n, u64 frames[n], u64 dim, then all
// frames of all utterances as float32, row-major, in utterance order.

void write_split(const std::filesystem::path& dir, const std::vector<AlignedTriple>& triples);
std::vector<AlignedTriple> read_split(const std::filesystem::path& dir);

void write_corpus(const std::filesystem::path& dir, const Corpus& corpus);
Corpus read_corpus(const std::filesystem::path& dir);

void write_features(const std::filesystem::path& path, const std::vector<FeatureMatrix>& features);
std::vector<FeatureMatrix> read_features(const std::filesystem::path& path);

void write_text_pairs(const std::filesystem::path& path, const std::vector<TextPair>& pairs);
std::vector<TextPair> read_text_pairs(const std::filesystem::path& path);

using UtteranceAlignment = std::pair<std::string, WordAlignment>;

void export_alignments(const std::filesystem::path& path,
                       const std::vector<UtteranceAlignment>& alignments);

/**
 * Parses an alignment file and checks every utterance for empty, disordered,
 * overlapping or gapped spans. Bounds are inferred from the largest indices;
 * read_split re-checks them against the real sequence lengths. Throws
 * AlignmentError listing every violation.
 */
std::vector<UtteranceAlignment> import_alignments(const std::filesystem::path& path);

}  // namespace stemm
