#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace stemm {

/// One word unit. Both spans are inclusive; speech indices address the
/// downsampled frame sequence, subword indices address the transcription.
struct WordSpan {
  std::string word;
  std::size_t speech_first = 0;
  std::size_t speech_last = 0;
  std::size_t subword_first = 0;
  std::size_t subword_last = 0;

  std::size_t speech_length() const { return speech_last - speech_first + 1; }
  std::size_t subword_length() const { return subword_last - subword_first + 1; }
  bool operator==(const WordSpan&) const = default;
};

struct WordAlignment {
  std::vector<WordSpan> words;
  bool operator==(const WordAlignment&) const = default;
};

struct AlignmentIssue {
  std::size_t word = 0;
  std::string message;
};

/**
 * Every violation of the alignment contract against a speech sequence of
 * `speech_len` downsampled frames and a transcription of `text_len`
 * subwords: empty or out-of-range spans, overlap or disorder between
 * consecutive words, subword spans that leave gaps, and speech spans shorter
 * than their subword spans.
 */
std::vector<AlignmentIssue> alignment_issues(const WordAlignment& align,
                                             std::size_t speech_len,
                                             std::size_t text_len);

/// Throws AlignmentError for the first issue; the message lists all of them.
void validate_alignment(const WordAlignment& align, std::size_t speech_len,
                        std::size_t text_len, const std::string& utterance = "");

}  // namespace stemm
