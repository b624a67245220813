#include "stemm/alignment.hpp"

#include "stemm/errors.hpp"

namespace stemm {

std::vector<AlignmentIssue> alignment_issues(const WordAlignment& align,
                                             std::size_t speech_len,
                                             std::size_t text_len) {
  std::vector<AlignmentIssue> issues;
  auto report = [&](std::size_t i, std::string msg) {
    issues.push_back({i, std::move(msg)});
  };
  if (align.words.empty()) report(0, "utterance has no aligned words");
  std::size_t next_subword = 0;
  for (std::size_t i = 0; i < align.words.size(); ++i) {
    const auto& w = align.words[i];
    const auto speech = "speech span [" + std::to_string(w.speech_first) + ", " +
                        std::to_string(w.speech_last) + "]";
    const auto sub = "subword span [" + std::to_string(w.subword_first) + ", " +
                     std::to_string(w.subword_last) + "]";
    bool sane = true;
    if (w.speech_first > w.speech_last) {
      report(i, speech + " is empty");
      sane = false;
    } else if (w.speech_last >= speech_len) {
      report(i, speech + " exceeds " + std::to_string(speech_len) + " frames");
      sane = false;
    }
    if (w.subword_first > w.subword_last) {
      report(i, sub + " is empty");
      sane = false;
    } else if (w.subword_last >= text_len) {
      report(i, sub + " exceeds " + std::to_string(text_len) + " subwords");
      sane = false;
    }
    if (i > 0) {
      const auto& prev = align.words[i - 1];
      if (w.speech_first <= prev.speech_last)
        report(i, speech + " overlaps or precedes the previous word");
      if (w.subword_first <= prev.subword_last)
        report(i, sub + " overlaps or precedes the previous word");
    }
    if (w.subword_first != next_subword && w.subword_first > next_subword)
      report(i, sub + " leaves subwords [" + std::to_string(next_subword) + ", " +
                    std::to_string(w.subword_first - 1) + "] unaligned");
    if (sane && w.speech_length() < w.subword_length())
      report(i, speech + " is shorter than " + sub);
    if (w.subword_last + 1 > next_subword) next_subword = w.subword_last + 1;
  }
  if (next_subword < text_len) {
    report(align.words.size(), "subwords [" + std::to_string(next_subword) + ", " +
                                   std::to_string(text_len - 1) + "] are unaligned");
  }
  return issues;
}

void validate_alignment(const WordAlignment& align, std::size_t speech_len,
                        std::size_t text_len, const std::string& utterance) {
  const auto issues = alignment_issues(align, speech_len, text_len);
  if (issues.empty()) return;
  std::string msg = "alignment";
  if (!utterance.empty()) msg += " of utterance " + utterance;
  msg += " is invalid:";
  for (const auto& issue : issues)
    msg += "\n  word " + std::to_string(issue.word) + ": " + issue.message;
  throw AlignmentError(msg, utterance, issues.front().word);
}

}  // namespace stemm
