#include <gtest/gtest.h>

#include <cmath>

#include "stemm/decoding.hpp"
#include "unit/test_models.hpp"

using namespace stemm;
using testing_support::random_features;
using testing_support::tiny_config;

namespace {

SeqBatch<double> encode_text(const Seq2SeqModel<double>& model, const std::vector<int>& x) {
  NoGradGuard guard;
  ForwardContext ctx;
  return model.encode(model.text_input({x}, ctx), ctx);
}

double log_prob(const Seq2SeqModel<double>& model, const SeqBatch<double>& memory,
                const std::vector<int>& prefix, int token) {
  return std::log(model.next_token_distribution(memory, prefix)[static_cast<std::size_t>(token)]);
}

}  // namespace

TEST(Decoding, BeamOneEqualsGreedyOnRandomModels) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Seq2SeqModel<float> model(tiny_config(), 100 + seed);
    DecodeOptions greedy{1, 12, true};
    DecodeOptions beam{1, 12, false};
    const auto features = random_features(10 + seed, 3, seed);
    const auto g = translate_speech(model, features, greedy);
    const auto b = translate_speech(model, features, beam);
    EXPECT_EQ(g.tokens, b.tokens) << "seed " << seed;
    EXPECT_EQ(g.log_prob, b.log_prob);
    EXPECT_EQ(g.truncated, b.truncated);
    const std::vector<int> x{3 + int(seed % 5), 4, 7};
    EXPECT_EQ(translate_text(model, x, greedy).tokens, translate_text(model, x, beam).tokens);
  }
}

TEST(Decoding, ExhaustiveBeamMatchesBruteForce) {
  // V = 8, max_len = 2: candidates are [EOS] and every (t1 != EOS, t2).
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Seq2SeqModel<double> model(tiny_config(8), 200 + seed);
    const auto memory = encode_text(model, {3, 4 + int(seed % 3)});
    double best = log_prob(model, memory, {kBosId}, kEosId);  // length 1
    std::vector<int> best_tokens;
    for (int t1 = 0; t1 < 8; ++t1) {
      if (t1 == kEosId) continue;
      const double l1 = log_prob(model, memory, {kBosId}, t1);
      for (int t2 = 0; t2 < 8; ++t2) {
        const double score = (l1 + log_prob(model, memory, {kBosId, t1}, t2)) / 2.0;
        if (score > best) {
          best = score;
          best_tokens = t2 == kEosId ? std::vector<int>{t1} : std::vector<int>{t1, t2};
        }
      }
    }
    const auto hyp = beam_decode(model, memory, 8, 2);
    EXPECT_EQ(hyp.tokens, best_tokens) << "seed " << seed;
    EXPECT_NEAR(hyp.normalized_score(), best, 1e-9);
  }
}

TEST(Decoding, TruncationIsFlagged) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Seq2SeqModel<float> model(tiny_config(), 300 + seed);
    for (bool greedy : {true, false}) {
      const auto hyp = translate_text(model, {3, 4}, DecodeOptions{3, 1, greedy});
      if (hyp.truncated) {
        EXPECT_EQ(hyp.tokens.size(), 1u);
      } else {
        EXPECT_TRUE(hyp.tokens.empty());
      }
      EXPECT_EQ(hyp.length, 1u);
    }
  }
}

TEST(Decoding, Deterministic) {
  Seq2SeqModel<float> model(tiny_config(), 400);
  const auto features = random_features(21, 3, 9);
  const auto a = translate_speech(model, features, DecodeOptions{4, 10, false});
  const auto b = translate_speech(model, features, DecodeOptions{4, 10, false});
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_EQ(a.log_prob, b.log_prob);
}

TEST(Decoding, ZeroBeamRejected) {
  Seq2SeqModel<double> model(tiny_config(), 500);
  EXPECT_THROW(beam_decode(model, encode_text(model, {3}), 0, 4), std::invalid_argument);
}
