#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "stemm/checkpoint.hpp"
#include "stemm/decoding.hpp"
#include "stemm/errors.hpp"
#include "stemm/gradcheck.hpp"
#include "stemm/losses.hpp"
#include "stemm/training.hpp"
#include "unit/test_models.hpp"

using namespace stemm;
using testing_support::pointers;
using testing_support::tiny_config;
using testing_support::tiny_spec;

namespace {

TrainingConfig quick_config() {
  TrainingConfig c;
  c.lr = 1e-3;
  c.warmup_steps = 10;
  c.batch_size = 4;
  c.label_smoothing = 0.1;
  c.ratio = RatioStrategy::fixed(0.5);
  return c;
}

std::vector<float> flat_params(const Seq2SeqModel<float>& m) {
  std::vector<float> out;
  for (const auto& e : m.params().entries()) out.insert(out.end(), e.value.data().begin(), e.value.data().end());
  return out;
}

}  // namespace

TEST(LrSchedule, WarmupThenInverseSqrt) {
  EXPECT_DOUBLE_EQ(lr_schedule(1, 4000, 2e-4), 2e-4 / 4000);
  EXPECT_DOUBLE_EQ(lr_schedule(2000, 4000, 2e-4), 1e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(4000, 4000, 2e-4), 2e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(16000, 4000, 2e-4), 1e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(0, 4000, 2e-4), lr_schedule(1, 4000, 2e-4));
}

TEST(EarlyStop, PatienceCountsEpochsSinceBest) {
  const std::vector<double> improving{5, 4, 3, 2};
  EXPECT_FALSE(early_stop(improving, 2));
  const std::vector<double> stalled{5, 3, 4, 4, 4};
  EXPECT_FALSE(early_stop(std::span(stalled).first(4), 2));
  EXPECT_TRUE(early_stop(stalled, 2));
  const std::vector<double> tie{3, 3, 3, 3};  // first occurrence is the best
  EXPECT_TRUE(early_stop(tie, 2));
  EXPECT_FALSE(early_stop(std::span<const double>(), 0));
}

TEST(TrainingConfig, ValidationRejectsInconsistentSwitches) {
  TrainingConfig c;
  c.loss_terms = {true, false, true};
  EXPECT_THROW(c.validate(), ConfigError);
  c.loss_terms = {false, false, false};
  EXPECT_THROW(c.validate(), ConfigError);
  c.loss_terms = {false, true, false};
  EXPECT_NO_THROW(c.validate());
}

class LossTest : public ::testing::Test {
 protected:
  void SetUp() override { data = generate(tiny_spec(), 4); }
  std::vector<AlignedTriple> data;
};

TEST_F(LossTest, TotalIsWeightedSumOfTerms) {
  Seq2SeqModel<double> model(tiny_config(), 3);
  const auto batch = pointers(data);
  for (double lambda : {0.0, 1.0, 2.5}) {
    auto cfg = quick_config();
    cfg.jsd_weight = lambda;
    auto rng = make_rng(1, "mixup");
    const std::vector<double> ratios(batch.size(), 0.5);
    const auto plans = plan_batch(batch, ratios, model.config(), rng);
    ForwardContext ctx;
    const auto t = compute_losses<double>(model, batch, plans, cfg, ctx);
    EXPECT_NEAR(t.total.item(), t.ce_st.item() + t.ce_mix.item() + lambda * t.jsd.item(), 1e-12);
    EXPECT_GT(t.jsd.item(), 0.0);
    EXPECT_LE(t.jsd.item(), std::log(2.0));
    std::size_t tokens = 0;
    for (const auto* b : batch) tokens += b->y.size() + 1;
    EXPECT_EQ(t.tokens, tokens);
  }
}

TEST_F(LossTest, SpeechOnlyMatchesDirectPass) {
  Seq2SeqModel<double> model(tiny_config(), 4);
  const auto batch = pointers(data);
  auto cfg = quick_config();
  cfg.loss_terms = {true, false, false};
  ForwardContext ctx;
  const double got = compute_losses<double>(model, batch, {}, cfg, ctx).ce_st.item();

  std::vector<std::vector<int>> ys;
  std::vector<Tensor<double>> feats;
  for (const auto* t : batch) {
    ys.push_back(t->y);
    feats.push_back(features_tensor<double>(t->speech));
  }
  ForwardContext ctx2;
  const auto packed = pack_sequences<double>(feats);
  const auto memory = model.encode(model.speech_input(model.downsample(packed, ctx2), ctx2), ctx2);
  const auto tf = make_teacher_forcing(ys);
  const double expected = cross_entropy(model.decoder_logits(memory, tf.inputs, ctx2), tf.targets, 0.1).item();
  EXPECT_NEAR(got, expected, 1e-12);
}

TEST_F(LossTest, StopGradientLeavesValueUnchanged) {
  Seq2SeqModel<double> model(tiny_config(), 5);
  const auto batch = pointers(data);
  const std::vector<double> ratios(batch.size(), 0.5);
  auto rng = make_rng(2, "mixup");
  const auto plans = plan_batch(batch, ratios, model.config(), rng);
  auto cfg = quick_config();
  ForwardContext c1, c2;
  const double a = compute_losses<double>(model, batch, plans, cfg, c1).total.item();
  cfg.jsd_stop_grad = true;
  const double b = compute_losses<double>(model, batch, plans, cfg, c2).total.item();
  EXPECT_EQ(a, b);
}

TEST_F(LossTest, FullObjectiveGradientCheck) {
  Seq2SeqModel<double> model(tiny_config(), 6);
  const auto batch = pointers(data, 0, 2);
  const std::vector<double> ratios(batch.size(), 0.5);
  auto rng = make_rng(3, "mixup");
  const auto plans = plan_batch(batch, ratios, model.config(), rng);
  auto cfg = quick_config();
  cfg.jsd_weight = 1.0;
  auto loss = [&] {
    ForwardContext ctx;
    return compute_losses<double>(model, batch, plans, cfg, ctx).total;
  };
  auto params = model.params().tensors();
  const auto report = check_gradients(loss, params, GradCheckOptions{1e-5, 0});
  EXPECT_LT(report.max_relative_error, 1e-3)
      << model.params().entries()[report.worst_param].name << "[" << report.worst_index
      << "] analytic " << report.analytic << " numeric " << report.numeric;
}

TEST(Adam, FirstStepMatchesClosedForm) {
  // After one step with bias correction, w -= lr * g / (|g| + eps).
  ParamStore<float> store;
  store.add("w", Tensor<float>::from_data({3}, {1.0f, -2.0f, 0.5f}, true));
  store.entries()[0].value.mutable_grad()[0] = 0.5f;
  store.entries()[0].value.mutable_grad()[1] = -4.0f;
  store.entries()[0].value.mutable_grad()[2] = 0.0f;
  Adam adam(0.9, 0.98, 1e-8);
  const double norm = adam.step(store, 0.1, 0.0);
  EXPECT_NEAR(norm, std::sqrt(0.25 + 16.0), 1e-6);
  const auto w = store.get("w").data();
  EXPECT_NEAR(w[0], 0.9f, 1e-6);
  EXPECT_NEAR(w[1], -1.9f, 1e-6);
  EXPECT_EQ(w[2], 0.5f);
  EXPECT_EQ(store.version(), 1u);
}

TEST(Adam, ClippingScalesGradient) {
  ParamStore<float> store;
  store.add("w", Tensor<float>::from_data({2}, {0.0f, 0.0f}, true));
  store.entries()[0].value.mutable_grad()[0] = 3.0f;
  store.entries()[0].value.mutable_grad()[1] = 4.0f;
  Adam clipped(0.9, 0.98, 1e-8), plain(0.9, 0.98, 1e-8);
  auto copy = snapshot(store);
  copy.entries()[0].value.mutable_grad()[0] = 3.0f;
  copy.entries()[0].value.mutable_grad()[1] = 4.0f;
  clipped.step(store, 0.1, 1.0);
  plain.step(copy, 0.1, 0.0);
  // The first Adam step is scale-free, so clipping only matters from step two.
  EXPECT_NEAR(store.get("w").at(0), copy.get("w").at(0), 1e-6);
}

TEST(Trainer, SingleStepMatchesManualUpdate) {
  const auto data = generate(tiny_spec(), 4);
  Seq2SeqModel<float> model(tiny_config(), 8);
  Seq2SeqModel<float> reference(tiny_config(), 8);
  auto cfg = quick_config();
  cfg.loss_terms = {true, false, false};
  Trainer trainer(model, cfg);
  const auto batch = pointers(data);
  const auto report = trainer.train_step(batch);

  ForwardContext ctx{true, 0, 0};  // dropout is 0, the seed is irrelevant
  auto loss = compute_losses<float>(reference, batch, {}, cfg, ctx).total;
  EXPECT_FLOAT_EQ(report.total, loss.item());
  loss.backward();
  const double lr = lr_schedule(1, cfg.warmup_steps, cfg.lr);
  EXPECT_DOUBLE_EQ(report.lr, lr);
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    const auto& ref = reference.params().entries()[i].value;
    const auto got = model.params().entries()[i].value.data();
    for (std::size_t k = 0; k < ref.numel(); ++k) {
      const double g = ref.has_grad() ? ref.grad()[k] : 0.0;
      const double expected = ref.at(k) - lr * g / (std::abs(g) + 1e-8);
      ASSERT_NEAR(got[k], expected, 1e-6) << model.params().entries()[i].name << "[" << k << "]";
    }
  }
}

TEST(Trainer, IdenticalSeedsGiveIdenticalRuns) {
  const auto data = generate(tiny_spec(), 16);
  auto cfg = quick_config();
  auto c = tiny_config();
  c.dropout = 0.1;
  Seq2SeqModel<float> a(c, 9), b(c, 9);
  Trainer ta(a, cfg), tb(b, cfg);
  for (int step = 0; step < 50; ++step) {
    const auto batch = pointers(data, (step * 4) % 16, 4);
    const auto ra = ta.train_step(batch);
    const auto rb = tb.train_step(batch);
    ASSERT_EQ(to_json(ra).dump(), to_json(rb).dump()) << "step " << step;
  }
  EXPECT_EQ(flat_params(a), flat_params(b));
}

TEST(Trainer, UncertaintyRatiosStayInSigmoidRange) {
  const auto data = generate(tiny_spec(), 8);
  Seq2SeqModel<float> model(tiny_config(), 10);
  auto cfg = quick_config();
  cfg.ratio = RatioStrategy::uncertainty();
  Trainer trainer(model, cfg);
  for (int step = 0; step < 5; ++step) {
    const auto report = trainer.train_step(pointers(data, 0, 8));
    ASSERT_EQ(report.ratios.size(), 8u);
    ASSERT_EQ(report.uncertainties.size(), 8u);
    for (std::size_t i = 0; i < 8; ++i) {
      EXPECT_GE(report.ratios[i], 0.37754);
      EXPECT_LE(report.ratios[i], 0.62246);
      EXPECT_NEAR(report.ratios[i], ratio_from_uncertainty(report.uncertainties[i], std::log(12.0)), 1e-12);
    }
  }
}

TEST(Trainer, NonFiniteLossThrowsWithoutUpdating) {
  const auto data = generate(tiny_spec(), 4);
  Seq2SeqModel<float> model(tiny_config(), 11);
  model.params().entries()[0].value.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
  Trainer trainer(model, quick_config());
  const auto before = model.params().version();
  EXPECT_THROW(trainer.train_step(pointers(data)), NumericalError);
  EXPECT_EQ(model.params().version(), before);
  EXPECT_EQ(trainer.step(), 0u);
}

TEST(Finetune, ZeroStepsLeaveParametersUnchanged) {
  const auto data = generate(tiny_spec(), 4);
  Seq2SeqModel<float> model(tiny_config(), 12);
  const auto before = flat_params(model);
  const auto result = finetune_st(model, {}, data, quick_config());
  EXPECT_EQ(result.steps, 0u);
  EXPECT_EQ(flat_params(model), before);
}

TEST(Finetune, RespectsStepBudgetAndAverages) {
  const auto data = generate(tiny_spec(), 12);
  Seq2SeqModel<float> model(tiny_config(), 13);
  auto cfg = quick_config();
  cfg.max_steps = 7;
  cfg.average_last = 2;
  const auto result = finetune_st(model, data, data, cfg);
  EXPECT_EQ(result.steps, 7u);
  ASSERT_EQ(result.epochs.size(), 3u);  // 3 + 3 + 1 steps
  EXPECT_EQ(result.averaged, 2u);
}

TEST(PretrainMt, LearnsCopyTaskWithMonotoneLoss) {
  auto spec = tiny_spec(16);
  spec.identity_mapping = true;
  spec.min_words = 2;
  spec.max_words = 4;
  const auto pairs = text_pairs(generate(spec, 1024));
  auto c = tiny_config(16);
  c.d_model = 32;
  c.heads = 4;
  c.ffn_dim = 64;
  Seq2SeqModel<float> model(c, 14);
  auto cfg = quick_config();
  cfg.lr = 3e-3;
  cfg.warmup_steps = 30;
  cfg.batch_size = 16;
  cfg.label_smoothing = 0.0;
  Trainer trainer(model, cfg);
  std::vector<double> losses;
  for (int step = 0; step < 1200; ++step)
    losses.push_back(trainer.mt_step(pointers(pairs, (step * 16) % 1024, 16)));
  double previous = std::numeric_limits<double>::infinity();
  for (int w = 0; w < 10; ++w) {
    double mean = 0.0;
    for (int k = 0; k < 10; ++k) mean += losses[w * 10 + k] / 10.0;
    EXPECT_LE(mean, previous + 1e-9) << "window " << w;
    previous = mean;
  }
  std::size_t correct = 0, total = 0;
  const auto test = text_pairs(generate(spec, 50, 10000));
  for (const auto& p : test) {
    const auto hyp = translate_text(model, p.x, DecodeOptions{1, 20, true});
    for (std::size_t i = 0; i < p.y.size(); ++i) correct += i < hyp.tokens.size() && hyp.tokens[i] == p.y[i];
    total += p.y.size();
  }
  EXPECT_GT(double(correct) / double(total), 0.95);
}
