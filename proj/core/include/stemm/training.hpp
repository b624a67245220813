#pragma once

#include <cstddef>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <span>
#include <vector>

#include "stemm/config.hpp"
#include "stemm/dataset.hpp"
#include "stemm/io.hpp"
#include "stemm/mixup.hpp"
#include "stemm/model.hpp"

namespace stemm {

struct LossSwitches {
  bool st_ce = true;
  bool mixup_ce = true;
  bool jsd = true;
  bool operator==(const LossSwitches&) const = default;
};

struct TrainingConfig {
  /// Weight of the JSD term.
  double jsd_weight = 1.0;
  RatioStrategy ratio = RatioStrategy::fixed(0.4);
  LossSwitches loss_terms;
  /// Stops JSD gradients through the mixup branch (ablation).
  bool jsd_stop_grad = false;

  double lr = 2e-4;
  std::size_t warmup_steps = 4000;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-8;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
  double label_smoothing = 0.1;

  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  /// Hard cap on optimizer steps; 0 means unlimited.
  std::size_t max_steps = 0;
  std::size_t patience = 10;
  /// Number of trailing epoch checkpoints averaged at the end.
  std::size_t average_last = 10;
  std::uint64_t seed = 1;

  /// Throws ConfigError.
  void validate() const;
  bool operator==(const TrainingConfig&) const = default;
};

nlohmann::json to_json(const TrainingConfig& config);
/// Reads the training fields of `obj`, leaving other keys to the caller.
void read_training_fields(StrictObject& obj, TrainingConfig& config);
TrainingConfig training_config_from_json(const nlohmann::json& j,
                                         const TrainingConfig& base = {});

/// Linear warmup to base_lr at `warmup`, then base_lr * sqrt(warmup / step).
double lr_schedule(std::size_t step, std::size_t warmup, double base_lr);

/// True iff the lowest loss (first occurrence) lies more than `patience`
/// epochs before the latest one.
bool early_stop(std::span<const double> dev_losses, std::size_t patience = 10);

struct StepReport {
  std::size_t step = 0;
  double lr = 0.0;
  double ce_st = 0.0;
  double ce_mix = 0.0;
  double jsd = 0.0;
  double total = 0.0;
  std::vector<double> ratios;
  std::vector<double> uncertainties;
  std::size_t tokens = 0;
};

nlohmann::json to_json(const StepReport& report);

template <typename T>
struct LossTerms {
  Tensor<T> ce_st, ce_mix, jsd, total;
  std::size_t tokens = 0;
};

/// Mixup plans for a batch, one per example, drawn in batch order.
std::vector<MixupPlan> plan_batch(std::span<const AlignedTriple* const> batch,
                                  std::span<const double> ratios,
                                  const ModelConfig& model, Rng& rng);

/**
 * The training objective on one batch: speech-only cross-entropy, mixup
 * cross-entropy through the same parameters, and the JSD between the two
 * prediction sets (per target token). Disabled terms are zero scalars.
 */
template <typename T>
LossTerms<T> compute_losses(const Seq2SeqModel<T>& model,
                            std::span<const AlignedTriple* const> batch,
                            std::span<const MixupPlan> plans,
                            const TrainingConfig& config, ForwardContext& ctx);

/// Teacher-forced cross-entropy of text inputs (MT pretraining objective).
template <typename T>
Tensor<T> mt_loss(const Seq2SeqModel<T>& model, std::span<const TextPair* const> batch,
                  double label_smoothing, ForwardContext& ctx);

class Adam {
 public:
  Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  /// Updates every parameter that received a gradient; returns the
  /// gradient norm before clipping.
  double step(ParamStore<float>& params, double lr, double clip_norm);
  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

/// Owns the optimizer state for one model.
class Trainer {
 public:
  Trainer(Seq2SeqModel<float>& model, TrainingConfig config);

  /// Uncertainty pre-pass (if configured), both forward passes, one update.
  /// Throws NumericalError without updating on a non-finite loss.
  StepReport train_step(std::span<const AlignedTriple* const> batch);
  /// One MT pretraining update; returns the loss.
  double mt_step(std::span<const TextPair* const> batch);

  std::size_t step() const { return step_; }
  const TrainingConfig& config() const { return config_; }

 private:
  double apply_update(Tensor<float>& loss);

  Seq2SeqModel<float>& model_;
  TrainingConfig config_;
  Adam adam_;
  std::size_t step_ = 0;
};

struct EpochSummary {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double train_loss = 0.0;
  double dev_loss = 0.0;
};

struct FitResult {
  std::vector<EpochSummary> epochs;
  std::size_t steps = 0;
  bool early_stopped = false;
  /// Checkpoints averaged into the final parameters.
  std::size_t averaged = 0;
};

/// Per-token NLL of the speech-only pass, eval mode.
double st_dev_loss(const Seq2SeqModel<float>& model, const std::vector<AlignedTriple>& data,
                   std::size_t batch_size);
/// Per-token NLL of the text-input pass, eval mode.
double mt_dev_loss(const Seq2SeqModel<float>& model, const std::vector<TextPair>& data,
                   std::size_t batch_size);

FitResult pretrain_mt(Seq2SeqModel<float>& model, const std::vector<TextPair>& train,
                      const std::vector<TextPair>& dev, const TrainingConfig& config,
                      JsonlWriter* metrics = nullptr);

FitResult finetune_st(Seq2SeqModel<float>& model, const std::vector<AlignedTriple>& train,
                      const std::vector<AlignedTriple>& dev, const TrainingConfig& config,
                      JsonlWriter* metrics = nullptr);

}  // namespace stemm
