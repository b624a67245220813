#include "stemm/training.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

#include "stemm/checkpoint.hpp"
#include "stemm/config.hpp"
#include "stemm/errors.hpp"
#include "stemm/losses.hpp"
#include "stemm/ops.hpp"

namespace stemm {

void TrainingConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("training: " + msg); };
  if (!(jsd_weight >= 0.0)) fail("jsd_weight must be non-negative");
  ratio.validate();
  if (!loss_terms.st_ce && !loss_terms.mixup_ce) fail("at least one cross-entropy term must be enabled");
  if (loss_terms.jsd && !(loss_terms.st_ce && loss_terms.mixup_ce))
    fail("the jsd term requires both st_ce and mixup_ce");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (warmup_steps == 0) fail("warmup_steps must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    fail("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (!(clip_norm >= 0.0)) fail("clip_norm must be non-negative");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) fail("label_smoothing must lie in [0, 1)");
  if (batch_size == 0) fail("batch_size must be positive");
  if (max_epochs == 0) fail("max_epochs must be positive");
  if (average_last == 0) fail("average_last must be at least 1");
}

nlohmann::json to_json(const TrainingConfig& c) {
  return {{"jsd_weight", c.jsd_weight},
          {"ratio", c.ratio.to_string()},
          {"loss_terms", {{"st_ce", c.loss_terms.st_ce},
                          {"mixup_ce", c.loss_terms.mixup_ce},
                          {"jsd", c.loss_terms.jsd}}},
          {"jsd_stop_grad", c.jsd_stop_grad},
          {"lr", c.lr},
          {"warmup_steps", c.warmup_steps},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"clip_norm", c.clip_norm},
          {"label_smoothing", c.label_smoothing},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"max_steps", c.max_steps},
          {"patience", c.patience},
          {"average_last", c.average_last},
          {"seed", c.seed}};
}

void read_training_fields(StrictObject& obj, TrainingConfig& c) {
  obj.read("jsd_weight", c.jsd_weight);
  std::string ratio;
  if (obj.read("ratio", ratio)) c.ratio = RatioStrategy::parse(ratio);
  if (const auto* terms = obj.child("loss_terms")) {
    StrictObject t(*terms, "loss_terms");
    t.read("st_ce", c.loss_terms.st_ce);
    t.read("mixup_ce", c.loss_terms.mixup_ce);
    t.read("jsd", c.loss_terms.jsd);
    t.finish();
  }
  obj.read("jsd_stop_grad", c.jsd_stop_grad);
  obj.read("lr", c.lr);
  obj.read("warmup_steps", c.warmup_steps);
  obj.read("beta1", c.beta1);
  obj.read("beta2", c.beta2);
  obj.read("adam_eps", c.adam_eps);
  obj.read("clip_norm", c.clip_norm);
  obj.read("label_smoothing", c.label_smoothing);
  obj.read("batch_size", c.batch_size);
  obj.read("max_epochs", c.max_epochs);
  obj.read("max_steps", c.max_steps);
  obj.read("patience", c.patience);
  obj.read("average_last", c.average_last);
  obj.read("seed", c.seed);
}

TrainingConfig training_config_from_json(const nlohmann::json& j, const TrainingConfig& base) {
  TrainingConfig c = base;
  StrictObject obj(j, "training");
  read_training_fields(obj, c);
  obj.finish();
  c.validate();
  return c;
}

double lr_schedule(std::size_t step, std::size_t warmup, double base_lr) {
  if (step == 0) step = 1;
  if (step <= warmup) return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  return base_lr * std::sqrt(static_cast<double>(warmup) / static_cast<double>(step));
}

bool early_stop(std::span<const double> dev_losses, std::size_t patience) {
  if (dev_losses.empty()) return false;
  const auto best = std::min_element(dev_losses.begin(), dev_losses.end()) - dev_losses.begin();
  const auto since = dev_losses.size() - 1 - static_cast<std::size_t>(best);
  return since > patience;
}

nlohmann::json to_json(const StepReport& r) {
  return {{"type", "step"},       {"step", r.step},   {"lr", r.lr},
          {"ce_st", r.ce_st},     {"ce_mix", r.ce_mix}, {"jsd", r.jsd},
          {"total", r.total},     {"tokens", r.tokens}, {"ratios", r.ratios},
          {"uncertainties", r.uncertainties}};
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
SeqBatch<T> speech_features(std::span<const AlignedTriple* const> batch) {
  std::vector<Tensor<T>> feats;
  feats.reserve(batch.size());
  for (const auto* t : batch) feats.push_back(features_tensor<T>(t->speech));
  return pack_sequences<T>(feats);
}

std::vector<std::vector<int>> targets_of(std::span<const AlignedTriple* const> batch) {
  std::vector<std::vector<int>> ys;
  for (const auto* t : batch) ys.push_back(t->y);
  return ys;
}

std::size_t speech_length(const ModelConfig& m, std::size_t frames) {
  const auto once = conv_out_len(frames, m.conv_kernel, m.conv_stride, m.conv_padding);
  return conv_out_len(once, m.conv_kernel, m.conv_stride, m.conv_padding);
}

template <typename T>
Tensor<T> zero_scalar() {
  return Tensor<T>::scalar(T(0));
}

}  // namespace

std::vector<MixupPlan> plan_batch(std::span<const AlignedTriple* const> batch,
                                  std::span<const double> ratios, const ModelConfig& model,
                                  Rng& rng) {
  if (ratios.size() != batch.size())
    throw DimensionError("plan_batch: " + std::to_string(ratios.size()) + " ratios for " +
                         std::to_string(batch.size()) + " examples");
  std::vector<MixupPlan> plans;
  plans.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& t = *batch[b];
    try {
      plans.push_back(plan_mixup(t.align, speech_length(model, t.speech.frames), t.x.size(),
                                 ratios[b], rng));
    } catch (const AlignmentError& e) {
      throw AlignmentError(e.what(), t.id, e.word());
    }
  }
  return plans;
}

template <typename T>
LossTerms<T> compute_losses(const Seq2SeqModel<T>& model,
                            std::span<const AlignedTriple* const> batch,
                            std::span<const MixupPlan> plans, const TrainingConfig& config,
                            ForwardContext& ctx) {
  if (batch.empty()) throw std::invalid_argument("compute_losses: empty batch");
  const auto& sw = config.loss_terms;
  const auto tf = make_teacher_forcing(targets_of(batch));
  const auto downsampled = model.downsample(speech_features<T>(batch), ctx);
  const double eps = config.label_smoothing;

  LossTerms<T> out;
  out.tokens = tf.target_count;
  out.ce_st = out.ce_mix = out.jsd = zero_scalar<T>();

  Tensor<T> logits_st, logits_mix;
  if (sw.st_ce || sw.jsd) {
    const auto memory = model.encode(model.speech_input(downsampled, ctx), ctx);
    logits_st = model.decoder_logits(memory, tf.inputs, ctx);
    out.ce_st = cross_entropy(logits_st, tf.targets, eps);
  }
  if (sw.mixup_ce || sw.jsd) {
    if (plans.size() != batch.size())
      throw DimensionError("compute_losses: " + std::to_string(plans.size()) + " mixup plans for " +
                           std::to_string(batch.size()) + " examples");
    std::vector<std::vector<int>> xs;
    for (const auto* t : batch) xs.push_back(t->x);
    const auto text = model.embed_batch(xs);
    SeqBatch<T> mixed;
    for (const auto& p : plans) mixed.len = std::max(mixed.len, p.length());
    std::vector<RowRef> refs(batch.size() * mixed.len, RowRef{-1, 0});
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& plan = plans[b];
      for (std::size_t i = 0; i < plan.length(); ++i) {
        const auto& r = plan.rows[i];
        const bool speech = r.source == 0;
        const std::size_t limit = speech ? downsampled.lengths[b] : text.lengths[b];
        if (r.row >= limit)
          throw IndexError("compute_losses: mixup row " + std::to_string(r.row) +
                           " outside example " + std::to_string(b));
        refs[b * mixed.len + i] = {r.source, b * (speech ? downsampled.len : text.len) + r.row};
      }
      mixed.lengths.push_back(plan.length());
    }
    const Tensor<T> sources[] = {downsampled.x, text.x};
    mixed.x = gather_rows<T>(sources, refs);
    const auto memory = model.encode(model.stem(model.append_eos(mixed), ctx), ctx);
    logits_mix = model.decoder_logits(memory, tf.inputs, ctx);
    out.ce_mix = cross_entropy(logits_mix, tf.targets, eps);
  }
  if (sw.jsd) {
    const auto q = config.jsd_stop_grad ? logits_mix.detach() : logits_mix;
    out.jsd = scale(jsd_loss(logits_st, q, tf.targets), T(1) / static_cast<T>(tf.target_count));
  }

  Tensor<T> total;
  auto accumulate = [&](const Tensor<T>& term) { total = total.defined() ? add(total, term) : term; };
  if (sw.st_ce) accumulate(out.ce_st);
  if (sw.mixup_ce) accumulate(out.ce_mix);
  if (sw.jsd) accumulate(scale(out.jsd, static_cast<T>(config.jsd_weight)));
  out.total = total;
  return out;
}

template <typename T>
Tensor<T> mt_loss(const Seq2SeqModel<T>& model, std::span<const TextPair* const> batch,
                  double label_smoothing, ForwardContext& ctx) {
  if (batch.empty()) throw std::invalid_argument("mt_loss: empty batch");
  std::vector<std::vector<int>> xs, ys;
  for (const auto* p : batch) {
    xs.push_back(p->x);
    ys.push_back(p->y);
  }
  const auto tf = make_teacher_forcing(ys);
  const auto memory = model.encode(model.text_input(xs, ctx), ctx);
  return cross_entropy(model.decoder_logits(memory, tf.inputs, ctx), tf.targets, label_smoothing);
}

// ---------------------------------------------------------------------------

double Adam::step(ParamStore<float>& params, double lr, double clip_norm) {
  auto& entries = params.entries();
  if (m_.empty()) {
    for (const auto& e : entries) {
      m_.emplace_back(e.value.numel(), 0.0f);
      v_.emplace_back(e.value.numel(), 0.0f);
    }
  }
  double sq = 0.0;
  for (const auto& e : entries)
    if (e.value.has_grad())
      for (float g : e.value.grad()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  const double clip = clip_norm > 0.0 && norm > clip_norm ? clip_norm / norm : 1.0;

  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const float b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
  const float step_size = static_cast<float>(lr / c1);
  const float inv_c2 = static_cast<float>(1.0 / c2);
  const float eps = static_cast<float>(eps_);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& p = entries[i].value;
    if (!p.has_grad()) continue;
    auto w = p.mutable_data();
    auto g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const float gk = g[k] * static_cast<float>(clip);
      m[k] = b1 * m[k] + (1.0f - b1) * gk;
      v[k] = b2 * v[k] + (1.0f - b2) * gk * gk;
      w[k] -= step_size * m[k] / (std::sqrt(v[k] * inv_c2) + eps);
    }
  }
  params.bump_version();
  return norm;
}

Trainer::Trainer(Seq2SeqModel<float>& model, TrainingConfig config)
    : model_(model),
      config_(std::move(config)),
      adam_(config_.beta1, config_.beta2, config_.adam_eps) {
  config_.validate();
}

double Trainer::apply_update(Tensor<float>& loss) {
  model_.params().zero_grad();
  loss.backward();
  const double lr = lr_schedule(step_, config_.warmup_steps, config_.lr);
  adam_.step(model_.params(), lr, config_.clip_norm);
  model_.params().zero_grad();
  return lr;
}

StepReport Trainer::train_step(std::span<const AlignedTriple* const> batch) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const std::size_t step = step_ + 1;
  StepReport report;
  report.step = step;

  const auto& sw = config_.loss_terms;
  const bool mixing = sw.mixup_ce || sw.jsd;
  if (config_.ratio.kind == RatioStrategy::Kind::Uncertainty && mixing) {
    const double U = config_.ratio.normalizer > 0.0
                         ? config_.ratio.normalizer
                         : std::log(static_cast<double>(model_.config().vocab_size));
    report.uncertainties = speech_uncertainty(model_, speech_features<float>(batch), targets_of(batch));
    for (double u : report.uncertainties) report.ratios.push_back(ratio_from_uncertainty(u, U));
  } else if (mixing) {
    report.ratios.assign(batch.size(), config_.ratio.ratio);
  }

  std::vector<MixupPlan> plans;
  if (mixing) {
    auto rng = make_rng(mix_seed(config_.seed, step), "mixup");
    plans = plan_batch(batch, report.ratios, model_.config(), rng);
  }
  ForwardContext ctx{true, mix_seed(mix_seed(config_.seed, name_seed("dropout")), step), 0};
  const auto version = model_.params().version();
  auto terms = compute_losses<float>(model_, batch, plans, config_, ctx);
  if (model_.params().version() != version)
    throw Error("train_step: parameters changed between the speech and mixup passes");

  report.ce_st = terms.ce_st.item();
  report.ce_mix = terms.ce_mix.item();
  report.jsd = terms.jsd.item();
  report.total = terms.total.item();
  report.tokens = terms.tokens;
  if (!std::isfinite(report.total)) {
    std::ostringstream ss;
    ss << "non-finite loss at step " << step << ": ce_st=" << report.ce_st
       << " ce_mix=" << report.ce_mix << " jsd=" << report.jsd << " total=" << report.total;
    throw NumericalError(ss.str());
  }
  step_ = step;
  report.lr = apply_update(terms.total);
  return report;
}

double Trainer::mt_step(std::span<const TextPair* const> batch) {
  const std::size_t step = step_ + 1;
  ForwardContext ctx{true, mix_seed(mix_seed(config_.seed, name_seed("dropout")), step), 0};
  auto loss = mt_loss<float>(model_, batch, config_.label_smoothing, ctx);
  const double value = loss.item();
  if (!std::isfinite(value))
    throw NumericalError("non-finite MT loss " + std::to_string(value) + " at step " +
                         std::to_string(step));
  step_ = step;
  apply_update(loss);
  return value;
}

// ---------------------------------------------------------------------------

namespace {

template <typename Item>
std::vector<std::vector<const Item*>> make_batches(const std::vector<Item>& data,
                                                   std::size_t batch_size, Rng* shuffle) {
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (shuffle) {
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform01(*shuffle) * static_cast<double>(i));
      std::swap(order[i - 1], order[j]);
    }
  }
  std::vector<std::vector<const Item*>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    std::vector<const Item*> b;
    for (std::size_t k = i; k < std::min(order.size(), i + batch_size); ++k) b.push_back(&data[order[k]]);
    batches.push_back(std::move(b));
  }
  return batches;
}

/// Copies averaged values into the live parameter tensors.
void load_values(ParamStore<float>& dst, const ParamStore<float>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) {
    auto out = dst.entries()[i].value.mutable_data();
    auto in = src.entries()[i].value.data();
    std::copy(in.begin(), in.end(), out.begin());
  }
  dst.bump_version();
}

template <typename Item, typename StepFn, typename DevFn>
FitResult fit(Seq2SeqModel<float>& model, const std::vector<Item>& train,
              const TrainingConfig& config, JsonlWriter* metrics, const char* stage,
              Trainer& trainer, StepFn&& step_fn, DevFn&& dev_fn) {
  FitResult result;
  if (config.max_steps == 0 && train.empty()) return result;
  std::deque<ParamStore<float>> recent;
  std::vector<double> dev_history;
  bool budget_spent = config.max_steps > 0 && trainer.step() >= config.max_steps;
  for (std::size_t epoch = 1; epoch <= config.max_epochs && !budget_spent && !train.empty(); ++epoch) {
    auto rng = make_rng(mix_seed(config.seed, epoch), "shuffle");
    double loss_sum = 0.0;
    std::size_t n = 0;
    for (const auto& batch : make_batches(train, config.batch_size, &rng)) {
      loss_sum += step_fn(batch);
      ++n;
      if (config.max_steps > 0 && trainer.step() >= config.max_steps) {
        budget_spent = true;
        break;
      }
    }
    EpochSummary summary{epoch, trainer.step(), loss_sum / static_cast<double>(std::max<std::size_t>(n, 1)),
                         dev_fn()};
    result.epochs.push_back(summary);
    dev_history.push_back(summary.dev_loss);
    recent.push_back(snapshot(model.params()));
    if (recent.size() > config.average_last) recent.pop_front();
    if (metrics)
      metrics->write({{"type", "epoch"}, {"stage", stage}, {"epoch", epoch}, {"step", summary.steps},
                      {"train_loss", summary.train_loss}, {"dev_loss", summary.dev_loss}});
    if (early_stop(dev_history, config.patience)) {
      result.early_stopped = true;
      break;
    }
  }
  result.steps = trainer.step();
  if (recent.size() > 1) {
    std::vector<ParamStore<float>> list(std::make_move_iterator(recent.begin()),
                                        std::make_move_iterator(recent.end()));
    load_values(model.params(), average_checkpoints<float>(list));
    result.averaged = list.size();
  }
  return result;
}

template <typename Item, typename LossFn>
double dev_loss(const std::vector<Item>& data, std::size_t batch_size, LossFn&& loss_fn) {
  if (data.empty()) return 0.0;
  NoGradGuard guard;
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const auto& batch : make_batches<Item>(data, batch_size, nullptr)) {
    std::size_t count = 0;
    for (const auto* item : batch) count += item->y.size() + 1;
    nll += loss_fn(batch) * static_cast<double>(count);
    tokens += count;
  }
  return nll / static_cast<double>(tokens);
}

}  // namespace

double st_dev_loss(const Seq2SeqModel<float>& model, const std::vector<AlignedTriple>& data,
                   std::size_t batch_size) {
  TrainingConfig cfg;
  cfg.loss_terms = {true, false, false};
  cfg.label_smoothing = 0.0;
  return dev_loss(data, batch_size, [&](const std::vector<const AlignedTriple*>& batch) {
    ForwardContext ctx;
    return static_cast<double>(compute_losses<float>(model, batch, {}, cfg, ctx).ce_st.item());
  });
}

double mt_dev_loss(const Seq2SeqModel<float>& model, const std::vector<TextPair>& data,
                   std::size_t batch_size) {
  return dev_loss(data, batch_size, [&](const std::vector<const TextPair*>& batch) {
    ForwardContext ctx;
    return static_cast<double>(mt_loss<float>(model, batch, 0.0, ctx).item());
  });
}

FitResult pretrain_mt(Seq2SeqModel<float>& model, const std::vector<TextPair>& train,
                      const std::vector<TextPair>& dev, const TrainingConfig& config,
                      JsonlWriter* metrics) {
  Trainer trainer(model, config);
  return fit(model, train, config, metrics, "mt", trainer,
             [&](const std::vector<const TextPair*>& batch) {
               const double loss = trainer.mt_step(batch);
               if (metrics)
                 metrics->write({{"type", "step"}, {"stage", "mt"}, {"step", trainer.step()},
                                 {"lr", lr_schedule(trainer.step(), config.warmup_steps, config.lr)},
                                 {"total", loss}});
               return loss;
             },
             [&] { return mt_dev_loss(model, dev, config.batch_size); });
}

FitResult finetune_st(Seq2SeqModel<float>& model, const std::vector<AlignedTriple>& train,
                      const std::vector<AlignedTriple>& dev, const TrainingConfig& config,
                      JsonlWriter* metrics) {
  Trainer trainer(model, config);
  return fit(model, train, config, metrics, "st", trainer,
             [&](const std::vector<const AlignedTriple*>& batch) {
               const auto report = trainer.train_step(batch);
               if (metrics) {
                 auto row = to_json(report);
                 row["stage"] = "st";
                 metrics->write(row);
               }
               return report.total;
             },
             [&] { return st_dev_loss(model, dev, config.batch_size); });
}

template LossTerms<float> compute_losses(const Seq2SeqModel<float>&, std::span<const AlignedTriple* const>,
                                         std::span<const MixupPlan>, const TrainingConfig&, ForwardContext&);
template LossTerms<double> compute_losses(const Seq2SeqModel<double>&, std::span<const AlignedTriple* const>,
                                          std::span<const MixupPlan>, const TrainingConfig&, ForwardContext&);
template Tensor<float> mt_loss(const Seq2SeqModel<float>&, std::span<const TextPair* const>, double, ForwardContext&);
template Tensor<double> mt_loss(const Seq2SeqModel<double>&, std::span<const TextPair* const>, double, ForwardContext&);

}  // namespace stemm
