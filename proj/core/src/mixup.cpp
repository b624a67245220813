#include "stemm/mixup.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "stemm/errors.hpp"
#include "stemm/ops.hpp"

namespace stemm {

MixupPlan plan_mixup(const WordAlignment& align, std::size_t speech_len,
                     std::size_t text_len, double ratio, std::span<const double> draws) {
  validate_alignment(align, speech_len, text_len);
  if (draws.size() != align.words.size())
    throw DimensionError("mixup: " + std::to_string(draws.size()) + " draws for " +
                         std::to_string(align.words.size()) + " words");
  MixupPlan plan;
  plan.ratio = ratio;
  for (std::size_t i = 0; i < align.words.size(); ++i) {
    const auto& w = align.words[i];
    const bool speech = draws[i] <= ratio;
    MixupSegment seg{i, speech ? Modality::Speech : Modality::Text, plan.rows.size(), 0};
    const std::size_t first = speech ? w.speech_first : w.subword_first;
    const std::size_t last = speech ? w.speech_last : w.subword_last;
    for (std::size_t r = first; r <= last; ++r) plan.rows.push_back({speech ? 0 : 1, r});
    seg.end = plan.rows.size();
    plan.segments.push_back(seg);
  }
  return plan;
}

MixupPlan plan_mixup(const WordAlignment& align, std::size_t speech_len,
                     std::size_t text_len, double ratio, Rng& rng) {
  std::vector<double> draws(align.words.size());
  for (auto& d : draws) d = uniform01(rng);
  return plan_mixup(align, speech_len, text_len, ratio, draws);
}

template <typename T>
MixupSequence<T> apply_mixup(const Tensor<T>& a, const Tensor<T>& e,
                             const MixupPlan& plan) {
  if (a.cols() != e.cols()) {
    throw DimensionError("mixup: speech width " + std::to_string(a.cols()) +
                         " differs from text width " + std::to_string(e.cols()));
  }
  const Tensor<T> sources[] = {a, e};
  MixupSequence<T> out;
  out.vectors = gather_rows<T>(sources, plan.rows);
  out.segments = plan.segments;
  out.ratio_used = plan.ratio;
  return out;
}

template <typename T>
MixupSequence<T> build_mixup(const Tensor<T>& a, const Tensor<T>& e,
                             const WordAlignment& align, double ratio, Rng& rng) {
  return apply_mixup(a, e, plan_mixup(align, a.rows(), e.rows(), ratio, rng));
}

template <typename T>
Tensor<T> finalize_mixup(const MixupSequence<T>& mix, const Tensor<T>& gain,
                         const Tensor<T>& bias, bool add_positions) {
  Tensor<T> x = mix.vectors;
  if (add_positions) {
    const std::size_t n = x.rows(), d = x.cols();
    x = add(x, Tensor<T>::from_data({n, d}, sinusoid_positions<T>(n, d)));
  }
  return layer_norm(x, gain, bias);
}

template <typename T>
Tensor<T> finalize_mixup(const Seq2SeqModel<T>& model, const MixupSequence<T>& mix) {
  return finalize_mixup(mix, model.input_norm_gain(), model.input_norm_bias());
}

double mean_entropy(std::span<const std::vector<double>> distributions) {
  if (distributions.empty()) throw std::invalid_argument("uncertainty: empty target");
  double total = 0.0;
  for (const auto& p : distributions) {
    double h = 0.0;
    for (double v : p)
      if (v > 0.0) h -= v * std::log(v);
    total += h;
  }
  return total / static_cast<double>(distributions.size());
}

template <typename T>
std::vector<double> speech_uncertainty(const Seq2SeqModel<T>& model,
                                       const SeqBatch<T>& features,
                                       const std::vector<std::vector<int>>& ys) {
  for (const auto& y : ys)
    if (y.empty()) throw std::invalid_argument("uncertainty: empty target");
  NoGradGuard guard;
  ForwardContext ctx;
  const auto memory = model.encode(model.speech_input(model.downsample(features, ctx), ctx), ctx);
  const auto tf = make_teacher_forcing(ys);
  const auto logits = model.decoder_logits(memory, tf.inputs, ctx);
  const std::size_t V = logits.cols();
  const auto z = logits.data();
  std::vector<double> out(ys.size(), 0.0);
  for (std::size_t b = 0; b < ys.size(); ++b) {
    // Teacher-forced steps predict y_1..y_n and the closing EOS.
    const std::size_t steps = ys[b].size() + 1;
    double total = 0.0;
    for (std::size_t t = 0; t < steps; ++t) {
      const auto row = z.subspan((b * tf.len + t) * V, V);
      double mx = -std::numeric_limits<double>::infinity();
      for (T v : row) mx = std::max(mx, static_cast<double>(v));
      double s = 0.0, sz = 0.0;
      for (T v : row) {
        const double ev = std::exp(static_cast<double>(v) - mx);
        s += ev;
        sz += ev * (static_cast<double>(v) - mx);
      }
      total += std::log(s) - sz / s;
    }
    out[b] = total / static_cast<double>(steps);
  }
  return out;
}

double ratio_from_uncertainty(double u, double U) {
  if (!(U > 0.0)) throw std::invalid_argument("uncertainty normalizer must be positive");
  if (u < 0.0) throw std::invalid_argument("uncertainty must be non-negative");
  return 1.0 / (1.0 + std::exp(-(u / U - 0.5)));
}

RatioStrategy RatioStrategy::parse(const std::string& text) {
  auto number = [&](const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size())
      throw ConfigError("ratio: cannot parse number in \"" + text + "\"");
    return v;
  };
  RatioStrategy r;
  if (text.rfind("static:", 0) == 0) {
    r = fixed(number(text.substr(7)));
  } else if (text == "uncertainty") {
    r = uncertainty();
  } else if (text.rfind("uncertainty:", 0) == 0) {
    r = uncertainty(number(text.substr(12)));
  } else {
    throw ConfigError("ratio: expected static:<p> or uncertainty, got \"" + text + "\"");
  }
  r.validate();
  return r;
}

std::string RatioStrategy::to_string() const {
  auto fmt = [](double v) {
    std::string s = std::to_string(v);
    while (s.size() > 1 && s.back() == '0') s.pop_back();
    if (s.back() == '.') s.pop_back();
    return s;
  };
  if (kind == Kind::Static) return "static:" + fmt(ratio);
  return normalizer > 0.0 ? "uncertainty:" + fmt(normalizer) : "uncertainty";
}

void RatioStrategy::validate() const {
  if (kind == Kind::Static && !(ratio >= 0.0 && ratio <= 1.0))
    throw ConfigError("ratio: static p* must lie in [0, 1]");
  if (kind == Kind::Uncertainty && normalizer < 0.0)
    throw ConfigError("ratio: uncertainty normalizer must be positive");
}

template MixupSequence<float> apply_mixup(const Tensor<float>&, const Tensor<float>&, const MixupPlan&);
template MixupSequence<double> apply_mixup(const Tensor<double>&, const Tensor<double>&, const MixupPlan&);
template MixupSequence<float> build_mixup(const Tensor<float>&, const Tensor<float>&, const WordAlignment&, double, Rng&);
template MixupSequence<double> build_mixup(const Tensor<double>&, const Tensor<double>&, const WordAlignment&, double, Rng&);
template Tensor<float> finalize_mixup(const MixupSequence<float>&, const Tensor<float>&, const Tensor<float>&, bool);
template Tensor<double> finalize_mixup(const MixupSequence<double>&, const Tensor<double>&, const Tensor<double>&, bool);
template Tensor<float> finalize_mixup(const Seq2SeqModel<float>&, const MixupSequence<float>&);
template Tensor<double> finalize_mixup(const Seq2SeqModel<double>&, const MixupSequence<double>&);
template std::vector<double> speech_uncertainty(const Seq2SeqModel<float>&, const SeqBatch<float>&, const std::vector<std::vector<int>>&);
template std::vector<double> speech_uncertainty(const Seq2SeqModel<double>&, const SeqBatch<double>&, const std::vector<std::vector<int>>&);

}  // namespace stemm
