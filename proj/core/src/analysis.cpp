#include "stemm/analysis.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include "stemm/io.hpp"
#include "stemm/mixup.hpp"

namespace stemm {

std::optional<double> cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw std::invalid_argument("cosine_similarity: length mismatch");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) return std::nullopt;
  return std::clamp(dot / std::sqrt(nu * nv), -1.0, 1.0);
}

namespace {

std::vector<double> mean_rows(const Tensor<float>& t, std::size_t first, std::size_t last) {
  const std::size_t d = t.cols();
  std::vector<double> out(d, 0.0);
  for (std::size_t r = first; r <= last; ++r)
    for (std::size_t c = 0; c < d; ++c) out[c] += t.at(r, c);
  for (auto& v : out) v /= static_cast<double>(last - first + 1);
  return out;
}

}  // namespace

std::vector<WordRepPair> pool_word_pairs(const Tensor<float>& a, const Tensor<float>& e,
                                         const WordAlignment& align, const std::vector<int>& x,
                                         const std::string& utterance) {
  validate_alignment(align, a.rows(), e.rows(), utterance);
  std::vector<WordRepPair> out;
  for (std::size_t i = 0; i < align.words.size(); ++i) {
    const auto& w = align.words[i];
    WordRepPair p;
    p.utterance = utterance;
    p.word = i;
    if (!x.empty()) {
      for (std::size_t s = w.subword_first; s <= w.subword_last; ++s)
        p.label += (s == w.subword_first ? "" : "_") + std::to_string(x.at(s));
    } else {
      p.label = w.word;
    }
    p.alpha = mean_rows(a, w.speech_first, w.speech_last);
    p.epsilon = mean_rows(e, w.subword_first, w.subword_last);
    const auto cos = cosine_similarity(p.alpha, p.epsilon);
    p.degenerate = !cos.has_value();
    p.cosine = cos.value_or(0.0);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<WordRepPair> word_representations(const AlignedTriple& triple,
                                              const Seq2SeqModel<float>& model) {
  NoGradGuard guard;
  ForwardContext ctx;
  const auto a = model.downsample(features_tensor<float>(triple.speech), ctx);
  const auto e = model.embed(triple.x);
  return pool_word_pairs(a, e, triple.align, triple.x, triple.id);
}

SimilarityResult modality_similarity(std::span<const WordRepPair> pairs) {
  SimilarityResult r;
  double total = 0.0;
  for (const auto& p : pairs) {
    if (p.degenerate) {
      ++r.n_degenerate;
      continue;
    }
    total += p.cosine;
    ++r.n_pairs;
  }
  if (r.n_pairs > 0) r.similarity_pct = 100.0 * total / static_cast<double>(r.n_pairs);
  return r;
}

SimilarityResult modality_similarity(const std::vector<AlignedTriple>& data,
                                     const Seq2SeqModel<float>& model) {
  if (data.empty()) throw std::invalid_argument("modality_similarity: empty dataset");
  std::vector<WordRepPair> pairs;
  for (const auto& t : data) {
    auto p = word_representations(t, model);
    pairs.insert(pairs.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
  }
  return modality_similarity(pairs);
}

double corpus_bleu(const std::vector<std::vector<int>>& hyps,
                   const std::vector<std::vector<int>>& refs, std::size_t max_n) {
  if (hyps.empty()) throw std::invalid_argument("corpus_bleu: empty corpus");
  if (hyps.size() != refs.size())
    throw std::invalid_argument("corpus_bleu: " + std::to_string(hyps.size()) + " hypotheses for " +
                                std::to_string(refs.size()) + " references");
  if (max_n == 0) throw std::invalid_argument("corpus_bleu: max_n must be positive");
  std::vector<double> matched(max_n, 0.0), possible(max_n, 0.0);
  double hyp_len = 0.0, ref_len = 0.0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto& h = hyps[s];
    const auto& r = refs[s];
    hyp_len += static_cast<double>(h.size());
    ref_len += static_cast<double>(r.size());
    for (std::size_t n = 1; n <= max_n; ++n) {
      std::map<std::vector<int>, int> ref_counts, hyp_counts;
      for (std::size_t i = 0; i + n <= r.size(); ++i) ++ref_counts[{r.begin() + i, r.begin() + i + n}];
      for (std::size_t i = 0; i + n <= h.size(); ++i) ++hyp_counts[{h.begin() + i, h.begin() + i + n}];
      for (const auto& [gram, count] : hyp_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matched[n - 1] += std::min(count, it->second);
      }
      if (h.size() >= n) possible[n - 1] += static_cast<double>(h.size() - n + 1);
    }
  }
  double log_sum = 0.0;
  for (std::size_t n = 0; n < max_n; ++n) {
    if (matched[n] == 0.0 || possible[n] == 0.0) return 0.0;
    log_sum += std::log(matched[n] / possible[n]);
  }
  const double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(max_n));
}

PcaResult pca_project(const std::vector<std::vector<double>>& vectors, std::size_t k) {
  if (vectors.empty()) return {};
  const std::size_t n = vectors.size(), d = vectors.front().size();
  Eigen::MatrixXd X(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    if (vectors[i].size() != d) throw std::invalid_argument("pca_project: ragged input");
    for (std::size_t j = 0; j < d; ++j) X(i, j) = vectors[i][j];
  }
  X.rowwise() -= X.colwise().mean();
  const Eigen::MatrixXd cov = X.transpose() * X / static_cast<double>(std::max<std::size_t>(n - 1, 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  const auto& values = solver.eigenvalues();  // ascending
  const double top = d > 0 ? std::max(values(d - 1), 0.0) : 0.0;
  std::size_t rank = 0;
  for (std::size_t i = 0; i < d; ++i) rank += values(i) > std::max(top * 1e-10, 1e-300);

  PcaResult out;
  out.rows = n;
  out.components = std::min(k, rank);
  if (out.components < k) {
    out.warning = "data has rank " + std::to_string(rank) + "; returning " +
                  std::to_string(out.components) + " of " + std::to_string(k) + " components";
  }
  Eigen::MatrixXd W(d, out.components);
  for (std::size_t c = 0; c < out.components; ++c) {
    Eigen::VectorXd v = solver.eigenvectors().col(static_cast<Eigen::Index>(d - 1 - c));
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    W.col(static_cast<Eigen::Index>(c)) = v;
    out.variances.push_back(values(static_cast<Eigen::Index>(d - 1 - c)));
  }
  const Eigen::MatrixXd P = X * W;
  out.coords.resize(n * out.components);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < out.components; ++c) out.coords[i * out.components + c] = P(i, c);
  return out;
}

void write_word_projection_csv(const std::filesystem::path& path, std::span<const WordRepPair> pairs) {
  std::vector<std::vector<double>> vectors;
  for (const auto& p : pairs) vectors.push_back(p.alpha);
  for (const auto& p : pairs) vectors.push_back(p.epsilon);
  std::ostringstream out;
  out << "label,modality,x,y\n";
  if (!vectors.empty()) {
    const auto proj = pca_project(vectors, std::min<std::size_t>(2, vectors.size()));
    for (std::size_t i = 0; i < vectors.size(); ++i) {
      const auto& p = pairs[i % pairs.size()];
      out << p.label << ',' << (i < pairs.size() ? "speech" : "text") << ','
          << (proj.components > 0 ? proj.at(i, 0) : 0.0) << ','
          << (proj.components > 1 ? proj.at(i, 1) : 0.0) << '\n';
    }
  }
  write_file_atomic(path, out.str());
}

void write_sentence_representations_csv(const std::filesystem::path& path,
                                        const std::vector<AlignedTriple>& data,
                                        const Seq2SeqModel<float>& model) {
  NoGradGuard guard;
  std::ostringstream out;
  out.precision(9);
  const std::size_t d = model.config().d_model;
  out << "id,modality";
  for (std::size_t c = 0; c < d; ++c) out << ",v" << c;
  out << '\n';
  for (const auto& t : data) {
    ForwardContext ctx;
    const auto a = model.downsample(features_tensor<float>(t.speech), ctx);
    const auto e = model.embed(t.x);
    const std::pair<const char*, const Tensor<float>*> rows[] = {{"speech", &a}, {"text", &e}};
    for (const auto& [name, tensor] : rows) {
      const auto mean = mean_rows(*tensor, 0, tensor->rows() - 1);
      out << t.id << ',' << name;
      for (double v : mean) out << ',' << v;
      out << '\n';
    }
  }
  write_file_atomic(path, out.str());
}

nlohmann::json to_json(const AnalysisSummary& s) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"similarity_pct", opt(s.similarity.similarity_pct)},
          {"n_pairs", s.similarity.n_pairs},
          {"n_degenerate", s.similarity.n_degenerate},
          {"bleu", opt(s.bleu)},
          {"mean_uncertainty", opt(s.mean_uncertainty)}};
}

double mean_uncertainty(const std::vector<AlignedTriple>& data, const Seq2SeqModel<float>& model,
                        std::size_t batch_size) {
  if (data.empty()) throw std::invalid_argument("mean_uncertainty: empty dataset");
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); i += batch_size) {
    std::vector<Tensor<float>> feats;
    std::vector<std::vector<int>> ys;
    for (std::size_t k = i; k < std::min(data.size(), i + batch_size); ++k) {
      feats.push_back(features_tensor<float>(data[k].speech));
      ys.push_back(data[k].y);
    }
    for (double u : speech_uncertainty(model, pack_sequences<float>(feats), ys)) total += u;
  }
  return total / static_cast<double>(data.size());
}

std::vector<std::vector<int>> decode_speech(const Seq2SeqModel<float>& model,
                                            const std::vector<AlignedTriple>& data,
                                            const DecodeOptions& options) {
  std::vector<std::vector<int>> out;
  out.reserve(data.size());
  for (const auto& t : data) out.push_back(translate_speech(model, t.speech, options).tokens);
  return out;
}

std::vector<std::vector<int>> decode_text(const Seq2SeqModel<float>& model,
                                          const std::vector<AlignedTriple>& data,
                                          const DecodeOptions& options) {
  std::vector<std::vector<int>> out;
  out.reserve(data.size());
  for (const auto& t : data) out.push_back(translate_text(model, t.x, options).tokens);
  return out;
}

Evaluation evaluate_model(const Seq2SeqModel<float>& model, const std::vector<AlignedTriple>& data,
                          const DecodeOptions& options) {
  if (data.empty()) throw std::invalid_argument("evaluate_model: empty dataset");
  std::vector<std::vector<int>> refs;
  for (const auto& t : data) refs.push_back(t.y);
  Evaluation e;
  e.st_bleu = corpus_bleu(decode_speech(model, data, options), refs);
  e.text_bleu = corpus_bleu(decode_text(model, data, options), refs);
  e.similarity = modality_similarity(data, model);
  return e;
}

}  // namespace stemm
