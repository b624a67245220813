#include "stemm/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "stemm/config.hpp"
#include "stemm/errors.hpp"
#include "stemm/io.hpp"
#include "stemm/ops.hpp"
#include "stemm/rng.hpp"

namespace stemm {

std::size_t downsampled_length(std::size_t frames) {
  return conv_out_len(conv_out_len(frames, 5, 2, 2), 5, 2, 2);
}

void GeneratorSpec::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("generator: " + msg); };
  if (vocab_size < static_cast<std::size_t>(kNumSpecialIds) + 3)
    fail("vocab_size too small for initial and continuation subwords");
  if (min_words == 0 || min_words > max_words) fail("need 1 <= min_words <= max_words");
  if (min_subwords == 0 || min_subwords > max_subwords)
    fail("need 1 <= min_subwords <= max_subwords");
  if (min_frames < kDownsampleFactor)
    fail("frames per subword must be at least " + std::to_string(kDownsampleFactor) +
         ", got " + std::to_string(min_frames));
  if (min_frames > max_frames) fail("min_frames exceeds max_frames");
  if (feature_dim == 0) fail("feature_dim must be positive");
  if (!(noise >= 0.0)) fail("noise must be non-negative");
  if (!(swap_rate >= 0.0 && swap_rate <= 1.0)) fail("swap_rate must lie in [0, 1]");
}

std::size_t GeneratorSpec::initial_count() const {
  return (vocab_size - kNumSpecialIds) * 2 / 3;
}

nlohmann::json to_json(const GeneratorSpec& s) {
  return {{"vocab_size", s.vocab_size},   {"min_words", s.min_words},
          {"max_words", s.max_words},     {"min_subwords", s.min_subwords},
          {"max_subwords", s.max_subwords}, {"min_frames", s.min_frames},
          {"max_frames", s.max_frames},   {"feature_dim", s.feature_dim},
          {"noise", s.noise},             {"identity_mapping", s.identity_mapping},
          {"swap_rate", s.swap_rate},     {"dev_size", s.dev_size},
          {"test_size", s.test_size},     {"mt_size", s.mt_size},
          {"seed", s.seed}};
}

GeneratorSpec generator_spec_from_json(const nlohmann::json& j, const GeneratorSpec& base) {
  GeneratorSpec s = base;
  StrictObject obj(j, "generator");
  obj.read("vocab_size", s.vocab_size);
  obj.read("min_words", s.min_words);
  obj.read("max_words", s.max_words);
  obj.read("min_subwords", s.min_subwords);
  obj.read("max_subwords", s.max_subwords);
  obj.read("min_frames", s.min_frames);
  obj.read("max_frames", s.max_frames);
  obj.read("feature_dim", s.feature_dim);
  obj.read("noise", s.noise);
  obj.read("identity_mapping", s.identity_mapping);
  obj.read("swap_rate", s.swap_rate);
  obj.read("dev_size", s.dev_size);
  obj.read("test_size", s.test_size);
  obj.read("mt_size", s.mt_size);
  obj.read("seed", s.seed);
  obj.finish();
  s.validate();
  return s;
}

namespace {

std::size_t uniform_index(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(hi - lo + 1));
}

/// Fixed per-spec tables: permutation, swap triggers and prototypes.
struct Language {
  std::vector<int> permutation;
  std::vector<bool> swap_trigger;
  std::vector<float> prototypes;  // vocab × feature_dim
};

Language make_language(const GeneratorSpec& spec) {
  const std::size_t V = spec.vocab_size;
  const std::size_t first = kNumSpecialIds, n_init = spec.initial_count();
  Language lang;
  lang.permutation.resize(V);
  for (std::size_t i = 0; i < V; ++i) lang.permutation[i] = static_cast<int>(i);
  lang.swap_trigger.assign(V, false);
  if (!spec.identity_mapping) {
    auto rng = make_rng(spec.seed, "mapping");
    auto shuffle = [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = hi - 1; i > lo; --i) {
        std::size_t j = uniform_index(rng, lo, i);
        std::swap(lang.permutation[i], lang.permutation[j]);
      }
    };
    shuffle(first, first + n_init);
    shuffle(first + n_init, V);
    std::vector<int> ids(lang.permutation.begin() + first,
                         lang.permutation.begin() + first + n_init);
    const auto n_swap = static_cast<std::size_t>(std::lround(spec.swap_rate * n_init));
    for (std::size_t i = 0; i < n_swap; ++i) lang.swap_trigger[ids[i]] = true;
  }
  auto rng = make_rng(spec.seed, "prototypes");
  lang.prototypes.resize(V * spec.feature_dim);
  for (auto& v : lang.prototypes) v = static_cast<float>(normal01(rng));
  return lang;
}

std::vector<int> translate(const GeneratorSpec& spec, const Language& lang,
                           const std::vector<int>& x, const WordAlignment& align) {
  std::vector<std::vector<int>> words;
  for (const auto& w : align.words) {
    std::vector<int> word;
    for (std::size_t i = w.subword_first; i <= w.subword_last; ++i)
      word.push_back(lang.permutation.at(static_cast<std::size_t>(x.at(i))));
    words.push_back(std::move(word));
  }
  if (!spec.identity_mapping) {
    for (std::size_t i = 0; i + 1 < words.size(); i += 2) {
      const int head = x.at(align.words[i].subword_first);
      if (lang.swap_trigger.at(static_cast<std::size_t>(head))) std::swap(words[i], words[i + 1]);
    }
  }
  std::vector<int> y;
  for (const auto& w : words) y.insert(y.end(), w.begin(), w.end());
  return y;
}

std::string utterance_id(std::size_t index) {
  std::ostringstream ss;
  ss << "utt" << std::setw(6) << std::setfill('0') << index;
  return ss.str();
}

AlignedTriple generate_one(const GeneratorSpec& spec, const Language& lang, std::size_t index) {
  auto rng = Rng(mix_seed(spec.seed, mix_seed(name_seed("utterance"), index)));
  const int first_init = kNumSpecialIds;
  const int n_init = static_cast<int>(spec.initial_count());
  const int n_cont = static_cast<int>(spec.vocab_size) - first_init - n_init;
  const std::size_t D = spec.feature_dim;

  AlignedTriple t;
  t.id = utterance_id(index);
  t.speech.dim = D;
  const std::size_t n_words = uniform_index(rng, spec.min_words, spec.max_words);
  std::size_t frame = 0;
  for (std::size_t w = 0; w < n_words; ++w) {
    const std::size_t k = uniform_index(rng, spec.min_subwords, spec.max_subwords);
    WordSpan span;
    span.word = "w" + std::to_string(w);
    span.subword_first = t.x.size();
    std::vector<std::size_t> frames(k);
    std::size_t total = 0;
    for (std::size_t s = 0; s < k; ++s) {
      const int id = s == 0 ? first_init + static_cast<int>(uniform_index(rng, 0, n_init - 1))
                            : first_init + n_init + static_cast<int>(uniform_index(rng, 0, n_cont - 1));
      t.x.push_back(id);
      frames[s] = uniform_index(rng, spec.min_frames, spec.max_frames);
      total += frames[s];
    }
    // Word boundaries fall on downsampled frame boundaries.
    frames.back() += (kDownsampleFactor - total % kDownsampleFactor) % kDownsampleFactor;
    span.subword_last = t.x.size() - 1;
    span.speech_first = frame / kDownsampleFactor;
    for (std::size_t s = 0; s < k; ++s) {
      const float* proto = &lang.prototypes[static_cast<std::size_t>(t.x[span.subword_first + s]) * D];
      for (std::size_t f = 0; f < frames[s]; ++f)
        for (std::size_t c = 0; c < D; ++c)
          t.speech.values.push_back(proto[c] + static_cast<float>(spec.noise * normal01(rng)));
      frame += frames[s];
    }
    span.speech_last = frame / kDownsampleFactor - 1;
    t.align.words.push_back(std::move(span));
  }
  t.speech.frames = frame;
  t.y = translate(spec, lang, t.x, t.align);
  return t;
}

// Little-endian codecs for unsigned words.
template <typename U>
void put(std::string& out, U v) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename U>
U take(const std::string& in, std::size_t& pos, const std::filesystem::path& path) {
  if (pos + sizeof(U) > in.size()) throw DataError(path.string() + ": truncated");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    v |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(U);
  return v;
}

nlohmann::json alignment_json(const std::string& id, const WordAlignment& align) {
  nlohmann::json words = nlohmann::json::array();
  for (const auto& w : align.words) {
    words.push_back({{"word", w.word},
                     {"speech", {w.speech_first, w.speech_last}},
                     {"subwords", {w.subword_first, w.subword_last}}});
  }
  return {{"id", id}, {"words", std::move(words)}};
}

std::vector<UtteranceAlignment> parse_alignments(const nlohmann::json& j,
                                                 const std::filesystem::path& path) {
  if (!j.is_array()) throw DataError(path.string() + ": expected an array of utterances");
  std::vector<UtteranceAlignment> out;
  for (std::size_t u = 0; u < j.size(); ++u) {
    const auto& entry = j[u];
    try {
      UtteranceAlignment ua;
      ua.first = entry.contains("id") ? entry.at("id").get<std::string>() : std::to_string(u);
      for (const auto& w : entry.at("words")) {
        WordSpan span;
        span.word = w.value("word", "");
        const auto speech = w.at("speech").get<std::vector<std::size_t>>();
        const auto sub = w.at("subwords").get<std::vector<std::size_t>>();
        if (speech.size() != 2 || sub.size() != 2)
          throw DataError("spans must be [first, last] pairs");
        span.speech_first = speech[0];
        span.speech_last = speech[1];
        span.subword_first = sub[0];
        span.subword_last = sub[1];
        ua.second.words.push_back(std::move(span));
      }
      out.push_back(std::move(ua));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ": utterance " + std::to_string(u) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ": utterance " + std::to_string(u) + ": " + e.what());
    }
  }
  return out;
}

void check_all(const std::vector<std::pair<std::string, std::vector<AlignmentIssue>>>& found,
               const std::filesystem::path& path) {
  std::string msg;
  std::string first_utt;
  long first_word = -1;
  for (const auto& [id, issues] : found) {
    for (const auto& issue : issues) {
      if (msg.empty()) {
        first_utt = id;
        first_word = static_cast<long>(issue.word);
      }
      msg += "\n  utterance " + id + ", word " + std::to_string(issue.word) + ": " + issue.message;
    }
  }
  if (!msg.empty()) throw AlignmentError(path.string() + ": invalid alignments:" + msg, first_utt, first_word);
}

}  // namespace

std::vector<int> translate_reference(const GeneratorSpec& spec, const std::vector<int>& x,
                                     const WordAlignment& align) {
  return translate(spec, make_language(spec), x, align);
}

std::vector<AlignedTriple> generate(const GeneratorSpec& spec, std::size_t n,
                                    std::size_t first_index) {
  spec.validate();
  const Language lang = make_language(spec);
  std::vector<AlignedTriple> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_one(spec, lang, first_index + i));
  return out;
}

Corpus generate_corpus(const GeneratorSpec& spec, std::size_t train_size) {
  Corpus c;
  c.spec = spec;
  std::size_t next = 0;
  c.train = generate(spec, train_size, next);
  next += train_size;
  c.dev = generate(spec, spec.dev_size, next);
  next += spec.dev_size;
  c.test = generate(spec, spec.test_size, next);
  next += spec.test_size;
  c.mt = text_pairs(generate(spec, spec.mt_size, next));
  return c;
}

std::vector<TextPair> text_pairs(const std::vector<AlignedTriple>& triples) {
  std::vector<TextPair> out;
  out.reserve(triples.size());
  for (const auto& t : triples) out.push_back({t.x, t.y});
  return out;
}

void write_features(const std::filesystem::path& path, const std::vector<FeatureMatrix>& features) {
  std::size_t dim = features.empty() ? 0 : features.front().dim;
  std::string out;
  put<std::uint64_t>(out, features.size());
  for (const auto& f : features) {
    if (f.dim != dim) throw DataError("features: mixed feature widths");
    put<std::uint64_t>(out, f.frames);
  }
  put<std::uint64_t>(out, dim);
  for (const auto& f : features)
    for (float v : f.values) put(out, std::bit_cast<std::uint32_t>(v));
  write_file_atomic(path, out);
}

std::vector<FeatureMatrix> read_features(const std::filesystem::path& path) {
  const std::string in = read_file(path);
  std::size_t pos = 0;
  const auto n = take<std::uint64_t>(in, pos, path);
  if (n > in.size() / 8) throw DataError(path.string() + ": corrupt header");
  std::vector<std::size_t> frames(n);
  for (auto& f : frames) f = take<std::uint64_t>(in, pos, path);
  const auto dim = take<std::uint64_t>(in, pos, path);
  std::size_t total = 0;
  for (auto f : frames) total += f * dim;
  if (in.size() - pos != total * 4)
    throw DataError(path.string() + ": expected " + std::to_string(total) +
                    " float32 values, found " + std::to_string((in.size() - pos) / 4));
  std::vector<FeatureMatrix> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].frames = frames[i];
    out[i].dim = dim;
    out[i].values.resize(frames[i] * dim);
    for (auto& v : out[i].values) v = std::bit_cast<float>(take<std::uint32_t>(in, pos, path));
  }
  return out;
}

void write_text_pairs(const std::filesystem::path& path, const std::vector<TextPair>& pairs) {
  std::string out;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    out += nlohmann::json{{"id", utterance_id(i)}, {"x", pairs[i].x}, {"y", pairs[i].y}}.dump() + "\n";
  write_file_atomic(path, out);
}

namespace {

struct TextRow {
  std::string id;
  TextPair pair;
};

std::vector<TextRow> read_text_rows(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<TextRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      rows.push_back({j.value("id", std::to_string(rows.size())),
                      {j.at("x").get<std::vector<int>>(), j.at("y").get<std::vector<int>>()}});
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (rows.back().pair.x.empty() || rows.back().pair.y.empty())
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": empty x or y");
  }
  return rows;
}

}  // namespace

std::vector<TextPair> read_text_pairs(const std::filesystem::path& path) {
  std::vector<TextPair> out;
  for (auto& row : read_text_rows(path)) out.push_back(std::move(row.pair));
  return out;
}

void export_alignments(const std::filesystem::path& path,
                       const std::vector<UtteranceAlignment>& alignments) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& [id, align] : alignments) j.push_back(alignment_json(id, align));
  write_file_atomic(path, j.dump(1));
}

std::vector<UtteranceAlignment> import_alignments(const std::filesystem::path& path) {
  auto alignments = parse_alignments(read_json_file(path), path);
  std::vector<std::pair<std::string, std::vector<AlignmentIssue>>> found;
  for (const auto& [id, align] : alignments) {
    std::size_t speech_len = 0, text_len = 0;
    for (const auto& w : align.words) {
      speech_len = std::max(speech_len, w.speech_last + 1);
      text_len = std::max(text_len, w.subword_last + 1);
    }
    found.emplace_back(id, alignment_issues(align, speech_len, text_len));
  }
  check_all(found, path);
  return alignments;
}

void write_split(const std::filesystem::path& dir, const std::vector<AlignedTriple>& triples) {
  std::filesystem::create_directories(dir);
  std::vector<FeatureMatrix> features;
  std::string text;
  std::vector<UtteranceAlignment> alignments;
  for (const auto& t : triples) {
    features.push_back(t.speech);
    text += nlohmann::json{{"id", t.id}, {"x", t.x}, {"y", t.y}}.dump() + "\n";
    alignments.emplace_back(t.id, t.align);
  }
  write_features(dir / "features.bin", features);
  write_file_atomic(dir / "text.jsonl", text);
  export_alignments(dir / "align.json", alignments);
}

std::vector<AlignedTriple> read_split(const std::filesystem::path& dir) {
  auto features = read_features(dir / "features.bin");
  auto text = read_text_rows(dir / "text.jsonl");
  auto alignments = parse_alignments(read_json_file(dir / "align.json"), dir / "align.json");
  if (features.size() != text.size() || text.size() != alignments.size()) {
    throw DataError(dir.string() + ": features.bin has " + std::to_string(features.size()) +
                    " utterances, text.jsonl " + std::to_string(text.size()) +
                    ", align.json " + std::to_string(alignments.size()));
  }
  std::vector<AlignedTriple> out(features.size());
  std::vector<std::pair<std::string, std::vector<AlignmentIssue>>> found;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (text[i].id != alignments[i].first)
      throw DataError(dir.string() + ": utterance " + std::to_string(i) + " is " + text[i].id +
                      " in text.jsonl but " + alignments[i].first + " in align.json");
    auto& t = out[i];
    t.id = text[i].id;
    t.speech = std::move(features[i]);
    t.x = std::move(text[i].pair.x);
    t.y = std::move(text[i].pair.y);
    t.align = std::move(alignments[i].second);
    found.emplace_back(t.id, alignment_issues(t.align, downsampled_length(t.speech.frames), t.x.size()));
  }
  check_all(found, dir / "align.json");
  return out;
}

void write_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  std::filesystem::create_directories(dir);
  write_split(dir / "train", corpus.train);
  write_split(dir / "dev", corpus.dev);
  write_split(dir / "test", corpus.test);
  if (!corpus.mt.empty()) write_text_pairs(dir / "mt" / "text.jsonl", corpus.mt);
  write_file_atomic(dir / "spec.json", to_json(corpus.spec).dump(2) + "\n");
}

Corpus read_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError(dir.string() + ": no such dataset directory");
  Corpus c;
  c.spec = generator_spec_from_json(read_json_file(dir / "spec.json"));
  c.train = read_split(dir / "train");
  c.dev = read_split(dir / "dev");
  c.test = read_split(dir / "test");
  if (std::filesystem::exists(dir / "mt" / "text.jsonl")) c.mt = read_text_pairs(dir / "mt" / "text.jsonl");
  return c;
}

}  // namespace stemm
