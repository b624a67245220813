#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "manifest.hpp"
#include "stemm/analysis.hpp"
#include "stemm/checkpoint.hpp"
#include "stemm/config.hpp"
#include "stemm/dataset.hpp"
#include "stemm/decoding.hpp"
#include "stemm/errors.hpp"
#include "stemm/io.hpp"
#include "stemm/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace stemm;
using stemm::cli::RunManifest;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumerical = 4 };

struct Globals {
  std::string metrics;
  bool quiet = false;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> argv;
};

Globals g;

std::ostream& log() {
  static std::ostringstream sink;
  if (g.quiet) {
    sink.str("");
    return sink;
  }
  return std::cerr;
}

/// Model settings sized for the synthetic task; the config file and the
/// dataset's spec refine them.
ModelConfig desk_model() {
  ModelConfig c;
  c.vocab_size = 64;
  c.d_model = 64;
  c.heads = 4;
  c.ffn_dim = 256;
  c.encoder_layers = 2;
  c.decoder_layers = 2;
  c.dropout = 0.1;
  c.max_positions = 256;
  c.speech_dim = 16;
  c.conv_channels = 64;
  return c;
}

/// {"model": {...}, "pretrain": {...}, "training": {...}}. pretrain drives MT
/// pretraining, training drives ST finetuning. Every section is optional and
/// unknown keys are errors.
struct FileConfig {
  json model = json::object();
  json training = json::object();
  json pretrain = json::object();
};

FileConfig read_config(const std::string& path) {
  FileConfig fc;
  if (path.empty()) return fc;
  const json j = read_json_file(path);
  StrictObject obj(j, path);
  if (const auto* m = obj.child("model")) fc.model = *m;
  if (const auto* t = obj.child("training")) fc.training = *t;
  if (const auto* p = obj.child("pretrain")) fc.pretrain = *p;
  obj.finish();
  return fc;
}

fs::path checkpoint_file(const std::string& path) {
  const fs::path p(path);
  return fs::is_directory(p) ? p / "model.json" : p;
}

std::string model_dir_of(const std::string& path) {
  const fs::path p(path);
  return fs::is_directory(p) ? p.string() : p.parent_path().string();
}

void require_dir(const std::string& path, const char* what) {
  if (!fs::is_directory(path)) throw DataError(std::string(what) + " " + path + " is not a directory");
}

void check_compatible(const ModelConfig& m, const GeneratorSpec& spec) {
  if (m.vocab_size < spec.vocab_size)
    throw ConfigError("model vocab_size " + std::to_string(m.vocab_size) + " is smaller than the dataset's " +
                      std::to_string(spec.vocab_size));
  if (m.speech_dim != spec.feature_dim)
    throw ConfigError("model speech_dim " + std::to_string(m.speech_dim) + " differs from the dataset's feature_dim " +
                      std::to_string(spec.feature_dim));
}

const std::vector<AlignedTriple>& split_of(const Corpus& c, const std::string& name) {
  if (name == "train") return c.train;
  if (name == "dev") return c.dev;
  if (name == "test") return c.test;
  throw ConfigError("unknown split \"" + name + "\" (expected train, dev or test)");
}

std::vector<std::vector<int>> references(const std::vector<AlignedTriple>& data) {
  std::vector<std::vector<int>> refs;
  refs.reserve(data.size());
  for (const auto& t : data) refs.push_back(t.y);
  return refs;
}

std::string join_ids(const std::vector<int>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? " " : "") + std::to_string(ids[i]);
  return s;
}

/// Flags shared by the training commands; unset flags leave file values.
struct TrainingFlags {
  std::optional<double> lr;
  std::optional<std::size_t> steps, epochs, batch_size, warmup;
  std::optional<std::string> ratio;
  std::optional<double> jsd_weight;
  bool no_st_ce = false, no_mixup_ce = false, no_jsd = false;

  void add_to(CLI::App* app, bool st_options) {
    app->add_option("--lr", lr, "Peak learning rate");
    app->add_option("--steps", steps, "Stop after this many updates");
    app->add_option("--epochs", epochs, "Maximum number of epochs");
    app->add_option("--batch-size", batch_size, "Examples per update");
    app->add_option("--warmup", warmup, "Linear warmup steps");
    if (!st_options) return;
    app->add_option("--ratio", ratio, "Mixup ratio strategy: static:<p> or uncertainty[:U]");
    app->add_option("--jsd-weight", jsd_weight, "Weight of the JSD term");
    app->add_flag("--no-st-ce", no_st_ce, "Disable the speech-only cross-entropy");
    app->add_flag("--no-mixup-ce", no_mixup_ce, "Disable the mixup cross-entropy");
    app->add_flag("--no-jsd", no_jsd, "Disable the JSD regularizer");
  }

  TrainingConfig apply(const json& file, TrainingConfig base) const {
    TrainingConfig c = training_config_from_json(file, base);
    if (lr) c.lr = *lr;
    if (steps) c.max_steps = *steps;
    if (epochs) c.max_epochs = *epochs;
    if (batch_size) c.batch_size = *batch_size;
    if (warmup) c.warmup_steps = *warmup;
    if (ratio) c.ratio = RatioStrategy::parse(*ratio);
    if (jsd_weight) c.jsd_weight = *jsd_weight;
    if (no_st_ce) c.loss_terms.st_ce = false;
    if (no_mixup_ce) c.loss_terms.mixup_ce = false;
    if (no_jsd) c.loss_terms.jsd = false;
    // Dropping a cross-entropy term also drops the JSD that depends on it.
    if (!c.loss_terms.st_ce || !c.loss_terms.mixup_ce) c.loss_terms.jsd = false;
    if (g.seed) c.seed = *g.seed;
    c.validate();
    return c;
  }
};

TrainingConfig pretrain_defaults() {
  TrainingConfig c;
  c.lr = 2e-3;
  c.warmup_steps = 200;
  c.max_epochs = 30;
  c.average_last = 1;
  return c;
}

TrainingConfig finetune_defaults() {
  TrainingConfig c;
  c.lr = 1e-3;
  c.warmup_steps = 200;
  c.max_epochs = 15;
  c.average_last = 3;
  return c;
}

std::optional<JsonlWriter> open_metrics(const fs::path& fallback, RunManifest& manifest) {
  const fs::path path = g.metrics.empty() ? fallback : fs::path(g.metrics);
  manifest.add_artifact("metrics", path);
  std::error_code ec;
  fs::remove(path, ec);
  return JsonlWriter(path);
}

json evaluation_json(const Evaluation& e) {
  json j{{"st_bleu", e.st_bleu}, {"text_bleu", e.text_bleu}, {"n_pairs", e.similarity.n_pairs},
         {"n_degenerate", e.similarity.n_degenerate}};
  j["similarity_pct"] = e.similarity.similarity_pct ? json(*e.similarity.similarity_pct) : json(nullptr);
  return j;
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string spec, out;
  std::size_t n = 2000;
};

int cmd_gen(const GenArgs& a) {
  GeneratorSpec spec;
  if (!a.spec.empty()) spec = generator_spec_from_json(read_json_file(a.spec));
  if (g.seed) spec.seed = *g.seed;
  spec.validate();
  fs::create_directories(a.out);
  RunManifest manifest(fs::path(a.out) / "manifest.json", "gen", g.argv);
  manifest.set_config({{"spec", to_json(spec)}, {"train_size", a.n}});
  manifest.add_seed(spec.seed);
  for (const char* f : {"spec.json", "train", "dev", "test"}) manifest.add_artifact(f, fs::path(a.out) / f);
  if (spec.mt_size > 0) manifest.add_artifact("mt", fs::path(a.out) / "mt");
  manifest.start();
  const auto corpus = generate_corpus(spec, a.n);
  write_corpus(a.out, corpus);
  log() << "wrote " << corpus.train.size() << "/" << corpus.dev.size() << "/" << corpus.test.size()
        << " train/dev/test triples and " << corpus.mt.size() << " MT pairs to " << a.out << "\n";
  manifest.finish("ok");
  return kOk;
}

struct PretrainArgs {
  std::string data, config, out, init;
  TrainingFlags flags;
};

int cmd_pretrain(const PretrainArgs& a) {
  require_dir(a.data, "dataset");
  const auto fc = read_config(a.config);
  const Corpus corpus = read_corpus(a.data);
  ModelConfig mc = desk_model();
  mc.vocab_size = corpus.spec.vocab_size;
  mc.speech_dim = corpus.spec.feature_dim;
  mc = model_config_from_json(fc.model, mc);
  const TrainingConfig tc = a.flags.apply(fc.pretrain, pretrain_defaults());

  std::optional<Seq2SeqModel<float>> model;
  if (!a.init.empty()) {
    model.emplace(load_checkpoint(checkpoint_file(a.init)));
    mc = model->config();
  } else {
    model.emplace(mc, tc.seed);
  }
  check_compatible(mc, corpus.spec);

  fs::create_directories(a.out);
  RunManifest manifest(fs::path(a.out) / "manifest.json", "pretrain-mt", g.argv);
  manifest.set_config({{"model", to_json(mc)}, {"training", to_json(tc)}, {"data", a.data}});
  manifest.add_seed(tc.seed);
  const auto ckpt = fs::path(a.out) / "model.json";
  manifest.add_artifact("checkpoint", ckpt);
  auto metrics = open_metrics(fs::path(a.out) / "metrics.jsonl", manifest);
  manifest.start();

  auto train = text_pairs(corpus.train);
  train.insert(train.end(), corpus.mt.begin(), corpus.mt.end());
  log() << "pretraining on " << train.size() << " text pairs\n";
  const auto fit = pretrain_mt(*model, train, text_pairs(corpus.dev), tc, &*metrics);
  save_checkpoint(ckpt, *model);
  log() << "done after " << fit.steps << " steps, " << fit.epochs.size() << " epochs; dev loss "
        << (fit.epochs.empty() ? NAN : fit.epochs.back().dev_loss) << "\n";
  manifest.finish("ok");
  return kOk;
}

struct FinetuneArgs {
  std::string data, config, out, init;
  std::size_t eval_beam = 5;
  TrainingFlags flags;
};

int cmd_finetune(const FinetuneArgs& a) {
  require_dir(a.data, "dataset");
  const auto fc = read_config(a.config);
  const Corpus corpus = read_corpus(a.data);
  const TrainingConfig tc = a.flags.apply(fc.training, finetune_defaults());
  std::optional<Seq2SeqModel<float>> model;
  if (!a.init.empty()) {
    model.emplace(load_checkpoint(checkpoint_file(a.init)));
  } else {
    ModelConfig mc = desk_model();
    mc.vocab_size = corpus.spec.vocab_size;
    mc.speech_dim = corpus.spec.feature_dim;
    model.emplace(model_config_from_json(fc.model, mc), tc.seed);
  }
  check_compatible(model->config(), corpus.spec);

  fs::create_directories(a.out);
  RunManifest manifest(fs::path(a.out) / "manifest.json", "finetune-st", g.argv);
  manifest.set_config({{"model", to_json(model->config())}, {"training", to_json(tc)},
                       {"data", a.data}, {"init", a.init}});
  manifest.add_seed(tc.seed);
  const auto ckpt = fs::path(a.out) / "model.json";
  const auto eval_path = fs::path(a.out) / "eval_dev.json";
  manifest.add_artifact("checkpoint", ckpt);
  manifest.add_artifact("dev_evaluation", eval_path);
  auto metrics = open_metrics(fs::path(a.out) / "metrics.jsonl", manifest);
  manifest.start();

  log() << "finetuning on " << corpus.train.size() << " triples, ratio " << tc.ratio.to_string() << "\n";
  const auto fit = finetune_st(*model, corpus.train, corpus.dev, tc, &*metrics);
  save_checkpoint(ckpt, *model);
  json summary{{"steps", fit.steps}, {"epochs", fit.epochs.size()}, {"early_stopped", fit.early_stopped},
               {"averaged", fit.averaged}};
  if (!corpus.dev.empty()) {
    const auto e = evaluate_model(*model, corpus.dev, DecodeOptions{a.eval_beam, 64, false});
    summary["dev"] = evaluation_json(e);
    log() << "dev ST BLEU " << e.st_bleu << ", text BLEU " << e.text_bleu << "\n";
  }
  metrics->write({{"type", "final"}, {"summary", summary}});
  write_file_atomic(eval_path, summary.dump(2) + "\n");
  manifest.finish("ok");
  return kOk;
}

struct SweepArgs {
  std::string data, config, out, init, param = "mixup_ratio", split = "test";
  std::vector<std::string> values;
  std::size_t beam = 5;
  TrainingFlags flags;
};

int cmd_sweep(const SweepArgs& a) {
  require_dir(a.data, "dataset");
  if (a.values.empty()) throw ConfigError("sweep: --values is empty");
  if (a.param != "mixup_ratio" && a.param != "jsd_weight" && a.param != "mt_amount")
    throw ConfigError("sweep: unknown --param \"" + a.param + "\" (mixup_ratio, jsd_weight or mt_amount)");
  if (a.param != "mt_amount" && a.init.empty())
    throw ConfigError("sweep: --init is required unless sweeping mt_amount");
  std::vector<double> values;
  for (const auto& v : a.values) {
    std::size_t used = 0;
    double x = 0.0;
    try {
      x = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size() || used == 0) throw ConfigError("sweep: value \"" + v + "\" is not a number");
    values.push_back(x);
  }
  const auto fc = read_config(a.config);
  const Corpus corpus = read_corpus(a.data);
  const auto& eval_data = split_of(corpus, a.split);
  const TrainingConfig base = a.flags.apply(fc.training, finetune_defaults());
  TrainingConfig mt_cfg = training_config_from_json(fc.pretrain, pretrain_defaults());
  if (g.seed) mt_cfg.seed = *g.seed;

  std::optional<Seq2SeqModel<float>> init;
  ModelConfig mc = desk_model();
  mc.vocab_size = corpus.spec.vocab_size;
  mc.speech_dim = corpus.spec.feature_dim;
  mc = model_config_from_json(fc.model, mc);
  if (!a.init.empty()) {
    init.emplace(load_checkpoint(checkpoint_file(a.init)));
    mc = init->config();
  }
  check_compatible(mc, corpus.spec);

  fs::create_directories(a.out);
  RunManifest manifest(fs::path(a.out) / "manifest.json", "sweep", g.argv);
  manifest.set_config({{"param", a.param}, {"values", values}, {"training", to_json(base)},
                       {"pretrain", to_json(mt_cfg)}, {"model", to_json(mc)}, {"split", a.split}});
  manifest.add_seed(base.seed);
  const auto json_path = fs::path(a.out) / "results.json";
  const auto csv_path = fs::path(a.out) / "results.csv";
  manifest.add_artifact("results_json", json_path);
  manifest.add_artifact("results_csv", csv_path);
  auto metrics = open_metrics(fs::path(a.out) / "metrics.jsonl", manifest);
  manifest.start();

  json rows = json::array();
  std::ostringstream csv;
  csv << a.param << ",st_bleu,text_bleu,similarity_pct\n";
  std::cout << std::left << std::setw(12) << a.param << std::setw(10) << "ST BLEU" << std::setw(12)
            << "text BLEU" << "similarity\n";
  for (double v : values) {
    TrainingConfig tc = base;
    std::optional<Seq2SeqModel<float>> model;
    if (a.param == "mt_amount") {
      if (v < 0 || v != std::floor(v)) throw ConfigError("sweep: mt_amount values must be whole numbers");
      const auto k = std::min(static_cast<std::size_t>(v), corpus.mt.size());
      model.emplace(mc, mt_cfg.seed);
      auto train = text_pairs(corpus.train);
      train.insert(train.end(), corpus.mt.begin(), corpus.mt.begin() + static_cast<std::ptrdiff_t>(k));
      log() << "mt_amount " << k << ": pretraining\n";
      pretrain_mt(*model, train, text_pairs(corpus.dev), mt_cfg);
    } else {
      model.emplace(mc, snapshot(init->params()));
      if (a.param == "mixup_ratio") tc.ratio = RatioStrategy::fixed(v);
      else tc.jsd_weight = v;
      tc.validate();
    }
    log() << a.param << " " << v << ": finetuning\n";
    finetune_st(*model, corpus.train, corpus.dev, tc);
    const auto e = evaluate_model(*model, eval_data, DecodeOptions{a.beam, 64, false});
    json row = evaluation_json(e);
    row[a.param] = v;
    rows.push_back(row);
    metrics->write({{"type", "sweep"}, {"param", a.param}, {"value", v}, {"result", row}});
    const double sim = e.similarity.similarity_pct.value_or(NAN);
    csv << v << ',' << e.st_bleu << ',' << e.text_bleu << ',' << sim << '\n';
    std::cout << std::left << std::setw(12) << v << std::setw(10) << std::fixed << std::setprecision(2)
              << e.st_bleu << std::setw(12) << e.text_bleu << sim << std::defaultfloat << "\n";
  }
  write_file_atomic(json_path, json{{"param", a.param}, {"split", a.split}, {"rows", rows}}.dump(2) + "\n");
  write_file_atomic(csv_path, csv.str());
  manifest.finish("ok");
  return kOk;
}

struct DecodeArgs {
  std::string model, data, out, split = "test";
  std::size_t beam = 5, max_len = 64;
  bool greedy = false, text_input = false;
};

int cmd_decode(const DecodeArgs& a) {
  require_dir(a.data, "dataset");
  const auto model = load_checkpoint(checkpoint_file(a.model));
  const Corpus corpus = read_corpus(a.data);
  check_compatible(model.config(), corpus.spec);
  const auto& data = split_of(corpus, a.split);
  if (data.empty()) throw DataError("split " + a.split + " of " + a.data + " is empty");
  const DecodeOptions opts{a.beam, a.max_len, a.greedy};
  if (!a.greedy && a.beam == 0) throw ConfigError("--beam must be at least 1");

  const fs::path out = a.out.empty() ? fs::path(model_dir_of(a.model)) / ("decode_" + a.split) : fs::path(a.out);
  fs::create_directories(out);
  RunManifest manifest(out / "manifest.json", "decode", g.argv);
  manifest.set_config({{"model", a.model}, {"data", a.data}, {"split", a.split}, {"beam", a.beam},
                       {"max_len", a.max_len}, {"greedy", a.greedy}, {"input", a.text_input ? "text" : "speech"}});
  manifest.add_artifact("hypotheses", out / "hypotheses.txt");
  manifest.add_artifact("bleu", out / "bleu.json");
  manifest.start();

  const auto hyps = a.text_input ? decode_text(model, data, opts) : decode_speech(model, data, opts);
  std::ostringstream lines;
  for (std::size_t i = 0; i < data.size(); ++i) lines << data[i].id << '\t' << join_ids(hyps[i]) << '\n';
  write_file_atomic(out / "hypotheses.txt", lines.str());
  const double bleu = corpus_bleu(hyps, references(data));
  write_file_atomic(out / "bleu.json", json{{"bleu", bleu}, {"split", a.split}, {"sentences", data.size()},
                                            {"manifest", (out / "manifest.json").string()}}
                                           .dump(2) + "\n");
  std::cout << "BLEU " << std::fixed << std::setprecision(2) << bleu << std::defaultfloat << "\n";
  manifest.finish("ok");
  return kOk;
}

struct AnalyzeArgs {
  std::string model, data, out, split = "test";
  std::size_t beam = 5;
  bool skip_bleu = false;
};

int cmd_analyze(const AnalyzeArgs& a) {
  require_dir(a.data, "dataset");
  const auto model = load_checkpoint(checkpoint_file(a.model));
  const Corpus corpus = read_corpus(a.data);
  check_compatible(model.config(), corpus.spec);
  const auto& data = split_of(corpus, a.split);
  if (data.empty()) throw DataError("split " + a.split + " of " + a.data + " is empty");

  const fs::path out = a.out.empty() ? fs::path(model_dir_of(a.model)) / ("analysis_" + a.split) : fs::path(a.out);
  fs::create_directories(out);
  RunManifest manifest(out / "manifest.json", "analyze", g.argv);
  manifest.set_config({{"model", a.model}, {"data", a.data}, {"split", a.split}, {"beam", a.beam}});
  for (const char* f : {"summary.json", "word_projection.csv", "sentence_representations.csv"})
    manifest.add_artifact(f, out / f);
  manifest.start();

  std::vector<WordRepPair> pairs;
  for (const auto& t : data) {
    const auto p = word_representations(t, model);
    pairs.insert(pairs.end(), p.begin(), p.end());
  }
  AnalysisSummary summary;
  summary.similarity = modality_similarity(pairs);
  if (!a.skip_bleu) summary.bleu = corpus_bleu(decode_speech(model, data, DecodeOptions{a.beam, 64, false}), references(data));
  summary.mean_uncertainty = mean_uncertainty(data, model);
  write_word_projection_csv(out / "word_projection.csv", pairs);
  write_sentence_representations_csv(out / "sentence_representations.csv", data, model);
  auto j = to_json(summary);
  j["manifest"] = (out / "manifest.json").string();
  write_file_atomic(out / "summary.json", j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  manifest.finish("ok");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  g.argv.assign(argv, argv + argc);
  CLI::App app{"STEMM: speech-text manifold mixup for speech translation"};
  app.require_subcommand(1);
  app.footer(
      "Exit codes: 0 ok, 1 other failure, 2 configuration error, 3 data error, 4 numerical failure.\n"
      "Configuration precedence: built-in defaults < --config file < command-line flags.");
  app.add_option("--metrics", g.metrics, "Write per-step metrics JSONL here (default: <out>/metrics.jsonl)");
  app.add_flag("--quiet", g.quiet, "Suppress progress messages");
  app.add_option("--seed", g.seed, "Seed overriding the config file");

  GenArgs gen;
  auto* c_gen = app.add_subcommand("gen", "Generate a synthetic aligned speech translation corpus");
  c_gen->add_option("--spec", gen.spec, "Generator spec JSON")->check(CLI::ExistingFile);
  c_gen->add_option("--out", gen.out, "Output dataset directory")->required();
  c_gen->add_option("-n", gen.n, "Number of training triples");

  PretrainArgs pre;
  auto* c_pre = app.add_subcommand("pretrain-mt", "Pretrain on text translation pairs");
  c_pre->add_option("--data", pre.data, "Dataset directory")->required();
  c_pre->add_option("--config", pre.config, "Config JSON with model/training sections")->check(CLI::ExistingFile);
  c_pre->add_option("--out", pre.out, "Checkpoint directory")->required();
  c_pre->add_option("--init", pre.init, "Continue from this checkpoint");
  pre.flags.add_to(c_pre, false);

  FinetuneArgs ft;
  auto* c_ft = app.add_subcommand("finetune-st", "Finetune on speech translation with manifold mixup");
  c_ft->add_option("--data", ft.data, "Dataset directory")->required();
  c_ft->add_option("--init", ft.init, "Pretrained checkpoint (directory or file)");
  c_ft->add_option("--config", ft.config, "Config JSON with model/training sections")->check(CLI::ExistingFile);
  c_ft->add_option("--out", ft.out, "Checkpoint directory")->required();
  c_ft->add_option("--eval-beam", ft.eval_beam, "Beam size for the final dev evaluation");
  ft.flags.add_to(c_ft, true);

  SweepArgs sw;
  auto* c_sw = app.add_subcommand("sweep", "Finetune once per parameter value and tabulate BLEU");
  c_sw->add_option("--param", sw.param, "mixup_ratio, jsd_weight or mt_amount");
  c_sw->add_option("--values", sw.values, "Comma-separated values")->delimiter(',')->required();
  c_sw->add_option("--data", sw.data, "Dataset directory")->required();
  c_sw->add_option("--init", sw.init, "Pretrained checkpoint");
  c_sw->add_option("--config", sw.config, "Config JSON; the pretrain section drives mt_amount runs")
      ->check(CLI::ExistingFile);
  c_sw->add_option("--out", sw.out, "Results directory")->required();
  c_sw->add_option("--split", sw.split, "Evaluation split");
  c_sw->add_option("--beam", sw.beam, "Beam size");
  sw.flags.add_to(c_sw, true);

  DecodeArgs dec;
  auto* c_dec = app.add_subcommand("decode", "Translate a split and score it");
  c_dec->add_option("--model", dec.model, "Checkpoint (directory or file)")->required();
  c_dec->add_option("--data", dec.data, "Dataset directory")->required();
  c_dec->add_option("--split", dec.split, "train, dev or test");
  c_dec->add_option("--beam", dec.beam, "Beam size");
  c_dec->add_option("--max-len", dec.max_len, "Maximum output length");
  c_dec->add_flag("--greedy", dec.greedy, "Greedy decoding");
  c_dec->add_flag("--text-input", dec.text_input, "Feed gold transcriptions instead of speech");
  c_dec->add_option("--out", dec.out, "Output directory (default: <model>/decode_<split>)");

  AnalyzeArgs an;
  auto* c_an = app.add_subcommand("analyze", "Similarity, uncertainty and PCA exports");
  c_an->add_option("--model", an.model, "Checkpoint (directory or file)")->required();
  c_an->add_option("--data", an.data, "Dataset directory")->required();
  c_an->add_option("--split", an.split, "train, dev or test");
  c_an->add_option("--beam", an.beam, "Beam size for BLEU");
  c_an->add_flag("--no-bleu", an.skip_bleu, "Skip decoding");
  c_an->add_option("--out", an.out, "Output directory (default: <model>/analysis_<split>)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*c_gen) return cmd_gen(gen);
    if (*c_pre) return cmd_pretrain(pre);
    if (*c_ft) return cmd_finetune(ft);
    if (*c_sw) return cmd_sweep(sw);
    if (*c_dec) return cmd_decode(dec);
    if (*c_an) return cmd_analyze(an);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
