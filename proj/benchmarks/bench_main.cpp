#include <benchmark/benchmark.h>

#include "stemm/analysis.hpp"
#include "stemm/dataset.hpp"
#include "stemm/ops.hpp"
#include "stemm/rng.hpp"
#include "stemm/training.hpp"

namespace {

using stemm::Tensor;

Tensor<float> random_tensor(std::size_t rows, std::size_t cols, std::uint64_t seed, bool grad = false) {
  auto rng = stemm::make_rng(seed, "bench");
  std::vector<float> v(rows * cols);
  for (auto& x : v) x = static_cast<float>(stemm::normal01(rng));
  return Tensor<float>::from_data({rows, cols}, std::move(v), grad);
}

stemm::GeneratorSpec bench_spec() {
  stemm::GeneratorSpec s;
  s.dev_size = 16;
  s.test_size = 16;
  return s;
}

stemm::ModelConfig bench_model(const stemm::GeneratorSpec& s) {
  stemm::ModelConfig c;
  c.vocab_size = s.vocab_size;
  c.speech_dim = s.feature_dim;
  c.d_model = 64;
  c.heads = 4;
  c.ffn_dim = 256;
  c.encoder_layers = 2;
  c.decoder_layers = 2;
  c.conv_channels = 64;
  c.max_positions = 256;
  return c;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_tensor(n, n, 1), b = random_tensor(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(stemm::matmul(a, b));
  state.counters["FLOP/s"] = benchmark::Counter(static_cast<double>(state.iterations()) * 2.0 * n * n * n,
                                                benchmark::Counter::kIsRate);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto a = random_tensor(n, n, 1, true), b = random_tensor(n, n, 2, true);
  for (auto _ : state) {
    a.zero_grad();
    b.zero_grad();
    stemm::sum(stemm::matmul(a, b)).backward();
    benchmark::DoNotOptimize(a.grad().data());
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(64)->Arg(128);

void BM_Attention(benchmark::State& state) {
  const std::size_t batch = 16, len = static_cast<std::size_t>(state.range(0)), d = 64;
  const auto q = random_tensor(batch * len, d, 1), k = random_tensor(batch * len, d, 2),
             v = random_tensor(batch * len, d, 3);
  const stemm::AttentionGeometry geom{batch, len, len, 4, false};
  for (auto _ : state) benchmark::DoNotOptimize(stemm::attention(q, k, v, geom, {}));
}
BENCHMARK(BM_Attention)->Arg(16)->Arg(32)->Arg(64);

void BM_TrainStep(benchmark::State& state) {
  const auto spec = bench_spec();
  const auto corpus = stemm::generate_corpus(spec, 64);
  stemm::Seq2SeqModel<float> model(bench_model(spec), 7);
  stemm::TrainingConfig tc;
  tc.batch_size = 32;
  tc.ratio = state.range(0) ? stemm::RatioStrategy::uncertainty() : stemm::RatioStrategy::fixed(0.2);
  stemm::Trainer trainer(model, tc);
  std::vector<const stemm::AlignedTriple*> batch;
  for (std::size_t i = 0; i < tc.batch_size; ++i) batch.push_back(&corpus.train[i]);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.train_step(batch));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(tc.batch_size));
}
BENCHMARK(BM_TrainStep)->ArgName("uncertainty")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_BeamDecode(benchmark::State& state) {
  const auto spec = bench_spec();
  const auto corpus = stemm::generate_corpus(spec, 1);
  const stemm::Seq2SeqModel<float> model(bench_model(spec), 7);
  const stemm::DecodeOptions options{static_cast<std::size_t>(state.range(0)), 32, false};
  for (auto _ : state) benchmark::DoNotOptimize(stemm::decode_speech(model, corpus.test, options));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(corpus.test.size()));
}
BENCHMARK(BM_BeamDecode)->Arg(1)->Arg(5)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
