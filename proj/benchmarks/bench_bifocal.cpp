// Microbenchmarks for the hot paths: one LSTM step, training-mode vs
// inference-mode encoders, the alignment lattice and decoding.

#include <benchmark/benchmark.h>

#include "bifocal/config.hpp"
#include "bifocal/schedule.hpp"
#include "bifocal/transducer.hpp"

using namespace bifocal;

namespace {

std::vector<Vector<float>> frames(std::size_t n, std::size_t dim, Rng& rng) {
  std::vector<Vector<float>> xs(n, Vector<float>(dim));
  for (auto& x : xs)
    for (auto& v : x) v = static_cast<float>(rng.normal());
  return xs;
}

void BM_LstmStep(benchmark::State& state) {
  const auto hidden = static_cast<std::size_t>(state.range(0));
  Rng rng(0);
  const auto p = LstmParams<float>::glorot(hidden, hidden, rng);
  const auto x = frames(1, hidden, rng).front();
  auto s = LstmState<float>::zeros(hidden);
  for (auto _ : state) {
    s = lstm_step(p, std::span<const float>(x), s);
    benchmark::DoNotOptimize(s.h.data());
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_LstmStep)->Arg(32)->Arg(256)->Arg(1024);

// Toy bifocal encoder over a 100-frame utterance with a wake-word pivot.
struct EncoderFixture {
  ExperimentConfig config = toy_config(true);
  Rng rng{1};
  EncoderParams<float> params = EncoderParams<float>::create(config.resolved_model().encoder, rng);
  std::vector<Vector<float>> xs = frames(100, config.model.encoder.feature_dim, rng);
  SwitchSignal z = build_z(config.schedule, 100, 32);
};

void BM_EncodeEager(benchmark::State& state) {
  EncoderFixture f;
  for (auto _ : state) benchmark::DoNotOptimize(encode_eager(f.params, std::span<const Vector<float>>(f.xs), f.z));
  state.SetItemsProcessed(state.iterations() * 100);
}
BENCHMARK(BM_EncodeEager);

void BM_EncodeLazy(benchmark::State& state) {
  EncoderFixture f;
  for (auto _ : state) benchmark::DoNotOptimize(encode_lazy(f.params, std::span<const Vector<float>>(f.xs), f.z));
  state.SetItemsProcessed(state.iterations() * 100);
}
BENCHMARK(BM_EncodeLazy);

void BM_Lattice(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0)), u = t / 4;
  const std::size_t vocab = 33;
  Rng rng(2);
  std::vector<double> logits(t * (u + 1) * vocab);
  for (auto& v : logits) v = rng.normal();
  std::vector<std::size_t> y(u);
  for (auto& k : y) k = 1 + rng.index(vocab - 1);
  for (auto _ : state) benchmark::DoNotOptimize(transducer_lattice<double>(logits, t, y, Vocab{vocab, 0}).nll);
}
BENCHMARK(BM_Lattice)->Arg(32)->Arg(128);

void BM_Decode(benchmark::State& state) {
  const auto beam = static_cast<std::size_t>(state.range(0));
  auto config = toy_config(true);
  Rng rng(3);
  const auto model = TransducerModel<float>::create(config.resolved_model(), rng);
  const auto xs = frames(40, config.model.encoder.feature_dim, rng);
  const auto enc = encode_lazy(model.encoder, std::span<const Vector<float>>(xs), build_z(config.schedule, 40, 12));
  for (auto _ : state) {
    if (beam == 0)
      benchmark::DoNotOptimize(greedy_decode_encoded<float>(model, enc.frames));
    else
      benchmark::DoNotOptimize(beam_decode_encoded<float>(model, enc.frames, beam));
  }
}
// Argument 0 is greedy decoding.
BENCHMARK(BM_Decode)->Arg(0)->Arg(1)->Arg(4)->Arg(16);

}  // namespace

BENCHMARK_MAIN();
