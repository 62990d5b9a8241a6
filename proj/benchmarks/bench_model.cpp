#include <benchmark/benchmark.h>

#include <memory>

#include "tandem/dataset.hpp"
#include "tandem/kv_cache.hpp"
#include "tandem/policy.hpp"
#include "tandem/refiner.hpp"
#include "tandem/tape.hpp"

namespace {

using namespace tandem;

SynthParams bench_synth() {
  SynthParams sp;
  sp.scenario_count = 1;
  sp.samples_per_scenario = 1;
  sp.seed = 90;
  return sp;
}

const SyncSample& bench_sample() {
  static const SyncSample smp = synth_samples(bench_synth()).front();
  return smp;
}

template <class S>
PolicyT<S>& bench_policy() {
  static PolicyT<S> policy = [] {
    PolicyT<S> p;
    p.init(ModelConfig{});
    return p;
  }();
  return policy;
}

// Scene-encoder pass over the four-frame history window.
template <class S>
void BM_ue_encode(benchmark::State& state) {
  PolicyT<S>& p = bench_policy<S>();
  const MatT<S> scene = p.ue_scene(bench_sample());
  std::int64_t epoch = 0;
  for (auto _ : state) {
    auto snap = p.understanding().encode(scene, epoch++);
    benchmark::DoNotOptimize(snap.reasoning.data());
  }
}
BENCHMARK(BM_ue_encode<double>);
BENCHMARK(BM_ue_encode<float>);

// Action-expert pass against a fixed snapshot (no refinement).
template <class S>
void BM_ae_forward(benchmark::State& state) {
  PolicyT<S>& p = bench_policy<S>();
  const SyncSample& smp = bench_sample();
  const LayerKVCacheT<S> snap = p.encode_sample(smp);
  for (auto _ : state) {
    TapeT<S> t(TapeT<S>::Mode::infer);
    const auto out = p.action_expert().forward(t, p.observation(smp), &snap);
    benchmark::DoNotOptimize(t.value(out.logits).data());
  }
}
BENCHMARK(BM_ae_forward<double>);
BENCHMARK(BM_ae_forward<float>);

// Supervised loss with the full backward sweep, per sample.
template <class S>
void BM_ae_train_step(benchmark::State& state) {
  PolicyT<S>& p = bench_policy<S>();
  const SyncSample& smp = bench_sample();
  const LayerKVCacheT<S> snap = p.encode_sample(smp);
  for (auto _ : state) {
    TapeT<S> t(TapeT<S>::Mode::train);
    const auto L = p.sample_loss(t, smp, snap);
    t.backward(L.total);
    benchmark::DoNotOptimize(t.value(L.total).data());
    for (ParamT<S>* prm : p.action_params()) prm->zero_grad();
  }
}
BENCHMARK(BM_ae_train_step<double>);
BENCHMARK(BM_ae_train_step<float>);

// Truncated reverse diffusion over the trajectory tokens.
template <class S>
void BM_refine(benchmark::State& state) {
  PolicyT<S>& p = bench_policy<S>();
  const SyncSample& smp = bench_sample();
  const LayerKVCacheT<S> snap = p.encode_sample(smp);
  TapeT<S> t(TapeT<S>::Mode::infer);
  const auto out = p.action_expert().forward(t, p.observation(smp), &snap);
  const RefinerInputT<S> rin =
      p.refiner_input(smp, snap, t.value(out.temporal), t.value(out.spatial),
                      t.value(out.h_de), t.value(out.h_bev));
  MatT<S> rt, rs;
  for (auto _ : state) {
    p.refiner().refine(rin, &rt, &rs);
    benchmark::DoNotOptimize(rt.data());
  }
}
BENCHMARK(BM_refine<double>);
BENCHMARK(BM_refine<float>);

// Snapshot cell exchange costs, both sides.
void BM_cache_publish(benchmark::State& state) {
  Policy& p = bench_policy<double>();
  const LayerKVCache proto = p.encode_sample(bench_sample());
  SnapshotStore store;
  std::int64_t epoch = proto.epoch;
  for (auto _ : state) {
    auto snap = std::make_shared<LayerKVCache>(proto);
    snap->epoch = ++epoch;
    store.publish(std::move(snap));
  }
}
BENCHMARK(BM_cache_publish);

void BM_cache_acquire(benchmark::State& state) {
  Policy& p = bench_policy<double>();
  auto snap = std::make_shared<LayerKVCache>(p.encode_sample(bench_sample()));
  SnapshotStore store;
  store.publish(std::move(snap));
  const std::int64_t t = store.current_epoch() + 3;
  for (auto _ : state) {
    auto cur = store.acquire_for(t);
    benchmark::DoNotOptimize(cur.get());
  }
}
BENCHMARK(BM_cache_acquire);

}  // namespace
