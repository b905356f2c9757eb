// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

// Serial versus OpenMP variants of the hot kernels, plus one simulator cell.

#include <benchmark/benchmark.h>

#include "lipos/kvfs.hpp"
#include "lipos/model.hpp"
#include "lipos/scheduler.hpp"
#include "lipos/sim.hpp"

namespace {

using namespace lipos;

void BM_NextDist(benchmark::State& state) {
    const auto policy = static_cast<ExecPolicy>(state.range(0));
    const auto c = ModelConfig::large_profile();
    std::uint64_t ctx = 1;
    for (auto _ : state) benchmark::DoNotOptimize(next_dist_probs(ctx++, c, policy));
    state.SetItemsProcessed(state.iterations() * c.vocab_size);
    state.SetLabel(policy == ExecPolicy::Serial ? "serial" : "openmp");
}
BENCHMARK(BM_NextDist)->Arg(static_cast<int>(ExecPolicy::Serial))->Arg(static_cast<int>(ExecPolicy::Parallel));

void BM_NextDistReference(benchmark::State& state) {
    const auto c = ModelConfig::large_profile();
    std::uint64_t ctx = 1;
    for (auto _ : state) benchmark::DoNotOptimize(next_dist_reference(ctx++, c));
    state.SetItemsProcessed(state.iterations() * c.vocab_size);
}
BENCHMARK(BM_NextDistReference);

// One batch of 64 prefill requests of 256 tokens each on separate files.
void BM_ExecuteBatch(benchmark::State& state) {
    const auto policy = static_cast<ExecPolicy>(state.range(0));
    const ModelConfig mc;
    MockBackend model(mc);
    const Caller user{1, 1};
    for (auto _ : state) {
        state.PauseTiming();
        KvfsConfig kc;
        kc.chain_seed = mc.model_seed;
        Kvfs fs(kc);
        Batch b;
        for (std::uint64_t i = 0; i < 64; ++i) {
            PredRequest r;
            r.id = r.tid = i + 1;
            r.caller = user;
            r.kv = fs.create(user, "");
            for (Position p = 0; p < 256; ++p) r.tokens.push_back({static_cast<TokenId>((i + p) % mc.vocab_size), p});
            b.requests.push_back(std::move(r));
        }
        state.ResumeTiming();
        benchmark::DoNotOptimize(execute_batch(b, fs, model, CostModel{}, policy));
    }
    state.SetLabel(policy == ExecPolicy::Serial ? "serial" : "openmp");
}
BENCHMARK(BM_ExecuteBatch)->Arg(static_cast<int>(ExecPolicy::Serial))->Arg(static_cast<int>(ExecPolicy::Parallel));

void BM_GridCell(benchmark::State& state) {
    Config cfg = Config::defaults();
    cfg.workload.duration = 2.0;
    const CellSpec cell{0.6, {"high", 100.0}, CachePolicy::parse("topk:20")};
    for (auto _ : state) benchmark::DoNotOptimize(run_cell(cfg, cell));
}
BENCHMARK(BM_GridCell)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
