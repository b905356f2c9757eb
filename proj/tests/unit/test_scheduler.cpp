// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "lipos/audit.hpp"
#include "lipos/kernel.hpp"
#include "lipos/scheduler.hpp"
#include "oracles.hpp"

namespace {

using namespace lipos;

constexpr Caller kUser{1, 1};

PredRequest req(std::uint64_t id, KvHandle kv = {}, std::vector<TokenPos> tokens = {{1, 0}}) {
    PredRequest r;
    r.id = id;
    r.tid = id;
    r.caller = kUser;
    r.kv = kv;
    r.tokens = std::move(tokens);
    return r;
}

TEST(RateEstimator, FirstEnqueueUsesDefault) {
    RateEstimator est(0.2, 0.1);
    est.observe(5.0);
    EXPECT_DOUBLE_EQ(est.rate(), 10.0);
}

TEST(RateEstimator, ConvergesToSteadyRate) {
    // Closed form from rate_0 = 1: rate_n = 10 + (1 - 10) * 0.8^n.
    RateEstimator est(0.2, 1.0);
    double t = 0;
    est.observe(t);
    for (int n = 1; n <= 200; ++n) {
        t += 0.1;
        est.observe(t);
        if (n == 5) EXPECT_NEAR(est.rate(), 10.0 - 9.0 * std::pow(0.8, 5), 1e-9);
    }
    EXPECT_NEAR(est.rate(), 10.0, 1e-9);
}

TEST(RateEstimator, ZeroGapUsesFloor) {
    RateEstimator est(0.2, 0.1, 1e-9);
    est.observe(1.0);
    est.observe(1.0);
    EXPECT_DOUBLE_EQ(est.rate(), 0.8 * 10.0 + 0.2 / 1e-9);
}

TEST(BatchScheduler, TargetSizeFromRate) {
    SchedulerConfig c;
    c.default_interarrival = 1.0 / 3200;
    BatchScheduler b(c);
    const double dt = 1.0 / 3200;
    for (int i = 0; i < 31; ++i) {
        b.enqueue(req(i + 1), i * dt);
        EXPECT_FALSE(b.dispatch_reason(i * dt).has_value()) << i;
    }
    EXPECT_EQ(b.target_batch_size(), static_cast<std::size_t>(std::lround(3200 * 0.01)));
    b.enqueue(req(32), 31 * dt);
    EXPECT_EQ(b.dispatch_reason(31 * dt), DispatchReason::Full);
    const auto batch = b.form_batch(31 * dt);
    ASSERT_TRUE(batch);
    EXPECT_EQ(batch->requests.size(), 32u);
    EXPECT_TRUE(b.empty());
}

TEST(BatchScheduler, SaturatedPoolDispatchesFullBatch) {
    BatchScheduler b(SchedulerConfig{});
    for (int i = 0; i < 64; ++i) b.enqueue(req(i + 1), 0.0);
    EXPECT_EQ(b.target_batch_size(), 64u);
    const auto batch = b.form_batch(0.0);
    ASSERT_TRUE(batch);
    EXPECT_EQ(batch->requests.size(), 64u);
    EXPECT_EQ(batch->reason, DispatchReason::Full);
    for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(batch->requests[i].id, i + 1);
}

TEST(BatchScheduler, LowRateUsesDeadline) {
    SchedulerConfig c;
    c.default_interarrival = 1.0;  // rate 1/s, target round(0.01) clamps to 1
    BatchScheduler b(c);
    b.enqueue(req(1), 2.0);
    EXPECT_EQ(b.target_batch_size(), 1u);
    EXPECT_EQ(b.dispatch_reason(2.0), DispatchReason::Full);

    // With a target above one, a lone request waits for its deadline.
    SchedulerConfig hot;
    hot.default_interarrival = 1.0 / 800;
    BatchScheduler h(hot);
    h.enqueue(req(1), 2.0);
    EXPECT_EQ(h.target_batch_size(), 8u);
    EXPECT_FALSE(h.dispatch_reason(2.0).has_value());
    ASSERT_TRUE(h.next_deadline());
    EXPECT_DOUBLE_EQ(*h.next_deadline(), 2.0 + hot.max_wait);
    EXPECT_FALSE(h.form_batch(2.005).has_value());
    const auto batch = h.form_batch(2.0 + hot.max_wait);
    ASSERT_TRUE(batch);
    EXPECT_EQ(batch->reason, DispatchReason::Deadline);
}

TEST(BatchScheduler, EmptyPoolFormsNothing) {
    BatchScheduler b(SchedulerConfig{});
    EXPECT_FALSE(b.form_batch(100.0).has_value());
    EXPECT_FALSE(b.next_deadline().has_value());
}

class ExecuteBatch : public ::testing::Test {
protected:
    ModelConfig mc;
    KvfsConfig kc = [this] {
        KvfsConfig k;
        k.chain_seed = mc.model_seed;
        return k;
    }();
    Kvfs fs{kc};
    MockBackend model{mc};

    KvHandle file_of(std::size_t n) {
        auto h = fs.create(kUser, "");
        std::vector<TokenPos> t;
        for (std::size_t i = 0; i < n; ++i) t.push_back({static_cast<TokenId>(i % 200 + 1), static_cast<Position>(i)});
        compute_pred(fs, model, kUser, h, t);
        return h;
    }
};

TEST_F(ExecuteBatch, SingleDecodeCost) {
    auto h = file_of(3000);
    Batch b;
    b.requests.push_back(req(1, h, {{5, 3000}}));
    const CostModel cost;  // c0 = 1 ms, c1 = 10 us, c2 = 1 ns
    const auto out = execute_batch(b, fs, model, cost);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0].n_ctx, 3001u);
    const double want = 1e-3 + 10e-6 + 3.001e-6;
    EXPECT_NEAR(b.cost, want, 1e-15);
}

TEST(CostModel, PrefillVersusCachedRatio) {
    CostModel c2_only{0, 0, 1e-9, 0};
    const double ratio = c2_only.request_cost(3000, 3000) / c2_only.request_cost(20, 3020);
    EXPECT_NEAR(ratio, (3000.0 * 3000.0) / (20.0 * 3020.0), 1e-9);
    EXPECT_NEAR(ratio, 149.0, 0.5);
    const CostModel def;
    EXPECT_NEAR(def.request_cost(3000, 3000) / def.request_cost(20, 3020), 149.0, 1.0);
}

TEST_F(ExecuteBatch, FailuresStayIsolated) {
    auto good = file_of(10);
    auto bad = file_of(10);
    Batch b;
    b.requests.push_back(req(1, good, {{1, 10}}));
    b.requests.push_back(req(2, bad, {{1, 3}}));  // position conflict
    b.requests.push_back(req(3, good, {{2, 11}}));
    const CostModel cost;
    const auto out = execute_batch(b, fs, model, cost);
    ASSERT_EQ(out.size(), 3u);
    EXPECT_FALSE(out[0].error);
    ASSERT_TRUE(out[1].error);
    EXPECT_EQ(out[1].error->code(), Errc::PositionConflict);
    EXPECT_EQ(out[1].n_new, 0u);
    EXPECT_FALSE(out[2].error);
    EXPECT_EQ(fs.length(good), 12u);
    EXPECT_EQ(fs.length(bad), 10u);
    EXPECT_NEAR(b.cost, cost.c0 + cost.request_cost(1, 11) + cost.request_cost(1, 12), 1e-15);
}

TEST_F(ExecuteBatch, SerialAndParallelAgree) {
    std::vector<KvHandle> a, s;
    for (int i = 0; i < 6; ++i) {
        a.push_back(file_of(20 + i));
        s.push_back(file_of(20 + i));
    }
    Batch ba, bs;
    for (int i = 0; i < 6; ++i) {
        const auto pos = static_cast<Position>(20 + i);
        ba.requests.push_back(req(i + 1, a[i], {{7, pos}, {8, pos + 1}}));
        bs.requests.push_back(req(i + 1, s[i], {{7, pos}, {8, pos + 1}}));
    }
    const auto pa = execute_batch(ba, fs, model, CostModel{}, ExecPolicy::Parallel);
    const auto ps = execute_batch(bs, fs, model, CostModel{}, ExecPolicy::Serial);
    EXPECT_EQ(ba.cost, bs.cost);
    for (std::size_t i = 0; i < pa.size(); ++i) {
        ASSERT_EQ(pa[i].dists.size(), ps[i].dists.size());
        for (std::size_t j = 0; j < pa[i].dists.size(); ++j) EXPECT_TRUE(pa[i].dists[j] == ps[i].dists[j]);
    }
}

TEST(ThreadScheduler, FifoAndDuplicateDetection) {
    ThreadScheduler s;
    s.make_ready(1);
    s.make_ready(2);
    s.make_ready(3);
    EXPECT_THROW(s.make_ready(2), std::logic_error);
    EXPECT_EQ(s.next(), 1u);
    EXPECT_EQ(s.next(), 2u);
    EXPECT_EQ(s.next(), 3u);
    EXPECT_FALSE(s.next().has_value());
}

TEST(TransitionAuditor, FlagsDuplicateReady) {
    Kernel k(KernelConfig{});
    k.spawn_lip([](Sys&) -> Task<> { co_return; });
    k.run();
    Trace t = k.trace();
    AuditReport clean;
    audit_transitions(t, clean);
    EXPECT_TRUE(clean.ok());

    // Inject a second Ready for a thread that is already Ready.
    Trace bad;
    for (const auto& e : t.events()) {
        bad.push(e);
        if (e.kind == EventKind::ThreadCreate) {
            bad.push({e.time, EventKind::ThreadState, e.pid, e.tid, 0, static_cast<std::int64_t>(ThreadState::Ready),
                      static_cast<std::int64_t>(ThreadState::Ready)});
        }
    }
    AuditReport r;
    audit_transitions(bad, r);
    EXPECT_FALSE(r.ok());
}

Trace synthetic(double arrival, double end, std::int64_t tokens, double busy) {
    Trace t;
    t.push({arrival, EventKind::RequestBegin, 1, 1, 7, 0, 0, 0, arrival});
    t.push({arrival, EventKind::BatchDispatch, 0, 0, 1, 1, 0, 0, busy});
    t.push({end, EventKind::RequestEnd, 1, 1, 7, tokens, -1, 0, arrival});
    return t;
}

TEST(Metrics, ThroughputAndUtilization) {
    const auto m = metrics_collect(synthetic(0.0, 1.0, 10, 1.0));
    EXPECT_DOUBLE_EQ(m.throughput, 10.0);
    EXPECT_DOUBLE_EQ(m.utilization, 1.0);
    EXPECT_DOUBLE_EQ(m.mean_latency_per_token, 0.1);
    EXPECT_EQ(m.completed_requests, 1u);
    EXPECT_DOUBLE_EQ(m.mean_batch_size, 1.0);
}

TEST(Metrics, RejectsMalformed) {
    Trace t;
    t.push({1.0, EventKind::RequestBegin, 1, 1, 1});
    t.push({0.5, EventKind::RequestEnd, 1, 1, 1});
    EXPECT_THROW(metrics_collect(t), Error);

    Trace u;
    u.push({0.0, EventKind::RequestEnd, 1, 1, 9});
    EXPECT_THROW(metrics_collect(u), Error);

    std::istringstream junk("{\"virtual_time\": \"soon\"}\n");
    EXPECT_THROW(Trace::read_jsonl(junk), Error);
}

TEST(Trace, JsonLinesRoundTrip) {
    Kernel k(KernelConfig{});
    k.spawn_lip([](Sys& s) -> Task<> {
        auto kv = s.kv_create();
        co_await s.pred(kv, {{1, 0}, {2, 1}});
    });
    k.run();
    std::stringstream ss;
    k.trace().write_jsonl(ss);
    const auto back = Trace::read_jsonl(ss);
    EXPECT_EQ(back.events(), k.trace().events());
    EXPECT_EQ(metrics_collect(back), metrics_collect(k.trace()));
}

}  // namespace
