// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "lipos/audit.hpp"
#include "lipos/config.hpp"
#include "lipos/sim.hpp"

namespace {

using namespace lipos;

// Independent rank-weight computation: P(r) proportional to r^-s.
std::vector<double> rank_weights(std::size_t n, double s) {
    std::vector<double> w(n);
    double total = 0;
    for (std::size_t r = 1; r <= n; ++r) total += w[r - 1] = std::pow(static_cast<double>(r), -s);
    for (auto& x : w) x /= total;
    return w;
}

double mass_of_top(std::size_t n, double s, std::size_t k) {
    const auto w = rank_weights(n, s);
    double m = 0;
    for (std::size_t i = 0; i < k; ++i) m += w[i];
    return m;
}

Config small_config() {
    Config c = Config::defaults();
    c.workload.doc_len = 400;
    c.workload.num_docs = 50;
    c.workload.gen_len = 8;
    c.workload.duration = 4.0;
    return c;
}

// Per-process view of one served request in a trace.
struct Served {
    std::int64_t first_n_new = -1;
    std::int64_t cache = -2;
    bool failed = false;
};

std::map<Pid, Served> served_requests(const Trace& t) {
    std::map<Pid, Served> out;
    for (const auto& e : t.events()) {
        if (e.kind == EventKind::BatchMember && out[e.pid].first_n_new < 0) out[e.pid].first_n_new = e.b;
        if (e.kind == EventKind::RequestEnd) {
            out[e.pid].cache = e.b;
            out[e.pid].failed = e.c != 0;
        }
    }
    return out;
}

TEST(Workload, PopularityWeightsMatchBothMappings) {
    for (double alpha : {0.2, 1.0, 2.0}) {
        const auto inv = popularity_weights(100, alpha, Popularity::InverseAlpha);
        const auto one = popularity_weights(100, alpha, Popularity::OnePlus);
        const auto want_inv = rank_weights(100, 1.0 / alpha);
        const auto want_one = rank_weights(100, 1.0 + alpha);
        for (std::size_t i = 0; i < 100; ++i) {
            EXPECT_NEAR(inv[i], want_inv[i], 1e-12);
            EXPECT_NEAR(one[i], want_one[i], 1e-12);
        }
        EXPECT_NEAR(top_mass(100, alpha, Popularity::OnePlus, 20), mass_of_top(100, 1.0 + alpha, 20), 1e-12);
    }
}

TEST(Workload, LargeAlphaConcentratesOnRankOne) {
    const auto w = popularity_weights(100, 50.0, Popularity::OnePlus);
    EXPECT_GT(w[0], 0.99);
    EXPECT_NEAR(w[0], rank_weights(100, 51.0)[0], 1e-12);

    WorkloadSpec s;
    s.pareto_alpha = 50.0;
    s.popularity = Popularity::OnePlus;
    const auto reqs = gen_requests(s, 256);
    std::size_t top = 0;
    for (const auto& r : reqs) top += r.doc == 0 ? 1 : 0;
    EXPECT_GT(static_cast<double>(top) / static_cast<double>(reqs.size()), 0.99);
}

TEST(Workload, PoissonCountWithinThreeSigma) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        WorkloadSpec s;
        s.seed = seed;
        s.request_rate = 20;
        s.duration = 10;
        const auto reqs = gen_requests(s, 256);
        const double mean = s.request_rate * s.duration;
        EXPECT_LE(std::abs(static_cast<double>(reqs.size()) - mean), 3 * std::sqrt(mean)) << "seed " << seed;
        for (std::size_t i = 1; i < reqs.size(); ++i) ASSERT_LE(reqs[i - 1].arrival, reqs[i].arrival);
        for (const auto& r : reqs) {
            ASSERT_LT(r.arrival, s.duration);
            ASSERT_EQ(r.query.size(), s.query_len);
            for (TokenId t : r.query) ASSERT_NE(t, 0u);
        }
    }
}

TEST(Workload, EqualSeedsGiveEqualStreams) {
    WorkloadSpec s;
    EXPECT_EQ(gen_requests(s, 256), gen_requests(s, 256));
    WorkloadSpec t = s;
    t.seed = 2;
    EXPECT_NE(gen_requests(s, 256), gen_requests(t, 256));
}

TEST(Workload, InvalidSpecRejected) {
    WorkloadSpec s;
    s.pareto_alpha = 0;
    EXPECT_THROW(s.validate(), Error);
}

TEST(CachePolicy, ParseAndPrint) {
    EXPECT_EQ(CachePolicy::parse("topk:7").k, 7u);
    EXPECT_EQ(CachePolicy::parse("topk").k, 20u);
    EXPECT_EQ(CachePolicy::parse("consecutive:3").threshold, 3u);
    EXPECT_EQ(CachePolicy::parse("none").kind, CachePolicy::Kind::None);
    for (const char* text : {"none", "baseline", "topk:20", "consecutive:2"}) {
        EXPECT_EQ(CachePolicy::parse(CachePolicy::parse(text).to_string()), CachePolicy::parse(text));
    }
    EXPECT_THROW(CachePolicy::parse("lru"), Error);
    EXPECT_THROW(CachePolicy::parse("topk:0"), Error);
}

TEST(Rag, HitAvoidsDocumentPrefill) {
    Config c = small_config();
    const auto cell = run_cell(c, {0.2, {"mid", 20.0}, CachePolicy::parse("topk:20")}, true);
    ASSERT_TRUE(cell.error.empty()) << cell.error;
    std::size_t hits = 0, misses = 0;
    for (const auto& [pid, s] : served_requests(cell.trace)) {
        if (s.cache == 1) {
            EXPECT_EQ(s.first_n_new, static_cast<std::int64_t>(c.workload.query_len));
            ++hits;
        } else if (s.cache == 0) {
            EXPECT_EQ(s.first_n_new, static_cast<std::int64_t>(c.workload.doc_len + c.workload.query_len));
            ++misses;
        }
    }
    EXPECT_GT(hits, 0u);
    EXPECT_GT(misses, 0u);
    EXPECT_EQ(cell.stuck_threads, 0u);
}

TEST(Rag, NonePolicyNeverHits) {
    const auto cell = run_cell(small_config(), {0.2, {"mid", 20.0}, CachePolicy::parse("none")});
    ASSERT_TRUE(cell.error.empty()) << cell.error;
    EXPECT_EQ(cell.metrics.hit_rate, 0.0);
    EXPECT_GT(cell.metrics.completed_requests, 0u);
}

TEST(Rag, HitRateTracksTopTwentyMass) {
    Config c = small_config();
    c.workload.num_docs = 100;
    c.workload.doc_len = 200;
    c.workload.duration = 40.0;
    for (double alpha : {0.2, 1.0}) {
        const auto cell = run_cell(c, {alpha, {"mid", 20.0}, CachePolicy::parse("topk:20")});
        ASSERT_TRUE(cell.error.empty()) << cell.error;
        const double mass = mass_of_top(100, 1.0 / alpha, 20);
        EXPECT_NEAR(cell.metrics.hit_rate, mass, 0.05) << "alpha " << alpha;
    }
}

TEST(Rag, ConsecutivePolicyRetainsAfterRepeat) {
    Config c = small_config();
    const auto cell = run_cell(c, {0.2, {"mid", 20.0}, CachePolicy::parse("consecutive:2")});
    ASSERT_TRUE(cell.error.empty()) << cell.error;
    EXPECT_GT(cell.metrics.hit_rate, 0.0);
}

TEST(Baseline, PrefillsDocAndQueryEveryTime) {
    Config c = Config::defaults();
    c.workload.duration = 1.0;
    c.workload.gen_len = 4;
    const auto cell = run_cell(c, {0.2, {"low", 5.0}, CachePolicy::parse("baseline")}, true);
    ASSERT_TRUE(cell.error.empty()) << cell.error;
    const auto served = served_requests(cell.trace);
    ASSERT_FALSE(served.empty());
    for (const auto& [pid, s] : served) {
        EXPECT_EQ(s.first_n_new, 3000 + 32);
        EXPECT_EQ(s.cache, 0);
    }
    EXPECT_EQ(cell.metrics.hit_rate, 0.0);
}

TEST(Baseline, ThroughputIndependentOfAlpha) {
    Config c = small_config();
    c.workload.duration = 10.0;
    const auto lo = run_cell(c, {0.2, {"mid", 20.0}, CachePolicy::parse("baseline")});
    const auto hi = run_cell(c, {2.0, {"mid", 20.0}, CachePolicy::parse("baseline")});
    ASSERT_TRUE(lo.error.empty() && hi.error.empty());
    EXPECT_NEAR(lo.metrics.throughput / hi.metrics.throughput, 1.0, 0.05);
}

TEST(Experiment, TokenConservation) {
    Config c = small_config();
    const auto cell = run_cell(c, {1.0, {"mid", 20.0}, CachePolicy::parse("topk:20")});
    ASSERT_TRUE(cell.error.empty());
    EXPECT_EQ(cell.metrics.generated_tokens, cell.metrics.completed_requests * c.workload.gen_len);
    EXPECT_EQ(cell.metrics.completed_requests + cell.metrics.failed_requests, cell.requests);
}

TEST(Experiment, SingleCellCsvAndDeterminism) {
    Config c = small_config();
    c.alphas = {1.0};
    c.rates = {{"mid", 20.0}};
    c.policies = {CachePolicy::parse("topk:20")};
    auto csv = [&] {
        std::ostringstream os;
        write_csv(os, run_experiment(c));
        return os.str();
    };
    const std::string a = csv();
    EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 2);
    EXPECT_EQ(a.rfind("load,pareto_alpha,policy,throughput,mean_latency_per_token,p95_latency,utilization,"
                      "mean_batch_size,hit_rate",
                      0),
              0u);
    EXPECT_EQ(a, csv());
}

TEST(Experiment, BadCellReportsErrorAndGridContinues) {
    Config c = small_config();
    c.alphas = {1.0};
    c.rates = {{"mid", 20.0}};
    c.policies = {CachePolicy::parse("topk:20")};
    c.kernel.kvfs.device_capacity = 1;  // too small for any document
    const auto r = run_experiment(c);
    ASSERT_EQ(r.cells.size(), 1u);
    EXPECT_TRUE(r.cells[0].error.empty()) << r.cells[0].error;
    EXPECT_EQ(r.cells[0].metrics.completed_requests, 0u);
    EXPECT_GT(r.cells[0].metrics.failed_requests, 0u);
}

TEST(Experiment, TraceAuditsClean) {
    Config c = small_config();
    const auto cell = run_cell(c, {0.6, {"high", 100.0}, CachePolicy::parse("topk:20")}, true);
    const auto report = audit_trace(cell.trace, AuditLimits{c.kernel.scheduler, c.kernel.cost});
    for (const auto& v : report.violations) ADD_FAILURE() << v.auditor << ": " << v.message;
    EXPECT_EQ(report.checked.size(), 6u);
}

TEST(Config, ParsesBlocksAndRejectsUnknownKeys) {
    const Config c = parse_config(R"({
        "kvfs": {"page_size": 32, "device_capacity_pages": 1000},
        "model": {"vocab_size": 512, "eos_token": 1},
        "scheduler": {"W_max": 0.02, "B_max": 16, "c2": 2e-9},
        "workload": {"num_docs": 10, "popularity": "one_plus", "rates": {"a": 1, "b": 2}},
        "tools": {"shout": {"handler": "upper", "latency": 0.1}}
    })");
    EXPECT_EQ(c.kernel.kvfs.page_size, 32u);
    EXPECT_EQ(c.kernel.kvfs.device_capacity, 1000u);
    EXPECT_EQ(c.kernel.model.vocab_size, 512u);
    EXPECT_EQ(c.kernel.scheduler.max_wait, 0.02);
    EXPECT_EQ(c.kernel.scheduler.max_batch, 16u);
    EXPECT_EQ(c.kernel.cost.c2, 2e-9);
    EXPECT_EQ(c.workload.popularity, Popularity::OnePlus);
    EXPECT_EQ(c.rates.size(), 2u);
    EXPECT_EQ(builtin_tool(c.tools.at("shout")).handler("hi"), "HI");

    EXPECT_THROW(parse_config(R"({"kvfs": {"page_sise": 8}})"), Error);
    EXPECT_THROW(parse_config(R"({"gpu": {}})"), Error);
    EXPECT_THROW(parse_config(R"({"model": {"vocab_size": 4, "eos_token": 9}})"), Error);
    EXPECT_THROW(parse_config(R"({"scheduler": {"W_max": "fast"}})"), Error);
}

TEST(Config, JsonRoundTrip) {
    Config c = Config::defaults();
    c.workload.seed = 99;
    c.alphas = {0.5};
    const std::string text = config_to_json(c);
    EXPECT_EQ(config_to_json(parse_config(text)), text);
}

}  // namespace
