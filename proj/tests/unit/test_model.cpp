// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstring>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "lipos/fingerprint.hpp"
#include "lipos/model.hpp"
#include "oracles.hpp"

namespace {

using namespace lipos;

constexpr Caller kUser{1, 1};

struct Fixture {
    ModelConfig config;
    Kvfs fs;
    MockBackend model;

    explicit Fixture(ModelConfig c = {}) : config(c), fs(kvfs_config(c)), model(c) {}

    static KvfsConfig kvfs_config(const ModelConfig& c) {
        KvfsConfig k;
        k.chain_seed = c.model_seed;
        k.audit_every_op = true;
        return k;
    }
};

std::vector<TokenPos> random_sequence(std::mt19937_64& rng, std::size_t n, std::uint32_t vocab) {
    std::vector<TokenPos> seq;
    Position p = 0;
    for (std::size_t i = 0; i < n; ++i) {
        p += 1 + static_cast<Position>(rng() % 3);
        seq.push_back({static_cast<TokenId>(rng() % vocab), p});
    }
    return seq;
}

bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

TEST(Fingerprint, MatchesReferenceMixer) {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 1000; ++i) {
        const auto prev = rng();
        const auto t = static_cast<TokenId>(rng());
        const auto p = static_cast<Position>(rng());
        EXPECT_EQ(chain_fingerprint(prev, t, p), oracle::chain(prev, t, p));
    }
}

TEST(Fingerprint, OrderAndPositionSensitive) {
    const std::uint64_t seed = ModelConfig{}.model_seed;
    const std::vector<TokenPos> ab{{5, 0}, {7, 1}};
    const std::vector<TokenPos> ba{{7, 0}, {5, 1}};
    EXPECT_EQ(fold_fingerprint(seed, ab), oracle::fold(seed, {{5, 0}, {7, 1}}));
    EXPECT_NE(fold_fingerprint(seed, ab), fold_fingerprint(seed, ba));
    EXPECT_NE(chain_fingerprint(seed, 5, 0), chain_fingerprint(seed, 5, 1));
    EXPECT_EQ(chain_fingerprint(seed, 5, 0), chain_fingerprint(seed, 5, 0));
}

TEST(NextDist, NormalizedForRandomDigests) {
    const ModelConfig c;
    std::mt19937_64 rng(11);
    for (int i = 0; i < 1000; ++i) {
        const auto p = next_dist_probs(rng(), c);
        const double sum = std::accumulate(p.begin(), p.end(), 0.0);
        EXPECT_NEAR(sum, 1.0, 1e-9);
        for (double x : p) ASSERT_GE(x, 0.0);
    }
}

TEST(NextDist, AgreesWithLongDoubleSoftmax) {
    ModelConfig c;
    c.temperature = 0.5;
    for (std::uint64_t ctx : {0ULL, 1ULL, 0xdeadbeefULL}) {
        const auto got = next_dist_probs(ctx, c);
        const auto want = oracle::softmax_mock(ctx, c.vocab_size, c.temperature);
        for (std::size_t j = 0; j < got.size(); ++j) EXPECT_NEAR(got[j], want[j], 1e-15);
    }
}

TEST(NextDist, DeterministicAndSerialEqualsParallel) {
    const auto c = ModelConfig::large_profile();
    const auto a = next_dist_probs(42, c, ExecPolicy::Parallel);
    const auto b = next_dist_probs(42, c, ExecPolicy::Serial);
    const auto r = next_dist_reference(42, c);
    EXPECT_TRUE(bitwise_equal(a, b));
    EXPECT_TRUE(bitwise_equal(a, r));
    EXPECT_TRUE(next_dist(42, c) == next_dist(42, c));
}

TEST(Fp16, SerializedLargeVocabIsAbout200KB) {
    const auto c = ModelConfig::large_profile();
    const auto bytes = serialize_fp16(next_dist(9, c));
    EXPECT_EQ(bytes.size(), 8u + 2u * 100000u);
    EXPECT_NEAR(static_cast<double>(bytes.size()) / 1000.0, 200.0, 1.0);
    const Dist back = deserialize_fp16(bytes);
    ASSERT_EQ(back.size(), 100000u);
    const auto orig = next_dist(9, c);
    for (std::size_t j = 0; j < back.size(); j += 997) EXPECT_NEAR(back[j], orig[j], orig[j] * 1e-3 + 1e-7);
}

TEST(Fp16, HalfRoundTripOfExactValues) {
    for (double v : {0.0, 1.0, -2.0, 0.5, 65504.0, 6.103515625e-05}) EXPECT_EQ(from_half(to_half(v)), v);
    EXPECT_EQ(to_half(1.0), 0x3c00);
    EXPECT_EQ(to_half(-2.0), 0xc000);
}

TEST(ComputePred, ArityAndEmptyInput) {
    Fixture f;
    auto h = f.fs.create(kUser, "kv");
    EXPECT_TRUE(compute_pred(f.fs, f.model, kUser, h, {}).empty());
    EXPECT_TRUE(oracle_from_scratch({}, f.config).empty());
    const std::vector<TokenPos> four{{1, 0}, {2, 1}, {3, 2}, {4, 3}};
    EXPECT_EQ(compute_pred(f.fs, f.model, kUser, h, four).size(), 4u);
    EXPECT_EQ(f.fs.length(h), 4u);
}

TEST(ComputePred, CachedPrefixPlusOneEqualsFullRun) {
    Fixture f;
    std::mt19937_64 rng(5);
    const auto seq = random_sequence(rng, 50, f.config.vocab_size);
    auto cached = f.fs.create(kUser, "cached");
    compute_pred(f.fs, f.model, kUser, cached, std::span(seq).first(49));
    const auto last = compute_pred(f.fs, f.model, kUser, cached, std::span(seq).last(1));

    auto fresh = f.fs.create(kUser, "fresh");
    const auto all = compute_pred(f.fs, f.model, kUser, fresh, seq);
    EXPECT_TRUE(last.front() == all.back());
}

TEST(ComputePred, DistMatchesIndependentFold) {
    Fixture f;
    const std::vector<TokenPos> seq{{9, 0}, {8, 1}, {7, 5}};
    auto h = f.fs.create(kUser, "kv");
    const auto d = compute_pred(f.fs, f.model, kUser, h, seq);
    std::uint64_t ctx = f.config.model_seed;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        ctx = oracle::chain(ctx, seq[i].token, seq[i].position);
        const auto want = oracle::softmax_mock(ctx, f.config.vocab_size, f.config.temperature);
        for (std::size_t j = 0; j < want.size(); ++j) ASSERT_NEAR(d[i][j], want[j], 1e-15);
    }
}

TEST(ComputePred, PositionConflictPropagates) {
    Fixture f;
    auto h = f.fs.create(kUser, "kv");
    const std::vector<TokenPos> a{{1, 5}};
    compute_pred(f.fs, f.model, kUser, h, a);
    const std::vector<TokenPos> b{{2, 5}};
    EXPECT_THROW(compute_pred(f.fs, f.model, kUser, h, b), Error);
    EXPECT_EQ(f.fs.length(h), 1u);
}

TEST(ComputePred, ReadOnlyCallerIsRejected) {
    Fixture f;
    auto h = f.fs.create(kUser, "kv");
    const Caller other{2, 2};
    const std::vector<TokenPos> a{{1, 0}};
    try {
        compute_pred(f.fs, f.model, other, h, a);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::PermissionDenied);
    }
}

TEST(ComputePred, PrunedFileContinuationMatchesOracle) {
    Fixture f;
    std::mt19937_64 rng(8);
    const auto seq = random_sequence(rng, 40, f.config.vocab_size);
    auto h = f.fs.create(kUser, "kv");
    compute_pred(f.fs, f.model, kUser, h, seq);

    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < seq.size(); i += 3) keep.push_back(i);
    auto pruned = f.fs.extract(kUser, h, keep);
    const TokenPos next{17, seq.back().position + 1};
    const auto got = compute_pred(f.fs, f.model, kUser, pruned, std::span(&next, 1));

    std::vector<TokenPos> kept;
    for (std::size_t i : keep) kept.push_back(seq[i]);
    kept.push_back(next);
    const auto want = oracle_from_scratch(kept, f.config);
    EXPECT_TRUE(got.front() == want.back());
}

TEST(ComputePred, ForkConsistency) {
    Fixture f;
    auto h = f.fs.create(kUser, "kv");
    const std::vector<TokenPos> prefix{{3, 0}, {4, 1}, {5, 2}};
    compute_pred(f.fs, f.model, kUser, h, prefix);
    auto a = f.fs.fork(kUser, h);
    auto b = f.fs.fork(kUser, h);
    const std::vector<TokenPos> suffix{{6, 3}, {7, 4}};
    const auto da = compute_pred(f.fs, f.model, kUser, a, suffix);
    const auto db = compute_pred(f.fs, f.model, kUser, b, suffix);
    ASSERT_EQ(da.size(), db.size());
    for (std::size_t i = 0; i < da.size(); ++i) EXPECT_TRUE(da[i] == db[i]);
}

// Central cache property: any partition of a sequence into successive pred
// calls reproduces the from-scratch distributions bitwise.
TEST(ComputeProperty, AnyPartitionMatchesOracle) {
    Fixture f;
    std::mt19937_64 rng(2026);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto seq = random_sequence(rng, 1 + rng() % 24, f.config.vocab_size);
        const auto want = oracle_from_scratch(seq, f.config);
        auto h = f.fs.create(kUser, "");
        std::vector<Dist> got;
        std::size_t at = 0;
        while (at < seq.size()) {
            const std::size_t n = 1 + rng() % (seq.size() - at);
            auto part = compute_pred(f.fs, f.model, kUser, h, std::span(seq).subspan(at, n));
            got.insert(got.end(), part.begin(), part.end());
            at += n;
        }
        f.fs.close(h);
        ASSERT_EQ(got.size(), want.size());
        for (std::size_t i = 0; i < got.size(); ++i) ASSERT_TRUE(got[i] == want[i]) << "trial " << trial;
    }
    EXPECT_EQ(f.fs.usage().device, 0u);
}

}  // namespace
