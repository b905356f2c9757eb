// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <functional>
#include <numeric>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "lipos/kvfs.hpp"
#include "oracles.hpp"

namespace {

using namespace lipos;

constexpr Caller kAlice{1, 10};
constexpr Caller kBob{2, 20};

// Builds entries for positions [from, from + n) continuing the chain `prev`.
std::vector<KvEntry> make_entries(std::size_t n, Position from = 0, std::uint64_t prev = 0, TokenId base = 100) {
    std::vector<KvEntry> out;
    for (std::size_t i = 0; i < n; ++i) {
        const auto t = static_cast<TokenId>(base + i % 97);
        const auto p = static_cast<Position>(from + i);
        prev = oracle::chain(prev, t, p);
        out.push_back({t, p, prev});
    }
    return out;
}

std::vector<KvEntry> continue_entries(const Kvfs& fs, KvHandle h, std::size_t n, TokenId base = 100) {
    const auto last = fs.last_position(h);
    const Position from = last ? *last + 1 : 0;
    return make_entries(n, from, fs.tail_fingerprint(kAlice, h), base);
}

KvfsConfig audited() {
    KvfsConfig c;
    c.audit_every_op = true;
    return c;
}

void expect_error(Errc code, const std::function<void()>& fn) {
    try {
        fn();
        ADD_FAILURE() << "expected " << to_string(code);
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), code) << e.what();
    }
}

TEST(Kvfs, CreateIsEmpty) {
    Kvfs fs(audited());
    auto h = fs.create(kAlice, "sys_msg.kv");
    EXPECT_EQ(fs.length(h), 0u);
    EXPECT_EQ(fs.usage().device, 0u);
    EXPECT_EQ(fs.stat(h).perms.owner, kAlice.principal);
    expect_error(Errc::NameExists, [&] { fs.create(kAlice, "sys_msg.kv"); });
}

TEST(Kvfs, ThreeThousandEntriesUseCeilPages) {
    Kvfs fs(audited());
    auto h = fs.create(kAlice, "doc");
    fs.append(kAlice, h, make_entries(3000));
    EXPECT_EQ(fs.usage().device, oracle::ceil_div(3000, 16));
    EXPECT_EQ(fs.stat(h).pages, 188u);
}

TEST(Kvfs, OpenRoundTripAndPermissions) {
    Kvfs fs(audited());
    auto h = fs.create(kAlice, "private", Permissions{kAlice.principal, false, false});
    fs.append(kAlice, h, make_entries(42));
    auto again = fs.open(kAlice, "private");
    EXPECT_EQ(fs.length(again), 42u);
    expect_error(Errc::PermissionDenied, [&] { fs.open(kBob, "private"); });
    expect_error(Errc::NotFound, [&] { fs.open(kAlice, "missing"); });
}

TEST(Kvfs, WritePermissionRequiredForAppendAndRemove) {
    Kvfs fs(audited());
    auto h = fs.create(kAlice, "shared");
    fs.append(kAlice, h, make_entries(4));
    expect_error(Errc::PermissionDenied, [&] { fs.append(kBob, h, continue_entries(fs, h, 1)); });
    expect_error(Errc::PermissionDenied, [&] { fs.remove(kBob, h); });
    fs.set_permissions(kAlice, h, Permissions{kAlice.principal, true, true});
    fs.append(kBob, h, continue_entries(fs, h, 1));
    EXPECT_EQ(fs.length(h), 5u);
}

TEST(Kvfs, ForkSharesFullPagesAndCopiesTail) {
    Kvfs fs(audited());
    auto src = fs.create(kAlice, "src");
    fs.append(kAlice, src, make_entries(3000));
    const std::size_t full = 3000 / 16;
    const auto before = fs.usage().device;

    auto child = fs.fork(kAlice, src);
    EXPECT_EQ(fs.usage().device - before, 1u);

    const auto sp = fs.page_ids(src);
    const auto cp = fs.page_ids(child);
    ASSERT_EQ(sp.size(), cp.size());
    std::size_t shared = 0;
    for (std::size_t i = 0; i < sp.size(); ++i) {
        if (sp[i] == cp[i]) {
            ++shared;
            EXPECT_EQ(fs.refcount(sp[i]), 2u);
        }
    }
    EXPECT_EQ(shared, full);
    EXPECT_NE(sp.back(), cp.back());
    EXPECT_EQ(fs.read(kAlice, src), fs.read(kAlice, child));
}

TEST(Kvfs, ForkOfEmptyAllocatesNothing) {
    Kvfs fs(audited());
    auto src = fs.create(kAlice, "empty");
    auto child = fs.fork(kAlice, src);
    EXPECT_EQ(fs.length(child), 0u);
    EXPECT_EQ(fs.usage().device, 0u);
}

TEST(Kvfs, ForkThenAppendLeavesSourceUnchanged) {
    Kvfs fs(audited());
    auto src = fs.create(kAlice, "src");
    fs.append(kAlice, src, make_entries(40));
    const auto snapshot = fs.read(kAlice, src);
    auto child = fs.fork(kAlice, src);
    fs.append(kAlice, child, continue_entries(fs, child, 1, 7));
    EXPECT_EQ(fs.read(kAlice, src), snapshot);
    EXPECT_EQ(fs.length(child), 41u);
}

TEST(Kvfs, RemoveAfterForkFreesNothing) {
    Kvfs fs(audited());
    auto src = fs.create(kAlice, "src");
    fs.append(kAlice, src, make_entries(64));  // four full pages
    auto child = fs.fork(kAlice, src, "child");
    const auto pages = fs.page_ids(src);
    EXPECT_EQ(fs.remove(kAlice, src), 0u);
    for (PageId p : pages) EXPECT_EQ(fs.refcount(p), 1u);
    EXPECT_EQ(fs.remove(kAlice, child), 4u);
    EXPECT_EQ(fs.usage().device, 0u);
}

TEST(Kvfs, SharedTailSplitsOnAppendWhenTailIsLazy) {
    KvfsConfig c = audited();
    c.eager_tail_copy = false;
    Kvfs fs(c);
    auto src = fs.create(kAlice, "src");
    fs.append(kAlice, src, make_entries(20));
    auto child = fs.fork(kAlice, src);
    const PageId tail = fs.page_ids(src).back();
    EXPECT_EQ(fs.refcount(tail), 2u);

    fs.append(kAlice, child, continue_entries(fs, child, 1));
    EXPECT_EQ(fs.refcount(tail), 1u);
    EXPECT_EQ(fs.refcount(fs.page_ids(child).back()), 1u);
    EXPECT_NE(fs.page_ids(child).back(), tail);
    EXPECT_EQ(fs.length(src), 20u);
}

TEST(Kvfs, AppendPositionConflict) {
    Kvfs fs(audited());
    auto h = fs.create(kAlice, "f");
    fs.append(kAlice, h, make_entries(5));
    const auto before = fs.read(kAlice, h);
    expect_error(Errc::PositionConflict, [&] { fs.append(kAlice, h, make_entries(1, 4)); });
    EXPECT_EQ(fs.read(kAlice, h), before);
}

TEST(Kvfs, AppendAcrossPageBoundary) {
    Kvfs fs(audited());
    auto h = fs.create(kAlice, "f");
    fs.append(kAlice, h, make_entries(8));
    fs.append(kAlice, h, continue_entries(fs, h, 16));
    const auto info = fs.stat(h);
    EXPECT_EQ(info.pages, 2u);
    EXPECT_EQ(info.length, 24u);
    auto all = fs.read(kAlice, h);
    EXPECT_EQ(all.size(), 24u);
    // First page full, second holds the remaining eight entries.
    EXPECT_EQ(all[15].position, 15u);
    EXPECT_EQ(all[23].position, 23u);
}

TEST(Kvfs, ExtractPreservesPositions) {
    Kvfs fs(audited());
    auto h = fs.create(kAlice, "f");
    const auto entries = make_entries(10);
    fs.append(kAlice, h, entries);

    const std::vector<std::size_t> even{0, 2, 4, 6, 8};
    auto e = fs.extract(kAlice, h, even);
    const auto got = fs.read(kAlice, e);
    ASSERT_EQ(got.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(got[i].position, entries[even[i]].position);
        EXPECT_EQ(got[i].token, entries[even[i]].token);
    }

    std::vector<std::size_t> all(10);
    std::iota(all.begin(), all.end(), 0);
    EXPECT_EQ(fs.read(kAlice, fs.extract(kAlice, h, all)), entries);
    EXPECT_EQ(fs.length(fs.extract(kAlice, h, {})), 0u);

    const std::vector<std::size_t> bad{3, 10};
    expect_error(Errc::IndexOutOfRange, [&] { fs.extract(kAlice, h, bad); });
}

TEST(Kvfs, ExtractRechainsFingerprints) {
    Kvfs fs(audited());
    auto h = fs.create(kAlice, "f");
    const auto entries = make_entries(10);
    fs.append(kAlice, h, entries);
    const std::vector<std::size_t> odd{1, 3, 5};
    const auto got = fs.read(kAlice, fs.extract(kAlice, h, odd));
    std::uint64_t f = 0;
    for (const auto& e : got) {
        f = oracle::chain(f, e.token, e.position);
        EXPECT_EQ(e.fingerprint, f);
    }
}

TEST(Kvfs, MergeDisjointAndOrderIndependent) {
    Kvfs fs(audited());
    auto a = fs.create(kAlice, "a");
    fs.append(kAlice, a, make_entries(10, 0));
    auto b = fs.create(kAlice, "b");
    fs.append(kAlice, b, make_entries(10, 10));

    const std::vector<KvHandle> ab{a, b};
    const std::vector<KvHandle> ba{b, a};
    const auto m1 = fs.read(kAlice, fs.merge(kAlice, ab));
    const auto m2 = fs.read(kAlice, fs.merge(kAlice, ba));
    ASSERT_EQ(m1.size(), 20u);
    for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(m1[i].position, i);
    EXPECT_EQ(m1, m2);
}

TEST(Kvfs, MergeOverlapRejected) {
    Kvfs fs(audited());
    auto a = fs.create(kAlice, "a");
    fs.append(kAlice, a, make_entries(10, 0));
    auto b = fs.create(kAlice, "b");
    fs.append(kAlice, b, make_entries(3, 5));
    const auto before = fs.usage();
    const std::vector<KvHandle> parts{a, b};
    expect_error(Errc::PositionConflict, [&] { fs.merge(kAlice, parts); });
    EXPECT_EQ(fs.usage(), before);
    EXPECT_EQ(fs.file_count(), 2u);
}

TEST(Kvfs, LockSemantics) {
    Kvfs fs(audited());
    auto h = fs.create(kAlice, "f", Permissions{kAlice.principal, true, true});
    const Caller other{kAlice.principal, 11};
    fs.lock(kAlice, h);
    expect_error(Errc::Locked, [&] { fs.append(other, h, continue_entries(fs, h, 1)); });
    expect_error(Errc::Locked, [&] { fs.lock(other, h); });
    expect_error(Errc::Locked, [&] { fs.lock(kAlice, h); });
    fs.append(kAlice, h, continue_entries(fs, h, 1));
    fs.unlock(kAlice, h);
    fs.lock(other, h);
    expect_error(Errc::NotLockHolder, [&] { fs.unlock(kAlice, h); });
    fs.unlock(other, h);
    expect_error(Errc::NotLockHolder, [&] { fs.unlock(kAlice, h); });
}

TEST(Kvfs, OffloadMovesExclusivePagesOnly) {
    Kvfs fs(audited());
    auto h = fs.create(kAlice, "f");
    fs.append(kAlice, h, make_entries(3000));
    EXPECT_EQ(fs.offload(kAlice, h), 188u);
    EXPECT_EQ(fs.usage().device, 0u);
    EXPECT_EQ(fs.usage().host, 188u);
    EXPECT_EQ(fs.restore(kAlice, h), 188u);
    EXPECT_EQ(fs.usage().device, 188u);
    EXPECT_EQ(fs.usage().host, 0u);

    auto g = fs.create(kAlice, "g");
    fs.append(kAlice, g, make_entries(64));
    auto sibling = fs.fork(kAlice, g);
    EXPECT_EQ(fs.offload(kAlice, g), 0u);
    EXPECT_EQ(fs.stat(sibling).device_pages, 4u);
}

TEST(Kvfs, RestoreIntoFullPoolFailsAtomically) {
    KvfsConfig c = audited();
    c.device_capacity = 10;
    Kvfs fs(c);
    auto h = fs.create(kAlice, "f");
    fs.append(kAlice, h, make_entries(16 * 6));
    EXPECT_EQ(fs.offload(kAlice, h), 6u);
    auto filler = fs.create(kAlice, "filler");
    fs.append(kAlice, filler, make_entries(16 * 8));
    const auto before = fs.usage();
    expect_error(Errc::PoolExhausted, [&] { fs.restore(kAlice, h); });
    EXPECT_EQ(fs.usage(), before);
    EXPECT_EQ(fs.stat(h).host_pages, 6u);
}

TEST(Kvfs, AppendBeyondCapacityFailsAtomically) {
    KvfsConfig c = audited();
    c.device_capacity = 2;
    Kvfs fs(c);
    auto h = fs.create(kAlice, "f");
    fs.append(kAlice, h, make_entries(20));
    const auto before = fs.read(kAlice, h);
    expect_error(Errc::PoolExhausted, [&] { fs.append(kAlice, h, continue_entries(fs, h, 20)); });
    EXPECT_EQ(fs.read(kAlice, h), before);
    EXPECT_EQ(fs.usage().device, 2u);
}

TEST(Kvfs, AnonymousFileFreedOnLastClose) {
    Kvfs fs(audited());
    auto h = fs.create(kAlice, "");
    fs.append(kAlice, h, make_entries(33));
    EXPECT_EQ(fs.usage().device, 3u);
    fs.close(h);
    EXPECT_EQ(fs.usage().device, 0u);
    EXPECT_EQ(fs.file_count(), 0u);
}

TEST(Kvfs, SnapshotRoundTrip) {
    const auto dir = std::filesystem::temp_directory_path() / "lipos_snapshot_test";
    std::filesystem::remove_all(dir);
    Kvfs fs(audited());
    auto a = fs.create(kAlice, "a.kv", Permissions{kAlice.principal, false, false});
    fs.append(kAlice, a, make_entries(50));
    auto b = fs.create(kBob, "b.kv");
    fs.append(kBob, b, make_entries(7, 3));
    fs.save_snapshot(dir);

    // Byte layout of one file: magic, count, then 16 bytes per entry.
    const auto kvf = dir / (std::to_string(fs.file_id(b)) + ".kvf");
    EXPECT_EQ(std::filesystem::file_size(kvf), 4u + 4u + 7u * 16u);

    Kvfs loaded(audited());
    loaded.load_snapshot(dir);
    EXPECT_EQ(loaded.names(), fs.names());
    EXPECT_EQ(loaded.read(kAlice, loaded.open(kAlice, "a.kv")), fs.read(kAlice, a));
    EXPECT_EQ(loaded.read(kBob, loaded.open(kBob, "b.kv")), fs.read(kBob, b));
    expect_error(Errc::PermissionDenied, [&] { loaded.open(kBob, "a.kv"); });

    // Flip a byte in the fingerprint area.
    {
        std::fstream f(kvf, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4 + 4 + 8);
        f.put('\x5a');
    }
    Kvfs corrupt;
    expect_error(Errc::CorruptSnapshot, [&] { corrupt.load_snapshot(dir); });
    std::filesystem::remove_all(dir);
}

TEST(Kvfs, NoLeaksAfterRemovingEverything) {
    Kvfs fs(audited());
    auto a = fs.create(kAlice, "a");
    fs.append(kAlice, a, make_entries(100));
    auto b = fs.fork(kAlice, a, "b");
    fs.append(kAlice, b, continue_entries(fs, b, 30));
    const std::vector<std::size_t> idx{0, 50, 99};
    auto c = fs.extract(kAlice, a, idx, "c");
    fs.remove(kAlice, a);
    fs.remove(kAlice, b);
    fs.remove(kAlice, c);
    EXPECT_EQ(fs.usage(), PoolUsage{});
}

// Randomized operation sequences checked against a deep-copy shadow.
TEST(KvfsProperty, CopyOnWriteMatchesDeepCopyShadow) {
    for (std::uint64_t seed = 1; seed <= 40; ++seed) {
        std::mt19937_64 rng(seed);
        Kvfs fs(audited());
        oracle::ShadowFs shadow;
        std::vector<std::pair<KvHandle, int>> live;

        auto check = [&] {
            for (const auto& [h, s] : live) {
                const auto real = fs.read(kAlice, h);
                const auto& want = shadow.files.at(s);
                ASSERT_EQ(real.size(), want.size());
                for (std::size_t i = 0; i < real.size(); ++i) {
                    ASSERT_EQ(real[i].token, want[i].token);
                    ASSERT_EQ(real[i].position, want[i].pos);
                }
            }
        };

        const std::size_t ops = 50 + rng() % 151;
        for (std::size_t op = 0; op < ops; ++op) {
            const auto kind = live.empty() ? 0 : rng() % 6;
            if (kind == 0 || live.empty()) {
                live.emplace_back(fs.create(kAlice, ""), shadow.create());
            } else {
                auto [h, s] = live[rng() % live.size()];
                if (kind == 1) {
                    live.emplace_back(fs.fork(kAlice, h), shadow.fork(s));
                } else if (kind == 2) {
                    const auto add = continue_entries(fs, h, 1 + rng() % 40, static_cast<TokenId>(rng() % 1000));
                    fs.append(kAlice, h, add);
                    std::vector<oracle::ShadowFs::Entry> e;
                    for (const auto& x : add) e.push_back({x.token, x.position});
                    shadow.append(s, e);
                } else if (kind == 3) {
                    std::vector<std::size_t> idx;
                    for (std::size_t i = 0; i < fs.length(h); ++i) {
                        if (rng() % 2) idx.push_back(i);
                    }
                    live.emplace_back(fs.extract(kAlice, h, idx), shadow.extract(s, idx));
                } else if (kind == 4) {
                    // Merge with a fresh file placed after the source's last position.
                    auto tail = fs.create(kAlice, "");
                    const auto last = fs.last_position(h);
                    const Position from = (last ? *last + 1 : 0) + static_cast<Position>(rng() % 5);
                    const auto add = make_entries(1 + rng() % 20, from);
                    fs.append(kAlice, tail, add);
                    const int ts = shadow.create();
                    std::vector<oracle::ShadowFs::Entry> e;
                    for (const auto& x : add) e.push_back({x.token, x.position});
                    shadow.append(ts, e);
                    const std::vector<KvHandle> parts{tail, h};
                    live.emplace_back(fs.merge(kAlice, parts), shadow.merge({ts, s}));
                    fs.close(tail);
                    shadow.remove(ts);
                } else {
                    const std::size_t i = rng() % live.size();
                    fs.close(live[i].first);
                    shadow.remove(live[i].second);
                    live.erase(live.begin() + static_cast<std::ptrdiff_t>(i));
                }
            }
            check();
            if (HasFatalFailure()) return;
        }
        for (const auto& [h, s] : live) fs.close(h);
        EXPECT_EQ(fs.usage(), PoolUsage{}) << "seed " << seed;
    }
}

}  // namespace
