// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

// Test-side reference computations. Nothing here calls into the library's
// hashing, softmax or page arithmetic, so agreement is meaningful.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

// SplitMix64 finalizer, transcribed from the published reference.
inline std::uint64_t splitmix_finalize(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t chain(std::uint64_t prev, std::uint32_t token, std::uint32_t pos) {
    return splitmix_finalize(prev ^ ((static_cast<std::uint64_t>(token) << 32) + pos));
}

inline std::uint64_t fold(std::uint64_t seed, const std::vector<std::pair<std::uint32_t, std::uint32_t>>& seq) {
    for (const auto& [t, p] : seq) seed = chain(seed, t, p);
    return seed;
}

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return a / b + (a % b != 0); }

// Softmax of the mock logits in long double, for tolerance comparisons.
inline std::vector<double> softmax_mock(std::uint64_t ctx, std::uint32_t vocab, double temperature) {
    const std::uint64_t golden = 0x9e3779b97f4a7c15ULL;
    std::vector<long double> logits(vocab);
    long double mx = -1e300L;
    for (std::uint32_t j = 0; j < vocab; ++j) {
        const std::uint64_t bits = splitmix_finalize(ctx + (static_cast<std::uint64_t>(j) + 1) * golden);
        const long double u = static_cast<long double>(bits >> 11) * 0x1.0p-53L;
        logits[j] = (2 * u - 1) / temperature;
        mx = std::max(mx, logits[j]);
    }
    long double total = 0;
    for (auto& l : logits) total += (l = std::exp(l - mx));
    std::vector<double> out(vocab);
    for (std::uint32_t j = 0; j < vocab; ++j) out[j] = static_cast<double>(logits[j] / total);
    return out;
}

// Deep-copy model of KVFS contents: every file owns its own entry vector.
struct ShadowFs {
    struct Entry {
        std::uint32_t token;
        std::uint32_t pos;
        friend bool operator==(const Entry&, const Entry&) = default;
    };
    std::map<int, std::vector<Entry>> files;
    int next = 1;

    int create() {
        files[next] = {};
        return next++;
    }
    int fork(int src) {
        files[next] = files.at(src);
        return next++;
    }
    void append(int f, const std::vector<Entry>& e) { files.at(f).insert(files.at(f).end(), e.begin(), e.end()); }
    int extract(int src, const std::vector<std::size_t>& idx) {
        std::vector<Entry> out;
        for (std::size_t i : idx) out.push_back(files.at(src)[i]);
        files[next] = out;
        return next++;
    }
    int merge(const std::vector<int>& parts) {
        std::vector<Entry> out;
        for (int p : parts) out.insert(out.end(), files.at(p).begin(), files.at(p).end());
        std::sort(out.begin(), out.end(), [](const Entry& a, const Entry& b) { return a.pos < b.pos; });
        files[next] = out;
        return next++;
    }
    void remove(int f) { files.erase(f); }
};

}  // namespace oracle
