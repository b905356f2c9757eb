// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0
//
// Mock next-token kernels. next_dist_probs is the OpenMP version;
// next_dist_reference is the serial version the tests compare it against.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include "lipos/model.hpp"

namespace lipos {

namespace {

// Below this size the thread fork/join costs more than the loop.
constexpr std::int64_t kParallelThreshold = 8192;

}  // namespace

double mock_logit(Fingerprint context, std::uint32_t j) noexcept {
    const std::uint64_t bits = mix64(context + (static_cast<std::uint64_t>(j) + 1) * kGoldenGamma);
    return 2.0 * unit_interval(bits) - 1.0;
}

std::vector<double> next_dist_reference(Fingerprint context, const ModelConfig& config) {
    const std::size_t n = config.vocab_size;
    std::vector<double> p(n);
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
        p[j] = mock_logit(context, static_cast<std::uint32_t>(j)) / config.temperature;
        hi = std::max(hi, p[j]);
    }
    for (std::size_t j = 0; j < n; ++j) p[j] = std::exp(p[j] - hi);

    double total = 0.0;
    for (std::size_t b = 0; b < n; b += kSoftmaxBlock) {
        double partial = 0.0;
        const std::size_t end = std::min(n, b + kSoftmaxBlock);
        for (std::size_t j = b; j < end; ++j) partial += p[j];
        total += partial;
    }
    for (std::size_t j = 0; j < n; ++j) p[j] /= total;
    return p;
}

std::vector<double> next_dist_probs(Fingerprint context, const ModelConfig& config, ExecPolicy policy) {
    if (policy == ExecPolicy::Serial) return next_dist_reference(context, config);

    const auto n = static_cast<std::int64_t>(config.vocab_size);
    const bool par = n >= kParallelThreshold;
    std::vector<double> p(static_cast<std::size_t>(n));
    const double temp = config.temperature;

    double hi = -std::numeric_limits<double>::infinity();
#pragma omp parallel for reduction(max : hi) if (par)
    for (std::int64_t j = 0; j < n; ++j) {
        p[j] = mock_logit(context, static_cast<std::uint32_t>(j)) / temp;
        hi = std::max(hi, p[j]);
    }

#pragma omp parallel for if (par)
    for (std::int64_t j = 0; j < n; ++j) p[j] = std::exp(p[j] - hi);

    const std::int64_t blocks = (n + static_cast<std::int64_t>(kSoftmaxBlock) - 1) / static_cast<std::int64_t>(kSoftmaxBlock);
    std::vector<double> partial(static_cast<std::size_t>(blocks), 0.0);
#pragma omp parallel for if (par)
    for (std::int64_t b = 0; b < blocks; ++b) {
        const std::int64_t begin = b * static_cast<std::int64_t>(kSoftmaxBlock);
        const std::int64_t end = std::min(n, begin + static_cast<std::int64_t>(kSoftmaxBlock));
        double s = 0.0;
        for (std::int64_t j = begin; j < end; ++j) s += p[j];
        partial[b] = s;
    }
    double total = 0.0;
    for (double s : partial) total += s;

#pragma omp parallel for if (par)
    for (std::int64_t j = 0; j < n; ++j) p[j] /= total;
    return p;
}

}  // namespace lipos
