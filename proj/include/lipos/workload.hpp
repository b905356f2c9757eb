// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lipos/common.hpp"

namespace lipos {

/// How the Pareto index maps to the exponent of the rank distribution
/// P(r) ∝ r^-s.
enum class Popularity {
    InverseAlpha,  // s = 1 / alpha: small alpha concentrates traffic on a few docs
    OnePlus,       // s = 1 + alpha: small alpha spreads traffic out
};

struct WorkloadSpec {
    std::size_t num_docs = 100;
    std::size_t doc_len = 3000;
    double pareto_alpha = 1.0;
    double request_rate = 20.0;  // requests per virtual second
    VTime duration = 10.0;
    std::size_t query_len = 32;
    std::size_t gen_len = 64;
    std::uint64_t seed = 1;
    Popularity popularity = Popularity::InverseAlpha;

    void validate() const;
};

/// Normalized request probability of each document, most popular first.
/// Document ids equal rank - 1.
std::vector<double> popularity_weights(std::size_t num_docs, double alpha, Popularity mapping);

/// Probability mass of the `k` most popular documents.
double top_mass(std::size_t num_docs, double alpha, Popularity mapping, std::size_t k);

struct Request {
    std::uint64_t id = 0;
    VTime arrival = 0;
    std::uint32_t doc = 0;
    std::vector<TokenId> query;

    friend bool operator==(const Request&, const Request&) = default;
};

/// Poisson arrivals on [0, duration) with documents drawn by popularity and
/// random queries over [1, vocab_size). Deterministic in `spec.seed`.
std::vector<Request> gen_requests(const WorkloadSpec& spec, std::uint32_t vocab_size);

/// Synthetic token content of document `doc`, avoiding token 0.
std::vector<TokenId> doc_tokens(std::uint32_t doc, std::size_t doc_len, std::uint32_t vocab_size,
                                std::uint64_t seed);

struct CachePolicy {
    enum class Kind {
        None,         // every request prefills; nothing is retained
        TopK,         // retain the k docs with the highest running request count
        Consecutive,  // retain a doc after `threshold` back-to-back requests for it
        Baseline,     // stateless prompt serving: no KV lookup or retention at all
    };

    Kind kind = Kind::TopK;
    std::size_t k = 20;
    std::size_t threshold = 2;

    /// Parses "none", "baseline", "topk", "topk:K", "consecutive:N".
    static CachePolicy parse(const std::string& text);
    std::string to_string() const;

    friend bool operator==(const CachePolicy&, const CachePolicy&) = default;
};

}  // namespace lipos
