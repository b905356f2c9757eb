// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#include "lipos/workload.hpp"

#include <cmath>
#include <random>

namespace lipos {

void WorkloadSpec::validate() const {
    if (num_docs == 0) throw Error(Errc::ConfigError, "num_docs must be >= 1");
    if (!(pareto_alpha > 0) || !std::isfinite(pareto_alpha)) throw Error(Errc::ConfigError, "pareto_alpha must be > 0");
    if (!(request_rate > 0)) throw Error(Errc::ConfigError, "request_rate must be > 0");
    if (!(duration >= 0)) throw Error(Errc::ConfigError, "duration must be >= 0");
    if (query_len == 0) throw Error(Errc::ConfigError, "query_len must be >= 1");
    if (gen_len == 0) throw Error(Errc::ConfigError, "gen_len must be >= 1");
}

std::vector<double> popularity_weights(std::size_t num_docs, double alpha, Popularity mapping) {
    if (!(alpha > 0)) throw Error(Errc::ConfigError, "pareto_alpha must be > 0");
    const double s = mapping == Popularity::InverseAlpha ? 1.0 / alpha : 1.0 + alpha;
    std::vector<double> w(num_docs);
    double total = 0;
    for (std::size_t r = 0; r < num_docs; ++r) {
        w[r] = std::pow(static_cast<double>(r + 1), -s);
        total += w[r];
    }
    for (double& v : w) v /= total;
    return w;
}

double top_mass(std::size_t num_docs, double alpha, Popularity mapping, std::size_t k) {
    const auto w = popularity_weights(num_docs, alpha, mapping);
    double m = 0;
    for (std::size_t i = 0; i < std::min(k, w.size()); ++i) m += w[i];
    return m;
}

std::vector<Request> gen_requests(const WorkloadSpec& spec, std::uint32_t vocab_size) {
    spec.validate();
    if (vocab_size < 2) throw Error(Errc::ConfigError, "vocab_size must be >= 2");
    const auto weights = popularity_weights(spec.num_docs, spec.pareto_alpha, spec.popularity);
    std::vector<double> cdf(weights.size());
    double acc = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) cdf[i] = (acc += weights[i]);

    std::mt19937_64 rng(spec.seed);
    auto uniform = [&] { return unit_interval(rng()); };

    std::vector<Request> out;
    VTime t = 0;
    for (;;) {
        t += -std::log1p(-uniform()) / spec.request_rate;
        if (t >= spec.duration) break;
        Request r;
        r.id = out.size() + 1;
        r.arrival = t;
        const double u = uniform();
        std::size_t d = 0;
        while (d + 1 < cdf.size() && cdf[d] <= u) ++d;
        r.doc = static_cast<std::uint32_t>(d);
        r.query.resize(spec.query_len);
        for (auto& tok : r.query) tok = static_cast<TokenId>(1 + rng() % (vocab_size - 1));
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<TokenId> doc_tokens(std::uint32_t doc, std::size_t doc_len, std::uint32_t vocab_size,
                                std::uint64_t seed) {
    std::vector<TokenId> out(doc_len);
    const std::uint64_t base = mix64(seed ^ mix64(doc + 1ULL));
    for (std::size_t i = 0; i < doc_len; ++i) {
        out[i] = static_cast<TokenId>(1 + mix64(base + (i + 1) * kGoldenGamma) % (vocab_size - 1));
    }
    return out;
}

CachePolicy CachePolicy::parse(const std::string& text) {
    auto number = [&](const std::string& s) -> std::size_t {
        std::size_t used = 0;
        unsigned long v = 0;
        try {
            v = std::stoul(s, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != s.size() || v == 0) throw Error(Errc::ConfigError, "bad policy parameter in '" + text + "'");
        return v;
    };
    const auto colon = text.find(':');
    const std::string head = text.substr(0, colon);
    const std::string arg = colon == std::string::npos ? std::string() : text.substr(colon + 1);
    if (head == "none" && arg.empty()) return {Kind::None, 0, 0};
    if (head == "baseline" && arg.empty()) return {Kind::Baseline, 0, 0};
    if (head == "topk" || head == "top_k") return {Kind::TopK, arg.empty() ? 20 : number(arg), 0};
    if (head == "consecutive") return {Kind::Consecutive, 20, arg.empty() ? 2 : number(arg)};
    throw Error(Errc::ConfigError, "unknown cache policy '" + text + "'");
}

std::string CachePolicy::to_string() const {
    switch (kind) {
        case Kind::None: return "none";
        case Kind::Baseline: return "baseline";
        case Kind::TopK: return "topk:" + std::to_string(k);
        case Kind::Consecutive: return "consecutive:" + std::to_string(threshold);
    }
    return "?";
}

}  // namespace lipos
