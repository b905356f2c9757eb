// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#include "lipos/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace lipos {

void SamplerSpec::validate() const {
    if (kind != Kind::Greedy && !(temperature > 0 && std::isfinite(temperature)))
        throw Error(Errc::ConfigError, "sampler temperature must be positive");
    if (kind == Kind::TopK && k == 0) throw Error(Errc::ConfigError, "top_k needs k >= 1");
}

TokenId argmax(std::span<const double> weights) {
    if (weights.empty()) throw Error(Errc::DegenerateDist, "empty distribution");
    std::size_t best = 0;
    for (std::size_t i = 1; i < weights.size(); ++i) {
        if (weights[i] > weights[best]) best = i;
    }
    return static_cast<TokenId>(best);
}

namespace {

double uniform_draw(std::uint64_t seed, std::uint64_t draw) {
    return unit_interval(mix64(mix64(seed) + (draw + 1) * kGoldenGamma));
}

// Inverse-CDF draw over `w`, restricted to indices in `support`.
TokenId draw_from(std::span<const double> w, std::span<const std::size_t> support, double u) {
    double total = 0;
    for (std::size_t i : support) total += w[i];
    if (!(total > 0) || !std::isfinite(total)) throw Error(Errc::DegenerateDist, "weights sum to zero");
    const double target = u * total;
    double acc = 0;
    std::size_t last = support.front();
    for (std::size_t i : support) {
        if (w[i] <= 0) continue;
        acc += w[i];
        last = i;
        if (acc > target) return static_cast<TokenId>(i);
    }
    return static_cast<TokenId>(last);
}

// p^(1/T) relative to the largest entry, computed in the log domain.
std::vector<double> tempered(std::span<const double> p, std::span<const std::size_t> support, double t) {
    double pmax = 0;
    for (std::size_t i : support) pmax = std::max(pmax, p[i]);
    if (!(pmax > 0) || !std::isfinite(pmax)) throw Error(Errc::DegenerateDist, "weights sum to zero");
    std::vector<double> w(p.size(), 0.0);
    const double lmax = std::log(pmax);
    for (std::size_t i : support) {
        if (p[i] > 0) w[i] = std::exp((std::log(p[i]) - lmax) / t);
    }
    return w;
}

}  // namespace

TokenId sample(std::span<const double> weights, const SamplerSpec& spec, std::uint64_t draw) {
    spec.validate();
    if (weights.empty()) throw Error(Errc::DegenerateDist, "empty distribution");
    for (double v : weights) {
        if (!(v >= 0) || !std::isfinite(v)) throw Error(Errc::DegenerateDist, "negative or non-finite weight");
    }

    if (spec.kind == SamplerSpec::Kind::Greedy) {
        const TokenId t = argmax(weights);
        if (!(weights[t] > 0)) throw Error(Errc::DegenerateDist, "weights sum to zero");
        return t;
    }

    std::vector<std::size_t> support(weights.size());
    std::iota(support.begin(), support.end(), std::size_t{0});
    if (spec.kind == SamplerSpec::Kind::TopK && spec.k < support.size()) {
        std::partial_sort(support.begin(), support.begin() + static_cast<std::ptrdiff_t>(spec.k), support.end(),
                          [&](std::size_t a, std::size_t b) {
                              return weights[a] != weights[b] ? weights[a] > weights[b] : a < b;
                          });
        support.resize(spec.k);
        std::sort(support.begin(), support.end());
    }
    const auto w = tempered(weights, support, spec.temperature);
    return draw_from(w, support, uniform_draw(spec.rng_seed, draw));
}

TokenId sample(const Dist& dist, const SamplerSpec& spec, std::uint64_t draw) {
    return sample(dist.probs(), spec, draw);
}

TokenAutomaton::TokenAutomaton(std::size_t num_states, State start, std::set<State> accept)
    : start_(start), accept_(std::move(accept)), allowed_(num_states) {
    if (num_states == 0 || start >= num_states) throw Error(Errc::ConfigError, "automaton start state out of range");
    for (State s : accept_) {
        if (s >= num_states) throw Error(Errc::ConfigError, "automaton accept state out of range");
    }
    names_.reserve(num_states);
    for (std::size_t i = 0; i < num_states; ++i) names_.push_back(std::to_string(i));
}

void TokenAutomaton::add_transition(State from, TokenId token, State to) {
    if (from >= num_states() || to >= num_states()) throw Error(Errc::ConfigError, "transition state out of range");
    if (!table_.emplace(std::pair{from, token}, to).second)
        throw Error(Errc::ConfigError, "duplicate transition on token " + std::to_string(token));
    auto& a = allowed_[from];
    a.insert(std::upper_bound(a.begin(), a.end(), token), token);
}

std::optional<TokenAutomaton::State> TokenAutomaton::step(State s, TokenId token) const {
    auto it = table_.find({s, token});
    if (it == table_.end()) return std::nullopt;
    return it->second;
}

const std::vector<TokenId>& TokenAutomaton::allowed(State s) const { return allowed_.at(s); }

TokenAutomaton TokenAutomaton::from_json(std::istream& in) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
        std::vector<std::string> names;
        const auto& states = j.at("states");
        if (states.is_number_unsigned()) {
            for (std::size_t i = 0; i < states.get<std::size_t>(); ++i) names.push_back(std::to_string(i));
        } else {
            for (const auto& s : states) names.push_back(s.is_string() ? s.get<std::string>() : s.dump());
        }
        auto ref = [&](const nlohmann::json& v) -> State {
            if (v.is_number_unsigned()) {
                const auto i = v.get<std::size_t>();
                if (i >= names.size()) throw Error(Errc::ConfigError, "state index out of range");
                return static_cast<State>(i);
            }
            const auto name = v.get<std::string>();
            auto it = std::find(names.begin(), names.end(), name);
            if (it == names.end()) throw Error(Errc::ConfigError, "unknown state '" + name + "'");
            return static_cast<State>(it - names.begin());
        };
        std::set<State> accept;
        for (const auto& a : j.at("accept")) accept.insert(ref(a));
        TokenAutomaton aut(names.size(), ref(j.at("start")), std::move(accept));
        aut.names_ = names;
        for (const auto& t : j.at("transitions")) {
            aut.add_transition(ref(t.at("from")), t.at("token").get<TokenId>(), ref(t.at("to")));
        }
        return aut;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::ConfigError, std::string("automaton: ") + e.what());
    }
}

TokenAutomaton TokenAutomaton::from_json_text(const std::string& text) {
    std::istringstream in(text);
    return from_json(in);
}

TokenAutomaton TokenAutomaton::alternating(TokenId a, TokenId b, TokenId eos) {
    // 0 --a--> 1 --b--> 0, and 0 --eos--> 2 (accepting).
    TokenAutomaton aut(3, 0, {2});
    aut.names_ = {"expect_a", "expect_b", "done"};
    aut.add_transition(0, a, 1);
    aut.add_transition(1, b, 0);
    aut.add_transition(0, eos, 2);
    return aut;
}

std::vector<double> masked_dist(std::span<const double> probs, std::span<const TokenId> allowed) {
    std::vector<double> out(probs.size(), 0.0);
    double total = 0;
    for (TokenId t : allowed) {
        if (t >= probs.size()) throw Error(Errc::IndexOutOfRange, "allowed token " + std::to_string(t));
        out[t] = probs[t];
        total += probs[t];
    }
    if (!(total > 0)) throw Error(Errc::DegenerateDist, "no probability mass on allowed tokens");
    for (double& v : out) v /= total;
    return out;
}

ConstrainedStep constrained_next(const Dist& dist, TokenAutomaton::State state, const TokenAutomaton& aut,
                                 const SamplerSpec& spec, std::uint64_t draw) {
    const auto& allowed = aut.allowed(state);
    if (allowed.empty()) throw Error(Errc::DeadState, "state " + aut.state_name(state) + " allows no token");
    const auto p = dist.probs();
    // Mask without renormalizing: sample() normalizes internally, and an
    // untouched full-vocabulary mask then reproduces the unmasked draw exactly.
    std::vector<double> w(p.size(), 0.0);
    for (TokenId t : allowed) {
        if (t >= p.size()) throw Error(Errc::IndexOutOfRange, "allowed token " + std::to_string(t));
        w[t] = p[t];
    }
    const TokenId tok = sample(w, spec, draw);
    return {tok, *aut.step(state, tok)};
}

VerifyResult speculative_verify(std::span<const TokenId> draft, std::span<const Dist> dists,
                                const SamplerSpec& spec) {
    if (spec.kind != SamplerSpec::Kind::Greedy) throw Error(Errc::ConfigError, "verification is greedy only");
    if (draft.size() != dists.size())
        throw Error(Errc::ArityMismatch,
                    std::to_string(draft.size()) + " draft tokens vs " + std::to_string(dists.size()) + " dists");
    VerifyResult r;
    while (r.accepted < draft.size()) {
        const TokenId best = argmax(dists[r.accepted].probs());
        if (best != draft[r.accepted]) {
            r.correction = best;
            break;
        }
        ++r.accepted;
    }
    return r;
}

}  // namespace lipos
