// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lipos/common.hpp"
#include "lipos/model.hpp"

namespace lipos {

struct SamplerSpec {
    enum class Kind { Greedy, Temperature, TopK };

    Kind kind = Kind::Greedy;
    double temperature = 1.0;
    std::size_t k = 1;
    std::uint64_t rng_seed = 0;

    static SamplerSpec greedy() { return {}; }
    static SamplerSpec with_temperature(double t, std::uint64_t seed) { return {Kind::Temperature, t, 1, seed}; }
    static SamplerSpec top_k(std::size_t k, double t, std::uint64_t seed) { return {Kind::TopK, t, k, seed}; }

    /// Throws Error(ConfigError) on T <= 0 or k == 0.
    void validate() const;
};

/// Lowest index among the maxima of `weights`.
TokenId argmax(std::span<const double> weights);

/// Draws one token from nonnegative, not necessarily normalized, weights.
///
/// `draw` selects an independent uniform variate for the same seed, so a
/// caller generating a sequence passes 0, 1, 2, ... Throws DegenerateDist if
/// the weights sum to zero or are not finite.
TokenId sample(std::span<const double> weights, const SamplerSpec& spec, std::uint64_t draw = 0);
TokenId sample(const Dist& dist, const SamplerSpec& spec, std::uint64_t draw = 0);

/// Stateful wrapper that advances the draw index on every call.
class Sampler {
public:
    explicit Sampler(SamplerSpec spec) : spec_(spec) { spec_.validate(); }
    TokenId operator()(const Dist& dist) { return sample(dist, spec_, draws_++); }
    TokenId operator()(std::span<const double> weights) { return sample(weights, spec_, draws_++); }
    const SamplerSpec& spec() const noexcept { return spec_; }
    std::uint64_t draws() const noexcept { return draws_; }

private:
    SamplerSpec spec_;
    std::uint64_t draws_ = 0;
};

/// Deterministic finite automaton over token ids, stored as an explicit
/// transition table.
class TokenAutomaton {
public:
    using State = std::uint32_t;

    TokenAutomaton(std::size_t num_states, State start, std::set<State> accept);

    void add_transition(State from, TokenId token, State to);

    std::size_t num_states() const noexcept { return allowed_.size(); }
    State start() const noexcept { return start_; }
    bool accepting(State s) const { return accept_.count(s) > 0; }
    std::optional<State> step(State s, TokenId token) const;
    /// Sorted tokens with a transition out of `s`.
    const std::vector<TokenId>& allowed(State s) const;
    const std::string& state_name(State s) const { return names_.at(s); }

    /// Parses {states, start, accept, transitions: [{from, token, to}]}.
    /// States are given as a list of names (or a count); references may
    /// use either the name or the index.
    static TokenAutomaton from_json(std::istream& in);
    static TokenAutomaton from_json_text(const std::string& text);

    /// Accepts (a b)* ending in `eos` from the start state: a, b, a, b, ..., eos.
    static TokenAutomaton alternating(TokenId a, TokenId b, TokenId eos);

private:
    State start_;
    std::set<State> accept_;
    std::vector<std::vector<TokenId>> allowed_;
    std::map<std::pair<State, TokenId>, State> table_;
    std::vector<std::string> names_;
};

/// `probs` restricted to `allowed` and renormalized to sum to 1.
std::vector<double> masked_dist(std::span<const double> probs, std::span<const TokenId> allowed);

struct ConstrainedStep {
    TokenId token = 0;
    TokenAutomaton::State next = 0;
};

/// Samples from `dist` masked to the tokens allowed in `state`, then steps
/// the automaton. Throws DeadState when nothing is allowed, DegenerateDist
/// when the allowed tokens carry no probability mass, and IndexOutOfRange
/// when an allowed token lies outside the vocabulary.
ConstrainedStep constrained_next(const Dist& dist, TokenAutomaton::State state, const TokenAutomaton& aut,
                                 const SamplerSpec& spec, std::uint64_t draw = 0);

struct VerifyResult {
    std::size_t accepted = 0;
    std::optional<TokenId> correction;

    friend bool operator==(const VerifyResult&, const VerifyResult&) = default;
};

/// Greedy verification of a draft: `dists[i]` is the model's distribution
/// conditioned on everything before draft[i]. Returns the longest prefix on
/// which the draft agrees with the argmax, plus the argmax at the first
/// disagreement. Throws ArityMismatch if the lengths differ and ConfigError
/// for a non-greedy spec.
VerifyResult speculative_verify(std::span<const TokenId> draft, std::span<const Dist> dists,
                                const SamplerSpec& spec = SamplerSpec::greedy());

}  // namespace lipos
