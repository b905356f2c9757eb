// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "lipos/decoding.hpp"
#include "lipos/kernel.hpp"

namespace lipos {

struct ExampleResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Runs every bundled example LIP with its built-in checks.
std::vector<ExampleResult> run_examples();

/// Kernel settings shared by the examples: 256-token vocabulary, default
/// scheduler and cost model.
KernelConfig example_kernel_config();

// Parallel generation over a shared prefix: an admin publishes a
// world-readable system prompt file, a LIP opens it, forks it once per
// query and generates in one thread per fork until EOS.
struct ParallelGenOutcome {
    std::size_t prefix_len_before = 0;
    std::size_t prefix_len_after = 0;
    std::vector<std::vector<TokenId>> outputs;
    bool all_eos = false;
    std::size_t device_pages_after = 0;  // pages in use once the LIP exits
    std::size_t stuck_threads = 0;
};
ParallelGenOutcome run_parallel_generation(std::size_t n, std::uint64_t seed = 7);

// Constrained decoding against the bundled grammar. Sentences are
// generated until `total_tokens` tokens have been emitted.
struct ConstrainedOutcome {
    std::size_t tokens = 0;
    std::size_t violations = 0;     // emitted tokens outside allowed(state)
    std::size_t eos_count = 0;
    std::size_t eos_accepting = 0;  // EOS steps that land in an accepting state
    std::vector<std::vector<TokenId>> sentences;  // completed sentences, EOS included
};
/// JSON text of the bundled grammar: word (sep word | sep number)* EOS.
const std::string& bundled_grammar_json();
ConstrainedOutcome run_constrained(std::size_t total_tokens, std::uint64_t seed);

// Speculative decoding with greedy verification.
struct DraftPolicy {
    std::size_t max_draft = 4;
    double accuracy = 0.7;  // chance a draft token equals the model's greedy choice
    std::uint64_t seed = 0;

    static DraftPolicy random(std::uint64_t seed);
};
struct SpeculativeOutcome {
    std::vector<TokenId> tokens;
    std::size_t pred_calls = 0;
    std::size_t drafted = 0;
    std::size_t accepted = 0;
    std::size_t rollbacks = 0;
};
/// Plain greedy generation of `gen_len` tokens after `prompt`.
std::vector<TokenId> run_greedy(std::span<const TokenId> prompt, std::size_t gen_len);
SpeculativeOutcome run_speculative(std::span<const TokenId> prompt, std::size_t gen_len, const DraftPolicy& draft);

// Function calling: a LIP with a 3,000-token private file calls a tool.
struct FunctionCallOutcome {
    std::string tool_result;
    VTime issued_at = 0;
    VTime resumed_at = 0;
    std::int64_t offloaded_pages = 0;
    std::int64_t headroom_gain = 0;
    bool kv_identical = false;
};
FunctionCallOutcome run_function_calling();

// Two agents: B continues from A's generated text. With IPC, B waits on
// ipc_recv inside the serving system; the client-mediated variant returns
// A's output to a client, which submits B only after a round trip.
struct AgentsOutcome {
    std::vector<TokenId> a_output;
    std::vector<TokenId> b_output;
    VTime finished_at = 0;
};
AgentsOutcome run_two_agents(bool client_mediated, VTime client_hop = 0.05);

}  // namespace lipos
