// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#include "lipos/examples.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "lipos/config.hpp"
#include "lipos/fingerprint.hpp"

namespace lipos {

KernelConfig example_kernel_config() {
    KernelConfig c;
    c.finalize();
    return c;
}

namespace {

std::vector<TokenPos> at(std::span<const TokenId> tokens, Position start) {
    std::vector<TokenPos> out;
    out.reserve(tokens.size());
    for (TokenId t : tokens) out.push_back({t, start++});
    return out;
}

std::vector<TokenId> synthetic_tokens(std::size_t n, std::uint64_t seed, std::uint32_t vocab) {
    std::vector<TokenId> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<TokenId>(1 + mix64(seed + (i + 1) * kGoldenGamma) % (vocab - 1));
    return out;
}

Task<std::vector<TokenId>> greedy_tokens(Sys& sys, KvHandle kv, std::vector<TokenId> prompt, std::size_t n) {
    auto pos = static_cast<Position>(sys.kv_length(kv));
    auto d = co_await sys.pred(kv, at(prompt, pos));
    pos += static_cast<Position>(prompt.size());
    std::vector<TokenId> out;
    TokenId t = argmax(d.back().probs());
    out.push_back(t);
    while (out.size() < n) {
        d = co_await sys.pred(kv, {{t, pos++}});
        t = argmax(d.front().probs());
        out.push_back(t);
    }
    co_return out;
}

// ---------------------------------------------------------------------------
// Parallel generation over a shared prefix

constexpr Principal kAdmin = 1;
constexpr Principal kUser = 2;
constexpr std::size_t kMaxSteps = 4096;

Task<> publish_prefix(Sys& sys, std::vector<TokenId> prompt) {
    KvHandle kv = sys.kv_create("sys_msg.kv", Permissions{sys.principal(), true, false});
    co_await sys.pred(kv, at(prompt, 0));
    sys.kv_close(kv);
}

Task<> generate_until_eos(Sys& sys, KvHandle kv, std::vector<TokenId> suffix, std::uint64_t seed,
                          std::vector<TokenId>* out) {
    const auto pos = static_cast<Position>(sys.kv_length(kv));
    Sampler sample(SamplerSpec::with_temperature(1.0, seed));
    const TokenId eos = sys.model().eos_token;
    std::vector<TokenPos> input = at(suffix, pos);
    Position next = pos + static_cast<Position>(suffix.size());
    for (std::size_t step = 0; step < kMaxSteps; ++step) {
        auto d = co_await sys.pred(kv, input);
        const TokenId t = sample(d.back());
        out->push_back(t);
        if (t == eos) break;
        input = {{t, next++}};
    }
    sys.kv_remove(kv);
}

Task<> parallel_main(Sys& sys, std::size_t n, std::uint64_t seed, ParallelGenOutcome* out) {
    KvHandle prefix = sys.kv_open("sys_msg.kv");
    out->prefix_len_before = sys.kv_length(prefix);
    for (std::size_t i = 0; i < n; ++i) {
        KvHandle kv = sys.kv_fork(prefix);
        auto suffix = synthetic_tokens(8, seed * 31 + i, sys.model().vocab_size);
        auto* sink = &out->outputs[i];
        const std::uint64_t s = seed + i;
        sys.thread_create([kv, suffix, s, sink](Sys& t) { return generate_until_eos(t, kv, suffix, s, sink); });
    }
    co_await sys.join_all();
    out->prefix_len_after = sys.kv_length(prefix);
    sys.kv_close(prefix);
}

// ---------------------------------------------------------------------------
// Constrained decoding

Task<> constrained_worker(Sys& sys, const TokenAutomaton* aut, std::size_t quota, std::uint64_t seed,
                          ConstrainedOutcome* out) {
    const auto spec = SamplerSpec::with_temperature(1.0, seed);
    std::uint64_t draw = 0;
    const TokenId eos = sys.model().eos_token;
    std::size_t emitted = 0;
    while (emitted < quota) {
        KvHandle kv = sys.kv_create();
        auto d = co_await sys.pred(kv, {{1, 0}});
        Position pos = 1;
        auto state = aut->start();
        std::vector<TokenId> sentence;
        for (;;) {
            const auto step = constrained_next(d.back(), state, *aut, spec, draw++);
            sentence.push_back(step.token);
            const auto& allowed = aut->allowed(state);
            if (!std::binary_search(allowed.begin(), allowed.end(), step.token)) out->violations += 1;
            ++emitted;
            out->tokens += 1;
            state = step.next;
            if (step.token == eos) {
                out->eos_count += 1;
                if (aut->accepting(state)) out->eos_accepting += 1;
                out->sentences.push_back(std::move(sentence));
                break;
            }
            d = co_await sys.pred(kv, {{step.token, pos++}});
        }
        sys.kv_remove(kv);
    }
}

// ---------------------------------------------------------------------------
// Speculative decoding

Task<> greedy_lip(Sys& sys, std::vector<TokenId> prompt, std::size_t gen_len, std::vector<TokenId>* out) {
    KvHandle kv = sys.kv_create();
    *out = co_await greedy_tokens(sys, kv, std::move(prompt), gen_len);
    sys.kv_remove(kv);
}

Task<> speculative_lip(Sys& sys, std::vector<TokenId> prompt, std::size_t gen_len, DraftPolicy draft,
                       SpeculativeOutcome* out) {
    const ModelConfig& cfg = sys.model();
    std::mt19937_64 rng(draft.seed);
    KvHandle kv = sys.kv_create();
    auto d = co_await sys.pred(kv, at(prompt, 0));
    out->pred_calls += 1;
    auto pos = static_cast<Position>(prompt.size());
    Fingerprint fp = cfg.model_seed;
    for (std::size_t i = 0; i < prompt.size(); ++i) fp = chain_fingerprint(fp, prompt[i], static_cast<Position>(i));
    TokenId pending = argmax(d.back().probs());

    auto& tokens = out->tokens;
    for (;;) {
        tokens.push_back(pending);
        if (tokens.size() >= gen_len) break;

        // Draft model: the target model's greedy choice, corrupted with
        // probability 1 - accuracy.
        const std::size_t k = std::min<std::size_t>(1 + rng() % draft.max_draft, gen_len - tokens.size());
        std::vector<TokenId> guess;
        Fingerprint h = chain_fingerprint(fp, pending, pos);
        for (std::size_t j = 0; j < k; ++j) {
            TokenId g = argmax(next_dist_reference(h, cfg));
            if (unit_interval(rng()) >= draft.accuracy) g = static_cast<TokenId>(1 + rng() % (cfg.vocab_size - 1));
            guess.push_back(g);
            h = chain_fingerprint(h, g, pos + 1 + static_cast<Position>(j));
        }
        out->drafted += k;

        std::vector<TokenPos> feed{{pending, pos}};
        for (std::size_t j = 0; j < k; ++j) feed.push_back({guess[j], pos + 1 + static_cast<Position>(j)});
        auto ds = co_await sys.pred(kv, feed);
        out->pred_calls += 1;
        const auto v = speculative_verify(guess, std::span<const Dist>(ds).first(k));
        out->accepted += v.accepted;

        fp = chain_fingerprint(fp, pending, pos);
        for (std::size_t j = 0; j < v.accepted; ++j) {
            fp = chain_fingerprint(fp, guess[j], pos + 1 + static_cast<Position>(j));
            tokens.push_back(guess[j]);
        }
        pos += 1 + static_cast<Position>(v.accepted);

        if (v.correction) {
            // Drop the rejected draft entries by extracting the verified prefix.
            std::vector<std::size_t> keep(pos);
            std::iota(keep.begin(), keep.end(), std::size_t{0});
            KvHandle trimmed = sys.kv_extract(kv, keep);
            sys.kv_remove(kv);
            kv = trimmed;
            out->rollbacks += 1;
            pending = *v.correction;
        } else {
            pending = argmax(ds[k].probs());
        }
        if (tokens.size() >= gen_len) break;
    }
    tokens.resize(std::min(tokens.size(), gen_len));
    sys.kv_remove(kv);
}

// ---------------------------------------------------------------------------
// Two agents

std::string encode(std::span<const TokenId> tokens) {
    std::ostringstream os;
    for (std::size_t i = 0; i < tokens.size(); ++i) os << (i ? " " : "") << tokens[i];
    return os.str();
}

std::vector<TokenId> decode(const std::string& bytes) {
    std::istringstream is(bytes);
    std::vector<TokenId> out;
    for (TokenId t; is >> t;) out.push_back(t);
    return out;
}

constexpr std::size_t kAgentTokens = 16;

Task<> agent_a(Sys& sys, std::optional<Pid> peer, std::vector<TokenId>* out) {
    KvHandle kv = sys.kv_create();
    *out = co_await greedy_tokens(sys, kv, synthetic_tokens(24, 11, sys.model().vocab_size), kAgentTokens);
    sys.kv_remove(kv);
    if (peer) sys.ipc_send(*peer, encode(*out));
}

Task<> agent_b(Sys& sys, std::optional<std::vector<TokenId>> given, std::vector<TokenId>* out) {
    std::vector<TokenId> from_a;
    if (given) {
        from_a = *given;
    } else {
        auto msg = co_await sys.ipc_recv();
        from_a = decode(msg.bytes);
    }
    auto prompt = synthetic_tokens(8, 12, sys.model().vocab_size);
    prompt.insert(prompt.end(), from_a.begin(), from_a.end());
    KvHandle kv = sys.kv_create();
    *out = co_await greedy_tokens(sys, kv, std::move(prompt), kAgentTokens);
    sys.kv_remove(kv);
}

const char* const kGrammar = R"({
  "states": ["word", "sep", "number", "done"],
  "start": "word",
  "accept": ["done"],
  "transitions": [
    {"from": "word", "token": 10, "to": "sep"}, {"from": "word", "token": 11, "to": "sep"},
    {"from": "word", "token": 12, "to": "sep"}, {"from": "word", "token": 13, "to": "sep"},
    {"from": "word", "token": 14, "to": "sep"}, {"from": "word", "token": 15, "to": "sep"},
    {"from": "word", "token": 16, "to": "sep"}, {"from": "word", "token": 17, "to": "sep"},
    {"from": "sep", "token": 30, "to": "word"},
    {"from": "sep", "token": 31, "to": "number"},
    {"from": "sep", "token": 0, "to": "done"},
    {"from": "number", "token": 40, "to": "sep"}, {"from": "number", "token": 41, "to": "sep"},
    {"from": "number", "token": 42, "to": "sep"}, {"from": "number", "token": 43, "to": "sep"},
    {"from": "number", "token": 44, "to": "sep"}, {"from": "number", "token": 45, "to": "sep"}
  ]
})";

}  // namespace

ParallelGenOutcome run_parallel_generation(std::size_t n, std::uint64_t seed) {
    Kernel k(example_kernel_config());
    ParallelGenOutcome out;
    out.outputs.resize(n);
    auto prompt = synthetic_tokens(40, seed, k.model().config().vocab_size);
    k.spawn_lip([prompt](Sys& sys) { return publish_prefix(sys, prompt); }, kAdmin);
    k.run();
    k.spawn_lip([n, seed, &out](Sys& sys) { return parallel_main(sys, n, seed, &out); }, kUser);
    const auto summary = k.run();
    out.stuck_threads = summary.stuck_threads.size();
    out.all_eos = std::all_of(out.outputs.begin(), out.outputs.end(), [&](const auto& o) {
        return !o.empty() && o.back() == k.model().config().eos_token;
    });
    out.device_pages_after = k.kvfs().usage().device;
    return out;
}

const std::string& bundled_grammar_json() {
    static const std::string text = kGrammar;
    return text;
}

ConstrainedOutcome run_constrained(std::size_t total_tokens, std::uint64_t seed) {
    Kernel k(example_kernel_config());
    const auto aut = TokenAutomaton::from_json_text(bundled_grammar_json());
    ConstrainedOutcome out;
    constexpr std::size_t kWorkers = 4;
    k.spawn_lip([&](Sys& sys) -> Task<> {
        for (std::size_t w = 0; w < kWorkers; ++w) {
            const std::size_t quota = total_tokens / kWorkers + (w == 0 ? total_tokens % kWorkers : 0);
            const std::uint64_t s = seed * kWorkers + w;
            sys.thread_create([&aut, quota, s, &out](Sys& t) { return constrained_worker(t, &aut, quota, s, &out); });
        }
        co_await sys.join_all();
    });
    k.run();
    return out;
}

DraftPolicy DraftPolicy::random(std::uint64_t seed) {
    std::mt19937_64 rng(mix64(seed));
    DraftPolicy p;
    p.max_draft = 1 + rng() % 8;
    p.accuracy = unit_interval(rng());
    p.seed = rng();
    return p;
}

std::vector<TokenId> run_greedy(std::span<const TokenId> prompt, std::size_t gen_len) {
    Kernel k(example_kernel_config());
    std::vector<TokenId> out;
    std::vector<TokenId> p(prompt.begin(), prompt.end());
    k.spawn_lip([&](Sys& sys) { return greedy_lip(sys, p, gen_len, &out); });
    k.run();
    return out;
}

SpeculativeOutcome run_speculative(std::span<const TokenId> prompt, std::size_t gen_len, const DraftPolicy& draft) {
    Kernel k(example_kernel_config());
    SpeculativeOutcome out;
    std::vector<TokenId> p(prompt.begin(), prompt.end());
    k.spawn_lip([&](Sys& sys) { return speculative_lip(sys, p, gen_len, draft, &out); });
    k.run();
    return out;
}

FunctionCallOutcome run_function_calling() {
    Kernel k(example_kernel_config());
    k.register_tool("weather", builtin_tool({"weather", 0.05}));
    FunctionCallOutcome out;
    k.spawn_lip([&](Sys& sys) -> Task<> {
        KvHandle kv = sys.kv_create();
        co_await sys.pred(kv, at(synthetic_tokens(3000, 5, sys.model().vocab_size), 0));
        const auto before = sys.kv_read(kv);
        out.issued_at = sys.now();
        out.tool_result = co_await sys.io("weather", "Seoul");
        out.resumed_at = sys.now();
        out.kv_identical = sys.kv_read(kv) == before;
        sys.kv_remove(kv);
    });
    k.run();
    for (const auto& e : k.trace().events()) {
        if (e.kind != EventKind::IoStart) continue;
        out.offloaded_pages = e.a;
        out.headroom_gain = e.c - e.b;
    }
    return out;
}

AgentsOutcome run_two_agents(bool client_mediated, VTime client_hop) {
    Kernel k(example_kernel_config());
    AgentsOutcome out;
    if (client_mediated) {
        k.spawn_lip([&](Sys& sys) { return agent_a(sys, std::nullopt, &out.a_output); });
        k.run();
        // Response to the client, then the client's follow-up request.
        auto given = out.a_output;
        k.spawn_lip_at(k.now() + 2 * client_hop,
                       [&, given](Sys& sys) { return agent_b(sys, given, &out.b_output); });
        k.run();
    } else {
        const Pid b = k.spawn_lip([&](Sys& sys) { return agent_b(sys, std::nullopt, &out.b_output); });
        k.spawn_lip([&, b](Sys& sys) { return agent_a(sys, b, &out.a_output); });
        k.run();
    }
    out.finished_at = k.now();
    return out;
}

std::vector<ExampleResult> run_examples() {
    std::vector<ExampleResult> results;
    auto record = [&](std::string name, auto&& body) {
        ExampleResult r{std::move(name), false, {}};
        try {
            r.detail = body(r.passed);
        } catch (const std::exception& e) {
            r.passed = false;
            r.detail = std::string("exception: ") + e.what();
        }
        results.push_back(std::move(r));
    };

    record("parallel_generation", [](bool& ok) {
        const auto o = run_parallel_generation(4);
        std::size_t prefix_pages = (o.prefix_len_before + 15) / 16;
        ok = o.prefix_len_before == o.prefix_len_after && o.outputs.size() == 4 && o.all_eos &&
             o.stuck_threads == 0 && o.device_pages_after == prefix_pages;
        std::ostringstream os;
        os << "prefix " << o.prefix_len_before << " -> " << o.prefix_len_after << ", output lengths";
        for (const auto& out : o.outputs) os << ' ' << out.size();
        os << (o.all_eos ? ", all end in EOS" : ", missing EOS");
        return os.str();
    });

    record("constrained_decoding", [](bool& ok) {
        const auto o = run_constrained(2000, 3);
        ok = o.tokens >= 2000 && o.violations == 0 && o.eos_count > 0 && o.eos_accepting == o.eos_count;
        std::ostringstream os;
        os << o.tokens << " tokens, " << o.violations << " outside allowed sets, " << o.eos_accepting << '/'
           << o.eos_count << " EOS in accepting state";
        return os.str();
    });

    record("speculative_decoding", [](bool& ok) {
        std::size_t equal = 0, rollbacks = 0;
        for (std::uint64_t seed = 1; seed <= 10; ++seed) {
            const auto prompt = synthetic_tokens(16, seed, 256);
            const auto spec = run_speculative(prompt, 64, DraftPolicy::random(seed));
            equal += spec.tokens == run_greedy(prompt, 64) ? 1 : 0;
            rollbacks += spec.rollbacks;
        }
        ok = equal == 10;
        return std::to_string(equal) + "/10 seeds match greedy, " + std::to_string(rollbacks) + " rollbacks";
    });

    record("function_calling", [](bool& ok) {
        const auto o = run_function_calling();
        const auto cfg = example_kernel_config();
        const VTime expected = 0.05 + static_cast<double>(o.offloaded_pages) * cfg.cost.transfer_cost;
        ok = o.tool_result.rfind("Seoul: ", 0) == 0 && o.kv_identical && o.offloaded_pages == 188 &&
             o.headroom_gain == 188 && std::abs((o.resumed_at - o.issued_at) - expected) < 1e-12;
        std::ostringstream os;
        os << "'" << o.tool_result << "' after " << (o.resumed_at - o.issued_at) << " s, " << o.offloaded_pages
           << " pages offloaded, cache " << (o.kv_identical ? "intact" : "CHANGED");
        return os.str();
    });

    record("two_agent_ipc", [](bool& ok) {
        const auto ipc = run_two_agents(false);
        const auto client = run_two_agents(true);
        // The client round trip also changes the gap the rate estimator sees,
        // which can shift batching waits, so only the ordering is exact.
        ok = ipc.b_output == client.b_output && ipc.a_output == client.a_output &&
             ipc.finished_at < client.finished_at;
        std::ostringstream os;
        os << "IPC finishes at " << ipc.finished_at << " s, client-mediated at " << client.finished_at << " s";
        return os.str();
    });

    return results;
}

}  // namespace lipos
