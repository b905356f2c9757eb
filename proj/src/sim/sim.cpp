// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#include "lipos/sim.hpp"

#include <cstdio>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "lipos/decoding.hpp"

namespace lipos {

std::string doc_file_name(std::uint32_t doc) { return "doc/" + std::to_string(doc) + ".kv"; }

RagShared::RagShared(const WorkloadSpec& s, CachePolicy p, std::uint32_t vocab_size)
    : spec(s), policy(p), counts(s.num_docs, 0) {
    docs.reserve(s.num_docs);
    for (std::uint32_t d = 0; d < s.num_docs; ++d) docs.push_back(doc_tokens(d, s.doc_len, vocab_size, s.seed));
}

std::size_t RagShared::note_request(std::uint32_t doc) {
    counts.at(doc) += 1;
    streak = last_doc == doc ? streak + 1 : 1;
    last_doc = doc;
    return streak;
}

std::optional<std::uint32_t> RagShared::least_popular_retained() const {
    std::optional<std::uint32_t> victim;
    for (std::uint32_t d : retained) {
        if (!victim || counts[d] <= counts[*victim]) victim = d;
    }
    return victim;
}

namespace {

std::vector<TokenPos> positioned(std::span<const TokenId> a, std::span<const TokenId> b, Position start) {
    std::vector<TokenPos> out;
    out.reserve(a.size() + b.size());
    for (TokenId t : a) out.push_back({t, start++});
    for (TokenId t : b) out.push_back({t, start++});
    return out;
}

// Greedy decoding of `n` tokens: the first comes from `last`, each later
// one from a single-token pred.
Task<std::size_t> generate(Sys& sys, KvHandle kv, Dist last, std::size_t n) {
    TokenId t = argmax(last.probs());
    std::size_t produced = 1;
    auto pos = static_cast<Position>(sys.kv_length(kv));
    while (produced < n) {
        auto d = co_await sys.pred(kv, {{t, pos++}});
        t = argmax(d.front().probs());
        ++produced;
    }
    co_return produced;
}

void evict(Sys& sys, RagShared& st, std::uint32_t doc) {
    st.retained.erase(doc);
    try {
        sys.kv_remove(sys.kv_open(doc_file_name(doc)));
    } catch (const Error&) {
        // Already gone.
    }
}

// Decides whether a freshly prefilled doc should be kept, evicting a
// retained doc if the policy says the newcomer ranks higher.
bool admit_to_cache(Sys& sys, RagShared& st, std::uint32_t doc, std::size_t streak) {
    if (st.retained.count(doc)) return false;
    std::size_t capacity = 0;
    switch (st.policy.kind) {
        case CachePolicy::Kind::None:
        case CachePolicy::Kind::Baseline: return false;
        case CachePolicy::Kind::TopK: capacity = st.policy.k; break;
        case CachePolicy::Kind::Consecutive:
            if (streak < st.policy.threshold) return false;
            capacity = st.policy.k;
            break;
    }
    if (st.retained.size() >= capacity) {
        const auto victim = st.least_popular_retained();
        if (!victim) return false;
        if (st.policy.kind == CachePolicy::Kind::TopK && st.counts[doc] <= st.counts[*victim]) return false;
        evict(sys, st, *victim);
    }
    st.retained.insert(doc);
    return true;
}

Task<> rag_request(Sys& sys, std::shared_ptr<RagShared> st, Request req) {
    RequestMark mark{req.id, req.arrival, static_cast<std::int64_t>(req.doc)};
    sys.mark_request_begin(mark);
    const std::size_t streak = st->note_request(req.doc);
    const std::string name = doc_file_name(req.doc);
    const auto& doc = st->docs[req.doc];

    for (int attempt = 0; attempt < 2; ++attempt) {
        KvHandle kv;
        bool exhausted = false;
        try {
            std::vector<Dist> d;
            std::optional<KvHandle> cached;
            try {
                cached = sys.kv_open(name);
            } catch (const Error& e) {
                if (e.code() != Errc::NotFound) throw;
            }
            if (cached) {
                mark.cache = 1;
                kv = sys.kv_fork(*cached);
                sys.kv_close(*cached);
                d = co_await sys.pred(kv, positioned({}, req.query, static_cast<Position>(doc.size())));
            } else {
                mark.cache = 0;
                kv = sys.kv_create();
                d = co_await sys.pred(kv, positioned(doc, req.query, 0));
                if (admit_to_cache(sys, *st, req.doc, streak)) {
                    std::vector<std::size_t> prefix(doc.size());
                    std::iota(prefix.begin(), prefix.end(), std::size_t{0});
                    try {
                        sys.kv_close(sys.kv_extract(kv, prefix, name));
                    } catch (const Error&) {
                        st->retained.erase(req.doc);
                    }
                }
            }
            mark.tokens = static_cast<std::int64_t>(co_await generate(sys, kv, d.back(), st->spec.gen_len));
            sys.kv_remove(kv);
            sys.mark_request_end(mark);
            co_return;
        } catch (const Error& e) {
            if (e.code() != Errc::PoolExhausted) throw;
            exhausted = true;
        }
        if (exhausted) {
            if (kv) {
                try {
                    sys.kv_remove(kv);
                } catch (const Error&) {
                }
            }
            if (auto victim = st->least_popular_retained()) evict(sys, *st, *victim);
        }
    }
    mark.failed = true;
    mark.tokens = 0;
    sys.mark_request_end(mark);
}

Task<> baseline_request(Sys& sys, std::shared_ptr<RagShared> st, Request req) {
    RequestMark mark{req.id, req.arrival, static_cast<std::int64_t>(req.doc)};
    mark.cache = 0;
    sys.mark_request_begin(mark);
    KvHandle kv = sys.kv_create();
    try {
        auto d = co_await sys.pred(kv, positioned(st->docs[req.doc], req.query, 0));
        mark.tokens = static_cast<std::int64_t>(co_await generate(sys, kv, d.back(), st->spec.gen_len));
    } catch (const Error& e) {
        if (e.code() != Errc::PoolExhausted) throw;
        mark.failed = true;
        mark.tokens = 0;
    }
    sys.kv_remove(kv);
    sys.mark_request_end(mark);
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

ThreadBody rag_lip(std::shared_ptr<RagShared> st, Request req) {
    return [st = std::move(st), req = std::move(req)](Sys& sys) { return rag_request(sys, st, req); };
}

ThreadBody baseline_lip(std::shared_ptr<RagShared> st, Request req) {
    return [st = std::move(st), req = std::move(req)](Sys& sys) { return baseline_request(sys, st, req); };
}

std::string run_id(const Config& config, const CellSpec& cell) {
    std::ostringstream os;
    os << config_to_json(config) << '|' << std::setprecision(17) << cell.alpha << '|' << cell.rate.label << '='
       << cell.rate.rate << '|' << cell.policy.to_string();
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(mix64(fnv1a(os.str()))));
    return std::string(buf, 12);
}

CellResult run_cell(const Config& config, const CellSpec& cell, bool keep_trace) {
    CellResult r;
    r.cell = cell;
    try {
        Config c = config;
        c.workload.pareto_alpha = cell.alpha;
        c.workload.request_rate = cell.rate.rate;
        c.kernel.record_trace = true;
        c.validate();
        r.run_id = run_id(c, cell);

        Kernel kernel(c.kernel);
        for (const auto& [name, tool] : c.tools) kernel.register_tool(name, builtin_tool(tool));
        kernel.annotate({.kind = EventKind::RunStart,
                         .note = r.run_id + " alpha=" + std::to_string(cell.alpha) + " rate=" + cell.rate.label +
                                 " policy=" + cell.policy.to_string()});

        const auto requests = gen_requests(c.workload, c.kernel.model.vocab_size);
        auto shared = std::make_shared<RagShared>(c.workload, cell.policy, c.kernel.model.vocab_size);
        for (const auto& req : requests) {
            kernel.spawn_lip_at(req.arrival, cell.policy.kind == CachePolicy::Kind::Baseline ? baseline_lip(shared, req)
                                                                                             : rag_lip(shared, req));
        }
        const auto summary = kernel.run();
        r.requests = requests.size();
        r.stuck_threads = summary.stuck_threads.size();
        r.metrics = metrics_collect(kernel.trace());
        if (keep_trace) r.trace = kernel.take_trace();
    } catch (const std::exception& e) {
        r.error = e.what();
    }
    return r;
}

std::vector<CellSpec> grid_cells(const Config& config) {
    std::vector<CellSpec> cells;
    for (double a : config.alphas) {
        for (const auto& rate : config.rates) {
            for (const auto& p : config.policies) cells.push_back({a, rate, p});
        }
    }
    return cells;
}

ExperimentResult run_experiment(const Config& config, bool keep_traces) {
    ExperimentResult out;
    out.config_json = config_to_json(config);
    const auto cells = grid_cells(config);
    out.cells.resize(cells.size());
    const auto n = static_cast<std::int64_t>(cells.size());
#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t i = 0; i < n; ++i) out.cells[i] = run_cell(config, cells[i], keep_traces);

    for (auto& c : out.cells) {
        for (const auto& b : out.cells) {
            if (b.cell.policy.kind != CachePolicy::Kind::Baseline || !b.error.empty()) continue;
            if (b.cell.alpha != c.cell.alpha || b.cell.rate.label != c.cell.rate.label) continue;
            if (b.metrics.throughput > 0) c.norm_throughput = c.metrics.throughput / b.metrics.throughput;
            if (b.metrics.mean_latency_per_token > 0)
                c.norm_latency = c.metrics.mean_latency_per_token / b.metrics.mean_latency_per_token;
        }
    }
    return out;
}

void write_csv(std::ostream& out, const ExperimentResult& result) {
    out << "load,pareto_alpha,policy,throughput,mean_latency_per_token,p95_latency,utilization,mean_batch_size,"
           "hit_rate,load_label,norm_throughput,norm_latency,completed,failed,run_id,error\n";
    std::ostringstream row;
    row << std::setprecision(10);
    for (const auto& c : result.cells) {
        const auto& m = c.metrics;
        std::string err = c.error;
        for (char& ch : err) {
            if (ch == ',' || ch == '\n' || ch == '"') ch = ' ';
        }
        row.str({});
        row << c.cell.rate.rate << ',' << c.cell.alpha << ',' << c.cell.policy.to_string() << ',' << m.throughput << ','
            << m.mean_latency_per_token << ',' << m.p95_latency_per_token << ',' << m.utilization << ','
            << m.mean_batch_size << ',' << m.hit_rate << ',' << c.cell.rate.label << ',' << c.norm_throughput << ','
            << c.norm_latency << ',' << m.completed_requests << ',' << m.failed_requests << ',' << c.run_id << ','
            << err << '\n';
        out << row.str();
    }
}

void write_json(std::ostream& out, const ExperimentResult& result) {
    nlohmann::ordered_json j;
    j["config"] = nlohmann::ordered_json::parse(result.config_json);
    auto& cells = j["cells"] = nlohmann::ordered_json::array();
    for (const auto& c : result.cells) {
        const auto& m = c.metrics;
        cells.push_back({{"run_id", c.run_id},
                         {"load", c.cell.rate.rate},
                         {"load_label", c.cell.rate.label},
                         {"pareto_alpha", c.cell.alpha},
                         {"policy", c.cell.policy.to_string()},
                         {"throughput", m.throughput},
                         {"mean_latency_per_token", m.mean_latency_per_token},
                         {"p95_latency", m.p95_latency_per_token},
                         {"utilization", m.utilization},
                         {"mean_batch_size", m.mean_batch_size},
                         {"hit_rate", m.hit_rate},
                         {"norm_throughput", c.norm_throughput},
                         {"norm_latency", c.norm_latency},
                         {"requests", c.requests},
                         {"completed", m.completed_requests},
                         {"failed", m.failed_requests},
                         {"generated_tokens", m.generated_tokens},
                         {"batches", m.batches},
                         {"span", m.span},
                         {"stuck_threads", c.stuck_threads},
                         {"error", c.error}});
    }
    out << j.dump(2) << '\n';
}

void write_traces(std::ostream& out, const ExperimentResult& result) {
    for (const auto& c : result.cells) c.trace.write_jsonl(out);
}

}  // namespace lipos
