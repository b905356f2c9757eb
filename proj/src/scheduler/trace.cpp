// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#include "lipos/trace.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>

#include <json.hpp>

namespace lipos {

namespace {

using json = nlohmann::ordered_json;

constexpr std::array kKindNames = {
    "run_start",   "process_spawn", "process_admit", "process_exit",   "thread_create",
    "thread_state", "pred_enqueue", "batch_dispatch", "batch_member",  "batch_complete",
    "pred_complete", "io_start",    "io_complete",   "kv_offload",     "kv_restore",
    "ipc_send",    "ipc_recv",      "request_begin", "request_end",    "lip_error",
    "stuck",
};
static_assert(kKindNames.size() == static_cast<std::size_t>(EventKind::Stuck) + 1);

EventKind kind_from(const std::string& s) {
    for (std::size_t i = 0; i < kKindNames.size(); ++i) {
        if (s == kKindNames[i]) return static_cast<EventKind>(i);
    }
    throw Error(Errc::MalformedTrace, "unknown event type '" + s + "'");
}

constexpr std::array kStateNames = {"Ready", "Running", "BlockedOnPred", "WaitingIO", "Finished"};
constexpr std::array kReasonNames = {"none", "io", "join", "recv"};

template <std::size_t N>
std::int64_t index_of(const std::array<const char*, N>& names, const std::string& s) {
    for (std::size_t i = 0; i < N; ++i) {
        if (s == names[i]) return static_cast<std::int64_t>(i);
    }
    throw Error(Errc::MalformedTrace, "unknown name '" + s + "'");
}

json detail_of(const TraceEvent& e) {
    json d = json::object();
    switch (e.kind) {
        case EventKind::RunStart: d["label"] = e.note; break;
        case EventKind::ProcessSpawn: d["owner"] = e.a; break;
        case EventKind::ProcessAdmit: break;
        case EventKind::ProcessExit: d["status"] = e.a; break;
        case EventKind::ThreadCreate: d["parent"] = e.ref; break;
        case EventKind::ThreadState:
            d["from"] = kStateNames.at(static_cast<std::size_t>(e.a));
            d["to"] = kStateNames.at(static_cast<std::size_t>(e.b));
            d["reason"] = kReasonNames.at(static_cast<std::size_t>(e.c));
            break;
        case EventKind::PredEnqueue:
            d["request"] = e.ref;
            d["tokens"] = e.a;
            d["pool_size"] = e.b;
            d["target_batch"] = e.c;
            d["rate"] = e.x;
            break;
        case EventKind::BatchDispatch:
            d["batch"] = e.ref;
            d["size"] = e.a;
            d["cost"] = e.x;
            d["reason"] = e.note;
            break;
        case EventKind::BatchMember:
            d["batch"] = e.ref;
            d["request"] = e.a;
            d["n_new"] = e.b;
            d["n_ctx"] = e.c;
            d["enqueued_at"] = e.x;
            break;
        case EventKind::BatchComplete: d["batch"] = e.ref; break;
        case EventKind::PredComplete:
            d["request"] = e.ref;
            d["error"] = e.note;
            break;
        case EventKind::IoStart:
            d["tool"] = e.note;
            d["deadline"] = e.x;
            d["offloaded_pages"] = e.a;
            d["free_before"] = e.b;
            d["free_after"] = e.c;
            break;
        case EventKind::IoComplete:
            d["restored_pages"] = e.a;
            d["wake_at"] = e.x;
            d["error"] = e.note;
            break;
        case EventKind::KvOffload:
            d["file"] = e.ref;
            d["pages"] = e.a;
            break;
        case EventKind::KvRestore:
            d["file"] = e.ref;
            d["pages"] = e.a;
            d["error"] = e.note;
            break;
        case EventKind::IpcSend:
            d["dst"] = e.ref;
            d["bytes"] = e.a;
            break;
        case EventKind::IpcRecv:
            d["src"] = e.ref;
            d["bytes"] = e.a;
            break;
        case EventKind::RequestBegin:
            d["request"] = e.ref;
            d["doc"] = e.a;
            d["arrival"] = e.x;
            break;
        case EventKind::RequestEnd:
            d["request"] = e.ref;
            d["tokens"] = e.a;
            d["cache"] = e.b;
            d["failed"] = e.c;
            d["arrival"] = e.x;
            break;
        case EventKind::LipError: d["message"] = e.note; break;
        case EventKind::Stuck: d["state"] = e.note; break;
    }
    return d;
}

void apply_detail(TraceEvent& e, const nlohmann::json& d) {
    auto i64 = [&](const char* k) { return d.at(k).get<std::int64_t>(); };
    auto u64 = [&](const char* k) { return d.at(k).get<std::uint64_t>(); };
    auto f64 = [&](const char* k) { return d.at(k).get<double>(); };
    auto str = [&](const char* k) { return d.at(k).get<std::string>(); };
    switch (e.kind) {
        case EventKind::RunStart: e.note = str("label"); break;
        case EventKind::ProcessSpawn: e.a = i64("owner"); break;
        case EventKind::ProcessAdmit: break;
        case EventKind::ProcessExit: e.a = i64("status"); break;
        case EventKind::ThreadCreate: e.ref = u64("parent"); break;
        case EventKind::ThreadState:
            e.a = index_of(kStateNames, str("from"));
            e.b = index_of(kStateNames, str("to"));
            e.c = index_of(kReasonNames, str("reason"));
            break;
        case EventKind::PredEnqueue:
            e.ref = u64("request");
            e.a = i64("tokens");
            e.b = i64("pool_size");
            e.c = i64("target_batch");
            e.x = f64("rate");
            break;
        case EventKind::BatchDispatch:
            e.ref = u64("batch");
            e.a = i64("size");
            e.x = f64("cost");
            e.note = str("reason");
            break;
        case EventKind::BatchMember:
            e.ref = u64("batch");
            e.a = i64("request");
            e.b = i64("n_new");
            e.c = i64("n_ctx");
            e.x = f64("enqueued_at");
            break;
        case EventKind::BatchComplete: e.ref = u64("batch"); break;
        case EventKind::PredComplete:
            e.ref = u64("request");
            e.note = str("error");
            break;
        case EventKind::IoStart:
            e.note = str("tool");
            e.x = f64("deadline");
            e.a = i64("offloaded_pages");
            e.b = i64("free_before");
            e.c = i64("free_after");
            break;
        case EventKind::IoComplete:
            e.a = i64("restored_pages");
            e.x = f64("wake_at");
            e.note = str("error");
            break;
        case EventKind::KvOffload:
            e.ref = u64("file");
            e.a = i64("pages");
            break;
        case EventKind::KvRestore:
            e.ref = u64("file");
            e.a = i64("pages");
            e.note = str("error");
            break;
        case EventKind::IpcSend:
            e.ref = u64("dst");
            e.a = i64("bytes");
            break;
        case EventKind::IpcRecv:
            e.ref = u64("src");
            e.a = i64("bytes");
            break;
        case EventKind::RequestBegin:
            e.ref = u64("request");
            e.a = i64("doc");
            e.x = f64("arrival");
            break;
        case EventKind::RequestEnd:
            e.ref = u64("request");
            e.a = i64("tokens");
            e.b = i64("cache");
            e.c = i64("failed");
            e.x = f64("arrival");
            break;
        case EventKind::LipError: e.note = str("message"); break;
        case EventKind::Stuck: e.note = str("state"); break;
    }
}

}  // namespace

std::string_view to_string(EventKind kind) { return kKindNames.at(static_cast<std::size_t>(kind)); }

std::string to_json_line(const TraceEvent& e) {
    json j;
    j["virtual_time"] = e.time;
    j["event_type"] = kKindNames.at(static_cast<std::size_t>(e.kind));
    j["pid"] = e.pid;
    j["tid"] = e.tid;
    j["detail"] = detail_of(e);
    return j.dump();
}

void Trace::write_jsonl(std::ostream& out) const {
    for (const auto& e : events_) out << to_json_line(e) << '\n';
}

Trace Trace::read_jsonl(std::istream& in) {
    Trace t;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            TraceEvent e;
            e.time = j.at("virtual_time").get<double>();
            e.kind = kind_from(j.at("event_type").get<std::string>());
            e.pid = j.at("pid").get<Pid>();
            e.tid = j.at("tid").get<Tid>();
            apply_detail(e, j.at("detail"));
            t.push(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw Error(Errc::MalformedTrace, "line " + std::to_string(lineno) + ": " + ex.what());
        }
    }
    return t;
}

Metrics metrics_collect(const Trace& trace) {
    Metrics m;
    const auto& ev = trace.events();
    if (ev.empty()) return m;

    struct Req {
        double arrival = 0;
        bool ended = false;
    };
    std::map<std::uint64_t, Req> reqs;
    std::vector<double> per_token;
    double busy = 0;
    std::size_t batch_items = 0;
    std::size_t hits = 0, lookups = 0;
    double first_arrival = INFINITY, last_end = -INFINITY;
    double prev = ev.front().time;

    for (const auto& e : ev) {
        if (!std::isfinite(e.time) || e.time < prev)
            throw Error(Errc::MalformedTrace, "virtual time goes backwards at " + std::to_string(e.time));
        prev = e.time;
        switch (e.kind) {
            case EventKind::BatchDispatch:
                if (e.a <= 0 || e.x < 0) throw Error(Errc::MalformedTrace, "batch with no requests or negative cost");
                m.batches += 1;
                batch_items += static_cast<std::size_t>(e.a);
                busy += e.x;
                break;
            case EventKind::RequestBegin:
                if (!reqs.emplace(e.ref, Req{e.x, false}).second)
                    throw Error(Errc::MalformedTrace, "request " + std::to_string(e.ref) + " begins twice");
                first_arrival = std::min(first_arrival, e.x);
                break;
            case EventKind::RequestEnd: {
                auto it = reqs.find(e.ref);
                if (it == reqs.end() || it->second.ended)
                    throw Error(Errc::MalformedTrace, "request " + std::to_string(e.ref) + " ends without a begin");
                it->second.ended = true;
                last_end = std::max(last_end, e.time);
                if (e.c != 0) {
                    m.failed_requests += 1;
                    break;
                }
                m.completed_requests += 1;
                m.generated_tokens += static_cast<std::size_t>(e.a);
                if (e.a > 0) per_token.push_back((e.time - it->second.arrival) / static_cast<double>(e.a));
                if (e.b >= 0) {
                    lookups += 1;
                    hits += e.b > 0 ? 1 : 0;
                }
                break;
            }
            default: break;
        }
    }

    m.span = reqs.empty() || last_end < first_arrival ? ev.back().time - ev.front().time : last_end - first_arrival;
    if (m.span > 0) {
        m.throughput = static_cast<double>(m.generated_tokens) / m.span;
        m.utilization = std::min(1.0, busy / m.span);
    }
    if (m.batches > 0) m.mean_batch_size = static_cast<double>(batch_items) / static_cast<double>(m.batches);
    if (lookups > 0) m.hit_rate = static_cast<double>(hits) / static_cast<double>(lookups);
    if (!per_token.empty()) {
        double sum = 0;
        for (double v : per_token) sum += v;
        m.mean_latency_per_token = sum / static_cast<double>(per_token.size());
        std::sort(per_token.begin(), per_token.end());
        const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(per_token.size())));
        m.p95_latency_per_token = per_token[std::max<std::size_t>(rank, 1) - 1];
    }
    return m;
}

}  // namespace lipos
