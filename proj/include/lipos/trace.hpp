// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "lipos/common.hpp"

namespace lipos {

enum class EventKind : std::uint8_t {
    RunStart,
    ProcessSpawn,
    ProcessAdmit,
    ProcessExit,
    ThreadCreate,
    ThreadState,
    PredEnqueue,
    BatchDispatch,
    BatchMember,
    BatchComplete,
    PredComplete,
    IoStart,
    IoComplete,
    KvOffload,
    KvRestore,
    IpcSend,
    IpcRecv,
    RequestBegin,
    RequestEnd,
    LipError,
    Stuck,
};

std::string_view to_string(EventKind kind);

/// One trace record. The meaning of the generic slots depends on `kind`;
/// the JSON-lines form spells them out under `detail`:
///
///   ThreadState    a=from b=to c=wait reason
///   PredEnqueue    ref=request a=tokens b=pool size c=target batch x=rate
///   BatchDispatch  ref=batch a=size x=cost note=reason
///   BatchMember    ref=batch a=request b=n_new c=n_ctx x=enqueued at
///   PredComplete   ref=request note=error
///   IoStart        a=offloaded pages b/c=free device pages before/after x=deadline note=tool
///   IoComplete     a=restored pages x=wake time note=error
///   KvOffload      ref=file a=pages
///   KvRestore      ref=file a=pages note=error
///   IpcSend/Recv   ref=peer pid a=bytes
///   RequestBegin   ref=request a=doc x=arrival
///   RequestEnd     ref=request a=tokens b=cache hit(1)/miss(0)/n.a.(-1) c=failed x=arrival
struct TraceEvent {
    VTime time = 0;
    EventKind kind = EventKind::RunStart;
    Pid pid = 0;
    Tid tid = 0;
    std::uint64_t ref = 0;
    std::int64_t a = 0;
    std::int64_t b = 0;
    std::int64_t c = 0;
    double x = 0;
    std::string note;

    friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

class Trace {
public:
    void push(TraceEvent e) { events_.push_back(std::move(e)); }
    const std::vector<TraceEvent>& events() const noexcept { return events_; }
    std::size_t size() const noexcept { return events_.size(); }
    void clear() { events_.clear(); }

    /// One JSON object per line: {virtual_time, event_type, pid, tid, detail}.
    void write_jsonl(std::ostream& out) const;
    /// Parses the JSON-lines form. Throws Error(MalformedTrace).
    static Trace read_jsonl(std::istream& in);

private:
    std::vector<TraceEvent> events_;
};

std::string to_json_line(const TraceEvent& e);

struct Metrics {
    double throughput = 0;               // generated tokens per virtual second
    double mean_latency_per_token = 0;   // seconds
    double p95_latency_per_token = 0;    // seconds
    double utilization = 0;              // busy / span
    double mean_batch_size = 0;
    double hit_rate = 0;
    std::size_t completed_requests = 0;
    std::size_t failed_requests = 0;
    std::size_t generated_tokens = 0;
    std::size_t batches = 0;
    double span = 0;

    friend bool operator==(const Metrics&, const Metrics&) = default;
};

/// Derives run metrics from a complete trace. Per-token latency of a request
/// is (completion - arrival) / generated tokens. Throws Error(MalformedTrace).
Metrics metrics_collect(const Trace& trace);

}  // namespace lipos
