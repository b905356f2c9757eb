// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#include "lipos/audit.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <optional>
#include <sstream>
#include <unordered_map>

namespace lipos {

namespace {

template <typename... Args>
std::string cat(const Args&... args) {
    std::ostringstream os;
    os.precision(17);
    (os << ... << args);
    return os.str();
}

void flag(AuditReport& r, const char* auditor, std::string msg) { r.violations.push_back({auditor, std::move(msg)}); }

ThreadState state_of(std::int64_t v) { return static_cast<ThreadState>(v); }

}  // namespace

void audit_transitions(const Trace& trace, AuditReport& report) {
    constexpr const char* kName = "transitions";
    report.checked.emplace_back(kName);
    std::unordered_map<Tid, ThreadState> state;
    for (const auto& e : trace.events()) {
        if (e.kind == EventKind::ThreadCreate) {
            if (!state.emplace(e.tid, ThreadState::Ready).second) flag(report, kName, cat("thread ", e.tid, " created twice"));
            continue;
        }
        if (e.kind != EventKind::ThreadState) continue;
        auto it = state.find(e.tid);
        if (it == state.end()) {
            flag(report, kName, cat("thread ", e.tid, " changes state before creation at t=", e.time));
            continue;
        }
        const auto from = state_of(e.a);
        const auto to = state_of(e.b);
        if (from != it->second) {
            flag(report, kName,
                 cat("thread ", e.tid, " leaves ", to_string(from), " but was ", to_string(it->second), " at t=", e.time));
        }
        if (!is_legal_transition(from, to)) {
            flag(report, kName, cat("thread ", e.tid, " illegal ", to_string(from), " -> ", to_string(to), " at t=", e.time));
        }
        it->second = to;
    }
}

void audit_wakeups(const Trace& trace, AuditReport& report) {
    constexpr const char* kName = "wakeups";
    report.checked.emplace_back(kName);
    struct Wait {
        std::optional<VTime> deadline;  // set by IoStart
        std::optional<VTime> wake;      // set by IoComplete
        WaitReason reason = WaitReason::None;
    };
    std::unordered_map<Tid, Wait> waits;
    for (const auto& e : trace.events()) {
        switch (e.kind) {
            case EventKind::IoStart: {
                auto& w = waits[e.tid];
                if (w.deadline || w.wake) flag(report, kName, cat("thread ", e.tid, " starts I/O twice at t=", e.time));
                w.deadline = e.x;
                break;
            }
            case EventKind::IoComplete: {
                auto& w = waits[e.tid];
                if (!w.deadline) {
                    flag(report, kName, cat("thread ", e.tid, " completes I/O it never started at t=", e.time));
                } else if (e.time != *w.deadline) {
                    flag(report, kName, cat("thread ", e.tid, " I/O completes at t=", e.time, ", deadline ", *w.deadline));
                }
                w.deadline.reset();
                w.wake = e.x;
                break;
            }
            case EventKind::ThreadState: {
                auto& w = waits[e.tid];
                if (state_of(e.b) == ThreadState::WaitingIO) w.reason = static_cast<WaitReason>(e.c);
                if (state_of(e.a) != ThreadState::WaitingIO || w.reason != WaitReason::Io) break;
                if (!w.wake) {
                    flag(report, kName, cat("thread ", e.tid, " leaves I/O wait without completion at t=", e.time));
                } else if (e.time != *w.wake) {
                    flag(report, kName, cat("thread ", e.tid, " wakes at t=", e.time, ", expected ", *w.wake));
                }
                w = Wait{};
                break;
            }
            default: break;
        }
    }
    for (const auto& [tid, w] : waits) {
        if (w.deadline || w.wake) flag(report, kName, cat("thread ", tid, " never woke from I/O"));
    }
}

namespace {

struct BatchSpan {
    std::uint64_t id = 0;
    VTime dispatch = 0;
    VTime complete = INFINITY;
    double cost = 0;
};

std::vector<BatchSpan> batch_spans(const Trace& trace) {
    std::vector<BatchSpan> out;
    std::unordered_map<std::uint64_t, std::size_t> index;
    for (const auto& e : trace.events()) {
        if (e.kind == EventKind::BatchDispatch) {
            index[e.ref] = out.size();
            out.push_back({e.ref, e.time, INFINITY, e.x});
        } else if (e.kind == EventKind::BatchComplete) {
            if (auto it = index.find(e.ref); it != index.end()) out[it->second].complete = e.time;
        }
    }
    return out;
}

}  // namespace

void audit_wait_bound(const Trace& trace, const AuditLimits& limits, AuditReport& report) {
    constexpr const char* kName = "wait_bound";
    report.checked.emplace_back(kName);
    const auto spans = batch_spans(trace);
    const double wmax = limits.scheduler.max_wait;
    double worst = -wmax;
    for (const auto& e : trace.events()) {
        if (e.kind != EventKind::BatchMember) continue;
        const VTime deadline = e.x + wmax;
        // Batch occupying the device at the request's deadline, if any.
        auto it = std::upper_bound(spans.begin(), spans.end(), deadline,
                                   [](VTime t, const BatchSpan& s) { return t < s.dispatch; });
        double in_flight = 0;
        if (it != spans.begin()) {
            const auto& s = *std::prev(it);
            if (deadline < s.complete && s.id != e.ref) in_flight = s.cost;
        }
        const double wait = e.time - e.x;
        const double excess = wait - (wmax + in_flight);
        worst = std::max(worst, excess);
        if (excess > limits.tolerance) {
            flag(report, kName,
                 cat("request ", e.a, " waited ", wait, " s, bound ", wmax + in_flight, " s (batch ", e.ref, ")"));
        }
    }
    report.worst_wait_excess = std::max(report.worst_wait_excess, worst);
}

void audit_work_conservation(const Trace& trace, const AuditLimits& limits, AuditReport& report) {
    constexpr const char* kName = "work_conservation";
    report.checked.emplace_back(kName);
    const auto& ev = trace.events();
    struct Pooled {
        std::uint64_t id;
        VTime enqueued;
    };
    std::deque<Pooled> pool;
    std::int64_t target = 1;
    bool busy = false;
    bool saw_stuck = false;
    const double wmax = limits.scheduler.max_wait;

    for (std::size_t i = 0; i < ev.size(); ++i) {
        const auto& e = ev[i];
        switch (e.kind) {
            case EventKind::PredEnqueue:
                pool.push_back({e.ref, e.time});
                target = e.c;
                break;
            case EventKind::BatchDispatch:
                if (busy) flag(report, kName, cat("batch ", e.ref, " dispatched while the device is busy at t=", e.time));
                busy = true;
                break;
            case EventKind::BatchMember: {
                auto it = std::find_if(pool.begin(), pool.end(),
                                       [&](const Pooled& p) { return p.id == static_cast<std::uint64_t>(e.a); });
                if (it == pool.end()) {
                    flag(report, kName, cat("request ", e.a, " dispatched but never enqueued"));
                } else {
                    pool.erase(it);
                }
                break;
            }
            case EventKind::BatchComplete: busy = false; break;
            case EventKind::Stuck: saw_stuck = true; break;
            default: break;
        }

        const bool end_of_instant = i + 1 == ev.size() || ev[i + 1].time != e.time;
        if (!end_of_instant || busy || pool.empty()) continue;
        const VTime now = e.time;
        const VTime deadline = pool.front().enqueued + wmax;
        if (static_cast<std::int64_t>(pool.size()) >= target) {
            flag(report, kName, cat("device idle at t=", now, " with ", pool.size(), " pooled >= target ", target));
        } else if (now >= deadline) {
            flag(report, kName, cat("device idle at t=", now, " past the deadline ", deadline));
        } else if (i + 1 < ev.size() && ev[i + 1].time > deadline) {
            flag(report, kName, cat("device idle from t=", now, " through the deadline ", deadline));
        }
    }
    if (!pool.empty() && !saw_stuck) flag(report, kName, cat(pool.size(), " requests never dispatched"));
}

void audit_cost(const Trace& trace, const AuditLimits& limits, AuditReport& report) {
    constexpr const char* kName = "cost";
    report.checked.emplace_back(kName);
    struct Acc {
        VTime dispatch = 0;
        double reported = 0;
        std::int64_t size = 0;
        std::int64_t members = 0;
        double formula = 0;
        bool complete = false;
    };
    std::map<std::uint64_t, Acc> batches;
    const auto& c = limits.cost;
    for (const auto& e : trace.events()) {
        if (e.kind == EventKind::BatchDispatch) {
            batches[e.ref] = Acc{e.time, e.x, e.a, 0, c.c0, false};
        } else if (e.kind == EventKind::BatchMember) {
            auto it = batches.find(e.ref);
            if (it == batches.end()) {
                flag(report, kName, cat("member of unknown batch ", e.ref));
                continue;
            }
            it->second.members += 1;
            it->second.formula += c.request_cost(static_cast<std::size_t>(e.b), static_cast<std::size_t>(e.c));
        } else if (e.kind == EventKind::BatchComplete) {
            auto it = batches.find(e.ref);
            if (it == batches.end()) {
                flag(report, kName, cat("completion of unknown batch ", e.ref));
                continue;
            }
            auto& b = it->second;
            b.complete = true;
            const VTime expected = b.dispatch + b.reported;
            if (std::abs(e.time - expected) > limits.tolerance)
                flag(report, kName, cat("batch ", e.ref, " completes at ", e.time, ", expected ", expected));
        }
    }
    for (const auto& [id, b] : batches) {
        if (b.members != b.size) flag(report, kName, cat("batch ", id, " lists ", b.members, " of ", b.size, " members"));
        if (std::abs(b.formula - b.reported) > 1e-12 * std::max(1.0, b.reported))
            flag(report, kName, cat("batch ", id, " cost ", b.reported, " != formula ", b.formula));
    }
}

void audit_fifo(const Trace& trace, AuditReport& report) {
    constexpr const char* kName = "fifo";
    report.checked.emplace_back(kName);
    std::map<std::uint64_t, std::deque<std::uint64_t>> members;
    std::uint64_t last_dispatched = 0;
    std::deque<std::uint64_t> completing;
    VTime completing_at = 0;
    for (const auto& e : trace.events()) {
        switch (e.kind) {
            case EventKind::BatchMember: {
                const auto id = static_cast<std::uint64_t>(e.a);
                if (id <= last_dispatched)
                    flag(report, kName, cat("request ", id, " dispatched after request ", last_dispatched));
                last_dispatched = std::max(last_dispatched, id);
                members[e.ref].push_back(id);
                break;
            }
            case EventKind::BatchComplete:
                if (!completing.empty()) flag(report, kName, cat(completing.size(), " results of a batch never delivered"));
                completing = std::move(members[e.ref]);
                members.erase(e.ref);
                completing_at = e.time;
                break;
            case EventKind::PredComplete:
                if (completing.empty() || completing.front() != e.ref) {
                    flag(report, kName, cat("result for request ", e.ref, " delivered out of order at t=", e.time));
                } else {
                    completing.pop_front();
                }
                if (e.time != completing_at)
                    flag(report, kName, cat("result for request ", e.ref, " delivered after its batch completed"));
                break;
            default: break;
        }
    }
    if (!completing.empty()) flag(report, kName, cat(completing.size(), " results of the last batch never delivered"));
}

AuditReport audit_trace(const Trace& trace, const AuditLimits& limits) {
    AuditReport r;
    audit_transitions(trace, r);
    audit_wakeups(trace, r);
    audit_wait_bound(trace, limits, r);
    audit_work_conservation(trace, limits, r);
    audit_cost(trace, limits, r);
    audit_fifo(trace, r);
    return r;
}

std::vector<Trace> split_runs(const Trace& trace) {
    std::vector<Trace> out;
    for (const auto& e : trace.events()) {
        if (out.empty() || e.kind == EventKind::RunStart) out.emplace_back();
        out.back().push(e);
    }
    return out;
}

}  // namespace lipos
