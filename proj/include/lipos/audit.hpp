// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "lipos/scheduler.hpp"
#include "lipos/trace.hpp"

namespace lipos {

struct AuditViolation {
    std::string auditor;
    std::string message;
};

struct AuditReport {
    std::vector<std::string> checked;
    std::vector<AuditViolation> violations;
    /// Largest observed (dispatch - enqueue) - (W_max + in-flight cost), clipped below at -W_max.
    double worst_wait_excess = 0;

    bool ok() const noexcept { return violations.empty(); }
};

struct AuditLimits {
    SchedulerConfig scheduler;
    CostModel cost;
    double tolerance = 1e-9;  // virtual seconds
};

// Each auditor replays a trace and appends its violations to `report`.

/// Every ThreadState record starts from the thread's current state and is a
/// legal transition; a thread's first state is Ready.
void audit_transitions(const Trace& trace, AuditReport& report);
/// Every IoStart is followed by one IoComplete at its deadline and one
/// WaitingIO -> Ready transition at the reported wake time.
void audit_wakeups(const Trace& trace, AuditReport& report);
/// Every request is dispatched within W_max plus the cost of the batch that
/// occupied the device at its deadline.
void audit_wait_bound(const Trace& trace, const AuditLimits& limits, AuditReport& report);
/// The device is never idle past a dispatch-decision instant while the pool
/// holds a dispatchable batch.
void audit_work_conservation(const Trace& trace, const AuditLimits& limits, AuditReport& report);
/// Each batch's cost matches the closed form over its members, and the
/// batch completes exactly that long after dispatch.
void audit_cost(const Trace& trace, const AuditLimits& limits, AuditReport& report);
/// Requests are dispatched in enqueue order and their results delivered in
/// member order at the batch completion instant.
void audit_fifo(const Trace& trace, AuditReport& report);

/// Runs all auditors.
AuditReport audit_trace(const Trace& trace, const AuditLimits& limits);

/// Splits a concatenated multi-run trace at its RunStart records.
std::vector<Trace> split_runs(const Trace& trace);

}  // namespace lipos
