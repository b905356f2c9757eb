// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <unordered_set>
#include <vector>

#include "lipos/common.hpp"
#include "lipos/kvfs.hpp"
#include "lipos/model.hpp"

namespace lipos {

struct SchedulerConfig {
    VTime max_wait = 0.010;            // W_max
    std::size_t max_batch = 64;        // B_max
    double ewma_alpha = 0.2;
    VTime default_interarrival = 0.1;  // seeds the rate estimate: 1 / this
    VTime min_interarrival = 1e-9;     // floor on the gap between enqueues

    void validate() const;
};

/// Batch execution cost in virtual seconds:
///   c0 + sum over requests of (c1 * n_new + c2 * n_new * n_ctx)
/// where n_ctx is the file length after the append.
struct CostModel {
    double c0 = 1e-3;
    double c1 = 1e-5;
    double c2 = 1e-9;
    double transfer_cost = 5e-5;  // per page moved between tiers

    void validate() const;
    double request_cost(std::size_t n_new, std::size_t n_ctx) const noexcept {
        const auto n = static_cast<double>(n_new);
        return c1 * n + c2 * n * static_cast<double>(n_ctx);
    }
};

/// Exponentially weighted estimate of the pred arrival rate.
class RateEstimator {
public:
    RateEstimator(double alpha, VTime default_interarrival, VTime min_interarrival = 1e-9);

    /// Records an enqueue at `now`: rate <- (1 - alpha) * rate + alpha / dt.
    void observe(VTime now);
    double rate() const noexcept { return rate_; }

private:
    double alpha_;
    VTime default_dt_;
    VTime min_dt_;
    double rate_ = 0;
    std::optional<VTime> last_;
};

struct PredRequest {
    std::uint64_t id = 0;
    Pid pid = 0;
    Tid tid = 0;
    Caller caller;
    KvHandle kv;
    std::vector<TokenPos> tokens;
    VTime enqueue_time = 0;
};

enum class DispatchReason { Full, Deadline };

struct Batch {
    std::uint64_t id = 0;
    std::vector<PredRequest> requests;
    VTime formed_at = 0;
    VTime cost = 0;
    DispatchReason reason = DispatchReason::Full;
};

struct PredOutcome {
    std::uint64_t request_id = 0;
    std::vector<Dist> dists;
    std::optional<Error> error;
    std::size_t n_new = 0;  // zero when the request failed
    std::size_t n_ctx = 0;
};

/// Inference pool plus the batch-formation policy.
///
/// Target batch size B* = clamp(round(rate * W_max), 1, B_max): with Poisson
/// arrivals, rate * W_max is the expected number of calls that arrive within
/// the wait budget. A batch is formed once the pool holds B* requests or the
/// oldest request has waited W_max, taking up to B_max requests in FIFO order.
class BatchScheduler {
public:
    explicit BatchScheduler(SchedulerConfig config);

    const SchedulerConfig& config() const noexcept { return config_; }

    void enqueue(PredRequest req, VTime now);
    std::size_t target_batch_size() const noexcept;
    double rate() const noexcept { return estimator_.rate(); }
    std::size_t pool_size() const noexcept { return pool_.size(); }
    bool empty() const noexcept { return pool_.empty(); }
    const std::deque<PredRequest>& pool() const noexcept { return pool_; }

    /// Whether a batch would be dispatched at `now` on an idle device.
    std::optional<DispatchReason> dispatch_reason(VTime now) const;
    /// Forms the next batch if the policy allows it at `now`. Caller guarantees the device is idle.
    std::optional<Batch> form_batch(VTime now);
    /// Instant at which the oldest pooled request reaches W_max.
    std::optional<VTime> next_deadline() const;

private:
    SchedulerConfig config_;
    RateEstimator estimator_;
    std::deque<PredRequest> pool_;
    std::uint64_t next_batch_ = 1;
};

/// Runs every request of `batch` through the model in FIFO order and sets
/// `batch.cost`. A failing request gets its error in the outcome and
/// contributes nothing to the cost; the rest of the batch is unaffected.
///
/// With ExecPolicy::Parallel the per-request forward passes run under
/// OpenMP (unless two requests target the same file); appends are always
/// applied serially in FIFO order.
std::vector<PredOutcome> execute_batch(Batch& batch, Kvfs& kvfs, const ModelBackend& model, const CostModel& cost,
                                       ExecPolicy policy = ExecPolicy::Parallel);

/// FIFO run queue of Ready threads.
class ThreadScheduler {
public:
    /// Throws std::logic_error if `tid` is already queued.
    void make_ready(Tid tid);
    std::optional<Tid> next();
    bool empty() const noexcept { return queue_.empty(); }
    std::size_t size() const noexcept { return queue_.size(); }

private:
    std::deque<Tid> queue_;
    std::unordered_set<Tid> queued_;
};

}  // namespace lipos
