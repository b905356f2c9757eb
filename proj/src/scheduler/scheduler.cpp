// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#include "lipos/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace lipos {

void SchedulerConfig::validate() const {
    if (!(max_wait >= 0)) throw Error(Errc::ConfigError, "max_wait must be >= 0");
    if (max_batch == 0) throw Error(Errc::ConfigError, "max_batch must be >= 1");
    if (!(ewma_alpha > 0 && ewma_alpha <= 1)) throw Error(Errc::ConfigError, "ewma_alpha must be in (0, 1]");
    if (!(default_interarrival > 0)) throw Error(Errc::ConfigError, "default_interarrival must be > 0");
    if (!(min_interarrival > 0)) throw Error(Errc::ConfigError, "min_interarrival must be > 0");
}

void CostModel::validate() const {
    if (!(c0 >= 0 && c1 >= 0 && c2 >= 0 && transfer_cost >= 0))
        throw Error(Errc::ConfigError, "cost coefficients must be >= 0");
}

RateEstimator::RateEstimator(double alpha, VTime default_interarrival, VTime min_interarrival)
    : alpha_(alpha), default_dt_(default_interarrival), min_dt_(min_interarrival) {}

void RateEstimator::observe(VTime now) {
    if (!last_) {
        rate_ = 1.0 / default_dt_;
    } else {
        const VTime dt = std::max(now - *last_, min_dt_);
        rate_ = (1.0 - alpha_) * rate_ + alpha_ / dt;
    }
    last_ = now;
}

BatchScheduler::BatchScheduler(SchedulerConfig config)
    : config_(config), estimator_(config.ewma_alpha, config.default_interarrival, config.min_interarrival) {
    config_.validate();
}

void BatchScheduler::enqueue(PredRequest req, VTime now) {
    req.enqueue_time = now;
    estimator_.observe(now);
    pool_.push_back(std::move(req));
}

std::size_t BatchScheduler::target_batch_size() const noexcept {
    const double expected = estimator_.rate() * config_.max_wait;
    const double capped = std::min(expected, static_cast<double>(config_.max_batch));
    const auto rounded = static_cast<std::size_t>(std::max(0L, std::lround(capped)));
    return std::clamp<std::size_t>(rounded, 1, config_.max_batch);
}

std::optional<VTime> BatchScheduler::next_deadline() const {
    if (pool_.empty()) return std::nullopt;
    return pool_.front().enqueue_time + config_.max_wait;
}

std::optional<DispatchReason> BatchScheduler::dispatch_reason(VTime now) const {
    if (pool_.empty()) return std::nullopt;
    if (pool_.size() >= target_batch_size()) return DispatchReason::Full;
    if (now >= *next_deadline()) return DispatchReason::Deadline;
    return std::nullopt;
}

std::optional<Batch> BatchScheduler::form_batch(VTime now) {
    const auto reason = dispatch_reason(now);
    if (!reason) return std::nullopt;
    Batch b;
    b.id = next_batch_++;
    b.formed_at = now;
    b.reason = *reason;
    const std::size_t n = std::min(pool_.size(), config_.max_batch);
    b.requests.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        b.requests.push_back(std::move(pool_.front()));
        pool_.pop_front();
    }
    return b;
}

std::vector<PredOutcome> execute_batch(Batch& batch, Kvfs& kvfs, const ModelBackend& model, const CostModel& cost,
                                       ExecPolicy policy) {
    const std::size_t n = batch.requests.size();
    std::vector<PredOutcome> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i].request_id = batch.requests[i].id;

    // Two requests on one file must see each other's appends, so they take
    // the serial path.
    bool distinct_files = true;
    std::vector<Fingerprint> context(n, 0);
    {
        std::unordered_set<FileId> seen;
        for (std::size_t i = 0; i < n; ++i) {
            const auto& r = batch.requests[i];
            try {
                if (!seen.insert(kvfs.file_id(r.kv)).second) distinct_files = false;
                context[i] = kvfs.tail_fingerprint(r.caller, r.kv);
            } catch (const Error& e) {
                out[i].error = e;
            }
        }
    }

    if (policy == ExecPolicy::Serial || !distinct_files) {
        for (std::size_t i = 0; i < n; ++i) {
            const auto& r = batch.requests[i];
            out[i].error.reset();
            try {
                out[i].dists = compute_pred(kvfs, model, r.caller, r.kv, r.tokens);
                out[i].n_new = r.tokens.size();
                out[i].n_ctx = kvfs.length(r.kv);
            } catch (const Error& e) {
                out[i].error = e;
            }
        }
    } else {
        std::vector<PredOutput> forward(n);
        const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic, 1)
        for (std::int64_t i = 0; i < count; ++i) {
            if (!out[i].error) forward[i] = model.forward(context[i], batch.requests[i].tokens);
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (out[i].error) continue;
            const auto& r = batch.requests[i];
            try {
                if (!r.tokens.empty()) kvfs.append(r.caller, r.kv, forward[i].entries);
                out[i].dists = std::move(forward[i].dists);
                out[i].n_new = r.tokens.size();
                out[i].n_ctx = kvfs.length(r.kv);
            } catch (const Error& e) {
                out[i].error = e;
            }
        }
    }

    double total = cost.c0;
    for (const auto& o : out) {
        if (!o.error) total += cost.request_cost(o.n_new, o.n_ctx);
    }
    batch.cost = total;
    return out;
}

void ThreadScheduler::make_ready(Tid tid) {
    if (!queued_.insert(tid).second) throw std::logic_error("thread " + std::to_string(tid) + " made Ready twice");
    queue_.push_back(tid);
}

std::optional<Tid> ThreadScheduler::next() {
    if (queue_.empty()) return std::nullopt;
    const Tid t = queue_.front();
    queue_.pop_front();
    queued_.erase(t);
    return t;
}

}  // namespace lipos
