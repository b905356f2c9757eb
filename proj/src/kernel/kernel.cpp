// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#include "lipos/kernel.hpp"

#include <algorithm>
#include <stdexcept>

namespace lipos {

using detail::ThreadRec;

void KernelConfig::finalize() {
    model.validate();
    scheduler.validate();
    cost.validate();
    kvfs.chain_seed = model.model_seed;
}

namespace {

KernelConfig finalized(KernelConfig c) {
    c.finalize();
    return c;
}

KvfsConfig kvfs_config_for(const KernelConfig& c, const ModelBackend& model) {
    KvfsConfig k = c.kvfs;
    k.chain_seed = model.config().model_seed;
    return k;
}

}  // namespace

Kernel::Kernel(KernelConfig config, std::shared_ptr<const ModelBackend> model)
    : config_(finalized(std::move(config))),
      model_(model ? std::move(model) : std::make_shared<MockBackend>(config_.model)),
      kvfs_(kvfs_config_for(config_, *model_)),
      batcher_(config_.scheduler) {}

Kernel::~Kernel() {
    // Coroutine frames may reference their ThreadRec; destroy them first.
    for (auto& [tid, t] : threads_) t->root = {};
}

void Kernel::emit(TraceEvent e) {
    if (!config_.record_trace) return;
    e.time = now_;
    trace_.push(std::move(e));
}

void Kernel::annotate(TraceEvent e) { emit(std::move(e)); }

Kernel::Process& Kernel::proc(Pid pid) {
    auto it = procs_.find(pid);
    if (it == procs_.end()) throw Error(Errc::NoSuchProcess, std::to_string(pid));
    return it->second;
}

ThreadRec& Kernel::thread(Tid tid) {
    auto it = threads_.find(tid);
    if (it == threads_.end()) throw Error(Errc::NoSuchThread, std::to_string(tid));
    return *it->second;
}

ProcessInfo Kernel::process(Pid pid) const {
    auto it = procs_.find(pid);
    if (it == procs_.end()) throw Error(Errc::NoSuchProcess, std::to_string(pid));
    const Process& p = it->second;
    return {p.pid, p.owner, p.admitted, p.finished, p.exit_status, p.error, p.threads};
}

ThreadState Kernel::thread_state(Tid tid) const {
    auto it = threads_.find(tid);
    if (it == threads_.end()) throw Error(Errc::NoSuchThread, std::to_string(tid));
    return it->second->state;
}

void Kernel::register_tool(std::string name, ToolSpec spec) {
    if (spec.latency < 0) throw Error(Errc::ConfigError, "tool latency must be >= 0");
    tools_.insert_or_assign(std::move(name), std::move(spec));
}

Pid Kernel::spawn_lip(ThreadBody main, Principal owner) { return spawn_lip_at(now_, std::move(main), owner); }

Pid Kernel::spawn_lip_at(VTime at, ThreadBody main, Principal owner) {
    if (shutting_down_) throw Error(Errc::KernelShuttingDown);
    if (at < now_) throw std::invalid_argument("spawn time is in the past");
    const Pid pid = next_pid_++;
    Process& p = procs_[pid];
    p.pid = pid;
    p.owner = owner;
    p.main = std::move(main);
    if (at > now_) {
        schedule(at, EventType::Arrival, pid);
        return pid;
    }
    emit({.kind = EventKind::ProcessSpawn, .pid = pid, .a = owner});
    if (config_.max_live_processes == 0 || live_ < config_.max_live_processes) {
        admit(p);
    } else {
        admission_.push_back(pid);
    }
    return pid;
}

void Kernel::admit(Process& p) {
    p.admitted = true;
    live_ += 1;
    emit({.kind = EventKind::ProcessAdmit, .pid = p.pid});
    new_thread(p, std::move(p.main), 0);
}

Tid Kernel::new_thread(Process& p, ThreadBody body, Tid parent) {
    const Tid tid = next_tid_++;
    auto rec = std::make_unique<ThreadRec>();
    rec->tid = tid;
    rec->pid = p.pid;
    rec->parent = parent;
    rec->body = std::move(body);
    rec->sys.reset(new Sys(this, rec.get()));
    ThreadRec& t = *rec;
    threads_.emplace(tid, std::move(rec));
    t.root = t.body(*t.sys);
    t.resume_point = t.root.handle();
    p.threads.push_back(tid);
    p.live_threads += 1;
    emit({.kind = EventKind::ThreadCreate, .pid = p.pid, .tid = tid, .ref = parent});
    runq_.make_ready(tid);
    return tid;
}

void Kernel::set_state(ThreadRec& t, ThreadState to, WaitReason reason) {
    if (!is_legal_transition(t.state, to)) {
        throw std::logic_error("illegal transition " + std::string(to_string(t.state)) + " -> " +
                               std::string(to_string(to)) + " for thread " + std::to_string(t.tid));
    }
    emit({.kind = EventKind::ThreadState,
          .pid = t.pid,
          .tid = t.tid,
          .a = static_cast<std::int64_t>(t.state),
          .b = static_cast<std::int64_t>(to),
          .c = static_cast<std::int64_t>(reason)});
    t.state = to;
    t.wait = reason;
}

void Kernel::make_ready(ThreadRec& t) {
    set_state(t, ThreadState::Ready);
    runq_.make_ready(t.tid);
}

void Kernel::schedule(VTime at, EventType type, std::uint64_t ref) {
    events_.push(Event{at, event_seq_++, type, ref});
}

void Kernel::run_thread(Tid tid) {
    ThreadRec& t = thread(tid);
    set_state(t, ThreadState::Running);
    current_ = tid;
    t.resume_point.resume();
    current_ = 0;
    if (t.root.handle().done()) {
        finish_thread(t);
    } else if (t.state == ThreadState::Running) {
        throw std::logic_error("thread " + std::to_string(tid) + " suspended outside a system call");
    }
}

void Kernel::finish_thread(ThreadRec& t) {
    Process& p = proc(t.pid);
    if (auto err = t.root.handle().promise().error) {
        std::string what = "unknown exception";
        try {
            std::rethrow_exception(err);
        } catch (const std::exception& e) {
            what = e.what();
        } catch (...) {
        }
        if (p.exit_status == 0) p.exit_status = 1;
        if (p.error.empty()) p.error = what;
        emit({.kind = EventKind::LipError, .pid = t.pid, .tid = t.tid, .note = what});
    }
    set_state(t, ThreadState::Finished);
    t.root = {};

    for (Tid j : std::exchange(t.joiners, {})) {
        ThreadRec& w = thread(j);
        if (--w.join_remaining == 0) make_ready(w);
    }
    if (--p.live_threads == 0) finish_process(p);
}

void Kernel::finish_process(Process& p) {
    for (Tid tid : p.threads) {
        ThreadRec& t = thread(tid);
        for (KvHandle h : std::exchange(t.handles, {})) {
            try {
                kvfs_.close(h);
            } catch (const Error&) {
                // Already closed or removed by another thread.
            }
        }
        t.body = nullptr;
    }
    p.finished = true;
    p.receivers.clear();
    live_ -= 1;
    emit({.kind = EventKind::ProcessExit, .pid = p.pid, .a = p.exit_status});
    while (!admission_.empty() && (config_.max_live_processes == 0 || live_ < config_.max_live_processes)) {
        Process& next = proc(admission_.front());
        admission_.pop_front();
        admit(next);
    }
}

RunSummary Kernel::run() {
    for (;;) {
        while (auto tid = runq_.next()) run_thread(*tid);
        try_dispatch();
        if (!runq_.empty()) continue;
        if (events_.empty()) break;
        const Event e = events_.top();
        events_.pop();
        now_ = std::max(now_, e.time);
        handle(e);
    }

    RunSummary s;
    s.end_time = now_;
    s.processes = procs_.size();
    s.batches = batches_;
    for (const auto& [tid, t] : threads_) {
        if (t->state != ThreadState::Finished) s.stuck_threads.push_back(tid);
    }
    std::sort(s.stuck_threads.begin(), s.stuck_threads.end());
    for (Tid tid : s.stuck_threads) {
        const ThreadRec& t = *threads_.at(tid);
        emit({.kind = EventKind::Stuck, .pid = t.pid, .tid = tid, .note = std::string(to_string(t.state))});
    }
    return s;
}

void Kernel::handle(const Event& e) {
    switch (e.type) {
        case EventType::Arrival: {
            Process& p = proc(e.ref);
            emit({.kind = EventKind::ProcessSpawn, .pid = p.pid, .a = p.owner});
            if (config_.max_live_processes == 0 || live_ < config_.max_live_processes) {
                admit(p);
            } else {
                admission_.push_back(p.pid);
            }
            break;
        }
        case EventType::IoComplete: complete_io(e.ref); break;
        case EventType::Wake: make_ready(thread(e.ref)); break;
        case EventType::BatchComplete: complete_batch(); break;
        case EventType::Deadline:
            if (pending_deadline_ && *pending_deadline_ == e.time) pending_deadline_.reset();
            break;
    }
}

void Kernel::try_dispatch() {
    if (in_flight_) return;
    auto batch = batcher_.form_batch(now_);
    if (!batch) {
        if (auto dl = batcher_.next_deadline(); dl && pending_deadline_ != dl) {
            pending_deadline_ = dl;
            schedule(*dl, EventType::Deadline, 0);
        }
        return;
    }
    auto outcomes = execute_batch(*batch, kvfs_, *model_, config_.cost, config_.exec);
    batches_ += 1;
    emit({.kind = EventKind::BatchDispatch,
          .ref = batch->id,
          .a = static_cast<std::int64_t>(batch->requests.size()),
          .x = batch->cost,
          .note = batch->reason == DispatchReason::Full ? "full" : "deadline"});
    for (std::size_t i = 0; i < batch->requests.size(); ++i) {
        const auto& r = batch->requests[i];
        emit({.kind = EventKind::BatchMember,
              .pid = r.pid,
              .tid = r.tid,
              .ref = batch->id,
              .a = static_cast<std::int64_t>(r.id),
              .b = static_cast<std::int64_t>(outcomes[i].n_new),
              .c = static_cast<std::int64_t>(outcomes[i].n_ctx),
              .x = r.enqueue_time});
    }
    const VTime done = now_ + batch->cost;
    const std::uint64_t id = batch->id;
    in_flight_ = InFlight{std::move(*batch), std::move(outcomes)};
    schedule(done, EventType::BatchComplete, id);
}

void Kernel::complete_batch() {
    InFlight f = std::move(*in_flight_);
    in_flight_.reset();
    emit({.kind = EventKind::BatchComplete, .ref = f.batch.id});
    for (std::size_t i = 0; i < f.batch.requests.size(); ++i) {
        const auto& r = f.batch.requests[i];
        auto& o = f.outcomes[i];
        ThreadRec& t = thread(r.tid);
        std::string err;
        if (o.error) {
            err = std::string(to_string(o.error->code()));
            t.pending_error = std::move(o.error);
        } else {
            t.pred_result = std::move(o.dists);
        }
        emit({.kind = EventKind::PredComplete, .pid = r.pid, .tid = r.tid, .ref = r.id, .note = err});
        make_ready(t);
    }
}

bool Kernel::file_busy(FileId file) const {
    auto uses = [&](const PredRequest& r) {
        try {
            return kvfs_.file_id(r.kv) == file;
        } catch (const Error&) {
            return false;
        }
    };
    if (std::any_of(batcher_.pool().begin(), batcher_.pool().end(), uses)) return true;
    return in_flight_ && std::any_of(in_flight_->batch.requests.begin(), in_flight_->batch.requests.end(), uses);
}

void Kernel::submit_pred(ThreadRec& t, KvHandle kv, std::vector<TokenPos> tokens) {
    set_state(t, ThreadState::BlockedOnPred);
    t.handles.insert(kv);
    const Process& p = proc(t.pid);
    PredRequest req;
    req.id = next_request_++;
    req.pid = t.pid;
    req.tid = t.tid;
    req.caller = Caller{p.owner, t.tid};
    req.kv = kv;
    req.tokens = std::move(tokens);
    const auto n = static_cast<std::int64_t>(req.tokens.size());
    const std::uint64_t id = req.id;
    batcher_.enqueue(std::move(req), now_);
    emit({.kind = EventKind::PredEnqueue,
          .pid = t.pid,
          .tid = t.tid,
          .ref = id,
          .a = n,
          .b = static_cast<std::int64_t>(batcher_.pool_size()),
          .c = static_cast<std::int64_t>(batcher_.target_batch_size()),
          .x = batcher_.rate()});
}

void Kernel::begin_io(ThreadRec& t, const ToolSpec& spec, VTime latency, std::string tool, std::string payload) {
    set_state(t, ThreadState::WaitingIO, WaitReason::Io);
    const auto free_before = static_cast<std::int64_t>(kvfs_.free_device_pages());
    std::int64_t moved_total = 0;
    if (config_.offload_on_io) {
        const Caller caller{proc(t.pid).owner, t.tid};
        for (KvHandle h : t.handles) {
            try {
                const FileId fid = kvfs_.file_id(h);
                if (file_busy(fid)) continue;
                const std::size_t moved = kvfs_.offload(caller, h);
                if (moved == 0) continue;
                t.offloaded.push_back(h);
                moved_total += static_cast<std::int64_t>(moved);
                emit({.kind = EventKind::KvOffload,
                      .pid = t.pid,
                      .tid = t.tid,
                      .ref = fid,
                      .a = static_cast<std::int64_t>(moved)});
            } catch (const Error&) {
                // Stale handle or full host tier: the file stays where it is.
            }
        }
    }
    (void)spec;
    const VTime deadline = now_ + latency;
    io_waits_[t.tid] = IoWait{tool, std::move(payload)};
    emit({.kind = EventKind::IoStart,
          .pid = t.pid,
          .tid = t.tid,
          .a = moved_total,
          .b = free_before,
          .c = static_cast<std::int64_t>(kvfs_.free_device_pages()),
          .x = deadline,
          .note = tool});
    schedule(deadline, EventType::IoComplete, t.tid);
}

void Kernel::complete_io(Tid tid) {
    ThreadRec& t = thread(tid);
    IoWait w = std::move(io_waits_.at(tid));
    io_waits_.erase(tid);
    try {
        t.io_result = tools_.at(w.tool).handler(w.payload);
    } catch (const std::exception& e) {
        t.pending_error = Error(Errc::NoSuchTool, "tool '" + w.tool + "' failed: " + e.what());
    }

    const Caller caller{proc(t.pid).owner, t.tid};
    std::int64_t restored = 0;
    std::string failure;
    for (KvHandle h : std::exchange(t.offloaded, {})) {
        FileId fid = 0;
        try {
            fid = kvfs_.file_id(h);
            const std::size_t moved = kvfs_.restore(caller, h);
            restored += static_cast<std::int64_t>(moved);
            emit({.kind = EventKind::KvRestore, .pid = t.pid, .tid = tid, .ref = fid, .a = static_cast<std::int64_t>(moved)});
        } catch (const Error& e) {
            if (failure.empty()) failure = e.what();
            emit({.kind = EventKind::KvRestore, .pid = t.pid, .tid = tid, .ref = fid, .note = std::string(to_string(e.code()))});
        }
    }
    if (!failure.empty()) t.pending_error = Error(Errc::RestoreFailed, failure);

    const VTime wake = now_ + static_cast<double>(restored) * config_.cost.transfer_cost;
    emit({.kind = EventKind::IoComplete,
          .pid = t.pid,
          .tid = tid,
          .a = restored,
          .x = wake,
          .note = failure.empty() ? std::string() : std::string(to_string(Errc::RestoreFailed))});
    if (wake > now_) {
        schedule(wake, EventType::Wake, tid);
    } else {
        make_ready(t);
    }
}

bool Kernel::join_ready(ThreadRec& t, std::optional<Tid> target) {
    if (target) {
        auto it = threads_.find(*target);
        if (it == threads_.end() || *target == t.tid) {
            t.pending_error = Error(Errc::NoSuchThread, std::to_string(*target));
            return true;
        }
        if (it->second->pid != t.pid) {
            t.pending_error = Error(Errc::CrossProcessJoin, std::to_string(*target));
            return true;
        }
        return it->second->state == ThreadState::Finished;
    }
    for (Tid other : proc(t.pid).threads) {
        const ThreadRec& o = *threads_.at(other);
        if (o.parent == t.tid && o.state != ThreadState::Finished) return false;
    }
    return true;
}

void Kernel::begin_join(ThreadRec& t, std::optional<Tid> target) {
    std::vector<Tid> waits;
    if (target) {
        waits.push_back(*target);
    } else {
        for (Tid other : proc(t.pid).threads) {
            const ThreadRec& o = *threads_.at(other);
            if (o.parent == t.tid && o.state != ThreadState::Finished) waits.push_back(other);
        }
    }
    t.join_remaining = waits.size();
    for (Tid w : waits) thread(w).joiners.push_back(t.tid);
    set_state(t, ThreadState::WaitingIO, WaitReason::Join);
}

void Kernel::begin_recv(ThreadRec& t) {
    proc(t.pid).receivers.push_back(t.tid);
    set_state(t, ThreadState::WaitingIO, WaitReason::Recv);
}

void Kernel::begin_yield(ThreadRec& t) { make_ready(t); }

// ---------------------------------------------------------------------------
// Awaitables

void PredCall::await_suspend(std::coroutine_handle<> h) {
    thread->resume_point = h;
    kernel->submit_pred(*thread, kv_, std::move(tokens_));
}

std::vector<Dist> PredCall::await_resume() {
    if (thread->pending_error) {
        Error e = std::move(*thread->pending_error);
        thread->pending_error.reset();
        throw e;
    }
    return std::exchange(thread->pred_result, {});
}

bool IoCall::await_ready() {
    auto it = kernel->tools_.find(tool_);
    if (it == kernel->tools_.end()) {
        thread->pending_error = Error(Errc::NoSuchTool, tool_);
        return true;
    }
    spec_ = &it->second;
    return false;
}

void IoCall::await_suspend(std::coroutine_handle<> h) {
    thread->resume_point = h;
    kernel->begin_io(*thread, *spec_, latency_.value_or(spec_->latency), tool_, std::move(payload_));
}

std::string IoCall::await_resume() {
    if (thread->pending_error) {
        Error e = std::move(*thread->pending_error);
        thread->pending_error.reset();
        throw e;
    }
    return std::exchange(thread->io_result, {});
}

bool JoinCall::await_ready() { return kernel->join_ready(*thread, target_); }

void JoinCall::await_suspend(std::coroutine_handle<> h) {
    thread->resume_point = h;
    kernel->begin_join(*thread, target_);
}

void JoinCall::await_resume() {
    if (thread->pending_error) {
        Error e = std::move(*thread->pending_error);
        thread->pending_error.reset();
        throw e;
    }
}

bool RecvCall::await_ready() {
    auto& box = kernel->proc(thread->pid).mailbox;
    if (box.empty()) return false;
    thread->received = std::move(box.front());
    box.pop_front();
    kernel->emit({.kind = EventKind::IpcRecv,
                  .pid = thread->pid,
                  .tid = thread->tid,
                  .ref = thread->received.from,
                  .a = static_cast<std::int64_t>(thread->received.bytes.size())});
    return true;
}

void RecvCall::await_suspend(std::coroutine_handle<> h) {
    thread->resume_point = h;
    kernel->begin_recv(*thread);
}

Message RecvCall::await_resume() { return std::exchange(thread->received, {}); }

void YieldCall::await_suspend(std::coroutine_handle<> h) {
    thread->resume_point = h;
    kernel->begin_yield(*thread);
}

// ---------------------------------------------------------------------------
// Sys

Pid Sys::pid() const noexcept { return thread_->pid; }
Tid Sys::tid() const noexcept { return thread_->tid; }
Principal Sys::principal() const noexcept { return kernel_->procs_.at(thread_->pid).owner; }
Caller Sys::caller() const noexcept { return {principal(), thread_->tid}; }
VTime Sys::now() const noexcept { return kernel_->now_; }
const ModelConfig& Sys::model() const noexcept { return kernel_->model_->config(); }

KvHandle Sys::track(KvHandle h) {
    thread_->handles.insert(h);
    return h;
}

KvHandle Sys::kv_create(std::string_view name, std::optional<Permissions> perms) {
    return track(kernel_->kvfs_.create(caller(), name, perms));
}

KvHandle Sys::kv_open(std::string_view name) { return track(kernel_->kvfs_.open(caller(), name)); }

void Sys::kv_close(KvHandle h) {
    kernel_->kvfs_.close(h);
    for (Tid t : kernel_->proc(thread_->pid).threads) kernel_->thread(t).handles.erase(h);
}

std::size_t Sys::kv_remove(KvHandle h) {
    const std::size_t freed = kernel_->kvfs_.remove(caller(), h);
    for (Tid t : kernel_->proc(thread_->pid).threads) kernel_->thread(t).handles.erase(h);
    return freed;
}

KvHandle Sys::kv_fork(KvHandle src, std::string_view name) { return track(kernel_->kvfs_.fork(caller(), src, name)); }

KvHandle Sys::kv_extract(KvHandle src, std::span<const std::size_t> indices, std::string_view name) {
    return track(kernel_->kvfs_.extract(caller(), src, indices, name));
}

KvHandle Sys::kv_merge(std::span<const KvHandle> parts, std::string_view name) {
    return track(kernel_->kvfs_.merge(caller(), parts, name));
}

void Sys::kv_lock(KvHandle h) { kernel_->kvfs_.lock(caller(), h); }
void Sys::kv_unlock(KvHandle h) { kernel_->kvfs_.unlock(caller(), h); }
std::size_t Sys::kv_restore(KvHandle h) { return kernel_->kvfs_.restore(caller(), h); }
std::size_t Sys::kv_length(KvHandle h) const { return kernel_->kvfs_.length(h); }
std::vector<KvEntry> Sys::kv_read(KvHandle h) const { return kernel_->kvfs_.read(caller(), h); }

PredCall Sys::pred(KvHandle kv, std::vector<TokenPos> tokens) {
    return PredCall(kernel_, thread_, kv, std::move(tokens));
}

IoCall Sys::io(std::string tool, std::string payload, std::optional<VTime> latency) {
    if (latency && *latency < 0) throw std::invalid_argument("negative I/O latency");
    return IoCall(kernel_, thread_, std::move(tool), std::move(payload), latency);
}

Tid Sys::thread_create(ThreadBody body) {
    return kernel_->new_thread(kernel_->proc(thread_->pid), std::move(body), thread_->tid);
}

JoinCall Sys::join(Tid tid) { return JoinCall(kernel_, thread_, tid); }
JoinCall Sys::join_all() { return JoinCall(kernel_, thread_, std::nullopt); }

void Sys::ipc_send(Pid dst, std::string bytes) {
    auto it = kernel_->procs_.find(dst);
    if (it == kernel_->procs_.end() || it->second.finished) throw Error(Errc::NoSuchProcess, std::to_string(dst));
    auto& p = it->second;
    kernel_->emit({.kind = EventKind::IpcSend,
                   .pid = thread_->pid,
                   .tid = thread_->tid,
                   .ref = dst,
                   .a = static_cast<std::int64_t>(bytes.size())});
    Message m{thread_->pid, std::move(bytes)};
    if (!p.receivers.empty()) {
        const Tid r = p.receivers.front();
        p.receivers.pop_front();
        auto& rec = kernel_->thread(r);
        kernel_->emit({.kind = EventKind::IpcRecv,
                       .pid = dst,
                       .tid = r,
                       .ref = m.from,
                       .a = static_cast<std::int64_t>(m.bytes.size())});
        rec.received = std::move(m);
        kernel_->make_ready(rec);
    } else {
        p.mailbox.push_back(std::move(m));
    }
}

RecvCall Sys::ipc_recv() { return RecvCall(kernel_, thread_); }
YieldCall Sys::yield() { return YieldCall(kernel_, thread_); }

void Sys::mark_request_begin(const RequestMark& m) {
    kernel_->emit({.kind = EventKind::RequestBegin,
                   .pid = thread_->pid,
                   .tid = thread_->tid,
                   .ref = m.request,
                   .a = m.doc,
                   .x = m.arrival});
}

void Sys::mark_request_end(const RequestMark& m) {
    kernel_->emit({.kind = EventKind::RequestEnd,
                   .pid = thread_->pid,
                   .tid = thread_->tid,
                   .ref = m.request,
                   .a = m.tokens,
                   .b = m.cache,
                   .c = m.failed ? 1 : 0,
                   .x = m.arrival});
}

void Sys::set_exit_status(int status) { kernel_->proc(thread_->pid).exit_status = status; }

}  // namespace lipos
