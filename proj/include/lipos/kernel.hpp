// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <coroutine>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "lipos/common.hpp"
#include "lipos/kvfs.hpp"
#include "lipos/model.hpp"
#include "lipos/scheduler.hpp"
#include "lipos/task.hpp"
#include "lipos/trace.hpp"

namespace lipos {

struct KernelConfig {
    KvfsConfig kvfs;
    ModelConfig model;
    SchedulerConfig scheduler;
    CostModel cost;
    /// Offload a thread's exclusively owned KV pages while it waits on tool I/O.
    bool offload_on_io = true;
    /// Admission limit on live processes; 0 means unlimited. Spawns beyond
    /// the limit wait in FIFO order.
    std::size_t max_live_processes = 0;
    ExecPolicy exec = ExecPolicy::Parallel;
    bool record_trace = true;

    /// Fills derived fields (the kvfs chain seed) and validates everything.
    void finalize();
};

class Kernel;
class Sys;

using ThreadBody = std::function<Task<>(Sys&)>;

struct ToolSpec {
    std::function<std::string(std::string_view)> handler;
    VTime latency = 0;
};

struct Message {
    Pid from = 0;
    std::string bytes;

    friend bool operator==(const Message&, const Message&) = default;
};

/// Annotation a LIP writes into the trace to delimit one served request.
struct RequestMark {
    std::uint64_t request = 0;
    VTime arrival = 0;
    std::int64_t doc = -1;
    std::int64_t tokens = 0;
    std::int64_t cache = -1;  // 1 hit, 0 miss, -1 not applicable
    bool failed = false;
};

struct ProcessInfo {
    Pid pid = 0;
    Principal owner = 0;
    bool admitted = false;
    bool finished = false;
    int exit_status = 0;
    std::string error;
    std::vector<Tid> threads;
};

struct RunSummary {
    VTime end_time = 0;
    std::size_t processes = 0;
    std::size_t batches = 0;
    std::vector<Tid> stuck_threads;
};

namespace detail {

struct ThreadRec;

/// Shared plumbing for the suspending system calls.
struct SyscallAwaiter {
    Kernel* kernel;
    ThreadRec* thread;
};

}  // namespace detail

/// Awaitable returned by Sys::pred.
class PredCall : detail::SyscallAwaiter {
public:
    bool await_ready() const noexcept { return tokens_.empty(); }
    void await_suspend(std::coroutine_handle<> h);
    std::vector<Dist> await_resume();

private:
    friend class Sys;
    PredCall(Kernel* k, detail::ThreadRec* t, KvHandle kv, std::vector<TokenPos> tokens)
        : SyscallAwaiter{k, t}, kv_(kv), tokens_(std::move(tokens)) {}
    KvHandle kv_;
    std::vector<TokenPos> tokens_;
};

/// Awaitable returned by Sys::io.
class IoCall : detail::SyscallAwaiter {
public:
    bool await_ready();
    void await_suspend(std::coroutine_handle<> h);
    std::string await_resume();

private:
    friend class Sys;
    IoCall(Kernel* k, detail::ThreadRec* t, std::string tool, std::string payload, std::optional<VTime> latency)
        : SyscallAwaiter{k, t}, tool_(std::move(tool)), payload_(std::move(payload)), latency_(latency) {}
    std::string tool_;
    std::string payload_;
    std::optional<VTime> latency_;
    const ToolSpec* spec_ = nullptr;
};

/// Awaitable returned by Sys::join and Sys::join_all.
class JoinCall : detail::SyscallAwaiter {
public:
    bool await_ready();
    void await_suspend(std::coroutine_handle<> h);
    void await_resume();

private:
    friend class Sys;
    JoinCall(Kernel* k, detail::ThreadRec* t, std::optional<Tid> target)
        : SyscallAwaiter{k, t}, target_(target) {}
    std::optional<Tid> target_;  // nullopt: every thread created by the caller
};

/// Awaitable returned by Sys::ipc_recv.
class RecvCall : detail::SyscallAwaiter {
public:
    bool await_ready();
    void await_suspend(std::coroutine_handle<> h);
    Message await_resume();

private:
    friend class Sys;
    RecvCall(Kernel* k, detail::ThreadRec* t) : SyscallAwaiter{k, t} {}
};

/// Awaitable returned by Sys::yield.
class YieldCall : detail::SyscallAwaiter {
public:
    bool await_ready() const noexcept { return false; }
    void await_suspend(std::coroutine_handle<> h);
    void await_resume() const noexcept {}

private:
    friend class Sys;
    YieldCall(Kernel* k, detail::ThreadRec* t) : SyscallAwaiter{k, t} {}
};

/// System-call surface handed to every LIP thread body.
///
/// KV-file operations complete immediately and throw `Error` on failure.
/// `pred`, `io`, `join`, `join_all`, `ipc_recv` and `yield` must be
/// co_awaited; errors from them are thrown at the co_await.
class Sys {
public:
    Pid pid() const noexcept;
    Tid tid() const noexcept;
    Principal principal() const noexcept;
    Caller caller() const noexcept;
    VTime now() const noexcept;
    const ModelConfig& model() const noexcept;

    KvHandle kv_create(std::string_view name = {}, std::optional<Permissions> perms = {});
    KvHandle kv_open(std::string_view name);
    void kv_close(KvHandle h);
    std::size_t kv_remove(KvHandle h);
    KvHandle kv_fork(KvHandle src, std::string_view name = {});
    KvHandle kv_extract(KvHandle src, std::span<const std::size_t> indices, std::string_view name = {});
    KvHandle kv_merge(std::span<const KvHandle> parts, std::string_view name = {});
    void kv_lock(KvHandle h);
    void kv_unlock(KvHandle h);
    std::size_t kv_restore(KvHandle h);
    std::size_t kv_length(KvHandle h) const;
    std::vector<KvEntry> kv_read(KvHandle h) const;

    PredCall pred(KvHandle kv, std::vector<TokenPos> tokens);
    IoCall io(std::string tool, std::string payload, std::optional<VTime> latency = {});

    Tid thread_create(ThreadBody body);
    JoinCall join(Tid tid);
    JoinCall join_all();

    void ipc_send(Pid dst, std::string bytes);
    RecvCall ipc_recv();
    YieldCall yield();

    void mark_request_begin(const RequestMark& m);
    void mark_request_end(const RequestMark& m);

    void set_exit_status(int status);

private:
    friend class Kernel;
    Sys(Kernel* k, detail::ThreadRec* t) : kernel_(k), thread_(t) {}
    KvHandle track(KvHandle h);

    Kernel* kernel_;
    detail::ThreadRec* thread_;
};

namespace detail {

struct ThreadRec {
    Tid tid = 0;
    Pid pid = 0;
    Tid parent = 0;
    ThreadState state = ThreadState::Ready;
    WaitReason wait = WaitReason::None;
    ThreadBody body;
    std::unique_ptr<Sys> sys;
    Task<> root;
    std::coroutine_handle<> resume_point;
    std::set<KvHandle> handles;

    // Results parked for the next resumption.
    std::vector<Dist> pred_result;
    std::optional<Error> pending_error;
    std::string io_result;
    Message received;

    std::vector<Tid> joiners;
    std::size_t join_remaining = 0;
    std::vector<KvHandle> offloaded;
};

}  // namespace detail

/// Discrete-event kernel executing LIPs on a virtual clock.
///
/// Threads run one at a time until they issue a blocking system call; all
/// thread execution takes zero virtual time. Virtual time advances only
/// through batch execution, tool I/O latencies, page transfers and process
/// arrivals. Given the same configuration and workload, the event trace is
/// reproduced exactly.
class Kernel {
public:
    explicit Kernel(KernelConfig config, std::shared_ptr<const ModelBackend> model = nullptr);
    ~Kernel();

    Kernel(const Kernel&) = delete;
    Kernel& operator=(const Kernel&) = delete;

    Pid spawn_lip(ThreadBody main, Principal owner = 0);
    /// Schedules a process arrival at virtual time `at` (>= now).
    Pid spawn_lip_at(VTime at, ThreadBody main, Principal owner = 0);
    void register_tool(std::string name, ToolSpec spec);

    /// Runs until no thread can make progress and no event is pending.
    RunSummary run();
    /// Rejects further spawns with KernelShuttingDown.
    void shutdown() noexcept { shutting_down_ = true; }

    VTime now() const noexcept { return now_; }
    Kvfs& kvfs() noexcept { return kvfs_; }
    const Kvfs& kvfs() const noexcept { return kvfs_; }
    const ModelBackend& model() const noexcept { return *model_; }
    const KernelConfig& config() const noexcept { return config_; }
    const Trace& trace() const noexcept { return trace_; }
    Trace take_trace() { return std::move(trace_); }

    ProcessInfo process(Pid pid) const;
    ThreadState thread_state(Tid tid) const;
    std::size_t inference_pool_size() const noexcept { return batcher_.pool_size(); }
    bool device_busy() const noexcept { return in_flight_.has_value(); }
    std::size_t live_processes() const noexcept { return live_; }

    /// Test hook: pushes an arbitrary event into the trace.
    void annotate(TraceEvent e);

private:
    friend class Sys;
    friend class PredCall;
    friend class IoCall;
    friend class JoinCall;
    friend class RecvCall;
    friend class YieldCall;

    struct Process {
        Pid pid = 0;
        Principal owner = 0;
        ThreadBody main;
        bool admitted = false;
        bool finished = false;
        int exit_status = 0;
        std::string error;
        std::vector<Tid> threads;
        std::size_t live_threads = 0;
        std::deque<Message> mailbox;
        std::deque<Tid> receivers;
    };

    enum class EventType { Arrival, IoComplete, Wake, BatchComplete, Deadline };
    struct Event {
        VTime time;
        std::uint64_t seq;
        EventType type;
        std::uint64_t ref;
        bool operator>(const Event& o) const { return time != o.time ? time > o.time : seq > o.seq; }
    };
    struct InFlight {
        Batch batch;
        std::vector<PredOutcome> outcomes;
    };
    struct IoWait {
        std::string tool;
        std::string payload;
    };

    Process& proc(Pid pid);
    detail::ThreadRec& thread(Tid tid);
    Tid new_thread(Process& p, ThreadBody body, Tid parent);
    void admit(Process& p);
    void set_state(detail::ThreadRec& t, ThreadState to, WaitReason reason = WaitReason::None);
    void make_ready(detail::ThreadRec& t);
    void run_thread(Tid tid);
    void finish_thread(detail::ThreadRec& t);
    void finish_process(Process& p);
    void schedule(VTime at, EventType type, std::uint64_t ref);
    void handle(const Event& e);
    void try_dispatch();
    void complete_batch();
    void complete_io(Tid tid);
    void emit(TraceEvent e);

    // Syscall back ends.
    void submit_pred(detail::ThreadRec& t, KvHandle kv, std::vector<TokenPos> tokens);
    void begin_io(detail::ThreadRec& t, const ToolSpec& spec, VTime latency, std::string tool, std::string payload);
    bool join_ready(detail::ThreadRec& t, std::optional<Tid> target);
    void begin_join(detail::ThreadRec& t, std::optional<Tid> target);
    void begin_recv(detail::ThreadRec& t);
    void begin_yield(detail::ThreadRec& t);
    bool file_busy(FileId file) const;

    KernelConfig config_;
    std::shared_ptr<const ModelBackend> model_;
    Kvfs kvfs_;
    BatchScheduler batcher_;
    ThreadScheduler runq_;
    Trace trace_;

    VTime now_ = 0;
    std::uint64_t event_seq_ = 0;
    std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
    std::optional<VTime> pending_deadline_;
    std::optional<InFlight> in_flight_;
    std::map<Pid, Process> procs_;
    std::unordered_map<Tid, std::unique_ptr<detail::ThreadRec>> threads_;
    std::unordered_map<Tid, IoWait> io_waits_;
    std::map<std::string, ToolSpec, std::less<>> tools_;
    std::deque<Pid> admission_;
    std::size_t live_ = 0;
    std::size_t batches_ = 0;
    Pid next_pid_ = 1;
    Tid next_tid_ = 1;
    std::uint64_t next_request_ = 1;
    Tid current_ = 0;
    bool shutting_down_ = false;
};

}  // namespace lipos
