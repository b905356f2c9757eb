// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace lipos {

using TokenId = std::uint32_t;
using Position = std::uint32_t;
using Fingerprint = std::uint64_t;
using Principal = std::uint32_t;
using Pid = std::uint64_t;
using Tid = std::uint64_t;

/// Virtual time in seconds.
using VTime = double;

struct TokenPos {
    TokenId token = 0;
    Position position = 0;

    friend bool operator==(const TokenPos&, const TokenPos&) = default;
};

enum class ThreadState : std::uint8_t { Ready, Running, BlockedOnPred, WaitingIO, Finished };

/// Why a WaitingIO thread is parked: tool I/O, a join, or an IPC receive.
enum class WaitReason : std::uint8_t { None, Io, Join, Recv };

std::string_view to_string(ThreadState s);
std::string_view to_string(WaitReason r);

/// Ready->Running; Running->{Ready, BlockedOnPred, WaitingIO, Finished};
/// BlockedOnPred->Ready; WaitingIO->Ready.
constexpr bool is_legal_transition(ThreadState from, ThreadState to) noexcept {
    using S = ThreadState;
    switch (from) {
        case S::Ready: return to == S::Running;
        case S::Running: return to == S::Ready || to == S::BlockedOnPred || to == S::WaitingIO || to == S::Finished;
        case S::BlockedOnPred: return to == S::Ready;
        case S::WaitingIO: return to == S::Ready;
        case S::Finished: return false;
    }
    return false;
}

/// Selects between the OpenMP kernels and their serial reference versions.
enum class ExecPolicy { Serial, Parallel };

enum class Errc {
    NameExists,
    NotFound,
    PermissionDenied,
    Locked,
    NotLockHolder,
    PoolExhausted,
    PositionConflict,
    IndexOutOfRange,
    BadHandle,
    NotResident,
    RestoreFailed,
    NoSuchThread,
    CrossProcessJoin,
    NoSuchProcess,
    NoSuchTool,
    KernelShuttingDown,
    DegenerateDist,
    DeadState,
    ArityMismatch,
    MalformedTrace,
    ConfigError,
    CorruptSnapshot,
};

std::string_view to_string(Errc code);

/// Error surfaced by any lipos operation. Operations that throw leave
/// observable state unchanged unless documented otherwise.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what);
    explicit Error(Errc code);

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
}

inline constexpr std::uint64_t kGoldenGamma = 0x9e3779b97f4a7c15ULL;

/// Maps 64 random bits to [0, 1) with 53 bits of precision.
constexpr double unit_interval(std::uint64_t bits) noexcept {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

}  // namespace lipos
