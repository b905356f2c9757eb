// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#include "lipos/common.hpp"

namespace lipos {

std::string_view to_string(Errc code) {
    switch (code) {
        case Errc::NameExists: return "NameExists";
        case Errc::NotFound: return "NotFound";
        case Errc::PermissionDenied: return "PermissionDenied";
        case Errc::Locked: return "Locked";
        case Errc::NotLockHolder: return "NotLockHolder";
        case Errc::PoolExhausted: return "PoolExhausted";
        case Errc::PositionConflict: return "PositionConflict";
        case Errc::IndexOutOfRange: return "IndexOutOfRange";
        case Errc::BadHandle: return "BadHandle";
        case Errc::NotResident: return "NotResident";
        case Errc::RestoreFailed: return "RestoreFailed";
        case Errc::NoSuchThread: return "NoSuchThread";
        case Errc::CrossProcessJoin: return "CrossProcessJoin";
        case Errc::NoSuchProcess: return "NoSuchProcess";
        case Errc::NoSuchTool: return "NoSuchTool";
        case Errc::KernelShuttingDown: return "KernelShuttingDown";
        case Errc::DegenerateDist: return "DegenerateDist";
        case Errc::DeadState: return "DeadState";
        case Errc::ArityMismatch: return "ArityMismatch";
        case Errc::MalformedTrace: return "MalformedTrace";
        case Errc::ConfigError: return "ConfigError";
        case Errc::CorruptSnapshot: return "CorruptSnapshot";
    }
    return "Unknown";
}

std::string_view to_string(ThreadState s) {
    switch (s) {
        case ThreadState::Ready: return "Ready";
        case ThreadState::Running: return "Running";
        case ThreadState::BlockedOnPred: return "BlockedOnPred";
        case ThreadState::WaitingIO: return "WaitingIO";
        case ThreadState::Finished: return "Finished";
    }
    return "Unknown";
}

std::string_view to_string(WaitReason r) {
    switch (r) {
        case WaitReason::None: return "none";
        case WaitReason::Io: return "io";
        case WaitReason::Join: return "join";
        case WaitReason::Recv: return "recv";
    }
    return "unknown";
}

Error::Error(Errc code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

Error::Error(Errc code) : std::runtime_error(std::string(to_string(code))), code_(code) {}

}  // namespace lipos
