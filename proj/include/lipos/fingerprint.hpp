// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>

#include "lipos/common.hpp"

namespace lipos {

/// Extends a prefix digest by one (token, position) pair. The digest stands in
/// for the K/V state of a token: it depends on the token, its absolute
/// position, and everything before it.
constexpr Fingerprint chain_fingerprint(Fingerprint prev, TokenId token, Position position) noexcept {
    const std::uint64_t packed = (static_cast<std::uint64_t>(token) << 32) | position;
    return mix64(prev ^ packed);
}

/// Folds chain_fingerprint over a whole sequence starting at `seed`.
constexpr Fingerprint fold_fingerprint(Fingerprint seed, std::span<const TokenPos> seq) noexcept {
    Fingerprint f = seed;
    for (const auto& tp : seq) f = chain_fingerprint(f, tp.token, tp.position);
    return f;
}

}  // namespace lipos
