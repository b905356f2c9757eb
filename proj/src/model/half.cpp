// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstring>

#include "lipos/model.hpp"

namespace lipos {

std::uint16_t to_half(double value) noexcept {
    const std::uint16_t sign = std::signbit(value) ? 0x8000 : 0;
    if (std::isnan(value)) return 0x7e00;
    const double a = std::fabs(value);
    if (a >= 65520.0) return sign | 0x7c00;
    if (a < std::ldexp(1.0, -14)) {
        // Subnormal: units of 2^-24. A rounded value of 1024 is the smallest
        // normal, whose encoding is the same bit pattern.
        const auto m = static_cast<std::uint16_t>(std::nearbyint(a * std::ldexp(1.0, 24)));
        return sign | m;
    }
    int k = 0;
    const double f = std::frexp(a, &k);  // a = f * 2^k, f in [0.5, 1)
    int exponent = k - 1;
    auto mant = static_cast<std::uint32_t>(std::nearbyint((2.0 * f - 1.0) * 1024.0));
    if (mant == 1024) {
        mant = 0;
        ++exponent;
    }
    if (exponent > 15) return sign | 0x7c00;
    return static_cast<std::uint16_t>(sign | ((exponent + 15) << 10) | mant);
}

double from_half(std::uint16_t bits) noexcept {
    const double sign = (bits & 0x8000) ? -1.0 : 1.0;
    const int exponent = (bits >> 10) & 0x1f;
    const int mant = bits & 0x3ff;
    if (exponent == 0) return sign * std::ldexp(mant, -24);
    if (exponent == 31) return mant ? std::nan("") : sign * INFINITY;
    return sign * std::ldexp(1024 + mant, exponent - 25);
}

}  // namespace lipos
