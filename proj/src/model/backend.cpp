// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstring>

#include "lipos/fingerprint.hpp"
#include "lipos/model.hpp"

namespace lipos {

void ModelConfig::validate() const {
    if (vocab_size == 0) throw Error(Errc::ConfigError, "vocab_size must be positive");
    if (eos_token >= vocab_size) throw Error(Errc::ConfigError, "eos_token must be < vocab_size");
    if (!(temperature > 0.0)) throw Error(Errc::ConfigError, "model temperature must be positive");
}

ModelConfig ModelConfig::large_profile() {
    ModelConfig c;
    c.vocab_size = 100'000;
    return c;
}

Dist::Dist(Fingerprint context, std::shared_ptr<const ModelConfig> config) : state_(std::make_shared<State>()) {
    state_->context = context;
    state_->config = std::move(config);
}

Dist::Dist(std::vector<double> probs) : state_(std::make_shared<State>()) {
    state_->probs = std::move(probs);
    std::call_once(state_->once, [] {});
}

std::span<const double> Dist::probs() const {
    if (!state_) return {};
    std::call_once(state_->once, [s = state_.get()] {
        s->probs = next_dist_probs(s->context, *s->config);
        s->config.reset();
    });
    return state_->probs;
}

std::size_t Dist::size() const { return probs().size(); }

bool operator==(const Dist& a, const Dist& b) {
    const auto pa = a.probs();
    const auto pb = b.probs();
    return pa.size() == pb.size() && std::memcmp(pa.data(), pb.data(), pa.size_bytes()) == 0;
}

Dist next_dist(Fingerprint context, const ModelConfig& config) {
    return Dist(next_dist_probs(context, config));
}

std::vector<std::uint8_t> serialize_fp16(const Dist& dist) {
    const auto p = dist.probs();
    std::vector<std::uint8_t> out;
    out.reserve(kDistHeaderBytes + 2 * p.size());
    for (char c : {'D', 'S', 'T', '1'}) out.push_back(static_cast<std::uint8_t>(c));
    const auto n = static_cast<std::uint32_t>(p.size());
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(n >> (8 * i)));
    for (double v : p) {
        const std::uint16_t h = to_half(v);
        out.push_back(static_cast<std::uint8_t>(h & 0xff));
        out.push_back(static_cast<std::uint8_t>(h >> 8));
    }
    return out;
}

Dist deserialize_fp16(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kDistHeaderBytes || std::memcmp(bytes.data(), "DST1", 4) != 0)
        throw std::invalid_argument("not a serialized Dist");
    std::uint32_t n = 0;
    for (int i = 0; i < 4; ++i) n |= static_cast<std::uint32_t>(bytes[4 + i]) << (8 * i);
    if (bytes.size() != kDistHeaderBytes + 2 * static_cast<std::size_t>(n))
        throw std::invalid_argument("serialized Dist has wrong length");
    std::vector<double> p(n);
    for (std::uint32_t j = 0; j < n; ++j) {
        const auto lo = bytes[kDistHeaderBytes + 2 * j];
        const auto hi = bytes[kDistHeaderBytes + 2 * j + 1];
        p[j] = from_half(static_cast<std::uint16_t>(lo | (hi << 8)));
    }
    return Dist(std::move(p));
}

MockBackend::MockBackend(ModelConfig config) : config_(std::make_shared<const ModelConfig>(config)) {
    config_->validate();
}

PredOutput MockBackend::forward(Fingerprint context, std::span<const TokenPos> tokens) const {
    PredOutput out;
    out.entries.reserve(tokens.size());
    out.dists.reserve(tokens.size());
    Fingerprint f = context;
    for (const auto& tp : tokens) {
        f = chain_fingerprint(f, tp.token, tp.position);
        out.entries.push_back({tp.token, tp.position, f});
        out.dists.emplace_back(f, config_);
    }
    return out;
}

std::vector<Dist> compute_pred(Kvfs& kvfs, const ModelBackend& model, const Caller& caller, KvHandle kv,
                               std::span<const TokenPos> tokens) {
    if (tokens.empty()) return {};
    PredOutput out = model.forward(kvfs.tail_fingerprint(caller, kv), tokens);
    kvfs.append(caller, kv, out.entries);
    return std::move(out.dists);
}

std::vector<Dist> oracle_from_scratch(std::span<const TokenPos> sequence, const ModelConfig& config) {
    std::vector<Dist> out;
    out.reserve(sequence.size());
    for (std::size_t i = 0; i < sequence.size(); ++i) {
        const Fingerprint digest = fold_fingerprint(config.model_seed, sequence.first(i + 1));
        out.emplace_back(next_dist_reference(digest, config));
    }
    return out;
}

}  // namespace lipos
