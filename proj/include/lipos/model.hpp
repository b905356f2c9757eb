// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "lipos/common.hpp"
#include "lipos/kvfs.hpp"

namespace lipos {

struct ModelConfig {
    std::uint32_t vocab_size = 256;
    TokenId eos_token = 0;
    std::uint64_t model_seed = 0x243f6a8885a308d3ULL;
    /// Divides the mock logits before the softmax.
    double temperature = 1.0;

    /// Throws Error(ConfigError) if the fields are inconsistent.
    void validate() const;

    /// 100,000-token vocabulary, the size of a modern production tokenizer.
    static ModelConfig large_profile();
};

/// Next-token probability vector of vocabulary length.
///
/// A Dist produced by the model is lazy: it records the context digest and
/// materializes probabilities on first access. Copies share the
/// materialized vector, so the cost is paid once per distinct Dist.
class Dist {
public:
    Dist() = default;
    Dist(Fingerprint context, std::shared_ptr<const ModelConfig> config);
    explicit Dist(std::vector<double> probs);

    std::span<const double> probs() const;
    std::size_t size() const;
    double operator[](std::size_t i) const { return probs()[i]; }

    /// Bitwise comparison of the probability vectors.
    friend bool operator==(const Dist& a, const Dist& b);

private:
    struct State {
        Fingerprint context = 0;
        std::shared_ptr<const ModelConfig> config;
        std::once_flag once;
        std::vector<double> probs;
    };
    std::shared_ptr<State> state_;
};

/// Block length of the softmax normalization sum. Both the serial and the
/// parallel kernel accumulate per-block partials in index order and then sum
/// the partials in block order, so their results are bitwise identical.
inline constexpr std::size_t kSoftmaxBlock = 4096;

/// Mock logit for vocabulary entry `j`, uniform in [-1, 1).
double mock_logit(Fingerprint context, std::uint32_t j) noexcept;

/// Next-token distribution for a context digest.
std::vector<double> next_dist_probs(Fingerprint context, const ModelConfig& config,
                                    ExecPolicy policy = ExecPolicy::Parallel);

/// Serial reference for next_dist_probs.
std::vector<double> next_dist_reference(Fingerprint context, const ModelConfig& config);

Dist next_dist(Fingerprint context, const ModelConfig& config);

/// IEEE 754 binary16 encoding, round to nearest even.
std::uint16_t to_half(double value) noexcept;
double from_half(std::uint16_t bits) noexcept;

/// Wire form of a Dist: "DST1", u32 vocab size, then one binary16 per entry.
inline constexpr std::size_t kDistHeaderBytes = 8;
std::vector<std::uint8_t> serialize_fp16(const Dist& dist);
Dist deserialize_fp16(std::span<const std::uint8_t> bytes);

struct PredOutput {
    std::vector<KvEntry> entries;
    std::vector<Dist> dists;
};

/// Model side of the `pred` system call. Implementations must be pure: the
/// output depends only on the context digest and the tokens.
class ModelBackend {
public:
    virtual ~ModelBackend() = default;
    virtual const ModelConfig& config() const = 0;
    /// Consumes `tokens` after a context with digest `context`, producing one
    /// cache entry and one next-token distribution per token.
    virtual PredOutput forward(Fingerprint context, std::span<const TokenPos> tokens) const = 0;
};

/// Hash-chain stand-in for a transformer.
class MockBackend final : public ModelBackend {
public:
    explicit MockBackend(ModelConfig config);

    const ModelConfig& config() const override { return *config_; }
    PredOutput forward(Fingerprint context, std::span<const TokenPos> tokens) const override;

private:
    std::shared_ptr<const ModelConfig> config_;
};

/// Runs `tokens` through the model on top of the cached context in `kv`,
/// appends the new entries, and returns one Dist per token.
std::vector<Dist> compute_pred(Kvfs& kvfs, const ModelBackend& model, const Caller& caller, KvHandle kv,
                               std::span<const TokenPos> tokens);

/// Recomputes every distribution of `sequence` from an empty context with
/// no cache, using the serial reference kernel.
std::vector<Dist> oracle_from_scratch(std::span<const TokenPos> sequence, const ModelConfig& config);

}  // namespace lipos
