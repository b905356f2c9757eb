// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lipos/config.hpp"
#include "lipos/kernel.hpp"
#include "lipos/trace.hpp"
#include "lipos/workload.hpp"

namespace lipos {

/// KVFS name under which a retained document's cache lives.
std::string doc_file_name(std::uint32_t doc);

/// State shared by every RAG request of one simulation run. LIPs of one
/// kernel run on a single host thread, so no locking is needed.
struct RagShared {
    WorkloadSpec spec;
    CachePolicy policy;
    std::vector<std::vector<TokenId>> docs;
    std::vector<std::uint64_t> counts;
    std::set<std::uint32_t> retained;
    std::optional<std::uint32_t> last_doc;
    std::size_t streak = 0;

    RagShared(const WorkloadSpec& spec, CachePolicy policy, std::uint32_t vocab_size);

    /// Bumps the running popularity count and the consecutive-request
    /// streak; returns the streak length including this request.
    std::size_t note_request(std::uint32_t doc);
    /// Retained doc with the lowest running count (ties: the higher id).
    std::optional<std::uint32_t> least_popular_retained() const;
};

/// Serves one request with prompt caching under `st->policy`.
ThreadBody rag_lip(std::shared_ptr<RagShared> st, Request req);
/// Serves one request statelessly: prefill doc + query from scratch, no
/// KVFS lookup, nothing retained.
ThreadBody baseline_lip(std::shared_ptr<RagShared> st, Request req);

struct CellSpec {
    double alpha = 1.0;
    NamedRate rate;
    CachePolicy policy;
};

struct CellResult {
    CellSpec cell;
    Metrics metrics;
    std::string run_id;
    std::string error;  // empty on success
    std::size_t requests = 0;
    std::size_t stuck_threads = 0;
    double norm_throughput = 0;  // relative to the baseline policy at the same alpha and load
    double norm_latency = 0;
    Trace trace;  // kept only when requested
};

/// Stable hex digest of the config and cell, in the style of a short commit id.
std::string run_id(const Config& config, const CellSpec& cell);

CellResult run_cell(const Config& config, const CellSpec& cell, bool keep_trace = false);

struct ExperimentResult {
    std::string config_json;
    std::vector<CellResult> cells;
};

/// Runs alphas x rates x policies. Cells execute in parallel on independent
/// kernels and are reported in grid order; a failing cell records its error
/// and the grid continues.
ExperimentResult run_experiment(const Config& config, bool keep_traces = false);

std::vector<CellSpec> grid_cells(const Config& config);

void write_csv(std::ostream& out, const ExperimentResult& result);
void write_json(std::ostream& out, const ExperimentResult& result);
/// Concatenated JSON-lines traces of all cells, each opened by a run_start record.
void write_traces(std::ostream& out, const ExperimentResult& result);

}  // namespace lipos
