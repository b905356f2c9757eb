// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lipos/kernel.hpp"
#include "lipos/workload.hpp"

namespace lipos {

struct NamedRate {
    std::string label;
    double rate = 0;

    friend bool operator==(const NamedRate&, const NamedRate&) = default;
};

struct ToolConfig {
    std::string handler;  // one of builtin_tool_handlers()
    VTime latency = 0;
};

/// Everything a simulation run needs, loaded from one JSON document with
/// the blocks kvfs, model, scheduler, kernel, workload and tools.
struct Config {
    KernelConfig kernel;
    WorkloadSpec workload;
    std::vector<double> alphas{0.2, 0.6, 1.0, 1.4, 2.0};
    std::vector<NamedRate> rates{{"low", 5.0}, {"mid", 20.0}, {"high", 100.0}};
    std::vector<CachePolicy> policies{CachePolicy::parse("topk:20"), CachePolicy::parse("none"),
                                      CachePolicy::parse("baseline")};
    std::map<std::string, ToolConfig> tools{{"echo", {"echo", 0.05}}};

    /// Defaults used by the simulator, which differ from the bare kernel
    /// defaults only in the admission limit.
    static Config defaults();

    void validate() const;
};

/// Parses a JSON config; keys absent from the document keep their defaults.
/// Unknown keys and ill-typed values raise Error(ConfigError).
Config parse_config(const std::string& json_text);
Config load_config(const std::filesystem::path& path);

/// Canonical JSON rendering, used for the config echo and the run id.
std::string config_to_json(const Config& config, int indent = -1);

std::vector<std::string> builtin_tool_handlers();
/// Handlers are pure functions of the payload: echo, upper, reverse, length, weather.
ToolSpec builtin_tool(const ToolConfig& tool);

}  // namespace lipos
