// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: run the prompt-caching experiment grid, execute
// the bundled example LIPs, or audit traces.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "lipos/audit.hpp"
#include "lipos/config.hpp"
#include "lipos/examples.hpp"
#include "lipos/sim.hpp"

namespace {

using namespace lipos;

struct RunArgs {
    std::vector<double> alphas;
    std::vector<std::string> rates;
    std::vector<std::string> policies;
    std::optional<std::size_t> docs;
    std::optional<std::size_t> doc_len;
    std::optional<double> duration;
    std::optional<std::uint64_t> seed;
    std::string config;
    std::string out;
    std::string json;
    std::string trace;
};

// A --rate value is either a label defined in the config ("high") or a
// number of requests per second.
NamedRate parse_rate(const std::string& text, const Config& c) {
    for (const auto& r : c.rates) {
        if (r.label == text) return r;
    }
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != text.size() || !(v > 0)) throw Error(Errc::ConfigError, "bad --rate '" + text + "'");
    return {text, v};
}

Config effective_config(const RunArgs& a) {
    Config c = a.config.empty() ? Config::defaults() : load_config(a.config);
    if (!a.alphas.empty()) c.alphas = a.alphas;
    if (!a.rates.empty()) {
        std::vector<NamedRate> rates;
        for (const auto& r : a.rates) rates.push_back(parse_rate(r, c));
        c.rates = rates;
    }
    if (!a.policies.empty()) {
        c.policies.clear();
        for (const auto& p : a.policies) c.policies.push_back(CachePolicy::parse(p));
    }
    if (a.docs) c.workload.num_docs = *a.docs;
    if (a.doc_len) c.workload.doc_len = *a.doc_len;
    if (a.duration) c.workload.duration = *a.duration;
    if (a.seed) c.workload.seed = *a.seed;
    c.validate();
    return c;
}

int cmd_run(const RunArgs& a) {
    const Config c = effective_config(a);
    const bool traces = !a.trace.empty();
    const auto result = run_experiment(c, traces);

    if (a.out.empty() || a.out == "-") {
        write_csv(std::cout, result);
    } else {
        std::ofstream f(a.out);
        write_csv(f, result);
    }
    if (!a.json.empty()) {
        std::ofstream f(a.json);
        write_json(f, result);
    }
    if (traces) {
        std::ofstream f(a.trace);
        write_traces(f, result);
    }
    int failed = 0;
    for (const auto& cell : result.cells) {
        if (!cell.error.empty()) {
            std::cerr << "cell alpha=" << cell.cell.alpha << " rate=" << cell.cell.rate.label
                      << " policy=" << cell.cell.policy.to_string() << " failed: " << cell.error << '\n';
            ++failed;
        }
    }
    return failed == 0 ? 0 : 1;
}

int cmd_examples() {
    int failed = 0;
    for (const auto& r : run_examples()) {
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
        failed += r.passed ? 0 : 1;
    }
    return failed == 0 ? 0 : 1;
}

int cmd_check(const std::string& trace_path, const std::string& config_path) {
    const Config c = config_path.empty() ? Config::defaults() : load_config(config_path);
    Trace trace;
    if (trace_path.empty()) {
        // Small self-contained workload when no trace is given.
        Config small = c;
        small.workload.num_docs = 10;
        small.workload.doc_len = 300;
        small.workload.duration = 2.0;
        small.alphas = {0.5};
        small.rates = {{"mid", 20.0}};
        small.policies = {CachePolicy::parse("topk:5")};
        auto result = run_experiment(small, true);
        trace = std::move(result.cells.front().trace);
    } else {
        std::ifstream in(trace_path);
        if (!in) throw Error(Errc::ConfigError, "cannot read trace " + trace_path);
        trace = Trace::read_jsonl(in);
    }
    const AuditLimits limits{c.kernel.scheduler, c.kernel.cost};
    int bad = 0;
    std::size_t run = 0;
    for (const auto& part : split_runs(trace)) {
        const auto report = audit_trace(part, limits);
        ++run;
        std::cout << "run " << run << ": " << part.size() << " events, " << report.checked.size() << " auditors, "
                  << report.violations.size() << " violations\n";
        for (const auto& v : report.violations) std::cout << "  [" << v.auditor << "] " << v.message << '\n';
        bad += report.ok() ? 0 : 1;
    }
    return bad == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lipos: LLM inference program kernel simulator"};
    app.require_subcommand(1);

    RunArgs run;
    auto* r = app.add_subcommand("run", "Run the prompt-caching experiment grid and emit CSV");
    r->add_option("--alpha", run.alphas, "Pareto index (repeatable)");
    r->add_option("--rate", run.rates, "Request rate: a config label or requests/s (repeatable)");
    r->add_option("--policy", run.policies, "none | baseline | topk:K | consecutive:N (repeatable)");
    r->add_option("--docs", run.docs, "Number of documents");
    r->add_option("--doc-len", run.doc_len, "Tokens per document");
    r->add_option("--duration", run.duration, "Virtual seconds of arrivals");
    r->add_option("--seed", run.seed, "Workload seed");
    r->add_option("--config", run.config, "JSON config file");
    r->add_option("--out", run.out, "CSV output path (default stdout)");
    r->add_option("--json", run.json, "JSON results path");
    r->add_option("--trace", run.trace, "JSON-lines trace output path");

    auto* ex = app.add_subcommand("examples", "Run the bundled example LIPs");

    std::string check_trace, check_config;
    auto* ck = app.add_subcommand("check", "Run the invariant auditors over a trace");
    ck->add_option("--trace", check_trace, "JSON-lines trace to audit (default: run a small workload)");
    ck->add_option("--config", check_config, "Config providing W_max and the cost model");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*r) return cmd_run(run);
        if (*ex) return cmd_examples();
        if (*ck) return cmd_check(check_trace, check_config);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
