// Copyright 2026 The lipos Authors
// SPDX-License-Identifier: Apache-2.0

#include "lipos/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace lipos {

using json = nlohmann::ordered_json;

Config Config::defaults() {
    Config c;
    c.kernel.max_live_processes = 256;
    c.kernel.finalize();
    return c;
}

void Config::validate() const {
    KernelConfig k = kernel;
    k.finalize();
    workload.validate();
    if (kernel.kvfs.page_size == 0) throw Error(Errc::ConfigError, "page_size must be >= 1");
    if (alphas.empty() || rates.empty() || policies.empty())
        throw Error(Errc::ConfigError, "grid needs at least one alpha, rate and policy");
    for (double a : alphas) {
        if (!(a > 0)) throw Error(Errc::ConfigError, "pareto alphas must be > 0");
    }
    for (const auto& r : rates) {
        if (!(r.rate > 0)) throw Error(Errc::ConfigError, "rate '" + r.label + "' must be > 0");
    }
    const auto handlers = builtin_tool_handlers();
    for (const auto& [name, t] : tools) {
        if (std::find(handlers.begin(), handlers.end(), t.handler) == handlers.end())
            throw Error(Errc::ConfigError, "tool '" + name + "' has unknown handler '" + t.handler + "'");
        if (!(t.latency >= 0)) throw Error(Errc::ConfigError, "tool '" + name + "' latency must be >= 0");
    }
}

namespace {

// Reads the keys of one JSON object block, rejecting anything unrecognized.
class Block {
public:
    Block(const nlohmann::json& root, const char* name) : name_(name) {
        if (root.contains(name)) {
            obj_ = &root.at(name);
            if (!obj_->is_object()) throw Error(Errc::ConfigError, std::string("block '") + name + "' must be an object");
        }
    }

    template <typename T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        if (!obj_ || !obj_->contains(key)) return;
        try {
            out = obj_->at(key).get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw Error(Errc::ConfigError, name_ + "." + key + ": " + e.what());
        }
    }

    const nlohmann::json* raw(const char* key) {
        seen_.insert(key);
        if (!obj_ || !obj_->contains(key)) return nullptr;
        return &obj_->at(key);
    }

    void finish() const {
        if (!obj_) return;
        for (const auto& [k, v] : obj_->items()) {
            if (!seen_.count(k)) throw Error(Errc::ConfigError, "unknown key '" + name_ + "." + k + "'");
        }
    }

private:
    std::string name_;
    const nlohmann::json* obj_ = nullptr;
    std::set<std::string> seen_;
};

}  // namespace

Config parse_config(const std::string& json_text) {
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::ConfigError, std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) throw Error(Errc::ConfigError, "config must be a JSON object");
    for (const auto& [k, v] : root.items()) {
        static const std::set<std::string> blocks{"kvfs", "model", "scheduler", "kernel", "workload", "tools"};
        if (!blocks.count(k)) throw Error(Errc::ConfigError, "unknown block '" + k + "'");
    }

    Config c = Config::defaults();
    auto& kc = c.kernel;

    Block kvfs(root, "kvfs");
    kvfs.read("page_size", kc.kvfs.page_size);
    kvfs.read("device_capacity_pages", kc.kvfs.device_capacity);
    kvfs.read("host_capacity_pages", kc.kvfs.host_capacity);
    kvfs.read("eager_tail_copy", kc.kvfs.eager_tail_copy);
    kvfs.read("audit_every_op", kc.kvfs.audit_every_op);
    kvfs.finish();

    Block model(root, "model");
    model.read("vocab_size", kc.model.vocab_size);
    model.read("eos_token", kc.model.eos_token);
    model.read("model_seed", kc.model.model_seed);
    model.read("temperature", kc.model.temperature);
    model.finish();

    Block sched(root, "scheduler");
    sched.read("W_max", kc.scheduler.max_wait);
    sched.read("B_max", kc.scheduler.max_batch);
    sched.read("alpha_ewma", kc.scheduler.ewma_alpha);
    sched.read("default_interarrival", kc.scheduler.default_interarrival);
    sched.read("min_interarrival", kc.scheduler.min_interarrival);
    sched.read("c0", kc.cost.c0);
    sched.read("c1", kc.cost.c1);
    sched.read("c2", kc.cost.c2);
    sched.read("transfer_cost", kc.cost.transfer_cost);
    // The scheduler block may also carry the device pool size; it overrides
    // the kvfs block when both are present.
    sched.read("device_capacity_pages", kc.kvfs.device_capacity);
    sched.finish();

    Block kern(root, "kernel");
    kern.read("offload_on_io", kc.offload_on_io);
    kern.read("max_live_processes", kc.max_live_processes);
    kern.read("record_trace", kc.record_trace);
    std::string exec = kc.exec == ExecPolicy::Serial ? "serial" : "parallel";
    kern.read("exec", exec);
    if (exec == "serial") {
        kc.exec = ExecPolicy::Serial;
    } else if (exec == "parallel") {
        kc.exec = ExecPolicy::Parallel;
    } else {
        throw Error(Errc::ConfigError, "kernel.exec must be 'serial' or 'parallel'");
    }
    kern.finish();

    Block wl(root, "workload");
    auto& w = c.workload;
    wl.read("num_docs", w.num_docs);
    wl.read("doc_len", w.doc_len);
    wl.read("query_len", w.query_len);
    wl.read("gen_len", w.gen_len);
    wl.read("duration", w.duration);
    wl.read("seed", w.seed);
    wl.read("pareto_alpha", w.pareto_alpha);
    wl.read("request_rate", w.request_rate);
    std::string pop = w.popularity == Popularity::OnePlus ? "one_plus" : "inverse";
    wl.read("popularity", pop);
    if (pop == "inverse") {
        w.popularity = Popularity::InverseAlpha;
    } else if (pop == "one_plus") {
        w.popularity = Popularity::OnePlus;
    } else {
        throw Error(Errc::ConfigError, "workload.popularity must be 'inverse' or 'one_plus'");
    }
    wl.read("pareto_alphas", c.alphas);
    if (const auto* rates = wl.raw("rates")) {
        if (!rates->is_object()) throw Error(Errc::ConfigError, "workload.rates must map labels to rates");
        c.rates.clear();
        // nlohmann::json sorts object keys; order the grid by rate instead.
        for (const auto& [label, v] : rates->items()) {
            if (!v.is_number()) throw Error(Errc::ConfigError, "workload.rates." + label + " must be a number");
            c.rates.push_back({label, v.get<double>()});
        }
        std::stable_sort(c.rates.begin(), c.rates.end(),
                         [](const NamedRate& a, const NamedRate& b) { return a.rate < b.rate; });
    }
    std::vector<std::string> policies;
    wl.read("policies", policies);
    if (!policies.empty()) {
        c.policies.clear();
        for (const auto& p : policies) c.policies.push_back(CachePolicy::parse(p));
    }
    wl.finish();

    if (root.contains("tools")) {
        const auto& tools = root.at("tools");
        if (!tools.is_object()) throw Error(Errc::ConfigError, "tools must be an object");
        c.tools.clear();
        for (const auto& [name, spec] : tools.items()) {
            Block b(tools, name.c_str());
            ToolConfig t;
            b.read("handler", t.handler);
            b.read("latency", t.latency);
            b.finish();
            c.tools[name] = t;
        }
    }

    c.kernel.finalize();
    c.validate();
    return c;
}

Config load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::ConfigError, "cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string config_to_json(const Config& c, int indent) {
    const auto& k = c.kernel;
    json j;
    j["kvfs"] = {{"page_size", k.kvfs.page_size},
                 {"device_capacity_pages", k.kvfs.device_capacity},
                 {"host_capacity_pages", k.kvfs.host_capacity},
                 {"eager_tail_copy", k.kvfs.eager_tail_copy},
                 {"audit_every_op", k.kvfs.audit_every_op}};
    j["model"] = {{"vocab_size", k.model.vocab_size},
                  {"eos_token", k.model.eos_token},
                  {"model_seed", k.model.model_seed},
                  {"temperature", k.model.temperature}};
    j["scheduler"] = {{"W_max", k.scheduler.max_wait},
                      {"B_max", k.scheduler.max_batch},
                      {"alpha_ewma", k.scheduler.ewma_alpha},
                      {"default_interarrival", k.scheduler.default_interarrival},
                      {"min_interarrival", k.scheduler.min_interarrival},
                      {"c0", k.cost.c0},
                      {"c1", k.cost.c1},
                      {"c2", k.cost.c2},
                      {"transfer_cost", k.cost.transfer_cost}};
    j["kernel"] = {{"offload_on_io", k.offload_on_io},
                   {"max_live_processes", k.max_live_processes},
                   {"record_trace", k.record_trace},
                   {"exec", k.exec == ExecPolicy::Serial ? "serial" : "parallel"}};
    json rates = json::object();
    for (const auto& r : c.rates) rates[r.label] = r.rate;
    json policies = json::array();
    for (const auto& p : c.policies) policies.push_back(p.to_string());
    const auto& w = c.workload;
    j["workload"] = {{"num_docs", w.num_docs},
                     {"doc_len", w.doc_len},
                     {"query_len", w.query_len},
                     {"gen_len", w.gen_len},
                     {"duration", w.duration},
                     {"seed", w.seed},
                     {"pareto_alpha", w.pareto_alpha},
                     {"request_rate", w.request_rate},
                     {"popularity", w.popularity == Popularity::OnePlus ? "one_plus" : "inverse"},
                     {"pareto_alphas", c.alphas},
                     {"rates", rates},
                     {"policies", policies}};
    json tools = json::object();
    for (const auto& [name, t] : c.tools) tools[name] = {{"handler", t.handler}, {"latency", t.latency}};
    j["tools"] = tools;
    return j.dump(indent);
}

std::vector<std::string> builtin_tool_handlers() { return {"echo", "upper", "reverse", "length", "weather"}; }

ToolSpec builtin_tool(const ToolConfig& tool) {
    ToolSpec s;
    s.latency = tool.latency;
    if (tool.handler == "echo") {
        s.handler = [](std::string_view p) { return std::string(p); };
    } else if (tool.handler == "upper") {
        s.handler = [](std::string_view p) {
            std::string out(p);
            for (char& ch : out) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
            return out;
        };
    } else if (tool.handler == "reverse") {
        s.handler = [](std::string_view p) { return std::string(p.rbegin(), p.rend()); };
    } else if (tool.handler == "length") {
        s.handler = [](std::string_view p) { return std::to_string(p.size()); };
    } else if (tool.handler == "weather") {
        // Deterministic stand-in for a weather API: the reading is a hash of the city.
        s.handler = [](std::string_view city) {
            std::uint64_t h = 0;
            for (char ch : city) h = mix64(h + static_cast<unsigned char>(ch));
            return std::string(city) + ": " + std::to_string(static_cast<int>(h % 40)) + "C";
        };
    } else {
        throw Error(Errc::ConfigError, "unknown tool handler '" + tool.handler + "'");
    }
    return s;
}

}  // namespace lipos
