#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <sys/wait.h>
#include <variant>
#include <vector>

#include <json.hpp>

#include "sipa/checkpoint.hpp"
#include "sipa/common.hpp"
#include "sipa/model_ir.hpp"
#include "sipa/prune.hpp"

namespace sipa {

using Value = std::variant<int64_t, double, std::string>;
using Point = std::vector<std::pair<std::string, Value>>;

inline ordered_json value_to_json(const Value& v) {
    if (std::holds_alternative<int64_t>(v)) return std::get<int64_t>(v);
    if (std::holds_alternative<double>(v)) return std::get<double>(v);
    return std::get<std::string>(v);
}

inline Value value_from_json(const ordered_json& j) {
    if (j.is_number_integer()) return j.get<int64_t>();
    if (j.is_number_float()) return j.get<double>();
    if (j.is_string()) return j.get<std::string>();
    throw ParseError("value must be a number or string");
}

inline ordered_json point_to_json(const Point& p) {
    ordered_json j = ordered_json::object();
    for (const auto& [name, v] : p) j[name] = value_to_json(v);
    return j;
}

inline Point point_from_json(const ordered_json& j) {
    Point p;
    for (auto it = j.begin(); it != j.end(); ++it) p.emplace_back(it.key(), value_from_json(it.value()));
    return p;
}

enum class MethodCategory { general_training, structural, loss_related, other };

inline MethodCategory parse_method_category(const std::string& s) {
    if (s == "general-training") return MethodCategory::general_training;
    if (s == "structural") return MethodCategory::structural;
    if (s == "loss-related") return MethodCategory::loss_related;
    if (s == "other") return MethodCategory::other;
    throw ValidationError("unknown method category '" + s + "'");
}

inline std::string method_category_name(MethodCategory c) {
    switch (c) {
        case MethodCategory::general_training: return "general-training";
        case MethodCategory::structural: return "structural";
        case MethodCategory::loss_related: return "loss-related";
        case MethodCategory::other: return "other";
    }
    return "other";
}

/// A togglable training method. `config` is an opaque payload forwarded to
/// the evaluator untouched.
struct MethodCandidate {
    std::string name;
    MethodCategory category = MethodCategory::other;
    std::string config;
};

inline std::vector<MethodCandidate> parse_methods(const std::string& text) {
    ordered_json doc;
    try {
        doc = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("methods file: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("methods") || !doc.at("methods").is_array())
        throw ValidationError("methods file: expected an object with a 'methods' array");
    std::vector<MethodCandidate> out;
    for (const auto& jm : doc.at("methods")) {
        MethodCandidate m;
        m.name = jm.at("name").get<std::string>();
        m.category = parse_method_category(jm.value("category", std::string("other")));
        m.config = jm.value("config", std::string());
        out.push_back(std::move(m));
    }
    return out;
}

/// Everything an external evaluator gets to see for one call, serialized to
/// a JSON document whose path is the command's single argument.
struct TrialConfig {
    std::string stage;  // "search", "improve" or "prune-retrain"
    int index = 0;
    uint64_t seed = 0;
    Point point;
    std::optional<ModelSpec> model;
    std::vector<MethodCandidate> methods;
    std::string ckpt_in;
    std::string ckpt_out;
    double target_sparsity = 0.0;
    int round = 0;
    std::string extra;

    ordered_json to_json() const {
        ordered_json j;
        j["stage"] = stage;
        j["index"] = index;
        j["seed"] = seed;
        if (!point.empty()) j["point"] = point_to_json(point);
        if (model) j["model"] = ordered_json::parse(serialize_model_spec(*model));
        if (!methods.empty()) {
            j["methods"] = ordered_json::array();
            for (const auto& m : methods) {
                ordered_json jm;
                jm["name"] = m.name;
                jm["category"] = method_category_name(m.category);
                if (!m.config.empty()) jm["config"] = m.config;
                j["methods"].push_back(std::move(jm));
            }
        }
        if (!ckpt_in.empty()) j["ckpt_in"] = ckpt_in;
        if (!ckpt_out.empty()) j["ckpt_out"] = ckpt_out;
        if (target_sparsity > 0.0) j["target_sparsity"] = target_sparsity;
        if (round > 0) j["round"] = round;
        if (!extra.empty()) j["extra"] = extra;
        return j;
    }
};

using Evaluator = std::function<double(const TrialConfig&)>;

namespace detail {

inline std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'')
            out += "'\\''";
        else
            out += c;
    }
    out += "'";
    return out;
}

/// Runs a command through the shell, returning (exit status, stdout).
inline std::pair<int, std::string> run_command(const std::string& command) {
    FILE* pipe = ::popen(command.c_str(), "r");
    if (!pipe) throw EvaluatorError("cannot launch evaluator command: " + command);
    std::string output;
    char buf[4096];
    size_t got;
    while ((got = std::fread(buf, 1, sizeof(buf), pipe)) > 0) output.append(buf, got);
    const int status = ::pclose(pipe);
    const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return {code, output};
}

inline std::string last_nonempty_line(const std::string& text) {
    size_t end = text.size();
    while (end > 0) {
        size_t start = text.find_last_of('\n', end - 1);
        const size_t from = start == std::string::npos ? 0 : start + 1;
        std::string line = text.substr(from, end - from);
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty()) return line;
        if (start == std::string::npos) break;
        end = start;
    }
    return {};
}

inline double parse_accuracy(const std::string& output, const std::string& command) {
    const std::string line = last_nonempty_line(output);
    if (line.empty()) throw EvaluatorError("evaluator produced no output: " + command);
    char* parse_end = nullptr;
    const double acc = std::strtod(line.c_str(), &parse_end);
    if (parse_end == line.c_str()) throw EvaluatorError("evaluator's last output line is not a number: '" + line + "'");
    if (!(acc >= 0.0 && acc <= 1.0))
        throw EvaluatorError("evaluator accuracy out of [0, 1]: '" + line + "'");
    return acc;
}

}  // namespace detail

/// Wraps an external command as an evaluator. Each call writes
/// `<workdir>/eval-<stage>-<index>.json` and runs `command <path>`. The
/// command must print an accuracy in [0, 1] as the last line of stdout;
/// nonzero exit status is a failure.
inline Evaluator make_command_evaluator(std::string command, std::string workdir) {
    return [command = std::move(command), workdir = std::move(workdir)](const TrialConfig& cfg) {
        const std::string path =
            workdir + "/eval-" + cfg.stage + "-" + std::to_string(cfg.index) + ".json";
        {
            std::ofstream os(path);
            if (!os) throw EvaluatorError("cannot write evaluator config '" + path + "'");
            os << cfg.to_json().dump(2) << "\n";
        }
        const std::string full = command + " " + detail::shell_quote(path);
        auto [code, output] = detail::run_command(full);
        if (code != 0)
            throw EvaluatorError("evaluator exited with status " + std::to_string(code) + ": " + full);
        return detail::parse_accuracy(output, full);
    };
}

/// Adapts a command evaluator into a prune retrain hook. The pruned
/// checkpoint is written next to the config; if the command writes a
/// fine-tuned checkpoint to `ckpt_out`, that one is loaded back, otherwise
/// the pruned weights are reused unchanged (pure-scoring evaluators).
inline RetrainHook make_command_retrain_hook(std::string command, std::string workdir) {
    return [command = std::move(command), workdir = std::move(workdir)](int round, double target,
                                                                        const Checkpoint& pruned) {
        TrialConfig cfg;
        cfg.stage = "prune-retrain";
        cfg.index = round;
        cfg.round = round;
        cfg.target_sparsity = target;
        cfg.ckpt_in = workdir + "/retrain-round-" + std::to_string(round) + "-in.sipa";
        cfg.ckpt_out = workdir + "/retrain-round-" + std::to_string(round) + "-out.sipa";
        write_checkpoint(cfg.ckpt_in, pruned);

        const Evaluator eval = make_command_evaluator(command, workdir);
        RetrainOutcome outcome;
        outcome.accuracy = eval(cfg);
        if (std::ifstream probe(cfg.ckpt_out, std::ios::binary); probe.good())
            outcome.ckpt = read_checkpoint(cfg.ckpt_out);
        else
            outcome.ckpt = pruned;
        return outcome;
    };
}

}  // namespace sipa
