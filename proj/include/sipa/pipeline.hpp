#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sipa/checkpoint.hpp"
#include "sipa/common.hpp"
#include "sipa/cost_model.hpp"
#include "sipa/evaluator.hpp"
#include "sipa/evalset.hpp"
#include "sipa/exit_planner.hpp"
#include "sipa/model_ir.hpp"
#include "sipa/prune.hpp"
#include "sipa/report.hpp"
#include "sipa/search.hpp"

namespace sipa {

struct SearchStageConfig {
    bool enabled = false;
    std::string mode = "scaling";    // "scaling" | "blocks"
    std::string algorithm = "smbo";  // "smbo" | "random"
    SearchSpace space;
    std::string evaluator;
    int trials = 20;
    int warmup = 5;
    FitnessParams fitness;
};

struct ImproveStageConfig {
    bool enabled = false;
    std::vector<MethodCandidate> methods;
    std::string evaluator;
    int repeats = 1;
    double margin = 0.0;
};

struct PruneStageConfig {
    bool enabled = false;
    std::string ckpt;  // empty: build a seeded skeleton from the current spec
    PruneSchedule schedule;
    PruneConfig config;
    std::string retrain;  // empty: keep pruned weights, accuracy unknown
};

struct AccelerateStageConfig {
    bool enabled = false;
    std::string eval_path;
    int head = 0;
    double accuracy_floor = 0.0;
    std::vector<double> thresholds;  // optional extra sweep, logged only
};

struct PipelineConfig {
    ModelSpec base;
    std::string out = "artifacts";
    uint64_t seed = 0;
    bool score_stage = false;
    SearchStageConfig search;
    ImproveStageConfig improve;
    PruneStageConfig prune;
    AccelerateStageConfig accelerate;
};

namespace detail {

inline std::string resolve_path(const std::string& base_dir, const std::string& path) {
    if (path.empty() || base_dir.empty()) return path;
    if (std::filesystem::path(path).is_absolute()) return path;
    return (std::filesystem::path(base_dir) / path).string();
}

inline void reject_unknown_keys_list(const ordered_json& obj, std::initializer_list<const char*> known,
                                     const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : known)
            if (it.key() == k) ok = true;
        if (!ok) throw ValidationError(where + ": unknown key '" + it.key() + "'");
    }
}

}  // namespace detail

/// Parses a pipeline config document. Paths are resolved relative to
/// `config_dir` (the config file's directory). Top-level keys: `base_spec`,
/// `out`, `seed`, `stages`; stages: `score`, `search`, `improve`, `prune`,
/// `accelerate` (any subset).
inline PipelineConfig parse_pipeline_config(const std::string& text, const std::string& config_dir = {}) {
    ordered_json doc;
    try {
        doc = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("pipeline config: ") + e.what());
    }
    if (!doc.is_object()) throw ValidationError("pipeline config: top level must be an object");
    detail::reject_unknown_keys_list(doc, {"base_spec", "out", "seed", "stages"}, "pipeline config");
    if (!doc.contains("base_spec")) throw ValidationError("pipeline config: missing 'base_spec'");

    PipelineConfig cfg;
    cfg.base = parse_model_spec(read_text_file(detail::resolve_path(config_dir, doc.at("base_spec").get<std::string>())));
    if (doc.contains("out")) cfg.out = detail::resolve_path(config_dir, doc.at("out").get<std::string>());
    if (doc.contains("seed")) cfg.seed = doc.at("seed").get<uint64_t>();
    if (!doc.contains("stages")) return cfg;

    const auto& stages = doc.at("stages");
    detail::reject_unknown_keys_list(stages, {"score", "search", "improve", "prune", "accelerate"},
                                     "pipeline config stages");

    cfg.score_stage = stages.contains("score");

    if (stages.contains("search")) {
        const auto& js = stages.at("search");
        detail::reject_unknown_keys_list(
            js, {"mode", "algorithm", "space", "evaluator", "trials", "warmup", "penalty_weight", "w", "thres", "metric"},
            "search stage");
        auto& s = cfg.search;
        s.enabled = true;
        s.mode = js.value("mode", std::string("scaling"));
        if (s.mode != "scaling" && s.mode != "blocks")
            throw ValidationError("search stage: mode must be 'scaling' or 'blocks'");
        s.algorithm = js.value("algorithm", std::string("smbo"));
        if (s.algorithm != "smbo" && s.algorithm != "random")
            throw ValidationError("search stage: algorithm must be 'smbo' or 'random'");
        if (!js.contains("space")) throw ValidationError("search stage: missing 'space'");
        if (js.at("space").is_string())
            s.space = parse_search_space(read_text_file(detail::resolve_path(config_dir, js.at("space").get<std::string>())));
        else
            s.space = parse_search_space(js.at("space").dump());
        if (!js.contains("evaluator")) throw ValidationError("search stage: missing 'evaluator'");
        s.evaluator = js.at("evaluator").get<std::string>();
        s.trials = js.value("trials", 20);
        s.warmup = js.value("warmup", 5);
        s.fitness.penalty_weight = js.value("penalty_weight", s.fitness.penalty_weight);
        s.fitness.w = js.value("w", s.fitness.w);
        s.fitness.thres = js.value("thres", s.fitness.thres);
        s.fitness.metric = parse_metric(js.value("metric", std::string("total")));
    }

    if (stages.contains("improve")) {
        const auto& ji = stages.at("improve");
        detail::reject_unknown_keys_list(ji, {"methods", "evaluator", "repeats", "margin"}, "improve stage");
        auto& s = cfg.improve;
        s.enabled = true;
        if (!ji.contains("methods")) throw ValidationError("improve stage: missing 'methods'");
        if (ji.at("methods").is_string())
            s.methods = parse_methods(read_text_file(detail::resolve_path(config_dir, ji.at("methods").get<std::string>())));
        else
            s.methods = parse_methods(ordered_json{{"methods", ji.at("methods")}}.dump());
        if (!ji.contains("evaluator")) throw ValidationError("improve stage: missing 'evaluator'");
        s.evaluator = ji.at("evaluator").get<std::string>();
        s.repeats = ji.value("repeats", 1);
        s.margin = ji.value("margin", 0.0);
    }

    if (stages.contains("prune")) {
        const auto& jp = stages.at("prune");
        detail::reject_unknown_keys_list(
            jp, {"ckpt", "schedule", "retrain", "granularity", "scope", "normalization", "exclusions"}, "prune stage");
        auto& s = cfg.prune;
        s.enabled = true;
        if (jp.contains("ckpt")) s.ckpt = detail::resolve_path(config_dir, jp.at("ckpt").get<std::string>());
        if (!jp.contains("schedule")) throw ValidationError("prune stage: missing 'schedule'");
        if (jp.at("schedule").is_string()) {
            if (jp.at("schedule").get<std::string>() != "iterative")
                throw ValidationError("prune stage: schedule must be an array or \"iterative\"");
            s.schedule = iterative_schedule();
        } else {
            for (const auto& t : jp.at("schedule")) s.schedule.rounds.push_back(t.get<double>());
        }
        validate(s.schedule);
        if (jp.contains("retrain")) s.retrain = jp.at("retrain").get<std::string>();
        if (jp.contains("granularity")) s.config.granularity = parse_prune_granularity(jp.at("granularity").get<std::string>());
        if (jp.contains("scope")) s.config.scope = parse_prune_scope(jp.at("scope").get<std::string>());
        if (jp.contains("normalization")) s.config.normalization = parse_prune_norm(jp.at("normalization").get<std::string>());
        if (jp.contains("exclusions")) {
            s.config.exclusions.clear();
            for (const auto& e : jp.at("exclusions")) s.config.exclusions.push_back(e.get<std::string>());
        }
    }

    if (stages.contains("accelerate")) {
        const auto& ja = stages.at("accelerate");
        detail::reject_unknown_keys_list(ja, {"eval", "head", "accuracy_floor", "thresholds"}, "accelerate stage");
        auto& s = cfg.accelerate;
        s.enabled = true;
        if (!ja.contains("eval")) throw ValidationError("accelerate stage: missing 'eval'");
        s.eval_path = detail::resolve_path(config_dir, ja.at("eval").get<std::string>());
        s.head = ja.value("head", 0);
        s.accuracy_floor = ja.value("accuracy_floor", 0.0);
        if (ja.contains("thresholds"))
            for (const auto& t : ja.at("thresholds")) s.thresholds.push_back(t.get<double>());
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Point application

/// Turns a scaling-mode search point (keys alpha, beta, gamma, phi; missing
/// keys default to 1) into a scaled spec.
inline ModelSpec apply_scaling_point(const ModelSpec& base, const Point& point) {
    ScalingCoefficients c{1.0, 1.0, 1.0, 1.0};
    for (const auto& [name, v] : point) {
        const double x = std::holds_alternative<int64_t>(v) ? static_cast<double>(std::get<int64_t>(v))
                                                            : std::get<double>(v);
        if (name == "alpha")
            c.alpha = x;
        else if (name == "beta")
            c.beta = x;
        else if (name == "gamma")
            c.gamma = x;
        else if (name == "phi")
            c.phi = x;
        else
            throw ValidationError("scaling point: unknown coefficient '" + name + "'");
    }
    return apply_compound_scaling(base, c);
}

/// Turns a blocks-mode search point into a spec: dimension names
/// "b<g>.<field>" override block-group fields (k, e, o, se, r), then channel
/// chaining is re-established.
inline ModelSpec apply_blocks_point(const ModelSpec& base, const Point& point) {
    ModelSpec out = base;
    for (const auto& [name, v] : point) {
        const size_t dot = name.find('.');
        if (name.size() < 4 || name[0] != 'b' || dot == std::string::npos)
            throw ValidationError("blocks point: dimension '" + name + "' is not of the form b<g>.<field>");
        size_t g = 0;
        try {
            g = static_cast<size_t>(std::stoul(name.substr(1, dot - 1)));
        } catch (...) {
            throw ValidationError("blocks point: bad block index in '" + name + "'");
        }
        if (g >= out.blocks.size()) throw ValidationError("blocks point: block index out of range in '" + name + "'");
        const std::string field = name.substr(dot + 1);
        BlockArgs& b = out.blocks[g];
        const double x = std::holds_alternative<int64_t>(v) ? static_cast<double>(std::get<int64_t>(v))
                                                            : std::get<double>(v);
        if (field == "k")
            b.k = static_cast<int>(x);
        else if (field == "e")
            b.e = x;
        else if (field == "o")
            b.o = static_cast<int>(x);
        else if (field == "se")
            b.se = x;
        else if (field == "r")
            b.r = static_cast<int>(x);
        else
            throw ValidationError("blocks point: unknown field '" + field + "'");
    }
    int prev = out.stem.o;
    for (auto& b : out.blocks) {
        b.i = prev;
        prev = b.o;
    }
    for (auto& ex : out.exits) {
        int eprev = out.blocks[static_cast<size_t>(ex.after_block)].o;
        for (auto& b : ex.blocks) {
            b.i = eprev;
            eprev = b.o;
        }
    }
    validate(out);
    return out;
}

// ---------------------------------------------------------------------------
// End-to-end run

struct PipelineResult {
    std::vector<StageRecord> records;
    std::optional<ExitPlan> plan;
    std::string out_dir;
};

inline ordered_json exit_plan_to_json(const ExitPlan& plan) {
    ordered_json j;
    j["head"] = plan.head;
    j["threshold"] = plan.threshold;
    j["exit_ratio"] = plan.exit_ratio;
    j["total_accuracy"] = plan.total_accuracy;
    j["expected_ops"] = plan.expected_ops;
    j["op_score"] = plan.op_score;
    j["feasible"] = plan.feasible;
    return j;
}

namespace detail {

inline StageRecord record_from(Stage stage, const CostReport& cost, std::optional<double> accuracy) {
    StageRecord r;
    r.stage = stage;
    r.accuracy = accuracy;
    r.params_raw = cost.params_raw;
    r.params_effective = cost.params_effective;
    r.mults = cost.mults;
    r.adds = cost.adds;
    return r;
}

inline void persist_record(const std::string& out, const StageRecord& r) {
    write_stage_record(out + "/stages/" + stage_name(r.stage) + ".record", r);
}

}  // namespace detail

/// Runs the configured stages in order (search, improve, prune, accelerate),
/// persisting stage records, the trial log, per-round checkpoints, and the
/// exit plan under the artifacts directory. A stage failure throws after the
/// preceding artifacts are on disk. Wall-clock durations go to a separate
/// side log so everything else is byte-reproducible.
inline PipelineResult run_pipeline(const PipelineConfig& cfg, int jobs = 1) {
    namespace fs = std::filesystem;
    PipelineResult result;
    result.out_dir = cfg.out;
    fs::create_directories(cfg.out);
    fs::create_directories(cfg.out + "/stages");

    const CountingRules rules;
    ModelSpec current = cfg.base;
    validate(current);

    // The score stage and the search stage both produce the searching-stage
    // record (the counted model entering the pipeline); when search runs, its
    // result supersedes the bare base-spec count.
    if (cfg.score_stage && !cfg.search.enabled) {
        const StageRecord r = detail::record_from(Stage::searching, count(expand(current), rules), std::nullopt);
        detail::persist_record(cfg.out, r);
        result.records.push_back(r);
    }

    if (cfg.search.enabled) {
        const Evaluator eval = make_command_evaluator(cfg.search.evaluator, cfg.out);
        auto candidate_spec = [&](const Point& p) {
            return cfg.search.mode == "scaling" ? apply_scaling_point(cfg.base, p) : apply_blocks_point(cfg.base, p);
        };
        const AccuracyFn accuracy_fn = [&](int index, const Point& p) {
            TrialConfig tc;
            tc.stage = "search";
            tc.index = index;
            tc.seed = derive_seed(cfg.seed, static_cast<uint64_t>(index));
            tc.point = p;
            tc.model = candidate_spec(p);
            return eval(tc);
        };
        const ResourceFn resource_fn = [&](const Point& p) {
            const ScoreReport s = score(count(expand(candidate_spec(p)), rules));
            switch (cfg.search.fitness.metric) {
                case Metric::param_score: return s.param_score;
                case Metric::op_score: return s.op_score;
                case Metric::total: return s.total;
            }
            return s.total;
        };

        std::ofstream trial_log(cfg.out + "/trials.log", std::ios::app);
        std::ofstream duration_log(cfg.out + "/durations.log", std::ios::app);
        SearchOptions opts;
        opts.jobs = jobs;
        opts.resume = load_trial_log(cfg.out + "/trials.log");
        opts.on_trial = [&](const Trial& t) {
            trial_log << serialize_trial_line(t) << "\n";
            trial_log.flush();
            duration_log << t.index << "\t" << format_fixed(t.duration_ms, 3) << "\n";
            duration_log.flush();
        };

        const SearchResult sr =
            cfg.search.algorithm == "random"
                ? random_search(cfg.search.space, accuracy_fn, resource_fn, cfg.search.fitness, cfg.search.trials,
                                cfg.seed, opts)
                : smbo_search(cfg.search.space, accuracy_fn, resource_fn, cfg.search.fitness, cfg.search.trials,
                              cfg.search.warmup, cfg.seed, opts);
        const Trial* best = sr.best();
        if (!best) throw EvaluatorError("search stage: every trial failed");

        current = candidate_spec(best->x);
        write_text_file(cfg.out + "/stages/searching.spec.json", serialize_model_spec(current));
        const StageRecord r =
            detail::record_from(Stage::searching, count(expand(current), rules), best->accuracy);
        detail::persist_record(cfg.out, r);
        result.records.push_back(r);
    }

    if (cfg.improve.enabled) {
        const Evaluator eval = make_command_evaluator(cfg.improve.evaluator, cfg.out);
        const GreedyEvalFn fn = [&](int call_index, const std::vector<MethodCandidate>& enabled) {
            TrialConfig tc;
            tc.stage = "improve";
            tc.index = call_index;
            tc.seed = derive_seed(cfg.seed, static_cast<uint64_t>(call_index));
            tc.model = current;
            tc.methods = enabled;
            return eval(tc);
        };
        const GreedyResult gr = greedy_improve(cfg.improve.methods, fn, cfg.improve.repeats, cfg.improve.margin);

        std::ofstream log(cfg.out + "/improve.log");
        ordered_json base_line;
        base_line["baseline_mean"] = gr.baseline_mean;
        log << base_line.dump() << "\n";
        for (const auto& d : gr.decisions) {
            ordered_json jd;
            jd["method"] = d.name;
            jd["mean"] = d.mean;
            jd["reference"] = d.reference;
            jd["accepted"] = d.accepted;
            log << jd.dump() << "\n";
        }
        if (!gr.completed) throw EvaluatorError("improve stage: " + gr.error);

        const StageRecord r = detail::record_from(Stage::improving, count(expand(current), rules), gr.final_mean);
        detail::persist_record(cfg.out, r);
        result.records.push_back(r);
    }

    Overrides overrides;
    bool have_checkpoint = false;
    if (cfg.prune.enabled) {
        namespace fsd = std::filesystem;
        fsd::create_directories(cfg.out + "/ckpt");
        const LayerGraph graph = expand(current);
        Checkpoint ckpt =
            cfg.prune.ckpt.empty() ? checkpoint_from_graph(graph, cfg.seed) : read_checkpoint(cfg.prune.ckpt);

        const bool external_retrain = !cfg.prune.retrain.empty();
        const RetrainHook hook = external_retrain
                                     ? make_command_retrain_hook(cfg.prune.retrain, cfg.out)
                                     : RetrainHook([](int, double, const Checkpoint& pruned) {
                                           return RetrainOutcome{pruned, 0.0};
                                       });

        std::ofstream prune_log(cfg.out + "/prune.log");
        const auto on_round = [&](const PruneRound& round, const Checkpoint& state) {
            write_checkpoint(cfg.out + "/ckpt/round-" + std::to_string(round.round) + ".sipa", state);
            ordered_json jr;
            jr["round"] = round.round;
            jr["target"] = round.target;
            jr["achieved"] = round.achieved;
            if (external_retrain) jr["accuracy"] = round.accuracy;
            prune_log << jr.dump() << "\n";
            prune_log.flush();
        };
        const ScheduleResult sched = run_schedule(ckpt, cfg.prune.schedule, cfg.prune.config, hook, on_round);
        write_checkpoint(cfg.out + "/ckpt/final.sipa", sched.final);

        overrides = overrides_from_checkpoint(sched.final, current.quantization);
        apply_quant_patterns(overrides, graph, current.quantization);
        have_checkpoint = true;

        std::optional<double> accuracy;
        if (external_retrain && !sched.history.empty()) accuracy = sched.history.back().accuracy;
        const StageRecord r = detail::record_from(Stage::pruning, count(graph, rules, overrides), accuracy);
        detail::persist_record(cfg.out, r);
        result.records.push_back(r);
    }

    if (cfg.accelerate.enabled) {
        if (current.exits.empty())
            throw ValidationError("accelerate stage: the model spec declares no exit modules");
        if (cfg.accelerate.head < 0 || cfg.accelerate.head >= static_cast<int>(current.exits.size()))
            throw ValidationError("accelerate stage: exit head index out of range");

        if (!have_checkpoint) apply_quant_patterns(overrides, expand(current), current.quantization);
        apply_quant_patterns(overrides, expand_exit(current, cfg.accelerate.head), current.quantization);
        const ExitCostBreakdown costs = exit_costs(current, cfg.accelerate.head, rules, overrides);

        const EvalSet ev = read_evalset(cfg.accelerate.eval_path);
        const ExitCosts triple{costs.main_ops, costs.path_ops, costs.overhead_ops};
        if (!cfg.accelerate.thresholds.empty()) {
            std::ofstream sweep_log(cfg.out + "/sweep.log");
            for (const ExitPlan& p :
                 sweep(ev, static_cast<uint32_t>(cfg.accelerate.head), cfg.accelerate.thresholds, triple)) {
                ordered_json jp;
                jp["threshold"] = p.threshold;
                jp["exit_ratio"] = p.exit_ratio;
                jp["total_accuracy"] = p.total_accuracy;
                jp["expected_ops"] = p.expected_ops;
                sweep_log << jp.dump() << "\n";
            }
        }
        const ExitPlan plan =
            tune_threshold(ev, static_cast<uint32_t>(cfg.accelerate.head), triple, cfg.accelerate.accuracy_floor);

        write_text_file(cfg.out + "/exitplan.record", exit_plan_to_json(plan).dump(2) + "\n");
        result.plan = plan;

        StageRecord r;
        r.stage = Stage::accelerating;
        r.accuracy = plan.total_accuracy;
        const CostReport main_cost = count(expand(current), rules, overrides);
        const CostReport exit_cost = count(expand_exit(current, cfg.accelerate.head), rules, overrides);
        r.params_raw = main_cost.params_raw + exit_cost.params_raw;
        r.params_effective = costs.main_params + costs.exit_params;
        r.mults = std::llround(plan.expected_ops / 2.0);
        r.adds = std::llround(plan.expected_ops) - r.mults;
        detail::persist_record(cfg.out, r);
        result.records.push_back(r);
    }

    return result;
}

}  // namespace sipa
