#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sipa/sipa.hpp"

namespace fs = std::filesystem;

namespace {

/// Shortest round-trip decimal form, for util outputs.
std::string fmt(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return ec == std::errc() ? std::string(buf, end) : std::string("nan");
}

std::string join(const std::vector<double>& vs) {
    std::string out;
    for (size_t i = 0; i < vs.size(); ++i) {
        if (i) out += ",";
        out += fmt(vs[i]);
    }
    return out;
}

sipa::ModelSpec load_spec(const std::string& arg) {
    if (fs::exists(arg)) return sipa::parse_model_spec(sipa::read_text_file(arg));
    if (arg == "wrn28-10") return sipa::wrn28_10();
    if (arg == "mbconv-cifar100-baseline") return sipa::mbconv_baseline();
    throw sipa::IoError("no such spec file or built-in model: '" + arg +
                        "' (built-ins: wrn28-10, mbconv-cifar100-baseline)");
}

/// Record files given directly; directories contribute their *.record files
/// (preferring a stages/ subdirectory, the pipeline layout) in name order.
std::vector<sipa::StageRecord> collect_records(const std::vector<std::string>& paths) {
    std::vector<std::string> files;
    for (const auto& p : paths) {
        if (fs::is_directory(p)) {
            const fs::path dir = fs::is_directory(fs::path(p) / "stages") ? fs::path(p) / "stages" : fs::path(p);
            std::vector<std::string> found;
            for (const auto& e : fs::directory_iterator(dir))
                if (e.is_regular_file() && e.path().extension() == ".record") found.push_back(e.path().string());
            if (found.empty()) throw sipa::IoError("no .record files under '" + p + "'");
            std::sort(found.begin(), found.end());
            files.insert(files.end(), found.begin(), found.end());
        } else {
            files.push_back(p);
        }
    }
    std::vector<sipa::StageRecord> records;
    records.reserve(files.size());
    for (const auto& f : files) records.push_back(sipa::read_stage_record(f));
    return records;
}

std::string default_pruned_path(const std::string& in) {
    const fs::path p(in);
    return (p.parent_path() / (p.stem().string() + "-pruned" + p.extension().string())).string();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Toolkit for building efficient networks: search, improve, prune, accelerate"};
    app.require_subcommand(1);

    uint64_t seed = 0;
    int jobs = 1;
    std::string out;
    auto* seed_opt = app.add_option("--seed", seed, "RNG seed for all derived streams");
    app.add_option("--jobs", jobs, "Parallel evaluator processes")->check(CLI::PositiveNumber);
    app.add_option("--out", out, "Output file or directory (meaning depends on the subcommand)");

    // ---- score ------------------------------------------------------------
    auto* c_score = app.add_subcommand("score", "Count a model and print its score row");
    c_score->fallthrough();
    std::string sc_spec, sc_ckpt, sc_rules;
    c_score->add_option("--spec", sc_spec, "Model spec path or built-in name")->required();
    c_score->add_option("--ckpt", sc_ckpt, "Checkpoint supplying masks and stored dtypes");
    c_score->add_option("--rules", sc_rules, "Counting-rules JSON");
    c_score->callback([&] {
        const sipa::ModelSpec spec = load_spec(sc_spec);
        const sipa::CountingRules rules =
            sc_rules.empty() ? sipa::CountingRules{} : sipa::parse_counting_rules(sipa::read_text_file(sc_rules));
        const sipa::LayerGraph graph = sipa::expand(spec);
        sipa::Overrides ov;
        if (!sc_ckpt.empty()) ov = sipa::overrides_from_checkpoint(sipa::read_checkpoint(sc_ckpt), spec.quantization);
        sipa::apply_quant_patterns(ov, graph, spec.quantization);
        const sipa::CostReport cost = sipa::count(graph, rules, ov);
        std::cout << sipa::render_score_table(
            {{spec.name, std::nullopt, cost.params_effective, static_cast<double>(cost.ops_total())}});
    });

    // ---- report -----------------------------------------------------------
    auto* c_report = app.add_subcommand("report", "Render stage records as a score table");
    c_report->fallthrough();
    std::vector<std::string> rp_paths;
    c_report->add_option("paths", rp_paths, "Record files or artifact directories")->required()->expected(-1);
    c_report->callback([&] { std::cout << sipa::render_stage_table(collect_records(rp_paths)); });

    // ---- prune ------------------------------------------------------------
    auto* c_prune = app.add_subcommand("prune", "One-shot magnitude pruning of a checkpoint");
    c_prune->fallthrough();
    std::string pr_ckpt, pr_config;
    double pr_target = 0.0;
    c_prune->add_option("--ckpt", pr_ckpt)->required();
    c_prune->add_option("--config", pr_config, "Prune config JSON");
    c_prune->add_option("--target", pr_target, "Absolute sparsity in (0,1)")->required();
    c_prune->callback([&] {
        const sipa::Checkpoint ckpt = sipa::read_checkpoint(pr_ckpt);
        const sipa::PruneConfig cfg =
            pr_config.empty() ? sipa::PruneConfig{} : sipa::parse_prune_config(sipa::read_text_file(pr_config));
        const sipa::Checkpoint pruned = sipa::magnitude_prune(ckpt, cfg, pr_target);
        const std::string out_path = out.empty() ? default_pruned_path(pr_ckpt) : out;
        sipa::write_checkpoint(out_path, pruned);
        const sipa::SparsityReport rep = sipa::sparsity_report(pruned, cfg);
        for (const auto& t : rep.tensors)
            if (t.prunable)
                std::cout << t.name << ": " << t.nnz << "/" << t.size << " kept, "
                          << sipa::format_fixed(t.sparsity() * 100.0, 2) << "% sparse\n";
        std::cout << "overall: " << sipa::format_fixed(rep.global_sparsity() * 100.0, 2) << "% sparse\n";
        std::cout << "wrote " << out_path << "\n";
    });

    // ---- prune-schedule ---------------------------------------------------
    auto* c_sched = app.add_subcommand("prune-schedule", "Iterative prune-retrain schedule");
    c_sched->fallthrough();
    std::string ps_ckpt, ps_schedule, ps_config, ps_retrain;
    c_sched->add_option("--ckpt", ps_ckpt)->required();
    c_sched->add_option("--schedule", ps_schedule, "Inline JSON array, a path to one, or the preset name 'iterative'")
        ->required();
    c_sched->add_option("--config", ps_config, "Prune config JSON");
    c_sched->add_option("--retrain-cmd", ps_retrain, "Fine-tune command invoked after each round");
    c_sched->callback([&] {
        const sipa::Checkpoint ckpt = sipa::read_checkpoint(ps_ckpt);
        const sipa::PruneSchedule sched =
            ps_schedule == "iterative" ? sipa::iterative_schedule()
            : ps_schedule.starts_with("[")
                ? sipa::parse_prune_schedule(ps_schedule)
                : sipa::parse_prune_schedule(sipa::read_text_file(ps_schedule));
        const sipa::PruneConfig cfg =
            ps_config.empty() ? sipa::PruneConfig{} : sipa::parse_prune_config(sipa::read_text_file(ps_config));
        const std::string outdir = out.empty() ? "prune-artifacts" : out;
        fs::create_directories(outdir);

        const bool external = !ps_retrain.empty();
        const sipa::RetrainHook hook =
            external ? sipa::make_command_retrain_hook(ps_retrain, outdir)
                     : sipa::RetrainHook([](int, double, const sipa::Checkpoint& pruned) {
                           return sipa::RetrainOutcome{pruned, 0.0};
                       });

        std::ofstream log(outdir + "/prune.log");
        const auto on_round = [&](const sipa::PruneRound& round, const sipa::Checkpoint& state) {
            sipa::write_checkpoint(outdir + "/round-" + std::to_string(round.round) + ".sipa", state);
            sipa::ordered_json jr;
            jr["round"] = round.round;
            jr["target"] = round.target;
            jr["achieved"] = round.achieved;
            if (external) jr["accuracy"] = round.accuracy;
            log << jr.dump() << "\n";
            log.flush();
            std::cout << "round " << round.round << ": target " << sipa::format_fixed(round.target * 100.0, 1)
                      << "%, achieved " << sipa::format_fixed(round.achieved * 100.0, 2) << "%";
            if (external) std::cout << ", accuracy " << sipa::format_fixed(round.accuracy * 100.0, 2) << "%";
            std::cout << "\n";
        };
        const sipa::ScheduleResult result = sipa::run_schedule(ckpt, sched, cfg, hook, on_round);
        sipa::write_checkpoint(outdir + "/final.sipa", result.final);
        std::cout << "final checkpoint: " << outdir << "/final.sipa\n";
    });

    // ---- search -----------------------------------------------------------
    auto* c_search = app.add_subcommand("search", "Architecture search over a base spec");
    c_search->fallthrough();
    std::string se_mode, se_base, se_space, se_eval;
    std::string se_algorithm = "smbo", se_metric = "total";
    int se_trials = 20, se_warmup = 5;
    sipa::FitnessParams se_fit;
    c_search->add_option("mode", se_mode, "What the space varies: scaling | blocks")
        ->required()
        ->check(CLI::IsMember({"scaling", "blocks"}));
    c_search->add_option("--base", se_base, "Base model spec path or built-in name")->required();
    c_search->add_option("--space", se_space, "Search space JSON")->required();
    c_search->add_option("--evaluator", se_eval, "Accuracy evaluator command")->required();
    c_search->add_option("--trials", se_trials)->check(CLI::PositiveNumber);
    c_search->add_option("--warmup", se_warmup, "Random trials before the model-based phase");
    c_search->add_option("--algorithm", se_algorithm)->check(CLI::IsMember({"smbo", "random"}));
    c_search->add_option("--penalty-weight", se_fit.penalty_weight, "Penalty when over budget");
    c_search->add_option("--w", se_fit.w, "Penalty exponent");
    c_search->add_option("--thres", se_fit.thres, "Resource budget");
    c_search->add_option("--metric", se_metric)->check(CLI::IsMember({"param_score", "op_score", "total"}));
    c_search->callback([&] {
        sipa::PipelineConfig cfg;
        cfg.base = load_spec(se_base);
        cfg.out = out.empty() ? "search-artifacts" : out;
        cfg.seed = seed;
        cfg.search.enabled = true;
        cfg.search.mode = se_mode;
        cfg.search.algorithm = se_algorithm;
        cfg.search.space = sipa::parse_search_space(sipa::read_text_file(se_space));
        cfg.search.evaluator = se_eval;
        cfg.search.trials = se_trials;
        cfg.search.warmup = se_warmup;
        se_fit.metric = sipa::parse_metric(se_metric);
        se_fit.check();
        cfg.search.fitness = se_fit;

        const sipa::PipelineResult res = sipa::run_pipeline(cfg, jobs);
        const std::vector<sipa::Trial> log = sipa::load_trial_log(cfg.out + "/trials.log");
        const sipa::Trial* best = nullptr;
        for (const auto& t : log)
            if (t.ok && (!best || t.fitness > best->fitness)) best = &t;
        if (best) std::cout << "best trial: " << sipa::serialize_trial_line(*best) << "\n";
        std::cout << sipa::render_stage_table(res.records);
        std::cout << "artifacts: " << cfg.out << "\n";
    });

    // ---- improve ----------------------------------------------------------
    auto* c_improve = app.add_subcommand("improve", "Greedy forward selection of training methods");
    c_improve->fallthrough();
    std::string im_methods, im_eval, im_base;
    int im_repeats = 1;
    double im_margin = 0.0;
    c_improve->add_option("--methods", im_methods, "Candidate methods JSON")->required();
    c_improve->add_option("--evaluator", im_eval, "Accuracy evaluator command")->required();
    c_improve->add_option("--repeats", im_repeats, "Evaluations averaged per decision")->check(CLI::PositiveNumber);
    c_improve->add_option("--margin", im_margin, "Mean improvement required to accept");
    c_improve->add_option("--base", im_base, "Model spec passed through to the evaluator");
    c_improve->callback([&] {
        const std::vector<sipa::MethodCandidate> methods = sipa::parse_methods(sipa::read_text_file(im_methods));
        std::optional<sipa::ModelSpec> base;
        if (!im_base.empty()) base = load_spec(im_base);
        const std::string workdir = out.empty() ? "." : out;
        fs::create_directories(workdir);
        const sipa::Evaluator eval = sipa::make_command_evaluator(im_eval, workdir);
        const sipa::GreedyEvalFn fn = [&](int call_index, const std::vector<sipa::MethodCandidate>& enabled) {
            sipa::TrialConfig tc;
            tc.stage = "improve";
            tc.index = call_index;
            tc.seed = sipa::derive_seed(seed, static_cast<uint64_t>(call_index));
            tc.model = base;
            tc.methods = enabled;
            return eval(tc);
        };
        const sipa::GreedyResult gr = sipa::greedy_improve(methods, fn, im_repeats, im_margin);
        std::cout << "baseline mean: " << sipa::format_fixed(gr.baseline_mean, 6) << "\n";
        for (const auto& d : gr.decisions)
            std::cout << (d.accepted ? "accept " : "reject ") << d.name << ": mean "
                      << sipa::format_fixed(d.mean, 6) << " vs " << sipa::format_fixed(d.reference, 6) << "\n";
        if (!gr.completed) throw sipa::EvaluatorError("improve: " + gr.error);
        std::cout << "final mean: " << sipa::format_fixed(gr.final_mean, 6) << " after " << gr.evaluations
                  << " evaluations\n";
    });

    // ---- exit-plan ----------------------------------------------------------
    auto* c_exit = app.add_subcommand("exit-plan", "Tune an exit head's confidence threshold");
    c_exit->fallthrough();
    std::string ep_eval, ep_model, ep_ckpt;
    int ep_head = 0;
    double ep_floor = 0.0;
    std::vector<double> ep_thresholds;
    c_exit->add_option("--eval", ep_eval, "EvalSet file with per-head logits")->required();
    c_exit->add_option("--model", ep_model, "Model spec path or built-in name")->required();
    c_exit->add_option("--head", ep_head, "Exit head index")->required();
    c_exit->add_option("--accuracy-floor", ep_floor, "Minimum acceptable total accuracy")->required();
    c_exit->add_option("--thresholds", ep_thresholds, "Extra thresholds to sweep and print")->delimiter(',');
    c_exit->add_option("--ckpt", ep_ckpt, "Checkpoint supplying masks and stored dtypes");
    c_exit->callback([&] {
        const sipa::EvalSet ev = sipa::read_evalset(ep_eval);
        const sipa::ModelSpec spec = load_spec(ep_model);
        if (ep_head < 0 || ep_head >= static_cast<int>(spec.exits.size()))
            throw sipa::ValidationError("exit head index out of range for this spec");
        sipa::Overrides ov;
        if (!ep_ckpt.empty()) ov = sipa::overrides_from_checkpoint(sipa::read_checkpoint(ep_ckpt), spec.quantization);
        sipa::apply_quant_patterns(ov, sipa::expand(spec), spec.quantization);
        sipa::apply_quant_patterns(ov, sipa::expand_exit(spec, ep_head), spec.quantization);
        const sipa::ExitCostBreakdown costs = sipa::exit_costs(spec, ep_head, sipa::CountingRules{}, ov);
        const sipa::ExitCosts triple{costs.main_ops, costs.path_ops, costs.overhead_ops};

        for (const sipa::ExitPlan& p : sipa::sweep(ev, static_cast<uint32_t>(ep_head), ep_thresholds, triple))
            std::cout << "threshold " << sipa::format_fixed(p.threshold, 4) << ": exit_ratio "
                      << sipa::format_fixed(p.exit_ratio, 4) << ", accuracy "
                      << sipa::format_fixed(p.total_accuracy, 4) << ", op_score "
                      << sipa::format_fixed(p.op_score, 6) << "\n";

        const sipa::ExitPlan plan = sipa::tune_threshold(ev, static_cast<uint32_t>(ep_head), triple, ep_floor);
        const std::string text = sipa::exit_plan_to_json(plan).dump(2) + "\n";
        std::cout << text;
        if (!out.empty()) sipa::write_text_file(out, text);
    });

    // ---- risk-coverage ------------------------------------------------------
    auto* c_risk = app.add_subcommand("risk-coverage", "Selective-prediction curve for one head");
    c_risk->fallthrough();
    std::string rc_eval;
    int rc_head = 0;
    c_risk->add_option("--eval", rc_eval, "EvalSet file with per-head logits")->required();
    c_risk->add_option("--head", rc_head, "Prediction head index")->required();
    c_risk->callback([&] {
        if (out.empty()) throw sipa::ValidationError("risk-coverage needs --out <csv>");
        const sipa::EvalSet ev = sipa::read_evalset(rc_eval);
        std::string csv = "coverage,risk\n";
        for (const auto& p : sipa::risk_coverage(ev, static_cast<uint32_t>(rc_head)))
            csv += sipa::format_fixed(p.coverage, 6) + "," + sipa::format_fixed(p.risk, 6) + "\n";
        sipa::write_text_file(out, csv);
        std::cout << "wrote " << out << "\n";
    });

    // ---- run ----------------------------------------------------------------
    auto* c_run = app.add_subcommand("run", "End-to-end pipeline from a config file");
    c_run->fallthrough();
    std::string run_config;
    c_run->add_option("--config", run_config, "Pipeline config JSON")->required();
    c_run->callback([&] {
        const std::string dir = fs::path(run_config).parent_path().string();
        sipa::PipelineConfig cfg = sipa::parse_pipeline_config(sipa::read_text_file(run_config), dir);
        if (!out.empty()) cfg.out = out;
        if (seed_opt->count() > 0) cfg.seed = seed;
        const sipa::PipelineResult res = sipa::run_pipeline(cfg, jobs);
        if (!res.records.empty()) std::cout << sipa::render_stage_table(res.records);
        if (res.plan) std::cout << "exit plan: " << sipa::exit_plan_to_json(*res.plan).dump() << "\n";
        std::cout << "artifacts: " << res.out_dir << "\n";
    });

    // ---- util ---------------------------------------------------------------
    auto* c_util = app.add_subcommand("util", "Closed-form training math helpers");
    c_util->require_subcommand(1);
    c_util->fallthrough();

    auto* u_cos = c_util->add_subcommand("cosine-lr", "Cosine-annealed learning rate at an epoch");
    u_cos->fallthrough();
    sipa::CosineScheduleParams cl;
    double cl_t = 0.0;
    u_cos->add_option("--eta-min", cl.eta_min)->required();
    u_cos->add_option("--eta-max", cl.eta_max)->required();
    u_cos->add_option("--t-max", cl.t_max)->required();
    u_cos->add_option("--t", cl_t, "Current epoch")->required();
    u_cos->callback([&] { std::cout << fmt(sipa::cosine_lr(cl_t, cl)) << "\n"; });

    auto* u_ls = c_util->add_subcommand("label-smooth", "Smoothed one-hot target distribution");
    u_ls->fallthrough();
    int ls_classes = 0, ls_true = 0;
    double ls_eps = 0.0;
    u_ls->add_option("--classes", ls_classes)->required();
    u_ls->add_option("--true-class", ls_true)->required();
    u_ls->add_option("--eps", ls_eps)->required();
    u_ls->callback([&] { std::cout << join(sipa::label_smooth(ls_true, ls_classes, ls_eps)) << "\n"; });

    auto* u_swish = c_util->add_subcommand("swish", "x * sigmoid(beta * x)");
    u_swish->fallthrough();
    double sw_x = 0.0, sw_beta = 1.0;
    u_swish->add_option("--x", sw_x)->required();
    u_swish->add_option("--beta", sw_beta);
    u_swish->callback([&] { std::cout << fmt(sipa::swish(sw_x, sw_beta)) << "\n"; });

    auto* u_mix = c_util->add_subcommand("mixup", "Convex combination of two samples");
    u_mix->fallthrough();
    double mx_lambda = 0.5;
    std::vector<double> mx_x1, mx_x2, mx_y1, mx_y2;
    u_mix->add_option("--lambda", mx_lambda)->required();
    u_mix->add_option("--x1", mx_x1)->required()->delimiter(',');
    u_mix->add_option("--x2", mx_x2)->required()->delimiter(',');
    u_mix->add_option("--y1", mx_y1)->delimiter(',');
    u_mix->add_option("--y2", mx_y2)->delimiter(',');
    u_mix->callback([&] {
        const auto [x, y] = sipa::mixup(mx_x1, mx_y1, mx_x2, mx_y2, mx_lambda);
        std::cout << "x: " << join(x) << "\n";
        if (!y.empty()) std::cout << "y: " << join(y) << "\n";
    });

    auto* u_beta = c_util->add_subcommand("beta", "Seeded Beta(a, b) samples (mixup lambdas)");
    u_beta->fallthrough();
    double bt_a = 1.0, bt_b = 1.0;
    int bt_n = 1;
    u_beta->add_option("--a", bt_a);
    u_beta->add_option("--b", bt_b);
    u_beta->add_option("--n", bt_n)->check(CLI::PositiveNumber);
    u_beta->callback([&] {
        sipa::Rng rng(seed);
        std::vector<double> vs(static_cast<size_t>(bt_n));
        for (auto& v : vs) v = rng.beta(bt_a, bt_b);
        std::cout << join(vs) << "\n";
    });

    auto* u_up = c_util->add_subcommand("nn-upscale", "Nearest-neighbor upscale of a CSV image");
    u_up->fallthrough();
    std::string up_in;
    int up_factor = 1, up_channels = 1;
    u_up->add_option("--in", up_in, "CSV file, one image row per line")->required();
    u_up->add_option("--factor", up_factor)->required()->check(CLI::PositiveNumber);
    u_up->add_option("--channels", up_channels)->check(CLI::PositiveNumber);
    u_up->callback([&] {
        sipa::Image img;
        img.c = up_channels;
        std::ifstream is(up_in);
        if (!is) throw sipa::IoError("cannot open '" + up_in + "'");
        std::string line;
        size_t cols = 0;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            size_t n = 0, pos = 0;
            while (pos <= line.size()) {
                size_t comma = line.find(',', pos);
                if (comma == std::string::npos) comma = line.size();
                img.data.push_back(std::stod(line.substr(pos, comma - pos)));
                ++n;
                pos = comma + 1;
            }
            if (cols == 0) cols = n;
            if (n != cols) throw sipa::ParseError("ragged CSV image in '" + up_in + "'");
            ++img.h;
        }
        if (cols % static_cast<size_t>(up_channels) != 0)
            throw sipa::ValidationError("row length is not a multiple of --channels");
        img.w = static_cast<int>(cols) / up_channels;
        const sipa::Image big = sipa::nn_upscale(img, up_factor);
        std::string text;
        for (int r = 0; r < big.h; ++r) {
            for (int c2 = 0; c2 < big.w * big.c; ++c2) {
                if (c2) text += ",";
                text += fmt(big.data[static_cast<size_t>(r) * big.w * big.c + c2]);
            }
            text += "\n";
        }
        if (out.empty())
            std::cout << text;
        else
            sipa::write_text_file(out, text);
    });

    auto* u_res = c_util->add_subcommand("constraint-residual", "alpha * beta^2 * gamma^2 - 2");
    u_res->fallthrough();
    sipa::ScalingCoefficients cr;
    u_res->add_option("--alpha", cr.alpha)->required();
    u_res->add_option("--beta", cr.beta)->required();
    u_res->add_option("--gamma", cr.gamma)->required();
    u_res->callback([&] { std::cout << fmt(sipa::constraint_residual(cr)) << "\n"; });

    auto* u_round = c_util->add_subcommand("round-channels", "Divisor-rounded channel count");
    u_round->fallthrough();
    double rc_scaled = 0.0;
    int rc_div = 8;
    u_round->add_option("--scaled", rc_scaled, "Raw scaled channel count")->required();
    u_round->add_option("--divisor", rc_div);
    u_round->callback([&] { std::cout << sipa::round_channels(rc_scaled, rc_div) << "\n"; });

    auto* u_spec = c_util->add_subcommand("spec", "Print a built-in model spec as JSON");
    u_spec->fallthrough();
    std::string spec_name;
    u_spec->add_option("name", spec_name, "wrn28-10 | mbconv-cifar100-baseline")->required();
    u_spec->callback([&] { std::cout << sipa::serialize_model_spec(load_spec(spec_name)); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
