// Deterministic stand-in for an external training/evaluation system, used by
// the test suite and example configs. It consumes a trial-config JSON file
// (the evaluator contract) and prints an accuracy in [0, 1] as the last
// stdout line.
//
//   search:        base + span * exp(-sum_d ((x_d - peak_d) / scale_d)^2)
//   improve:       base + sum of --effect deltas over the enabled methods
//   prune-retrain: base - decay * target_sparsity, copying ckpt_in -> ckpt_out
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sipa/common.hpp"

using ordered_json = nlohmann::ordered_json;

namespace {

struct KvMaps {
    std::map<std::string, double> nums;
    std::map<std::string, std::string> strs;
};

KvMaps parse_kv(const std::vector<std::string>& pairs, const std::string& flag) {
    KvMaps out;
    for (const auto& p : pairs) {
        const size_t eq = p.find('=');
        if (eq == std::string::npos || eq == 0)
            throw sipa::ParseError(flag + " expects name=value, got '" + p + "'");
        const std::string name = p.substr(0, eq);
        const std::string value = p.substr(eq + 1);
        char* end = nullptr;
        const double x = std::strtod(value.c_str(), &end);
        if (end && *end == '\0' && end != value.c_str())
            out.nums[name] = x;
        else
            out.strs[name] = value;
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deterministic surrogate evaluator (testing stand-in)"};
    double base = 0.5, span = 0.4, decay = 0.1;
    int fail_index = -1;
    std::vector<std::string> peak_kv, scale_kv, effect_kv;
    std::string config_path;
    app.add_option("--base", base, "Accuracy floor of the surrogate");
    app.add_option("--span", span, "Peak height above the base (search stage)");
    app.add_option("--decay", decay, "Accuracy lost per unit sparsity (prune-retrain stage)");
    app.add_option("--peak", peak_kv, "Optimum location, name=value")->delimiter(',');
    app.add_option("--scale", scale_kv, "Per-dimension width, name=value")->delimiter(',');
    app.add_option("--effect", effect_kv, "Per-method accuracy delta, name=value")->delimiter(',');
    app.add_option("--fail-index", fail_index, "Exit nonzero when the trial index matches");
    app.add_option("config", config_path, "Trial config JSON path")->required();

    try {
        app.parse(argc, argv);

        const KvMaps peaks = parse_kv(peak_kv, "--peak");
        const KvMaps scales = parse_kv(scale_kv, "--scale");
        const KvMaps effects = parse_kv(effect_kv, "--effect");

        const ordered_json cfg = ordered_json::parse(sipa::read_text_file(config_path));
        const std::string stage = cfg.value("stage", std::string());
        const int index = cfg.value("index", 0);
        std::cout << "surrogate stage=" << stage << " index=" << index << "\n";

        if (index == fail_index) {
            std::cerr << "injected failure at index " << fail_index << "\n";
            return 3;
        }

        double acc = base;
        if (stage == "search") {
            double sum = 0.0;
            if (cfg.contains("point")) {
                for (auto it = cfg.at("point").begin(); it != cfg.at("point").end(); ++it) {
                    const std::string& name = it.key();
                    if (it.value().is_string()) {
                        const auto want = peaks.strs.find(name);
                        if (want != peaks.strs.end() && want->second != it.value().get<std::string>()) sum += 1.0;
                        continue;
                    }
                    const double x = it.value().get<double>();
                    const double peak = peaks.nums.count(name) ? peaks.nums.at(name) : 0.0;
                    const double scale = scales.nums.count(name) ? scales.nums.at(name) : 1.0;
                    const double d = (x - peak) / scale;
                    sum += d * d;
                }
            }
            acc = base + span * std::exp(-sum);
        } else if (stage == "improve") {
            if (cfg.contains("methods"))
                for (const auto& m : cfg.at("methods")) {
                    const std::string name = m.at("name").get<std::string>();
                    if (effects.nums.count(name)) acc += effects.nums.at(name);
                }
        } else if (stage == "prune-retrain") {
            acc = base - decay * cfg.value("target_sparsity", 0.0);
            const std::string in = cfg.value("ckpt_in", std::string());
            const std::string out = cfg.value("ckpt_out", std::string());
            if (!in.empty() && !out.empty())
                std::filesystem::copy_file(in, out, std::filesystem::copy_options::overwrite_existing);
        }

        if (acc < 0.0) acc = 0.0;
        if (acc > 1.0) acc = 1.0;
        std::cout << sipa::format_fixed(acc, 9) << "\n";
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
