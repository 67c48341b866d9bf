#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sipa/common.hpp"
#include "sipa/model_ir.hpp"

namespace sipa {

enum class BnPolicy { folded, affine };
enum class SparsityAccounting { off, nonzero_plus_bitmask };
enum class QuantAccounting { off, bits_over_32 };

/// MicroNet-style counting knobs. Defaults: bias counted, BN folded away,
/// relu 1 op/element, sigmoid 4 ops/element (swish = sigmoid + 1 mult),
/// average pools 1 add/element, bitmask sparsity accounting, bits/32
/// quantization accounting.
struct CountingRules {
    bool count_bias = true;
    BnPolicy bn_policy = BnPolicy::folded;
    int64_t relu_cost = 1;
    int64_t sigmoid_cost = 4;
    int64_t pool_adds_per_element = 1;
    SparsityAccounting sparsity = SparsityAccounting::nonzero_plus_bitmask;
    QuantAccounting quant = QuantAccounting::bits_over_32;

    int64_t swish_cost() const { return sigmoid_cost + 1; }

    void check() const {
        if (sigmoid_cost < 1) throw ValidationError("sigmoid cost must be >= 1");
        if (relu_cost < 0 || pool_adds_per_element < 0) throw ValidationError("op costs must be >= 0");
    }
};

/// Per-tensor accounting override. An empty mask means dense; mask entries
/// are 0 (pruned) or 1 (kept) and must match the tensor's element count.
struct TensorOverride {
    std::vector<uint8_t> mask;
    int bits = 32;
};

using Overrides = std::map<std::string, TensorOverride, std::less<>>;

struct LayerCost {
    int index = 0;
    std::string name;
    int64_t params_raw = 0;
    double params_effective = 0.0;
    int64_t mults = 0;
    int64_t adds = 0;
};

struct CostReport {
    int64_t params_raw = 0;
    double params_effective = 0.0;
    int64_t mults = 0;
    int64_t adds = 0;
    std::vector<LayerCost> per_layer;

    int64_t ops_total() const { return mults + adds; }
};

/// Parses counting rules from JSON: {"count_bias", "bn_policy"
/// ("folded"|"affine"), "relu_cost", "sigmoid_cost",
/// "pool_adds_per_element", "sparsity" ("off"|"nonzero_plus_bitmask"),
/// "quant" ("off"|"bits_over_32")}; all keys optional, unknown keys rejected.
inline CountingRules parse_counting_rules(const std::string& text) {
    ordered_json doc;
    try {
        doc = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("counting rules: ") + e.what());
    }
    if (!doc.is_object()) throw ValidationError("counting rules: expected an object");
    detail::reject_unknown_keys(
        doc, {"count_bias", "bn_policy", "relu_cost", "sigmoid_cost", "pool_adds_per_element", "sparsity", "quant"},
        "counting rules");
    CountingRules r;
    r.count_bias = doc.value("count_bias", r.count_bias);
    if (doc.contains("bn_policy")) {
        const std::string v = doc.at("bn_policy").get<std::string>();
        if (v == "folded")
            r.bn_policy = BnPolicy::folded;
        else if (v == "affine")
            r.bn_policy = BnPolicy::affine;
        else
            throw ValidationError("counting rules: unknown bn_policy '" + v + "'");
    }
    r.relu_cost = doc.value("relu_cost", r.relu_cost);
    r.sigmoid_cost = doc.value("sigmoid_cost", r.sigmoid_cost);
    r.pool_adds_per_element = doc.value("pool_adds_per_element", r.pool_adds_per_element);
    if (doc.contains("sparsity")) {
        const std::string v = doc.at("sparsity").get<std::string>();
        if (v == "off")
            r.sparsity = SparsityAccounting::off;
        else if (v == "nonzero_plus_bitmask")
            r.sparsity = SparsityAccounting::nonzero_plus_bitmask;
        else
            throw ValidationError("counting rules: unknown sparsity accounting '" + v + "'");
    }
    if (doc.contains("quant")) {
        const std::string v = doc.at("quant").get<std::string>();
        if (v == "off")
            r.quant = QuantAccounting::off;
        else if (v == "bits_over_32")
            r.quant = QuantAccounting::bits_over_32;
        else
            throw ValidationError("counting rules: unknown quantization accounting '" + v + "'");
    }
    r.check();
    return r;
}

inline constexpr double kParamDenominator = 36.5e6;
inline constexpr double kOpDenominator = 10.49e9;

struct ScoreReport {
    double param_score = 0.0;
    double op_score = 0.0;
    double total = 0.0;
};

/// params_effective / 36.5e6 and ops / 10.49e9 (WideResNet-28-10 baseline).
inline ScoreReport score(const CostReport& report) {
    ScoreReport s;
    s.param_score = report.params_effective / kParamDenominator;
    s.op_score = static_cast<double>(report.ops_total()) / kOpDenominator;
    s.total = s.param_score + s.op_score;
    return s;
}

inline ScoreReport score_raw(double params_effective, double ops_total) {
    ScoreReport s;
    s.param_score = params_effective / kParamDenominator;
    s.op_score = ops_total / kOpDenominator;
    s.total = s.param_score + s.op_score;
    return s;
}

namespace detail {

struct TensorAccounting {
    int64_t size = 0;
    int64_t nnz = 0;       // = size when dense
    double effective = 0;  // 32-bit-equivalent storage
};

inline TensorAccounting account_tensor(const std::string& tensor, int64_t size, const CountingRules& rules,
                                       const Overrides& overrides) {
    TensorAccounting acc;
    acc.size = size;
    acc.nnz = size;
    int bits = 32;
    const std::vector<uint8_t>* mask = nullptr;
    if (auto it = overrides.find(tensor); it != overrides.end()) {
        if (!it->second.mask.empty()) {
            if (static_cast<int64_t>(it->second.mask.size()) != size)
                throw ValidationError("mask shape mismatch for tensor '" + tensor + "'");
            mask = &it->second.mask;
        }
        bits = it->second.bits;
    }
    if (rules.quant == QuantAccounting::off) bits = 32;
    if (mask && rules.sparsity == SparsityAccounting::nonzero_plus_bitmask) {
        int64_t nnz = 0;
        for (uint8_t m : *mask) nnz += m ? 1 : 0;
        acc.nnz = nnz;
        acc.effective = static_cast<double>(nnz) * bits / 32.0 + static_cast<double>(size) / 32.0;
    } else {
        acc.effective = static_cast<double>(size) * bits / 32.0;
    }
    return acc;
}

}  // namespace detail

/// Counts parameters and operations for a layer graph. Weighted layers look
/// up "<name>.weight" / "<name>.bias" in `overrides` for masks and bit
/// widths; op counts for sparse layers scale by weight density (exactly:
/// each surviving weight is applied once per output position). Multiply-
/// accumulate is counted as 1 mult + 1 add. Activation and scale work lands
/// in mults, pooling and residual work in adds.
inline CostReport count(const LayerGraph& graph, const CountingRules& rules = {},
                        const Overrides& overrides = {}) {
    rules.check();
    CostReport total;
    total.per_layer.reserve(graph.layers.size());

    for (size_t li = 0; li < graph.layers.size(); ++li) {
        const Layer& l = graph.layers[li];
        LayerCost c;
        c.index = static_cast<int>(li);
        c.name = l.name;

        switch (l.kind) {
            case LayerKind::conv2d: {
                const int64_t weights = static_cast<int64_t>(l.kernel) * l.kernel * (l.in.c / l.groups) * l.out.c;
                const auto w = detail::account_tensor(l.name + ".weight", weights, rules, overrides);
                c.params_raw += w.size;
                c.params_effective += w.effective;
                const int64_t positions = static_cast<int64_t>(l.out.h) * l.out.w;
                c.mults = positions * w.nnz;
                c.adds = c.mults;
                if (l.bias && rules.count_bias) {
                    const auto b = detail::account_tensor(l.name + ".bias", l.out.c, rules, overrides);
                    c.params_raw += b.size;
                    c.params_effective += b.effective;
                }
                break;
            }
            case LayerKind::dense: {
                const int64_t weights = l.in.elements() * l.out.c;
                const auto w = detail::account_tensor(l.name + ".weight", weights, rules, overrides);
                c.params_raw += w.size;
                c.params_effective += w.effective;
                c.mults = w.nnz;
                c.adds = c.mults;
                if (l.bias && rules.count_bias) {
                    const auto b = detail::account_tensor(l.name + ".bias", l.out.c, rules, overrides);
                    c.params_raw += b.size;
                    c.params_effective += b.effective;
                }
                break;
            }
            case LayerKind::batchnorm:
                if (rules.bn_policy == BnPolicy::affine) {
                    c.params_raw = 2 * l.out.c;
                    c.params_effective = static_cast<double>(c.params_raw);
                    c.mults = l.out.elements();
                    c.adds = l.out.elements();
                }
                break;
            case LayerKind::activation: {
                int64_t per_element = 0;
                switch (l.act) {
                    case Activation::relu: per_element = rules.relu_cost; break;
                    case Activation::sigmoid: per_element = rules.sigmoid_cost; break;
                    case Activation::swish: per_element = rules.swish_cost(); break;
                    case Activation::none: break;
                }
                c.mults = per_element * l.out.elements();
                break;
            }
            case LayerKind::pool:
                c.adds = rules.pool_adds_per_element * l.in.elements();
                if (l.pool == PoolKind::avg) c.mults = l.out.elements();
                if (l.pool == PoolKind::global_avg) c.mults = l.out.c;
                break;
            case LayerKind::add:
                c.adds = l.out.elements();
                break;
            case LayerKind::channel_scale:
                c.mults = l.out.elements();
                break;
            case LayerKind::softmax: {
                // exp per logit at sigmoid cost, one divide per logit, K-1
                // adds for the partition sum.
                const int64_t k = l.out.elements();
                c.mults = k * rules.sigmoid_cost + k;
                c.adds = k - 1;
                break;
            }
        }

        total.params_raw += c.params_raw;
        total.params_effective += c.params_effective;
        total.mults += c.mults;
        total.adds += c.adds;
        total.per_layer.push_back(std::move(c));
    }
    return total;
}

/// Fills in bit-width overrides for every weighted tensor of a graph that
/// has no override yet, from the first matching quantization pattern.
inline void apply_quant_patterns(Overrides& overrides, const LayerGraph& graph,
                                 const std::vector<QuantRule>& quant) {
    if (quant.empty()) return;
    auto add = [&](const std::string& tensor) {
        if (overrides.find(tensor) != overrides.end()) return;
        for (const auto& q : quant) {
            if (glob_match(q.pattern, tensor)) {
                overrides.emplace(tensor, TensorOverride{{}, q.bits});
                return;
            }
        }
    };
    for (const auto& l : graph.layers) {
        if (l.kind != LayerKind::conv2d && l.kind != LayerKind::dense) continue;
        add(l.name + ".weight");
        if (l.bias) add(l.name + ".bias");
    }
}

/// Mean per-sample cost of an early-exit deployment: exiting samples pay
/// c_path, the rest pay the full network plus the exit-module overhead.
/// Assumes 0 <= r <= 1 and c_path <= c_main + c_overhead.
inline double expected_ops_with_exit(double c_main, double c_path, double c_overhead, double r) {
    return r * c_path + (1.0 - r) * (c_main + c_overhead);
}

struct ExitCostBreakdown {
    double main_ops = 0.0;      // full main path
    double path_ops = 0.0;      // main path up to the attach point + exit module
    double overhead_ops = 0.0;  // exit module alone (paid by non-exiting samples)
    double main_params = 0.0;
    double exit_params = 0.0;  // parameters the exit module adds
};

/// Splits a model's cost around one early exit. The main-path prefix is every
/// layer up to and including the attach block's last layer.
inline ExitCostBreakdown exit_costs(const ModelSpec& spec, int exit_index, const CountingRules& rules = {},
                                    const Overrides& overrides = {}) {
    if (exit_index < 0 || exit_index >= static_cast<int>(spec.exits.size()))
        throw ValidationError("exit index out of range");
    const LayerGraph main_graph = expand(spec);
    const LayerGraph exit_graph = expand_exit(spec, exit_index);
    const CostReport main_cost = count(main_graph, rules, overrides);
    const CostReport exit_cost = count(exit_graph, rules, overrides);

    const int attach = spec.exits[static_cast<size_t>(exit_index)].after_block;
    int64_t prefix_ops = 0;
    for (size_t li = 0; li < main_graph.layers.size(); ++li) {
        if (main_graph.layers[li].block > attach) break;
        prefix_ops += main_cost.per_layer[li].mults + main_cost.per_layer[li].adds;
    }

    ExitCostBreakdown b;
    b.main_ops = static_cast<double>(main_cost.ops_total());
    b.overhead_ops = static_cast<double>(exit_cost.ops_total());
    b.path_ops = static_cast<double>(prefix_ops) + b.overhead_ops;
    b.main_params = main_cost.params_effective;
    b.exit_params = exit_cost.params_effective;
    return b;
}

}  // namespace sipa
