#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <tuple>
#include <vector>

#include "sipa/checkpoint.hpp"
#include "sipa/common.hpp"
#include "sipa/model_ir.hpp"

namespace sipa {

enum class PruneGranularity { weight, filter };
enum class PruneScope { global, layerwise };

/// Norm used to rescale per-weight keys under layer normalization. The norm
/// choice only matters for global scope (layerwise comparisons are
/// norm-invariant within a tensor).
enum class PruneNorm { none, layer_l2, layer_l1, layer_max };

inline PruneGranularity parse_prune_granularity(const std::string& s) {
    if (s == "weight") return PruneGranularity::weight;
    if (s == "filter") return PruneGranularity::filter;
    throw ValidationError("unknown granularity '" + s + "'");
}

inline PruneScope parse_prune_scope(const std::string& s) {
    if (s == "global") return PruneScope::global;
    if (s == "layerwise") return PruneScope::layerwise;
    throw ValidationError("unknown scope '" + s + "'");
}

inline PruneNorm parse_prune_norm(const std::string& s) {
    if (s == "none") return PruneNorm::none;
    if (s == "layer_l2") return PruneNorm::layer_l2;
    if (s == "layer_l1") return PruneNorm::layer_l1;
    if (s == "layer_max") return PruneNorm::layer_max;
    throw ValidationError("unknown normalization '" + s + "'");
}

struct PruneConfig {
    PruneGranularity granularity = PruneGranularity::weight;
    PruneScope scope = PruneScope::global;
    PruneNorm normalization = PruneNorm::layer_l2;
    std::vector<std::string> exclusions = {"*.bias", "*bn*", "*classifier*"};
};

/// Parses a prune config from JSON: {"granularity", "scope",
/// "normalization", "exclusions"}; all keys optional, unknown keys rejected.
inline PruneConfig parse_prune_config(const std::string& text) {
    ordered_json doc;
    try {
        doc = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("prune config: ") + e.what());
    }
    if (!doc.is_object()) throw ValidationError("prune config: expected an object");
    detail::reject_unknown_keys(doc, {"granularity", "scope", "normalization", "exclusions"}, "prune config");
    PruneConfig cfg;
    if (doc.contains("granularity")) cfg.granularity = parse_prune_granularity(doc.at("granularity").get<std::string>());
    if (doc.contains("scope")) cfg.scope = parse_prune_scope(doc.at("scope").get<std::string>());
    if (doc.contains("normalization")) cfg.normalization = parse_prune_norm(doc.at("normalization").get<std::string>());
    if (doc.contains("exclusions")) {
        cfg.exclusions.clear();
        for (const auto& e : doc.at("exclusions")) cfg.exclusions.push_back(e.get<std::string>());
    }
    return cfg;
}

/// Ordered absolute sparsity targets, strictly increasing within (0, 1).
struct PruneSchedule {
    std::vector<double> rounds;
};

inline void validate(const PruneSchedule& sched) {
    double prev = 0.0;
    for (double t : sched.rounds) {
        if (t <= 0.0 || t >= 1.0) throw ValidationError("schedule targets must be in (0, 1)");
        if (t <= prev) throw ValidationError("schedule targets must be strictly increasing");
        prev = t;
    }
}

/// Default iterative schedule: 10% steps to 50%, 2.5% steps to 60%, then
/// 2% steps to 70%.
inline PruneSchedule iterative_schedule() {
    return {{0.10, 0.20, 0.30, 0.40, 0.50, 0.525, 0.55, 0.575, 0.60, 0.62, 0.64, 0.66, 0.68, 0.70}};
}

/// Parses a schedule from JSON: {"rounds": [0.1, 0.2, ...]}, a bare array of
/// targets, or the string "iterative" for the default schedule.
inline PruneSchedule parse_prune_schedule(const std::string& text) {
    ordered_json doc;
    try {
        doc = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("prune schedule: ") + e.what());
    }
    PruneSchedule sched;
    if (doc.is_string()) {
        if (doc.get<std::string>() != "iterative")
            throw ValidationError("prune schedule: unknown preset '" + doc.get<std::string>() + "'");
        sched = iterative_schedule();
    } else if (doc.is_object()) {
        detail::reject_unknown_keys(doc, {"rounds"}, "prune schedule");
        for (const auto& r : doc.at("rounds")) sched.rounds.push_back(r.get<double>());
    } else if (doc.is_array()) {
        for (const auto& r : doc) sched.rounds.push_back(r.get<double>());
    } else {
        throw ValidationError("prune schedule: expected an array, object, or preset name");
    }
    validate(sched);
    return sched;
}

namespace detail {

inline bool excluded(const std::string& name, const PruneConfig& cfg) {
    for (const auto& pat : cfg.exclusions)
        if (glob_match(pat, name)) return true;
    return false;
}

inline bool depthwise_shape(const std::vector<uint32_t>& shape) { return shape.size() == 4 && shape[1] == 1; }

/// A tensor participates at filter granularity only when it has output
/// filters to remove and is not depthwise.
inline bool prunable(const TensorEntry& e, const PruneConfig& cfg) {
    if (e.values.empty() || excluded(e.name, cfg)) return false;
    if (cfg.granularity == PruneGranularity::filter && (e.shape.size() < 2 || depthwise_shape(e.shape)))
        return false;
    return true;
}

/// Norm over currently kept values; 1 when normalization is off or the norm
/// degenerates to 0.
inline double layer_norm(const TensorEntry& e, PruneNorm norm) {
    if (norm == PruneNorm::none) return 1.0;
    double acc = 0.0;
    for (size_t i = 0; i < e.values.size(); ++i) {
        if (!e.mask.empty() && !e.mask[i]) continue;
        const double v = std::abs(static_cast<double>(e.values[i]));
        if (norm == PruneNorm::layer_l2)
            acc += v * v;
        else if (norm == PruneNorm::layer_l1)
            acc += v;
        else
            acc = std::max(acc, v);
    }
    if (norm == PruneNorm::layer_l2) acc = std::sqrt(acc);
    return acc > 0.0 ? acc : 1.0;
}

struct Candidate {
    double key;
    TensorEntry* owner;
    int64_t index;  // flat value index (weight) or filter index (filter)
    int64_t weight_count;

    bool operator<(const Candidate& other) const {
        return std::tie(key, owner->name, index) < std::tie(other.key, other.owner->name, other.index);
    }
};

inline int64_t filter_extent(const TensorEntry& e) {
    int64_t n = 1;
    for (size_t d = 1; d < e.shape.size(); ++d) n *= e.shape[d];
    return n;
}

inline void mask_filter(TensorEntry& e, int64_t filter) {
    const int64_t extent = filter_extent(e);
    std::fill(e.mask.begin() + filter * extent, e.mask.begin() + (filter + 1) * extent, uint8_t{0});
}

}  // namespace detail

/// Prunes to the target global sparsity by magnitude. Masks are cumulative:
/// already-pruned positions never return. Global scope ranks weights (or
/// whole output filters, keyed by L1 norm) across all prunable tensors with
/// normalization-scaled keys; layerwise scope removes the lowest-|w| fraction
/// inside each tensor independently. Ties break by (name, index) ascending.
inline Checkpoint magnitude_prune(const Checkpoint& ckpt, const PruneConfig& cfg, double target_sparsity) {
    if (target_sparsity <= 0.0 || target_sparsity >= 1.0)
        throw ValidationError("target sparsity must be in (0, 1)");

    Checkpoint out = ckpt;
    std::vector<TensorEntry*> tensors;
    for (auto& e : out.entries)
        if (detail::prunable(e, cfg)) tensors.push_back(&e);
    if (tensors.empty()) throw ValidationError("no prunable tensors");

    for (auto* e : tensors)
        if (e->mask.empty()) e->mask.assign(e->values.size(), uint8_t{1});

    int64_t total = 0, pruned = 0;
    for (const auto* e : tensors) {
        total += e->size();
        pruned += e->size() - e->nnz();
    }
    const int64_t target_n = std::llround(target_sparsity * static_cast<double>(total));
    if (target_n < pruned)
        throw ValidationError("target sparsity below current sparsity");

    if (cfg.scope == PruneScope::layerwise) {
        for (auto* e : tensors) {
            if (cfg.granularity == PruneGranularity::weight) {
                const int64_t tensor_target = std::llround(target_sparsity * static_cast<double>(e->size()));
                std::vector<detail::Candidate> cands;
                for (int64_t i = 0; i < e->size(); ++i)
                    if (e->mask[static_cast<size_t>(i)])
                        cands.push_back({std::abs(static_cast<double>(e->values[static_cast<size_t>(i)])), e, i, 1});
                std::sort(cands.begin(), cands.end());
                int64_t already = e->size() - e->nnz();
                if (tensor_target < already)
                    throw ValidationError("target sparsity below current sparsity in tensor '" + e->name + "'");
                for (int64_t n = 0; n < tensor_target - already; ++n)
                    e->mask[static_cast<size_t>(cands[static_cast<size_t>(n)].index)] = 0;
            } else {
                const int64_t extent = detail::filter_extent(*e);
                const int64_t filters = static_cast<int64_t>(e->shape[0]);
                std::vector<detail::Candidate> cands;
                const int64_t already = e->size() - e->nnz();
                for (int64_t f = 0; f < filters; ++f) {
                    double l1 = 0.0;
                    int64_t alive = 0;
                    for (int64_t i = f * extent; i < (f + 1) * extent; ++i)
                        if (e->mask[static_cast<size_t>(i)]) {
                            l1 += std::abs(static_cast<double>(e->values[static_cast<size_t>(i)]));
                            ++alive;
                        }
                    if (alive > 0) cands.push_back({l1, e, f, alive});
                }
                std::sort(cands.begin(), cands.end());
                const int64_t tensor_target = std::llround(target_sparsity * static_cast<double>(e->size()));
                int64_t done = already;
                for (const auto& c : cands) {
                    if (done >= tensor_target) break;
                    detail::mask_filter(*e, c.index);
                    done += c.weight_count;
                }
            }
        }
        return out;
    }

    // Global scope: one deterministic sort across tensors.
    std::vector<detail::Candidate> cands;
    std::vector<double> norms(tensors.size());
    for (size_t t = 0; t < tensors.size(); ++t) norms[t] = detail::layer_norm(*tensors[t], cfg.normalization);

    for (size_t t = 0; t < tensors.size(); ++t) {
        TensorEntry* e = tensors[t];
        if (cfg.granularity == PruneGranularity::weight) {
            for (int64_t i = 0; i < e->size(); ++i)
                if (e->mask[static_cast<size_t>(i)])
                    cands.push_back(
                        {std::abs(static_cast<double>(e->values[static_cast<size_t>(i)])) / norms[t], e, i, 1});
        } else {
            const int64_t extent = detail::filter_extent(*e);
            for (int64_t f = 0; f < static_cast<int64_t>(e->shape[0]); ++f) {
                double l1 = 0.0;
                int64_t alive = 0;
                for (int64_t i = f * extent; i < (f + 1) * extent; ++i)
                    if (e->mask[static_cast<size_t>(i)]) {
                        l1 += std::abs(static_cast<double>(e->values[static_cast<size_t>(i)]));
                        ++alive;
                    }
                if (alive > 0) cands.push_back({l1 / norms[t], e, f, alive});
            }
        }
    }
    std::sort(cands.begin(), cands.end());

    int64_t to_prune = target_n - pruned;
    for (const auto& c : cands) {
        if (to_prune <= 0) break;
        if (cfg.granularity == PruneGranularity::weight) {
            c.owner->mask[static_cast<size_t>(c.index)] = 0;
            --to_prune;
        } else {
            detail::mask_filter(*c.owner, c.index);
            to_prune -= c.weight_count;
        }
    }
    return out;
}

struct TensorSparsity {
    std::string name;
    int64_t nnz = 0;
    int64_t size = 0;
    bool prunable = false;

    double sparsity() const { return size == 0 ? 0.0 : 1.0 - static_cast<double>(nnz) / static_cast<double>(size); }
};

struct SparsityReport {
    std::vector<TensorSparsity> tensors;
    int64_t prunable_nnz = 0;
    int64_t prunable_size = 0;

    double global_sparsity() const {
        return prunable_size == 0 ? 0.0
                                  : 1.0 - static_cast<double>(prunable_nnz) / static_cast<double>(prunable_size);
    }
};

inline SparsityReport sparsity_report(const Checkpoint& ckpt, const PruneConfig& cfg = {}) {
    SparsityReport r;
    for (const auto& e : ckpt.entries) {
        TensorSparsity t;
        t.name = e.name;
        t.nnz = e.nnz();
        t.size = e.size();
        t.prunable = detail::prunable(e, cfg);
        if (t.prunable) {
            r.prunable_nnz += t.nnz;
            r.prunable_size += t.size;
        }
        r.tensors.push_back(std::move(t));
    }
    return r;
}

struct RetrainOutcome {
    Checkpoint ckpt;
    double accuracy = 0.0;
};

/// Fine-tunes a freshly pruned checkpoint and reports its accuracy. Called
/// once per schedule round with the 1-based round number and that round's
/// sparsity target.
using RetrainHook = std::function<RetrainOutcome(int round, double target, const Checkpoint& pruned)>;

struct PruneRound {
    int round = 0;
    double target = 0.0;
    double achieved = 0.0;
    double accuracy = 0.0;
};

struct ScheduleResult {
    std::vector<PruneRound> history;
    Checkpoint final;
};

/// Runs an iterative prune-retrain schedule. Each round prunes to that
/// round's absolute sparsity target, hands the result to the retrain hook,
/// then re-imposes the round's masks on the returned weights so pruned
/// positions stay dead. on_round (optional) fires after each round completes.
inline ScheduleResult run_schedule(const Checkpoint& ckpt, const PruneSchedule& sched, const PruneConfig& cfg,
                                   const RetrainHook& retrain,
                                   const std::function<void(const PruneRound&, const Checkpoint&)>& on_round = {}) {
    validate(sched);
    ScheduleResult result;
    result.final = ckpt;
    for (size_t r = 0; r < sched.rounds.size(); ++r) {
        const int round = static_cast<int>(r) + 1;
        const double target = sched.rounds[r];
        Checkpoint pruned = magnitude_prune(result.final, cfg, target);

        RetrainOutcome outcome;
        try {
            outcome = retrain(round, target, pruned);
        } catch (const std::exception& e) {
            throw EvaluatorError("retrain hook failed at round " + std::to_string(round) + ": " + e.what());
        }

        // The hook may return fresh values without masks; restore them.
        for (auto& e : outcome.ckpt.entries)
            if (const TensorEntry* src = pruned.find(e.name); src && !src->mask.empty()) e.mask = src->mask;
        result.final = apply_masks(outcome.ckpt);

        PruneRound rec;
        rec.round = round;
        rec.target = target;
        rec.achieved = sparsity_report(result.final, cfg).global_sparsity();
        rec.accuracy = outcome.accuracy;
        if (on_round) on_round(rec, result.final);
        result.history.push_back(rec);
    }
    return result;
}

}  // namespace sipa
