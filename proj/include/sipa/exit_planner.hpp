#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "sipa/common.hpp"
#include "sipa/cost_model.hpp"
#include "sipa/evalset.hpp"

namespace sipa {

inline constexpr double kProbFloor = 1e-12;

/// Numerically stable softmax (max-subtraction).
inline std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> p(logits.size());
    if (logits.empty()) return p;
    const double zmax = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - zmax);
        sum += p[i];
    }
    for (auto& v : p) v /= sum;
    return p;
}

inline double confidence(std::span<const double> probs) {
    return probs.empty() ? 0.0 : *std::max_element(probs.begin(), probs.end());
}

/// Natural-log cross-entropy with a 1e-12 probability floor.
inline double cross_entropy(std::span<const double> probs, std::span<const double> target) {
    if (probs.size() != target.size()) throw ValidationError("cross entropy: size mismatch");
    double h = 0.0;
    for (size_t i = 0; i < probs.size(); ++i)
        if (target[i] != 0.0) h -= target[i] * std::log(std::max(probs[i], kProbFloor));
    return h;
}

/// (1 + Confidence(y_hat)) * H(y_hat, y): cross-entropy weighted up on
/// confident predictions, which flattens overconfident heads. Always within
/// [H, 2H].
inline double softsmoothing_loss(std::span<const double> logits, std::span<const double> target) {
    const std::vector<double> p = softmax(logits);
    return (1.0 + confidence(p)) * cross_entropy(p, target);
}

/// Analytic gradient of softsmoothing_loss w.r.t. the logits. With
/// detach_confidence the (1 + c) factor is treated as a constant:
///   g_i = (1 + c) * (p_i - y_i)
/// otherwise the product rule adds the confidence path through the argmax
/// probability m:
///   g_i += H * p_m * ([i == m] - p_i)
inline std::vector<double> softsmoothing_grad(std::span<const double> logits, std::span<const double> target,
                                              bool detach_confidence) {
    if (logits.size() != target.size()) throw ValidationError("softsmoothing grad: size mismatch");
    const std::vector<double> p = softmax(logits);
    const size_t m = static_cast<size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    const double c = p[m];
    const double h = cross_entropy(p, target);

    std::vector<double> g(logits.size());
    for (size_t i = 0; i < g.size(); ++i) {
        g[i] = (1.0 + c) * (p[i] - target[i]);
        if (!detach_confidence) g[i] += h * c * ((i == m ? 1.0 : 0.0) - p[i]);
    }
    return g;
}

struct ExitCosts {
    double c_main = 0.0;
    double c_path = 0.0;
    double c_overhead = 0.0;
};

struct ExitPlan {
    int head = 0;
    double threshold = 0.0;
    double exit_ratio = 0.0;
    double total_accuracy = 0.0;
    double expected_ops = 0.0;
    double op_score = 0.0;
    bool feasible = true;
};

namespace detail {

struct SampleOutcome {
    double conf;
    bool exit_correct;
    bool main_correct;
};

inline std::vector<SampleOutcome> head_outcomes(const EvalSet& ev, uint32_t head) {
    if (ev.head_count() < 2) throw ValidationError("exit planning needs at least two heads");
    if (head + 1 >= ev.head_count()) throw ValidationError("exit head must come before the main head");
    const uint32_t main_head = ev.head_count() - 1;
    std::vector<SampleOutcome> out(ev.n);
    std::vector<double> logits(ev.k);
    for (uint32_t i = 0; i < ev.n; ++i) {
        const float* row = ev.row(head, i);
        for (uint32_t j = 0; j < ev.k; ++j) logits[j] = row[j];
        out[i].conf = confidence(softmax(logits));
        out[i].exit_correct = argmax_row(row, ev.k) == ev.labels[i];
        out[i].main_correct = argmax_row(ev.row(main_head, i), ev.k) == ev.labels[i];
    }
    return out;
}

inline ExitPlan plan_at(const std::vector<SampleOutcome>& outcomes, uint32_t head, double theta,
                        const ExitCosts& costs) {
    int64_t exits = 0, correct = 0;
    for (const auto& s : outcomes) {
        const bool take_exit = s.conf >= theta;
        exits += take_exit ? 1 : 0;
        correct += (take_exit ? s.exit_correct : s.main_correct) ? 1 : 0;
    }
    const double n = static_cast<double>(outcomes.size());
    ExitPlan plan;
    plan.head = static_cast<int>(head);
    plan.threshold = theta;
    plan.exit_ratio = exits / n;
    plan.total_accuracy = correct / n;
    plan.expected_ops = expected_ops_with_exit(costs.c_main, costs.c_path, costs.c_overhead, plan.exit_ratio);
    plan.op_score = plan.expected_ops / kOpDenominator;
    return plan;
}

}  // namespace detail

/// Evaluates a list of candidate thresholds against one exit head. A sample
/// exits when its max-softmax confidence is >= theta; exiting samples are
/// scored by the exit head, the rest by the main head.
inline std::vector<ExitPlan> sweep(const EvalSet& ev, uint32_t head, const std::vector<double>& thresholds,
                                   const ExitCosts& costs) {
    validate(ev);
    if (ev.n == 0) throw ValidationError("empty evalset");
    const auto outcomes = detail::head_outcomes(ev, head);
    std::vector<ExitPlan> plans;
    plans.reserve(thresholds.size());
    for (double theta : thresholds) plans.push_back(detail::plan_at(outcomes, head, theta, costs));
    return plans;
}

/// Globally minimizes op_score subject to total_accuracy >= accuracy_floor.
/// The objective is piecewise constant in theta, so candidates are exactly
/// the observed confidences plus one value above 1 (the no-exit plan). If no
/// candidate meets the floor, returns the no-exit plan flagged infeasible
/// with expected_ops = c_main (the exit module is simply not deployed).
inline ExitPlan tune_threshold(const EvalSet& ev, uint32_t head, const ExitCosts& costs, double accuracy_floor) {
    validate(ev);
    if (ev.n == 0) throw ValidationError("empty evalset");
    const auto outcomes = detail::head_outcomes(ev, head);

    std::vector<double> candidates;
    candidates.reserve(outcomes.size() + 1);
    for (const auto& s : outcomes) candidates.push_back(s.conf);
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    candidates.push_back(std::nextafter(1.0, 2.0));

    const ExitPlan* best = nullptr;
    std::vector<ExitPlan> plans;
    plans.reserve(candidates.size());
    for (double theta : candidates) {
        plans.push_back(detail::plan_at(outcomes, head, theta, costs));
        const ExitPlan& p = plans.back();
        if (p.total_accuracy < accuracy_floor) continue;
        if (!best || p.op_score < best->op_score ||
            (p.op_score == best->op_score &&
             (p.total_accuracy > best->total_accuracy ||
              (p.total_accuracy == best->total_accuracy && p.threshold < best->threshold))))
            best = &p;
    }
    if (best) return *best;

    ExitPlan none = detail::plan_at(outcomes, head, std::nextafter(1.0, 2.0), costs);
    none.expected_ops = costs.c_main;
    none.op_score = costs.c_main / kOpDenominator;
    none.feasible = false;
    return none;
}

struct RiskCoveragePoint {
    double threshold = 0.0;
    double coverage = 0.0;
    double risk = 0.0;
};

/// Selective-prediction curve for one head: at each distinct confidence
/// threshold, the fraction of samples accepted and the error rate among
/// them. Coverage is strictly increasing.
inline std::vector<RiskCoveragePoint> risk_coverage(const EvalSet& ev, uint32_t head) {
    validate(ev);
    if (head >= ev.head_count()) throw ValidationError("head index out of range");
    struct Item {
        double conf;
        bool correct;
    };
    std::vector<Item> items(ev.n);
    std::vector<double> logits(ev.k);
    for (uint32_t i = 0; i < ev.n; ++i) {
        const float* row = ev.row(head, i);
        for (uint32_t j = 0; j < ev.k; ++j) logits[j] = row[j];
        items[i] = {confidence(softmax(logits)), argmax_row(row, ev.k) == ev.labels[i]};
    }
    std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.conf > b.conf; });

    std::vector<RiskCoveragePoint> curve;
    int64_t accepted = 0, errors = 0;
    const double n = static_cast<double>(ev.n);
    for (size_t i = 0; i < items.size(); ++i) {
        ++accepted;
        errors += items[i].correct ? 0 : 1;
        const bool last_of_threshold = i + 1 == items.size() || items[i + 1].conf != items[i].conf;
        if (last_of_threshold)
            curve.push_back({items[i].conf, accepted / n, static_cast<double>(errors) / accepted});
    }
    return curve;
}

}  // namespace sipa
