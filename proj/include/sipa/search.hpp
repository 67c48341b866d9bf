#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <future>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "sipa/common.hpp"
#include "sipa/evaluator.hpp"

namespace sipa {

enum class Metric { param_score, op_score, total };

inline Metric parse_metric(const std::string& s) {
    if (s == "param_score") return Metric::param_score;
    if (s == "op_score") return Metric::op_score;
    if (s == "total") return Metric::total;
    throw ValidationError("unknown metric '" + s + "'");
}

inline std::string metric_name(Metric m) {
    switch (m) {
        case Metric::param_score: return "param_score";
        case Metric::op_score: return "op_score";
        case Metric::total: return "total";
    }
    return "total";
}

/// Parameters of R(x) = A(x) - [penalty_weight * I(F(x) - thres)]^w.
struct FitnessParams {
    double penalty_weight = 1.0;
    double w = 2.0;
    double thres = 1.0;
    Metric metric = Metric::total;

    void check() const {
        if (penalty_weight <= 0.0 || w <= 0.0 || thres <= 0.0)
            throw ValidationError("fitness parameters must be positive");
    }
};

/// Accuracy minus a step penalty when the resource budget is exceeded. For
/// F <= thres this is A exactly.
inline double fitness(double accuracy, double resource, const FitnessParams& p) {
    p.check();
    const double step = resource > p.thres ? 1.0 : 0.0;
    return accuracy - std::pow(p.penalty_weight * step, p.w);
}

// ---------------------------------------------------------------------------
// Search space

enum class DimType { integer, real, choice };

struct Dimension {
    std::string name;
    DimType type = DimType::real;
    double lo = 0.0, hi = 1.0;  // integer bounds are stored exactly in doubles
    std::vector<std::string> choices;
};

struct SearchSpace {
    std::vector<Dimension> dims;
};

inline void validate(const SearchSpace& space) {
    if (space.dims.empty()) throw ValidationError("search space has no dimensions");
    for (const auto& d : space.dims) {
        if (d.name.empty()) throw ValidationError("dimension names must be non-empty");
        for (const auto& other : space.dims)
            if (&other != &d && other.name == d.name)
                throw ValidationError("duplicate dimension name '" + d.name + "'");
        if (d.type == DimType::choice) {
            if (d.choices.empty()) throw ValidationError("dimension '" + d.name + "': empty choice set");
        } else if (!(d.lo <= d.hi)) {
            throw ValidationError("dimension '" + d.name + "': lo must be <= hi");
        }
    }
}

inline SearchSpace parse_search_space(const std::string& text) {
    ordered_json doc;
    try {
        doc = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("search space: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("dims") || !doc.at("dims").is_array())
        throw ValidationError("search space: expected an object with a 'dims' array");
    SearchSpace space;
    for (const auto& jd : doc.at("dims")) {
        Dimension d;
        d.name = jd.at("name").get<std::string>();
        const std::string type = jd.at("type").get<std::string>();
        if (type == "integer") {
            d.type = DimType::integer;
            d.lo = jd.at("lo").get<double>();
            d.hi = jd.at("hi").get<double>();
        } else if (type == "real") {
            d.type = DimType::real;
            d.lo = jd.at("lo").get<double>();
            d.hi = jd.at("hi").get<double>();
        } else if (type == "choice") {
            d.type = DimType::choice;
            for (const auto& c : jd.at("choices")) d.choices.push_back(c.get<std::string>());
        } else {
            throw ValidationError("search space: unknown dimension type '" + type + "'");
        }
        space.dims.push_back(std::move(d));
    }
    validate(space);
    return space;
}

inline std::string serialize_search_space(const SearchSpace& space) {
    ordered_json doc;
    doc["dims"] = ordered_json::array();
    for (const auto& d : space.dims) {
        ordered_json jd;
        jd["name"] = d.name;
        if (d.type == DimType::choice) {
            jd["type"] = "choice";
            jd["choices"] = d.choices;
        } else {
            jd["type"] = d.type == DimType::integer ? "integer" : "real";
            if (d.type == DimType::integer) {
                jd["lo"] = static_cast<int64_t>(d.lo);
                jd["hi"] = static_cast<int64_t>(d.hi);
            } else {
                jd["lo"] = d.lo;
                jd["hi"] = d.hi;
            }
        }
        doc["dims"].push_back(std::move(jd));
    }
    return doc.dump(2) + "\n";
}

inline Point sample(const SearchSpace& space, Rng& rng) {
    Point p;
    p.reserve(space.dims.size());
    for (const auto& d : space.dims) {
        switch (d.type) {
            case DimType::integer:
                p.emplace_back(d.name, rng.uniform_int(static_cast<int64_t>(d.lo), static_cast<int64_t>(d.hi)));
                break;
            case DimType::real: p.emplace_back(d.name, rng.uniform(d.lo, d.hi)); break;
            case DimType::choice:
                p.emplace_back(d.name,
                               d.choices[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(d.choices.size()) - 1))]);
                break;
        }
    }
    return p;
}

// ---------------------------------------------------------------------------
// Trials and the append-only log

struct Trial {
    int index = 0;
    Point x;
    double accuracy = 0.0;
    double resource = 0.0;
    double fitness = 0.0;
    bool ok = true;
    std::string error;
    double duration_ms = 0.0;  // never serialized; durations live in a side log
};

inline std::string serialize_trial_line(const Trial& t) {
    ordered_json j;
    j["index"] = t.index;
    j["x"] = point_to_json(t.x);
    j["ok"] = t.ok;
    if (t.ok) {
        j["accuracy"] = t.accuracy;
        j["resource"] = t.resource;
        j["fitness"] = t.fitness;
    } else {
        j["error"] = t.error;
    }
    return j.dump();
}

inline Trial parse_trial_line(const std::string& line) {
    ordered_json j;
    try {
        j = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("trial log: ") + e.what());
    }
    Trial t;
    t.index = j.at("index").get<int>();
    t.x = point_from_json(j.at("x"));
    t.ok = j.at("ok").get<bool>();
    if (t.ok) {
        t.accuracy = j.at("accuracy").get<double>();
        t.resource = j.at("resource").get<double>();
        t.fitness = j.at("fitness").get<double>();
    } else {
        t.error = j.value("error", std::string());
    }
    return t;
}

/// Loads an existing (possibly absent) trial log for resuming a search.
inline std::vector<Trial> load_trial_log(const std::string& path) {
    std::vector<Trial> out;
    std::ifstream is(path);
    if (!is) return out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        out.push_back(parse_trial_line(line));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Searchers

/// External accuracy measurement for one sampled point.
using AccuracyFn = std::function<double(int trial_index, const Point&)>;
/// Internal resource measurement (the cost model applied to the point).
using ResourceFn = std::function<double(const Point&)>;

struct SearchOptions {
    int jobs = 1;
    std::vector<Trial> resume;  // completed trials from a previous run, in index order
    std::function<void(const Trial&)> on_trial;
    double smbo_gamma = 0.25;
    int smbo_candidates = 24;
};

struct SearchResult {
    std::vector<Trial> log;
    int best_index = -1;  // -1 when every trial failed

    const Trial* best() const {
        if (best_index < 0) return nullptr;
        for (const auto& t : log)
            if (t.index == best_index) return &t;
        return nullptr;
    }
};

namespace detail {

inline void update_best(SearchResult& result) {
    result.best_index = -1;
    double best_fitness = 0.0;
    for (const auto& t : result.log) {
        if (!t.ok) continue;
        if (result.best_index < 0 || t.fitness > best_fitness) {
            result.best_index = t.index;
            best_fitness = t.fitness;
        }
    }
}

inline Trial evaluate_point(int index, Point point, const AccuracyFn& accuracy_fn, const ResourceFn& resource_fn,
                            const FitnessParams& fp) {
    Trial t;
    t.index = index;
    t.x = std::move(point);
    try {
        t.resource = resource_fn(t.x);
        t.accuracy = accuracy_fn(index, t.x);
        t.fitness = fitness(t.accuracy, t.resource, fp);
    } catch (const std::exception& e) {
        t.ok = false;
        t.error = e.what();
    }
    return t;
}

/// Runs one batch of evaluations, appending results in index order.
template <typename ProposeFn>
inline void run_batch(SearchResult& result, int begin, int end, const ProposeFn& propose,
                      const AccuracyFn& accuracy_fn, const ResourceFn& resource_fn, const FitnessParams& fp,
                      const SearchOptions& opts) {
    std::vector<Point> points;
    points.reserve(static_cast<size_t>(end - begin));
    for (int i = begin; i < end; ++i) points.push_back(propose(i, result));

    std::vector<Trial> batch(static_cast<size_t>(end - begin));
    if (end - begin > 1 && opts.jobs > 1) {
        std::vector<std::future<Trial>> futures;
        for (int i = begin; i < end; ++i)
            futures.push_back(std::async(std::launch::async, evaluate_point, i,
                                         std::move(points[static_cast<size_t>(i - begin)]), std::cref(accuracy_fn),
                                         std::cref(resource_fn), std::cref(fp)));
        for (size_t f = 0; f < futures.size(); ++f) batch[f] = futures[f].get();
    } else {
        for (int i = begin; i < end; ++i)
            batch[static_cast<size_t>(i - begin)] =
                evaluate_point(i, std::move(points[static_cast<size_t>(i - begin)]), accuracy_fn, resource_fn, fp);
    }
    for (auto& t : batch) {
        if (opts.on_trial) opts.on_trial(t);
        result.log.push_back(std::move(t));
    }
}

// --- TPE-style density models over the good/bad split ---

struct NumericModel {
    std::vector<double> values;
    double lo, hi, bandwidth = 1.0;

    NumericModel(std::vector<double> vs, double lo_, double hi_) : values(std::move(vs)), lo(lo_), hi(hi_) {
        const size_t m = values.size();
        if (m > 0) {
            const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(m);
            double var = 0.0;
            for (double v : values) var += (v - mean) * (v - mean);
            var /= static_cast<double>(m);
            bandwidth = 1.06 * std::sqrt(var) * std::pow(static_cast<double>(m), -0.2);
        }
        bandwidth = std::max({bandwidth, (hi - lo) * 1e-2, 1e-12});
    }

    double prior_weight() const { return 1.0 / (static_cast<double>(values.size()) + 1.0); }
    double uniform_density() const { return hi > lo ? 1.0 / (hi - lo) : 1.0; }

    double density(double x) const {
        const double u = uniform_density();
        if (values.empty()) return u;
        const double w0 = prior_weight();
        static constexpr double inv_sqrt_2pi = 0.3989422804014327;
        double kde = 0.0;
        for (double v : values) {
            const double z = (x - v) / bandwidth;
            kde += std::exp(-0.5 * z * z) * inv_sqrt_2pi / bandwidth;
        }
        kde /= static_cast<double>(values.size());
        return w0 * u + (1.0 - w0) * kde;
    }

    double draw(Rng& rng) const {
        if (values.empty() || rng.uniform() < prior_weight()) return rng.uniform(lo, hi);
        const double v = values[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(values.size()) - 1))];
        return std::clamp(v + rng.normal() * bandwidth, lo, hi);
    }
};

struct ChoiceModel {
    std::vector<double> probs;  // Laplace-smoothed frequencies

    ChoiceModel(const std::vector<int64_t>& counts, int64_t total) {
        const double c = static_cast<double>(counts.size());
        probs.reserve(counts.size());
        for (int64_t n : counts) probs.push_back((static_cast<double>(n) + 1.0) / (static_cast<double>(total) + c));
    }

    double density(size_t idx) const { return probs[idx]; }

    size_t draw(Rng& rng) const {
        double u = rng.uniform();
        for (size_t i = 0; i < probs.size(); ++i) {
            u -= probs[i];
            if (u <= 0.0) return i;
        }
        return probs.size() - 1;
    }
};

inline double numeric_value(const Value& v) {
    return std::holds_alternative<int64_t>(v) ? static_cast<double>(std::get<int64_t>(v)) : std::get<double>(v);
}

/// One TPE proposal: split completed trials at the fitness quantile, model
/// the good set per dimension, and return the candidate (of
/// `smbo_candidates` drawn from the good model) maximizing the
/// good-to-bad density ratio.
inline Point propose_tpe(const SearchSpace& space, const std::vector<Trial>& history, Rng& rng, double gamma,
                         int n_candidates) {
    std::vector<const Trial*> ok;
    for (const auto& t : history)
        if (t.ok) ok.push_back(&t);
    if (ok.empty()) return sample(space, rng);

    std::sort(ok.begin(), ok.end(), [](const Trial* a, const Trial* b) {
        if (a->fitness != b->fitness) return a->fitness > b->fitness;
        return a->index < b->index;
    });
    const size_t n_good = std::max<size_t>(1, static_cast<size_t>(std::ceil(gamma * static_cast<double>(ok.size()))));

    struct DimModels {
        std::vector<NumericModel> numeric;  // [good, bad] when numeric
        std::vector<ChoiceModel> choice;    // [good, bad] when choice
    };
    std::vector<DimModels> models(space.dims.size());
    for (size_t d = 0; d < space.dims.size(); ++d) {
        const Dimension& dim = space.dims[d];
        if (dim.type == DimType::choice) {
            for (int part = 0; part < 2; ++part) {
                std::vector<int64_t> counts(dim.choices.size(), 0);
                int64_t total = 0;
                const size_t from = part == 0 ? 0 : n_good;
                const size_t to = part == 0 ? n_good : ok.size();
                for (size_t t = from; t < to; ++t) {
                    const std::string& v = std::get<std::string>(ok[t]->x[d].second);
                    for (size_t c = 0; c < dim.choices.size(); ++c)
                        if (dim.choices[c] == v) {
                            ++counts[c];
                            ++total;
                        }
                }
                models[d].choice.emplace_back(counts, total);
            }
        } else {
            for (int part = 0; part < 2; ++part) {
                std::vector<double> vals;
                const size_t from = part == 0 ? 0 : n_good;
                const size_t to = part == 0 ? n_good : ok.size();
                for (size_t t = from; t < to; ++t) vals.push_back(numeric_value(ok[t]->x[d].second));
                models[d].numeric.emplace_back(std::move(vals), dim.lo, dim.hi);
            }
        }
    }

    Point best;
    double best_score = 0.0;
    for (int c = 0; c < n_candidates; ++c) {
        Point cand;
        cand.reserve(space.dims.size());
        double score = 0.0;
        for (size_t d = 0; d < space.dims.size(); ++d) {
            const Dimension& dim = space.dims[d];
            if (dim.type == DimType::choice) {
                const size_t idx = models[d].choice[0].draw(rng);
                cand.emplace_back(dim.name, dim.choices[idx]);
                score += std::log(models[d].choice[0].density(idx)) - std::log(models[d].choice[1].density(idx));
            } else {
                double x = models[d].numeric[0].draw(rng);
                if (dim.type == DimType::integer) x = std::clamp(std::round(x), dim.lo, dim.hi);
                score += std::log(models[d].numeric[0].density(x)) - std::log(models[d].numeric[1].density(x));
                if (dim.type == DimType::integer)
                    cand.emplace_back(dim.name, static_cast<int64_t>(x));
                else
                    cand.emplace_back(dim.name, x);
            }
        }
        if (c == 0 || score > best_score) {
            best = std::move(cand);
            best_score = score;
        }
    }
    return best;
}

}  // namespace detail

/// Uniform random search. Deterministic given the seed: trial i draws from
/// an independent generator seeded with seed ^ i, so resumed or parallel
/// runs see identical points.
inline SearchResult random_search(const SearchSpace& space, const AccuracyFn& accuracy_fn,
                                  const ResourceFn& resource_fn, const FitnessParams& fp, int trials, uint64_t seed,
                                  const SearchOptions& opts = {}) {
    validate(space);
    fp.check();
    if (trials < 1) throw ValidationError("trials must be >= 1");

    SearchResult result;
    result.log = opts.resume;
    auto propose = [&](int index, const SearchResult&) {
        Rng rng(derive_seed(seed, static_cast<uint64_t>(index)));
        return sample(space, rng);
    };
    int next = static_cast<int>(result.log.size());
    const int jobs = std::max(1, opts.jobs);
    while (next < trials) {
        const int end = std::min(trials, next + jobs);
        detail::run_batch(result, next, end, propose, accuracy_fn, resource_fn, fp, opts);
        next = end;
    }
    detail::update_best(result);
    return result;
}

/// TPE-style sequential model-based search: `warmup` random trials, then
/// proposals maximizing the good/bad density ratio over the fitness split at
/// quantile `smbo_gamma`. Deterministic given the seed; with jobs > 1,
/// proposals within a batch share the same history snapshot.
inline SearchResult smbo_search(const SearchSpace& space, const AccuracyFn& accuracy_fn,
                                const ResourceFn& resource_fn, const FitnessParams& fp, int trials, int warmup,
                                uint64_t seed, const SearchOptions& opts = {}) {
    validate(space);
    fp.check();
    if (warmup < 2) throw ValidationError("warmup must be >= 2");
    if (trials <= warmup) throw ValidationError("trials must exceed warmup");

    SearchResult result;
    result.log = opts.resume;
    auto propose = [&](int index, const SearchResult& r) {
        Rng rng(derive_seed(seed, static_cast<uint64_t>(index)));
        if (index < warmup) return sample(space, rng);
        return detail::propose_tpe(space, r.log, rng, opts.smbo_gamma, opts.smbo_candidates);
    };
    int next = static_cast<int>(result.log.size());
    const int jobs = std::max(1, opts.jobs);
    while (next < trials) {
        // Keep the warmup/guided boundary out of any single batch.
        const int cap = next < warmup ? warmup : trials;
        const int end = std::min(cap, next + jobs);
        detail::run_batch(result, next, end, propose, accuracy_fn, resource_fn, fp, opts);
        next = end;
    }
    detail::update_best(result);
    return result;
}

// ---------------------------------------------------------------------------
// Greedy method selection

struct GreedyDecision {
    std::string name;
    double mean = 0.0;       // mean accuracy with the method added
    double reference = 0.0;  // mean it had to beat
    bool accepted = false;
};

struct GreedyResult {
    std::vector<MethodCandidate> accepted;
    std::vector<GreedyDecision> decisions;
    double baseline_mean = 0.0;
    double final_mean = 0.0;
    int evaluations = 0;
    bool completed = false;
    std::string error;
};

/// Accuracy of one greedy evaluation: `enabled` lists the currently accepted
/// methods plus the candidate under test. call_index increments across every
/// evaluator call, so seeds can be derived per call.
using GreedyEvalFn = std::function<double(int call_index, const std::vector<MethodCandidate>& enabled)>;

/// Greedy forward selection over an ordered method list: measure the
/// baseline, then accept each method iff the mean over `repeats` runs beats
/// the current mean by more than `margin`. Exactly (1 + n) * repeats
/// evaluator calls for n methods. Evaluator failure aborts, returning the
/// partial log with `completed` false.
inline GreedyResult greedy_improve(const std::vector<MethodCandidate>& methods, const GreedyEvalFn& evaluate,
                                   int repeats, double margin = 0.0) {
    if (repeats < 1) throw ValidationError("repeats must be >= 1");
    GreedyResult result;

    auto mean_of = [&](const std::vector<MethodCandidate>& enabled) {
        double sum = 0.0;
        for (int r = 0; r < repeats; ++r) {
            sum += evaluate(result.evaluations, enabled);
            ++result.evaluations;
        }
        return sum / repeats;
    };

    try {
        result.baseline_mean = mean_of({});
        double current = result.baseline_mean;
        for (const auto& m : methods) {
            std::vector<MethodCandidate> enabled = result.accepted;
            enabled.push_back(m);
            GreedyDecision d;
            d.name = m.name;
            d.reference = current;
            d.mean = mean_of(enabled);
            d.accepted = d.mean > current + margin;
            if (d.accepted) {
                result.accepted.push_back(m);
                current = d.mean;
            }
            result.decisions.push_back(std::move(d));
        }
        result.final_mean = current;
        result.completed = true;
    } catch (const std::exception& e) {
        result.error = e.what();
        result.completed = false;
    }
    return result;
}

}  // namespace sipa
