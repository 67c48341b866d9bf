#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "sipa/prune.hpp"

using namespace sipa;

namespace {

TensorEntry tensor(std::string name, std::vector<float> values) {
    TensorEntry e;
    e.name = std::move(name);
    e.shape = {static_cast<uint32_t>(values.size())};
    e.values = std::move(values);
    e.dtype = Dtype::f32;
    return e;
}

std::vector<uint8_t> mask_of(const Checkpoint& ck, const std::string& name) {
    const TensorEntry* e = ck.find(name);
    REQUIRE(e != nullptr);
    return e->mask.empty() ? std::vector<uint8_t>(e->values.size(), 1) : e->mask;
}

// Full-sort reference for global weight pruning: build (key, name, index)
// triples, sort them, and mask the first target_n - already positions.
Checkpoint oracle_global_weight(const Checkpoint& ckpt, const PruneConfig& cfg, double target) {
    Checkpoint out = ckpt;
    struct Item {
        double key;
        std::string name;
        int64_t index;
    };
    std::vector<Item> items;
    int64_t total = 0, pruned = 0;
    std::map<std::string, std::vector<uint8_t>*> masks;
    for (auto& e : out.entries) {
        if (e.values.empty() || detail::excluded(e.name, cfg)) continue;
        if (e.mask.empty()) e.mask.assign(e.values.size(), 1);
        masks[e.name] = &e.mask;
        double norm = 1.0;
        if (cfg.normalization == PruneNorm::layer_l2) {
            double acc = 0.0;
            for (size_t i = 0; i < e.values.size(); ++i)
                if (e.mask[i]) acc += static_cast<double>(e.values[i]) * e.values[i];
            norm = std::sqrt(acc);
            if (norm == 0.0) norm = 1.0;
        }
        for (size_t i = 0; i < e.values.size(); ++i) {
            total += 1;
            if (!e.mask[i]) {
                pruned += 1;
                continue;
            }
            items.push_back({std::abs(static_cast<double>(e.values[i])) / norm, e.name,
                             static_cast<int64_t>(i)});
        }
    }
    std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
        return std::tie(a.key, a.name, a.index) < std::tie(b.key, b.name, b.index);
    });
    int64_t need = std::llround(target * static_cast<double>(total)) - pruned;
    for (const auto& it : items) {
        if (need <= 0) break;
        (*masks[it.name])[static_cast<size_t>(it.index)] = 0;
        --need;
    }
    return out;
}

bool same_masks(const Checkpoint& a, const Checkpoint& b) {
    if (a.entries.size() != b.entries.size()) return false;
    for (size_t i = 0; i < a.entries.size(); ++i)
        if (a.entries[i].mask != b.entries[i].mask) return false;
    return true;
}

}  // namespace

TEST_CASE("layerwise 50% keeps the two largest magnitudes") {
    Checkpoint ck;
    ck.entries.push_back(tensor("w", {0.1f, -0.5f, 0.3f, -0.2f}));
    PruneConfig cfg;
    cfg.scope = PruneScope::layerwise;
    const Checkpoint out = magnitude_prune(ck, cfg, 0.5);
    CHECK(mask_of(out, "w") == std::vector<uint8_t>{0, 1, 1, 0});
}

TEST_CASE("global layer_l2 ties break by tensor name then index") {
    Checkpoint ck;
    ck.entries.push_back(tensor("a", {3.0f, 4.0f}));   // L2 norm 5
    ck.entries.push_back(tensor("b", {0.6f, 0.8f}));   // L2 norm 1
    PruneConfig cfg;                                   // global + layer_l2 defaults
    const Checkpoint out = magnitude_prune(ck, cfg, 0.5);
    // normalized keys are [0.6, 0.8] in both tensors; one weight pruned per layer
    CHECK(mask_of(out, "a") == std::vector<uint8_t>{0, 1});
    CHECK(mask_of(out, "b") == std::vector<uint8_t>{0, 1});
}

TEST_CASE("global without normalization prunes the smallest raw magnitudes") {
    Checkpoint ck;
    ck.entries.push_back(tensor("a", {3.0f, 4.0f}));
    ck.entries.push_back(tensor("b", {0.6f, 0.8f}));
    PruneConfig cfg;
    cfg.normalization = PruneNorm::none;
    const Checkpoint out = magnitude_prune(ck, cfg, 0.5);
    CHECK(mask_of(out, "a") == std::vector<uint8_t>{1, 1});
    CHECK(mask_of(out, "b") == std::vector<uint8_t>{0, 0});
}

TEST_CASE("global masks equal the full-sort reference") {
    Rng rng(60914);
    for (int it = 0; it < 200; ++it) {
        Checkpoint ck;
        const int tensors = static_cast<int>(rng.uniform_int(1, 5));
        int64_t total = 0;
        for (int t = 0; t < tensors; ++t) {
            const int n = static_cast<int>(rng.uniform_int(1, 200));
            total += n;
            std::vector<float> v(static_cast<size_t>(n));
            for (auto& x : v) x = static_cast<float>(rng.uniform(-2.0, 2.0));
            // duplicated magnitudes force tie-breaking through the sort order
            if (n > 4 && rng.uniform() < 0.5) v[1] = -v[0];
            TensorEntry e = tensor("t" + std::to_string(t), std::move(v));
            if (rng.uniform() < 0.3) {
                e.mask.assign(e.values.size(), 1);
                for (auto& m : e.mask) m = rng.uniform() < 0.85 ? 1 : 0;
            }
            ck.entries.push_back(std::move(e));
        }
        PruneConfig cfg;
        cfg.normalization = rng.uniform() < 0.5 ? PruneNorm::none : PruneNorm::layer_l2;
        double current = 1.0 - static_cast<double>([&] {
                             int64_t nnz = 0;
                             for (const auto& e : ck.entries) nnz += e.nnz();
                             return nnz;
                         }()) / static_cast<double>(total);
        const double target = std::min(0.95, current + 0.05 + rng.uniform() * (0.9 - current));
        const Checkpoint got = magnitude_prune(ck, cfg, target);
        const Checkpoint want = oracle_global_weight(ck, cfg, target);
        CHECK(same_masks(got, want));
    }
}

TEST_CASE("layer_l2 selection is invariant to rescaling one tensor") {
    Rng rng(17);
    Checkpoint ck;
    for (int t = 0; t < 3; ++t) {
        std::vector<float> v(50);
        for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
        ck.entries.push_back(tensor("t" + std::to_string(t), std::move(v)));
    }
    PruneConfig cfg;
    const Checkpoint base = magnitude_prune(ck, cfg, 0.4);
    Checkpoint scaled = ck;
    for (auto& x : scaled.entries[1].values) x *= 37.5f;
    const Checkpoint out = magnitude_prune(scaled, cfg, 0.4);
    CHECK(same_masks(base, out));
}

TEST_CASE("masks are cumulative across rising targets") {
    Rng rng(23);
    Checkpoint ck;
    std::vector<float> v(300);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    ck.entries.push_back(tensor("w", std::move(v)));
    const Checkpoint at30 = magnitude_prune(ck, {}, 0.3);
    const Checkpoint at60 = magnitude_prune(at30, {}, 0.6);
    const auto m30 = mask_of(at30, "w");
    const auto m60 = mask_of(at60, "w");
    for (size_t i = 0; i < m30.size(); ++i)
        if (!m30[i]) CHECK_FALSE(m60[i]);
    CHECK_THROWS_AS(magnitude_prune(at60, {}, 0.3), ValidationError);
}

TEST_CASE("layerwise scope equalizes per-tensor sparsity") {
    Rng rng(29);
    Checkpoint ck;
    for (int t = 0; t < 4; ++t) {
        std::vector<float> v(static_cast<size_t>(rng.uniform_int(40, 400)));
        for (auto& x : v) x = static_cast<float>(rng.uniform(-5.0, 5.0));
        ck.entries.push_back(tensor("t" + std::to_string(t), std::move(v)));
    }
    PruneConfig cfg;
    cfg.scope = PruneScope::layerwise;
    const Checkpoint out = magnitude_prune(ck, cfg, 0.37);
    for (const auto& e : out.entries) {
        const double s = 1.0 - static_cast<double>(e.nnz()) / static_cast<double>(e.size());
        CHECK(std::abs(s - 0.37) <= 1.0 / static_cast<double>(e.size()) + 1e-12);
    }
}

TEST_CASE("filter granularity masks whole output filters by L1 norm") {
    Checkpoint ck;
    TensorEntry e;
    e.name = "conv.weight";
    e.shape = {3, 2, 1, 1};  // 3 output filters of 2 weights each
    e.values = {0.9f, 0.9f, 0.1f, 0.1f, 0.5f, 0.5f};
    e.dtype = Dtype::f32;
    ck.entries.push_back(e);
    PruneConfig cfg;
    cfg.granularity = PruneGranularity::filter;
    cfg.normalization = PruneNorm::none;
    const Checkpoint out = magnitude_prune(ck, cfg, 0.34);
    CHECK(mask_of(out, "conv.weight") == std::vector<uint8_t>{1, 1, 0, 0, 1, 1});

    SECTION("a second round removes the next filter") {
        const Checkpoint out2 = magnitude_prune(out, cfg, 0.66);
        CHECK(mask_of(out2, "conv.weight") == std::vector<uint8_t>{1, 1, 0, 0, 0, 0});
    }
}

TEST_CASE("depthwise and flat tensors are excluded from filter granularity") {
    Checkpoint ck;
    TensorEntry dw;
    dw.name = "dw.weight";
    dw.shape = {8, 1, 3, 3};
    dw.values.assign(72, 0.001f);
    dw.dtype = Dtype::f32;
    ck.entries.push_back(dw);
    ck.entries.push_back(tensor("flat.weight", {0.1f, 0.2f}));
    PruneConfig cfg;
    cfg.granularity = PruneGranularity::filter;
    CHECK_THROWS_AS(magnitude_prune(ck, cfg, 0.5), ValidationError);  // nothing prunable

    TensorEntry conv;
    conv.name = "conv.weight";
    conv.shape = {4, 2, 1, 1};
    conv.values = {1, 2, 3, 4, 5, 6, 7, 8};
    conv.dtype = Dtype::f32;
    ck.entries.push_back(conv);
    const Checkpoint out = magnitude_prune(ck, cfg, 0.5);
    CHECK(mask_of(out, "dw.weight") == std::vector<uint8_t>(72, 1));
    CHECK(mask_of(out, "flat.weight") == std::vector<uint8_t>{1, 1});
    CHECK(out.find("conv.weight")->nnz() == 4);
}

TEST_CASE("default exclusions protect bias, bn, and classifier tensors") {
    Checkpoint ck;
    ck.entries.push_back(tensor("conv.weight", {0.001f, 0.002f, 5.0f, 6.0f}));
    ck.entries.push_back(tensor("conv.bias", {0.0001f}));
    ck.entries.push_back(tensor("bn1.weight", {0.0001f}));
    ck.entries.push_back(tensor("classifier.weight", {0.0001f}));
    const Checkpoint out = magnitude_prune(ck, {}, 0.5);
    CHECK(out.find("conv.bias")->mask.empty());
    CHECK(out.find("bn1.weight")->mask.empty());
    CHECK(out.find("classifier.weight")->mask.empty());
    CHECK(out.find("conv.weight")->nnz() == 2);
}

TEST_CASE("magnitude_prune rejects out-of-range targets and empty prunable sets") {
    Checkpoint ck;
    ck.entries.push_back(tensor("w", {1.0f, 2.0f}));
    CHECK_THROWS_AS(magnitude_prune(ck, {}, 0.0), ValidationError);
    CHECK_THROWS_AS(magnitude_prune(ck, {}, 1.0), ValidationError);
    Checkpoint none;
    none.entries.push_back(tensor("x.bias", {1.0f}));
    CHECK_THROWS_AS(magnitude_prune(none, {}, 0.5), ValidationError);
}

TEST_CASE("iterative schedule hits the published round targets") {
    const PruneSchedule s = iterative_schedule();
    const std::vector<double> want{0.10, 0.20, 0.30, 0.40, 0.50, 0.525, 0.55,
                                   0.575, 0.60, 0.62, 0.64, 0.66, 0.68, 0.70};
    CHECK(s.rounds == want);
    CHECK(s.rounds[10] == 0.64);  // round 11
    CHECK_NOTHROW(validate(s));
}

TEST_CASE("run_schedule with an identity hook tracks every target") {
    Rng rng(41);
    Checkpoint ck;
    std::vector<float> v(2000);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    ck.entries.push_back(tensor("w", std::move(v)));

    const auto identity = [](int, double, const Checkpoint& pruned) {
        return RetrainOutcome{pruned, 0.9};
    };
    const ScheduleResult res = run_schedule(ck, iterative_schedule(), {}, identity);
    REQUIRE(res.history.size() == 14);
    for (size_t r = 0; r < res.history.size(); ++r) {
        CHECK(res.history[r].round == static_cast<int>(r) + 1);
        CHECK(std::abs(res.history[r].achieved - res.history[r].target) <= 1.0 / 2000.0 + 1e-12);
        CHECK(res.history[r].accuracy == 0.9);
    }
    const auto rep = sparsity_report(res.final);
    CHECK(rep.global_sparsity() == Catch::Approx(0.70).margin(1.0 / 2000.0));
}

TEST_CASE("run_schedule edge cases") {
    Checkpoint ck;
    ck.entries.push_back(tensor("w", {1, 2, 3, 4, 5, 6, 7, 8, 9, 10}));
    const auto identity = [](int, double, const Checkpoint& pruned) {
        return RetrainOutcome{pruned, 0.0};
    };
    SECTION("empty schedule yields empty history") {
        const ScheduleResult res = run_schedule(ck, PruneSchedule{}, {}, identity);
        CHECK(res.history.empty());
        CHECK(res.final.entries[0].mask.empty());
    }
    SECTION("one-shot 64%") {
        const ScheduleResult res = run_schedule(ck, PruneSchedule{{0.64}}, {}, identity);
        REQUIRE(res.history.size() == 1);
        CHECK(res.history[0].achieved == 0.6);
        CHECK(res.final.entries[0].nnz() == 4);  // llround(0.64 * 10) = 6 pruned
    }
    SECTION("hook failure carries the round index") {
        const auto boom = [](int round, double, const Checkpoint& pruned) -> RetrainOutcome {
            if (round == 2) throw std::runtime_error("gpu fell over");
            return RetrainOutcome{pruned, 0.0};
        };
        CHECK_THROWS_WITH(run_schedule(ck, PruneSchedule{{0.1, 0.3, 0.5}}, {}, boom),
                          Catch::Matchers::ContainsSubstring("round 2"));
    }
    SECTION("masks are re-imposed on hook output") {
        const auto refill = [](int, double, const Checkpoint& pruned) {
            Checkpoint fresh = pruned;
            for (auto& e : fresh.entries) {
                e.mask.clear();  // a retrainer that drops masks entirely
                for (auto& x : e.values) x = 9.0f;
            }
            return RetrainOutcome{fresh, 0.5};
        };
        const ScheduleResult res = run_schedule(ck, PruneSchedule{{0.5}}, {}, refill);
        const auto& e = res.final.entries[0];
        REQUIRE_FALSE(e.mask.empty());
        int64_t zeros = 0;
        for (size_t i = 0; i < e.values.size(); ++i) {
            if (!e.mask[i]) {
                CHECK(e.values[i] == 0.0f);
                ++zeros;
            } else {
                CHECK(e.values[i] == 9.0f);
            }
        }
        CHECK(zeros == 5);
    }
}

TEST_CASE("sparsity_report pinned cases") {
    SECTION("no masks means zero sparsity") {
        Checkpoint ck;
        ck.entries.push_back(tensor("a", {1, 2, 3}));
        const auto rep = sparsity_report(ck);
        CHECK(rep.global_sparsity() == 0.0);
        CHECK(rep.tensors[0].sparsity() == 0.0);
        CHECK(rep.tensors[0].prunable);
    }
    SECTION("one of two equal tensors fully masked is 50% global") {
        Checkpoint ck;
        ck.entries.push_back(tensor("a", {1, 2, 3, 4}));
        TensorEntry b = tensor("b", {1, 2, 3, 4});
        b.mask.assign(4, 0);
        ck.entries.push_back(b);
        CHECK(sparsity_report(ck).global_sparsity() == 0.5);
    }
    SECTION("excluded tensors do not count toward the global ratio") {
        Checkpoint ck;
        ck.entries.push_back(tensor("a", {1, 2}));
        TensorEntry b = tensor("cls.classifier.weight", {3, 4});
        b.mask = {0, 0};
        ck.entries.push_back(b);
        const auto rep = sparsity_report(ck);
        CHECK(rep.global_sparsity() == 0.0);
        CHECK_FALSE(rep.tensors[1].prunable);
    }
}

TEST_CASE("prune config and schedule parsing") {
    const PruneConfig cfg = parse_prune_config(
        R"({"granularity": "filter", "scope": "layerwise", "normalization": "layer_l1",
            "exclusions": ["*.bias"]})");
    CHECK(cfg.granularity == PruneGranularity::filter);
    CHECK(cfg.scope == PruneScope::layerwise);
    CHECK(cfg.normalization == PruneNorm::layer_l1);
    CHECK(cfg.exclusions == std::vector<std::string>{"*.bias"});

    CHECK(parse_prune_config("{}").normalization == PruneNorm::layer_l2);
    CHECK_THROWS_AS(parse_prune_config(R"({"granularity": "block"})"), ValidationError);
    CHECK_THROWS_AS(parse_prune_config(R"({"scopes": "global"})"), ValidationError);
    CHECK_THROWS_AS(parse_prune_config("["), ParseError);

    CHECK(parse_prune_schedule("\"iterative\"").rounds == iterative_schedule().rounds);
    CHECK(parse_prune_schedule(R"({"rounds": [0.25, 0.5]})").rounds == std::vector<double>{0.25, 0.5});
    CHECK(parse_prune_schedule("[0.25, 0.5]").rounds == std::vector<double>{0.25, 0.5});
    CHECK_THROWS_AS(parse_prune_schedule(R"({"rounds": [0.5, 0.5]})"), ValidationError);
    CHECK_THROWS_AS(parse_prune_schedule(R"({"rounds": [0.5, 1.5]})"), ValidationError);
    CHECK_THROWS_AS(parse_prune_schedule("\"aggressive\""), ValidationError);
}
