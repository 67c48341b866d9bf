#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sipa/common.hpp"
#include "sipa/cost_model.hpp"

namespace sipa {

enum class Stage { searching, improving, pruning, accelerating };

inline Stage parse_stage(const std::string& s) {
    if (s == "searching") return Stage::searching;
    if (s == "improving") return Stage::improving;
    if (s == "pruning") return Stage::pruning;
    if (s == "accelerating") return Stage::accelerating;
    throw ValidationError("unknown stage '" + s + "'");
}

inline std::string stage_name(Stage s) {
    switch (s) {
        case Stage::searching: return "searching";
        case Stage::improving: return "improving";
        case Stage::pruning: return "pruning";
        case Stage::accelerating: return "accelerating";
    }
    return "searching";
}

/// One pipeline stage's outcome. Accuracy is externally supplied and may be
/// absent; scores are always recomputed from the stored counts.
struct StageRecord {
    Stage stage = Stage::searching;
    std::optional<double> accuracy;
    int64_t params_raw = 0;
    double params_effective = 0.0;
    int64_t mults = 0;
    int64_t adds = 0;

    double ops_total() const { return static_cast<double>(mults) + static_cast<double>(adds); }
    ScoreReport scores() const { return score_raw(params_effective, ops_total()); }
};

inline ordered_json stage_record_to_json(const StageRecord& r) {
    ordered_json j;
    j["stage"] = stage_name(r.stage);
    if (r.accuracy) j["accuracy"] = *r.accuracy;
    j["params_raw"] = r.params_raw;
    j["params_effective"] = r.params_effective;
    j["mults"] = r.mults;
    j["adds"] = r.adds;
    return j;
}

inline StageRecord stage_record_from_json(const ordered_json& j) {
    if (!j.is_object()) throw ValidationError("stage record: expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (k != "stage" && k != "accuracy" && k != "params_raw" && k != "params_effective" && k != "mults" &&
            k != "adds")
            throw ValidationError("stage record: unknown key '" + k + "'");
    }
    StageRecord r;
    r.stage = parse_stage(j.at("stage").get<std::string>());
    if (j.contains("accuracy")) r.accuracy = j.at("accuracy").get<double>();
    r.params_raw = j.at("params_raw").get<int64_t>();
    r.params_effective = j.at("params_effective").get<double>();
    r.mults = j.at("mults").get<int64_t>();
    r.adds = j.at("adds").get<int64_t>();
    return r;
}

inline void write_stage_record(const std::string& path, const StageRecord& r) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << stage_record_to_json(r).dump(2) << "\n";
    if (!os) throw IoError("stage record write failed: " + path);
}

inline StageRecord read_stage_record(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path + "' for reading");
    std::ostringstream buf;
    buf << is.rdbuf();
    try {
        return stage_record_from_json(ordered_json::parse(buf.str()));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("stage record '" + path + "': " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Table rendering

struct TableRow {
    std::string label;
    std::optional<double> accuracy;
    double params_effective = 0.0;
    double ops_total = 0.0;
};

namespace detail {

inline std::string fmt_millions(double v) { return format_fixed(v / 1e6, 3) + "M"; }
inline std::string fmt_billions(double v) { return format_fixed(v / 1e9, 3) + "B"; }

inline std::string pad(const std::string& s, size_t width) {
    std::string out = s;
    out.resize(std::max(width, out.size()), ' ');
    return out;
}

}  // namespace detail

/// Renders rows in the scorecard layout:
/// Stage | Accuracy | Parameters(n) | FLOPS(n) | Parameters(s) | FLOPS(s) | Total
inline std::string render_score_table(const std::vector<TableRow>& rows) {
    const std::vector<std::string> header = {"Stage",          "Accuracy", "Parameters(n)", "FLOPS(n)",
                                             "Parameters(s)", "FLOPS(s)", "Total"};
    std::vector<std::vector<std::string>> cells;
    cells.push_back(header);
    for (const auto& r : rows) {
        const ScoreReport s = score_raw(r.params_effective, r.ops_total);
        cells.push_back({r.label, r.accuracy ? format_fixed(*r.accuracy * 100.0, 2) + "%" : "-",
                         detail::fmt_millions(r.params_effective), detail::fmt_billions(r.ops_total),
                         format_fixed(s.param_score, 6), format_fixed(s.op_score, 6), format_fixed(s.total, 6)});
    }
    std::vector<size_t> widths(header.size(), 0);
    for (const auto& row : cells)
        for (size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());

    std::string out;
    for (const auto& row : cells) {
        for (size_t c = 0; c < row.size(); ++c) {
            if (c > 0) out += " | ";
            out += detail::pad(row[c], widths[c]);
        }
        while (!out.empty() && out.back() == ' ') out.pop_back();
        out += "\n";
    }
    return out;
}

/// Renders stage records in canonical stage order.
inline std::string render_stage_table(std::vector<StageRecord> records) {
    std::stable_sort(records.begin(), records.end(),
                     [](const StageRecord& a, const StageRecord& b) { return static_cast<int>(a.stage) < static_cast<int>(b.stage); });
    std::vector<TableRow> rows;
    rows.reserve(records.size());
    for (const auto& r : records) rows.push_back({stage_name(r.stage), r.accuracy, r.params_effective, r.ops_total()});
    return render_score_table(rows);
}

}  // namespace sipa
