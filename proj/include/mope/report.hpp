#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include <json.hpp>

#include "mope/artifacts.hpp"
#include "mope/common.hpp"

namespace mope {

// Reports render numbers already stored in artifacts; nothing is
// recomputed. Cells are formatted through nlohmann's double serializer in
// both renderers, so markdown and CSV carry identical values.
struct ReportTable {
    std::string title;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
};

inline std::string format_cell(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

inline std::string render_markdown(const ReportTable& table) {
    std::string out = "# " + table.title + "\n\n|";
    for (const auto& c : table.columns) out += " " + c + " |";
    out += "\n|";
    for (std::size_t i = 0; i < table.columns.size(); ++i) out += " --- |";
    out += "\n";
    for (const auto& row : table.rows) {
        out += "|";
        for (const auto& cell : row) out += " " + cell + " |";
        out += "\n";
    }
    return out;
}

inline std::string render_csv(const ReportTable& table) {
    const auto escape = [](const std::string& s) {
        if (s.find_first_of(",\"\n") == std::string::npos) return s;
        std::string quoted = "\"";
        for (char c : s) {
            if (c == '"') quoted += '"';
            quoted += c;
        }
        quoted += '"';
        return quoted;
    };
    std::string out;
    for (std::size_t i = 0; i < table.columns.size(); ++i) {
        if (i) out += ",";
        out += escape(table.columns[i]);
    }
    out += "\n";
    for (const auto& row : table.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out += ",";
            out += escape(row[i]);
        }
        out += "\n";
    }
    return out;
}

// A comparison artifact (written by the compare subcommand) is a JSON
// document {kind, rows: [{name, params, metrics...}]}.
inline ReportTable comparison_table(const nlohmann::json& comparison) {
    const std::string kind = comparison.at("kind").get<std::string>();
    if (comparison.at("rows").empty())
        throw_error("report", "comparison artifact has no rows");
    ReportTable table;
    table.title = "Comparison: " + kind;
    table.columns = {"strategy", "params", "tr@1",  "tr@5",    "tr@10",
                     "ir@1",     "ir@5",   "ir@10", "tr_mean", "ir_mean",
                     "recall_mean"};
    for (const auto& row : comparison.at("rows")) {
        const nlohmann::json& m = row.at("metrics");
        std::vector<std::string> cells;
        cells.push_back(format_cell(row.at("name")));
        cells.push_back(format_cell(row.at("params")));
        for (const char* k : {"1", "5", "10"}) cells.push_back(format_cell(m.at("tr_at").at(k)));
        for (const char* k : {"1", "5", "10"}) cells.push_back(format_cell(m.at("ir_at").at(k)));
        cells.push_back(format_cell(m.at("tr_mean")));
        cells.push_back(format_cell(m.at("ir_mean")));
        cells.push_back(format_cell(m.at("recall_mean")));
        table.rows.push_back(std::move(cells));
    }
    return table;
}

// Loss-ablation reports carry a fixed row schema; missing variants are a
// report error listing the gap.
inline ReportTable loss_ablation_table(const nlohmann::json& comparison) {
    static const std::vector<std::string> required = {"full", "no-sim", "no-feat", "no-hidn",
                                                      "no-distill"};
    std::vector<std::string> missing = required;
    for (const auto& row : comparison.at("rows")) {
        const std::string name = row.at("name").get<std::string>();
        missing.erase(std::remove(missing.begin(), missing.end(), name), missing.end());
    }
    if (!missing.empty()) {
        std::string gap;
        for (const auto& m : missing) gap += (gap.empty() ? "" : ", ") + m;
        throw_error("report", "loss-ablation report missing variants: " + gap);
    }
    ReportTable table = comparison_table(comparison);
    table.title = "Comparison: loss-ablation";
    return table;
}

}  // namespace mope
