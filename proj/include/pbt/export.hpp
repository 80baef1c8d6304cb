// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pbt/analysis.hpp"
#include "pbt/record.hpp"

namespace pbt::analysis {

/// One output row; every export shares these four columns.
struct Row {
    int generation = 0;
    CheckpointId checkpoint_id = 0;
    std::string parameter;
    double value = 0.0;

    friend bool operator==(const Row&, const Row&) = default;
};

enum class Format { Csv, Json };

inline Format format_from_name(const std::string& name) {
    if (name == "csv") return Format::Csv;
    if (name == "json") return Format::Json;
    throw std::invalid_argument("unknown export format '" + name + "' (expected csv or json)");
}

inline std::vector<Row> schedule_rows(const Schedule& schedule) {
    std::vector<Row> rows;
    for (const auto& e : schedule)
        for (const auto& [name, v] : e.hparams) rows.push_back({e.generation, e.checkpoint, name, v});
    return rows;
}

inline std::vector<Row> series_rows(const std::vector<SeriesPoint>& series, const std::string& param) {
    std::vector<Row> rows;
    for (const auto& p : series) rows.push_back({p.generation, p.checkpoint, param, p.value});
    return rows;
}

/// Hyperparameters plus "loss" and any metrics, for every evaluated record.
inline std::vector<Row> log_rows(std::span<const CheckpointRecord> records) {
    std::vector<Row> rows;
    for (const auto& r : records) {
        if (!r.evaluated()) continue;
        for (const auto& [name, v] : r.hparams) rows.push_back({r.generation, r.id, name, v});
        rows.push_back({r.generation, r.id, "loss", *r.loss});
        for (const auto& [name, v] : r.metrics) rows.push_back({r.generation, r.id, name, v});
    }
    return rows;
}

inline void write_rows(const std::filesystem::path& path, const std::vector<Row>& rows, Format format) {
    std::ostringstream out;
    if (format == Format::Csv) {
        out << "generation,checkpoint_id,parameter,value\n";
        for (const auto& r : rows)
            out << r.generation << ',' << r.checkpoint_id << ',' << r.parameter << ',' << format_number(r.value) << '\n';
    } else {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& r : rows) {
            nlohmann::json v = std::isfinite(r.value) ? nlohmann::json(r.value) : nlohmann::json(format_number(r.value));
            arr.push_back({{"generation", r.generation}, {"checkpoint_id", r.checkpoint_id}, {"parameter", r.parameter},
                           {"value", v}});
        }
        out << arr.dump(1) << '\n';
    }
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw std::runtime_error("cannot write " + path.string());
    file << out.str();
    if (!file) throw std::runtime_error("write failed for " + path.string());
}

inline std::vector<Row> read_rows(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::vector<Row> rows;
    auto first = content.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && content[first] == '[') {
        for (const auto& j : nlohmann::json::parse(content)) {
            Row r;
            r.generation = j.at("generation").get<int>();
            r.checkpoint_id = j.at("checkpoint_id").get<CheckpointId>();
            r.parameter = j.at("parameter").get<std::string>();
            const auto& v = j.at("value");
            r.value = v.is_string() ? parse_number(v.get<std::string>()) : v.get<double>();
            rows.push_back(std::move(r));
        }
        return rows;
    }
    std::istringstream lines(content);
    std::string line;
    if (!std::getline(lines, line) || line != "generation,checkpoint_id,parameter,value")
        throw std::runtime_error(path.string() + ": unexpected CSV header");
    while (std::getline(lines, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::istringstream cs(line);
        for (std::string c; std::getline(cs, c, ',');) cols.push_back(c);
        if (cols.size() != 4) throw std::runtime_error(path.string() + ": malformed row '" + line + "'");
        rows.push_back({parse_integer<int>(cols[0]), parse_integer<CheckpointId>(cols[1]), cols[2], parse_number(cols[3])});
    }
    return rows;
}

}  // namespace pbt::analysis
