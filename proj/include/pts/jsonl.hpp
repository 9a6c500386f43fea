#pragma once

// Line-oriented JSON file helpers shared by the pipeline stages.

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pts/common.hpp"

namespace pts::jsonl {

inline std::vector<nlohmann::json> read_all(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    std::vector<nlohmann::json> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json row = nlohmann::json::parse(line, nullptr, false);
        if (row.is_discarded()) {
            throw ValidationError("malformed JSON at " + path + ":" + std::to_string(line_no));
        }
        rows.push_back(std::move(row));
    }
    if (in.bad()) throw IoError("read error on: " + path);
    return rows;
}

inline void write_all(const std::string& path, const std::vector<nlohmann::json>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write: " + path);
    for (const auto& row : rows) out << row.dump() << '\n';
    if (!out) throw IoError("write error on: " + path);
}

inline void write_json(const std::string& path, const nlohmann::json& value) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write: " + path);
    out << value.dump(2) << '\n';
    if (!out) throw IoError("write error on: " + path);
}

inline nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    nlohmann::json value = nlohmann::json::parse(in, nullptr, false);
    if (value.is_discarded()) throw ValidationError("malformed JSON file: " + path);
    return value;
}

}  // namespace pts::jsonl
