#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "genret/error.hpp"
#include "genret/text.hpp"

namespace genret::io {

using json = nlohmann::json;

inline std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "' for reading");
    return in;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path.string() + "' for writing");
    return out;
}

/// Calls `fn(record, line_number)` for every non-blank line. Parse failures and
/// exceptions thrown by `fn` are reported with the 1-based line number.
inline void for_each_jsonl(const std::filesystem::path& path,
                           const std::function<void(const json&, std::size_t)>& fn) {
    auto in = open_in(path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(std::string("malformed JSON: ") + e.what(), lineno);
        }
        try {
            fn(rec, lineno);
        } catch (const json::exception& e) {
            throw ParseError(std::string("bad record: ") + e.what(), lineno);
        }
    }
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records) {
    auto out = open_out(path);
    for (const auto& r : records) out << r.dump() << '\n';
}

inline json read_json(const std::filesystem::path& path) {
    auto in = open_in(path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError("malformed JSON in '" + path.string() + "': " + e.what());
    }
}

inline void write_json(const std::filesystem::path& path, const json& j) {
    auto out = open_out(path);
    out << j.dump(2) << '\n';
}

}  // namespace genret::io
