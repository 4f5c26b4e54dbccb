#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "deliberec/error.hpp"

namespace deliberec {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

/// Calls `fn(line_number, line)` for every line; trailing '\r' stripped.
inline void for_each_line(const fs::path& path,
                          const std::function<void(std::size_t, std::string_view)>& fn) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot read " + path.string());
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        fn(n, line);
    }
}

/// Parses a newline-delimited JSON file, skipping blank lines. Any malformed
/// line is a parse error naming the line.
inline std::vector<json> read_jsonl(const fs::path& path) {
    std::vector<json> out;
    for_each_line(path, [&](std::size_t n, std::string_view line) {
        if (line.find_first_not_of(" \t") == std::string_view::npos) return;
        try {
            out.push_back(json::parse(line));
        } catch (const json::exception& e) {
            fail(ErrorKind::parse, path.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    });
    return out;
}

inline json read_json(const fs::path& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        fail(ErrorKind::parse, path.string() + ": " + e.what());
    }
}

/// Writes the whole file under a temporary name and renames it into place,
/// so a failed stage never leaves a half-written artifact behind.
inline void write_file_atomic(const fs::path& path, std::string_view content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorKind::io, "cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) fail(ErrorKind::io, "write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) fail(ErrorKind::io, "cannot rename " + tmp.string() + ": " + ec.message());
}

inline void write_jsonl_atomic(const fs::path& path, const std::vector<json>& records) {
    std::string body;
    for (const auto& r : records) {
        body += r.dump();
        body += '\n';
    }
    write_file_atomic(path, body);
}

inline void write_json_atomic(const fs::path& path, const json& doc) {
    write_file_atomic(path, doc.dump(2) + "\n");
}

/// 64-bit FNV-1a. Used for config hashes and mock-backend pseudo-randomness.
inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL) {
    std::uint64_t h = seed;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Rounds half away from zero to one decimal and prints it ("4.3", "5.0").
inline std::string format_one_decimal(double v) {
    const double r = std::round(v * 10.0) / 10.0;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", r == 0.0 ? 0.0 : r);
    return buf;
}

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline std::size_t count_words(std::string_view s) {
    std::size_t n = 0;
    bool in_word = false;
    for (char c : s) {
        const bool space = c == ' ' || c == '\n' || c == '\t' || c == '\r';
        if (!space && !in_word) ++n;
        in_word = !space;
    }
    return n;
}

} // namespace deliberec
