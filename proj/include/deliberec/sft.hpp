#pragma once

#include <string>
#include <vector>

#include "deliberec/io.hpp"
#include "deliberec/prompts.hpp"

namespace deliberec {

/// One chat-format supervised fine-tuning example.
struct SftRecord {
    std::vector<Message> messages;

    [[nodiscard]] json to_json() const { return json{{"messages", messages_to_json(messages)}}; }
    static SftRecord from_json(const json& j) { return {messages_from_json(j.at("messages"))}; }

    static SftRecord make(const RenderedPrompt& prompt, std::string target) {
        SftRecord r{prompt.messages};
        r.messages.push_back({Role::assistant, std::move(target)});
        return r;
    }
};

struct SftExportStats {
    std::size_t records = 0;
    std::size_t excluded = 0;
    std::vector<std::string> warnings;

    [[nodiscard]] json to_json() const {
        return json{{"records", records}, {"excluded", excluded}, {"warnings", warnings}};
    }
};

inline void write_sft(const fs::path& path, const std::vector<SftRecord>& records, SftExportStats& stats) {
    std::vector<json> lines;
    lines.reserve(records.size());
    for (const auto& r : records) lines.push_back(r.to_json());
    write_jsonl_atomic(path, lines);
    stats.records = records.size();
    if (records.empty()) stats.warnings.push_back("no records exported to " + path.string());
}

inline std::vector<SftRecord> read_sft(const fs::path& path) {
    std::vector<SftRecord> out;
    for (const auto& j : read_jsonl(path)) out.push_back(SftRecord::from_json(j));
    return out;
}

inline std::string rating_label(int rating) { return "Predicted Rating: " + std::to_string(rating); }

} // namespace deliberec
