#pragma once

#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "deliberec/backend.hpp"
#include "deliberec/corpus.hpp"
#include "deliberec/error.hpp"
#include "deliberec/io.hpp"
#include "deliberec/parallel.hpp"
#include "deliberec/prompts.hpp"
#include "deliberec/sft.hpp"

namespace deliberec {

struct SummaryEntry {
    AspectSummary summary;
    std::string raw_text;  ///< teacher output as returned
    std::string model_tag;

    bool operator==(const SummaryEntry&) const = default;
};

inline json summary_entry_to_json(const PairKey& key, const SummaryEntry& e) {
    return json{{"user_id", key.first},
                {"item_id", key.second},
                {"positive", e.summary.positive_aspects},
                {"negative", e.summary.negative_aspects},
                {"elements", e.summary.preference_elements},
                {"source_rating", e.summary.source_rating},
                {"raw_text", e.raw_text},
                {"model_tag", e.model_tag}};
}

/// Persistent (user, item) -> summary map backed by an append-only JSONL
/// journal. Loading replays the journal with last-write-wins.
class SummaryStore {
public:
    explicit SummaryStore(fs::path path) : path_(std::move(path)) {
        if (fs::exists(path_)) {
            for (const auto& j : read_jsonl(path_)) {
                SummaryEntry e;
                e.summary.positive_aspects = j.at("positive").get<std::vector<std::string>>();
                e.summary.negative_aspects = j.at("negative").get<std::vector<std::string>>();
                e.summary.preference_elements = j.at("elements").get<std::vector<std::string>>();
                e.summary.source_rating = j.at("source_rating").get<int>();
                e.raw_text = j.value("raw_text", std::string{});
                e.model_tag = j.value("model_tag", std::string{});
                entries_[{j.at("user_id").get<std::string>(), j.at("item_id").get<std::string>()}] = std::move(e);
            }
        }
    }

    [[nodiscard]] const fs::path& path() const noexcept { return path_; }

    [[nodiscard]] bool contains(const PairKey& key) const {
        std::lock_guard lock(mu_);
        return entries_.contains(key);
    }

    [[nodiscard]] std::optional<SummaryEntry> get(const PairKey& key) const {
        std::lock_guard lock(mu_);
        auto it = entries_.find(key);
        return it == entries_.end() ? std::nullopt : std::optional(it->second);
    }

    /// Appends to the journal and flushes before updating memory.
    void put(const PairKey& key, SummaryEntry entry) {
        std::lock_guard lock(mu_);
        if (!out_.is_open()) {
            if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
            out_.open(path_, std::ios::app | std::ios::binary);
            if (!out_) fail(ErrorKind::io, "cannot open summary store " + path_.string());
        }
        out_ << summary_entry_to_json(key, entry).dump() << '\n';
        out_.flush();
        if (!out_) fail(ErrorKind::io, "write failed for summary store " + path_.string());
        entries_[key] = std::move(entry);
    }

    /// Rewrites the journal with one line per pair, sorted by key.
    void compact() {
        std::lock_guard lock(mu_);
        if (out_.is_open()) out_.close();
        std::vector<json> lines;
        for (const auto& [k, e] : entries_) lines.push_back(summary_entry_to_json(k, e));
        write_jsonl_atomic(path_, lines);
    }

    [[nodiscard]] std::map<PairKey, SummaryEntry> entries() const {
        std::lock_guard lock(mu_);
        return entries_;
    }

    [[nodiscard]] SummaryMap summaries() const {
        std::lock_guard lock(mu_);
        SummaryMap out;
        for (const auto& [k, e] : entries_) out.emplace(k, e.summary);
        return out;
    }

    [[nodiscard]] std::size_t size() const {
        std::lock_guard lock(mu_);
        return entries_.size();
    }

private:
    fs::path path_;
    mutable std::mutex mu_;
    std::map<PairKey, SummaryEntry> entries_;
    std::ofstream out_;
};

struct SummarizeOptions {
    std::string domain_noun = "Music";
    double temperature = 0.0;
    int max_tokens = 256;
    std::size_t workers = 1;
    std::optional<std::size_t> max_new;  ///< stop after this many new summaries
};

struct SummaryOutcome {
    ParsedSummary parsed;
    std::string raw_text;
    int attempts = 0;
    CallCost cost;
};

/// Summarizes one review; an unparseable reply is re-asked once before the
/// pair is reported as a parse error.
inline SummaryOutcome summarize_interaction(Backend& backend, const Interaction& x, const SummarizeOptions& opts = {}) {
    CompletionRequest req;
    req.prompt = render_summarizer_prompt(x, opts.domain_noun);
    req.temperature = opts.temperature;
    req.max_tokens = opts.max_tokens;
    SummaryOutcome out;
    for (int attempt = 1; attempt <= 2; ++attempt) {
        auto resp = backend.complete(req);
        out.cost += resp.cost();
        out.attempts = attempt;
        try {
            out.parsed = parse_aspect_summary(resp.text, x.rating);
            out.raw_text = resp.text;
            return out;
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::parse) throw;
        }
    }
    fail(ErrorKind::parse, "summary for " + to_string(PairKey{x.user_id, x.item_id}) + " unparseable after re-ask");
}

struct SummarizeStats {
    std::size_t added = 0;
    std::size_t skipped = 0;       ///< already in the store
    std::size_t failed = 0;
    std::size_t empty_review = 0;  ///< no text to summarize
    std::size_t warnings = 0;      ///< parsed with a missing labeled line
    std::vector<std::string> errors;
    CallCost cost;

    [[nodiscard]] json to_json() const {
        return json{{"new", added},           {"skipped", skipped},   {"failed", failed},
                    {"empty_review", empty_review}, {"warnings", warnings}, {"errors", errors},
                    {"cost", cost.to_json()}};
    }
};

/// Summarizes every interaction that has no store entry yet. Existing entries
/// are left alone, so an interrupted run can simply be restarted.
inline SummarizeStats summarize_corpus_offline(Backend& backend, const Corpus& corpus, SummaryStore& store,
                                               const SummarizeOptions& opts = {}) {
    SummarizeStats stats;
    std::vector<const Interaction*> todo;
    // A repeated pair is summarized from its latest interaction, the same one
    // export_summarizer_sft renders.
    std::map<PairKey, const Interaction*> latest;
    for (const auto& x : corpus.interactions()) {
        auto& slot = latest[{x.user_id, x.item_id}];
        if (!slot || chronological_less(*slot, x)) slot = &x;
    }
    for (const auto& x : corpus.interactions()) {
        PairKey key{x.user_id, x.item_id};
        if (store.contains(key) || latest[key] != &x) {
            ++stats.skipped;
            continue;
        }
        if (trim(x.review_text).empty()) {
            ++stats.empty_review;
            continue;
        }
        if (opts.max_new && todo.size() >= *opts.max_new) break;
        todo.push_back(&x);
    }

    struct Result {
        std::optional<SummaryOutcome> ok;
        std::string error;
    };
    auto results = parallel_map<Result>(todo.size(), opts.workers, [&](std::size_t i) {
        const auto& x = *todo[i];
        Result r;
        try {
            r.ok = summarize_interaction(backend, x, opts);
            store.put({x.user_id, x.item_id}, {r.ok->parsed.summary, r.ok->raw_text, backend.model_tag()});
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::io) throw;
            r.error = to_string(PairKey{x.user_id, x.item_id}) + ": " + e.what();
        }
        return r;
    });
    for (const auto& r : results) {
        if (r.ok) {
            ++stats.added;
            stats.cost += r.ok->cost;
            if (!r.ok->parsed.warnings.empty()) ++stats.warnings;
        } else {
            ++stats.failed;
            stats.errors.push_back(r.error);
        }
    }
    return stats;
}

/// Summarizer SFT records: summarizer prompt answered with the teacher's raw output.
inline SftExportStats export_summarizer_sft(const fs::path& path, const SummaryStore& store, const Corpus& corpus,
                                            const std::vector<PairKey>& pairs, const std::string& domain_noun) {
    SftExportStats stats;
    std::vector<SftRecord> records;
    for (const auto& pair : pairs) {
        auto entry = store.get(pair);
        if (!entry) fail(ErrorKind::validation, "summary store has no entry for " + to_string(pair));
        auto x = corpus.latest(pair.first, pair.second);
        if (!x) fail(ErrorKind::validation, "corpus has no interaction for " + to_string(pair));
        records.push_back(SftRecord::make(render_summarizer_prompt(*x, domain_noun), entry->raw_text));
    }
    write_sft(path, records, stats);
    return stats;
}

} // namespace deliberec
