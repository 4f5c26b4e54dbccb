#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "deliberec/backend.hpp"
#include "deliberec/error.hpp"
#include "deliberec/prompts.hpp"
#include "deliberec/reward.hpp"
#include "deliberec/sft.hpp"

namespace deliberec {

enum class ReasonMode { history_inferred, hint_inferred, review_inferred, review_guided };

inline std::string_view to_string(ReasonMode m) {
    switch (m) {
    case ReasonMode::history_inferred: return "history_inferred";
    case ReasonMode::hint_inferred: return "hint_inferred";
    case ReasonMode::review_inferred: return "review_inferred";
    case ReasonMode::review_guided: return "review_guided";
    }
    return "unknown";
}

inline ReasonMode reason_mode_from_string(std::string_view s) {
    for (auto m : {ReasonMode::history_inferred, ReasonMode::hint_inferred, ReasonMode::review_inferred,
                   ReasonMode::review_guided}) {
        auto name = std::string(to_string(m));
        auto dashed = name;
        std::replace(dashed.begin(), dashed.end(), '_', '-');
        if (s == name || s == dashed) return m;
    }
    fail(ErrorKind::validation, "unknown reason mode '" + std::string(s) + "'");
}

struct Reason {
    std::string text;
    ReasonMode mode = ReasonMode::history_inferred;
    int iteration = 1;
    std::optional<bool> accepted;  ///< unset on the inference path
    std::optional<double> s_eval;
};

inline json to_json(const Reason& r) {
    json j{{"text", r.text}, {"mode", std::string(to_string(r.mode))}, {"iteration", r.iteration}};
    j["accepted"] = r.accepted ? json(*r.accepted) : json(nullptr);
    j["s_eval"] = r.s_eval ? json(*r.s_eval) : json(nullptr);
    return j;
}

inline Reason reason_from_json(const json& j) {
    Reason r;
    r.text = j.at("text").get<std::string>();
    r.mode = reason_mode_from_string(j.at("mode").get<std::string>());
    r.iteration = j.value("iteration", 1);
    if (j.contains("accepted") && !j.at("accepted").is_null()) r.accepted = j.at("accepted").get<bool>();
    if (j.contains("s_eval") && !j.at("s_eval").is_null()) r.s_eval = j.at("s_eval").get<double>();
    return r;
}

struct ReasonerOptions {
    double temperature = 0.8;
    int max_tokens = 256;
};

namespace detail {

inline std::string generate_text(Backend& backend, const RenderedPrompt& prompt, const ReasonerOptions& opts,
                                 CallCost* cost) {
    CompletionRequest req;
    req.prompt = prompt;
    req.temperature = opts.temperature;
    req.max_tokens = opts.max_tokens;
    auto resp = backend.complete(req);
    if (cost) *cost += resp.cost();
    auto text = trim(resp.text);
    if (text.empty())
        fail(ErrorKind::parse, "empty reason from model for " +
                                   to_string(PairKey{prompt.meta("user_id"), prompt.meta("item_id")}));
    return text;
}

} // namespace detail

/// Test-time reasoning: one call on the hint-free reasoner prompt.
inline Reason infer_reason(Backend& backend, const RenderedPrompt& prompt, const ReasonerOptions& opts = {},
                           CallCost* cost = nullptr) {
    require(prompt.family == PromptFamily::reasoner, "infer_reason needs a reasoner prompt");
    if (has_hint(prompt)) fail(ErrorKind::leakage, "test-time reasoner prompt carries the true-rating hint");
    Reason r;
    r.text = detail::generate_text(backend, prompt, opts, cost);
    r.mode = ReasonMode::history_inferred;
    r.iteration = 1;
    return r;
}

/// One scored candidate in a generation-then-filter run.
struct Candidate {
    std::string text;
    int iteration = 0;
    bool hinted = false;
    RewardJudgment judgment;
};

struct FilterOutcome {
    std::optional<Reason> accepted;
    std::vector<Candidate> candidates;
    CallCost generation_cost;

    [[nodiscard]] std::size_t generation_calls() const { return candidates.size(); }
    [[nodiscard]] std::size_t judge_calls() const { return candidates.size(); }
};

using JudgeFn = std::function<RewardJudgment(const std::string& reason_text)>;

struct FilterOptions {
    int max_iterations = 5;        ///< T
    int initial_unhinted = 1;      ///< leading samples drawn without the hint
    ReasonerOptions generation{};
};

/// Samples a reason, scores it, and stops at the first score-1 candidate.
/// Samples after the first `initial_unhinted` carry the true-rating hint.
/// After T rejected candidates the pair yields no reason.
inline FilterOutcome generation_then_filter(Backend& teacher, const JudgeFn& judge, const RenderedPrompt& prompt,
                                            int true_rating, const FilterOptions& opts = {}) {
    require(opts.max_iterations >= 1, "T must be >= 1");
    require(opts.initial_unhinted >= 1, "at least the first sample must be unhinted");
    require(true_rating >= 1 && true_rating <= 5, "true rating must be in [1,5]");
    require(prompt.family == PromptFamily::reasoner, "generation_then_filter needs a reasoner prompt");
    if (has_hint(prompt)) fail(ErrorKind::validation, "base prompt must be hint-free");
    const RenderedPrompt hinted = append_hint(prompt, true_rating);

    FilterOutcome out;
    for (int t = 1; t <= opts.max_iterations; ++t) {
        const bool use_hint = t > opts.initial_unhinted;
        Candidate c;
        c.iteration = t;
        c.hinted = use_hint;
        try {
            c.text = detail::generate_text(teacher, use_hint ? hinted : prompt, opts.generation, &out.generation_cost);
            c.judgment = judge(c.text);
        } catch (const Error& e) {
            throw Error(e.kind(), std::string(e.what()) + " (iteration " + std::to_string(t) + ")");
        }
        out.candidates.push_back(c);
        if (c.judgment.score == 1) {
            Reason r;
            r.text = c.text;
            r.mode = ReasonMode::history_inferred;
            r.iteration = t;
            r.accepted = true;
            r.s_eval = c.judgment.s_eval;
            out.accepted = std::move(r);
            break;
        }
    }
    return out;
}

/// Inputs for the unfiltered reason-generation modes.
struct VariantInputs {
    RenderedPrompt reasoner_prompt;               ///< hint-free
    std::optional<RenderedPrompt> review_prompt;  ///< required for review_inferred
    std::string target_review;
    int true_rating = 0;
};

/// Alternative supervision sources, none of them reward-filtered:
/// review_guided copies the review, review_inferred asks the teacher to
/// explain the review, hint_inferred samples with the hint and
/// history_inferred samples the bare prompt.
inline Reason generate_variant_reason(Backend& teacher, ReasonMode mode, const VariantInputs& in,
                                      const ReasonerOptions& opts = {}, CallCost* cost = nullptr) {
    Reason r;
    r.mode = mode;
    switch (mode) {
    case ReasonMode::review_guided:
        require(!trim(in.target_review).empty(), "review-guided reasons require a target review");
        r.text = in.target_review;
        break;
    case ReasonMode::review_inferred:
        require(!trim(in.target_review).empty(), "review-inferred reasons require a target review");
        require(in.review_prompt.has_value(), "review-inferred reasons require a review-inference prompt");
        r.text = detail::generate_text(teacher, *in.review_prompt, opts, cost);
        break;
    case ReasonMode::hint_inferred:
        r.text = detail::generate_text(teacher, append_hint(in.reasoner_prompt, in.true_rating), opts, cost);
        break;
    case ReasonMode::history_inferred:
        if (has_hint(in.reasoner_prompt)) fail(ErrorKind::validation, "history-inferred prompt must be hint-free");
        r.text = detail::generate_text(teacher, in.reasoner_prompt, opts, cost);
        break;
    }
    return r;
}

/// Reasoner SFT records pair the hint-free reasoner prompt with the accepted
/// reason. A hinted prompt is a leakage error.
inline SftExportStats export_reasoner_sft(const fs::path& path, const std::map<PairKey, Reason>& accepted,
                                          const std::map<PairKey, RenderedPrompt>& prompts) {
    SftExportStats stats;
    std::vector<SftRecord> records;
    for (const auto& [pair, reason] : accepted) {
        auto it = prompts.find(pair);
        if (it == prompts.end()) fail(ErrorKind::validation, "no reasoner prompt for " + to_string(pair));
        if (has_hint(it->second))
            fail(ErrorKind::leakage, "reasoner SFT prompt for " + to_string(pair) + " carries the true-rating hint");
        if (trim(reason.text).empty()) fail(ErrorKind::validation, "empty accepted reason for " + to_string(pair));
        records.push_back(SftRecord::make(it->second, reason.text));
    }
    write_sft(path, records, stats);
    return stats;
}

} // namespace deliberec
