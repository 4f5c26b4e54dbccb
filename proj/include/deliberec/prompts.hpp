#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "deliberec/corpus.hpp"
#include "deliberec/error.hpp"
#include "deliberec/io.hpp"

namespace deliberec {

enum class Role { system, user, assistant };

inline std::string_view to_string(Role r) {
    switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
    }
    return "user";
}

enum class PromptFamily { summarizer, reasoner, predictor, reward, one_step, cot, review_inference, judge };

inline std::string_view to_string(PromptFamily f) {
    switch (f) {
    case PromptFamily::summarizer: return "summarizer";
    case PromptFamily::reasoner: return "reasoner";
    case PromptFamily::predictor: return "predictor";
    case PromptFamily::reward: return "reward";
    case PromptFamily::one_step: return "one_step";
    case PromptFamily::cot: return "cot";
    case PromptFamily::review_inference: return "review_inference";
    case PromptFamily::judge: return "judge";
    }
    return "unknown";
}

inline PromptFamily family_from_string(std::string_view s) {
    for (auto f : {PromptFamily::summarizer, PromptFamily::reasoner, PromptFamily::predictor, PromptFamily::reward,
                   PromptFamily::one_step, PromptFamily::cot, PromptFamily::review_inference, PromptFamily::judge})
        if (to_string(f) == s) return f;
    fail(ErrorKind::validation, "unknown prompt family '" + std::string(s) + "'");
}

struct Message {
    Role role = Role::user;
    std::string content;

    bool operator==(const Message&) const = default;
};

struct RenderedPrompt {
    std::vector<Message> messages;
    PromptFamily family = PromptFamily::reasoner;
    std::map<std::string, std::string> metadata;  ///< user_id, item_id of the target pair

    bool operator==(const RenderedPrompt&) const = default;

    /// Content of the (single) user message.
    [[nodiscard]] const std::string& text() const {
        for (const auto& m : messages)
            if (m.role == Role::user) return m.content;
        fail(ErrorKind::validation, "prompt has no user message");
    }

    [[nodiscard]] std::string meta(const std::string& key) const {
        auto it = metadata.find(key);
        return it == metadata.end() ? std::string{} : it->second;
    }
};

inline json messages_to_json(const std::vector<Message>& msgs) {
    json arr = json::array();
    for (const auto& m : msgs) arr.push_back({{"role", std::string(to_string(m.role))}, {"content", m.content}});
    return arr;
}

inline std::vector<Message> messages_from_json(const json& arr) {
    std::vector<Message> out;
    for (const auto& m : arr) {
        const auto role = m.at("role").get<std::string>();
        Role r = role == "system" ? Role::system : role == "assistant" ? Role::assistant : Role::user;
        out.push_back({r, m.at("content").get<std::string>()});
    }
    return out;
}

/// Keyword-level distillation of one review.
struct AspectSummary {
    std::vector<std::string> positive_aspects;
    std::vector<std::string> negative_aspects;
    std::vector<std::string> preference_elements;
    int source_rating = 0;

    bool operator==(const AspectSummary&) const = default;
};

using SummaryMap = std::map<PairKey, AspectSummary>;

/// Averages shown to the predictor; `*_fallback` marks an empty history
/// replaced by the global training mean.
struct RatingAverages {
    double user_avg = 0;
    double item_avg = 0;
    bool user_fallback = false;
    bool item_fallback = false;
};

// ---------------------------------------------------------------------------
// Templates. Byte-identical copies live under templates/ in the source tree.

namespace templates {

inline constexpr std::string_view kVersion = "1";

inline constexpr std::string_view summarizer =
    "Task: Summarize the reasons behind the given rating of a {domain} based on the customer review.\n"
    "{domain}: {title}\n"
    "Rating: {rating}\n"
    "Review: {review}\n"
    "\n"
    "Analyze the above customer review for the {domain} {title} and summarize the reasons behind the given "
    "rating of {rating}. Please consider the positive and negative aspects mentioned in the review and provide "
    "the keywords of reasons and user preference elements.\n"
    "\n"
    "Output Format:\n"
    "Positive Aspects: [Aspect 1], [Aspect 2], ...\n"
    "Negative Aspects: [Aspect 1], [Aspect 2], ...\n"
    "User Preference Elements: [Preference 1], [Preference 2], ...\n";

inline constexpr std::string_view summary_block =
    "{index}. {title}\n"
    "Positive Aspects: {positive}\n"
    "Negative Aspects: {negative}\n"
    "User Preference Elements: {elements}\n";

inline constexpr std::string_view rated_summary_block =
    "{index}. {title}, Rating: {rating}\n"
    "Positive Aspects: {positive}\n"
    "Negative Aspects: {negative}\n"
    "User Preference Elements: {elements}\n";

inline constexpr std::string_view rated_review_block =
    "{index}. {title}, Rating: {rating}\n"
    "Review: {review}\n";

inline constexpr std::string_view reasoner =
    "### User Review History ###\n"
    "{user_history}"
    "\n"
    "### Item Review History by Other Users ###\n"
    "{item_history}"
    "\n"
    "Task: Analyze whether the user will like the new {domain} {title} based on the user's preferences and the "
    "item's features. Provide your rationale in one concise paragraph.";

inline constexpr std::string_view hint =
    "\n\nHint: The user actually rated the item {rating} stars. The star ranges from 1 to 5, with 5 being the "
    "best. Use the hint but don't mention the user's rating in your response.";

inline constexpr std::string_view hint_marker = "Hint: The user actually rated the item";

inline constexpr std::string_view predictor =
    "### User Review History ###\n"
    "{user_history}"
    "\n"
    "### Item Review History by Other Users ###\n"
    "{item_history}"
    "\n"
    "### Average Past Ratings ###\n"
    "User's Average Rating (all previous ratings): {user_avg}\n"
    "Item's Average Rating (all ratings by other users): {item_avg}\n"
    "\n"
    "{analysis}"
    "Task: Based on the above information, please predict the user's rating for {title}, (1 being the lowest "
    "and 5 being highest, directly give the rating without other content.)\n"
    "[Output Format] Predicted Rating: [Rating between 1 and 5]";

inline constexpr std::string_view analysis_section =
    "### Personalized Recommendation Analysis ###\n"
    "{reason}\n"
    "\n";

inline constexpr std::string_view one_step =
    "### User Review History ###\n"
    "{user_history}"
    "\n"
    "### Item Review History by Other Users ###\n"
    "{item_history}"
    "\n"
    "### Average Past Ratings ###\n"
    "User's Average Rating (all previous ratings): {user_avg}\n"
    "Item's Average Rating (all ratings by other users): {item_avg}\n"
    "\n"
    "Task: Based on the above information, analyze whether the user will like {title} and predict the user's "
    "rating for it (1 being the lowest and 5 being highest). Give your reasoning in one concise paragraph, "
    "then give the rating on the last line.\n"
    "[Output Format]\n"
    "[Reasoning paragraph]\n"
    "Predicted Rating: [Rating between 1 and 5]";

inline constexpr std::string_view cot =
    "### User Review History ###\n"
    "{user_history}"
    "\n"
    "### Item Review History by Other Users ###\n"
    "{item_history}"
    "\n"
    "### Average Past Ratings ###\n"
    "User's Average Rating (all previous ratings): {user_avg}\n"
    "Item's Average Rating (all ratings by other users): {item_avg}\n"
    "\n"
    "Task: Predict the user's rating for {title} by reasoning step by step. Step 1: summarize the positive "
    "aspects, negative aspects and user preference elements expressed in the reviews above. Step 2: analyze "
    "whether the user's preferences match the item's features. Step 3: predict the user's rating (1 being the "
    "lowest and 5 being highest).\n"
    "[Output Format]\n"
    "Aspect-Preference Summary: [Step 1 output]\n"
    "Match Analysis: [Step 2 output]\n"
    "Predicted Rating: [Rating between 1 and 5]";

inline constexpr std::string_view review_inference =
    "### User Review History ###\n"
    "{user_history}"
    "\n"
    "### Item Review History by Other Users ###\n"
    "{item_history}"
    "\n"
    "### Target Review ###\n"
    "{review}\n"
    "\n"
    "Task: The user wrote the target review above for the {domain} {title}. Infer from this review why the "
    "user likes or dislikes the {domain}, relating the user's preferences to the item's features. Provide your "
    "rationale in one concise paragraph and do not quote the review.";

inline constexpr std::string_view judge =
    "You are evaluating how well a generated recommendation explanation aligns with a user's actual review.\n"
    "\n"
    "### Generated Explanation ###\n"
    "{reason}\n"
    "\n"
    "### Actual User Review ###\n"
    "{review}\n"
    "\n"
    "Task: Score the semantic alignment between the explanation and the review from 0 to 100, where 0 means "
    "unrelated or contradictory and 100 means the explanation expresses the same preferences and opinions as "
    "the review. Respond with the integer score only.\n"
    "Score:";

/// Every shipped template with its resource file name.
inline const std::vector<std::pair<std::string_view, std::string_view>>& all() {
    static const std::vector<std::pair<std::string_view, std::string_view>> t = {
        {"summarizer.txt", summarizer},
        {"summary_block.txt", summary_block},
        {"rated_summary_block.txt", rated_summary_block},
        {"rated_review_block.txt", rated_review_block},
        {"reasoner.txt", reasoner},
        {"hint.txt", hint},
        {"predictor.txt", predictor},
        {"analysis_section.txt", analysis_section},
        {"one_step.txt", one_step},
        {"cot.txt", cot},
        {"review_inference.txt", review_inference},
        {"judge.txt", judge},
    };
    return t;
}

} // namespace templates

/// Substitutes `{name}` placeholders in one left-to-right pass; substituted
/// values are never rescanned. Unknown placeholders are a validation error.
inline std::string fill_template(std::string_view tmpl, const std::map<std::string, std::string>& values) {
    std::string out;
    out.reserve(tmpl.size() + 256);
    std::size_t pos = 0;
    while (pos < tmpl.size()) {
        const auto open = tmpl.find('{', pos);
        if (open == std::string_view::npos) {
            out.append(tmpl.substr(pos));
            break;
        }
        out.append(tmpl.substr(pos, open - pos));
        const auto close = tmpl.find('}', open);
        if (close == std::string_view::npos) {
            out.append(tmpl.substr(open));
            break;
        }
        const std::string name(tmpl.substr(open + 1, close - open - 1));
        auto it = values.find(name);
        if (it == values.end()) fail(ErrorKind::validation, "template placeholder {" + name + "} has no value");
        out.append(it->second);
        pos = close + 1;
    }
    return out;
}

namespace detail {

inline std::string join_phrases(const std::vector<std::string>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ", ";
        out += xs[i];
    }
    return out;
}

/// Placeholder values for "Label: a, b"; an empty list renders as "Label:".
inline std::string phrase_value(const std::vector<std::string>& xs) { return join_phrases(xs); }

inline std::string strip_trailing_space_lines(std::string s) {
    // "Positive Aspects: \n" -> "Positive Aspects:\n" for empty lists.
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == ' ' && i + 1 < s.size() && s[i + 1] == '\n' && i > 0 && s[i - 1] == ':') continue;
        out += s[i];
    }
    return out;
}

inline RenderedPrompt single_user_prompt(PromptFamily family, std::string content, const std::string& user,
                                         const std::string& item) {
    RenderedPrompt p;
    p.family = family;
    p.messages.push_back({Role::user, std::move(content)});
    if (!user.empty()) p.metadata["user_id"] = user;
    if (!item.empty()) p.metadata["item_id"] = item;
    return p;
}

enum class BlockStyle { summary, rated_summary, rated_review };

inline const AspectSummary& summary_for(const SummaryMap& summaries, const Interaction& x) {
    auto it = summaries.find(PairKey{x.user_id, x.item_id});
    if (it == summaries.end())
        fail(ErrorKind::validation, "no aspect summary for history entry " + to_string(PairKey{x.user_id, x.item_id}));
    return it->second;
}

inline std::string render_history(const std::vector<Interaction>& history, const SummaryMap& summaries,
                                  BlockStyle style) {
    std::string out;
    for (std::size_t i = 0; i < history.size(); ++i) {
        const auto& x = history[i];
        std::map<std::string, std::string> v{{"index", std::to_string(i + 1)}, {"title", x.item_title}};
        if (style == BlockStyle::rated_review) {
            v["rating"] = format_one_decimal(x.rating);
            v["review"] = x.review_text;
            out += fill_template(templates::rated_review_block, v);
            continue;
        }
        const auto& s = summary_for(summaries, x);
        v["positive"] = phrase_value(s.positive_aspects);
        v["negative"] = phrase_value(s.negative_aspects);
        v["elements"] = phrase_value(s.preference_elements);
        if (style == BlockStyle::rated_summary) {
            v["rating"] = format_one_decimal(x.rating);
            out += strip_trailing_space_lines(fill_template(templates::rated_summary_block, v));
        } else {
            out += strip_trailing_space_lines(fill_template(templates::summary_block, v));
        }
    }
    return out;
}

inline bool starts_with_ci(std::string_view s, std::string_view prefix) {
    if (s.size() < prefix.size()) return false;
    for (std::size_t i = 0; i < prefix.size(); ++i)
        if (std::tolower(static_cast<unsigned char>(s[i])) != std::tolower(static_cast<unsigned char>(prefix[i])))
            return false;
    return true;
}

/// Strips list bullets and markdown emphasis from the start of a line.
inline std::string_view strip_decoration(std::string_view line) {
    while (!line.empty() && (line.front() == ' ' || line.front() == '\t' || line.front() == '*' ||
                             line.front() == '-' || line.front() == '#'))
        line.remove_prefix(1);
    return line;
}

inline std::string remove_all(std::string s, std::string_view needle) {
    for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle)) s.erase(p, needle.size());
    return s;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Rendering

inline RenderedPrompt render_summarizer_prompt(const Interaction& x, const std::string& domain_noun) {
    if (trim(x.review_text).empty())
        fail(ErrorKind::validation, "summarization requires review text for " + to_string(PairKey{x.user_id, x.item_id}));
    require(!domain_noun.empty(), "domain noun must be non-empty");
    auto text = fill_template(templates::summarizer, {{"domain", domain_noun},
                                                      {"title", x.item_title},
                                                      {"rating", std::to_string(x.rating)},
                                                      {"review", x.review_text}});
    return detail::single_user_prompt(PromptFamily::summarizer, std::move(text), x.user_id, x.item_id);
}

inline RenderedPrompt render_reasoner_prompt(const HistoryPair& pair, const SummaryMap& summaries,
                                             const std::string& target_title, const std::string& domain_noun) {
    auto text = fill_template(
        templates::reasoner,
        {{"user_history", detail::render_history(pair.user_history, summaries, detail::BlockStyle::summary)},
         {"item_history", detail::render_history(pair.item_history, summaries, detail::BlockStyle::summary)},
         {"domain", domain_noun},
         {"title", target_title}});
    return detail::single_user_prompt(PromptFamily::reasoner, std::move(text), pair.target_user, pair.target_item);
}

inline bool has_hint(const RenderedPrompt& p) {
    if (p.meta("hinted") == "true") return true;
    for (const auto& m : p.messages)
        if (m.content.find(templates::hint_marker) != std::string::npos) return true;
    return false;
}

/// Appends the true-rating hint to a reasoner prompt. Everything before the
/// appended sentence is left untouched.
inline RenderedPrompt append_hint(const RenderedPrompt& prompt, int rating) {
    require(prompt.family == PromptFamily::reasoner, "hints apply only to reasoner prompts");
    require(rating >= 1 && rating <= 5, "hint rating must be in [1,5], got " + std::to_string(rating));
    require(!has_hint(prompt), "prompt already carries a hint");
    RenderedPrompt out = prompt;
    for (auto& m : out.messages) {
        if (m.role != Role::user) continue;
        m.content += fill_template(templates::hint, {{"rating", std::to_string(rating)}});
        break;
    }
    out.metadata["hinted"] = "true";
    return out;
}

namespace detail {

inline RenderedPrompt render_rated(PromptFamily family, std::string_view tmpl, const HistoryPair& pair,
                                   const SummaryMap& summaries, const RatingAverages& averages,
                                   const std::optional<std::string>& analysis, const std::string& target_title,
                                   BlockStyle style = BlockStyle::rated_summary) {
    std::map<std::string, std::string> v{
        {"user_history", render_history(pair.user_history, summaries, style)},
        {"item_history", render_history(pair.item_history, summaries, style)},
        {"user_avg", format_one_decimal(averages.user_avg)},
        {"item_avg", format_one_decimal(averages.item_avg)},
        {"title", target_title},
        {"analysis", analysis ? fill_template(templates::analysis_section, {{"reason", *analysis}}) : std::string{}}};
    return single_user_prompt(family, fill_template(tmpl, v), pair.target_user, pair.target_item);
}

} // namespace detail

/// Predictor prompt. Without a reason the analysis section is omitted.
inline RenderedPrompt render_predictor_prompt(const HistoryPair& pair, const SummaryMap& summaries,
                                              const RatingAverages& averages,
                                              const std::optional<std::string>& reason,
                                              const std::string& target_title) {
    return detail::render_rated(PromptFamily::predictor, templates::predictor, pair, summaries, averages, reason,
                                target_title);
}

/// Predictor prompt with the analysis section filled by `filler_text`
/// (the target review when training the reward model, a candidate reason
/// when judging).
inline RenderedPrompt render_reward_prompt(const HistoryPair& pair, const SummaryMap& summaries,
                                           const RatingAverages& averages, const std::string& filler_text,
                                           const std::string& target_title) {
    require(!trim(filler_text).empty(), "reward prompt filler must be non-empty");
    return detail::render_rated(PromptFamily::reward, templates::predictor, pair, summaries, averages, filler_text,
                                target_title);
}

enum class AblationMode { one_step, cot };

inline AblationMode ablation_mode_from_string(std::string_view s) {
    if (s == "one_step" || s == "one-step") return AblationMode::one_step;
    if (s == "cot") return AblationMode::cot;
    fail(ErrorKind::validation, "unknown ablation mode '" + std::string(s) + "'");
}

/// Where ablation prompts take history content from.
enum class HistorySource { summaries, raw_reviews };

/// Single-call prompts that fold reasoning and rating into one response.
/// One-step defaults to aspect summaries; chain-of-thought defaults to raw
/// reviews because its first step is the summarization itself.
inline RenderedPrompt render_ablation_prompt(AblationMode mode, const HistoryPair& pair, const SummaryMap& summaries,
                                             const RatingAverages& averages, const std::string& target_title,
                                             std::optional<HistorySource> source = std::nullopt) {
    const auto src = source.value_or(mode == AblationMode::one_step ? HistorySource::summaries
                                                                    : HistorySource::raw_reviews);
    const auto style =
        src == HistorySource::summaries ? detail::BlockStyle::rated_summary : detail::BlockStyle::rated_review;
    if (mode == AblationMode::one_step)
        return detail::render_rated(PromptFamily::one_step, templates::one_step, pair, summaries, averages,
                                    std::nullopt, target_title, style);
    return detail::render_rated(PromptFamily::cot, templates::cot, pair, summaries, averages, std::nullopt,
                                target_title, style);
}

inline RenderedPrompt render_review_inference_prompt(const HistoryPair& pair, const SummaryMap& summaries,
                                                     const std::string& target_review,
                                                     const std::string& target_title,
                                                     const std::string& domain_noun) {
    require(!trim(target_review).empty(), "review-inferred reasons require a target review");
    auto text = fill_template(
        templates::review_inference,
        {{"user_history", detail::render_history(pair.user_history, summaries, detail::BlockStyle::summary)},
         {"item_history", detail::render_history(pair.item_history, summaries, detail::BlockStyle::summary)},
         {"review", target_review},
         {"domain", domain_noun},
         {"title", target_title}});
    return detail::single_user_prompt(PromptFamily::review_inference, std::move(text), pair.target_user,
                                      pair.target_item);
}

inline RenderedPrompt render_judge_prompt(const std::string& reason_text, const std::string& review_text,
                                          const PairKey& pair = {}) {
    require(!trim(reason_text).empty(), "judge requires a non-empty reason");
    require(!trim(review_text).empty(), "judge requires a non-empty review");
    auto text = fill_template(templates::judge, {{"reason", reason_text}, {"review", review_text}});
    return detail::single_user_prompt(PromptFamily::judge, std::move(text), pair.first, pair.second);
}

// ---------------------------------------------------------------------------
// Parsing

struct ParsedSummary {
    AspectSummary summary;
    std::vector<std::string> warnings;
};

/// Reads the three labeled lines of an aspect-preference summary. Missing
/// lines give empty lists plus a warning; no label at all is a parse error.
inline ParsedSummary parse_aspect_summary(std::string_view text, int source_rating) {
    struct Label {
        std::string_view name;
        std::vector<std::string> AspectSummary::*field;
        bool seen = false;
    };
    std::array<Label, 3> labels{{{"Positive Aspects", &AspectSummary::positive_aspects},
                                 {"Negative Aspects", &AspectSummary::negative_aspects},
                                 {"User Preference Elements", &AspectSummary::preference_elements}}};
    ParsedSummary out;
    out.summary.source_rating = source_rating;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        auto line = detail::strip_decoration(text.substr(start, end - start));
        for (auto& label : labels) {
            if (label.seen || !detail::starts_with_ci(line, label.name)) continue;
            auto rest = detail::remove_all(std::string(line.substr(label.name.size())), "**");
            auto colon = rest.find(':');
            if (colon == std::string::npos) continue;
            label.seen = true;
            auto& dst = out.summary.*(label.field);
            std::string_view body(rest);
            body.remove_prefix(colon + 1);
            std::size_t p = 0;
            while (p <= body.size()) {
                auto q = body.find(',', p);
                if (q == std::string_view::npos) q = body.size();
                auto phrase = trim(body.substr(p, q - p));
                while (!phrase.empty() && (phrase.back() == '.' && phrase != "...")) phrase.pop_back();
                if (!phrase.empty() && phrase != "..." && phrase != "None" && phrase != "none" && phrase != "N/A")
                    dst.push_back(phrase);
                p = q + 1;
            }
            break;
        }
        start = end + 1;
    }
    if (std::none_of(labels.begin(), labels.end(), [](const Label& l) { return l.seen; }))
        fail(ErrorKind::parse, "no aspect-summary labels found in model output");
    for (const auto& l : labels)
        if (!l.seen) out.warnings.push_back("missing '" + std::string(l.name) + "' line");
    return out;
}

/// Renders a summary back into the three-line form the summarizer emits.
inline std::string format_aspect_summary(const AspectSummary& s) {
    return detail::strip_trailing_space_lines(
        "Positive Aspects: " + detail::join_phrases(s.positive_aspects) + "\nNegative Aspects: " +
        detail::join_phrases(s.negative_aspects) + "\nUser Preference Elements: " +
        detail::join_phrases(s.preference_elements) + "\n");
}

/// Extracts k from "Predicted Rating: k"; falls back to a bare leading digit.
inline std::optional<int> parse_predicted_rating(std::string_view text) {
    static constexpr std::string_view label = "Predicted Rating:";
    std::optional<int> found;
    for (auto p = text.find(label); p != std::string_view::npos; p = text.find(label, p + 1)) {
        auto rest = text.substr(p + label.size());
        auto d = rest.find_first_not_of(" \t*[");
        if (d != std::string_view::npos && rest[d] >= '1' && rest[d] <= '5') found = rest[d] - '0';
    }
    if (found) return found;
    auto t = trim(text);
    if (!t.empty() && t[0] >= '1' && t[0] <= '5' && (t.size() == 1 || !std::isdigit(static_cast<unsigned char>(t[1]))))
        return t[0] - '0';
    return std::nullopt;
}

struct OneStepResponse {
    std::string reasoning;
    int rating = 0;
};

inline OneStepResponse parse_one_step_response(std::string_view text) {
    auto rating = parse_predicted_rating(text);
    if (!rating) fail(ErrorKind::parse, "one-step response lacks 'Predicted Rating:'");
    auto cut = text.rfind("Predicted Rating:");
    return {trim(text.substr(0, cut == std::string_view::npos ? 0 : cut)), *rating};
}

struct CotResponse {
    std::string summary;
    std::string analysis;
    int rating = 0;
};

inline CotResponse parse_cot_response(std::string_view text) {
    static constexpr std::string_view kSummary = "Aspect-Preference Summary:";
    static constexpr std::string_view kAnalysis = "Match Analysis:";
    static constexpr std::string_view kRating = "Predicted Rating:";
    const auto s = text.find(kSummary);
    const auto a = text.find(kAnalysis);
    const auto r = text.rfind(kRating);
    if (s == std::string_view::npos || a == std::string_view::npos || r == std::string_view::npos || !(s < a && a < r))
        fail(ErrorKind::parse, "chain-of-thought response lacks the three labeled segments");
    auto rating = parse_predicted_rating(text.substr(r));
    if (!rating) fail(ErrorKind::parse, "chain-of-thought response has no rating");
    return {trim(text.substr(s + kSummary.size(), a - s - kSummary.size())),
            trim(text.substr(a + kAnalysis.size(), r - a - kAnalysis.size())), *rating};
}

} // namespace deliberec
