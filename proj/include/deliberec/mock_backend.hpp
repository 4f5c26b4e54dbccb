#pragma once

#include <cmath>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "deliberec/backend.hpp"
#include "deliberec/error.hpp"
#include "deliberec/io.hpp"

namespace deliberec {

struct MockMatcher {
    std::optional<PromptFamily> family;
    std::optional<std::string> contains;
    std::optional<std::string> not_contains;
    std::optional<std::string> user_id;
    std::optional<std::string> item_id;
    std::optional<bool> hinted;

    [[nodiscard]] bool matches(const RenderedPrompt& p) const {
        if (family && p.family != *family) return false;
        const auto& text = p.text();
        if (contains && text.find(*contains) == std::string::npos) return false;
        if (not_contains && text.find(*not_contains) != std::string::npos) return false;
        if (user_id && p.meta("user_id") != *user_id) return false;
        if (item_id && p.meta("item_id") != *item_id) return false;
        if (hinted && has_hint(p) != *hinted) return false;
        return true;
    }
};

struct MockResponse {
    std::string text;
    std::optional<std::map<std::string, double>> alternatives;
    std::optional<std::size_t> generated_tokens;
    std::optional<double> latency_seconds;
    std::optional<ErrorKind> error;  ///< raise instead of answering
};

/// Content generators for rules that must answer arbitrary prompts
/// deterministically (pipeline fixtures). Output depends only on the prompt
/// text and the script seed.
enum class Synthetic { none, summary, reason, alternatives, score, one_step, cot };

struct MockRule {
    MockMatcher match;
    std::vector<MockResponse> responses;
    bool repeat = false;  ///< keep answering with the last response once the sequence is used up
    Synthetic synthetic = Synthetic::none;
};

struct MockScript {
    std::vector<MockRule> rules;
    std::uint64_t seed = 0;
    bool supports_logprobs = true;
    std::string model_tag = "mock";

    static MockScript from_json(const json& j);
};

namespace mock_detail {

inline Synthetic synthetic_from_string(const std::string& s) {
    if (s == "summary") return Synthetic::summary;
    if (s == "reason") return Synthetic::reason;
    if (s == "alternatives") return Synthetic::alternatives;
    if (s == "score") return Synthetic::score;
    if (s == "one_step") return Synthetic::one_step;
    if (s == "cot") return Synthetic::cot;
    fail(ErrorKind::validation, "unknown synthetic generator '" + s + "'");
}

inline ErrorKind error_from_string(const std::string& s) {
    if (s == "transport") return ErrorKind::transport;
    if (s == "protocol") return ErrorKind::protocol;
    if (s == "capability") return ErrorKind::capability;
    fail(ErrorKind::validation, "unknown scripted error '" + s + "'");
}

inline const std::vector<std::string>& positive_vocab() {
    static const std::vector<std::string> v{"Catchy Melody", "Strong Vocals",     "Clever Plot",   "Rich Characters",
                                            "Good Value",    "Fast Shipping",     "Warm Service",  "Fresh Ingredients",
                                            "Memorable Hooks", "Beautiful Prose", "Tight Pacing",  "Cozy Atmosphere"};
    return v;
}
inline const std::vector<std::string>& negative_vocab() {
    static const std::vector<std::string> v{"Repetitive Lyrics", "Slow Start",   "Thin Sound",  "Predictable Ending",
                                            "High Price",        "Long Wait",    "Flat Characters", "Noisy Room"};
    return v;
}
inline const std::vector<std::string>& preference_vocab() {
    static const std::vector<std::string> v{"Harmony",      "Emotional Resonance", "Storytelling", "Authenticity",
                                            "Craftsmanship", "Energy",             "Nostalgia",    "Originality"};
    return v;
}

inline std::string pick(const std::vector<std::string>& v, std::uint64_t h) { return v[h % v.size()]; }

inline std::uint64_t mix(std::uint64_t h, std::uint64_t salt) { return fnv1a64(std::to_string(salt), h); }

/// Reads the number after `label` in `text`, if present.
inline std::optional<double> number_after(const std::string& text, std::string_view label) {
    auto p = text.find(label);
    if (p == std::string::npos) return std::nullopt;
    p += label.size();
    while (p < text.size() && text[p] == ' ') ++p;
    char* end = nullptr;
    double v = std::strtod(text.c_str() + p, &end);
    if (end == text.c_str() + p) return std::nullopt;
    return v;
}

inline double rating_center(const std::string& text, std::uint64_t h) {
    double center = 3.0;
    auto ua = number_after(text, "User's Average Rating (all previous ratings):");
    auto ia = number_after(text, "Item's Average Rating (all ratings by other users):");
    if (ua && ia) center = 0.5 * (*ua + *ia);
    if (text.find("likely to enjoy") != std::string::npos) center += 0.5;
    if (text.find("unlikely to enjoy") != std::string::npos) center -= 1.0;
    center += (static_cast<double>(h % 1001) / 1000.0 - 0.5) * 1.2;
    return std::clamp(center, 1.0, 5.0);
}

inline int rounded_rating(double c) { return std::clamp(static_cast<int>(std::lround(c)), 1, 5); }

inline std::string synth_summary(const std::string& text, std::uint64_t h) {
    const int rating = static_cast<int>(number_after(text, "Rating:").value_or(3));
    std::string pos = pick(positive_vocab(), mix(h, 1));
    if (rating >= 4) pos += ", " + pick(positive_vocab(), mix(h, 2));
    std::string neg = rating <= 3 ? pick(negative_vocab(), mix(h, 3)) : std::string{};
    if (rating <= 2) neg += ", " + pick(negative_vocab(), mix(h, 4));
    return "Positive Aspects: " + pos + "\nNegative Aspects: " + (neg.empty() ? "None" : neg) +
           "\nUser Preference Elements: " + pick(preference_vocab(), mix(h, 5)) + ", " +
           pick(preference_vocab(), mix(h, 6));
}

inline std::string synth_reason(const std::string& text, std::uint64_t h) {
    int lean = static_cast<int>(h % 3);  // 0 negative, 1 mixed, 2 positive
    if (auto r = number_after(text, "rated the item")) lean = *r >= 4 ? 2 : *r <= 2 ? 0 : 1;
    const std::string pref = pick(preference_vocab(), mix(h, 7));
    const std::string pos = pick(positive_vocab(), mix(h, 8));
    const std::string neg = pick(negative_vocab(), mix(h, 9));
    switch (lean) {
    case 2:
        return "The user is likely to enjoy this item: their history shows a steady appreciation for " + pref +
               ", and other users consistently praise its " + pos + ".";
    case 0:
        return "The user is unlikely to enjoy this item: they value " + pref + ", while other users point to " +
               neg + " as a recurring weakness.";
    default:
        return "The user may have mixed feelings about this item: its " + pos + " matches their interest in " + pref +
               ", but " + neg + " could temper their enthusiasm.";
    }
}

inline std::map<std::string, double> synth_alternatives(const std::string& text, std::uint64_t h) {
    const double c = rating_center(text, h);
    std::array<double, 5> raw{};
    double m = -1e300;
    for (int k = 1; k <= 5; ++k) {
        raw[k - 1] = -(k - c) * (k - c) / 0.8;
        m = std::max(m, raw[k - 1]);
    }
    double z = 0;
    for (double r : raw) z += std::exp(r - m);
    std::map<std::string, double> out;
    double lowest = 0;
    for (int k = 1; k <= 5; ++k) {
        const double lp = raw[k - 1] - m - std::log(z);
        lowest = std::min(lowest, lp);
        if (lp > -20) out[std::to_string(k)] = lp;
    }
    out["."] = lowest - 1.0;
    return out;
}

} // namespace mock_detail

inline MockScript MockScript::from_json(const json& j) {
    MockScript s;
    s.seed = j.value("seed", std::uint64_t{0});
    s.supports_logprobs = j.value("supports_logprobs", true);
    s.model_tag = j.value("model_tag", std::string("mock"));
    for (const auto& r : j.at("rules")) {
        MockRule rule;
        if (auto m = r.find("match"); m != r.end()) {
            if (m->contains("family")) rule.match.family = family_from_string(m->at("family").get<std::string>());
            if (m->contains("contains")) rule.match.contains = m->at("contains").get<std::string>();
            if (m->contains("not_contains")) rule.match.not_contains = m->at("not_contains").get<std::string>();
            if (m->contains("user_id")) rule.match.user_id = m->at("user_id").get<std::string>();
            if (m->contains("item_id")) rule.match.item_id = m->at("item_id").get<std::string>();
            if (m->contains("hinted")) rule.match.hinted = m->at("hinted").get<bool>();
        }
        for (const auto& x : r.value("responses", json::array())) {
            MockResponse resp;
            resp.text = x.value("text", std::string{});
            if (x.contains("alternatives")) resp.alternatives = x.at("alternatives").get<std::map<std::string, double>>();
            if (x.contains("generated_tokens")) resp.generated_tokens = x.at("generated_tokens").get<std::size_t>();
            if (x.contains("latency_ms")) resp.latency_seconds = x.at("latency_ms").get<double>() / 1000.0;
            if (x.contains("error")) resp.error = mock_detail::error_from_string(x.at("error").get<std::string>());
            rule.responses.push_back(std::move(resp));
        }
        rule.repeat = r.value("repeat", false);
        if (r.contains("synthetic")) rule.synthetic = mock_detail::synthetic_from_string(r.at("synthetic").get<std::string>());
        require(rule.synthetic != Synthetic::none || !rule.responses.empty(),
                "mock rule needs responses or a synthetic generator");
        s.rules.push_back(std::move(rule));
    }
    return s;
}

/// One call as seen by the mock, for trace assertions.
struct MockCall {
    PromptFamily family;
    std::string user_id;
    std::string item_id;
    bool hinted = false;
    bool want_logprobs = false;
    std::string text;
    std::size_t rule = 0;
};

/// Scripted backend. The first matching rule answers; scripted sequences are
/// consumed per (rule, user_id, item_id), so traces do not depend on the
/// order in which different pairs call in.
class MockBackend final : public Backend {
public:
    explicit MockBackend(MockScript script) : script_(std::move(script)) {}

    [[nodiscard]] bool supports_logprobs() const override { return script_.supports_logprobs; }
    [[nodiscard]] std::string model_tag() const override { return script_.model_tag; }

    [[nodiscard]] std::vector<MockCall> trace() const {
        std::lock_guard lock(mu_);
        return trace_;
    }
    [[nodiscard]] std::size_t call_count() const {
        std::lock_guard lock(mu_);
        return trace_.size();
    }
    void clear_trace() {
        std::lock_guard lock(mu_);
        trace_.clear();
    }

private:
    CompletionResponse do_complete(const CompletionRequest& request) override {
        std::lock_guard lock(mu_);
        const auto& p = request.prompt;
        const auto& text = p.text();
        std::size_t idx = 0;
        for (; idx < script_.rules.size(); ++idx)
            if (script_.rules[idx].match.matches(p)) break;
        if (idx == script_.rules.size())
            fail(ErrorKind::script, "no mock rule matches " + std::string(to_string(p.family)) + " prompt for " +
                                        to_string(PairKey{p.meta("user_id"), p.meta("item_id")}));
        trace_.push_back({p.family, p.meta("user_id"), p.meta("item_id"), has_hint(p), request.want_logprobs, text, idx});

        const auto& rule = script_.rules[idx];
        MockResponse resp;
        if (!rule.responses.empty()) {
            auto& cursor = cursors_[{idx, p.meta("user_id"), p.meta("item_id")}];
            if (cursor >= rule.responses.size()) {
                if (!rule.repeat)
                    fail(ErrorKind::script, "mock rule " + std::to_string(idx) + " exhausted for " +
                                                to_string(PairKey{p.meta("user_id"), p.meta("item_id")}));
                resp = rule.responses.back();
            } else {
                resp = rule.responses[cursor++];
            }
        }
        if (resp.error) fail(*resp.error, "scripted failure from mock rule " + std::to_string(idx));

        const std::uint64_t h = fnv1a64(text, fnv1a64(std::to_string(script_.seed)));
        switch (rule.synthetic) {
        case Synthetic::none: break;
        case Synthetic::summary: resp.text = mock_detail::synth_summary(text, h); break;
        case Synthetic::reason: resp.text = mock_detail::synth_reason(text, h); break;
        case Synthetic::score: resp.text = std::to_string(40 + h % 61); break;
        case Synthetic::alternatives: {
            resp.alternatives = mock_detail::synth_alternatives(text, h);
            resp.text = std::to_string(mock_detail::rounded_rating(mock_detail::rating_center(text, h)));
            break;
        }
        case Synthetic::one_step:
            resp.text = mock_detail::synth_reason(text, h) + "\nPredicted Rating: " +
                        std::to_string(mock_detail::rounded_rating(mock_detail::rating_center(text, h)));
            break;
        case Synthetic::cot:
            resp.text = "Aspect-Preference Summary: " + mock_detail::pick(mock_detail::preference_vocab(), h) +
                        "\nMatch Analysis: " + mock_detail::synth_reason(text, h) + "\nPredicted Rating: " +
                        std::to_string(mock_detail::rounded_rating(mock_detail::rating_center(text, h)));
            break;
        }

        CompletionResponse out;
        out.text = resp.text;
        if (request.want_logprobs && script_.supports_logprobs) out.first_token_alternatives = resp.alternatives;
        if (request.max_tokens == 1 && !resp.alternatives && !resp.text.empty()) {
            // Single-token decoding returns only the first word.
            out.text = resp.text.substr(0, resp.text.find_first_of(" \n"));
        }
        out.usage.prompt_tokens = count_words(text);
        out.usage.generated_tokens = resp.generated_tokens.value_or(
            request.max_tokens == 1 ? std::size_t{1}
                                    : std::min<std::size_t>(count_words(out.text), static_cast<std::size_t>(request.max_tokens)));
        out.latency_seconds =
            resp.latency_seconds.value_or(0.05 + 0.02 * static_cast<double>(out.usage.generated_tokens));
        return out;
    }

    MockScript script_;
    mutable std::mutex mu_;
    std::map<std::tuple<std::size_t, std::string, std::string>, std::size_t> cursors_;
    std::vector<MockCall> trace_;
};

} // namespace deliberec
