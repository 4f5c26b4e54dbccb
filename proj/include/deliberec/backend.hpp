#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "deliberec/error.hpp"
#include "deliberec/io.hpp"
#include "deliberec/prompts.hpp"

namespace deliberec {

struct CompletionRequest {
    RenderedPrompt prompt;
    double temperature = 0.0;
    int max_tokens = 512;
    bool want_logprobs = false;
    int logprob_top_k = 20;  ///< in [1, 20]; at least 5 for rating decoding
};

struct Usage {
    std::size_t prompt_tokens = 0;
    std::size_t generated_tokens = 0;
};

/// Cost of one or more backend calls.
struct CallCost {
    double latency_seconds = 0;
    std::size_t prompt_tokens = 0;
    std::size_t generated_tokens = 0;
    std::size_t calls = 0;

    CallCost& operator+=(const CallCost& o) {
        latency_seconds += o.latency_seconds;
        prompt_tokens += o.prompt_tokens;
        generated_tokens += o.generated_tokens;
        calls += o.calls;
        return *this;
    }

    [[nodiscard]] json to_json() const {
        return json{{"latency_s", latency_seconds},
                    {"prompt_tokens", prompt_tokens},
                    {"generated_tokens", generated_tokens},
                    {"calls", calls}};
    }
    static CallCost from_json(const json& j) {
        return {j.value("latency_s", 0.0), j.value("prompt_tokens", std::size_t{0}),
                j.value("generated_tokens", std::size_t{0}), j.value("calls", std::size_t{0})};
    }
};

struct CompletionResponse {
    std::string text;
    /// Top-k alternatives for the first generated token, token text -> log-probability.
    std::optional<std::map<std::string, double>> first_token_alternatives;
    Usage usage;
    double latency_seconds = 0;

    [[nodiscard]] CallCost cost() const { return {latency_seconds, usage.prompt_tokens, usage.generated_tokens, 1}; }
};

inline void validate_request(const CompletionRequest& r) {
    require(r.temperature >= 0, "temperature must be >= 0");
    require(r.max_tokens >= 1, "max_tokens must be positive");
    require(r.logprob_top_k >= 1 && r.logprob_top_k <= 20, "logprob_top_k must be in [1, 20]");
    require(!r.prompt.messages.empty(), "request has no messages");
    bool has_user = false;
    for (const auto& m : r.prompt.messages) {
        require(!m.content.empty(), "message content must be non-empty");
        has_user = has_user || m.role == Role::user;
    }
    require(has_user, "request needs at least one user message");
}

/// Chat-completion backend. Implementations override do_complete.
class Backend {
public:
    virtual ~Backend() = default;

    CompletionResponse complete(const CompletionRequest& request) {
        validate_request(request);
        return do_complete(request);
    }

    [[nodiscard]] virtual bool supports_logprobs() const { return true; }
    [[nodiscard]] virtual std::string model_tag() const = 0;

private:
    virtual CompletionResponse do_complete(const CompletionRequest& request) = 0;
};

// ---------------------------------------------------------------------------
// Rating-token extraction

inline constexpr std::string_view kRatingPrefix = "Predicted Rating:";
inline constexpr std::array<std::string_view, 5> kRatingTokens{"1", "2", "3", "4", "5"};

inline double log_add_exp(double a, double b) {
    if (a == -std::numeric_limits<double>::infinity()) return b;
    if (b == -std::numeric_limits<double>::infinity()) return a;
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

struct RatingLogits {
    std::map<std::string, double> logits;  ///< exactly "1".."5"
    bool first_token_is_rating = true;     ///< false when the model did not emit a rating first
    CompletionResponse response;
};

/// Maps top-k first-token alternatives onto the five rating tokens. Tokens are
/// matched on trimmed text, so "5" and " 5" both count (their probabilities are
/// summed). Ratings absent from the alternatives get the floor
/// (smallest returned log-probability - 10).
inline std::map<std::string, double> rating_logits_from_alternatives(const std::map<std::string, double>& alts) {
    if (alts.empty()) fail(ErrorKind::capability, "backend returned no log-probabilities; fall back to text parsing");
    double floor = std::numeric_limits<double>::infinity();
    for (const auto& [_, lp] : alts) {
        if (!std::isfinite(lp) && lp != -std::numeric_limits<double>::infinity())
            fail(ErrorKind::numeric, "non-finite log-probability in alternatives");
        if (std::isfinite(lp)) floor = std::min(floor, lp);
    }
    if (!std::isfinite(floor)) fail(ErrorKind::numeric, "alternatives carry no finite log-probability");
    floor -= 10.0;
    std::map<std::string, double> found;
    for (const auto& [tok, lp] : alts) {
        const auto t = trim(tok);
        if (std::find(kRatingTokens.begin(), kRatingTokens.end(), t) == kRatingTokens.end()) continue;
        auto it = found.find(t);
        found[t] = it == found.end() ? lp : log_add_exp(it->second, lp);
    }
    std::map<std::string, double> out;
    for (auto tok : kRatingTokens) {
        auto it = found.find(std::string(tok));
        out[std::string(tok)] = (it == found.end() || !std::isfinite(it->second)) ? floor : it->second;
    }
    return out;
}

/// Decodes a single token after the prompt's "Predicted Rating:" instruction
/// and returns log-probabilities for all five rating tokens.
inline RatingLogits rating_token_logits(Backend& backend, CompletionRequest request) {
    if (!backend.supports_logprobs())
        fail(ErrorKind::capability, backend.model_tag() + " does not expose log-probabilities; use text parsing");
    request.want_logprobs = true;
    request.max_tokens = 1;
    // The invariant "Predicted Rating:" prefix is supplied as the start of the
    // reply, so the single decoded token is the rating itself.
    if (!request.prompt.messages.empty() && request.prompt.messages.back().role != Role::assistant)
        request.prompt.messages.push_back({Role::assistant, std::string(kRatingPrefix)});
    request.logprob_top_k = std::max(request.logprob_top_k, 5);
    RatingLogits out;
    out.response = backend.complete(request);
    if (!out.response.first_token_alternatives || out.response.first_token_alternatives->empty())
        fail(ErrorKind::capability, "backend returned no log-probabilities; fall back to text parsing");
    out.logits = rating_logits_from_alternatives(*out.response.first_token_alternatives);
    const auto first = trim(out.response.text);
    out.first_token_is_rating = std::find(kRatingTokens.begin(), kRatingTokens.end(), first) != kRatingTokens.end();
    return out;
}

// ---------------------------------------------------------------------------
// Cost accounting

struct CostReport {
    double avg_latency_seconds = 0;
    double avg_generated_tokens = 0;
    std::size_t count = 0;
    bool empty = true;

    [[nodiscard]] json to_json() const {
        return json{{"avg_latency_s", avg_latency_seconds},
                    {"avg_generated_tokens", avg_generated_tokens},
                    {"count", count},
                    {"empty", empty}};
    }
};

inline CostReport cost_report(std::span<const CallCost> costs) {
    CostReport r;
    r.count = costs.size();
    r.empty = costs.empty();
    if (costs.empty()) return r;
    double lat = 0, tok = 0;
    for (const auto& c : costs) {
        lat += c.latency_seconds;
        tok += static_cast<double>(c.generated_tokens);
    }
    r.avg_latency_seconds = lat / static_cast<double>(costs.size());
    r.avg_generated_tokens = tok / static_cast<double>(costs.size());
    return r;
}

inline CostReport cost_report(std::span<const CompletionResponse> calls) {
    std::vector<CallCost> costs;
    costs.reserve(calls.size());
    for (const auto& c : calls) costs.push_back(c.cost());
    return cost_report(std::span<const CallCost>(costs));
}

// ---------------------------------------------------------------------------
// Concurrency cap shared by network backends

class InFlightLimiter {
public:
    explicit InFlightLimiter(std::size_t cap) : cap_(std::max<std::size_t>(cap, 1)) {}

    class Slot {
    public:
        explicit Slot(InFlightLimiter& l) : l_(&l) { l_->acquire(); }
        ~Slot() { l_->release(); }
        Slot(const Slot&) = delete;
        Slot& operator=(const Slot&) = delete;

    private:
        InFlightLimiter* l_;
    };

private:
    void acquire() {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return in_flight_ < cap_; });
        ++in_flight_;
    }
    void release() {
        {
            std::lock_guard lock(mu_);
            --in_flight_;
        }
        cv_.notify_one();
    }

    std::size_t cap_;
    std::size_t in_flight_ = 0;
    std::mutex mu_;
    std::condition_variable cv_;
};

} // namespace deliberec
