#pragma once

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "deliberec/backend.hpp"
#include "deliberec/corpus.hpp"
#include "deliberec/error.hpp"
#include "deliberec/prompts.hpp"
#include "deliberec/sft.hpp"

namespace deliberec {

/// Mean ratings of H_u and H_i. An empty side takes `global_mean` and is flagged.
inline RatingAverages compute_average_ratings(const HistoryPair& pair, double global_mean) {
    auto mean = [](const std::vector<Interaction>& xs) {
        double s = 0;
        for (const auto& x : xs) s += x.rating;
        return s / static_cast<double>(xs.size());
    };
    RatingAverages a;
    a.user_fallback = pair.user_history.empty();
    a.item_fallback = pair.item_history.empty();
    a.user_avg = a.user_fallback ? global_mean : mean(pair.user_history);
    a.item_avg = a.item_fallback ? global_mean : mean(pair.item_history);
    return a;
}

/// Everything needed to render prompts for one target interaction.
struct PairContext {
    Interaction target;
    HistoryPair history;
    RatingAverages averages;

    [[nodiscard]] PairKey key() const { return {target.user_id, target.item_id}; }
};

/// Histories strictly precede `target` in chronological order.
inline PairContext make_context(const SplitCorpus& split, const Interaction& target,
                                std::size_t max_len = kDefaultMaxHistory) {
    PairContext c;
    c.target = target;
    c.history = build_history(split, target.user_id, target.item_id, max_len, target.timestamp);
    c.averages = compute_average_ratings(c.history, split.train.mean_rating());
    return c;
}

/// Context for a training pair, targeting its latest training interaction.
inline PairContext make_training_context(const SplitCorpus& split, const PairKey& pair,
                                         std::size_t max_len = kDefaultMaxHistory) {
    auto target = split.train.latest(pair.first, pair.second);
    if (!target) fail(ErrorKind::validation, "pair " + to_string(pair) + " is not a training interaction");
    return make_context(split, *target, max_len);
}

struct RatingDistribution {
    std::array<double, 5> probabilities{};  ///< p_1 .. p_5
    double expected = 0;                    ///< sum k * p_k
};

/// Softmax over the five rating-token log-probabilities, then the
/// probability-weighted mean rating.
inline RatingDistribution logit_weighted_decode(const std::map<std::string, double>& logits) {
    if (logits.size() != 5) fail(ErrorKind::validation, "expected exactly five rating logits");
    std::array<double, 5> l{};
    for (int k = 1; k <= 5; ++k) {
        auto it = logits.find(std::to_string(k));
        if (it == logits.end()) fail(ErrorKind::validation, "missing logit for rating token \"" + std::to_string(k) + "\"");
        if (!std::isfinite(it->second)) fail(ErrorKind::numeric, "non-finite logit for rating " + std::to_string(k));
        l[k - 1] = it->second;
    }
    double m = l[0];
    for (double v : l) m = std::max(m, v);
    double z = 0;
    for (double v : l) z += std::exp(v - m);
    RatingDistribution d;
    for (int k = 0; k < 5; ++k) {
        d.probabilities[k] = std::exp(l[k] - m) / z;
        d.expected += (k + 1) * d.probabilities[k];
    }
    d.expected = std::clamp(d.expected, 1.0, 5.0);
    return d;
}

enum class DecodePath { logits, text };

inline std::string_view to_string(DecodePath p) { return p == DecodePath::logits ? "logits" : "text"; }

struct Prediction {
    double rating = 0;
    std::optional<RatingDistribution> distribution;
    DecodePath path = DecodePath::logits;
    bool off_format = false;  ///< first generated token was not a rating
    CallCost cost;
};

struct PredictOptions {
    double temperature = 0.0;
    int text_max_tokens = 8;  ///< budget for the text-parsing fallback
};

/// Decodes a rating for an already rendered predictor or reward prompt.
/// Prefers one-token logit decoding and falls back to parsing
/// "Predicted Rating: k" when the backend has no log-probabilities.
inline Prediction predict_from_prompt(Backend& backend, const RenderedPrompt& prompt, const PredictOptions& opts = {}) {
    CompletionRequest req;
    req.prompt = prompt;
    req.temperature = opts.temperature;
    Prediction out;
    if (backend.supports_logprobs()) {
        try {
            auto rl = rating_token_logits(backend, req);
            out.cost += rl.response.cost();
            out.distribution = logit_weighted_decode(rl.logits);
            out.rating = out.distribution->expected;
            out.off_format = !rl.first_token_is_rating;
            out.path = DecodePath::logits;
            return out;
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::capability) throw;
        }
    }
    req.want_logprobs = false;
    req.max_tokens = opts.text_max_tokens;
    auto resp = backend.complete(req);
    out.cost += resp.cost();
    auto k = parse_predicted_rating(resp.text);
    if (!k)
        fail(ErrorKind::parse, "no rating in reply for " +
                                   to_string(PairKey{prompt.meta("user_id"), prompt.meta("item_id")}) + ": \"" +
                                   resp.text.substr(0, 80) + "\"");
    out.rating = *k;
    out.path = DecodePath::text;
    return out;
}

inline Prediction predict_rating(Backend& backend, const HistoryPair& pair, const SummaryMap& summaries,
                                 const RatingAverages& averages, const std::optional<std::string>& reason,
                                 const std::string& target_title, const PredictOptions& opts = {}) {
    return predict_from_prompt(backend, render_predictor_prompt(pair, summaries, averages, reason, target_title), opts);
}

/// Predictor SFT records: the (reason-filled) predictor prompt, answered with
/// "Predicted Rating: r". Pairs in `excluded` are skipped and tallied.
inline SftExportStats export_predictor_sft(const fs::path& path, const std::vector<PairKey>& pairs,
                                           const std::map<PairKey, RenderedPrompt>& prompts,
                                           const std::map<PairKey, int>& true_ratings,
                                           const std::set<PairKey>& excluded = {}) {
    SftExportStats stats;
    std::vector<SftRecord> records;
    for (const auto& pair : pairs) {
        if (excluded.contains(pair)) {
            ++stats.excluded;
            continue;
        }
        auto p = prompts.find(pair);
        if (p == prompts.end()) fail(ErrorKind::validation, "no predictor prompt for " + to_string(pair));
        auto r = true_ratings.find(pair);
        if (r == true_ratings.end()) fail(ErrorKind::validation, "no true rating for " + to_string(pair));
        records.push_back(SftRecord::make(p->second, rating_label(r->second)));
    }
    write_sft(path, records, stats);
    return stats;
}

} // namespace deliberec
