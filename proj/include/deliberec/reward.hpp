#pragma once

#include <cmath>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "deliberec/backend.hpp"
#include "deliberec/corpus.hpp"
#include "deliberec/error.hpp"
#include "deliberec/predictor.hpp"
#include "deliberec/prompts.hpp"
#include "deliberec/sft.hpp"

namespace deliberec {

/// Per-dataset acceptance thresholds.
namespace tau_presets {
inline constexpr double music = 0.1;
inline constexpr double book = 0.2;
inline constexpr double yelp = 0.04;

inline std::optional<double> lookup(std::string_view dataset) {
    if (dataset == "music") return music;
    if (dataset == "book") return book;
    if (dataset == "yelp") return yelp;
    return std::nullopt;
}
} // namespace tau_presets

struct RewardJudgment {
    int r_true = 0;
    double r_reason = 0;
    double r_review = 0;
    double s_eval = 0;
    int score = 0;
    double tau = 0;
};

/// |r_true - r_reason| - |r_true - r_review|. Negative means the reason
/// predicts better than the review itself.
inline double evaluation_score(int r_true, double r_reason, double r_review) {
    return std::abs(r_true - r_reason) - std::abs(r_true - r_review);
}

/// Score is 1 iff s_eval < tau (strict).
inline RewardJudgment make_judgment(int r_true, double r_reason, double r_review, double tau) {
    require(std::isfinite(tau), "tau must be finite");
    RewardJudgment j{r_true, r_reason, r_review, evaluation_score(r_true, r_reason, r_review), 0, tau};
    j.score = j.s_eval < tau ? 1 : 0;
    return j;
}

/// Rating predicted by the reward model when the analysis section holds `filler_text`.
inline double reward_predict(Backend& backend, const HistoryPair& pair, const SummaryMap& summaries,
                             const RatingAverages& averages, const std::string& filler_text,
                             const std::string& target_title, CallCost* cost = nullptr) {
    auto prompt = render_reward_prompt(pair, summaries, averages, filler_text, target_title);
    auto p = predict_from_prompt(backend, prompt);
    if (cost) *cost += p.cost;
    return p.rating;
}

/// Judges candidate reasons against the target review. The review-conditioned
/// prediction is computed once per pair and cached.
class RewardJudge {
public:
    RewardJudge(Backend& backend, const SummaryMap& summaries, double tau)
        : backend_(&backend), summaries_(&summaries), tau_(tau) {
        require(std::isfinite(tau), "tau must be finite");
    }

    RewardJudgment judge(const PairContext& ctx, const std::string& reason_text, const std::string& target_review,
                         int r_true) {
        require(!trim(target_review).empty(), "reward judging requires a target review for " + to_string(ctx.key()));
        require(r_true >= 1 && r_true <= 5, "true rating must be in [1,5]");
        const double r_review = review_prediction(ctx, target_review);
        CallCost c;
        const double r_reason =
            reward_predict(*backend_, ctx.history, *summaries_, ctx.averages, reason_text, ctx.target.item_title, &c);
        {
            std::lock_guard lock(mu_);
            cost_ += c;
        }
        return make_judgment(r_true, r_reason, r_review, tau_);
    }

    [[nodiscard]] double tau() const noexcept { return tau_; }

    [[nodiscard]] std::size_t cached_reviews() const {
        std::lock_guard lock(mu_);
        return review_cache_.size();
    }
    [[nodiscard]] CallCost cost() const {
        std::lock_guard lock(mu_);
        return cost_;
    }

private:
    double review_prediction(const PairContext& ctx, const std::string& review) {
        {
            std::lock_guard lock(mu_);
            if (auto it = review_cache_.find(ctx.key()); it != review_cache_.end()) return it->second;
        }
        CallCost c;
        const double r =
            reward_predict(*backend_, ctx.history, *summaries_, ctx.averages, review, ctx.target.item_title, &c);
        std::lock_guard lock(mu_);
        cost_ += c;
        return review_cache_.try_emplace(ctx.key(), r).first->second;
    }

    Backend* backend_;
    const SummaryMap* summaries_;
    double tau_;
    mutable std::mutex mu_;
    std::map<PairKey, double> review_cache_;
    CallCost cost_;
};

inline json to_json(const RewardJudgment& j) {
    return json{{"r_true", j.r_true}, {"r_reason", j.r_reason}, {"r_review", j.r_review},
                {"s_eval", j.s_eval}, {"score", j.score},       {"tau", j.tau}};
}

/// Reward-model SFT data: predictor prompt with the target review in the
/// analysis section, answered with the true rating. The reward pairs must not
/// overlap the instruct pairs; pairs without a review are skipped and tallied.
inline SftExportStats export_reward_sft(const fs::path& path, const std::vector<PairKey>& reward_pairs,
                                        const std::vector<PairKey>& instruct_pairs, const SplitCorpus& split,
                                        const SummaryMap& summaries, std::size_t max_len = kDefaultMaxHistory) {
    const std::set<PairKey> instruct(instruct_pairs.begin(), instruct_pairs.end());
    for (const auto& p : reward_pairs)
        if (instruct.contains(p))
            fail(ErrorKind::leakage, "reward pair " + to_string(p) + " also appears in the instruct pairs");
    SftExportStats stats;
    std::vector<SftRecord> records;
    for (const auto& p : reward_pairs) {
        auto ctx = make_training_context(split, p, max_len);
        if (trim(ctx.target.review_text).empty()) {
            ++stats.excluded;
            continue;
        }
        auto prompt = render_reward_prompt(ctx.history, summaries, ctx.averages, ctx.target.review_text,
                                           ctx.target.item_title);
        records.push_back(SftRecord::make(prompt, rating_label(ctx.target.rating)));
    }
    write_sft(path, records, stats);
    return stats;
}

} // namespace deliberec
