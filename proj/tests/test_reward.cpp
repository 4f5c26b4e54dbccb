#include <gtest/gtest.h>

#include "deliberec/mock_backend.hpp"
#include "deliberec/reward.hpp"
#include "oracles.hpp"

using namespace deliberec;
using oracle::ix;

TEST(Reward, WorkedExampleRejectedAtMusicTau) {
    auto j = make_judgment(5, 4.6, 4.8, tau_presets::music);
    EXPECT_NEAR(j.s_eval, 0.2, 1e-12);
    EXPECT_EQ(j.score, 0);
}

TEST(Reward, EqualPredictionsScoreZeroEval) {
    auto j = make_judgment(3, 3.7, 3.7, 0.04);
    EXPECT_EQ(j.s_eval, 0.0);
    EXPECT_EQ(j.score, 1);
    EXPECT_EQ(make_judgment(3, 3.7, 3.7, 0.0).score, 0);
}

TEST(Reward, ReasonBeatingReview) {
    auto j = make_judgment(4, 4.0, 3.0, 0.1);
    EXPECT_DOUBLE_EQ(j.s_eval, -1.0);
    EXPECT_EQ(j.score, 1);
    EXPECT_EQ(make_judgment(4, 4.0, 3.0, -0.999).score, 1);
    EXPECT_EQ(make_judgment(4, 4.0, 3.0, -1.0).score, 0);
}

TEST(Reward, BoundaryIsStrict) { EXPECT_EQ(make_judgment(5, 4.5, 5.0, 0.5).score, 0); }

TEST(Reward, PresetsMatchPublishedValues) {
    EXPECT_EQ(tau_presets::music, 0.1);
    EXPECT_EQ(tau_presets::book, 0.2);
    EXPECT_EQ(tau_presets::yelp, 0.04);
    EXPECT_EQ(tau_presets::lookup("yelp"), 0.04);
    EXPECT_FALSE(tau_presets::lookup("movies"));
}

TEST(Reward, PropertiesOnRandomTriples) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> r(1, 5), t(-1, 1);
    std::uniform_int_distribution<int> k(1, 5);
    for (int i = 0; i < 1000; ++i) {
        const int rt = k(rng);
        const double a = r(rng), b = r(rng), tau1 = t(rng), tau2 = tau1 + std::abs(t(rng));
        auto j = make_judgment(rt, a, b, tau1);
        EXPECT_NEAR(j.s_eval, std::fabs(rt - a) - std::fabs(rt - b), 1e-12);
        EXPECT_NEAR(evaluation_score(rt, a, b), -evaluation_score(rt, b, a), 1e-12);
        EXPECT_GE(make_judgment(rt, a, b, tau2).score, j.score);
    }
}

TEST(Reward, NonFiniteTauRejected) {
    EXPECT_THROW(make_judgment(3, 3, 3, std::numeric_limits<double>::infinity()), Error);
}

namespace {

struct JudgeFixture {
    SplitCorpus split{Corpus({ix("u", "a", 4, 1), ix("v", "t", 3, 2), ix("u", "t", 5, 3, "loved it")}), Corpus{},
                      Corpus{}};
    SummaryMap summaries{{{"u", "a"}, {{"A"}, {}, {"B"}, 4}}, {{"v", "t"}, {{"C"}, {}, {"D"}, 3}}};
};

} // namespace

TEST(RewardJudge, CachesReviewPredictionPerPair) {
    // First reward call predicts with the review (~4.8), later calls score reasons.
    auto m = MockBackend(MockScript::from_json(json::parse(R"({"rules":[
        {"match":{"contains":"loved it"},"responses":[{"text":"5","alternatives":{"5":0.0,"4":-1.3862943611198906}}],"repeat":true},
        {"responses":[{"text":"4","alternatives":{"4":0.0,"3":-20.0}}],"repeat":true}]})")));
    JudgeFixture f;
    RewardJudge judge(m, f.summaries, 0.1);
    auto ctx = make_training_context(f.split, {"u", "t"});
    auto j1 = judge.judge(ctx, "a reason", ctx.target.review_text, ctx.target.rating);
    auto j2 = judge.judge(ctx, "another reason", ctx.target.review_text, ctx.target.rating);
    EXPECT_EQ(judge.cached_reviews(), 1u);
    EXPECT_EQ(m.call_count(), 3u);
    EXPECT_NEAR(j1.r_review, 4.8, 1e-3);
    EXPECT_NEAR(j1.r_reason, 4.0, 1e-3);
    EXPECT_NEAR(j1.s_eval, 1.0 - 0.2, 1e-3);
    EXPECT_EQ(j1.score, 0);
    EXPECT_EQ(j2.r_review, j1.r_review);
    EXPECT_EQ(judge.cost().calls, 3u);
}

TEST(RewardJudge, EmptyReviewRejected) {
    auto m = MockBackend(MockScript::from_json(json::parse(R"({"rules":[{"synthetic":"alternatives"}]})")));
    JudgeFixture f;
    RewardJudge judge(m, f.summaries, 0.1);
    auto ctx = make_training_context(f.split, {"u", "t"});
    EXPECT_THROW(judge.judge(ctx, "r", " ", 5), Error);
}

TEST(RewardSft, OverlapIsLeakage) {
    auto dir = oracle::temp_dir("reward_sft_overlap");
    JudgeFixture f;
    try {
        export_reward_sft(dir / "r.jsonl", {{"u", "t"}}, {{"u", "t"}}, f.split, f.summaries);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::leakage);
    }
    EXPECT_FALSE(std::filesystem::exists(dir / "r.jsonl"));
}

TEST(RewardSft, ReviewFilledPromptWithTrueRating) {
    auto dir = oracle::temp_dir("reward_sft");
    JudgeFixture f;
    auto stats = export_reward_sft(dir / "r.jsonl", {{"u", "t"}}, {{"v", "t"}}, f.split, f.summaries);
    EXPECT_EQ(stats.records, 1u);
    auto recs = read_sft(dir / "r.jsonl");
    ASSERT_EQ(recs[0].messages.size(), 2u);
    EXPECT_NE(recs[0].messages[0].content.find("### Personalized Recommendation Analysis ###\nloved it\n"),
              std::string::npos);
    EXPECT_EQ(recs[0].messages[1].content, "Predicted Rating: 5");
}
