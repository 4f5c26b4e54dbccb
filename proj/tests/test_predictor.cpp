#include <gtest/gtest.h>

#include "deliberec/mock_backend.hpp"
#include "deliberec/predictor.hpp"
#include "oracles.hpp"

using namespace deliberec;
using oracle::ix;

namespace {

std::map<std::string, double> as_map(const std::array<double, 5>& l) {
    std::map<std::string, double> m;
    for (int k = 0; k < 5; ++k) m[std::to_string(k + 1)] = l[k];
    return m;
}

SplitCorpus small_split() {
    return {Corpus({ix("u", "a", 4, 1), ix("u", "b", 2, 2), ix("v", "a", 5, 3), ix("v", "t", 3, 4), ix("u", "t", 1, 9)}),
            Corpus{}, Corpus{}};
}

SummaryMap empty_summaries(const Corpus& c) {
    SummaryMap m;
    for (const auto& x : c.interactions()) m[{x.user_id, x.item_id}] = AspectSummary{{"A"}, {}, {"B"}, x.rating};
    return m;
}

} // namespace

TEST(Decode, WorkedExample) {
    // Weights (1,1,1,1,4)/8 give (1+2+3+4+20)/8 = 3.75.
    auto d = logit_weighted_decode(as_map({0, 0, 0, 0, std::log(4.0)}));
    EXPECT_NEAR(d.expected, 3.75, 1e-12);
    EXPECT_NEAR(d.probabilities[4], 0.5, 1e-12);
}

TEST(Decode, UniformGivesThree) { EXPECT_NEAR(logit_weighted_decode(as_map({2, 2, 2, 2, 2})).expected, 3.0, 1e-12); }

TEST(Decode, MatchesBruteForceAndStaysInRange) {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(-30, 5);
    for (int t = 0; t < 2000; ++t) {
        std::array<double, 5> l{u(rng), u(rng), u(rng), u(rng), u(rng)};
        auto d = logit_weighted_decode(as_map(l));
        EXPECT_NEAR(d.expected, oracle::softmax_expectation(l), 1e-12);
        EXPECT_GE(d.expected, 1.0);
        EXPECT_LE(d.expected, 5.0);
        double s = 0;
        for (double p : d.probabilities) s += p;
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Decode, ShiftInvariantAndMonotone) {
    std::array<double, 5> l{-1, -2, -0.5, -3, -1.5};
    auto base = logit_weighted_decode(as_map(l)).expected;
    auto shifted = l;
    for (auto& v : shifted) v += 123.0;
    EXPECT_NEAR(logit_weighted_decode(as_map(shifted)).expected, base, 1e-12);
    auto up = l;
    up[4] += 1.0;
    EXPECT_GT(logit_weighted_decode(as_map(up)).expected, base);
}

TEST(Decode, RejectsBadInput) {
    EXPECT_THROW(logit_weighted_decode({{"1", 0}, {"2", 0}}), Error);
    auto m = as_map({0, 0, 0, 0, 0});
    m["3"] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(logit_weighted_decode(m), Error);
}

TEST(Averages, FallbackToGlobalMean) {
    HistoryPair h;
    h.user_history = {ix("u", "a", 4, 1), ix("u", "b", 5, 2)};
    auto a = compute_average_ratings(h, 3.2);
    EXPECT_DOUBLE_EQ(a.user_avg, 4.5);
    EXPECT_DOUBLE_EQ(a.item_avg, 3.2);
    EXPECT_FALSE(a.user_fallback);
    EXPECT_TRUE(a.item_fallback);
}

TEST(Context, TrainingTargetSeesOnlyEarlierInteractions) {
    auto s = small_split();
    auto c = make_training_context(s, {"u", "t"});
    EXPECT_EQ(c.target.timestamp, 9);
    EXPECT_EQ(c.history.user_history.size(), 2u);
    ASSERT_EQ(c.history.item_history.size(), 1u);
    EXPECT_EQ(c.history.item_history[0].user_id, "v");
    EXPECT_THROW(make_training_context(s, {"u", "zzz"}), Error);
}

TEST(Predict, LogitPathUsesSingleToken) {
    auto m = MockBackend(MockScript::from_json(json::parse(
        R"({"rules":[{"responses":[{"text":"5","alternatives":{"4":0.0,"5":1.3862943611198906}}]}]})")));
    auto s = small_split();
    auto c = make_training_context(s, {"u", "t"});
    auto p = predict_rating(m, c.history, empty_summaries(s.train), c.averages, std::string("reason"), "t");
    EXPECT_EQ(p.path, DecodePath::logits);
    ASSERT_TRUE(p.distribution);
    // Tokens 1-3 sit at the floor (0 - 10), far below 4 and 5.
    EXPECT_NEAR(p.rating, (4 + 5 * 4) / 5.0, 1e-3);
    EXPECT_EQ(p.cost.generated_tokens, 1u);
    EXPECT_FALSE(p.off_format);
}

TEST(Predict, TextFallbackWithoutLogprobs) {
    auto m = MockBackend(MockScript::from_json(
        json::parse(R"({"supports_logprobs":false,"rules":[{"responses":[{"text":"Predicted Rating: 2"}]}]})")));
    auto s = small_split();
    auto c = make_training_context(s, {"u", "t"});
    auto p = predict_rating(m, c.history, empty_summaries(s.train), c.averages, std::nullopt, "t");
    EXPECT_EQ(p.path, DecodePath::text);
    EXPECT_DOUBLE_EQ(p.rating, 2.0);
}

TEST(Predict, UnparseableTextIsError) {
    auto m = MockBackend(MockScript::from_json(
        json::parse(R"({"supports_logprobs":false,"rules":[{"responses":[{"text":"maybe"}]}]})")));
    auto s = small_split();
    auto c = make_training_context(s, {"u", "t"});
    EXPECT_THROW(predict_rating(m, c.history, empty_summaries(s.train), c.averages, std::nullopt, "t"), Error);
}

TEST(Predict, OffFormatFirstTokenFlagged) {
    auto m = MockBackend(MockScript::from_json(
        json::parse(R"({"rules":[{"responses":[{"text":"The","alternatives":{"The":-0.1,"4":-2.0}}]}]})")));
    auto s = small_split();
    auto c = make_training_context(s, {"u", "t"});
    auto p = predict_rating(m, c.history, empty_summaries(s.train), c.averages, std::nullopt, "t");
    EXPECT_TRUE(p.off_format);
    EXPECT_EQ(p.path, DecodePath::logits);
}

TEST(PredictorSft, RecordsAndExclusions) {
    auto dir = oracle::temp_dir("predictor_sft");
    RenderedPrompt p;
    p.family = PromptFamily::predictor;
    p.messages = {{Role::user, "prompt"}};
    std::vector<PairKey> pairs{{"u", "a"}, {"u", "b"}};
    auto stats = export_predictor_sft(dir / "p.jsonl", pairs, {{{"u", "a"}, p}}, {{{"u", "a"}, 4}, {{"u", "b"}, 2}},
                                      {{"u", "b"}});
    EXPECT_EQ(stats.records, 1u);
    EXPECT_EQ(stats.excluded, 1u);
    auto recs = read_sft(dir / "p.jsonl");
    ASSERT_EQ(recs.size(), 1u);
    EXPECT_EQ(recs[0].messages.back().content, "Predicted Rating: 4");
}
