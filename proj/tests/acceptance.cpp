// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <regex>
#include <sstream>

#include "deliberec/evaluator.hpp"
#include "deliberec/mf.hpp"
#include "deliberec/mock_backend.hpp"
#include "deliberec/pipeline.hpp"
#include "deliberec/reasoner.hpp"
#include "deliberec/reward.hpp"
#include "oracles.hpp"

using namespace deliberec;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void check(bool ok, const std::string& what) {
        if (!ok && pass) detail << "first failure: " << what << "; ";
        pass = pass && ok;
    }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

bool close(double a, double b, double tol) { return std::fabs(a - b) <= tol; }

// ---------------------------------------------------------------------------

void decoding(Outcome& o) {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> d(-20.0, 5.0);
    double worst = 0;
    for (int n = 0; n < 10000; ++n) {
        std::array<double, 5> l{};
        std::map<std::string, double> m;
        for (int k = 0; k < 5; ++k) {
            l[k] = d(rng);
            m[std::to_string(k + 1)] = l[k];
        }
        worst = std::max(worst, std::fabs(logit_weighted_decode(m).expected - oracle::softmax_expectation(l)));
    }
    o.check(worst <= 1e-12, "max deviation from oracle");
    const double e = logit_weighted_decode({{"1", 0}, {"2", 0}, {"3", 0}, {"4", 0}, {"5", std::log(4.0)}}).expected;
    o.check(close(e, 3.75, 1e-12), "(0,0,0,0,ln 4) -> 3.75");
    const double secs = seconds_since(t0);
    o.check(secs < 1.0, "runtime < 1 s");
    o.detail << "max |err| " << worst << ", example " << e << ", " << secs << " s";
}

void filter_traces(Outcome& o) {
    const auto t0 = Clock::now();
    HistoryPair h;
    h.target_user = "u";
    h.target_item = "t";
    const auto prompt = render_reasoner_prompt(h, {}, "Target", "Music");
    const auto script = MockScript::from_json(json::parse(R"({"rules":[{"responses":[{"text":"a reason"}],"repeat":true}]})"));
    std::size_t cases = 0;
    for (int len = 1; len <= 6; ++len) {
        for (int mask = 0; mask < (1 << len); ++mask) {
            std::vector<int> scores;
            for (int b = 0; b < len; ++b) scores.push_back((mask >> b) & 1);
            const auto expect = oracle::simulate_filter(scores, len);
            MockBackend teacher(script);
            std::size_t next = 0;
            FilterOptions opts;
            opts.max_iterations = len;
            auto out = generation_then_filter(
                teacher,
                [&](const std::string&) {
                    const int s = scores.at(next++);
                    return make_judgment(4, s == 1 ? 4.0 : 2.0, 4.0, 0.1);
                },
                prompt, 4, opts);
            const auto trace = teacher.trace();
            std::vector<bool> hinted;
            for (const auto& c : trace) hinted.push_back(c.hinted);
            const auto accepted = out.accepted ? std::optional<int>(out.accepted->iteration) : std::nullopt;
            o.check(static_cast<int>(out.generation_calls()) == expect.calls && trace.size() == out.generation_calls(),
                    "call count");
            o.check(hinted == expect.hinted, "hint placement");
            o.check(accepted == expect.accepted, "accepted iteration");
            ++cases;
        }
    }
    const double secs = seconds_since(t0);
    o.check(secs < 1.0, "runtime < 1 s");
    o.detail << cases << " sequences, " << secs << " s";
}

void reward_formula(Outcome& o) {
    std::mt19937_64 rng(202);
    std::uniform_int_distribution<int> truth(1, 5);
    std::uniform_real_distribution<double> pred(1.0, 5.0), tau(0.0, 1.0);
    double worst = 0;
    for (int n = 0; n < 1000; ++n) {
        const int t = truth(rng);
        const double a = pred(rng), b = pred(rng);
        const double s = evaluation_score(t, a, b);
        worst = std::max(worst, std::fabs(s - (std::fabs(t - a) - std::fabs(t - b))));
        o.check(close(evaluation_score(t, b, a), -s, 1e-12), "antisymmetry under swap");
        double t1 = tau(rng), t2 = tau(rng);
        if (t1 > t2) std::swap(t1, t2);
        o.check(make_judgment(t, a, b, t1).score <= make_judgment(t, a, b, t2).score, "monotone in tau");
        o.check(make_judgment(t, a, b, t1).score == (s < t1 ? 1 : 0), "strict threshold");
    }
    o.check(worst <= 1e-12, "s_eval formula");
    o.detail << "1000 triples, max |err| " << worst;
}

void kcore(Outcome& o) {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(303);
    std::size_t nonempty = 0;
    for (int g = 0; g < 500; ++g) {
        const auto xs = oracle::random_graph(rng, 200, 12, 12);
        const auto got = kcore_filter(Corpus(xs), 5);
        const auto want = oracle::naive_kcore(xs, 5);
        o.check(oracle::keys(got.interactions()) == oracle::keys(want), "matches naive fixpoint");
        o.check(oracle::keys(kcore_filter(got, 5).interactions()) == oracle::keys(got.interactions()), "idempotent");
        if (!want.empty()) ++nonempty;
    }
    const double secs = seconds_since(t0);
    o.check(secs < 5.0, "runtime < 5 s");
    o.detail << "500 graphs (" << nonempty << " with a non-empty core), " << secs << " s";
}

void split_safety(Outcome& o) {
    std::mt19937_64 rng(404);
    int done = 0;
    while (done < 100) {
        const auto xs = oracle::random_graph(rng, 300, 15, 15);
        if (xs.size() < 20) continue;
        const auto res = temporal_split(Corpus(xs), 0.1, 0.1);
        std::int64_t max_train = std::numeric_limits<std::int64_t>::min();
        std::set<std::string> users, items;
        for (const auto& x : res.split.train.interactions()) {
            max_train = std::max(max_train, x.timestamp);
            users.insert(x.user_id);
            items.insert(x.item_id);
        }
        for (const auto* part : {&res.split.valid, &res.split.test})
            for (const auto& x : part->interactions()) {
                o.check(x.timestamp >= max_train, "no held-out timestamp precedes train");
                o.check(users.contains(x.user_id) && items.contains(x.item_id), "no cold start remains");
            }
        ++done;
    }
    o.detail << done << " corpora";
}

void metrics(Outcome& o) {
    std::mt19937_64 rng(505);
    std::uniform_int_distribution<std::size_t> len(1, 200);
    std::uniform_real_distribution<double> v(1.0, 5.0);
    double worst = 0;
    for (int n = 0; n < 1000; ++n) {
        std::vector<std::pair<double, double>> tp(len(rng));
        for (auto& [t, p] : tp) t = v(rng), p = v(rng);
        const auto got = accuracy_metrics(tp);
        const auto [mae, rmse] = oracle::mae_rmse(tp);
        worst = std::max({worst, std::fabs(got.mae - mae), std::fabs(got.rmse - rmse)});
        o.check(got.rmse >= got.mae, "rmse >= mae");
    }
    o.check(worst <= 1e-12, "matches oracle");
    const std::vector<std::pair<double, double>> ex{{4, 3.5}, {5, 4.0}};
    const auto m = accuracy_metrics(ex);
    o.check(close(m.mae, 0.75, 1e-12) && close(m.rmse, 0.790569, 1e-6), "worked example");
    o.detail << "max |err| " << worst << ", example MAE " << m.mae << " RMSE " << m.rmse;
}

void mf_quality(Outcome& o) {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(606);
    std::normal_distribution<double> factor(0, 0.8), noise(0, 0.1);
    std::uniform_real_distribution<double> u01(0, 1);
    std::vector<std::array<double, 2>> P(500), Q(300);
    for (auto& p : P) p = {factor(rng), factor(rng)};
    for (auto& q : Q) q = {factor(rng), factor(rng)};
    std::vector<mf::Observation> train, held;
    for (int u = 0; u < 500; ++u)
        for (int i = 0; i < 300; ++i) {
            if (u01(rng) >= 0.05) continue;
            const double r = std::clamp(3 + P[u][0] * Q[i][0] + P[u][1] * Q[i][1] + noise(rng), 1.0, 5.0);
            (u01(rng) < 0.1 ? held : train).push_back({"u" + std::to_string(u), "i" + std::to_string(i), r});
        }
    mf::Hyperparams hp;
    hp.dims = 2;
    hp.learning_rate = 0.02;
    hp.l2 = 0.02;
    hp.epochs = 300;
    hp.seed = 7;
    const auto model = mf::fit(train, hp);
    const double rmse = mf::rmse_on(model, held);
    o.check(rmse <= 0.25, "held-out RMSE <= 0.25");

    double worst = 0;
    std::uniform_real_distribution<double> param(-1.0, 1.0);
    for (int n = 0; n < 50; ++n) {
        mf::Model m;
        m.global_mean = 3.5;
        m.hyperparams.l2 = 0.05;
        m.user_bias = {param(rng)};
        m.item_bias = {param(rng)};
        m.user_factors = {std::vector<double>(4)};
        m.item_factors = {std::vector<double>(4)};
        for (auto& x : m.user_factors[0]) x = param(rng);
        for (auto& x : m.item_factors[0]) x = param(rng);
        const double r = 1 + n % 5;
        const auto g = mf::interaction_gradient(m, 0, 0, r);
        auto rel = [&](double& p, double analytic) {
            const double h = 1e-5, saved = p;
            p = saved + h;
            const double up = mf::interaction_loss(m, 0, 0, r);
            p = saved - h;
            const double down = mf::interaction_loss(m, 0, 0, r);
            p = saved;
            worst = std::max(worst, std::fabs((up - down) / (2 * h) - analytic) / std::max(1.0, std::fabs(analytic)));
        };
        rel(m.user_bias[0], g.user_bias);
        rel(m.item_bias[0], g.item_bias);
        for (std::size_t k = 0; k < 4; ++k) {
            rel(m.user_factors[0][k], g.user_factors[k]);
            rel(m.item_factors[0][k], g.item_factors[k]);
        }
    }
    o.check(worst <= 1e-4, "gradient matches central differences");
    const double secs = seconds_since(t0);
    o.check(secs < 60.0, "runtime < 60 s");
    o.detail << train.size() << " train / " << held.size() << " held-out, RMSE " << rmse << ", grad rel err "
             << worst << ", " << secs << " s";
}

// ---------------------------------------------------------------------------

const fs::path kConfig = FIXTURE_DIR "/config.json";

Pipeline fixture_pipeline(const fs::path& out) { return Pipeline(PipelineConfig::load(kConfig, {"output_dir=" + out.string()})); }

void end_to_end(Outcome& o) {
    const auto t0 = Clock::now();
    std::vector<fs::path> dirs{oracle::temp_dir("acc_e2e_a"), oracle::temp_dir("acc_e2e_b")};
    for (const auto& d : dirs) {
        auto p = fixture_pipeline(d);
        p.prepare();
        p.summarize();
        p.gen_reasons(GenerationMode::filtered);
        p.export_sft();
        p.predict(PredictVariant::full);
        p.evaluate({});
    }
    for (const auto* rel : {"predict/predictions_full.jsonl", "eval/report.json", "eval/report.txt"})
        o.check(read_file(dirs[0] / rel) == read_file(dirs[1] / rel), std::string(rel) + " byte-identical");
    std::size_t records = 0;
    for (const auto* name : {"summarizer", "reasoner", "predictor", "reward"})
        for (const auto& r : read_sft(dirs[0] / "sft" / (std::string(name) + ".jsonl"))) {
            ++records;
            for (const auto& m : r.messages)
                o.check(m.content.find(templates::hint_marker) == std::string::npos, std::string(name) + " SFT hint-free");
        }
    o.check(records > 0, "SFT records exported");
    const double secs = seconds_since(t0);
    o.check(secs < 30.0, "runtime < 30 s");
    o.detail << "two runs, " << read_predictions(dirs[0] / "predict/predictions_full.jsonl").size() << " predictions, "
             << records << " SFT records, " << secs << " s";
}

void leakage(Outcome& o) {
    const auto dir = oracle::temp_dir("acc_leak");
    HistoryPair h;
    h.target_user = "u";
    h.target_item = "t";
    const auto prompt = render_reasoner_prompt(h, {}, "Target", "Music");
    Reason r;
    r.text = "fits";
    try {
        export_reasoner_sft(dir / "reasoner.jsonl", {{{"u", "t"}, r}}, {{{"u", "t"}, append_hint(prompt, 4)}});
        o.check(false, "hinted reasoner prompt rejected");
    } catch (const Error& e) {
        o.check(e.kind() == ErrorKind::leakage, "hinted reasoner prompt rejected as leakage");
    }
    try {
        export_reward_sft(dir / "reward.jsonl", {{"u", "t"}}, {{"u", "t"}}, {}, {});
        o.check(false, "reward overlap rejected");
    } catch (const Error& e) {
        o.check(e.kind() == ErrorKind::leakage, "reward overlap rejected as leakage");
    }

    // Test targets carry unique sentinels; none may reach a test-time prompt.
    const auto run = oracle::temp_dir("acc_leak_run");
    {
        auto p = fixture_pipeline(run);
        p.prepare();
        p.summarize();
    }
    auto p = fixture_pipeline(run);
    for (auto v : {PredictVariant::full, PredictVariant::no_reason, PredictVariant::one_step, PredictVariant::cot})
        p.predict(v);
    const std::regex sentinel("SENTINEL_\\w+");
    std::vector<std::string> targets;
    const auto test = load_corpus(run / "prepare/test.jsonl");
    for (const auto& x : test.interactions()) {
        std::smatch m;
        if (std::regex_search(x.review_text, m, sentinel)) targets.push_back(m.str());
    }
    o.check(!targets.empty() && targets.size() == test.size(), "every fixture test target carries a sentinel");
    std::size_t prompts = 0;
    for (const auto& role : backend_roles())
        for (const auto& pr : p.traced_prompts(role)) {
            ++prompts;
            const auto text = pr.text();
            for (const auto& s : targets) o.check(text.find(s) == std::string::npos, "sentinel " + s + " absent");
        }
    o.check(prompts > 0, "test-time prompts traced");
    o.detail << targets.size() << " sentinels checked against " << prompts << " test-time prompts";
}

void context_numbers(Outcome& o) {
    std::cout << "  context targets at full scale with fine-tuned backends:\n"
              << "    Music MAE 0.5442 / RMSE 0.7722\n"
              << "    tau presets music 0.1, book 0.2, yelp 0.04\n"
              << "    cost per prediction 5.86 s / 147.78 generated tokens\n";
    o.check(tau_presets::lookup("music") == 0.1 && tau_presets::lookup("book") == 0.2 &&
                tau_presets::lookup("yelp") == 0.04,
            "tau presets");
    for (const auto& [preset, tau] : std::vector<std::pair<std::string, double>>{{"music", 0.1}, {"book", 0.2}, {"yelp", 0.04}}) {
        auto c = PipelineConfig::load(kConfig, {"output_dir=/tmp/unused", "preset=" + std::string(PRESET_DIR) + "/" + preset + ".json"});
        o.check(c.tau == tau, preset + " preset reaches config tau");
    }

    const auto run = oracle::temp_dir("acc_cost");
    auto p = fixture_pipeline(run);
    p.prepare();
    p.summarize();
    p.predict(PredictVariant::full);
    p.evaluate({});
    const auto report = read_json(run / "eval/report.json");
    o.check(report.at("tau").get<double>() == 0.1, "report carries tau");
    const auto& cost = report.at("reports").at(0).at("cost");
    const double latency = cost.at("avg_latency_s").get<double>();
    const double tokens = cost.at("avg_generated_tokens").get<double>();
    o.check(latency > 0 && tokens > 0 && !cost.at("empty").get<bool>(), "cost accounting populated");

    double sum_latency = 0, sum_tokens = 0;
    const auto preds = read_predictions(p.predictions_path(PredictVariant::full));
    for (const auto& r : preds) {
        sum_latency += r.cost.latency_seconds;
        sum_tokens += static_cast<double>(r.cost.generated_tokens);
    }
    o.check(close(latency, sum_latency / preds.size(), 1e-9) && close(tokens, sum_tokens / preds.size(), 1e-9),
            "report averages per-prediction cost");
    o.detail << "fixture run: " << latency << " s / " << tokens << " tokens per prediction (mock backend)";
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
        {"decoding oracle", decoding},
        {"generation-then-filter traces", filter_traces},
        {"reward formula", reward_formula},
        {"5-core oracle", kcore},
        {"split safety", split_safety},
        {"metrics oracle", metrics},
        {"MF quality", mf_quality},
        {"end-to-end determinism", end_to_end},
        {"leakage guards", leakage},
        {"context numbers and wiring", context_numbers},
    };
    int failed = 0;
    for (std::size_t n = 0; n < criteria.size(); ++n) {
        Outcome o;
        try {
            criteria[n].second(o);
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << "exception: " << e.what();
        }
        if (!o.pass) ++failed;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << (n + 1) << ". " << criteria[n].first << ": " << o.detail.str()
                  << std::endl;
    }
    std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
