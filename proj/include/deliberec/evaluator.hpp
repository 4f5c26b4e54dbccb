#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "deliberec/backend.hpp"
#include "deliberec/error.hpp"
#include "deliberec/io.hpp"
#include "deliberec/predictor.hpp"
#include "deliberec/prompts.hpp"

namespace deliberec {

/// One line of a predictions file. Written by the predictor stage and the
/// MF baseline alike.
struct PredictionRecord {
    std::string user_id;
    std::string item_id;
    int truth = 0;
    double prediction = 0;
    std::string method;
    std::string decode_path;  ///< "logits", "text" or "mf"
    bool off_format = false;
    std::optional<std::string> reason;
    CallCost cost;

    [[nodiscard]] PairKey key() const { return {user_id, item_id}; }

    [[nodiscard]] json to_json() const {
        json j{{"user_id", user_id},         {"item_id", item_id}, {"truth", truth},
               {"prediction", prediction},   {"method", method},   {"decode_path", decode_path},
               {"off_format", off_format},   {"cost", cost.to_json()}};
        j["reason"] = reason ? json(*reason) : json(nullptr);
        return j;
    }

    static PredictionRecord from_json(const json& j) {
        PredictionRecord r;
        r.user_id = j.at("user_id").get<std::string>();
        r.item_id = j.at("item_id").get<std::string>();
        r.truth = j.at("truth").get<int>();
        r.prediction = j.at("prediction").get<double>();
        r.method = j.value("method", std::string{});
        r.decode_path = j.value("decode_path", std::string{});
        r.off_format = j.value("off_format", false);
        if (j.contains("reason") && !j.at("reason").is_null()) r.reason = j.at("reason").get<std::string>();
        if (j.contains("cost")) r.cost = CallCost::from_json(j.at("cost"));
        return r;
    }
};

inline std::vector<PredictionRecord> read_predictions(const fs::path& path) {
    std::vector<PredictionRecord> out;
    for (const auto& j : read_jsonl(path)) out.push_back(PredictionRecord::from_json(j));
    return out;
}

inline void write_predictions(const fs::path& path, const std::vector<PredictionRecord>& preds) {
    std::vector<json> lines;
    lines.reserve(preds.size());
    for (const auto& p : preds) lines.push_back(p.to_json());
    write_jsonl_atomic(path, lines);
}

struct AccuracyMetrics {
    double mae = 0;
    double rmse = 0;
};

/// MAE and RMSE over (truth, prediction) pairs.
inline AccuracyMetrics accuracy_metrics(std::span<const std::pair<double, double>> predictions) {
    require(!predictions.empty(), "accuracy metrics need at least one prediction");
    double abs_sum = 0, sq_sum = 0;
    for (const auto& [truth, pred] : predictions) {
        const double e = truth - pred;
        abs_sum += std::abs(e);
        sq_sum += e * e;
    }
    const auto n = static_cast<double>(predictions.size());
    return {abs_sum / n, std::sqrt(sq_sum / n)};
}

// ---------------------------------------------------------------------------
// Judge

struct JudgeScore {
    int score = 0;
    bool clamped = false;
    int attempts = 0;
    CallCost cost;
};

inline std::optional<long> first_integer(std::string_view s) {
    for (std::size_t i = 0; i < s.size(); ++i) {
        const bool neg = s[i] == '-' && i + 1 < s.size() && std::isdigit(static_cast<unsigned char>(s[i + 1]));
        if (!neg && !std::isdigit(static_cast<unsigned char>(s[i]))) continue;
        std::size_t j = neg ? i + 1 : i;
        long v = 0;
        while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j])) && v < 1'000'000) v = v * 10 + (s[j++] - '0');
        return neg ? -v : v;
    }
    return std::nullopt;
}

/// Asks the judge model for a 0-100 alignment score between a generated
/// reason and the review it should reflect. Out-of-range replies are clamped;
/// a reply without a number is re-asked once.
inline JudgeScore judge_alignment(Backend& judge, const std::string& reason_text, const std::string& review_text,
                                  const PairKey& pair = {}) {
    CompletionRequest req;
    req.prompt = render_judge_prompt(reason_text, review_text, pair);
    req.temperature = 0.0;
    req.max_tokens = 8;
    JudgeScore out;
    for (int attempt = 1; attempt <= 2; ++attempt) {
        auto resp = judge.complete(req);
        out.cost += resp.cost();
        out.attempts = attempt;
        if (auto v = first_integer(resp.text)) {
            out.clamped = *v < 0 || *v > 100;
            out.score = static_cast<int>(std::clamp<long>(*v, 0, 100));
            return out;
        }
    }
    fail(ErrorKind::parse, "judge reply for " + to_string(pair) + " has no score after re-ask");
}

/// Externally computed per-pair scores (e.g. a neural text metric), one
/// {"user_id", "item_id", "score"} object per line.
inline std::map<PairKey, double> read_external_scores(const fs::path& path) {
    std::map<PairKey, double> out;
    for (const auto& j : read_jsonl(path))
        out[{j.at("user_id").get<std::string>(), j.at("item_id").get<std::string>()}] = j.at("score").get<double>();
    return out;
}

// ---------------------------------------------------------------------------
// Report

struct PairError {
    PairKey pair;
    int truth = 0;
    double prediction = 0;
    double error = 0;  ///< prediction - truth

    bool operator==(const PairError&) const = default;
};

struct QualityScores {
    std::string source;  ///< "judge:<model>" or "external"
    double mean = 0;
    std::map<PairKey, double> per_pair;

    bool operator==(const QualityScores&) const = default;
};

struct EvalReport {
    std::string method;
    std::size_t count = 0;
    double mae = 0;
    double rmse = 0;
    std::vector<PairError> per_pair;
    std::optional<QualityScores> quality;
    CostReport cost;
    std::map<std::string, std::size_t> decode_paths;
    std::size_t off_format = 0;

    [[nodiscard]] json to_json() const {
        json pp = json::array();
        for (const auto& e : per_pair)
            pp.push_back({{"user_id", e.pair.first}, {"item_id", e.pair.second}, {"truth", e.truth},
                          {"prediction", e.prediction}, {"error", e.error}});
        json j{{"method", method}, {"count", count},         {"mae", mae},
               {"rmse", rmse},     {"per_pair", pp},         {"cost", cost.to_json()},
               {"decode_paths", decode_paths}, {"off_format", off_format}};
        if (quality) {
            json scores = json::array();
            for (const auto& [k, v] : quality->per_pair)
                scores.push_back({{"user_id", k.first}, {"item_id", k.second}, {"score", v}});
            j["quality"] = {{"source", quality->source}, {"mean", quality->mean}, {"per_pair", scores}};
        } else {
            j["quality"] = nullptr;
        }
        return j;
    }

    static EvalReport from_json(const json& j) {
        EvalReport r;
        r.method = j.at("method").get<std::string>();
        r.count = j.at("count").get<std::size_t>();
        r.mae = j.at("mae").get<double>();
        r.rmse = j.at("rmse").get<double>();
        for (const auto& e : j.at("per_pair"))
            r.per_pair.push_back({{e.at("user_id").get<std::string>(), e.at("item_id").get<std::string>()},
                                  e.at("truth").get<int>(), e.at("prediction").get<double>(),
                                  e.at("error").get<double>()});
        const auto& c = j.at("cost");
        r.cost = {c.at("avg_latency_s").get<double>(), c.at("avg_generated_tokens").get<double>(),
                  c.at("count").get<std::size_t>(), c.at("empty").get<bool>()};
        r.decode_paths = j.value("decode_paths", std::map<std::string, std::size_t>{});
        r.off_format = j.value("off_format", std::size_t{0});
        if (j.contains("quality") && !j.at("quality").is_null()) {
            QualityScores q;
            q.source = j.at("quality").at("source").get<std::string>();
            q.mean = j.at("quality").at("mean").get<double>();
            for (const auto& s : j.at("quality").at("per_pair"))
                q.per_pair[{s.at("user_id").get<std::string>(), s.at("item_id").get<std::string>()}] =
                    s.at("score").get<double>();
            r.quality = std::move(q);
        }
        return r;
    }
};

inline EvalReport build_report(const std::vector<PredictionRecord>& predictions,
                               std::optional<QualityScores> quality = std::nullopt) {
    require(!predictions.empty(), "cannot build a report from zero predictions");
    EvalReport r;
    r.method = predictions.front().method;
    r.count = predictions.size();
    std::vector<std::pair<double, double>> tp;
    std::vector<CallCost> costs;
    for (const auto& p : predictions) {
        tp.emplace_back(p.truth, p.prediction);
        r.per_pair.push_back({p.key(), p.truth, p.prediction, p.prediction - p.truth});
        costs.push_back(p.cost);
        ++r.decode_paths[p.decode_path];
        if (p.off_format) ++r.off_format;
    }
    const auto m = accuracy_metrics(tp);
    r.mae = m.mae;
    r.rmse = m.rmse;
    r.cost = cost_report(std::span<const CallCost>(costs));
    if (quality) {
        double s = 0;
        for (const auto& [_, v] : quality->per_pair) s += v;
        quality->mean = quality->per_pair.empty() ? 0.0 : s / static_cast<double>(quality->per_pair.size());
        r.quality = std::move(quality);
    }
    return r;
}

/// Plain-text comparison table, one row per report.
inline std::string format_report_table(const std::vector<EvalReport>& reports) {
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-24s %8s %8s %8s %10s %12s %9s\n", "method", "count", "MAE", "RMSE", "avg_lat_s",
                  "avg_gen_tok", "quality");
    out += buf;
    out += std::string(85, '-') + "\n";
    for (const auto& r : reports) {
        std::string q = r.quality ? format_one_decimal(r.quality->mean) : "-";
        std::snprintf(buf, sizeof buf, "%-24s %8zu %8.4f %8.4f %10.3f %12.2f %9s\n", r.method.c_str(), r.count, r.mae,
                      r.rmse, r.cost.avg_latency_seconds, r.cost.avg_generated_tokens, q.c_str());
        out += buf;
    }
    return out;
}

} // namespace deliberec
