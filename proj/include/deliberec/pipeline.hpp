#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "deliberec/backend.hpp"
#include "deliberec/corpus.hpp"
#include "deliberec/error.hpp"
#include "deliberec/evaluator.hpp"
#include "deliberec/http_backend.hpp"
#include "deliberec/io.hpp"
#include "deliberec/mf.hpp"
#include "deliberec/mock_backend.hpp"
#include "deliberec/parallel.hpp"
#include "deliberec/predictor.hpp"
#include "deliberec/prompts.hpp"
#include "deliberec/reasoner.hpp"
#include "deliberec/reward.hpp"
#include "deliberec/summarizer.hpp"

namespace deliberec {

inline constexpr std::string_view kToolVersion = "0.3.0";

/// Backend roles a config may name. "summarizer" falls back to "teacher".
inline const std::vector<std::string>& backend_roles() {
    static const std::vector<std::string> r{"summarizer", "teacher", "reasoner", "predictor", "reward", "judge"};
    return r;
}

struct BackendSpec {
    std::string type = "mock";  ///< "mock" or "http"
    fs::path script;            ///< mock only
    json http;                  ///< http only: HttpBackendConfig fields
    std::optional<double> temperature;
    std::optional<int> max_tokens;
};

/// Flat JSON run configuration. Relative paths resolve against the config
/// file's directory.
struct PipelineConfig {
    json raw;  ///< the effective document, used for hashing
    fs::path dataset;
    FieldMapping mapping;
    std::string dataset_name;  ///< picks a tau preset when "tau" is absent
    std::string domain_noun = "Music";
    std::size_t kcore = 5;
    double valid_fraction = 0.1;
    double test_fraction = 0.1;
    std::size_t max_history = kDefaultMaxHistory;
    double tau = tau_presets::music;
    int max_iterations = 5;
    int initial_unhinted = 1;
    std::size_t n_instruct = 0;
    std::size_t n_reward = 0;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    std::optional<std::size_t> test_limit;
    bool trace = false;
    fs::path output_dir;
    std::map<std::string, BackendSpec> backends;
    mf::Hyperparams mf;

    [[nodiscard]] std::string hash() const { return hex64(fnv1a64(raw.dump())); }

    /// Applies "key=value" overrides on the flat document. Values parse as
    /// JSON when possible, otherwise as strings; dotted keys reach nested objects.
    static void apply_override(json& doc, const std::string& assignment) {
        auto eq = assignment.find('=');
        require(eq != std::string::npos && eq > 0, "override must look like key=value: " + assignment);
        const auto key = assignment.substr(0, eq);
        const auto value = assignment.substr(eq + 1);
        json v = json::parse(value, nullptr, false);
        if (v.is_discarded()) v = value;
        json* node = &doc;
        std::size_t start = 0;
        for (auto dot = key.find('.'); dot != std::string::npos; dot = key.find('.', start)) {
            node = &(*node)[key.substr(start, dot - start)];
            start = dot + 1;
        }
        (*node)[key.substr(start)] = v;
    }

    /// Parses and validates; every problem is collected before failing.
    static PipelineConfig from_json(const json& doc, const fs::path& base_dir) {
        PipelineConfig c;
        c.raw = doc;
        std::vector<std::string> errors;
        auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base_dir / p; };
        auto field = [&](const char* name, auto& dst) {
            if (!doc.contains(name)) return;
            try {
                doc.at(name).get_to(dst);
            } catch (const json::exception&) {
                errors.push_back(std::string(name) + ": wrong type");
            }
        };
        if (!doc.is_object()) fail(ErrorKind::validation, "config must be a JSON object");

        if (doc.contains("dataset") && doc.at("dataset").is_string()) {
            c.dataset = resolve(doc.at("dataset").get<std::string>());
            if (!fs::exists(c.dataset)) errors.push_back("dataset: file not found: " + c.dataset.string());
        } else {
            errors.push_back("dataset: required path");
        }
        if (doc.contains("field_mapping")) {
            try {
                c.mapping = FieldMapping::from_json(doc.at("field_mapping"));
            } catch (const Error& e) {
                errors.push_back(std::string("field_mapping: ") + e.what());
            }
        }
        field("dataset_name", c.dataset_name);
        field("domain_noun", c.domain_noun);
        field("kcore", c.kcore);
        field("valid_fraction", c.valid_fraction);
        field("test_fraction", c.test_fraction);
        field("max_history", c.max_history);
        field("max_iterations", c.max_iterations);
        field("initial_unhinted", c.initial_unhinted);
        field("n_instruct", c.n_instruct);
        field("n_reward", c.n_reward);
        field("seed", c.seed);
        field("workers", c.workers);
        field("trace", c.trace);
        if (doc.contains("test_limit") && !doc.at("test_limit").is_null()) {
            std::size_t n = 0;
            field("test_limit", n);
            c.test_limit = n;
        }
        if (auto preset = tau_presets::lookup(c.dataset_name)) c.tau = *preset;
        field("tau", c.tau);
        if (doc.contains("output_dir") && doc.at("output_dir").is_string())
            c.output_dir = resolve(doc.at("output_dir").get<std::string>());
        else
            errors.push_back("output_dir: required path");
        if (doc.contains("mf")) c.mf = mf::Hyperparams::from_json(doc.at("mf"));
        if (!doc.contains("mf") || !doc.at("mf").contains("seed")) c.mf.seed = c.seed;

        if (c.kcore < 1) errors.push_back("kcore: must be >= 1");
        if (!(c.valid_fraction > 0) || !(c.test_fraction > 0) || c.valid_fraction + c.test_fraction >= 1)
            errors.push_back("valid_fraction/test_fraction: must be positive and sum to less than 1");
        if (c.max_history < 1) errors.push_back("max_history: must be >= 1");
        if (!std::isfinite(c.tau)) errors.push_back("tau: must be finite");
        if (c.max_iterations < 1) errors.push_back("max_iterations: T must be >= 1");
        if (c.initial_unhinted < 1) errors.push_back("initial_unhinted: must be >= 1");
        if (c.workers < 1) errors.push_back("workers: must be >= 1");

        if (doc.contains("backends")) {
            for (const auto& [role, spec] : doc.at("backends").items()) {
                if (std::find(backend_roles().begin(), backend_roles().end(), role) == backend_roles().end()) {
                    errors.push_back("backends." + role + ": unknown role");
                    continue;
                }
                BackendSpec b;
                b.type = spec.value("type", std::string("mock"));
                if (spec.contains("temperature")) b.temperature = spec.at("temperature").get<double>();
                if (spec.contains("max_tokens")) b.max_tokens = spec.at("max_tokens").get<int>();
                if (b.type == "mock") {
                    if (!spec.contains("script")) {
                        errors.push_back("backends." + role + ".script: required for mock backends");
                    } else {
                        b.script = resolve(spec.at("script").get<std::string>());
                        if (!fs::exists(b.script))
                            errors.push_back("backends." + role + ".script: file not found: " + b.script.string());
                    }
                } else if (b.type == "http") {
                    if (!spec.contains("base_url") || !spec.contains("model"))
                        errors.push_back("backends." + role + ": http backends need base_url and model");
                    b.http = spec;
                } else {
                    errors.push_back("backends." + role + ".type: must be mock or http");
                }
                c.backends[role] = std::move(b);
            }
        }
        if (!errors.empty()) {
            std::string msg = "invalid config:";
            for (const auto& e : errors) msg += "\n  " + e;
            fail(ErrorKind::validation, msg);
        }
        return c;
    }

    static PipelineConfig load(const fs::path& path, const std::vector<std::string>& overrides = {}) {
        json doc = read_json(path);
        for (const auto& o : overrides) apply_override(doc, o);
        const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
        // A "preset" file supplies defaults; keys in the config itself win.
        if (doc.contains("preset") && doc.at("preset").is_string()) {
            fs::path preset = doc.at("preset").get<std::string>();
            if (preset.is_relative()) preset = base / preset;
            if (!fs::exists(preset)) fail(ErrorKind::validation, "invalid config:\n  preset: file not found: " + preset.string());
            json merged = read_json(preset);
            for (const auto& [k, v] : doc.items()) merged[k] = v;
            doc = std::move(merged);
        }
        return from_json(doc, base);
    }
};

/// Records every prompt that passes through, for leakage audits.
class TracingBackend final : public Backend {
public:
    explicit TracingBackend(std::shared_ptr<Backend> inner) : inner_(std::move(inner)) {}

    [[nodiscard]] bool supports_logprobs() const override { return inner_->supports_logprobs(); }
    [[nodiscard]] std::string model_tag() const override { return inner_->model_tag(); }

    [[nodiscard]] std::vector<RenderedPrompt> prompts() const {
        std::lock_guard lock(mu_);
        return prompts_;
    }

private:
    CompletionResponse do_complete(const CompletionRequest& request) override {
        {
            std::lock_guard lock(mu_);
            prompts_.push_back(request.prompt);
        }
        return inner_->complete(request);
    }

    std::shared_ptr<Backend> inner_;
    mutable std::mutex mu_;
    std::vector<RenderedPrompt> prompts_;
};

enum class PredictVariant { full, no_reason, one_step, cot };

inline PredictVariant predict_variant_from_string(std::string_view s) {
    if (s == "full" || s == "none" || s.empty()) return PredictVariant::full;
    if (s == "no-reason" || s == "no_reason") return PredictVariant::no_reason;
    if (s == "one-step" || s == "one_step") return PredictVariant::one_step;
    if (s == "cot") return PredictVariant::cot;
    fail(ErrorKind::validation, "unknown ablation '" + std::string(s) + "' (one-step, cot, no-reason)");
}

inline std::string_view to_string(PredictVariant v) {
    switch (v) {
    case PredictVariant::full: return "full";
    case PredictVariant::no_reason: return "no-reason";
    case PredictVariant::one_step: return "one-step";
    case PredictVariant::cot: return "cot";
    }
    return "full";
}

/// Filter mode runs generation-then-filter; the others are unfiltered variants.
enum class GenerationMode { filtered, review_guided, review_inferred, hint_inferred, history_inferred };

inline GenerationMode generation_mode_from_string(std::string_view s) {
    if (s == "filtered" || s == "filter" || s.empty()) return GenerationMode::filtered;
    if (s == "review-guided" || s == "review_guided") return GenerationMode::review_guided;
    if (s == "review-inferred" || s == "review_inferred") return GenerationMode::review_inferred;
    if (s == "hint-inferred" || s == "hint_inferred") return GenerationMode::hint_inferred;
    if (s == "history-inferred" || s == "history_inferred") return GenerationMode::history_inferred;
    fail(ErrorKind::validation, "unknown generation mode '" + std::string(s) + "'");
}

inline std::string_view to_string(GenerationMode m) {
    switch (m) {
    case GenerationMode::filtered: return "filtered";
    case GenerationMode::review_guided: return "review-guided";
    case GenerationMode::review_inferred: return "review-inferred";
    case GenerationMode::hint_inferred: return "hint-inferred";
    case GenerationMode::history_inferred: return "history-inferred";
    }
    return "filtered";
}

struct EvaluateOptions {
    std::vector<fs::path> predictions;  ///< empty: every predict/predictions_*.jsonl
    bool judge = false;                 ///< score reasons with the judge backend
    std::optional<fs::path> external_scores;
};

/// Runs workflow stages against a config. Every stage reads and writes files
/// under output_dir and leaves a manifest next to its outputs.
class Pipeline {
public:
    explicit Pipeline(PipelineConfig config) : cfg_(std::move(config)) {}

    [[nodiscard]] const PipelineConfig& config() const noexcept { return cfg_; }

    /// Replaces the backend for a role (tests inject mocks directly).
    void set_backend(const std::string& role, std::shared_ptr<Backend> backend) {
        backends_[role] = std::make_shared<TracingBackend>(std::move(backend));
    }

    Backend& backend(const std::string& role) { return *tracing(role); }

    /// Prompts seen by a role's backend since it was created.
    std::vector<RenderedPrompt> traced_prompts(const std::string& role) { return tracing(role)->prompts(); }

    // --- paths
    [[nodiscard]] fs::path path(const std::string& rel) const { return cfg_.output_dir / rel; }
    [[nodiscard]] fs::path predictions_path(PredictVariant v) const {
        return path("predict/predictions_" + std::string(to_string(v)) + ".jsonl");
    }

    // -----------------------------------------------------------------------
    json prepare() {
        auto loaded = load_reviews(cfg_.dataset, cfg_.mapping);
        auto core = kcore_filter(loaded.corpus, cfg_.kcore);
        auto split = temporal_split(core, cfg_.valid_fraction, cfg_.test_fraction);
        save_corpus(path("prepare/train.jsonl"), split.split.train);
        save_corpus(path("prepare/valid.jsonl"), split.split.valid);
        save_corpus(path("prepare/test.jsonl"), split.split.test);
        auto pairs = sample_training_pairs(split.split, cfg_.n_instruct, cfg_.n_reward, cfg_.seed);
        write_json_atomic(path("prepare/pairs.json"),
                          {{"instruct", pairs_to_json(pairs.instruct)}, {"reward", pairs_to_json(pairs.reward)}});
        json counts{{"load", loaded.stats.to_json()},
                    {"kcore", {{"k", cfg_.kcore},
                               {"input", loaded.corpus.size()},
                               {"output", core.size()},
                               {"users", core.user_count()},
                               {"items", core.item_count()}}},
                    {"split", split.report.to_json()},
                    {"pairs", {{"instruct", pairs.instruct.size()}, {"reward", pairs.reward.size()}}}};
        write_json_atomic(path("prepare/split_manifest.json"), counts);
        return finish("prepare", counts);
    }

    json summarize() {
        const auto split = load_split();
        SummaryStore store(path("summaries.jsonl"));
        SummarizeOptions opts;
        opts.domain_noun = cfg_.domain_noun;
        opts.workers = cfg_.workers;
        const auto& spec = spec_for("summarizer");
        opts.temperature = spec.temperature.value_or(0.0);
        opts.max_tokens = spec.max_tokens.value_or(256);
        auto stats = summarize_corpus_offline(backend("summarizer"), split.train, store, opts);
        store.compact();
        return finish("summarize", stats.to_json());
    }

    json gen_reasons(GenerationMode mode) {
        const auto split = load_split();
        const auto pairs = load_pairs();
        const auto summaries = load_summaries(split);
        const auto& tspec = spec_for("teacher");
        ReasonerOptions gen{tspec.temperature.value_or(0.8), tspec.max_tokens.value_or(256)};

        std::unique_ptr<RewardJudge> judge;
        if (mode == GenerationMode::filtered) judge = std::make_unique<RewardJudge>(backend("reward"), summaries, cfg_.tau);

        struct Row {
            json ledger;
            std::optional<Reason> reason;
            bool excluded_no_review = false;
            std::string error;
        };
        auto rows = parallel_map<Row>(pairs.instruct.size(), cfg_.workers, [&](std::size_t idx) {
            const auto& pair = pairs.instruct[idx];
            Row row;
            row.ledger = {{"user_id", pair.first}, {"item_id", pair.second}, {"mode", std::string(to_string(mode))}};
            try {
                auto ctx = make_training_context(split, pair, cfg_.max_history);
                const bool needs_review = mode == GenerationMode::filtered || mode == GenerationMode::review_guided ||
                                          mode == GenerationMode::review_inferred;
                if (needs_review && trim(ctx.target.review_text).empty()) {
                    row.excluded_no_review = true;
                    row.ledger["accepted"] = false;
                    row.ledger["excluded"] = "empty_review";
                    row.ledger["generation_calls"] = 0;
                    return row;
                }
                auto prompt = render_reasoner_prompt(ctx.history, summaries, ctx.target.item_title, cfg_.domain_noun);
                if (mode == GenerationMode::filtered) {
                    FilterOptions fo;
                    fo.max_iterations = cfg_.max_iterations;
                    fo.initial_unhinted = cfg_.initial_unhinted;
                    fo.generation = gen;
                    auto outcome = generation_then_filter(
                        backend("teacher"),
                        [&](const std::string& text) {
                            return judge->judge(ctx, text, ctx.target.review_text, ctx.target.rating);
                        },
                        prompt, ctx.target.rating, fo);
                    json cands = json::array();
                    for (const auto& c : outcome.candidates)
                        cands.push_back({{"iteration", c.iteration}, {"hinted", c.hinted}, {"judgment", to_json(c.judgment)}});
                    row.ledger["generation_calls"] = outcome.generation_calls();
                    row.ledger["candidates"] = cands;
                    row.ledger["accepted"] = outcome.accepted.has_value();
                    row.ledger["iteration"] = outcome.accepted ? json(outcome.accepted->iteration) : json(nullptr);
                    row.ledger["s_eval"] = outcome.accepted ? json(*outcome.accepted->s_eval) : json(nullptr);
                    row.reason = outcome.accepted;
                } else {
                    VariantInputs in;
                    in.reasoner_prompt = prompt;
                    in.target_review = ctx.target.review_text;
                    in.true_rating = ctx.target.rating;
                    if (mode == GenerationMode::review_inferred)
                        in.review_prompt = render_review_inference_prompt(ctx.history, summaries, ctx.target.review_text,
                                                                          ctx.target.item_title, cfg_.domain_noun);
                    const auto rmode = mode == GenerationMode::review_guided     ? ReasonMode::review_guided
                                       : mode == GenerationMode::review_inferred ? ReasonMode::review_inferred
                                       : mode == GenerationMode::hint_inferred   ? ReasonMode::hint_inferred
                                                                                 : ReasonMode::history_inferred;
                    CallCost cost;
                    auto r = generate_variant_reason(backend("teacher"), rmode, in, gen, &cost);
                    r.accepted = true;
                    row.ledger["generation_calls"] = cost.calls;
                    row.ledger["accepted"] = true;
                    row.ledger["iteration"] = 1;
                    row.ledger["s_eval"] = nullptr;
                    row.reason = std::move(r);
                }
            } catch (const Error& e) {
                if (e.kind() == ErrorKind::io) throw;
                row.error = e.what();
                row.ledger["accepted"] = false;
                row.ledger["error"] = row.error;
            }
            return row;
        });

        std::vector<json> ledger, accepted;
        std::size_t n_accepted = 0, n_rejected = 0, n_no_review = 0, n_errors = 0;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            ledger.push_back(rows[i].ledger);
            if (rows[i].reason) {
                ++n_accepted;
                accepted.push_back({{"user_id", pairs.instruct[i].first},
                                    {"item_id", pairs.instruct[i].second},
                                    {"reason", to_json(*rows[i].reason)}});
            } else if (rows[i].excluded_no_review) {
                ++n_no_review;
            } else if (!rows[i].error.empty()) {
                ++n_errors;
            } else {
                ++n_rejected;
            }
        }
        write_jsonl_atomic(path("reasons/ledger.jsonl"), ledger);
        write_jsonl_atomic(path("reasons/accepted.jsonl"), accepted);
        json counts{{"mode", std::string(to_string(mode))},
                    {"pairs", pairs.instruct.size()},
                    {"accepted", n_accepted},
                    {"excluded_after_T", n_rejected},
                    {"excluded_empty_review", n_no_review},
                    {"errors", n_errors},
                    {"tau", cfg_.tau},
                    {"T", cfg_.max_iterations}};
        if (judge) counts["reward_cost"] = judge->cost().to_json();
        return finish("gen-reasons", counts);
    }

    json export_sft() {
        const auto split = load_split();
        const auto pairs = load_pairs();
        const auto summaries = load_summaries(split);
        SummaryStore store(path("summaries.jsonl"));
        json counts;

        std::vector<PairKey> summarized;
        for (const auto& [k, _] : store.entries())
            if (split.train.latest(k.first, k.second)) summarized.push_back(k);
        counts["summarizer"] =
            export_summarizer_sft(path("sft/summarizer.jsonl"), store, split.train, summarized, cfg_.domain_noun).to_json();

        const auto accepted = load_accepted();
        std::map<PairKey, RenderedPrompt> reasoner_prompts, predictor_prompts;
        std::map<PairKey, int> ratings;
        std::set<PairKey> excluded;
        for (const auto& pair : pairs.instruct) {
            auto ctx = make_training_context(split, pair, cfg_.max_history);
            ratings[pair] = ctx.target.rating;
            auto it = accepted.find(pair);
            if (it == accepted.end()) {
                excluded.insert(pair);
                continue;
            }
            reasoner_prompts[pair] =
                render_reasoner_prompt(ctx.history, summaries, ctx.target.item_title, cfg_.domain_noun);
            predictor_prompts[pair] =
                render_predictor_prompt(ctx.history, summaries, ctx.averages, it->second.text, ctx.target.item_title);
        }
        counts["reasoner"] = export_reasoner_sft(path("sft/reasoner.jsonl"), accepted, reasoner_prompts).to_json();
        counts["predictor"] =
            export_predictor_sft(path("sft/predictor.jsonl"), pairs.instruct, predictor_prompts, ratings, excluded)
                .to_json();
        counts["reward"] = export_reward_sft(path("sft/reward.jsonl"), pairs.reward, pairs.instruct, split, summaries,
                                             cfg_.max_history)
                               .to_json();
        return finish("export-sft", counts);
    }

    json predict(PredictVariant variant) {
        const auto split = load_split();
        const auto summaries = load_summaries(split);
        std::vector<Interaction> targets = split.test.interactions();
        std::sort(targets.begin(), targets.end(), chronological_less);
        if (cfg_.test_limit && targets.size() > *cfg_.test_limit) targets.resize(*cfg_.test_limit);
        const auto& rspec = spec_for("reasoner");
        ReasonerOptions ropts{rspec.temperature.value_or(0.0), rspec.max_tokens.value_or(256)};
        const auto& pspec = spec_for("predictor");
        PredictOptions popts{pspec.temperature.value_or(0.0), 8};

        struct Row {
            std::optional<PredictionRecord> rec;
            std::string error;
        };
        auto rows = parallel_map<Row>(targets.size(), cfg_.workers, [&](std::size_t idx) {
            const auto& t = targets[idx];
            Row row;
            try {
                // Only the target's identity, title and rating-free history reach prompts here.
                auto ctx = make_context(split, t, cfg_.max_history);
                PredictionRecord rec;
                rec.user_id = t.user_id;
                rec.item_id = t.item_id;
                rec.truth = t.rating;
                rec.method = "deliberative/" + std::string(to_string(variant));
                if (variant == PredictVariant::full || variant == PredictVariant::no_reason) {
                    std::optional<std::string> reason;
                    if (variant == PredictVariant::full) {
                        auto prompt =
                            render_reasoner_prompt(ctx.history, summaries, ctx.target.item_title, cfg_.domain_noun);
                        auto r = infer_reason(backend("reasoner"), prompt, ropts, &rec.cost);
                        reason = r.text;
                        rec.reason = r.text;
                    }
                    auto p = predict_rating(backend("predictor"), ctx.history, summaries, ctx.averages, reason,
                                            ctx.target.item_title, popts);
                    rec.cost += p.cost;
                    rec.prediction = p.rating;
                    rec.decode_path = std::string(to_string(p.path));
                    rec.off_format = p.off_format;
                } else {
                    const auto mode = variant == PredictVariant::one_step ? AblationMode::one_step : AblationMode::cot;
                    CompletionRequest req;
                    req.prompt = render_ablation_prompt(mode, ctx.history, summaries, ctx.averages, ctx.target.item_title);
                    req.temperature = popts.temperature;
                    req.max_tokens = pspec.max_tokens.value_or(512);
                    auto resp = backend("predictor").complete(req);
                    rec.cost += resp.cost();
                    if (mode == AblationMode::one_step) {
                        auto parsed = parse_one_step_response(resp.text);
                        rec.prediction = parsed.rating;
                        rec.reason = parsed.reasoning;
                    } else {
                        auto parsed = parse_cot_response(resp.text);
                        rec.prediction = parsed.rating;
                        rec.reason = parsed.analysis;
                    }
                    rec.decode_path = "text";
                }
                row.rec = std::move(rec);
            } catch (const Error& e) {
                if (e.kind() == ErrorKind::io) throw;
                row.error = to_string(PairKey{t.user_id, t.item_id}) + ": " + e.what();
            }
            return row;
        });
        std::vector<PredictionRecord> preds;
        std::vector<std::string> errors;
        for (auto& r : rows) {
            if (r.rec)
                preds.push_back(std::move(*r.rec));
            else
                errors.push_back(r.error);
        }
        write_predictions(predictions_path(variant), preds);
        if (cfg_.trace) write_trace("predict_" + std::string(to_string(variant)));
        json counts{{"variant", std::string(to_string(variant))},
                    {"targets", targets.size()},
                    {"predicted", preds.size()},
                    {"failed", errors.size()},
                    {"errors", errors}};
        return finish("predict", counts);
    }

    /// action: "fit" (fit + predict test), "grid" (tune on valid, then fit + predict).
    json baseline_mf(const std::string& action) {
        const auto split = load_split();
        json counts;
        mf::Hyperparams hp = cfg_.mf;
        if (action == "grid") {
            auto g = mf::grid_search(split.train, split.valid, {8, 16, 32}, {0.002, 0.005, 0.01}, {0.01, 0.02, 0.05}, hp);
            json trials = json::array();
            for (const auto& [h, r] : g.trials) trials.push_back({{"hyperparams", h.to_json()}, {"valid_rmse", r}});
            write_json_atomic(path("mf/grid.json"), {{"best", g.best.to_json()}, {"best_valid_rmse", g.best_valid_rmse}, {"trials", trials}});
            hp = g.best;
            counts["best_valid_rmse"] = g.best_valid_rmse;
        } else {
            require(action == "fit" || action == "predict", "baseline-mf action must be fit, predict or grid");
        }
        mf::Model model;
        if (action == "predict") {
            const auto mpath = path("mf/model.json");
            if (!fs::exists(mpath)) missing(mpath, "baseline-mf --action fit");
            model = mf::from_json(read_json(mpath));
        } else {
            model = mf::fit(split.train, hp);
            write_json_atomic(path("mf/model.json"), mf::to_json(model));
        }
        std::vector<PredictionRecord> preds;
        for (const auto& x : split.test.interactions()) {
            PredictionRecord r;
            r.user_id = x.user_id;
            r.item_id = x.item_id;
            r.truth = x.rating;
            r.prediction = mf::predict(model, x.user_id, x.item_id);
            r.method = "mf";
            r.decode_path = "mf";
            preds.push_back(std::move(r));
        }
        write_predictions(path("predict/predictions_mf.jsonl"), preds);
        counts["hyperparams"] = hp.to_json();
        counts["train_rmse"] = split.train.empty() ? 0.0 : mf::rmse_on(model, split.train);
        counts["predicted"] = preds.size();
        return finish("baseline-mf", counts);
    }

    json evaluate(const EvaluateOptions& opts) {
        std::vector<fs::path> files = opts.predictions;
        if (files.empty()) {
            const auto dir = path("predict");
            if (!fs::exists(dir)) missing(dir, "predict");
            for (const auto& e : fs::directory_iterator(dir)) {
                const auto name = e.path().filename().string();
                if (name.starts_with("predictions_") && e.path().extension() == ".jsonl") files.push_back(e.path());
            }
            std::sort(files.begin(), files.end());
        }
        if (files.empty()) missing(path("predict/predictions_*.jsonl"), "predict");
        std::optional<std::map<PairKey, double>> external;
        if (opts.external_scores) external = read_external_scores(*opts.external_scores);
        std::optional<Corpus> test;
        if (opts.judge) test = load_split().test;

        std::vector<EvalReport> reports;
        json judge_counts = json::object();
        for (const auto& f : files) {
            if (!fs::exists(f)) missing(f, "predict");
            auto preds = read_predictions(f);
            if (preds.empty()) continue;
            std::optional<QualityScores> quality;
            if (external) {
                QualityScores q;
                q.source = "external";
                for (const auto& p : preds)
                    if (auto it = external->find(p.key()); it != external->end()) q.per_pair[p.key()] = it->second;
                quality = std::move(q);
            } else if (opts.judge) {
                quality = judge_quality(preds, *test, judge_counts[preds.front().method]);
            }
            reports.push_back(build_report(preds, std::move(quality)));
        }
        json doc{{"tool_version", kToolVersion}, {"tau", cfg_.tau}, {"reports", json::array()}};
        for (const auto& r : reports) doc["reports"].push_back(r.to_json());
        write_json_atomic(path("eval/report.json"), doc);
        write_file_atomic(path("eval/report.txt"), format_report_table(reports));
        json counts{{"reports", reports.size()}, {"judge", judge_counts}};
        return finish("evaluate", counts);
    }

private:
    struct Pairs {
        std::vector<PairKey> instruct;
        std::vector<PairKey> reward;
    };

    [[noreturn]] static void missing(const fs::path& artifact, const std::string& stage) {
        fail(ErrorKind::io, "missing artifact " + artifact.string() + " (run `" + stage + "` first)");
    }

    const BackendSpec& spec_for(const std::string& role) const {
        static const BackendSpec none{};
        if (auto it = cfg_.backends.find(role); it != cfg_.backends.end()) return it->second;
        if (role == "summarizer")
            if (auto it = cfg_.backends.find("teacher"); it != cfg_.backends.end()) return it->second;
        return none;
    }

    std::shared_ptr<TracingBackend> tracing(const std::string& role) {
        std::lock_guard lock(backend_mu_);
        if (auto it = backends_.find(role); it != backends_.end()) return it->second;
        std::string source = role;
        if (!cfg_.backends.contains(role)) {
            if (role == "summarizer" && cfg_.backends.contains("teacher"))
                source = "teacher";
            else
                fail(ErrorKind::validation, "config names no backend for role '" + role + "'");
        }
        const auto& spec = cfg_.backends.at(source);
        std::shared_ptr<Backend> b;
        if (spec.type == "mock")
            b = std::make_shared<MockBackend>(MockScript::from_json(read_json(spec.script)));
        else
            b = std::make_shared<HttpBackend>(HttpBackendConfig::from_json(spec.http));
        auto t = std::make_shared<TracingBackend>(std::move(b));
        backends_[role] = t;
        return t;
    }

    SplitCorpus load_split() const {
        SplitCorpus s;
        for (auto [name, dst] : {std::pair{"train", &s.train}, std::pair{"valid", &s.valid}, std::pair{"test", &s.test}}) {
            const auto p = path(std::string("prepare/") + name + ".jsonl");
            if (!fs::exists(p)) missing(p, "prepare");
            *dst = load_corpus(p);
        }
        return s;
    }

    Pairs load_pairs() const {
        const auto p = path("prepare/pairs.json");
        if (!fs::exists(p)) missing(p, "prepare");
        auto j = read_json(p);
        return {pairs_from_json(j.at("instruct")), pairs_from_json(j.at("reward"))};
    }

    /// Store summaries plus empty placeholders for training interactions that
    /// could not be summarized (no review text, or a failed parse).
    SummaryMap load_summaries(const SplitCorpus& split) const {
        const auto p = path("summaries.jsonl");
        if (!fs::exists(p)) missing(p, "summarize");
        SummaryMap m = SummaryStore(p).summaries();
        for (const auto& x : split.train.interactions()) {
            AspectSummary empty;
            empty.source_rating = x.rating;
            m.try_emplace({x.user_id, x.item_id}, empty);
        }
        return m;
    }

    std::map<PairKey, Reason> load_accepted() const {
        const auto p = path("reasons/accepted.jsonl");
        if (!fs::exists(p)) missing(p, "gen-reasons");
        std::map<PairKey, Reason> out;
        for (const auto& j : read_jsonl(p))
            out[{j.at("user_id").get<std::string>(), j.at("item_id").get<std::string>()}] = reason_from_json(j.at("reason"));
        return out;
    }

    QualityScores judge_quality(const std::vector<PredictionRecord>& preds, const Corpus& test, json& counts) {
        QualityScores q;
        q.source = "judge:" + backend("judge").model_tag();
        std::size_t clamped = 0, failed = 0, skipped = 0;
        for (const auto& p : preds) {
            auto target = test.latest(p.user_id, p.item_id);
            if (!p.reason || !target || trim(target->review_text).empty()) {
                ++skipped;
                continue;
            }
            try {
                auto s = judge_alignment(backend("judge"), *p.reason, target->review_text, p.key());
                q.per_pair[p.key()] = s.score;
                if (s.clamped) ++clamped;
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::parse && e.kind() != ErrorKind::validation) throw;
                ++failed;
            }
        }
        counts = {{"scored", q.per_pair.size()}, {"clamped", clamped}, {"failed", failed}, {"skipped", skipped}};
        return q;
    }

    void write_trace(const std::string& stage) {
        std::lock_guard lock(backend_mu_);
        for (const auto& [role, t] : backends_) {
            std::vector<json> lines;
            for (const auto& p : t->prompts())
                lines.push_back({{"family", std::string(to_string(p.family))},
                                 {"user_id", p.meta("user_id")},
                                 {"item_id", p.meta("item_id")},
                                 {"messages", messages_to_json(p.messages)}});
            write_jsonl_atomic(path("trace/" + stage + "_" + role + ".jsonl"), lines);
        }
    }

    json finish(const std::string& stage, const json& counts) {
        json manifest{{"stage", stage},
                      {"tool_version", kToolVersion},
                      {"config_hash", cfg_.hash()},
                      {"config", cfg_.raw},
                      {"seed", cfg_.seed},
                      {"counts", counts}};
        write_json_atomic(path("manifests/" + stage + ".json"), manifest);
        return manifest;
    }

    PipelineConfig cfg_;
    std::mutex backend_mu_;
    std::map<std::string, std::shared_ptr<TracingBackend>> backends_;
};

} // namespace deliberec
