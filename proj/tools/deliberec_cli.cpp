// Command-line driver for the deliberative rating pipeline.

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "deliberec/pipeline.hpp"

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitStage = 2;

} // namespace

int main(int argc, char** argv) {
    using namespace deliberec;

    CLI::App app{"deliberec: summarize, reason, predict and evaluate review-based ratings"};
    app.require_subcommand(1);
    std::string config_path;
    std::vector<std::string> overrides;
    std::string preset;
    app.add_option("-c,--config", config_path, "flat JSON run config")->required();
    app.add_option("--set", overrides, "override a config key, e.g. --set seed=3 (repeatable)");
    app.add_option("--preset", preset, "per-dataset preset file (music, book or yelp)");

    auto* prepare = app.add_subcommand("prepare", "load, 5-core filter and split the corpus");
    auto* summarize = app.add_subcommand("summarize", "summarize training reviews (resumable)");

    auto* gen = app.add_subcommand("gen-reasons", "generate reasons for the instruct pairs");
    std::string gen_mode = "filtered";
    gen->add_option("--mode", gen_mode, "filtered, review-guided, review-inferred, hint-inferred or history-inferred");

    auto* sft = app.add_subcommand("export-sft", "write summarizer, reasoner, predictor and reward SFT datasets");

    auto* predict = app.add_subcommand("predict", "predict ratings for the test split");
    std::string ablation = "full";
    predict->add_option("--ablation", ablation, "full, no-reason, one-step or cot");

    auto* mf = app.add_subcommand("baseline-mf", "matrix factorization baseline");
    std::string mf_action = "fit";
    mf->add_option("--action", mf_action, "fit, predict or grid");

    auto* evaluate = app.add_subcommand("evaluate", "MAE/RMSE, cost and reason-quality reports");
    EvaluateOptions eval_opts;
    std::vector<std::string> pred_files;
    std::string external;
    evaluate->add_option("--predictions", pred_files, "prediction files (default: every predictions_*.jsonl)");
    evaluate->add_flag("--judge", eval_opts.judge, "score reasons against target reviews with the judge backend");
    evaluate->add_option("--external-scores", external, "per-pair quality scores computed elsewhere");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kExitValidation;
    }

    std::optional<Pipeline> pipeline;
    try {
        if (!preset.empty()) overrides.push_back("preset=" + fs::absolute(preset).string());
        pipeline.emplace(PipelineConfig::load(config_path, overrides));
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return kExitValidation;
    } catch (const json::exception& e) {
        std::cerr << "invalid config: " << e.what() << "\n";
        return kExitValidation;
    }

    try {
        json manifest;
        if (*prepare) {
            manifest = pipeline->prepare();
        } else if (*summarize) {
            manifest = pipeline->summarize();
        } else if (*gen) {
            manifest = pipeline->gen_reasons(generation_mode_from_string(gen_mode));
        } else if (*sft) {
            manifest = pipeline->export_sft();
        } else if (*predict) {
            manifest = pipeline->predict(predict_variant_from_string(ablation));
        } else if (*mf) {
            manifest = pipeline->baseline_mf(mf_action);
        } else if (*evaluate) {
            for (const auto& f : pred_files) eval_opts.predictions.emplace_back(f);
            if (!external.empty()) eval_opts.external_scores = external;
            manifest = pipeline->evaluate(eval_opts);
            std::cout << read_file(pipeline->path("eval/report.txt"));
        }
        std::cout << manifest.at("counts").dump(2) << "\n";
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return e.kind() == ErrorKind::validation ? kExitValidation : kExitStage;
    } catch (const std::exception& e) {
        std::cerr << "stage failed: " << e.what() << "\n";
        return kExitStage;
    }
    return 0;
}
