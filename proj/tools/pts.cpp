// Command-line entry point for the page-targeted summarization pipeline.
// Stages communicate through files in the working directory; every stage
// is deterministic given (config, seed).

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pts/pipeline.hpp"

namespace {

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> limit;
    std::optional<std::string> metric;
    std::optional<double> lambda;
};

pts::pipeline::RunConfig make_config(const std::string& config_path, const Overrides& ov) {
    pts::pipeline::RunConfig cfg = pts::pipeline::load_config(config_path);
    if (ov.seed) cfg.seed = *ov.seed;
    if (ov.limit) cfg.limit = *ov.limit;
    if (ov.metric) cfg.alignment_metric = *ov.metric;
    if (ov.lambda) cfg.lambda = *ov.lambda;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"page-targeted long-document summarization pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    Overrides ov;
    app.add_option("--config", config_path, "JSON run configuration")->required();
    app.add_option("--seed", ov.seed, "override the run seed");
    app.add_option("--limit", ov.limit, "cap the number of accepted documents");
    app.add_option("--metric", ov.metric, "alignment metric (embed-cosine|rouge1|rouge2|rougeL|all)");
    app.add_option("--lambda", ov.lambda, "distillation loss weight in [0, 1]");

    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus with gold alignment");
    auto* preprocess = app.add_subcommand("preprocess", "clean, split, tokenize and paginate a corpus");
    auto* align_cmd = app.add_subcommand("align", "assign summary sentences to pages");
    auto* teacher = app.add_subcommand("teacher", "build teacher/student page-importance distributions");
    auto* train = app.add_subcommand("train", "train the page-fused model");
    auto* summarize = app.add_subcommand("summarize", "generate summaries from a checkpoint");
    auto* evaluate = app.add_subcommand("evaluate", "score system summaries against references");
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the analytic gradients");
    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    CLI11_PARSE(app, argc, argv);

    try {
        pts::pipeline::RunConfig cfg = make_config(config_path, ov);
        if (synth->parsed()) {
            auto r = pts::pipeline::cmd_synth(cfg);
            std::printf("synth: %zu documents -> %s\n", r.num_docs, r.corpus_file.c_str());
        } else if (preprocess->parsed()) {
            auto r = pts::pipeline::cmd_preprocess(cfg);
            std::printf("preprocess: accepted %zu rejected %zu pages %zu\n", r.report.accepted,
                        r.report.rejected, r.pages_total);
        } else if (align_cmd->parsed()) {
            auto r = pts::pipeline::cmd_align(cfg);
            for (const auto& m : r.metrics_run) {
                if (r.accuracy_by_metric.count(m)) {
                    std::printf("align %-12s accuracy vs gold %.4f\n", m.c_str(), r.accuracy_by_metric.at(m));
                } else {
                    std::printf("align %-12s done\n", m.c_str());
                }
            }
        } else if (teacher->parsed()) {
            auto r = pts::pipeline::cmd_teacher(cfg);
            std::printf("teacher: %zu documents\n", r.docs);
        } else if (train->parsed()) {
            auto r = pts::pipeline::cmd_train(cfg);
            std::printf("train: %zu steps, total %.6f -> %.6f%s\n", r.steps, r.first_total, r.final_total,
                        r.early_stopped ? " (early stop)" : "");
        } else if (summarize->parsed()) {
            auto r = pts::pipeline::cmd_summarize(cfg);
            std::printf("summarize: %zu documents\n", r.docs);
        } else if (evaluate->parsed()) {
            auto r = pts::pipeline::cmd_evaluate(cfg);
            std::printf("evaluate: %zu docs  R1 %.4f  R2 %.4f  RL %.4f  embedF1 %.4f\n",
                        r.report.n_docs(), r.report.mean_rouge1, r.report.mean_rouge2, r.report.mean_rougeL,
                        r.report.mean_embed);
        } else if (gradcheck->parsed()) {
            auto r = pts::pipeline::cmd_gradcheck(cfg);
            std::printf("gradcheck: max relative error %.3e (worst %s) -> %s\n", r.check.max_rel_error,
                        r.check.worst_parameter.c_str(), r.pass ? "pass" : "FAIL");
            return r.pass ? 0 : 1;
        }
        return 0;
    } catch (const pts::ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const pts::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
