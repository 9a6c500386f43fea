// End-to-end walkthrough of the library API on a small synthetic corpus:
// generate, paginate, align, distill, train briefly and evaluate.

#include <cstdio>

#include "pts/pipeline.hpp"

int main() {
    using namespace pts;

    pipeline::RunConfig cfg;
    cfg.seed = 3;
    cfg.workdir = "demo_work";
    cfg.synth.num_docs = 24;
    cfg.synth.pages_per_doc = 2;
    cfg.synth.sentences_per_page = 3;
    cfg.synth.sentence_len = 5;
    cfg.synth.summary_sentences_per_doc = 4;
    cfg.synth.vocab_size = 20;
    cfg.page_limit = synth::matching_page_limit(cfg.synth);
    cfg.model.embed_dim = 16;
    cfg.model.hidden_dim = 16;
    cfg.model.max_target_len = 32;
    cfg.train.epochs = 3;
    cfg.train.learning_rate = 5e-3;

    auto made = pipeline::cmd_synth(cfg);
    std::printf("generated %zu docs\n", made.num_docs);

    cfg.paths.corpus = made.corpus_file;
    auto pre = pipeline::cmd_preprocess(cfg);
    std::printf("preprocess: accepted %zu, %zu pages\n", pre.report.accepted, pre.pages_total);

    auto aligned = pipeline::cmd_align(cfg);
    for (const auto& [metric, acc] : aligned.accuracy_by_metric) {
        std::printf("alignment accuracy (%s): %.3f\n", metric.c_str(), acc);
    }

    pipeline::cmd_teacher(cfg);
    auto trained = pipeline::cmd_train(cfg);
    std::printf("train: %zu steps, loss %.4f -> %.4f\n", trained.steps, trained.first_total,
                trained.final_total);

    pipeline::cmd_summarize(cfg);
    auto eval = pipeline::cmd_evaluate(cfg);
    std::printf("ROUGE-1 F1 %.4f, ROUGE-2 F1 %.4f, embed F1 %.4f over %zu docs\n", eval.report.mean_rouge1,
                eval.report.mean_rouge2, eval.report.mean_embed, eval.report.n_docs());
    return 0;
}
