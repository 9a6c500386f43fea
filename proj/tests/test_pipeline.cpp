#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "pts/pipeline.hpp"

using namespace pts;
using namespace pts::pipeline;

namespace {

namespace fs = std::filesystem;

std::string fresh_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

std::uint64_t file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return fnv1a64(content);
}

RunConfig small_config(const std::string& workdir, std::uint64_t seed = 5) {
    RunConfig cfg;
    cfg.seed = seed;
    cfg.workdir = workdir;
    cfg.synth.num_docs = 10;
    cfg.synth.pages_per_doc = 3;
    cfg.synth.sentences_per_page = 3;
    cfg.synth.sentence_len = 5;
    cfg.synth.summary_sentences_per_doc = 3;
    cfg.synth.vocab_size = 24;
    cfg.page_limit = synth::matching_page_limit(cfg.synth);
    cfg.model.embed_dim = 8;
    cfg.model.hidden_dim = 8;
    cfg.model.max_target_len = 24;
    cfg.train.epochs = 1;
    cfg.train.batch_size = 3;
    return cfg;
}

// runs synth -> preprocess -> align -> teacher -> train -> summarize -> evaluate
void run_pipeline(RunConfig cfg) {
    auto made = cmd_synth(cfg);
    cfg.paths.corpus = made.corpus_file;
    cmd_preprocess(cfg);
    cmd_align(cfg);
    cmd_teacher(cfg);
    cmd_train(cfg);
    cmd_summarize(cfg);
    cmd_evaluate(cfg);
}

}  // namespace

TEST_CASE("preprocess emits paginated corpus and rejection report") {
    auto dir = fresh_dir("pts_pipe_pre");
    RunConfig cfg = small_config(dir);
    auto made = cmd_synth(cfg);
    cfg.paths.corpus = made.corpus_file;
    auto r = cmd_preprocess(cfg);
    CHECK(r.report.accepted == 10);
    CHECK(r.report.rejected == 0);
    CHECK(fs::exists(paginated_path(cfg)));
    CHECK(fs::exists(fs::path(dir) / "rejection_report.json"));

    auto docs = load_paginated(paginated_path(cfg));
    REQUIRE(docs.size() == 10);
    for (const auto& d : docs) CHECK(d.pages.size() == cfg.synth.pages_per_doc);
}

TEST_CASE("preprocess counts rejected documents") {
    auto dir = fresh_dir("pts_pipe_rej");
    RunConfig cfg = small_config(dir);
    auto corpus_path = (fs::path(dir) / "raw.jsonl").string();
    {
        std::ofstream out(corpus_path);
        out << R"({"article":"Good text here.","abstract":"Fine summary."})" << "\n";
        out << R"({"article":"Unsummarized text.","abstract":""})" << "\n";
    }
    cfg.paths.corpus = corpus_path;
    auto r = cmd_preprocess(cfg);
    CHECK(r.report.accepted == 1);
    CHECK(r.report.rejected == 1);
    CHECK(r.report.reasons.at("empty_abstract") == 1);
}

TEST_CASE("align produces per-metric files and accuracy vs gold") {
    auto dir = fresh_dir("pts_pipe_align");
    RunConfig cfg = small_config(dir);
    cfg.alignment_metric = "all";
    auto made = cmd_synth(cfg);
    cfg.paths.corpus = made.corpus_file;
    cmd_preprocess(cfg);
    auto r = cmd_align(cfg);
    CHECK(r.metrics_run.size() == 4);
    for (const auto& m : r.metrics_run) CHECK(fs::exists(alignment_path(cfg, m)));
    REQUIRE(r.accuracy_by_metric.count("embed-cosine"));
    CHECK(r.accuracy_by_metric.at("embed-cosine") == 1.0);  // noise 0
    CHECK(fs::exists(fs::path(dir) / "alignment_comparison.json"));
}

TEST_CASE("teacher rows are valid distributions matching recomputation") {
    auto dir = fresh_dir("pts_pipe_teacher");
    RunConfig cfg = small_config(dir);
    auto made = cmd_synth(cfg);
    cfg.paths.corpus = made.corpus_file;
    cmd_preprocess(cfg);
    cmd_align(cfg);
    cmd_teacher(cfg);

    auto docs = load_paginated(paginated_path(cfg));
    auto rows = jsonl::read_all(teacher_path(cfg));
    REQUIRE(rows.size() == docs.size());
    embed::EmbedderState embedder = stage_embedder(cfg, docs);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto probs = rows[i].at("teacher").get<std::vector<double>>();
        double sum = 0.0;
        for (double p : probs) sum += p;
        CHECK(sum == Catch::Approx(1.0).margin(1e-9));
        auto student = rows[i].at("student").get<std::vector<double>>();
        double zsum = 0.0;
        for (double p : student) zsum += p;
        CHECK(zsum == Catch::Approx(1.0).margin(1e-9));

        // recompute the teacher with the module API and compare
        std::vector<std::vector<std::string>> provisionals;
        auto gold_tokens = docs[i].summary_tokens();
        for (std::size_t j = 0; j < docs[i].pages.size(); ++j) {
            provisionals.push_back(distill::provisional_page_summary(
                docs[i], j, gold_tokens, distill::ProvisionalMode::ExtractiveTopK, cfg.teacher.k, embedder));
        }
        auto teacher = distill::teacher_distribution(provisionals, gold_tokens, embedder,
                                                     cfg.teacher.temperature);
        for (std::size_t j = 0; j < probs.size(); ++j) {
            CHECK(probs[j] == Catch::Approx(teacher.probs[j]).margin(1e-12));
        }
    }
}

TEST_CASE("single-page documents get a degenerate teacher and confidence") {
    auto dir = fresh_dir("pts_pipe_single");
    RunConfig cfg = small_config(dir);
    cfg.synth.pages_per_doc = 1;
    cfg.synth.vocab_size = 8;
    cfg.page_limit = synth::matching_page_limit(cfg.synth);
    run_pipeline(cfg);

    for (const auto& row : jsonl::read_all(teacher_path(cfg))) {
        auto probs = row.at("teacher").get<std::vector<double>>();
        REQUIRE(probs.size() == 1);
        CHECK(probs[0] == 1.0);
    }
    for (const auto& row : jsonl::read_all(workpath(cfg, "summaries.jsonl"))) {
        auto conf = row.at("confidence").get<std::vector<double>>();
        REQUIRE(conf.size() == 1);
        CHECK(conf[0] == 1.0);
    }
}

TEST_CASE("summaries carry confidence rows summing to one") {
    auto dir = fresh_dir("pts_pipe_sum");
    RunConfig cfg = small_config(dir);
    run_pipeline(cfg);
    auto rows = jsonl::read_all(workpath(cfg, "summaries.jsonl"));
    REQUIRE(rows.size() == cfg.synth.num_docs);
    for (const auto& row : rows) {
        auto conf = row.at("confidence").get<std::vector<double>>();
        double sum = 0.0;
        for (double c : conf) sum += c;
        CHECK(sum == Catch::Approx(1.0).margin(1e-9));
        CHECK(row.contains("tokens"));
        CHECK(row.contains("text"));
    }
}

TEST_CASE("evaluate self-scores references at 1.0") {
    auto dir = fresh_dir("pts_pipe_eval");
    RunConfig cfg = small_config(dir);
    auto made = cmd_synth(cfg);
    cfg.paths.corpus = made.corpus_file;
    cmd_preprocess(cfg);

    // write the references as if they were system output
    auto docs = load_paginated(paginated_path(cfg));
    std::vector<nlohmann::json> rows;
    for (const auto& d : docs) {
        rows.push_back({{"doc_id", d.doc_id}, {"tokens", d.summary_tokens()}, {"text", ""}});
    }
    auto sys_path = (fs::path(dir) / "self.jsonl").string();
    jsonl::write_all(sys_path, rows);
    cfg.paths.system = sys_path;
    auto r = cmd_evaluate(cfg);
    CHECK(r.report.mean_rouge1 == Catch::Approx(1.0).margin(1e-12));
    CHECK(r.report.mean_rouge2 == Catch::Approx(1.0).margin(1e-12));
    CHECK(r.report.mean_rougeL == Catch::Approx(1.0).margin(1e-12));
    CHECK(r.report.mean_embed == Catch::Approx(1.0).margin(1e-12));

    // empty system summaries score zero
    for (auto& row : rows) row["tokens"] = std::vector<std::string>{};
    jsonl::write_all(sys_path, rows);
    auto zero = cmd_evaluate(cfg);
    CHECK(zero.report.mean_rouge1 == 0.0);
}

TEST_CASE("gradcheck command passes and its negative control fails") {
    RunConfig cfg;
    cfg.gradcheck.h = 1e-5;
    for (double lambda : {0.0, 0.1, 1.0}) {
        cfg.lambda = lambda;
        auto r = cmd_gradcheck(cfg);
        INFO("lambda " << lambda << " err " << r.check.max_rel_error << " at " << r.check.worst_parameter);
        CHECK(r.pass);
    }
    auto corrupted = cmd_gradcheck(cfg, /*corrupt=*/true);
    CHECK_FALSE(corrupted.pass);
    CHECK_FALSE(corrupted.check.worst_parameter.empty());
}

TEST_CASE("pipeline reruns are byte-identical") {
    auto dir_a = fresh_dir("pts_pipe_det_a");
    auto dir_b = fresh_dir("pts_pipe_det_b");
    run_pipeline(small_config(dir_a, 11));
    run_pipeline(small_config(dir_b, 11));

    // the train log carries wall-clock timings; compare all other artifacts
    // byte for byte and the log with timing fields stripped
    std::vector<std::string> files = {"synth_corpus.jsonl", "synth_gold.jsonl",  "paginated.jsonl",
                                      "rejection_report.json", "embedder.json",
                                      "alignment_embed-cosine.jsonl", "alignment_comparison.json",
                                      "teacher.jsonl",      "checkpoint.bin",   "summaries.jsonl",
                                      "eval_report.json"};
    for (const auto& name : files) {
        INFO("artifact " << name);
        CHECK(file_hash((fs::path(dir_a) / name).string()) == file_hash((fs::path(dir_b) / name).string()));
    }

    auto strip_wall = [](const std::string& path) {
        std::string out;
        for (auto& row : jsonl::read_all(path)) {
            row.erase("wall_ms");
            out += row.dump();
            out += '\n';
        }
        return fnv1a64(out);
    };
    CHECK(strip_wall((fs::path(dir_a) / "train_log.jsonl").string()) ==
          strip_wall((fs::path(dir_b) / "train_log.jsonl").string()));
}

TEST_CASE("config round trip reproduces artifacts") {
    auto dir = fresh_dir("pts_pipe_roundtrip");
    RunConfig cfg = small_config(dir, 13);
    auto made = cmd_synth(cfg);
    cfg.paths.corpus = made.corpus_file;
    cmd_preprocess(cfg);
    auto hash_before = file_hash(paginated_path(cfg));

    // reload the effective config written by the stage and run again
    RunConfig reloaded = config_from_json(jsonl::read_json(workpath(cfg, "preprocess_config.json")));
    cmd_preprocess(reloaded);
    CHECK(file_hash(paginated_path(reloaded)) == hash_before);
}

TEST_CASE("config json defaults and overrides") {
    RunConfig defaults;
    CHECK(defaults.page_limit == 1024);
    CHECK(defaults.lambda == 0.1);
    CHECK(defaults.train.batch_size == 3);
    CHECK(defaults.teacher.k == 3);
    CHECK(defaults.student.epsilon == 1.0);

    auto j = nlohmann::json{{"lambda", 0.4}, {"page_limit", 64}};
    RunConfig c = config_from_json(j);
    CHECK(c.lambda == 0.4);
    CHECK(c.page_limit == 64);
    CHECK(c.train.batch_size == 3);  // untouched default

    CHECK_THROWS_AS(config_from_json(nlohmann::json{{"lambda", 1.5}}), ValidationError);

    // full round trip through JSON preserves every field
    RunConfig base = small_config("wd", 3);
    base.paths.corpus = "x.jsonl";
    RunConfig back = config_from_json(config_to_json(base));
    CHECK(config_to_json(back).dump() == config_to_json(base).dump());
}

#ifdef PTS_CLI_PATH
TEST_CASE("cli exit codes distinguish validation and io failures") {
    auto dir = fresh_dir("pts_cli_codes");
    auto config_path = (fs::path(dir) / "config.json").string();
    RunConfig cfg = small_config(dir, 3);
    jsonl::write_json(config_path, config_to_json(cfg));

    std::string cli = PTS_CLI_PATH;
    auto run = [&](const std::string& args) {
        std::string cmd = cli + " " + args + " >/dev/null 2>&1";
        int rc = std::system(cmd.c_str());
        return WEXITSTATUS(rc);
    };

    CHECK(run("synth --config " + config_path) == 0);
    // missing corpus path -> validation failure
    CHECK(run("preprocess --config " + config_path) == 1);
    // unreadable corpus file -> io failure
    RunConfig io_cfg = cfg;
    io_cfg.paths.corpus = (fs::path(dir) / "missing.jsonl").string();
    auto io_config_path = (fs::path(dir) / "config_io.json").string();
    jsonl::write_json(io_config_path, config_to_json(io_cfg));
    CHECK(run("preprocess --config " + io_config_path) == 2);
    // align without preprocess artifacts -> io failure
    auto dir2 = fresh_dir("pts_cli_codes2");
    RunConfig cfg2 = small_config(dir2, 3);
    auto config2 = (fs::path(dir2) / "config.json").string();
    jsonl::write_json(config2, config_to_json(cfg2));
    CHECK(run("align --config " + config2) == 2);
}
#endif
