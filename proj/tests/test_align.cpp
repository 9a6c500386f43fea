#include <catch2/catch_amalgamated.hpp>

#include "pts/align.hpp"
#include "pts/synth.hpp"

using namespace pts;
using namespace pts::align;

namespace {

corpus::PaginatedDocument make_doc(const std::string& article, const std::string& abstract,
                                   std::size_t page_limit) {
    corpus::RawDocument raw;
    raw.id = "doc";
    raw.article = article;
    raw.abstract = abstract;
    return corpus::preprocess_document(raw, page_limit);
}

}  // namespace

TEST_CASE("score_matrix under rouge metrics") {
    auto doc = make_doc("The cat sat here quietly.", "Summary text.", 16);
    SECTION("verbatim containment gives positive rouge1") {
        ScoreMatrix m = score_matrix(doc, {{"the", "cat", "sat"}}, Metric::Rouge1);
        REQUIRE(m.rows == 1);
        REQUIRE(m.cols == 1);
        CHECK(m.scores[0][0] > 0.0);
    }
    SECTION("disjoint sentence scores a zero row") {
        ScoreMatrix m = score_matrix(doc, {{"zz", "qq"}}, Metric::Rouge2);
        CHECK(m.scores[0][0] == 0.0);
    }
    SECTION("hand-computed rouge1 value") {
        auto d2 = make_doc("The cat sat.", "x.", 16);
        // page tokens: the cat sat . ; sentence: the cat ran
        ScoreMatrix m = score_matrix(d2, {{"the", "cat", "ran"}}, Metric::Rouge1);
        // P = 2/3, R = 2/4, F1 = 2 * (2/3) * (1/2) / (2/3 + 1/2)
        double p = 2.0 / 3.0, r = 0.5;
        CHECK(m.scores[0][0] == Catch::Approx(2 * p * r / (p + r)).margin(1e-12));
    }
    SECTION("embed-cosine requires an embedder") {
        CHECK_THROWS_AS(score_matrix(doc, {{"a"}}, Metric::EmbedCosine), ValidationError);
    }
}

TEST_CASE("assign_sentences argmax and tie handling") {
    ScoreMatrix m;
    m.doc_id = "d";
    m.rows = 2;
    m.cols = 2;
    m.scores = {{0.9, 0.1}, {0.2, 0.8}};
    auto a = assign_sentences(m);
    CHECK(a.assignment == std::vector<std::size_t>{0, 1});
    CHECK_FALSE(a.tie_flag[0]);
    CHECK_FALSE(a.tie_flag[1]);
    CHECK(a.winning_score[0] == 0.9);

    ScoreMatrix tie;
    tie.rows = 1;
    tie.cols = 2;
    tie.scores = {{0.5, 0.5}};
    auto at = assign_sentences(tie);
    CHECK(at.assignment[0] == 0);
    CHECK(at.tie_flag[0]);
}

TEST_CASE("build_page_targets partitions in summary order") {
    Alignment a;
    a.doc_id = "d";
    a.assignment = {1, 0, 1};
    a.winning_score = {1, 1, 1};
    a.tie_flag = {false, false, false};
    auto targets = build_page_targets(a, 2);
    REQUIRE(targets.size() == 2);
    CHECK(targets[0].sentence_indices == std::vector<std::size_t>{1});
    CHECK(targets[1].sentence_indices == std::vector<std::size_t>{0, 2});

    SECTION("degenerate concentration") {
        Alignment all0;
        all0.assignment = {0, 0, 0};
        auto t = build_page_targets(all0, 2);
        CHECK(t[0].sentence_indices.size() == 3);
        CHECK(t[1].sentence_indices.empty());
    }
    SECTION("partition property under random assignments") {
        Rng rng(31);
        for (int trial = 0; trial < 100; ++trial) {
            std::size_t pages = 1 + rng.next_below(5);
            std::size_t sents = 1 + rng.next_below(8);
            Alignment r;
            for (std::size_t k = 0; k < sents; ++k) r.assignment.push_back(rng.next_below(pages));
            auto tg = build_page_targets(r, pages);
            std::vector<std::size_t> flattened;
            for (const auto& t : tg) {
                for (std::size_t k : t.sentence_indices) flattened.push_back(k);
            }
            CHECK(flattened.size() == sents);  // every sentence exactly once
        }
    }
}

TEST_CASE("alignment_accuracy counts matches") {
    CHECK(alignment_accuracy({0, 1, 2}, {0, 1, 2}) == 1.0);
    CHECK(alignment_accuracy({0, 0}, {1, 1}) == 0.0);
    CHECK(alignment_accuracy({0, 1, 2, 3}, {0, 1, 2, 0}) == 0.75);
    CHECK_THROWS_AS(alignment_accuracy({0}, {0, 1}), ValidationError);
}

TEST_CASE("verbatim sentence aligns to its source page under tfidf cosine") {
    synth::SynthSpec spec;
    spec.num_docs = 6;
    spec.noise = 0.0;
    spec.seed = 21;
    auto sc = synth::generate_corpus(spec);

    std::vector<corpus::PaginatedDocument> docs;
    std::vector<std::vector<std::string>> streams;
    for (const auto& raw : sc.docs) {
        docs.push_back(corpus::preprocess_document(raw, synth::matching_page_limit(spec)));
        streams.push_back(docs.back().tokens);
    }
    auto embedder = embed::fit_embedder(streams, embed::Backend::Tfidf);

    for (std::size_t i = 0; i < docs.size(); ++i) {
        ScoreMatrix m = score_matrix(docs[i], docs[i].summary_sentences, Metric::EmbedCosine, &embedder);
        Alignment a = assign_sentences(m);
        for (std::size_t k = 0; k < a.assignment.size(); ++k) {
            CHECK(a.assignment[k] == sc.gold[i].source_page[k]);
            CHECK_FALSE(a.tie_flag[k]);
        }
    }
}

TEST_CASE("assignments are invariant to positive rescaling of page embeddings") {
    auto doc = make_doc("Alpha beta gamma delta. Epsilon zeta eta theta. Iota kappa lambda mu.",
                        "Alpha beta. Iota kappa.", 5);
    std::vector<std::vector<std::string>> streams = {doc.tokens};
    auto embedder = embed::fit_embedder(streams, embed::Backend::Tfidf);
    REQUIRE(doc.pages.size() >= 2);

    std::vector<embed::Embedding> pages;
    for (std::size_t j = 0; j < doc.pages.size(); ++j) {
        pages.push_back(embed::embed_text(embedder, doc.page_tokens(j)));
    }
    auto assign_with_scale = [&](std::size_t scaled_page, double alpha) {
        ScoreMatrix m;
        m.rows = doc.summary_sentences.size();
        m.cols = pages.size();
        m.scores.assign(m.rows, std::vector<double>(m.cols, 0.0));
        for (std::size_t k = 0; k < m.rows; ++k) {
            auto sent = embed::embed_text(embedder, doc.summary_sentences[k]);
            for (std::size_t j = 0; j < m.cols; ++j) {
                embed::Embedding page = pages[j];
                if (j == scaled_page) {
                    for (double& v : page.values) v *= alpha;
                }
                m.scores[k][j] = embed::cosine(sent, page);
            }
        }
        return assign_sentences(m).assignment;
    };

    auto base = assign_with_scale(0, 1.0);
    for (double alpha : {0.5, 3.0}) {
        for (std::size_t j = 0; j < pages.size(); ++j) {
            CHECK(assign_with_scale(j, alpha) == base);
        }
    }
}

TEST_CASE("alignment serialization is byte-identical across runs") {
    auto doc = make_doc("Alpha beta. Gamma delta. Epsilon zeta.", "Alpha beta. Gamma delta.", 3);
    std::vector<std::vector<std::string>> streams = {doc.tokens};
    auto embedder = embed::fit_embedder(streams, embed::Backend::Tfidf);

    auto dump = [&] {
        ScoreMatrix m = score_matrix(doc, doc.summary_sentences, Metric::EmbedCosine, &embedder);
        Alignment a = assign_sentences(m);
        return alignment_to_json(a, Metric::EmbedCosine, build_page_targets(a, doc.pages.size())).dump();
    };
    CHECK(dump() == dump());
}

TEST_CASE("alignment JSON round trip") {
    Alignment a;
    a.doc_id = "d9";
    a.assignment = {2, 0};
    a.winning_score = {0.75, 0.5};
    a.tie_flag = {false, true};
    auto j = alignment_to_json(a, Metric::Rouge2, build_page_targets(a, 3));
    auto rec = alignment_from_json(j);
    CHECK(rec.alignment.doc_id == "d9");
    CHECK(rec.metric == Metric::Rouge2);
    CHECK(rec.alignment.assignment == a.assignment);
    CHECK(rec.alignment.tie_flag == a.tie_flag);
    CHECK(rec.page_targets.size() == 3);
    CHECK(rec.page_targets[2].sentence_indices == std::vector<std::size_t>{0});
}
