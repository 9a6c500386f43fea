#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "pts/model.hpp"

using namespace pts;
using namespace pts::model;

namespace {

ModelConfig tiny_config(std::size_t vocab = 40, std::size_t d = 8, std::uint64_t seed = 42) {
    ModelConfig c;
    c.vocab_size = vocab;
    c.embed_dim = d;
    c.hidden_dim = d;
    c.max_target_len = 32;
    c.seed = seed;
    return c;
}

PreparedDocument two_page_doc() {
    PreparedDocument doc;
    doc.doc_id = "doc";
    doc.page_tokens = {{10, 11, 12, 13, 14, 15}, {20, 21, 22, 23}};
    doc.page_targets = {{10, 12, 30}, {21, 23}};
    doc.assigned_counts = {1, 1};
    doc.teacher = {0.7, 0.3};
    return doc;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
    auto ta = a.tensors(), tb = b.tensors();
    for (std::size_t i = 0; i < ta.size(); ++i) {
        if (ta[i]->v != tb[i]->v) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("init_params is reproducible and seed-sensitive") {
    auto cfg = tiny_config();
    auto a = init_params(cfg);
    auto b = init_params(cfg);
    CHECK(params_equal(a, b));

    for (double w : a.out_bias.v) CHECK(w == 0.0);

    auto cfg2 = cfg;
    cfg2.seed = 43;
    auto c = init_params(cfg2);
    CHECK_FALSE(params_equal(a, c));

    for (const Tensor* t : a.tensors()) {
        for (double w : t->v) {
            CHECK(w <= cfg.init_scale);
            CHECK(w >= -cfg.init_scale);
        }
    }
}

TEST_CASE("encode_page singleton page is the value projection of its embedding") {
    auto params = init_params(tiny_config());
    auto pe = encode_page(params, {7});
    const std::size_t d = params.config.embed_dim;
    std::vector<double> x(params.embedding.v.begin() + 7 * d, params.embedding.v.begin() + 8 * d);
    for (std::size_t i = 0; i < d; ++i) {
        double expect = 0.0;
        for (std::size_t c = 0; c < d; ++c) expect += params.enc_value.at(i, c) * x[c];
        CHECK(pe.pooled[i] == Catch::Approx(expect).margin(1e-15));
    }
}

TEST_CASE("page encodings are local") {
    auto params = init_params(tiny_config());
    std::vector<std::size_t> page_a = {10, 11, 12};
    auto enc_before = encode_page(params, page_a);
    // changing another page cannot touch this page's encoding: encode_page
    // takes only its own tokens, so equality must be bitwise
    auto enc_again = encode_page(params, page_a);
    CHECK(enc_before.pooled == enc_again.pooled);
    for (std::size_t t = 0; t < enc_before.enc.size(); ++t) {
        CHECK(enc_before.enc[t] == enc_again.enc[t]);
    }

    // decoder states of page a are untouched by page b's content
    auto other1 = encode_page(params, {20, 21});
    auto other2 = encode_page(params, {22, 23, 24, 25});
    auto step1 = decode_step(params, enc_before, kBos);
    (void)other1;
    (void)other2;
    auto step2 = decode_step(params, enc_before, kBos);
    CHECK(step1.state == step2.state);
}

TEST_CASE("confidence_weights properties") {
    auto params = init_params(tiny_config());
    SECTION("single page gives (1.0)") {
        auto pe = encode_page(params, {5, 6});
        auto c = confidence_weights(params, {pe.pooled});
        REQUIRE(c.size() == 1);
        CHECK(c[0] == 1.0);
    }
    SECTION("identical pages give uniform weights") {
        auto pe = encode_page(params, {5, 6, 7});
        auto c = confidence_weights(params, {pe.pooled, pe.pooled, pe.pooled});
        for (double w : c) CHECK(w == Catch::Approx(1.0 / 3.0).margin(1e-12));
    }
    SECTION("zero confidence vector gives uniform weights") {
        auto p2 = params;
        std::fill(p2.confidence.v.begin(), p2.confidence.v.end(), 0.0);
        auto a = encode_page(p2, {5, 6});
        auto b = encode_page(p2, {8, 9, 10});
        auto c = confidence_weights(p2, {a.pooled, b.pooled});
        CHECK(c[0] == Catch::Approx(0.5).margin(1e-15));
        CHECK(c[1] == Catch::Approx(0.5).margin(1e-15));
    }
}

TEST_CASE("fused_next_token_dist identities") {
    auto params = init_params(tiny_config());
    auto pe = encode_page(params, {5, 6, 7});
    auto step = decode_step(params, pe, kBos);

    SECTION("single page fusion is bit-identical to the page distribution") {
        auto fused = fused_next_token_dist(params, {step.state}, {1.0});
        auto direct = distill::stable_softmax(output_logits(params, step.state));
        for (std::size_t v = 0; v < fused.size(); ++v) CHECK(fused[v] == direct[v]);
    }
    SECTION("identical states under any valid weights") {
        auto fused = fused_next_token_dist(params, {step.state, step.state, step.state}, {0.2, 0.5, 0.3});
        auto direct = distill::stable_softmax(output_logits(params, step.state));
        for (std::size_t v = 0; v < fused.size(); ++v) {
            CHECK(fused[v] == Catch::Approx(direct[v]).margin(1e-12));
        }
    }
    SECTION("opposite states cancel to the bias distribution") {
        std::vector<double> h1 = step.state, h2 = step.state;
        for (double& x : h2) x = -x;
        auto fused = fused_next_token_dist(params, {h1, h2}, {0.5, 0.5});
        auto bias_only = distill::stable_softmax(
            std::vector<double>(params.out_bias.v.begin(), params.out_bias.v.end()));
        for (std::size_t v = 0; v < fused.size(); ++v) {
            CHECK(fused[v] == Catch::Approx(bias_only[v]).margin(1e-15));
        }
    }
    SECTION("weights must sum to one") {
        CHECK_THROWS_AS(fused_next_token_dist(params, {step.state, step.state}, {0.6, 0.6}),
                        ValidationError);
    }
    SECTION("every fused output is a valid distribution") {
        Rng rng(4);
        auto pe2 = encode_page(params, {9, 10, 11, 12});
        for (int trial = 0; trial < 50; ++trial) {
            auto s1 = decode_step(params, pe, rng.next_below(params.config.vocab_size));
            auto s2 = decode_step(params, pe2, rng.next_below(params.config.vocab_size));
            double w = rng.next_double();
            auto fused = fused_next_token_dist(params, {s1.state, s2.state}, {w, 1.0 - w});
            double sum = 0.0;
            for (double p : fused) {
                REQUIRE(p >= 0.0);
                sum += p;
            }
            REQUIRE(sum == Catch::Approx(1.0).margin(1e-9));
        }
    }
}

TEST_CASE("teacher-forced decode shapes and untrained entropy") {
    auto params = init_params(tiny_config(50, 8));
    auto pe = encode_page(params, {10, 11, 12, 13});

    SECTION("empty target decodes EOS in a single step") {
        auto r = decode_page_teacher_forced(params, pe, {});
        REQUIRE(r.steps.size() == 1);
        REQUIRE(r.targets == std::vector<std::size_t>{kEos});
        CHECK(r.xent == Catch::Approx(-std::log(r.probs[0][kEos])).margin(1e-12));
    }
    SECTION("untrained xent is close to ln(vocab)") {
        auto r = decode_page_teacher_forced(params, pe, {10, 12, 14, 16, 18});
        CHECK(r.xent == Catch::Approx(std::log(50.0)).epsilon(0.10));
    }
    SECTION("overlong targets truncate with a flag") {
        std::vector<std::size_t> target(100, 10);
        auto r = decode_page_teacher_forced(params, pe, target);
        CHECK(r.truncated);
        CHECK(r.steps.size() == params.config.max_target_len);
    }
}

TEST_CASE("gradient check passes at all lambda settings") {
    auto cfg = tiny_config(50, 8);
    cfg.init_scale = 0.8;  // keeps every gradient well above the error guard
    auto params = init_params(cfg);
    auto doc = two_page_doc();
    for (double lambda : {0.0, 0.1, 1.0}) {
        auto r = grad_check(params, doc, 1e-5, lambda, 200, 1234);
        INFO("lambda " << lambda << " worst " << r.worst_parameter);
        CHECK(r.max_rel_error <= 1e-4);
    }
}

TEST_CASE("gradient check fails under a corrupted gradient") {
    auto cfg = tiny_config(50, 8);
    cfg.init_scale = 0.8;
    auto params = init_params(cfg);
    auto r = grad_check(params, two_page_doc(), 1e-5, 0.1, 200, 1234, /*corrupt=*/true);
    CHECK(r.max_rel_error > 1e-4);
    CHECK_FALSE(r.worst_parameter.empty());
}

TEST_CASE("lambda zero sends no gradient to the confidence head") {
    auto params = init_params(tiny_config());
    auto doc = two_page_doc();
    TrainConfig tcfg;
    tcfg.lambda = 0.0;
    Gradients grads(params.config);
    grads.zero();
    compute_batch(params, {doc}, tcfg, &grads);
    for (double g : grads.shadow.confidence.v) CHECK(g == 0.0);

    tcfg.lambda = 0.1;
    grads.zero();
    compute_batch(params, {doc}, tcfg, &grads);
    double sum = 0.0;
    for (double g : grads.shadow.confidence.v) sum += std::abs(g);
    CHECK(sum > 0.0);
}

TEST_CASE("training is deterministic given seed and batch order") {
    auto cfg = tiny_config();
    auto doc = two_page_doc();
    TrainConfig tcfg;
    auto run = [&] {
        auto params = init_params(cfg);
        AdamState adam(cfg);
        Gradients grads(cfg);
        for (int step = 0; step < 25; ++step) train_step(params, {doc}, tcfg, adam, grads);
        return params;
    };
    auto a = run();
    auto b = run();
    CHECK(params_equal(a, b));
}

TEST_CASE("overfitting one batch halves the loss and mostly decreases") {
    auto cfg = tiny_config(40, 16);
    auto params = init_params(cfg);
    auto doc = two_page_doc();
    TrainConfig tcfg;
    tcfg.learning_rate = 5e-3;
    AdamState adam(cfg);
    Gradients grads(cfg);

    double first = 0.0, last = 0.0, prev = 0.0;
    int increases = 0;
    const int steps = 500;
    for (int step = 0; step < steps; ++step) {
        auto bl = train_step(params, {doc}, tcfg, adam, grads);
        if (step == 0) first = bl.loss.total;
        if (step > 0 && bl.loss.total > prev) ++increases;
        prev = bl.loss.total;
        last = bl.loss.total;
    }
    CHECK(last < 0.5 * first);
    CHECK(increases <= steps / 20);  // monotone decrease violated in at most 5% of steps

    // page-level xent after overfitting is small
    auto pe = encode_page(params, doc.page_tokens[0]);
    auto r = decode_page_teacher_forced(params, pe, doc.page_targets[0]);
    CHECK(r.xent < 0.1);
}

TEST_CASE("generation respects max_len and single-page collapse") {
    auto params = init_params(tiny_config());
    std::vector<std::vector<std::size_t>> pages = {{10, 11, 12, 13}};

    SECTION("budget of one emits at most one token") {
        auto gen = generate_summary(params, pages, 1);
        CHECK(gen.tokens.size() <= 1);
    }
    SECTION("single page equals plain greedy decoding") {
        auto gen = generate_summary(params, pages, 8);
        // manual greedy loop over the single page
        auto pe = encode_page(params, pages[0]);
        std::vector<std::size_t> manual;
        std::size_t prev = kBos;
        for (int i = 0; i < 8; ++i) {
            auto step = decode_step(params, pe, prev);
            auto probs = distill::stable_softmax(output_logits(params, step.state));
            std::size_t best = 0;
            for (std::size_t v = 1; v < probs.size(); ++v) {
                if (probs[v] > probs[best]) best = v;
            }
            if (best == kEos) break;
            manual.push_back(best);
            prev = best;
        }
        CHECK(gen.tokens == manual);
        CHECK(gen.confidence == std::vector<double>{1.0});
    }
}

TEST_CASE("overfit model reproduces its training summary token-exactly") {
    // single-page document: the aligned target is the whole summary
    auto cfg = tiny_config(24, 16);
    cfg.max_target_len = 16;
    auto params = init_params(cfg);

    PreparedDocument doc;
    doc.doc_id = "one";
    doc.page_tokens = {{10, 11, 12, 13, 14, 15, 16, 17}};
    doc.page_targets = {{10, 12, 14, 16, 11, 13}};
    doc.assigned_counts = {2};
    doc.teacher = {1.0};
    doc.summary_tokens = doc.page_targets[0];

    TrainConfig tcfg;
    tcfg.learning_rate = 5e-3;
    AdamState adam(cfg);
    Gradients grads(cfg);
    for (int step = 0; step < 500; ++step) train_step(params, {doc}, tcfg, adam, grads);

    auto gen = generate_summary(params, doc.page_tokens, 16);
    CHECK(gen.tokens == doc.summary_tokens);
}

TEST_CASE("checkpoint round trip is bit-exact") {
    auto cfg = tiny_config();
    auto params = init_params(cfg);
    std::vector<std::string> vocab;
    for (std::size_t i = 0; i < cfg.vocab_size; ++i) vocab.push_back("tok" + std::to_string(i));

    auto path = (std::filesystem::temp_directory_path() / "pts_ck.bin").string();
    save_checkpoint(params, path, vocab);
    auto ck = load_checkpoint(path);
    CHECK(params_equal(params, ck.params));
    CHECK(ck.vocab == vocab);

    std::vector<std::vector<std::size_t>> pages = {{10, 11, 12}, {13, 14}};
    auto before = generate_summary(params, pages, 12);
    auto after = generate_summary(ck.params, pages, 12);
    CHECK(before.tokens == after.tokens);
    CHECK(before.confidence == after.confidence);
}
