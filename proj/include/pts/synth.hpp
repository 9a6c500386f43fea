#pragma once

// Synthetic corpora with known sentence-to-page alignment and known page
// importance. Page j draws from its own vocabulary slice, so cross-page
// similarity is near zero; summary sentences are perturbed copies of
// uniformly chosen document sentences. Within a slice the words follow a
// fixed cyclic order and each sentence is a window at a random offset,
// which gives the corpus stable token-to-token structure a small model can
// actually learn.

#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pts/common.hpp"
#include "pts/corpus.hpp"

namespace pts::synth {

struct SynthSpec {
    std::size_t num_docs = 10;
    std::size_t pages_per_doc = 4;
    std::size_t sentences_per_page = 5;
    std::size_t sentence_len = 6;  // content tokens per sentence, terminator excluded
    std::size_t summary_sentences_per_doc = 3;
    double noise = 0.0;  // per-token in-slice resampling probability
    std::size_t vocab_size = 48;
    std::uint64_t seed = 1;
};

struct GoldAlignment {
    std::string doc_id;
    std::vector<std::size_t> source_page;      // per summary sentence
    std::vector<std::size_t> source_sentence;  // document sentence ordinal
    std::vector<std::size_t> counts;           // summary sentences per page
};

struct SynthCorpus {
    std::vector<corpus::RawDocument> docs;
    std::vector<GoldAlignment> gold;
};

namespace detail {

inline std::string word(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "W%04zu", index);
    return buf;
}

inline void validate(const SynthSpec& spec) {
    if (spec.num_docs < 1 || spec.pages_per_doc < 1 || spec.sentences_per_page < 1 ||
        spec.sentence_len < 1 || spec.summary_sentences_per_doc < 1) {
        throw ValidationError("synth spec fields must be positive");
    }
    if (spec.noise < 0.0 || spec.noise > 1.0) throw ValidationError("synth noise must lie in [0, 1]");
    if (spec.summary_sentences_per_doc > spec.pages_per_doc * spec.sentences_per_page) {
        throw ValidationError("summary cannot have more sentences than the document");
    }
    if (spec.vocab_size / spec.pages_per_doc < 2) {
        throw ValidationError("vocab too small for disjoint per-page slices");
    }
}

}  // namespace detail

inline std::size_t slice_size(const SynthSpec& spec) { return spec.vocab_size / spec.pages_per_doc; }

// Word indices available to page `page`.
inline std::vector<std::size_t> slice_indices(const SynthSpec& spec, std::size_t page) {
    std::size_t s = slice_size(spec);
    std::vector<std::size_t> out(s);
    for (std::size_t i = 0; i < s; ++i) out[i] = page * s + i;
    return out;
}

// Replaces each token independently with probability `noise` by a uniform
// draw from `slice_words`. Length is always preserved.
inline std::vector<std::string> perturb(const std::vector<std::string>& tokens, double noise, Rng& rng,
                                        const std::vector<std::string>& slice_words) {
    if (noise < 0.0 || noise > 1.0) throw ValidationError("perturb noise must lie in [0, 1]");
    std::vector<std::string> out = tokens;
    for (auto& tok : out) {
        if (rng.next_double() < noise) {
            tok = slice_words[rng.next_below(slice_words.size())];
        }
    }
    return out;
}

// One raw document plus its gold alignment; stream index selects the
// per-document RNG stream.
inline std::pair<corpus::RawDocument, GoldAlignment> generate_document(const SynthSpec& spec,
                                                                       std::size_t doc_index) {
    detail::validate(spec);
    Rng rng(derive_seed(spec.seed, doc_index));
    const std::size_t s = slice_size(spec);

    // content words per sentence, in raw (uppercase) form
    std::vector<std::vector<std::string>> sentence_words;
    std::vector<std::size_t> sentence_page;
    for (std::size_t page = 0; page < spec.pages_per_doc; ++page) {
        for (std::size_t k = 0; k < spec.sentences_per_page; ++k) {
            std::size_t offset = rng.next_below(s);
            std::vector<std::string> words;
            words.reserve(spec.sentence_len);
            for (std::size_t t = 0; t < spec.sentence_len; ++t) {
                words.push_back(detail::word(page * s + (offset + t) % s));
            }
            sentence_words.push_back(std::move(words));
            sentence_page.push_back(page);
        }
    }

    auto render = [](const std::vector<std::string>& words) {
        std::string text;
        for (std::size_t i = 0; i < words.size(); ++i) {
            if (i) text += ' ';
            text += words[i];
        }
        text += '.';
        return text;
    };

    corpus::RawDocument doc;
    char id[32];
    std::snprintf(id, sizeof(id), "synth-%06zu", doc_index);
    doc.id = id;
    for (std::size_t i = 0; i < sentence_words.size(); ++i) {
        if (i) doc.article += ' ';
        doc.article += render(sentence_words[i]);
    }

    GoldAlignment gold;
    gold.doc_id = doc.id;
    gold.counts.assign(spec.pages_per_doc, 0);
    for (std::size_t m = 0; m < spec.summary_sentences_per_doc; ++m) {
        std::size_t src = rng.next_below(sentence_words.size());
        std::size_t page = sentence_page[src];
        std::vector<std::string> slice_words;
        for (std::size_t idx : slice_indices(spec, page)) slice_words.push_back(detail::word(idx));
        std::vector<std::string> copied = perturb(sentence_words[src], spec.noise, rng, slice_words);
        if (m) doc.abstract += ' ';
        doc.abstract += render(copied);
        gold.source_page.push_back(page);
        gold.source_sentence.push_back(src);
        ++gold.counts[page];
    }
    return {std::move(doc), std::move(gold)};
}

inline SynthCorpus generate_corpus(const SynthSpec& spec) {
    detail::validate(spec);
    auto rows = parallel_map<std::pair<corpus::RawDocument, GoldAlignment>>(
        spec.num_docs, [&](std::size_t i) { return generate_document(spec, i); });
    SynthCorpus out;
    out.docs.reserve(rows.size());
    out.gold.reserve(rows.size());
    for (auto& [doc, gold] : rows) {
        out.docs.push_back(std::move(doc));
        out.gold.push_back(std::move(gold));
    }
    return out;
}

inline nlohmann::json gold_to_json(const GoldAlignment& g) {
    return {{"doc_id", g.doc_id},
            {"gold_assignment", g.source_page},
            {"gold_source_sentences", g.source_sentence},
            {"gold_counts", g.counts}};
}

inline GoldAlignment gold_from_json(const nlohmann::json& j) {
    GoldAlignment g;
    g.doc_id = j.at("doc_id").get<std::string>();
    g.source_page = j.at("gold_assignment").get<std::vector<std::size_t>>();
    if (j.contains("gold_source_sentences")) {
        g.source_sentence = j.at("gold_source_sentences").get<std::vector<std::size_t>>();
    }
    g.counts = j.at("gold_counts").get<std::vector<std::size_t>>();
    return g;
}

// Page limit that makes pagination reproduce the generator's page layout:
// every sentence tokenizes to sentence_len + 1 tokens (the terminator).
inline std::size_t matching_page_limit(const SynthSpec& spec) {
    return spec.sentences_per_page * (spec.sentence_len + 1);
}

}  // namespace pts::synth
