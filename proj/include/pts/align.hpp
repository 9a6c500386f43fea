#pragma once

// Sentence-to-page alignment: score every (page, summary sentence) pair
// under a similarity metric, assign each sentence to its argmax page and
// materialize the page-specific reference summaries.

#include <string>
#include <vector>

#include <json.hpp>

#include "pts/common.hpp"
#include "pts/corpus.hpp"
#include "pts/embed.hpp"
#include "pts/metrics.hpp"

namespace pts::align {

enum class Metric { EmbedCosine, Rouge1, Rouge2, RougeL };

inline std::string metric_name(Metric m) {
    switch (m) {
        case Metric::EmbedCosine: return "embed-cosine";
        case Metric::Rouge1: return "rouge1";
        case Metric::Rouge2: return "rouge2";
        case Metric::RougeL: return "rougeL";
    }
    return "?";
}

inline Metric metric_from_name(const std::string& name) {
    if (name == "embed-cosine") return Metric::EmbedCosine;
    if (name == "rouge1") return Metric::Rouge1;
    if (name == "rouge2") return Metric::Rouge2;
    if (name == "rougeL") return Metric::RougeL;
    throw ValidationError("unknown alignment metric: " + name);
}

struct ScoreMatrix {
    std::string doc_id;
    Metric metric = Metric::EmbedCosine;
    std::size_t rows = 0;                     // summary sentence count
    std::size_t cols = 0;                     // page count
    std::vector<std::vector<double>> scores;  // rows x cols
};

struct Alignment {
    std::string doc_id;
    std::vector<std::size_t> assignment;  // winning page per summary sentence
    std::vector<double> winning_score;
    std::vector<bool> tie_flag;
};

struct PageTarget {
    std::size_t page_index = 0;
    std::vector<std::size_t> sentence_indices;  // summary sentence ordinals, original order
};

// scores[k][j] = sim(page j, summary sentence k). ROUGE metrics use the
// sentence as candidate and the page text as reference, F1 variant.
inline ScoreMatrix score_matrix(const corpus::PaginatedDocument& doc,
                                const std::vector<std::vector<std::string>>& summary_sentences, Metric metric,
                                const embed::EmbedderState* embedder = nullptr) {
    if (doc.pages.empty()) throw ValidationError("score_matrix: document has no pages");
    if (metric == Metric::EmbedCosine && embedder == nullptr) {
        throw ValidationError("embed-cosine alignment requires a fitted embedder");
    }

    ScoreMatrix m;
    m.doc_id = doc.doc_id;
    m.metric = metric;
    m.rows = summary_sentences.size();
    m.cols = doc.pages.size();
    m.scores.assign(m.rows, std::vector<double>(m.cols, 0.0));

    std::vector<std::vector<std::string>> page_texts;
    page_texts.reserve(doc.pages.size());
    for (std::size_t j = 0; j < doc.pages.size(); ++j) page_texts.push_back(doc.page_tokens(j));

    if (metric == Metric::EmbedCosine) {
        std::vector<embed::Embedding> page_vecs;
        page_vecs.reserve(page_texts.size());
        for (const auto& toks : page_texts) page_vecs.push_back(embed::embed_text(*embedder, toks));
        for (std::size_t k = 0; k < m.rows; ++k) {
            embed::Embedding sent = embed::embed_text(*embedder, summary_sentences[k]);
            for (std::size_t j = 0; j < m.cols; ++j) m.scores[k][j] = embed::cosine(sent, page_vecs[j]);
        }
        return m;
    }

    for (std::size_t k = 0; k < m.rows; ++k) {
        for (std::size_t j = 0; j < m.cols; ++j) {
            switch (metric) {
                case Metric::Rouge1: m.scores[k][j] = metrics::rouge_n(summary_sentences[k], page_texts[j], 1).f1; break;
                case Metric::Rouge2: m.scores[k][j] = metrics::rouge_n(summary_sentences[k], page_texts[j], 2).f1; break;
                case Metric::RougeL: m.scores[k][j] = metrics::rouge_l(summary_sentences[k], page_texts[j]).f1; break;
                default: break;
            }
        }
    }
    return m;
}

// Argmax per row; ties resolve to the lowest page index and are flagged.
inline Alignment assign_sentences(const ScoreMatrix& m) {
    Alignment a;
    a.doc_id = m.doc_id;
    for (std::size_t k = 0; k < m.rows; ++k) {
        std::size_t best = 0;
        bool tie = false;
        for (std::size_t j = 1; j < m.cols; ++j) {
            if (m.scores[k][j] > m.scores[k][best]) {
                best = j;
                tie = false;
            } else if (m.scores[k][j] == m.scores[k][best]) {
                tie = true;
            }
        }
        a.assignment.push_back(best);
        a.winning_score.push_back(m.scores[k][best]);
        a.tie_flag.push_back(tie);
    }
    return a;
}

// Groups assigned sentence ordinals per page, preserving summary order.
// The result is an order-preserving partition of the summary sentences.
inline std::vector<PageTarget> build_page_targets(const Alignment& alignment, std::size_t page_count) {
    std::vector<PageTarget> targets(page_count);
    for (std::size_t j = 0; j < page_count; ++j) targets[j].page_index = j;
    for (std::size_t k = 0; k < alignment.assignment.size(); ++k) {
        std::size_t page = alignment.assignment[k];
        if (page >= page_count) throw ValidationError("alignment references page beyond document");
        targets[page].sentence_indices.push_back(k);
    }
    return targets;
}

inline double alignment_accuracy(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& gold) {
    if (predicted.size() != gold.size()) throw ValidationError("alignment_accuracy: sentence count mismatch");
    if (predicted.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t k = 0; k < predicted.size(); ++k) hits += predicted[k] == gold[k] ? 1u : 0u;
    return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

inline nlohmann::json alignment_to_json(const Alignment& a, Metric metric,
                                        const std::vector<PageTarget>& targets) {
    nlohmann::json page_targets = nlohmann::json::array();
    for (const auto& t : targets) page_targets.push_back(t.sentence_indices);
    std::vector<bool> ties(a.tie_flag.begin(), a.tie_flag.end());
    return {{"doc_id", a.doc_id},
            {"metric", metric_name(metric)},
            {"assignment", a.assignment},
            {"winning_scores", a.winning_score},
            {"tie_flags", ties},
            {"page_targets", page_targets}};
}

struct AlignmentRecord {
    Alignment alignment;
    Metric metric = Metric::EmbedCosine;
    std::vector<PageTarget> page_targets;
};

inline AlignmentRecord alignment_from_json(const nlohmann::json& j) {
    AlignmentRecord rec;
    rec.alignment.doc_id = j.at("doc_id").get<std::string>();
    rec.metric = metric_from_name(j.at("metric").get<std::string>());
    rec.alignment.assignment = j.at("assignment").get<std::vector<std::size_t>>();
    rec.alignment.winning_score = j.at("winning_scores").get<std::vector<double>>();
    rec.alignment.tie_flag = j.at("tie_flags").get<std::vector<bool>>();
    const auto& pt = j.at("page_targets");
    for (std::size_t p = 0; p < pt.size(); ++p) {
        PageTarget t;
        t.page_index = p;
        t.sentence_indices = pt[p].get<std::vector<std::size_t>>();
        rec.page_targets.push_back(std::move(t));
    }
    return rec;
}

}  // namespace pts::align
