#pragma once

// Native ROUGE-1/2/L (F1) over lowercased token sequences, a deterministic
// embedding-based F-score, and corpus-level aggregation.

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "pts/common.hpp"
#include "pts/embed.hpp"

namespace pts::metrics {

struct RougeScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

inline RougeScore make_score(double overlap, double cand_total, double ref_total) {
    RougeScore s;
    s.precision = cand_total > 0.0 ? overlap / cand_total : 0.0;
    s.recall = ref_total > 0.0 ? overlap / ref_total : 0.0;
    s.f1 = (s.precision + s.recall) > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    return s;
}

// Clipped n-gram overlap, n in {1, 2}. Tokens are compared verbatim; the
// corpus tokenizer has already lowercased them.
inline RougeScore rouge_n(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
                          std::size_t n) {
    if (n < 1 || n > 2) throw ValidationError("rouge_n supports n in {1, 2}");
    auto grams = [n](const std::vector<std::string>& toks) {
        std::map<std::string, std::size_t> counts;
        if (toks.size() + 1 > n) {
            for (std::size_t i = 0; i + n <= toks.size(); ++i) {
                std::string key = toks[i];
                for (std::size_t k = 1; k < n; ++k) {
                    key += '\x1f';
                    key += toks[i + k];
                }
                ++counts[key];
            }
        }
        return counts;
    };
    auto cand = grams(candidate);
    auto ref = grams(reference);
    std::size_t overlap = 0, cand_total = 0, ref_total = 0;
    for (const auto& [g, c] : cand) cand_total += c;
    for (const auto& [g, c] : ref) ref_total += c;
    for (const auto& [g, c] : cand) {
        auto it = ref.find(g);
        if (it != ref.end()) overlap += std::min(c, it->second);
    }
    return make_score(static_cast<double>(overlap), static_cast<double>(cand_total),
                      static_cast<double>(ref_total));
}

// Longest common subsequence length, bottom-up.
inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    if (a.empty() || b.empty()) return 0;
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

inline RougeScore rouge_l(const std::vector<std::string>& candidate, const std::vector<std::string>& reference) {
    double lcs = static_cast<double>(lcs_length(candidate, reference));
    return make_score(lcs, static_cast<double>(candidate.size()), static_cast<double>(reference.size()));
}

// Greedy token-matching F-score: precision is the mean over candidate
// tokens of the best cosine against any reference token, recall the mirror
// image. Token vectors come from the embedder applied to single tokens.
inline RougeScore embed_f1(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
                           const embed::EmbedderState& embedder, bool* flagged = nullptr) {
    if (flagged) *flagged = false;
    if (candidate.empty() || reference.empty()) return {};

    auto embed_all = [&](const std::vector<std::string>& toks) {
        std::vector<embed::Embedding> out;
        out.reserve(toks.size());
        for (const auto& t : toks) out.push_back(embed::embed_text(embedder, {t}));
        return out;
    };
    auto cand = embed_all(candidate);
    auto ref = embed_all(reference);

    bool all_zero_cand = true, all_zero_ref = true;
    for (const auto& e : cand) all_zero_cand = all_zero_cand && e.zero;
    for (const auto& e : ref) all_zero_ref = all_zero_ref && e.zero;
    if (all_zero_cand || all_zero_ref) {
        if (flagged) *flagged = true;
        return {};
    }

    auto greedy = [](const std::vector<embed::Embedding>& from, const std::vector<embed::Embedding>& to) {
        double sum = 0.0;
        for (const auto& u : from) {
            double best = 0.0;
            for (const auto& v : to) best = std::max(best, static_cast<double>(embed::cosine(u, v)));
            sum += best;
        }
        return sum / static_cast<double>(from.size());
    };
    double p = greedy(cand, ref);
    double r = greedy(ref, cand);
    RougeScore s;
    s.precision = p;
    s.recall = r;
    s.f1 = (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    return s;
}

struct DocScores {
    std::string doc_id;
    RougeScore rouge1, rouge2, rougeL, embed;
};

struct CorpusReport {
    std::vector<DocScores> per_doc;
    double mean_rouge1 = 0.0, mean_rouge2 = 0.0, mean_rougeL = 0.0, mean_embed = 0.0;

    std::size_t n_docs() const { return per_doc.size(); }
};

// Scores system summaries against references matched by doc id. Any id
// present on one side only is an error naming the symmetric difference.
inline CorpusReport corpus_report(const std::map<std::string, std::vector<std::string>>& system,
                                  const std::map<std::string, std::vector<std::string>>& references,
                                  const embed::EmbedderState& embedder) {
    std::string missing;
    for (const auto& [id, toks] : system) {
        if (!references.count(id)) missing += " system-only:" + id;
    }
    for (const auto& [id, toks] : references) {
        if (!system.count(id)) missing += " reference-only:" + id;
    }
    if (!missing.empty()) throw ValidationError("doc id mismatch between system and references:" + missing);

    CorpusReport report;
    std::vector<const std::string*> ids;
    for (const auto& [id, toks] : system) ids.push_back(&id);
    auto scored = parallel_map<DocScores>(ids.size(), [&](std::size_t i) {
        const std::string& id = *ids[i];
        DocScores d;
        d.doc_id = id;
        const auto& cand = system.at(id);
        const auto& ref = references.at(id);
        d.rouge1 = rouge_n(cand, ref, 1);
        d.rouge2 = rouge_n(cand, ref, 2);
        d.rougeL = rouge_l(cand, ref);
        d.embed = embed_f1(cand, ref, embedder);
        return d;
    });
    report.per_doc = std::move(scored);
    for (const auto& d : report.per_doc) {
        report.mean_rouge1 += d.rouge1.f1;
        report.mean_rouge2 += d.rouge2.f1;
        report.mean_rougeL += d.rougeL.f1;
        report.mean_embed += d.embed.f1;
    }
    if (!report.per_doc.empty()) {
        double n = static_cast<double>(report.per_doc.size());
        report.mean_rouge1 /= n;
        report.mean_rouge2 /= n;
        report.mean_rougeL /= n;
        report.mean_embed /= n;
    }
    return report;
}

inline nlohmann::json score_to_json(const RougeScore& s) {
    return {{"p", s.precision}, {"r", s.recall}, {"f1", s.f1}};
}

inline nlohmann::json report_to_json(const CorpusReport& r) {
    nlohmann::json per_doc = nlohmann::json::array();
    for (const auto& d : r.per_doc) {
        per_doc.push_back({{"doc_id", d.doc_id},
                           {"rouge1", score_to_json(d.rouge1)},
                           {"rouge2", score_to_json(d.rouge2)},
                           {"rougeL", score_to_json(d.rougeL)},
                           {"embed_f1", score_to_json(d.embed)}});
    }
    return {{"n_docs", r.n_docs()},
            {"means",
             {{"rouge1", r.mean_rouge1},
              {"rouge2", r.mean_rouge2},
              {"rougeL", r.mean_rougeL},
              {"embed_f1", r.mean_embed}}},
            {"per_doc", per_doc}};
}

}  // namespace pts::metrics
