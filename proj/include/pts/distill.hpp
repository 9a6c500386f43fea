#pragma once

// Page-importance distillation: teacher distribution from provisional page
// summaries, student distributions, KL distillation loss, combined loss.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pts/align.hpp"
#include "pts/common.hpp"
#include "pts/corpus.hpp"
#include "pts/embed.hpp"

namespace pts::distill {

constexpr double kStudentFloor = 1e-8;  // KL guard for zero student mass

// Softmax with max subtraction.
inline std::vector<double> stable_softmax(const std::vector<double>& logits) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

struct TeacherDistribution {
    std::string doc_id;
    std::vector<double> alphas;  // per-page similarity to the gold summary
    std::vector<double> probs;
    double temperature = 1.0;
    bool degenerate = false;  // gold summary had a zero embedding -> uniform
};

enum class StudentSource { ConfidenceHead, SentenceCount };

inline std::string student_source_name(StudentSource s) {
    return s == StudentSource::ConfidenceHead ? "confidence-head" : "sentence-count";
}

inline StudentSource student_source_from_name(const std::string& name) {
    if (name == "confidence-head") return StudentSource::ConfidenceHead;
    if (name == "sentence-count") return StudentSource::SentenceCount;
    throw ValidationError("unknown student source: " + name);
}

struct StudentDistribution {
    std::string doc_id;
    std::vector<double> probs;
    StudentSource source = StudentSource::SentenceCount;
};

struct LossBreakdown {
    double xent = 0.0;    // mean per-token cross-entropy, nats
    double kl = 0.0;      // KL(teacher || student), nats
    double lambda = 0.0;  // distillation weight
    double total = 0.0;   // (1 - lambda) * xent + lambda * kl
};

enum class ProvisionalMode { ExtractiveTopK, WholePage };

inline std::string provisional_mode_name(ProvisionalMode m) {
    return m == ProvisionalMode::ExtractiveTopK ? "extractive-topk" : "whole-page";
}

inline ProvisionalMode provisional_mode_from_name(const std::string& name) {
    if (name == "extractive-topk") return ProvisionalMode::ExtractiveTopK;
    if (name == "whole-page") return ProvisionalMode::WholePage;
    throw ValidationError("unknown provisional mode: " + name);
}

// Provisional summary for one page. extractive-topk keeps the k page
// sentences closest to the whole gold summary (ties to the earlier
// sentence), emitted in page order; whole-page returns the page verbatim.
inline std::vector<std::string> provisional_page_summary(const corpus::PaginatedDocument& doc,
                                                         std::size_t page_index,
                                                         const std::vector<std::string>& gold_tokens,
                                                         ProvisionalMode mode, std::size_t k,
                                                         const embed::EmbedderState& embedder) {
    const corpus::Page& page = doc.pages.at(page_index);
    if (mode == ProvisionalMode::WholePage) return doc.page_tokens(page_index);

    std::vector<std::size_t> sentence_ids;
    for (std::size_t s = page.sent_begin; s < page.sent_end; ++s) sentence_ids.push_back(s);
    if (sentence_ids.size() > k) {
        embed::Embedding gold = embed::embed_text(embedder, gold_tokens);
        std::vector<std::pair<double, std::size_t>> ranked;
        ranked.reserve(sentence_ids.size());
        for (std::size_t s : sentence_ids) {
            double score = embed::cosine(embed::embed_text(embedder, doc.sentence_tokens(s)), gold);
            ranked.emplace_back(score, s);
        }
        std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        ranked.resize(k);
        sentence_ids.clear();
        for (const auto& [score, s] : ranked) sentence_ids.push_back(s);
        std::sort(sentence_ids.begin(), sentence_ids.end());  // back to page order
    }

    std::vector<std::string> out;
    for (std::size_t s : sentence_ids) {
        auto toks = doc.sentence_tokens(s);
        out.insert(out.end(), toks.begin(), toks.end());
    }
    return out;
}

// alpha_j = cos(embed(provisional_j), embed(gold)); T = softmax(alpha / tau).
// A zero-vector gold embedding degenerates to the uniform distribution.
inline TeacherDistribution teacher_distribution(const std::vector<std::vector<std::string>>& provisionals,
                                                const std::vector<std::string>& gold_tokens,
                                                const embed::EmbedderState& embedder, double temperature = 1.0,
                                                const std::string& doc_id = {}) {
    if (provisionals.empty()) throw ValidationError("teacher_distribution: no pages");
    if (!(temperature > 0.0)) throw ValidationError("teacher temperature must be positive");

    TeacherDistribution t;
    t.doc_id = doc_id;
    t.temperature = temperature;
    embed::Embedding gold = embed::embed_text(embedder, gold_tokens);
    if (gold.zero) {
        t.degenerate = true;
        t.alphas.assign(provisionals.size(), 0.0);
        t.probs.assign(provisionals.size(), 1.0 / static_cast<double>(provisionals.size()));
        return t;
    }
    for (const auto& prov : provisionals) {
        t.alphas.push_back(embed::cosine(embed::embed_text(embedder, prov), gold));
    }
    std::vector<double> scaled(t.alphas.size());
    for (std::size_t j = 0; j < t.alphas.size(); ++j) scaled[j] = t.alphas[j] / temperature;
    t.probs = stable_softmax(scaled);
    return t;
}

// Z_j = (n_j + eps) / sum_k (n_k + eps) over arbitrary nonnegative counts.
inline StudentDistribution student_from_counts(const std::vector<std::size_t>& counts, double epsilon,
                                               const std::string& doc_id = {}) {
    if (counts.empty()) throw ValidationError("student distribution needs at least one page");
    if (epsilon < 0.0) throw ValidationError("student epsilon must be >= 0");
    double sum = 0.0;
    for (std::size_t n : counts) sum += static_cast<double>(n) + epsilon;
    if (sum == 0.0) throw ValidationError("student distribution undefined: all counts zero with epsilon 0");
    StudentDistribution z;
    z.doc_id = doc_id;
    z.source = StudentSource::SentenceCount;
    z.probs.reserve(counts.size());
    for (std::size_t n : counts) z.probs.push_back((static_cast<double>(n) + epsilon) / sum);
    return z;
}

// Counts are the assigned summary sentences |S_j| per page.
inline StudentDistribution student_sentence_count(const std::vector<align::PageTarget>& page_targets,
                                                  double epsilon = 1.0, const std::string& doc_id = {}) {
    std::vector<std::size_t> counts;
    counts.reserve(page_targets.size());
    for (const auto& t : page_targets) counts.push_back(t.sentence_indices.size());
    return student_from_counts(counts, epsilon, doc_id);
}

// KL(T || Z) = sum_j T_j ln(T_j / Z_j), with 0 ln 0 = 0. Student probs are
// floored at kStudentFloor and renormalized before the ratio.
inline double kl_divergence(const std::vector<double>& teacher, const std::vector<double>& student) {
    if (teacher.size() != student.size()) throw ValidationError("kl_divergence: length mismatch");
    std::vector<double> z(student.size());
    double zsum = 0.0;
    for (std::size_t j = 0; j < student.size(); ++j) {
        z[j] = std::max(student[j], kStudentFloor);
        zsum += z[j];
    }
    double kl = 0.0;
    for (std::size_t j = 0; j < teacher.size(); ++j) {
        if (teacher[j] <= 0.0) continue;
        kl += teacher[j] * std::log(teacher[j] / (z[j] / zsum));
    }
    return kl;
}

inline double kl_divergence(const TeacherDistribution& teacher, const StudentDistribution& student) {
    return kl_divergence(teacher.probs, student.probs);
}

inline LossBreakdown combined_loss(double xent, double kl, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("lambda must lie in [0, 1]");
    if (kl < 0.0) throw ValidationError("kl term must be nonnegative");
    LossBreakdown out;
    out.xent = xent;
    out.kl = kl;
    out.lambda = lambda;
    out.total = (1.0 - lambda) * xent + lambda * kl;
    return out;
}

inline nlohmann::json distributions_to_json(const TeacherDistribution& t, const StudentDistribution& z) {
    return {{"doc_id", t.doc_id},
            {"alphas", t.alphas},
            {"teacher", t.probs},
            {"student", z.probs},
            {"source", student_source_name(z.source)},
            {"temperature", t.temperature}};
}

}  // namespace pts::distill
