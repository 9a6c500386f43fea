#pragma once

// Deterministic text embeddings standing in for a frozen neural encoder:
// a TF-IDF backend fitted on the corpus, a stateless signed-hash
// bag-of-words backend, and a lookup backend for externally precomputed
// vectors. All vectors are L2-normalized or the flagged zero vector.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "pts/common.hpp"

namespace pts::embed {

struct Embedding {
    std::vector<double> values;
    bool zero = false;  // set when the input produced no mass

    std::size_t dim() const { return values.size(); }
};

struct CosineResult {
    double value = 0.0;
    bool flagged = false;  // a zero-norm operand forced the 0 definition

    operator double() const { return value; }
};

// cos(u, v) = u.v / (|u||v|); a zero-norm side yields 0 with the flag set,
// so a degenerate embedding never outranks any positive similarity.
inline CosineResult cosine(const Embedding& u, const Embedding& v) {
    if (u.dim() != v.dim()) throw ValidationError("cosine: dimension mismatch");
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.values.size(); ++i) {
        dot += u.values[i] * v.values[i];
        nu += u.values[i] * u.values[i];
        nv += v.values[i] * v.values[i];
    }
    if (nu == 0.0 || nv == 0.0) return {0.0, true};
    return {dot / (std::sqrt(nu) * std::sqrt(nv)), false};
}

enum class Backend { Tfidf, HashedBow, External };

inline std::string backend_name(Backend b) {
    switch (b) {
        case Backend::Tfidf: return "tfidf";
        case Backend::HashedBow: return "hashed-bow";
        case Backend::External: return "external";
    }
    return "?";
}

inline Backend backend_from_name(const std::string& name) {
    if (name == "tfidf") return Backend::Tfidf;
    if (name == "hashed-bow") return Backend::HashedBow;
    if (name == "external") return Backend::External;
    throw ValidationError("unknown embedder backend: " + name);
}

struct TermStats {
    std::size_t id = 0;
    std::size_t df = 0;  // number of fitted documents containing the term
};

struct EmbedderState {
    Backend backend = Backend::Tfidf;
    std::size_t num_docs = 0;
    std::size_t dim = 0;
    std::map<std::string, TermStats> vocabulary;          // tfidf only
    std::map<std::string, std::vector<double>> external;  // external only

    // idf(t) = ln((1 + n) / (1 + df(t))) + 1
    double idf(std::size_t df) const {
        return std::log((1.0 + static_cast<double>(num_docs)) / (1.0 + static_cast<double>(df))) + 1.0;
    }
};

// Fits the embedder. For tfidf this collects document frequencies over the
// token streams (term ids assigned in sorted term order); hashed-bow only
// records its dimension, which must be a power of two.
inline EmbedderState fit_embedder(const std::vector<std::vector<std::string>>& corpus, Backend backend,
                                  std::size_t dim = 0) {
    EmbedderState state;
    state.backend = backend;
    switch (backend) {
        case Backend::Tfidf: {
            if (corpus.empty()) throw ValidationError("tfidf embedder requires a non-empty corpus");
            state.num_docs = corpus.size();
            for (const auto& doc : corpus) {
                std::vector<std::string> uniq(doc.begin(), doc.end());
                std::sort(uniq.begin(), uniq.end());
                uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
                for (const auto& term : uniq) ++state.vocabulary[term].df;
            }
            std::size_t id = 0;
            for (auto& [term, stats] : state.vocabulary) stats.id = id++;
            state.dim = state.vocabulary.size();
            break;
        }
        case Backend::HashedBow: {
            state.dim = dim ? dim : (1u << 15);
            if (state.dim == 0 || (state.dim & (state.dim - 1)) != 0) {
                throw ValidationError("hashed-bow dim must be a power of two");
            }
            break;
        }
        case Backend::External:
            break;  // populated by load_external_embeddings
    }
    return state;
}

// Key used by the external backend: tokens joined with single spaces.
inline std::string external_key(const std::vector<std::string>& tokens) {
    std::string key;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) key += ' ';
        key += tokens[i];
    }
    return key;
}

// Loads {"key": ..., "vector": [...]} JSONL into an external-backend state.
// All vectors must share one dimension.
inline EmbedderState load_external_embeddings(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open external embeddings: " + path);
    EmbedderState state;
    state.backend = Backend::External;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json row = nlohmann::json::parse(line, nullptr, false);
        if (row.is_discarded() || !row.contains("key") || !row.contains("vector")) {
            throw ValidationError("bad external embedding row at line " + std::to_string(line_no));
        }
        auto vec = row["vector"].get<std::vector<double>>();
        if (state.dim == 0) state.dim = vec.size();
        if (vec.size() != state.dim || state.dim == 0) {
            throw ValidationError("external embedding dimension mismatch at line " + std::to_string(line_no));
        }
        state.external[row["key"].get<std::string>()] = std::move(vec);
    }
    return state;
}

inline Embedding embed_text(const EmbedderState& state, const std::vector<std::string>& tokens) {
    Embedding e;
    switch (state.backend) {
        case Backend::Tfidf: {
            e.values.assign(state.dim, 0.0);
            std::map<std::string, std::size_t> tf;
            for (const auto& t : tokens) ++tf[t];
            for (const auto& [term, count] : tf) {
                auto it = state.vocabulary.find(term);
                if (it == state.vocabulary.end()) continue;  // unseen terms ignored
                e.values[it->second.id] = static_cast<double>(count) * state.idf(it->second.df);
            }
            break;
        }
        case Backend::HashedBow: {
            e.values.assign(state.dim, 0.0);
            for (const auto& t : tokens) {
                std::uint64_t h = fnv1a64(t);
                std::size_t bucket = static_cast<std::size_t>(h & (state.dim - 1));
                double sign = (splitmix64(h) & 1u) ? -1.0 : 1.0;
                e.values[bucket] += sign;
            }
            break;
        }
        case Backend::External: {
            auto it = state.external.find(external_key(tokens));
            if (it == state.external.end()) {
                throw ValidationError("external embedding missing for key: '" + external_key(tokens) + "'");
            }
            e.values = it->second;
            return e;  // stored vector returned verbatim, no renormalization
        }
    }
    double norm_sq = 0.0;
    for (double v : e.values) norm_sq += v * v;
    if (norm_sq == 0.0) {
        e.zero = true;
        return e;
    }
    double inv = 1.0 / std::sqrt(norm_sq);
    for (double& v : e.values) v *= inv;
    return e;
}

inline nlohmann::json embedder_to_json(const EmbedderState& state) {
    nlohmann::json vocab = nlohmann::json::array();
    for (const auto& [term, stats] : state.vocabulary) vocab.push_back({term, stats.id, stats.df});
    return {{"backend", backend_name(state.backend)},
            {"num_docs", state.num_docs},
            {"dim", state.dim},
            {"vocabulary", vocab}};
}

inline EmbedderState embedder_from_json(const nlohmann::json& j) {
    EmbedderState state;
    state.backend = backend_from_name(j.at("backend").get<std::string>());
    state.num_docs = j.at("num_docs").get<std::size_t>();
    state.dim = j.at("dim").get<std::size_t>();
    for (const auto& row : j.at("vocabulary")) {
        TermStats stats;
        stats.id = row[1].get<std::size_t>();
        stats.df = row[2].get<std::size_t>();
        state.vocabulary[row[0].get<std::string>()] = stats;
    }
    return state;
}

}  // namespace pts::embed
