#pragma once

// Corpus ingestion: JSONL loading, text normalization, sentence splitting,
// tokenization and pagination into non-overlapping pages of at most L tokens.

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pts/common.hpp"

namespace pts::corpus {

struct RawDocument {
    std::string id;
    std::string article;   // cleaned source text
    std::string abstract;  // cleaned reference summary
};

struct RejectionReport {
    std::size_t total = 0;
    std::size_t accepted = 0;
    std::size_t rejected = 0;
    std::map<std::string, std::size_t> reasons;

    void reject(const std::string& reason) {
        ++rejected;
        ++reasons[reason];
    }

    nlohmann::json to_json() const {
        return {{"total", total}, {"accepted", accepted}, {"rejected", rejected}, {"reasons", reasons}};
    }
};

struct LoadResult {
    std::vector<RawDocument> docs;
    RejectionReport report;
};

struct Sentence {
    std::size_t index = 0;
    std::size_t char_begin = 0, char_end = 0;  // half-open offsets into cleaned text
    std::size_t tok_begin = 0, tok_end = 0;    // half-open offsets into the document token stream
};

struct Page {
    std::size_t index = 0;
    std::size_t sent_begin = 0, sent_end = 0;  // ordinals of sentences overlapping the page
    std::size_t tok_begin = 0, tok_end = 0;    // half-open token span, adjacent across pages

    std::size_t token_count() const { return tok_end - tok_begin; }
};

struct PaginatedDocument {
    std::string doc_id;
    std::size_t page_limit = 0;
    std::vector<std::string> tokens;  // full document token stream
    std::vector<Sentence> sentences;
    std::vector<Page> pages;
    std::vector<std::vector<std::string>> summary_sentences;  // tokenized gold summary

    std::vector<std::string> page_tokens(std::size_t page_index) const {
        const Page& p = pages.at(page_index);
        return {tokens.begin() + static_cast<std::ptrdiff_t>(p.tok_begin),
                tokens.begin() + static_cast<std::ptrdiff_t>(p.tok_end)};
    }

    std::vector<std::string> sentence_tokens(std::size_t sentence_index) const {
        const Sentence& s = sentences.at(sentence_index);
        return {tokens.begin() + static_cast<std::ptrdiff_t>(s.tok_begin),
                tokens.begin() + static_cast<std::ptrdiff_t>(s.tok_end)};
    }

    std::vector<std::string> summary_tokens() const {
        std::vector<std::string> all;
        for (const auto& s : summary_sentences) all.insert(all.end(), s.begin(), s.end());
        return all;
    }
};

namespace detail {

inline bool is_ws(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline bool is_ascii_alpha(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

inline bool is_ascii_digit(char c) { return c >= '0' && c <= '9'; }

// Word characters: ASCII alphanumerics plus any byte >= 0x80, so multi-byte
// UTF-8 sequences stay inside word tokens. Everything else is punctuation.
inline bool is_word_char(char c) {
    return is_ascii_alpha(c) || is_ascii_digit(c) || static_cast<unsigned char>(c) >= 0x80;
}

inline char lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

}  // namespace detail

// Normalizes raw text with three fixed rules, applied in order:
//   1. "$...$" math segments become the placeholder token "MATH"
//      (an unmatched "$" is kept literally),
//   2. "\name" command tokens are dropped; a backslash before a non-letter
//      drops only the backslash; all brace characters are dropped so brace
//      arguments keep their content even when unbalanced,
//   3. whitespace runs collapse to single spaces and the ends are trimmed.
inline std::string clean_text(std::string_view raw) {
    std::string pass1;
    pass1.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size();) {
        if (raw[i] == '$') {
            std::size_t close = raw.find('$', i + 1);
            if (close == std::string_view::npos) {
                pass1 += '$';
                ++i;
            } else {
                pass1 += "MATH";
                i = close + 1;
            }
        } else {
            pass1 += raw[i];
            ++i;
        }
    }

    std::string pass2;
    pass2.reserve(pass1.size());
    for (std::size_t i = 0; i < pass1.size();) {
        char c = pass1[i];
        if (c == '\\') {
            std::size_t j = i + 1;
            while (j < pass1.size() && detail::is_ascii_alpha(pass1[j])) ++j;
            if (j == i + 1 && j < pass1.size()) {
                // escaped symbol: keep the symbol, drop the backslash
                pass2 += pass1[j];
                i = j + 1;
            } else {
                i = j;  // command name dropped
            }
            // separate surrounding words that the command used to separate
            pass2 += ' ';
        } else if (c == '{' || c == '}') {
            ++i;
        } else {
            pass2 += c;
            ++i;
        }
    }

    std::string out;
    out.reserve(pass2.size());
    bool in_ws = true;  // trims leading whitespace
    for (char c : pass2) {
        if (detail::is_ws(c)) {
            if (!in_ws) out += ' ';
            in_ws = true;
        } else {
            out += c;
            in_ws = false;
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

// Lowercased whitespace/punctuation tokenizer: words are maximal runs of
// word characters, every punctuation character is its own token.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            tokens.push_back(word);
            word.clear();
        }
    };
    for (char c : text) {
        if (detail::is_ws(c)) {
            flush();
        } else if (detail::is_word_char(c)) {
            word += detail::lower(c);
        } else {
            flush();
            tokens.emplace_back(1, c);
        }
    }
    flush();
    return tokens;
}

struct SentencePiece {
    std::size_t char_begin = 0, char_end = 0;
    std::vector<std::string> tokens;
};

namespace detail {

// Fixed abbreviation guard list; a '.' ending one of these never splits.
inline const std::vector<std::string>& sentence_guards() {
    static const std::vector<std::string> guards = {
        "fig.", "figs.", "eq.", "eqs.", "sec.", "secs.", "tab.", "ref.", "refs.",
        "et al.", "i.e.", "e.g.", "cf.", "vs.", "no.", "dr.", "mr.", "ms.",
    };
    return guards;
}

inline bool guard_blocks_split(std::string_view text, std::size_t dot_pos) {
    for (const std::string& g : sentence_guards()) {
        if (dot_pos + 1 < g.size()) continue;
        std::size_t start = dot_pos + 1 - g.size();
        bool match = true;
        for (std::size_t k = 0; k < g.size(); ++k) {
            if (lower(text[start + k]) != g[k]) {
                match = false;
                break;
            }
        }
        if (!match) continue;
        if (start > 0 && is_word_char(text[start - 1])) continue;  // suffix of a longer word
        return true;
    }
    return false;
}

}  // namespace detail

// Rule-based sentence splitter: a run of ".!?" ends a sentence when followed
// by whitespace and an uppercase letter or digit, unless the terminator
// closes a guarded abbreviation. Text without a terminator is one sentence.
inline std::vector<SentencePiece> split_sentences(std::string_view text) {
    std::vector<SentencePiece> out;
    auto emit = [&](std::size_t begin, std::size_t end) {
        while (begin < end && detail::is_ws(text[begin])) ++begin;
        while (end > begin && detail::is_ws(text[end - 1])) --end;
        if (begin >= end) return;
        SentencePiece s;
        s.char_begin = begin;
        s.char_end = end;
        s.tokens = tokenize(text.substr(begin, end - begin));
        if (!s.tokens.empty()) out.push_back(std::move(s));
    };

    std::size_t start = 0;
    std::size_t i = 0;
    while (i < text.size()) {
        char c = text[i];
        if (c == '.' || c == '!' || c == '?') {
            std::size_t last = i;
            while (last + 1 < text.size() &&
                   (text[last + 1] == '.' || text[last + 1] == '!' || text[last + 1] == '?')) {
                ++last;
            }
            std::size_t next = last + 1;
            bool ws_seen = false;
            while (next < text.size() && detail::is_ws(text[next])) {
                ws_seen = true;
                ++next;
            }
            bool upper_or_digit = next < text.size() &&
                                  ((text[next] >= 'A' && text[next] <= 'Z') || detail::is_ascii_digit(text[next]));
            if (ws_seen && upper_or_digit && !detail::guard_blocks_split(text, i)) {
                emit(start, last + 1);
                start = next;
                i = next;
                continue;
            }
            i = last + 1;
        } else {
            ++i;
        }
    }
    emit(start, text.size());
    return out;
}

// Greedy sentence-boundary pagination. Sentences are appended to the open
// page while its token count stays within limit; a single sentence longer
// than the limit is hard-split at exact limit boundaries.
inline std::vector<Page> paginate(const std::vector<SentencePiece>& sentences, std::size_t limit) {
    if (limit < 1) throw ValidationError("page limit must be >= 1");
    if (sentences.empty()) throw ValidationError("empty document");

    std::vector<Page> pages;
    std::size_t tok_offset = 0;
    Page cur;
    bool open = false;

    auto flush = [&] {
        if (!open) return;
        cur.index = pages.size();
        pages.push_back(cur);
        open = false;
    };

    for (std::size_t s = 0; s < sentences.size(); ++s) {
        std::size_t len = sentences[s].tokens.size();
        if (len > limit) {
            flush();
            std::size_t consumed = 0;
            while (len - consumed > limit) {
                Page chunk;
                chunk.index = pages.size();
                chunk.sent_begin = s;
                chunk.sent_end = s + 1;
                chunk.tok_begin = tok_offset + consumed;
                chunk.tok_end = chunk.tok_begin + limit;
                pages.push_back(chunk);
                consumed += limit;
            }
            if (len > consumed) {
                cur = Page{};
                cur.sent_begin = s;
                cur.sent_end = s + 1;
                cur.tok_begin = tok_offset + consumed;
                cur.tok_end = tok_offset + len;
                open = true;
            }
        } else if (open && (cur.tok_end - cur.tok_begin) + len <= limit) {
            cur.sent_end = s + 1;
            cur.tok_end += len;
        } else {
            flush();
            cur = Page{};
            cur.sent_begin = s;
            cur.sent_end = s + 1;
            cur.tok_begin = tok_offset;
            cur.tok_end = tok_offset + len;
            open = true;
        }
        tok_offset += len;
    }
    flush();
    return pages;
}

// Full per-document preprocessing: sentence split + tokenize + paginate the
// article, sentence split + tokenize the abstract.
inline PaginatedDocument preprocess_document(const RawDocument& raw, std::size_t page_limit) {
    PaginatedDocument doc;
    doc.doc_id = raw.id;
    doc.page_limit = page_limit;

    std::vector<SentencePiece> pieces = split_sentences(raw.article);
    if (pieces.empty()) throw ValidationError("document '" + raw.id + "' has no sentences");
    doc.pages = paginate(pieces, page_limit);

    std::size_t tok = 0;
    for (std::size_t i = 0; i < pieces.size(); ++i) {
        Sentence s;
        s.index = i;
        s.char_begin = pieces[i].char_begin;
        s.char_end = pieces[i].char_end;
        s.tok_begin = tok;
        tok += pieces[i].tokens.size();
        s.tok_end = tok;
        doc.sentences.push_back(s);
        doc.tokens.insert(doc.tokens.end(), pieces[i].tokens.begin(), pieces[i].tokens.end());
    }

    for (const SentencePiece& p : split_sentences(raw.abstract)) doc.summary_sentences.push_back(p.tokens);
    if (doc.summary_sentences.empty()) throw ValidationError("document '" + raw.id + "' has an empty summary");
    return doc;
}

// Streams {"article": ..., "abstract": ...} JSONL. Malformed or empty rows
// are counted per reason; `limit` caps the number of accepted documents.
inline LoadResult load_corpus(const std::string& path, std::optional<std::size_t> limit = {}) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open corpus file: " + path);

    std::string filename = path;
    if (std::size_t slash = path.find_last_of('/'); slash != std::string::npos) {
        filename = path.substr(slash + 1);
    }

    LoadResult result;
    std::vector<std::string> seen_ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (limit && result.docs.size() >= *limit) break;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;  // blank line, not a record
        ++result.report.total;

        nlohmann::json row = nlohmann::json::parse(line, nullptr, false);
        if (row.is_discarded() || !row.is_object()) {
            result.report.reject("malformed_json");
            continue;
        }
        if (!row.contains("article")) {
            result.report.reject("missing_article");
            continue;
        }
        if (!row.contains("abstract")) {
            result.report.reject("missing_abstract");
            continue;
        }
        if (!row["article"].is_string() || !row["abstract"].is_string()) {
            result.report.reject("non_string_field");
            continue;
        }

        RawDocument doc;
        doc.article = clean_text(row["article"].get<std::string>());
        doc.abstract = clean_text(row["abstract"].get<std::string>());
        if (row.contains("id") && row["id"].is_string() && !row["id"].get<std::string>().empty()) {
            doc.id = row["id"].get<std::string>();
        } else {
            doc.id = filename + ":" + std::to_string(line_no);
        }
        if (doc.article.empty()) {
            result.report.reject("empty_article");
            continue;
        }
        if (doc.abstract.empty()) {
            result.report.reject("empty_abstract");
            continue;
        }
        if (std::find(seen_ids.begin(), seen_ids.end(), doc.id) != seen_ids.end()) {
            result.report.reject("duplicate_id");
            continue;
        }
        seen_ids.push_back(doc.id);
        ++result.report.accepted;
        result.docs.push_back(std::move(doc));
    }
    if (in.bad()) throw IoError("read error on corpus file: " + path);
    return result;
}

inline nlohmann::json paginated_to_json(const PaginatedDocument& doc) {
    nlohmann::json pages = nlohmann::json::array();
    for (const Page& p : doc.pages) {
        pages.push_back({{"index", p.index},
                         {"token_span", {p.tok_begin, p.tok_end}},
                         {"sentence_range", {p.sent_begin, p.sent_end}},
                         {"tokens", doc.page_tokens(p.index)}});
    }
    nlohmann::json sentences = nlohmann::json::array();
    for (const Sentence& s : doc.sentences) {
        sentences.push_back({{"index", s.index},
                             {"char_span", {s.char_begin, s.char_end}},
                             {"token_span", {s.tok_begin, s.tok_end}}});
    }
    return {{"doc_id", doc.doc_id},
            {"page_limit", doc.page_limit},
            {"pages", pages},
            {"sentences", sentences},
            {"summary_sentences", doc.summary_sentences}};
}

inline PaginatedDocument paginated_from_json(const nlohmann::json& j) {
    PaginatedDocument doc;
    doc.doc_id = j.at("doc_id").get<std::string>();
    doc.page_limit = j.at("page_limit").get<std::size_t>();
    for (const auto& pj : j.at("pages")) {
        Page p;
        p.index = pj.at("index").get<std::size_t>();
        p.tok_begin = pj.at("token_span")[0].get<std::size_t>();
        p.tok_end = pj.at("token_span")[1].get<std::size_t>();
        p.sent_begin = pj.at("sentence_range")[0].get<std::size_t>();
        p.sent_end = pj.at("sentence_range")[1].get<std::size_t>();
        doc.pages.push_back(p);
        const auto& toks = pj.at("tokens");
        for (const auto& t : toks) doc.tokens.push_back(t.get<std::string>());
    }
    for (const auto& sj : j.at("sentences")) {
        Sentence s;
        s.index = sj.at("index").get<std::size_t>();
        s.char_begin = sj.at("char_span")[0].get<std::size_t>();
        s.char_end = sj.at("char_span")[1].get<std::size_t>();
        s.tok_begin = sj.at("token_span")[0].get<std::size_t>();
        s.tok_end = sj.at("token_span")[1].get<std::size_t>();
        doc.sentences.push_back(s);
    }
    doc.summary_sentences = j.at("summary_sentences").get<std::vector<std::vector<std::string>>>();
    return doc;
}

}  // namespace pts::corpus
