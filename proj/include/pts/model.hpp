#pragma once

// A small trainable page-fused encoder-decoder in double precision.
//
// Per page: single-head scaled dot-product self-attention over token
// embeddings, mean-pooled into g_j. A confidence head softmaxes conf.g_j
// into page weights c. Decoding is non-recurrent: at each step the
// previous-token embedding is projected to a decoder state u, refined by
// cross-attention against the page's token encodings (h = u + attended
// values), and mapped to vocabulary logits through the shared output
// projection. Training decodes each page against its assigned summary
// sentences; inference fuses the per-page states with c before the output
// projection. All gradients are analytic and checked against central
// finite differences.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pts/common.hpp"
#include "pts/distill.hpp"

namespace pts::model {

// Reserved vocabulary ids.
constexpr std::size_t kPad = 0;
constexpr std::size_t kBos = 1;
constexpr std::size_t kEos = 2;
constexpr std::size_t kUnk = 3;
constexpr std::size_t kReserved = 4;

struct ModelConfig {
    std::size_t vocab_size = 0;  // includes the reserved tokens
    std::size_t embed_dim = 32;
    std::size_t hidden_dim = 32;
    std::size_t max_pages = 16;
    std::size_t max_target_len = 64;  // decoder steps per page, cap
    std::uint64_t seed = 42;
    double init_scale = 0.08;

    nlohmann::json to_json() const {
        return {{"vocab_size", vocab_size}, {"embed_dim", embed_dim},   {"hidden_dim", hidden_dim},
                {"max_pages", max_pages},   {"max_target_len", max_target_len}, {"seed", seed},
                {"init_scale", init_scale}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.vocab_size = j.at("vocab_size").get<std::size_t>();
        c.embed_dim = j.at("embed_dim").get<std::size_t>();
        c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
        c.max_pages = j.at("max_pages").get<std::size_t>();
        c.max_target_len = j.at("max_target_len").get<std::size_t>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.init_scale = j.at("init_scale").get<double>();
        return c;
    }
};

// Row-major matrix of doubles; rows() is derived from the fixed column count.
struct Tensor {
    std::string name;
    std::size_t rows = 0, cols = 0;
    std::vector<double> v;

    void init(std::string n, std::size_t r, std::size_t c) {
        name = std::move(n);
        rows = r;
        cols = c;
        v.assign(r * c, 0.0);
    }
    double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
    std::size_t size() const { return v.size(); }
};

struct ModelParams {
    ModelConfig config;
    Tensor embedding;   // vocab_size x d
    Tensor enc_query;   // d x d
    Tensor enc_key;     // d x d
    Tensor enc_value;   // d x d
    Tensor dec_in;      // h x d   (previous-token embedding -> decoder state)
    Tensor dec_query;   // h x h
    Tensor dec_key;     // h x d   (page encodings -> keys)
    Tensor dec_value;   // h x d   (page encodings -> values)
    Tensor out_proj;    // h x vocab_size (logits = out_proj^T state + out_bias)
    Tensor out_bias;    // 1 x vocab_size
    Tensor confidence;  // 1 x d

    std::vector<Tensor*> tensors() {
        return {&embedding, &enc_query, &enc_key, &enc_value, &dec_in,     &dec_query,
                &dec_key,   &dec_value, &out_proj, &out_bias,  &confidence};
    }
    std::vector<const Tensor*> tensors() const {
        return {&embedding, &enc_query, &enc_key, &enc_value, &dec_in,     &dec_query,
                &dec_key,   &dec_value, &out_proj, &out_bias,  &confidence};
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const Tensor* t : tensors()) n += t->size();
        return n;
    }
};

inline void shape_params(ModelParams& p, const ModelConfig& cfg) {
    const std::size_t d = cfg.embed_dim, h = cfg.hidden_dim, v = cfg.vocab_size;
    p.config = cfg;
    p.embedding.init("embedding", v, d);
    p.enc_query.init("enc_query", d, d);
    p.enc_key.init("enc_key", d, d);
    p.enc_value.init("enc_value", d, d);
    p.dec_in.init("dec_in", h, d);
    p.dec_query.init("dec_query", h, h);
    p.dec_key.init("dec_key", h, d);
    p.dec_value.init("dec_value", h, d);
    p.out_proj.init("out_proj", h, v);
    p.out_bias.init("out_bias", 1, v);
    p.confidence.init("confidence", 1, d);
}

// Uniform[-init_scale, +init_scale] from the seeded generator, in tensor
// order; out_bias stays zero.
inline ModelParams init_params(const ModelConfig& cfg) {
    if (cfg.vocab_size < kReserved || cfg.embed_dim < 1 || cfg.hidden_dim < 1) {
        throw ValidationError("model config dimensions too small");
    }
    ModelParams p;
    shape_params(p, cfg);
    Rng rng(derive_seed(cfg.seed, 0x9d0d));
    for (Tensor* t : p.tensors()) {
        if (t == &p.out_bias) continue;
        for (double& w : t->v) w = rng.next_in(-cfg.init_scale, cfg.init_scale);
    }
    return p;
}

// ---------------------------------------------------------------------------
// forward pass pieces
// ---------------------------------------------------------------------------

struct PageEncoding {
    std::vector<std::size_t> tokens;        // token ids
    std::vector<std::vector<double>> attn;  // n x n self-attention rows
    std::vector<std::vector<double>> enc;   // n x d per-token encodings
    std::vector<double> pooled;             // g_j, length d
    // cross-attention keys/values, computed once per page
    std::vector<std::vector<double>> keys;    // n x h
    std::vector<std::vector<double>> values;  // n x h
};

namespace detail {

inline std::vector<double> mat_vec(const Tensor& m, const std::vector<double>& x) {
    std::vector<double> y(m.rows, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        double acc = 0.0;
        const double* row = &m.v[r * m.cols];
        for (std::size_t c = 0; c < m.cols; ++c) acc += row[c] * x[c];
        y[r] = acc;
    }
    return y;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

}  // namespace detail

// Self-attention over the page's token embeddings plus mean pooling, and
// the cross-attention keys/values derived from the encodings. Pages are
// encoded independently of one another.
inline PageEncoding encode_page(const ModelParams& p, const std::vector<std::size_t>& token_ids) {
    if (token_ids.empty()) throw ValidationError("encode_page: empty page");
    const std::size_t d = p.config.embed_dim;
    const std::size_t n = token_ids.size();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    PageEncoding pe;
    pe.tokens = token_ids;
    std::vector<std::vector<double>> x(n), q(n), k(n), v(n);
    for (std::size_t t = 0; t < n; ++t) {
        if (token_ids[t] >= p.config.vocab_size) throw ValidationError("encode_page: token id out of range");
        x[t].assign(p.embedding.v.begin() + static_cast<std::ptrdiff_t>(token_ids[t] * d),
                    p.embedding.v.begin() + static_cast<std::ptrdiff_t>((token_ids[t] + 1) * d));
        q[t] = detail::mat_vec(p.enc_query, x[t]);
        k[t] = detail::mat_vec(p.enc_key, x[t]);
        v[t] = detail::mat_vec(p.enc_value, x[t]);
    }
    pe.attn.resize(n);
    pe.enc.assign(n, std::vector<double>(d, 0.0));
    pe.pooled.assign(d, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        std::vector<double> logits(n);
        for (std::size_t u = 0; u < n; ++u) logits[u] = detail::dot(q[t], k[u]) * scale;
        pe.attn[t] = distill::stable_softmax(logits);
        for (std::size_t u = 0; u < n; ++u) {
            for (std::size_t i = 0; i < d; ++i) pe.enc[t][i] += pe.attn[t][u] * v[u][i];
        }
        for (std::size_t i = 0; i < d; ++i) pe.pooled[i] += pe.enc[t][i];
    }
    for (std::size_t i = 0; i < d; ++i) pe.pooled[i] /= static_cast<double>(n);

    pe.keys.resize(n);
    pe.values.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
        pe.keys[t] = detail::mat_vec(p.dec_key, pe.enc[t]);
        pe.values[t] = detail::mat_vec(p.dec_value, pe.enc[t]);
    }
    return pe;
}

// c = softmax(conf . g_j) over the document's pages. Used as the student
// distribution during training and as the page weights ZZ at inference.
inline std::vector<double> confidence_weights(const ModelParams& p,
                                              const std::vector<std::vector<double>>& pooled) {
    if (pooled.empty()) throw ValidationError("confidence_weights: no pages");
    std::vector<double> logits(pooled.size());
    for (std::size_t j = 0; j < pooled.size(); ++j) {
        logits[j] = detail::dot(std::vector<double>(p.confidence.v.begin(), p.confidence.v.end()), pooled[j]);
    }
    return distill::stable_softmax(logits);
}

struct DecodeStep {
    std::size_t prev_token = 0;
    std::vector<double> u;     // dec_in . x, length h
    std::vector<double> query;  // dec_query . u
    std::vector<double> attn;   // over page tokens
    std::vector<double> state;  // h_j^i = u + sum attn * values
};

// One decoder step for one page given the previous token.
inline DecodeStep decode_step(const ModelParams& p, const PageEncoding& page, std::size_t prev_token) {
    const std::size_t d = p.config.embed_dim;
    const std::size_t h = p.config.hidden_dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(h));

    DecodeStep s;
    s.prev_token = prev_token;
    std::vector<double> x(p.embedding.v.begin() + static_cast<std::ptrdiff_t>(prev_token * d),
                          p.embedding.v.begin() + static_cast<std::ptrdiff_t>((prev_token + 1) * d));
    s.u = detail::mat_vec(p.dec_in, x);
    s.query = detail::mat_vec(p.dec_query, s.u);
    std::vector<double> logits(page.tokens.size());
    for (std::size_t t = 0; t < page.tokens.size(); ++t) logits[t] = detail::dot(s.query, page.keys[t]) * scale;
    s.attn = distill::stable_softmax(logits);
    s.state = s.u;
    for (std::size_t t = 0; t < page.tokens.size(); ++t) {
        for (std::size_t i = 0; i < h; ++i) s.state[i] += s.attn[t] * page.values[t][i];
    }
    return s;
}

inline std::vector<double> output_logits(const ModelParams& p, const std::vector<double>& state) {
    const std::size_t vsz = p.config.vocab_size;
    std::vector<double> logits(p.out_bias.v.begin(), p.out_bias.v.end());
    for (std::size_t i = 0; i < p.config.hidden_dim; ++i) {
        const double s = state[i];
        const double* row = &p.out_proj.v[i * vsz];
        for (std::size_t vtok = 0; vtok < vsz; ++vtok) logits[vtok] += s * row[vtok];
    }
    return logits;
}

// Fused next-token distribution: softmax(W (sum_j c_j h_j) + b). The
// weights must sum to 1 within 1e-9.
inline std::vector<double> fused_next_token_dist(const ModelParams& p,
                                                 const std::vector<std::vector<double>>& states,
                                                 const std::vector<double>& weights) {
    if (states.size() != weights.size() || states.empty()) {
        throw ValidationError("fused_next_token_dist: state/weight shape mismatch");
    }
    double sum = 0.0;
    for (double c : weights) sum += c;
    if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("fused_next_token_dist: weights do not sum to 1");
    std::vector<double> fused(p.config.hidden_dim, 0.0);
    for (std::size_t j = 0; j < states.size(); ++j) {
        for (std::size_t i = 0; i < fused.size(); ++i) fused[i] += weights[j] * states[j][i];
    }
    return distill::stable_softmax(output_logits(p, fused));
}

struct TeacherForcedResult {
    std::vector<DecodeStep> steps;
    std::vector<std::vector<double>> probs;  // per-step vocabulary distribution
    std::vector<std::size_t> targets;        // per-step target ids (sentence tokens + EOS)
    double xent = 0.0;                       // mean over steps of -ln p(target)
    bool truncated = false;
};

// Teacher-forced decode of one page against its target tokens. The decoder
// input sequence is BOS followed by the target tokens; predictions are the
// target tokens followed by EOS. An empty target decodes EOS in one step.
inline TeacherForcedResult decode_page_teacher_forced(const ModelParams& p, const PageEncoding& page,
                                                      const std::vector<std::size_t>& target_tokens) {
    TeacherForcedResult r;
    std::vector<std::size_t> target = target_tokens;
    if (target.size() + 1 > p.config.max_target_len) {
        target.resize(p.config.max_target_len - 1);
        r.truncated = true;
    }
    std::vector<std::size_t> inputs;
    inputs.push_back(kBos);
    inputs.insert(inputs.end(), target.begin(), target.end());
    r.targets = target;
    r.targets.push_back(kEos);

    double nll = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        DecodeStep step = decode_step(p, page, inputs[i]);
        std::vector<double> probs = distill::stable_softmax(output_logits(p, step.state));
        nll += -std::log(probs[r.targets[i]]);
        r.steps.push_back(std::move(step));
        r.probs.push_back(std::move(probs));
    }
    r.xent = nll / static_cast<double>(inputs.size());
    return r;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

struct PreparedDocument {
    std::string doc_id;
    std::vector<std::vector<std::size_t>> page_tokens;    // token ids per page
    std::vector<std::vector<std::size_t>> page_targets;   // assigned summary token ids per page
    std::vector<std::size_t> assigned_counts;             // |S_j|: assigned sentences per page
    std::vector<double> teacher;                          // teacher distribution over pages
    std::vector<std::size_t> summary_tokens;              // full summary, for generation checks
};

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 3;
    std::size_t epochs = 3;
    double lambda = 0.1;
    distill::StudentSource student_source = distill::StudentSource::ConfidenceHead;
    double student_epsilon = 1.0;
    double grad_clip = 1.0;
    std::uint64_t seed = 42;
};

struct Gradients {
    ModelParams shadow;  // same shapes as the parameters, holds d(total)/d(theta)

    explicit Gradients(const ModelConfig& cfg) { shape_params(shadow, cfg); }
    void zero() {
        for (Tensor* t : shadow.tensors()) std::fill(t->v.begin(), t->v.end(), 0.0);
    }
};

namespace detail {

// dL/dlogits for softmax p with one-hot target t is (p - onehot_t) * w.
inline void add_softmax_xent_grad(const std::vector<double>& probs, std::size_t target, double w,
                                  std::vector<double>& dlogits) {
    for (std::size_t i = 0; i < probs.size(); ++i) dlogits[i] += w * probs[i];
    dlogits[target] -= w;
}

// Backprop through y = softmax(s): ds = diag(y) dy - y (y . dy).
inline std::vector<double> softmax_backward(const std::vector<double>& y, const std::vector<double>& dy) {
    double mix = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) mix += y[i] * dy[i];
    std::vector<double> ds(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) ds[i] = y[i] * (dy[i] - mix);
    return ds;
}

inline void axpy(double a, const std::vector<double>& x, std::vector<double>& y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

// dM += outer(dy, x) and dx += M^T dy for y = M x.
inline void mat_vec_backward(const Tensor& m, const std::vector<double>& x, const std::vector<double>& dy,
                             Tensor& dm, std::vector<double>* dx) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double g = dy[r];
        if (g == 0.0) continue;
        double* drow = &dm.v[r * m.cols];
        const double* row = &m.v[r * m.cols];
        for (std::size_t c = 0; c < m.cols; ++c) {
            drow[c] += g * x[c];
            if (dx) (*dx)[c] += row[c] * g;
        }
    }
}

}  // namespace detail

struct DocForward {
    std::vector<PageEncoding> pages;
    std::vector<TeacherForcedResult> decodes;
    std::vector<double> conf_logits;
    std::vector<double> conf;  // student distribution when source = confidence-head
    double xent_sum = 0.0;     // sum over pages of per-page mean xent
    double kl = 0.0;
};

inline DocForward forward_document(const ModelParams& p, const PreparedDocument& doc,
                                   const TrainConfig& tcfg) {
    DocForward f;
    for (const auto& toks : doc.page_tokens) f.pages.push_back(encode_page(p, toks));

    f.conf_logits.resize(f.pages.size());
    for (std::size_t j = 0; j < f.pages.size(); ++j) {
        f.conf_logits[j] = detail::dot(std::vector<double>(p.confidence.v.begin(), p.confidence.v.end()),
                                       f.pages[j].pooled);
    }
    f.conf = distill::stable_softmax(f.conf_logits);

    for (std::size_t j = 0; j < f.pages.size(); ++j) {
        f.decodes.push_back(decode_page_teacher_forced(p, f.pages[j], doc.page_targets[j]));
        f.xent_sum += f.decodes.back().xent;
    }

    if (tcfg.student_source == distill::StudentSource::ConfidenceHead) {
        f.kl = distill::kl_divergence(doc.teacher, f.conf);
    } else {
        f.kl = distill::kl_divergence(
            doc.teacher, distill::student_from_counts(doc.assigned_counts, tcfg.student_epsilon).probs);
    }
    return f;
}

// Accumulates d(total)/d(theta) for one document into `grads`.
//   total = (1 - lambda) * (sum over batch pages of xent_j) / total_pages
//         + lambda * (sum over batch docs of KL_doc) / num_docs
// so this document's weights are w_xent = (1-lambda)/total_pages per page
// and w_kl = lambda/num_docs.
inline void backward_document(const ModelParams& p, const PreparedDocument& doc, const TrainConfig& tcfg,
                              const DocForward& f, double w_xent, double w_kl, Gradients& grads) {
    const std::size_t d = p.config.embed_dim;
    const std::size_t h = p.config.hidden_dim;
    const std::size_t vsz = p.config.vocab_size;
    const double enc_scale = 1.0 / std::sqrt(static_cast<double>(d));
    const double dec_scale = 1.0 / std::sqrt(static_cast<double>(h));
    const std::size_t npages = f.pages.size();

    // gradient wrt each page's per-token encodings, accumulated from the
    // decoder cross-attention and later from the pooled/confidence path
    std::vector<std::vector<std::vector<double>>> denc(npages);
    for (std::size_t j = 0; j < npages; ++j) {
        denc[j].assign(f.pages[j].tokens.size(), std::vector<double>(d, 0.0));
    }
    std::vector<std::vector<double>> dpooled(npages, std::vector<double>(d, 0.0));

    // --- KL path: dKL/dlogit_j = conf_j - teacher_j (student floor never
    // binds for softmax outputs at sane magnitudes)
    if (w_kl != 0.0 && tcfg.student_source == distill::StudentSource::ConfidenceHead) {
        std::vector<double> conf_vec(p.confidence.v.begin(), p.confidence.v.end());
        for (std::size_t j = 0; j < npages; ++j) {
            double dlogit = w_kl * (f.conf[j] - doc.teacher[j]);
            for (std::size_t i = 0; i < d; ++i) {
                grads.shadow.confidence.v[i] += dlogit * f.pages[j].pooled[i];
                dpooled[j][i] += dlogit * conf_vec[i];
            }
        }
    }

    // --- XENT path through every decoder step
    for (std::size_t j = 0; j < npages; ++j) {
        const TeacherForcedResult& dec = f.decodes[j];
        const PageEncoding& page = f.pages[j];
        const double step_w = w_xent / static_cast<double>(dec.steps.size());
        for (std::size_t i = 0; i < dec.steps.size(); ++i) {
            const DecodeStep& st = dec.steps[i];
            std::vector<double> dlogits(vsz, 0.0);
            detail::add_softmax_xent_grad(dec.probs[i], dec.targets[i], step_w, dlogits);

            // logits = out_proj^T state + out_bias
            std::vector<double> dstate(h, 0.0);
            for (std::size_t r = 0; r < h; ++r) {
                double acc = 0.0;
                const double* row = &p.out_proj.v[r * vsz];
                double* drow = &grads.shadow.out_proj.v[r * vsz];
                const double s = st.state[r];
                for (std::size_t vtok = 0; vtok < vsz; ++vtok) {
                    acc += row[vtok] * dlogits[vtok];
                    drow[vtok] += s * dlogits[vtok];
                }
                dstate[r] = acc;
            }
            for (std::size_t vtok = 0; vtok < vsz; ++vtok) grads.shadow.out_bias.v[vtok] += dlogits[vtok];

            // state = u + sum_t attn_t * value_t
            std::vector<double> du = dstate;
            std::vector<double> dattn(page.tokens.size(), 0.0);
            for (std::size_t t = 0; t < page.tokens.size(); ++t) {
                dattn[t] = detail::dot(dstate, page.values[t]);
            }
            std::vector<double> dattn_logits = detail::softmax_backward(st.attn, dattn);

            std::vector<double> dquery(h, 0.0);
            for (std::size_t t = 0; t < page.tokens.size(); ++t) {
                const double gl = dattn_logits[t] * dec_scale;
                // value path: dvalue_t = attn_t * dstate; key path via logits
                std::vector<double> dkey(h, 0.0), dvalue(h, 0.0);
                for (std::size_t r = 0; r < h; ++r) {
                    dkey[r] = gl * st.query[r];
                    dvalue[r] = st.attn[t] * dstate[r];
                    dquery[r] += gl * page.keys[t][r];
                }
                detail::mat_vec_backward(p.dec_key, page.enc[t], dkey, grads.shadow.dec_key, &denc[j][t]);
                detail::mat_vec_backward(p.dec_value, page.enc[t], dvalue, grads.shadow.dec_value, &denc[j][t]);
            }

            // query = dec_query . u
            detail::mat_vec_backward(p.dec_query, st.u, dquery, grads.shadow.dec_query, &du);

            // u = dec_in . embedding[prev]
            std::vector<double> x(p.embedding.v.begin() + static_cast<std::ptrdiff_t>(st.prev_token * d),
                                  p.embedding.v.begin() + static_cast<std::ptrdiff_t>((st.prev_token + 1) * d));
            std::vector<double> dx(d, 0.0);
            detail::mat_vec_backward(p.dec_in, x, du, grads.shadow.dec_in, &dx);
            for (std::size_t i = 0; i < d; ++i) {
                grads.shadow.embedding.v[st.prev_token * d + i] += dx[i];
            }
        }
    }

    // --- encoder backward per page (pooled path + cross-attention path)
    for (std::size_t j = 0; j < npages; ++j) {
        const PageEncoding& page = f.pages[j];
        const std::size_t n = page.tokens.size();
        const double inv_n = 1.0 / static_cast<double>(n);

        // rebuild the forward intermediates (x, q, k, v); cheaper to recompute
        // than to store for every page of every batch document
        std::vector<std::vector<double>> x(n), q(n), k(n), v(n);
        for (std::size_t t = 0; t < n; ++t) {
            x[t].assign(p.embedding.v.begin() + static_cast<std::ptrdiff_t>(page.tokens[t] * d),
                        p.embedding.v.begin() + static_cast<std::ptrdiff_t>((page.tokens[t] + 1) * d));
            q[t] = detail::mat_vec(p.enc_query, x[t]);
            k[t] = detail::mat_vec(p.enc_key, x[t]);
            v[t] = detail::mat_vec(p.enc_value, x[t]);
        }

        // denc also receives the pooled gradient: pooled = mean_t enc_t
        for (std::size_t t = 0; t < n; ++t) {
            detail::axpy(inv_n, dpooled[j], denc[j][t]);
        }

        std::vector<std::vector<double>> dx(n, std::vector<double>(d, 0.0));
        std::vector<std::vector<double>> dq(n, std::vector<double>(d, 0.0));
        std::vector<std::vector<double>> dk(n, std::vector<double>(d, 0.0));
        std::vector<std::vector<double>> dv(n, std::vector<double>(d, 0.0));

        for (std::size_t t = 0; t < n; ++t) {
            // enc_t = sum_u attn_{t,u} v_u
            std::vector<double> dattn(n, 0.0);
            for (std::size_t u = 0; u < n; ++u) {
                dattn[u] = detail::dot(denc[j][t], v[u]);
                detail::axpy(page.attn[t][u], denc[j][t], dv[u]);
            }
            std::vector<double> dlogits = detail::softmax_backward(page.attn[t], dattn);
            for (std::size_t u = 0; u < n; ++u) {
                const double gl = dlogits[u] * enc_scale;
                detail::axpy(gl, k[u], dq[t]);
                detail::axpy(gl, q[t], dk[u]);
            }
        }
        for (std::size_t t = 0; t < n; ++t) {
            detail::mat_vec_backward(p.enc_query, x[t], dq[t], grads.shadow.enc_query, &dx[t]);
            detail::mat_vec_backward(p.enc_key, x[t], dk[t], grads.shadow.enc_key, &dx[t]);
            detail::mat_vec_backward(p.enc_value, x[t], dv[t], grads.shadow.enc_value, &dx[t]);
            for (std::size_t i = 0; i < d; ++i) grads.shadow.embedding.v[page.tokens[t] * d + i] += dx[t][i];
        }
    }
}

struct BatchLoss {
    distill::LossBreakdown loss;
    double grad_norm = 0.0;  // global norm before clipping
};

// Loss and gradients for a batch of prepared documents. Reduction order is
// fixed (documents in batch order, pages in order) so results are
// bit-reproducible.
inline BatchLoss compute_batch(const ModelParams& p, const std::vector<PreparedDocument>& batch,
                               const TrainConfig& tcfg, Gradients* grads) {
    if (batch.empty()) throw ValidationError("compute_batch: empty batch");
    std::size_t total_pages = 0;
    for (const auto& doc : batch) total_pages += doc.page_tokens.size();

    const double w_xent = (1.0 - tcfg.lambda) / static_cast<double>(total_pages);
    const double w_kl = tcfg.lambda / static_cast<double>(batch.size());

    double xent_sum = 0.0, kl_sum = 0.0;
    for (const auto& doc : batch) {
        DocForward f = forward_document(p, doc, tcfg);
        xent_sum += f.xent_sum;
        kl_sum += f.kl;
        if (grads) backward_document(p, doc, tcfg, f, w_xent, w_kl, *grads);
    }

    BatchLoss out;
    double xent_mean = xent_sum / static_cast<double>(total_pages);
    double kl_mean = kl_sum / static_cast<double>(batch.size());
    out.loss = distill::combined_loss(xent_mean, kl_mean, tcfg.lambda);
    if (!std::isfinite(out.loss.total)) {
        throw ValidationError("non-finite loss on batch starting at doc '" + batch.front().doc_id + "'");
    }
    if (grads) {
        double norm_sq = 0.0;
        for (Tensor* t : grads->shadow.tensors()) {
            for (double g : t->v) norm_sq += g * g;
        }
        out.grad_norm = std::sqrt(norm_sq);
    }
    return out;
}

// Adam moment buffers.
struct AdamState {
    ModelParams m, v;
    std::size_t step = 0;

    explicit AdamState(const ModelConfig& cfg) {
        shape_params(m, cfg);
        shape_params(v, cfg);
    }
};

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

// Clips the global gradient norm, then applies one Adam update in place.
inline void apply_update(ModelParams& p, Gradients& grads, AdamState& adam, const TrainConfig& tcfg,
                         double grad_norm) {
    double clip_scale = 1.0;
    if (tcfg.grad_clip > 0.0 && grad_norm > tcfg.grad_clip) clip_scale = tcfg.grad_clip / grad_norm;

    ++adam.step;
    const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(adam.step));
    const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(adam.step));

    auto params = p.tensors();
    auto gs = grads.shadow.tensors();
    auto ms = adam.m.tensors();
    auto vs = adam.v.tensors();
    for (std::size_t t = 0; t < params.size(); ++t) {
        for (std::size_t i = 0; i < params[t]->v.size(); ++i) {
            const double g = gs[t]->v[i] * clip_scale;
            double& m = ms[t]->v[i];
            double& v = vs[t]->v[i];
            m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * g;
            v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * g * g;
            params[t]->v[i] -= tcfg.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + kAdamEps);
        }
    }
}

// One optimizer step over a batch. Returns the loss breakdown at the
// pre-update parameters and the pre-clip gradient norm.
inline BatchLoss train_step(ModelParams& p, const std::vector<PreparedDocument>& batch,
                            const TrainConfig& tcfg, AdamState& adam, Gradients& grads) {
    grads.zero();
    BatchLoss bl = compute_batch(p, batch, tcfg, &grads);
    apply_update(p, grads, adam, tcfg, bl.grad_norm);
    return bl;
}

// ---------------------------------------------------------------------------
// gradient check
// ---------------------------------------------------------------------------

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_parameter;
    std::size_t samples = 0;
};

// Central-difference check of the analytic gradient on one document.
// Samples `samples` scalar parameters (seeded), perturbs by +-h and reports
// the max relative error |a - n| / max(|a|, |n|, 1e-8). `corrupt_component`
// deliberately offsets one sampled analytic value (negative-control hook).
inline GradCheckResult grad_check(const ModelParams& params, const PreparedDocument& doc, double h,
                                  double lambda, std::size_t samples = 200, std::uint64_t seed = 1234,
                                  bool corrupt = false) {
    if (h < 1e-6 || h > 1e-4) throw ValidationError("grad_check: h must lie in [1e-6, 1e-4]");
    TrainConfig tcfg;
    tcfg.lambda = lambda;
    tcfg.student_source = distill::StudentSource::ConfidenceHead;

    ModelParams p = params;  // local copy we can perturb
    Gradients grads(p.config);
    grads.zero();
    std::vector<PreparedDocument> batch{doc};
    compute_batch(p, batch, tcfg, &grads);

    auto tensors = p.tensors();
    auto gtensors = grads.shadow.tensors();
    std::size_t total = p.parameter_count();

    Rng rng(seed);
    GradCheckResult result;
    result.samples = samples;
    for (std::size_t s = 0; s < samples; ++s) {
        std::size_t flat = static_cast<std::size_t>(rng.next_below(total));
        std::size_t ti = 0;
        while (flat >= tensors[ti]->v.size()) {
            flat -= tensors[ti]->v.size();
            ++ti;
        }
        double& w = tensors[ti]->v[flat];
        const double saved = w;

        w = saved + h;
        double f_plus = compute_batch(p, batch, tcfg, nullptr).loss.total;
        w = saved - h;
        double f_minus = compute_batch(p, batch, tcfg, nullptr).loss.total;
        w = saved;

        double numeric = (f_plus - f_minus) / (2.0 * h);
        double analytic = gtensors[ti]->v[flat];
        if (corrupt && s == 0) analytic += 1e-3;
        double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        double rel = std::abs(analytic - numeric) / denom;
        if (rel > result.max_rel_error) {
            result.max_rel_error = rel;
            result.worst_parameter =
                tensors[ti]->name + "[" + std::to_string(flat / std::max<std::size_t>(tensors[ti]->cols, 1)) +
                "," + std::to_string(flat % std::max<std::size_t>(tensors[ti]->cols, 1)) + "]";
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// inference
// ---------------------------------------------------------------------------

struct GeneratedSummary {
    std::vector<std::size_t> tokens;   // emitted ids, EOS excluded
    std::vector<double> confidence;    // page weights used for fusion
};

// Greedy fused decoding: page weights are computed once per document from
// the pooled encodings; every step advances all page decoders in lockstep
// on the shared prefix and fuses their states before the output projection.
inline GeneratedSummary generate_summary(const ModelParams& p,
                                         const std::vector<std::vector<std::size_t>>& page_tokens,
                                         std::size_t max_len) {
    if (max_len < 1) throw ValidationError("generate_summary: max_len must be >= 1");
    if (page_tokens.empty()) throw ValidationError("generate_summary: no pages");

    std::vector<PageEncoding> pages;
    pages.reserve(page_tokens.size());
    std::vector<std::vector<double>> pooled;
    for (const auto& toks : page_tokens) {
        pages.push_back(encode_page(p, toks));
        pooled.push_back(pages.back().pooled);
    }

    GeneratedSummary out;
    out.confidence = confidence_weights(p, pooled);

    std::size_t prev = kBos;
    for (std::size_t step = 0; step < max_len; ++step) {
        std::vector<std::vector<double>> states;
        states.reserve(pages.size());
        for (const auto& page : pages) states.push_back(decode_step(p, page, prev).state);
        std::vector<double> probs = fused_next_token_dist(p, states, out.confidence);
        std::size_t best = 0;
        for (std::size_t vtok = 1; vtok < probs.size(); ++vtok) {
            if (probs[vtok] > probs[best]) best = vtok;
        }
        if (best == kEos) break;
        out.tokens.push_back(best);
        prev = best;
    }
    return out;
}

// ---------------------------------------------------------------------------
// checkpoint: one JSON header line, then little-endian f64 in manifest order
// ---------------------------------------------------------------------------

inline void save_checkpoint(const ModelParams& p, const std::string& path,
                            const std::vector<std::string>& vocab) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    nlohmann::json manifest = nlohmann::json::array();
    for (const Tensor* t : p.tensors()) {
        manifest.push_back({{"name", t->name}, {"shape", {t->rows, t->cols}}});
    }
    nlohmann::json header = {{"format", "pts-checkpoint-v1"},
                             {"config", p.config.to_json()},
                             {"vocab", vocab},
                             {"manifest", manifest}};
    out << header.dump() << '\n';
    for (const Tensor* t : p.tensors()) {
        static_assert(sizeof(double) == 8);
        out.write(reinterpret_cast<const char*>(t->v.data()),
                  static_cast<std::streamsize>(t->v.size() * sizeof(double)));
    }
    if (!out) throw IoError("write error on checkpoint: " + path);
}

struct Checkpoint {
    ModelParams params;
    std::vector<std::string> vocab;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    std::string header_line;
    if (!std::getline(in, header_line)) throw IoError("checkpoint missing header: " + path);
    nlohmann::json header = nlohmann::json::parse(header_line, nullptr, false);
    if (header.is_discarded() || header.value("format", "") != "pts-checkpoint-v1") {
        throw ValidationError("unrecognized checkpoint header: " + path);
    }
    Checkpoint ck;
    ModelConfig cfg = ModelConfig::from_json(header.at("config"));
    shape_params(ck.params, cfg);
    ck.vocab = header.at("vocab").get<std::vector<std::string>>();
    if (ck.vocab.size() != cfg.vocab_size) {
        throw ValidationError("checkpoint vocab does not match its config");
    }
    std::size_t ti = 0;
    for (const auto& entry : header.at("manifest")) {
        Tensor* t = ck.params.tensors()[ti++];
        if (entry.at("name").get<std::string>() != t->name ||
            entry.at("shape")[0].get<std::size_t>() != t->rows ||
            entry.at("shape")[1].get<std::size_t>() != t->cols) {
            throw ValidationError("checkpoint manifest does not match expected shapes");
        }
        in.read(reinterpret_cast<char*>(t->v.data()),
                static_cast<std::streamsize>(t->v.size() * sizeof(double)));
        if (!in) throw IoError("checkpoint truncated: " + path);
    }
    return ck;
}

}  // namespace pts::model
