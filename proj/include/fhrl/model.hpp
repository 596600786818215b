#pragma once
// Byte-level transformer with a reentrant fast-weight sublayer between
// attention and the feed-forward block. Parameters live in one flat
// buffer with a named-tensor registry, which keeps the optimizer, the
// finite-difference harness, and checkpoint IO trivial.
//
// Gradients are hand-derived reverse mode with two detachments:
//   (a) the reentry injection treats the reentered output as a constant,
//       so gradient reaches the reentry projection but never flows back
//       into earlier steps through it;
//   (b) the fast-weight EMA treats the previous state as a constant, so
//       the projection weights are trained through each step's own
//       contribution only.
// Activations are stored t-major: row(t, b) = t * batch + b.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "fhrl/kernels.hpp"
#include "fhrl/layer.hpp"
#include "fhrl/numerics.hpp"

namespace fhrl {

struct ModelConfig {
    std::size_t d = 192;
    std::size_t heads = 3;
    std::size_t layers = 3;
    std::size_t vocab = 256;
    std::size_t context = 128;
    std::size_t ff_mult = 4;
    FHRLConfig fhrl;

    void validate() const {
        if (d == 0 || heads == 0 || layers == 0 || vocab == 0 || ff_mult == 0)
            throw std::invalid_argument("model config: zero dimension");
        if (d % heads != 0) throw std::invalid_argument("model config: d must divide by heads");
        if (context < 2) throw std::invalid_argument("model config: context must be >= 2");
        if (fhrl.d != d) throw std::invalid_argument("model config: fhrl.d must equal d");
        fhrl.validate();
    }
};

struct TrainConfig {
    std::size_t steps = 400;
    double lr = 3e-4;
    double weight_decay = 0.01;
    std::size_t batch = 2;
    std::uint64_t seed = 1;
    bool clip = false;        // off by default; stability comes from the layer itself
    double clip_norm = 1.0;

    void validate() const {
        if (batch == 0) throw std::invalid_argument("train config: batch must be >= 1");
        if (!(lr > 0.0)) throw std::invalid_argument("train config: lr must be > 0");
        if (weight_decay < 0.0) throw std::invalid_argument("train config: negative weight decay");
    }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(FHRLConfig, d, r, alpha, beta, gamma, sigma, eps)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ModelConfig, d, heads, layers, vocab, context, ff_mult, fhrl)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TrainConfig, steps, lr, weight_decay, batch, seed, clip,
                                   clip_norm)

struct TensorSpec {
    std::string name;
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
};

struct ModelParams {
    ModelConfig cfg;
    std::vector<double> flat;
    std::vector<TensorSpec> specs;
    std::map<std::string, std::size_t> index;

    double* tensor(const std::string& name) {
        return flat.data() + specs[index.at(name)].offset;
    }
    const double* tensor(const std::string& name) const {
        return flat.data() + specs[index.at(name)].offset;
    }
    const TensorSpec& spec(const std::string& name) const { return specs[index.at(name)]; }

    Matrix tensor_matrix(const std::string& name) const {
        const TensorSpec& s = spec(name);
        Matrix m(s.rows, s.cols);
        std::copy(flat.begin() + s.offset, flat.begin() + s.offset + s.rows * s.cols,
                  m.data.begin());
        return m;
    }
};

inline ModelParams make_params(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p;
    p.cfg = cfg;
    std::size_t offset = 0;
    auto add = [&](const std::string& name, std::size_t rows, std::size_t cols) {
        p.index[name] = p.specs.size();
        p.specs.push_back({name, offset, rows, cols});
        offset += rows * cols;
    };
    const std::size_t d = cfg.d, rd = cfg.fhrl.r * cfg.d, ff = cfg.ff_mult * cfg.d;
    add("embedding", cfg.vocab, d);
    add("positional", cfg.context, d);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const std::string b = "block" + std::to_string(l) + ".";
        add(b + "attn_q", d, d);
        add(b + "attn_k", d, d);
        add(b + "attn_v", d, d);
        add(b + "attn_o", d, d);
        add(b + "fhrl_q", rd, d);
        add(b + "fhrl_k", rd, d);
        add(b + "fhrl_v", d, d);
        add(b + "fhrl_r", d, d);
        add(b + "ffn_1", ff, d);
        add(b + "ffn_2", d, ff);
    }
    add("head", cfg.vocab, d);
    p.flat.assign(offset, 0.0);
    return p;
}

// All weights from N(0, 0.02^2); the reentry projection starts small on
// purpose since its growth is itself a measured quantity.
inline ModelParams init_params(const ModelConfig& cfg, Rng rng) {
    ModelParams p = make_params(cfg);
    const double std0 = 0.02;
    for (double& v : p.flat) v = std0 * rng.normal();
    return p;
}

using TokenSeq = std::vector<std::uint8_t>;
using TokenBatch = std::vector<TokenSeq>;

struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Uniform random contiguous chunk of len+1 bytes; first len are inputs,
// last len are next-byte targets.
inline TokenSeq sample_chunk(const std::vector<std::uint8_t>& corpus, std::size_t len, Rng& rng) {
    if (corpus.size() < len + 1)
        throw std::invalid_argument("sample_chunk: corpus shorter than chunk + 1");
    const std::uint64_t span = corpus.size() - len;  // valid start offsets
    const std::size_t start = static_cast<std::size_t>(rng.uniform_below(span));
    return TokenSeq(corpus.begin() + start, corpus.begin() + start + len + 1);
}

enum class TraceMode { none, hidden, full };

struct ForwardOptions {
    TraceMode trace = TraceMode::none;
    bool record_tape = false;          // keep the full backward tape
    bool ablate_reentry = false;       // drop the injection branch entirely
    const struct Tape* detach_src = nullptr;  // frozen sources for gradient checks
};

struct Tape {
    std::size_t T = 0, B = 0;
    std::vector<double> x0;
    struct Layer {
        std::vector<double> x_in, q, k, v, probs, mix, a_out;
        std::vector<double> xf, w, yraw, y, reentry, o;
        std::vector<double> ynorm;                // N
        std::vector<double> u, v_fw, nu, nv;      // N x (r d), tape mode only
        std::vector<double> nzu, nzv;             // N x r, tape mode only
        std::vector<double> ffn_pre, ffn_act;
    };
    std::vector<Layer> layers;
    std::vector<double> x_final;  // stream feeding the head
    Matrix logits;
};

// Per-layer, per-sequence step traces plus final-layer hidden states.
struct ForwardOutput {
    Matrix logits;  // N x vocab, rows t-major
    std::vector<std::vector<std::vector<StepTrace>>> traces;  // [layer][seq][step]
    std::vector<Matrix> hidden;  // [position] -> (B x d) final-layer sublayer outputs
};

namespace detail {

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
inline double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014327;
    return cdf + x * pdf;
}

inline void check_finite_stream(const std::vector<double>& buf, const char* where) {
    for (double v : buf)
        if (!std::isfinite(v) || std::abs(v) > 1e30)
            throw DivergenceError(std::string("divergence detected in ") + where);
}

}  // namespace detail

inline ForwardOutput forward(const ModelParams& params, const TokenBatch& tokens,
                             Rng noise_rng, const ForwardOptions& opt = {},
                             Tape* tape_out = nullptr) {
    const ModelConfig& cfg = params.cfg;
    cfg.validate();
    if (tokens.empty()) throw std::invalid_argument("forward: empty batch");
    const std::size_t B = tokens.size();
    const std::size_t T = tokens[0].size();
    if (T == 0) throw std::invalid_argument("forward: empty sequence");
    if (T > cfg.context) throw std::invalid_argument("forward: sequence exceeds context");
    for (const TokenSeq& s : tokens)
        if (s.size() != T) throw std::invalid_argument("forward: ragged batch");

    const std::size_t d = cfg.d, H = cfg.heads, dh = d / H;
    const std::size_t r = cfg.fhrl.r, rd = r * d, ff = cfg.ff_mult * d;
    const std::size_t N = T * B;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    const bool tape_mode = opt.record_tape;
    const bool tracing = opt.trace == TraceMode::full;

    Tape local;
    Tape& tape = tape_out ? *tape_out : local;
    tape.T = T;
    tape.B = B;
    tape.layers.resize(cfg.layers);

    // fully-overwritten buffers are resized without clearing so a reused
    // tape costs no redundant writes
    auto fit = [](std::vector<double>& buf, std::size_t len) { buf.resize(len); };

    // embedding + positional
    fit(tape.x0, N * d);
    {
        const double* emb = params.tensor("embedding");
        const double* pos = params.tensor("positional");
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t b = 0; b < B; ++b) {
                double* row = tape.x0.data() + (t * B + b) * d;
                const double* erow = emb + static_cast<std::size_t>(tokens[b][t]) * d;
                const double* prow = pos + t * d;
                for (std::size_t i = 0; i < d; ++i) row[i] = erow[i] + prow[i];
            }
    }

    std::vector<double> stream = tape.x0;

    for (std::size_t l = 0; l < cfg.layers; ++l) {
        Tape::Layer& L = tape.layers[l];
        const std::string bl = "block" + std::to_string(l) + ".";
        if (tape_mode) L.x_in = stream;

        // ---- attention sublayer ----
        fit(L.q, N * d);
        fit(L.k, N * d);
        fit(L.v, N * d);
        kernels::linear_forward(stream.data(), N, d, params.tensor(bl + "attn_q"), d, L.q.data());
        kernels::linear_forward(stream.data(), N, d, params.tensor(bl + "attn_k"), d, L.k.data());
        kernels::linear_forward(stream.data(), N, d, params.tensor(bl + "attn_v"), d, L.v.data());

        L.probs.assign(B * H * T * T, 0.0);  // only the causal triangle is written
        L.mix.assign(N * d, 0.0);            // accumulated per head
        std::vector<double> scores(T);
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t h = 0; h < H; ++h) {
                double* probs_bh = L.probs.data() + (b * H + h) * T * T;
                for (std::size_t t = 0; t < T; ++t) {
                    const double* qrow = L.q.data() + (t * B + b) * d + h * dh;
                    double smax = -1e300;
                    for (std::size_t j = 0; j <= t; ++j) {
                        const double* krow = L.k.data() + (j * B + b) * d + h * dh;
                        scores[j] = kernels::dot_k(qrow, krow, dh) * inv_sqrt_dh;
                        smax = std::max(smax, scores[j]);
                    }
                    double z = 0.0;
                    for (std::size_t j = 0; j <= t; ++j) {
                        scores[j] = std::exp(scores[j] - smax);
                        z += scores[j];
                    }
                    double* mixrow = L.mix.data() + (t * B + b) * d + h * dh;
                    for (std::size_t j = 0; j <= t; ++j) {
                        const double p = scores[j] / z;
                        probs_bh[t * T + j] = p;
                        kernels::axpy_k(p, L.v.data() + (j * B + b) * d + h * dh, mixrow, dh);
                    }
                }
            }
        }

        fit(L.a_out, N * d);
        kernels::linear_forward(L.mix.data(), N, d, params.tensor(bl + "attn_o"), d,
                                L.a_out.data());
        for (std::size_t i = 0; i < N * d; ++i) L.a_out[i] += stream[i];
        detail::check_finite_stream(L.a_out, "attention sublayer");

        // ---- reentrant fast-weight sublayer ----
        L.xf = L.a_out;
        fit(L.w, N * d);
        L.yraw.assign(N * d, 0.0);  // accumulated slot by slot
        fit(L.y, N * d);
        fit(L.ynorm, N);
        fit(L.o, N * d);
        if (tracing) L.reentry.assign(N * d, 0.0);
        if (tape_mode) {
            fit(L.u, N * rd);
            fit(L.v_fw, N * rd);
            fit(L.nu, N * rd);
            fit(L.nv, N * rd);
            fit(L.nzu, N * r);
            fit(L.nzv, N * r);
        }

        std::vector<Rng> lane_rng(B);
        for (std::size_t b = 0; b < B; ++b) lane_rng[b] = noise_rng.substream(l + 1, b);

        // rolling state when the full tape is not kept
        std::vector<double> u_roll, v_roll;
        if (!tape_mode) {
            u_roll.assign(B * rd, 0.0);
            v_roll.assign(B * rd, 0.0);
        }
        std::vector<double> proj_q(B * rd), proj_k(B * rd), inject(B * d);
        std::vector<double> zeros_state(rd, 0.0);
        std::vector<double> nzu_loc(r), nzv_loc(r), m_loc(r);

        const double* wq = params.tensor(bl + "fhrl_q");
        const double* wk = params.tensor(bl + "fhrl_k");
        const double* wr = params.tensor(bl + "fhrl_r");
        const double gamma = cfg.fhrl.gamma, alpha = cfg.fhrl.alpha, beta = cfg.fhrl.beta;

        // without injection the projections have no sequential dependency,
        // so they batch across all positions in one pass per weight
        const bool no_reentry = opt.ablate_reentry || gamma == 0.0;
        std::vector<double> proj_q_all, proj_k_all;
        if (no_reentry) {
            proj_q_all.resize(N * rd);
            proj_k_all.resize(N * rd);
            kernels::linear_forward(L.xf.data(), N, d, wq, rd, proj_q_all.data());
            kernels::linear_forward(L.xf.data(), N, d, wk, rd, proj_k_all.data());
            kernels::linear_forward(L.xf.data(), N, d, params.tensor(bl + "fhrl_v"), d,
                                    L.w.data());
        }

        for (std::size_t t = 0; t < T; ++t) {
            double* xf_t = L.xf.data() + t * B * d;

            if (t > 0 && !no_reentry) {
                const std::vector<double>& ysrc =
                    opt.detach_src ? opt.detach_src->layers[l].y : L.y;
                std::fill(inject.begin(), inject.end(), 0.0);
                kernels::linear_forward(ysrc.data() + (t - 1) * B * d, B, d, wr, d,
                                        inject.data());
                for (std::size_t b = 0; b < B; ++b) {
                    const double* in_b = inject.data() + b * d;
                    double* xrow = xf_t + b * d;
                    for (std::size_t i = 0; i < d; ++i) xrow[i] += gamma * in_b[i];
                    if (tracing) {
                        double* rrow = L.reentry.data() + ((t - 1) * B + b) * d;
                        for (std::size_t i = 0; i < d; ++i) rrow[i] = gamma * in_b[i];
                    }
                }
            }

            if (!no_reentry) {
                kernels::linear_forward(xf_t, B, d, wq, rd, proj_q.data());
                kernels::linear_forward(xf_t, B, d, wk, rd, proj_k.data());
                kernels::linear_forward(xf_t, B, d, params.tensor(bl + "fhrl_v"), d,
                                        L.w.data() + t * B * d);
            }

            for (std::size_t b = 0; b < B; ++b) {
                const std::size_t row = t * B + b;
                double* zq = no_reentry ? proj_q_all.data() + row * rd : proj_q.data() + b * rd;
                double* zk = no_reentry ? proj_k_all.data() + row * rd : proj_k.data() + b * rd;
                if (cfg.fhrl.sigma > 0.0) {
                    const Vector eu = gauss(lane_rng[b], rd, cfg.fhrl.sigma);
                    const Vector ev = gauss(lane_rng[b], rd, cfg.fhrl.sigma);
                    for (std::size_t i = 0; i < rd; ++i) zq[i] += eu[i];
                    for (std::size_t i = 0; i < rd; ++i) zk[i] += ev[i];
                }
                // row-normalize each rank slot; zero slots stay zero
                for (std::size_t s = 0; s < r; ++s) {
                    double squ = 0.0, sqv = 0.0;
                    for (std::size_t i = 0; i < d; ++i) {
                        squ += zq[s * d + i] * zq[s * d + i];
                        sqv += zk[s * d + i] * zk[s * d + i];
                    }
                    nzu_loc[s] = std::sqrt(squ);
                    nzv_loc[s] = std::sqrt(sqv);
                    if (nzu_loc[s] > 0.0)
                        for (std::size_t i = 0; i < d; ++i) zq[s * d + i] /= nzu_loc[s];
                    if (nzv_loc[s] > 0.0)
                        for (std::size_t i = 0; i < d; ++i) zk[s * d + i] /= nzv_loc[s];
                }

                // EMA against the previous state (frozen source when checking
                // gradients; the recursion itself is detached in backward)
                const double* u_prev;
                const double* v_prev;
                if (t == 0) {
                    u_prev = zeros_state.data();
                    v_prev = zeros_state.data();
                } else if (opt.detach_src) {
                    u_prev = opt.detach_src->layers[l].u.data() + (row - B) * rd;
                    v_prev = opt.detach_src->layers[l].v_fw.data() + (row - B) * rd;
                } else if (tape_mode) {
                    u_prev = L.u.data() + (row - B) * rd;
                    v_prev = L.v_fw.data() + (row - B) * rd;
                } else {
                    u_prev = u_roll.data() + b * rd;
                    v_prev = v_roll.data() + b * rd;
                }

                double* u_now;
                double* v_now;
                if (tape_mode) {
                    u_now = L.u.data() + row * rd;
                    v_now = L.v_fw.data() + row * rd;
                } else {
                    u_now = u_roll.data() + b * rd;
                    v_now = v_roll.data() + b * rd;
                }
                // careful: when rolling, u_prev aliases u_now; compute in place
                for (std::size_t i = 0; i < rd; ++i) {
                    const double un = (1.0 - alpha) * u_prev[i] + alpha * zq[i];
                    const double vn = (1.0 - alpha) * v_prev[i] + alpha * zk[i];
                    u_now[i] = un;
                    v_now[i] = vn;
                }
                if (tape_mode) {
                    std::copy(zq, zq + rd, L.nu.data() + row * rd);
                    std::copy(zk, zk + rd, L.nv.data() + row * rd);
                    for (std::size_t s = 0; s < r; ++s) {
                        L.nzu[row * r + s] = nzu_loc[s];
                        L.nzv[row * r + s] = nzv_loc[s];
                    }
                }

                // y_raw = U^T (V w)
                const double* wrow = L.w.data() + row * d;
                for (std::size_t s = 0; s < r; ++s)
                    m_loc[s] = kernels::dot_k(v_now + s * d, wrow, d);
                double* yr = L.yraw.data() + row * d;
                for (std::size_t s = 0; s < r; ++s) kernels::axpy_k(m_loc[s], u_now + s * d, yr, d);

                double nsq = 0.0;
                for (std::size_t i = 0; i < d; ++i) nsq += yr[i] * yr[i];
                const double n = std::sqrt(nsq);
                L.ynorm[row] = n;
                const double g = (beta == 0.0 || n == 0.0) ? 1.0 : homeostasis_gain(n, beta);
                double* yrow = L.y.data() + row * d;
                for (std::size_t i = 0; i < d; ++i) yrow[i] = g * yr[i];

                double* orow = L.o.data() + row * d;
                const double* xrow = xf_t + b * d;
                for (std::size_t i = 0; i < d; ++i) orow[i] = xrow[i] + yrow[i];
            }
        }
        detail::check_finite_stream(L.o, "fast-weight sublayer");

        // trailing injection: computed and traced, never applied
        if (tracing && gamma != 0.0 && !opt.ablate_reentry) {
            std::fill(inject.begin(), inject.end(), 0.0);
            kernels::linear_forward(L.y.data() + (T - 1) * B * d, B, d, wr, d, inject.data());
            for (std::size_t b = 0; b < B; ++b) {
                double* rrow = L.reentry.data() + ((T - 1) * B + b) * d;
                for (std::size_t i = 0; i < d; ++i) rrow[i] = gamma * inject[b * d + i];
            }
        }

        // ---- feed-forward sublayer ----
        fit(L.ffn_pre, N * ff);
        kernels::linear_forward(L.o.data(), N, d, params.tensor(bl + "ffn_1"), ff,
                                L.ffn_pre.data());
        fit(L.ffn_act, N * ff);
        for (std::size_t i = 0; i < N * ff; ++i) L.ffn_act[i] = detail::gelu(L.ffn_pre[i]);

        std::vector<double> ffn_out(N * d, 0.0);
        kernels::linear_forward(L.ffn_act.data(), N, ff, params.tensor(bl + "ffn_2"), d,
                                ffn_out.data());
        for (std::size_t i = 0; i < N * d; ++i) stream[i] = L.o[i] + ffn_out[i];
        detail::check_finite_stream(stream, "feed-forward sublayer");

        if (!tape_mode) {
            // keep only what tracing needs
            L.q.clear();
            L.k.clear();
            L.v.clear();
            L.probs.clear();
            L.mix.clear();
            L.a_out.clear();
            L.w.clear();
            L.yraw.clear();
            L.ffn_pre.clear();
            L.ffn_act.clear();
            if (l + 1 < cfg.layers && opt.trace == TraceMode::none) {
                L.xf.clear();
                L.y.clear();
                L.o.clear();
            }
        }
    }

    tape.x_final = stream;
    tape.logits = Matrix(N, cfg.vocab);
    kernels::linear_forward(stream.data(), N, d, params.tensor("head"), cfg.vocab,
                            tape.logits.data.data());

    ForwardOutput out;
    out.logits = tape.logits;

    if (opt.trace == TraceMode::hidden || opt.trace == TraceMode::full) {
        const Tape::Layer& last = tape.layers.back();
        out.hidden.reserve(T);
        for (std::size_t t = 0; t < T; ++t) {
            Matrix h(B, d);
            std::copy(last.o.begin() + t * B * d, last.o.begin() + (t + 1) * B * d,
                      h.data.begin());
            out.hidden.push_back(std::move(h));
        }
    }
    if (tracing) {
        out.traces.assign(cfg.layers, {});
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            const Tape::Layer& L = tape.layers[l];
            out.traces[l].assign(B, {});
            for (std::size_t b = 0; b < B; ++b) {
                out.traces[l][b].resize(T);
                for (std::size_t t = 0; t < T; ++t) {
                    StepTrace& tr = out.traces[l][b][t];
                    const std::size_t row = t * B + b;
                    tr.x_pre.assign(L.xf.begin() + row * d, L.xf.begin() + row * d + d);
                    tr.y.assign(L.y.begin() + row * d, L.y.begin() + row * d + d);
                    if (!L.reentry.empty())
                        tr.reentry.assign(L.reentry.begin() + row * d,
                                          L.reentry.begin() + row * d + d);
                    else
                        tr.reentry.assign(d, 0.0);
                    tr.y_norm_raw = L.ynorm[row];
                    if (t + 1 < T) {
                        const std::size_t next = (t + 1) * B + b;
                        tr.x_next.assign(L.xf.begin() + next * d, L.xf.begin() + next * d + d);
                    } else {
                        tr.x_next = tr.x_pre;
                        for (std::size_t i = 0; i < d; ++i) tr.x_next[i] += tr.reentry[i];
                    }
                }
            }
        }
    }
    return out;
}

// Mean next-byte cross-entropy (natural log) over all positions.
inline double loss_value(const Matrix& logits, const TokenBatch& targets) {
    const std::size_t B = targets.size();
    const std::size_t T = targets[0].size();
    if (logits.rows != T * B) throw std::invalid_argument("loss: shape mismatch");
    double total = 0.0;
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t b = 0; b < B; ++b) {
            const double* row = logits.row(t * B + b);
            double mx = row[0];
            for (std::size_t i = 1; i < logits.cols; ++i) mx = std::max(mx, row[i]);
            double z = 0.0;
            for (std::size_t i = 0; i < logits.cols; ++i) z += std::exp(row[i] - mx);
            total += std::log(z) + mx - row[targets[b][t]];
        }
    return total / static_cast<double>(T * B);
}

struct BackwardDiag {
    // gradient arriving at each fast-weight-sublayer input row, per layer
    std::vector<std::vector<double>> dxf;  // [layer] -> N x d
};

// Reverse pass over a recorded tape. Gradients land in `grads`, a flat
// buffer shaped like params.flat.
inline void backward(const ModelParams& params, const Tape& tape, const TokenBatch& tokens,
                     const TokenBatch& targets, std::vector<double>& grads,
                     BackwardDiag* diag = nullptr) {
    const ModelConfig& cfg = params.cfg;
    const std::size_t d = cfg.d, H = cfg.heads, dh = d / H;
    const std::size_t r = cfg.fhrl.r, rd = r * d, ff = cfg.ff_mult * d;
    const std::size_t T = tape.T, B = tape.B, N = T * B;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    grads.assign(params.flat.size(), 0.0);
    if (tape.layers.empty() || tape.layers[0].u.empty())
        throw std::logic_error("backward: forward tape was not recorded");

    auto g = [&](const std::string& name) { return grads.data() + params.spec(name).offset; };
    if (diag) diag->dxf.assign(cfg.layers, {});

    // dlogits = (softmax - onehot) / N
    std::vector<double> dstream(N * d, 0.0);
    {
        std::vector<double> dlogits(N * cfg.vocab);
        const double invn = 1.0 / static_cast<double>(N);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t b = 0; b < B; ++b) {
                const std::size_t row = t * B + b;
                const double* lrow = tape.logits.row(row);
                double mx = lrow[0];
                for (std::size_t i = 1; i < cfg.vocab; ++i) mx = std::max(mx, lrow[i]);
                double z = 0.0;
                for (std::size_t i = 0; i < cfg.vocab; ++i) z += std::exp(lrow[i] - mx);
                double* drow = dlogits.data() + row * cfg.vocab;
                for (std::size_t i = 0; i < cfg.vocab; ++i)
                    drow[i] = std::exp(lrow[i] - mx) / z * invn;
                drow[targets[b][t]] -= invn;
            }

        kernels::linear_backward_weight(dlogits.data(), N, cfg.vocab, tape.x_final.data(), d,
                                        g("head"));
        kernels::linear_backward_input(dlogits.data(), N, cfg.vocab, params.tensor("head"), d,
                                       dstream.data());
    }

    std::vector<double> dy(N * d), dyraw(N * d), dxf(N * d), dwbuf(N * d);
    std::vector<double> dproj_q(N * rd), dproj_k(N * rd);
    std::vector<double> dffn_act(N * ff), dffn_pre(N * ff);
    std::vector<double> dq(N * d), dk(N * d), dv(N * d), dmix(N * d);
    std::vector<double> m_loc(r), dm_loc(r);

    for (std::size_t li = cfg.layers; li-- > 0;) {
        const Tape::Layer& L = tape.layers[li];
        const std::string bl = "block" + std::to_string(li) + ".";

        // ---- feed-forward backward; dstream is d(loss)/d(layer output) ----
        std::fill(dffn_act.begin(), dffn_act.end(), 0.0);
        kernels::linear_backward_weight(dstream.data(), N, d, L.ffn_act.data(), ff,
                                        g(bl + "ffn_2"));
        kernels::linear_backward_input(dstream.data(), N, d, params.tensor(bl + "ffn_2"), ff,
                                       dffn_act.data());
        for (std::size_t i = 0; i < N * ff; ++i)
            dffn_pre[i] = dffn_act[i] * detail::gelu_grad(L.ffn_pre[i]);
        kernels::linear_backward_weight(dffn_pre.data(), N, ff, L.o.data(), d, g(bl + "ffn_1"));
        // do = dstream (residual) + W1 path
        std::vector<double>& do_ = dstream;  // reuse in place
        kernels::linear_backward_input(dffn_pre.data(), N, ff, params.tensor(bl + "ffn_1"), d,
                                       do_.data());

        // ---- fast-weight sublayer backward ----
        std::copy(do_.begin(), do_.end(), dy.begin());
        std::copy(do_.begin(), do_.end(), dxf.begin());
        std::fill(dyraw.begin(), dyraw.end(), 0.0);
        std::fill(dwbuf.begin(), dwbuf.end(), 0.0);
        std::fill(dproj_q.begin(), dproj_q.end(), 0.0);
        std::fill(dproj_k.begin(), dproj_k.end(), 0.0);

        const double alpha = cfg.fhrl.alpha, beta = cfg.fhrl.beta;
        for (std::size_t row = 0; row < N; ++row) {
            const double* yr = L.yraw.data() + row * d;
            const double* dyrow = dy.data() + row * d;
            double* dyr = dyraw.data() + row * d;
            const double n = L.ynorm[row];
            if (beta == 0.0) {
                std::copy(dyrow, dyrow + d, dyr);
            } else if (n == 0.0) {
                // output pinned at zero; nothing flows
            } else {
                const double gain = homeostasis_gain(n, beta);
                const double gprime = -beta * gain * gain;
                const double dot_dy_yr = kernels::dot_k(dyrow, yr, d);
                const double coef = dot_dy_yr * gprime / n;
                for (std::size_t i = 0; i < d; ++i) dyr[i] = gain * dyrow[i] + coef * yr[i];
            }

            // y_raw = U^T m with m = V w
            const double* u_now = L.u.data() + row * rd;
            const double* v_now = L.v_fw.data() + row * rd;
            const double* wrow = L.w.data() + row * d;
            for (std::size_t s = 0; s < r; ++s) {
                m_loc[s] = kernels::dot_k(v_now + s * d, wrow, d);
                dm_loc[s] = kernels::dot_k(u_now + s * d, dyr, d);
            }
            double* dwrow = dwbuf.data() + row * d;
            for (std::size_t s = 0; s < r; ++s) kernels::axpy_k(dm_loc[s], v_now + s * d, dwrow, d);

            // EMA + row-normalization backward into the projections
            double* dzq = dproj_q.data() + row * rd;
            double* dzk = dproj_k.data() + row * rd;
            const double* nu = L.nu.data() + row * rd;
            const double* nv = L.nv.data() + row * rd;
            for (std::size_t s = 0; s < r; ++s) {
                // dU_s = m_s * dyr ; dNU_s = alpha * dU_s
                const double nz_u = L.nzu[row * r + s];
                if (nz_u > 0.0) {
                    const double mscale = alpha * m_loc[s];
                    const double* nus = nu + s * d;
                    double proj = 0.0;
                    for (std::size_t i = 0; i < d; ++i) proj += dyr[i] * nus[i];
                    proj *= mscale;
                    double* dzs = dzq + s * d;
                    for (std::size_t i = 0; i < d; ++i)
                        dzs[i] = (mscale * dyr[i] - proj * nus[i]) / nz_u;
                }
                // dV_s = dm_s * w ; dNV_s = alpha * dV_s
                const double nz_v = L.nzv[row * r + s];
                if (nz_v > 0.0) {
                    const double dscale = alpha * dm_loc[s];
                    const double* nvs = nv + s * d;
                    double proj = 0.0;
                    for (std::size_t i = 0; i < d; ++i) proj += wrow[i] * nvs[i];
                    proj *= dscale;
                    double* dzs = dzk + s * d;
                    for (std::size_t i = 0; i < d; ++i)
                        dzs[i] = (dscale * wrow[i] - proj * nvs[i]) / nz_v;
                }
            }
        }

        // wide weight/input passes
        kernels::linear_backward_weight(dwbuf.data(), N, d, L.xf.data(), d, g(bl + "fhrl_v"));
        kernels::linear_backward_input(dwbuf.data(), N, d, params.tensor(bl + "fhrl_v"), d,
                                       dxf.data());
        kernels::linear_backward_weight(dproj_q.data(), N, rd, L.xf.data(), d, g(bl + "fhrl_q"));
        kernels::linear_backward_input(dproj_q.data(), N, rd, params.tensor(bl + "fhrl_q"), d,
                                       dxf.data());
        kernels::linear_backward_weight(dproj_k.data(), N, rd, L.xf.data(), d, g(bl + "fhrl_k"));
        kernels::linear_backward_input(dproj_k.data(), N, rd, params.tensor(bl + "fhrl_k"), d,
                                       dxf.data());

        // reentry projection: x_f[t] received gamma * Wr * y[t-1] with y
        // detached, so only Wr accumulates gradient
        if (cfg.fhrl.gamma != 0.0 && T > 1) {
            std::vector<double> scaled(dxf.begin() + B * d, dxf.end());
            for (double& v : scaled) v *= cfg.fhrl.gamma;
            kernels::linear_backward_weight(scaled.data(), (T - 1) * B, d, L.y.data(), d,
                                            g(bl + "fhrl_r"));
        }
        if (diag) diag->dxf[li] = dxf;

        // ---- attention backward; dxf is d(loss)/d(a_out) ----
        std::fill(dmix.begin(), dmix.end(), 0.0);
        kernels::linear_backward_weight(dxf.data(), N, d, L.mix.data(), d, g(bl + "attn_o"));
        kernels::linear_backward_input(dxf.data(), N, d, params.tensor(bl + "attn_o"), d,
                                       dmix.data());

        std::fill(dq.begin(), dq.end(), 0.0);
        std::fill(dk.begin(), dk.end(), 0.0);
        std::fill(dv.begin(), dv.end(), 0.0);
        std::vector<double> dprobs(T), dscores(T);
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t h = 0; h < H; ++h) {
                const double* probs_bh = L.probs.data() + (b * H + h) * T * T;
                for (std::size_t t = 0; t < T; ++t) {
                    const double* dctx = dmix.data() + (t * B + b) * d + h * dh;
                    const double* prow = probs_bh + t * T;
                    double dot_pd = 0.0;
                    for (std::size_t j = 0; j <= t; ++j) {
                        dprobs[j] = kernels::dot_k(dctx, L.v.data() + (j * B + b) * d + h * dh, dh);
                        kernels::axpy_k(prow[j], dctx, dv.data() + (j * B + b) * d + h * dh, dh);
                        dot_pd += prow[j] * dprobs[j];
                    }
                    double* dqrow = dq.data() + (t * B + b) * d + h * dh;
                    const double* qrow = L.q.data() + (t * B + b) * d + h * dh;
                    for (std::size_t j = 0; j <= t; ++j) {
                        const double ds = prow[j] * (dprobs[j] - dot_pd) * inv_sqrt_dh;
                        if (ds != 0.0) {
                            kernels::axpy_k(ds, L.k.data() + (j * B + b) * d + h * dh, dqrow, dh);
                            kernels::axpy_k(ds, qrow, dk.data() + (j * B + b) * d + h * dh, dh);
                        }
                    }
                }
            }
        }

        kernels::linear_backward_weight(dq.data(), N, d, L.x_in.data(), d, g(bl + "attn_q"));
        kernels::linear_backward_weight(dk.data(), N, d, L.x_in.data(), d, g(bl + "attn_k"));
        kernels::linear_backward_weight(dv.data(), N, d, L.x_in.data(), d, g(bl + "attn_v"));

        // dstream for the layer below: residual + projection paths
        std::copy(dxf.begin(), dxf.end(), dstream.begin());
        kernels::linear_backward_input(dq.data(), N, d, params.tensor(bl + "attn_q"), d,
                                       dstream.data());
        kernels::linear_backward_input(dk.data(), N, d, params.tensor(bl + "attn_k"), d,
                                       dstream.data());
        kernels::linear_backward_input(dv.data(), N, d, params.tensor(bl + "attn_v"), d,
                                       dstream.data());
    }

    // embedding + positional scatter
    {
        double* demb = g("embedding");
        double* dpos = g("positional");
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t b = 0; b < B; ++b) {
                const double* drow = dstream.data() + (t * B + b) * d;
                kernels::axpy_k(1.0, drow, demb + static_cast<std::size_t>(tokens[b][t]) * d, d);
                kernels::axpy_k(1.0, drow, dpos + t * d, d);
            }
    }
}

// ---------------------------------------------------------------------------
// Optimizer: decoupled-weight-decay Adam with bias correction.
// ---------------------------------------------------------------------------
struct AdamState {
    std::vector<double> m, v;
    std::size_t t = 0;
};

inline void adamw_step(std::vector<double>& flat, const std::vector<double>& grads,
                       AdamState& st, const TrainConfig& tc) {
    if (grads.size() != flat.size()) throw std::invalid_argument("adamw: gradient shape mismatch");
    if (st.m.size() != flat.size()) {
        st.m.assign(flat.size(), 0.0);
        st.v.assign(flat.size(), 0.0);
        st.t = 0;
    }
    ++st.t;
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
    const double decay = tc.lr * tc.weight_decay;
    for (std::size_t i = 0; i < flat.size(); ++i) {
        const double gi = grads[i];
        st.m[i] = b1 * st.m[i] + (1.0 - b1) * gi;
        st.v[i] = b2 * st.v[i] + (1.0 - b2) * gi * gi;
        flat[i] -= decay * flat[i];
        flat[i] -= tc.lr * (st.m[i] / bc1) / (std::sqrt(st.v[i] / bc2) + eps);
    }
}

// ---------------------------------------------------------------------------
// Training loop: fully deterministic given the seed. Divergence (non-finite
// loss or runaway activations) stops the run and raises a flag instead of
// aborting.
// ---------------------------------------------------------------------------
struct TrainResult {
    ModelParams params;
    Vector loss_curve;
    bool diverged = false;
    std::size_t steps_run = 0;
};

inline TrainResult train(const ModelConfig& mc, const TrainConfig& tc,
                         const std::vector<std::uint8_t>& corpus) {
    mc.validate();
    tc.validate();
    Rng base(tc.seed);
    TrainResult res;
    res.params = init_params(mc, base.substream(1));
    AdamState opt;
    std::vector<double> grads;

    Tape tape;  // reused across steps
    for (std::size_t step = 0; step < tc.steps; ++step) {
        Rng data_rng = base.substream(2, step);
        TokenBatch toks(tc.batch), tgts(tc.batch);
        for (std::size_t b = 0; b < tc.batch; ++b) {
            const TokenSeq chunk = sample_chunk(corpus, mc.context, data_rng);
            toks[b].assign(chunk.begin(), chunk.end() - 1);
            tgts[b].assign(chunk.begin() + 1, chunk.end());
        }

        ForwardOptions fo;
        fo.record_tape = true;
        double loss = 0.0;
        try {
            forward(res.params, toks, base.substream(3, step), fo, &tape);
            loss = loss_value(tape.logits, tgts);
        } catch (const DivergenceError&) {
            res.diverged = true;
            break;
        }
        if (!std::isfinite(loss)) {
            res.diverged = true;
            break;
        }

        backward(res.params, tape, toks, tgts, grads);
        if (tc.clip) {
            double gn = 0.0;
            for (double gv : grads) gn += gv * gv;
            gn = std::sqrt(gn);
            if (gn > tc.clip_norm)
                for (double& gv : grads) gv *= tc.clip_norm / gn;
        }
        adamw_step(res.params.flat, grads, opt, tc);
        res.loss_curve.push_back(loss);
        res.steps_run = step + 1;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Checkpoint container: magic + version + JSON header (configs, seed,
// parameter count) + raw little-endian doubles. Round-trips bit-exactly.
// ---------------------------------------------------------------------------
struct Checkpoint {
    ModelParams params;
    TrainConfig train;
};

inline void save_checkpoint(const std::string& path, const ModelParams& params,
                            const TrainConfig& tc) {
    nlohmann::json header;
    header["model"] = params.cfg;
    header["train"] = tc;
    header["param_count"] = params.flat.size();
    const std::string hs = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path);
    os.write("FHRLCKPT", 8);
    const std::uint32_t version = 1;
    os.write(reinterpret_cast<const char*>(&version), sizeof version);
    const std::uint64_t hlen = hs.size();
    os.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    os.write(reinterpret_cast<const char*>(params.flat.data()),
             static_cast<std::streamsize>(params.flat.size() * sizeof(double)));
    if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, "FHRLCKPT", 8) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    std::uint32_t version = 0;
    is.read(reinterpret_cast<char*>(&version), sizeof version);
    if (version != 1) throw std::runtime_error("checkpoint: unsupported version");
    std::uint64_t hlen = 0;
    is.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
    std::string hs(hlen, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(hlen));
    const nlohmann::json header = nlohmann::json::parse(hs);

    Checkpoint ck;
    const ModelConfig mc = header.at("model").get<ModelConfig>();
    ck.train = header.at("train").get<TrainConfig>();
    ck.params = make_params(mc);
    const std::size_t count = header.at("param_count").get<std::size_t>();
    if (count != ck.params.flat.size())
        throw std::runtime_error("checkpoint: parameter count mismatch");
    is.read(reinterpret_cast<char*>(ck.params.flat.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated file " + path);
    return ck;
}

}  // namespace fhrl
