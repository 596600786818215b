#pragma once
// The reentrant fast-weight layer: low-rank EMA trace pair (U, V), a
// homeostatic gain that pulls output norms toward 1, and a learned
// reentry projection that feeds each step's output into the next step's
// input. The forward loop records a full per-step trace, which is what
// the recursion metrics consume.

#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fhrl/numerics.hpp"

namespace fhrl {

struct FHRLConfig {
    std::size_t d = 192;    // model width
    std::size_t r = 8;      // fast-weight rank
    double alpha = 0.5;     // EMA rate, (0, 1]
    double beta = 0.5;      // homeostatic strength, [0, 1]; 0 disables the gain
    double gamma = 0.1;     // reentry gain, >= 0
    double sigma = 5e-4;    // rank-slot perturbation std
    double eps = 1e-6;      // radial guard; used by the continuous-time field only

    void validate() const {
        if (d == 0 || r == 0) throw std::invalid_argument("fhrl config: d and r must be positive");
        if (!(alpha > 0.0) || alpha > 1.0)
            throw std::invalid_argument("fhrl config: alpha must be in (0, 1]");
        if (beta < 0.0 || beta > 1.0)
            throw std::invalid_argument("fhrl config: beta must be in [0, 1] (0 = homeostasis off)");
        if (gamma < 0.0) throw std::invalid_argument("fhrl config: gamma must be >= 0");
        if (sigma < 0.0) throw std::invalid_argument("fhrl config: sigma must be >= 0");
        if (eps < 0.0) throw std::invalid_argument("fhrl config: eps must be >= 0");
    }
};

// Rank-r trace pair; rows are unit-capped memory slots.
struct FastWeightState {
    Matrix u;  // r x d
    Matrix v;  // r x d

    FastWeightState() = default;
    FastWeightState(std::size_t r, std::size_t d) : u(r, d), v(r, d) {}
};

struct FHRLParams {
    Matrix wq;  // (r*d) x d
    Matrix wk;  // (r*d) x d
    Matrix wv;  // d x d
    Matrix wr;  // d x d

    void check_shapes(const FHRLConfig& cfg) const {
        const std::size_t rd = cfg.r * cfg.d;
        if (wq.rows != rd || wq.cols != cfg.d || wk.rows != rd || wk.cols != cfg.d ||
            wv.rows != cfg.d || wv.cols != cfg.d || wr.rows != cfg.d || wr.cols != cfg.d)
            throw std::invalid_argument("fhrl params: shape mismatch with config");
    }
};

// Per-token record. x_next equals the next step's x_pre within a sequence;
// the final step's x_next carries the (discarded) injection target.
struct StepTrace {
    Vector x_pre;       // step input, after the previous step's injection
    Vector y;           // post-homeostasis output
    Vector reentry;     // gamma * wr * y
    Vector x_next;
    double y_norm_raw = 0.0;
};

inline double homeostasis_gain(double norm, double beta) {
    if (beta == 0.0) return 1.0;
    return 1.0 / (1.0 + beta * (norm - 1.0));
}

// y / (1 + beta * (||y|| - 1)); the zero vector is a fixed point.
inline Vector homeostasis(const Vector& y, double beta) {
    if (beta < 0.0 || beta > 1.0)
        throw std::invalid_argument("homeostasis: beta must be in [0, 1]");
    if (beta == 0.0) return y;
    const double n = norm2(y);
    if (n == 0.0) return y;
    Vector out = y;
    scale(out, homeostasis_gain(n, beta));
    return out;
}

// L2-normalize each row in place; zero rows pass through. Returns the
// pre-normalization row norms.
inline Vector normalize_rows(Matrix& m) {
    Vector norms(m.rows, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        double s = 0.0;
        double* r = m.row(i);
        for (std::size_t j = 0; j < m.cols; ++j) s += r[j] * r[j];
        const double n = std::sqrt(s);
        norms[i] = n;
        if (n > 0.0)
            for (std::size_t j = 0; j < m.cols; ++j) r[j] /= n;
    }
    return norms;
}

inline Matrix reshape_to_slots(const Vector& flat, std::size_t r, std::size_t d) {
    if (flat.size() != r * d) throw std::invalid_argument("reshape_to_slots: size mismatch");
    Matrix m(r, d);
    m.data = flat;
    return m;
}

// One EMA step: U <- (1-a) U + a normalize(Wq x + eps_u), same for V with Wk.
// Noise is resampled on every call (per token).
inline FastWeightState ema_update(const FastWeightState& state, const Vector& x,
                                  const FHRLParams& params, const FHRLConfig& cfg, Rng& rng) {
    if (x.size() != cfg.d || state.u.rows != cfg.r || state.u.cols != cfg.d)
        throw std::invalid_argument("ema_update: shape mismatch");
    params.check_shapes(cfg);

    Matrix q = reshape_to_slots(matvec(params.wq, x), cfg.r, cfg.d);
    Matrix k = reshape_to_slots(matvec(params.wk, x), cfg.r, cfg.d);
    const Vector eps_u = gauss(rng, cfg.r * cfg.d, cfg.sigma);
    const Vector eps_v = gauss(rng, cfg.r * cfg.d, cfg.sigma);
    for (std::size_t i = 0; i < q.size(); ++i) q.data[i] += eps_u[i];
    for (std::size_t i = 0; i < k.size(); ++i) k.data[i] += eps_v[i];
    normalize_rows(q);
    normalize_rows(k);

    FastWeightState next(cfg.r, cfg.d);
    const double a = cfg.alpha;
    for (std::size_t i = 0; i < next.u.size(); ++i) {
        next.u.data[i] = (1.0 - a) * state.u.data[i] + a * q.data[i];
        next.v.data[i] = (1.0 - a) * state.v.data[i] + a * k.data[i];
    }
    return next;
}

// (U^T V) (Wv x), evaluated as U^T (V (Wv x)) in O(r d).
inline Vector fast_output(const FastWeightState& state, const Vector& x,
                          const FHRLParams& params) {
    if (params.wv.cols != x.size()) throw std::invalid_argument("fast_output: shape mismatch");
    const Vector w = matvec(params.wv, x);
    if (state.v.cols != w.size()) throw std::invalid_argument("fast_output: shape mismatch");
    Vector m(state.v.rows, 0.0);
    for (std::size_t i = 0; i < state.v.rows; ++i) {
        const double* vr = state.v.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < state.v.cols; ++j) s += vr[j] * w[j];
        m[i] = s;
    }
    Vector y(state.u.cols, 0.0);
    for (std::size_t i = 0; i < state.u.rows; ++i) {
        const double* ur = state.u.row(i);
        for (std::size_t j = 0; j < state.u.cols; ++j) y[j] += ur[j] * m[i];
    }
    return y;
}

// reentry = gamma * wr * y_post; x_next = x + reentry.
inline std::pair<Vector, Vector> reentry_step(const Vector& x, const Vector& y_post,
                                              const Matrix& wr, double gamma) {
    Vector reentry = matvec(wr, y_post);
    scale(reentry, gamma);
    Vector x_next = x;
    for (std::size_t i = 0; i < x_next.size(); ++i) x_next[i] += reentry[i];
    return {std::move(x_next), std::move(reentry)};
}

struct ForwardTrace {
    std::vector<Vector> ys;
    std::vector<StepTrace> traces;
    FastWeightState final_state;
};

// Algorithm-1 loop: U0 = V0 = 0, then per token project, perturb, EMA,
// bind, homeostasis, and inject the gained output into the next token's
// incoming representation. The final step's injection is traced but has
// no recipient.
inline ForwardTrace fhrl_forward(const std::vector<Vector>& xs, const FHRLParams& params,
                                 const FHRLConfig& cfg, Rng& rng) {
    if (xs.empty()) throw std::invalid_argument("fhrl_forward: empty input sequence");
    cfg.validate();
    params.check_shapes(cfg);

    ForwardTrace out;
    out.final_state = FastWeightState(cfg.r, cfg.d);
    Vector carry;  // pending reentry for the next step

    for (std::size_t t = 0; t < xs.size(); ++t) {
        if (xs[t].size() != cfg.d) throw std::invalid_argument("fhrl_forward: input width mismatch");
        Vector x = xs[t];
        if (!carry.empty())
            for (std::size_t i = 0; i < x.size(); ++i) x[i] += carry[i];

        out.final_state = ema_update(out.final_state, x, params, cfg, rng);
        const Vector y_raw = fast_output(out.final_state, x, params);
        const double y_norm_raw = norm2(y_raw);
        Vector y = homeostasis(y_raw, cfg.beta);

        auto [x_next, reentry] = reentry_step(x, y, params.wr, cfg.gamma);
        if (t + 1 < xs.size()) {
            carry = reentry;
            // x_next as traced must equal the next step's x_pre
            x_next = xs[t + 1];
            for (std::size_t i = 0; i < x_next.size(); ++i) x_next[i] += reentry[i];
        }

        StepTrace tr;
        tr.x_pre = std::move(x);
        tr.y = y;
        tr.reentry = std::move(reentry);
        tr.x_next = std::move(x_next);
        tr.y_norm_raw = y_norm_raw;
        out.traces.push_back(std::move(tr));
        out.ys.push_back(std::move(y));
    }
    return out;
}

// Central finite-difference Jacobian of a d -> d map.
inline Matrix jacobian_estimate(const std::function<Vector(const Vector&)>& step_fn,
                                const Vector& x, double h = 1e-5) {
    if (!(h > 0.0)) throw std::invalid_argument("jacobian_estimate: h must be positive");
    const std::size_t d = x.size();
    Matrix j(d, d);
    Vector xp = x, xm = x;
    for (std::size_t col = 0; col < d; ++col) {
        xp[col] = x[col] + h;
        xm[col] = x[col] - h;
        const Vector fp = step_fn(xp);
        const Vector fm = step_fn(xm);
        if (fp.size() != d || fm.size() != d)
            throw std::invalid_argument("jacobian_estimate: map is not d -> d");
        for (std::size_t row = 0; row < d; ++row)
            j(row, col) = (fp[row] - fm[row]) / (2.0 * h);
        xp[col] = x[col];
        xm[col] = x[col];
    }
    return j;
}

// One JSON record per step: {t, x_pre, y, reentry, x_next, y_norm_raw}.
inline void dump_traces_jsonl(std::ostream& os, const std::vector<StepTrace>& traces) {
    for (std::size_t t = 0; t < traces.size(); ++t) {
        nlohmann::json rec;
        rec["t"] = t;
        rec["x_pre"] = traces[t].x_pre;
        rec["y"] = traces[t].y;
        rec["reentry"] = traces[t].reentry;
        rec["x_next"] = traces[t].x_next;
        rec["y_norm_raw"] = traces[t].y_norm_raw;
        os << rec.dump() << '\n';
    }
}

}  // namespace fhrl
