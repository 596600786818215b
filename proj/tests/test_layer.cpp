#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "fhrl/layer.hpp"
#include "oracles.hpp"

using namespace fhrl;

namespace {

FHRLConfig tiny_cfg(std::size_t d, std::size_t r) {
    FHRLConfig cfg;
    cfg.d = d;
    cfg.r = r;
    cfg.alpha = 0.5;
    cfg.beta = 0.5;
    cfg.gamma = 0.1;
    cfg.sigma = 0.0;
    return cfg;
}

FHRLParams random_params(const FHRLConfig& cfg, Rng& rng, double scale = 0.3) {
    FHRLParams p;
    p.wq = Matrix(cfg.r * cfg.d, cfg.d);
    p.wk = Matrix(cfg.r * cfg.d, cfg.d);
    p.wv = Matrix(cfg.d, cfg.d);
    p.wr = Matrix(cfg.d, cfg.d);
    for (double& x : p.wq.data) x = scale * rng.normal();
    for (double& x : p.wk.data) x = scale * rng.normal();
    for (double& x : p.wv.data) x = scale * rng.normal();
    for (double& x : p.wr.data) x = scale * rng.normal();
    return p;
}

}  // namespace

TEST_CASE("config validation") {
    FHRLConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.alpha = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.alpha = 0.5;
    cfg.beta = 1.5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.beta = 0.0;  // homeostasis-off ablation is allowed
    CHECK_NOTHROW(cfg.validate());
    cfg.gamma = -0.1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.gamma = 0.0;
    cfg.sigma = -1e-4;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("homeostasis: unit norm is a fixed point") {
    Vector y = {0.6, 0.8};
    const Vector out = homeostasis(y, 0.7);
    CHECK(out[0] == Catch::Approx(0.6).margin(1e-12));
    CHECK(out[1] == Catch::Approx(0.8).margin(1e-12));
}

TEST_CASE("homeostasis: beta = 0 is the identity") {
    const Vector y = {3.0, -4.0};
    CHECK(homeostasis(y, 0.0) == y);
}

TEST_CASE("homeostasis: norm 2 with beta 0.5 scales by 1/1.5") {
    Vector y = {2.0, 0.0};
    const Vector out = homeostasis(y, 0.5);
    CHECK(out[0] == Catch::Approx(2.0 / 1.5).margin(1e-12));
    CHECK(norm2(out) == Catch::Approx(4.0 / 3.0).margin(1e-12));
}

TEST_CASE("homeostasis: zero maps to zero, bad beta rejected") {
    const Vector z(4, 0.0);
    CHECK(homeostasis(z, 0.9) == z);
    CHECK_THROWS_AS(homeostasis(z, 1.5), std::invalid_argument);
}

TEST_CASE("homeostasis: contraction over random norms in [0.01, 100]") {
    Rng rng(31);
    int violations = 0;
    for (int i = 0; i < 10000; ++i) {
        const double beta = 1e-6 + (1.0 - 1e-6) * rng.uniform01();
        const double target = std::pow(10.0, -2.0 + 4.0 * rng.uniform01());
        Vector y(5);
        for (double& x : y) x = rng.normal();
        const double n = norm2(y);
        scale(y, target / n);
        const Vector out = homeostasis(y, beta);
        if (std::abs(norm2(out) - 1.0) > std::abs(norm2(y) - 1.0) + 1e-12) ++violations;
    }
    CHECK(violations == 0);
}

TEST_CASE("homeostasis: preserves direction with nonnegative gain") {
    Rng rng(32);
    for (int i = 0; i < 200; ++i) {
        Vector y(6);
        for (double& x : y) x = 3.0 * rng.normal();
        const Vector out = homeostasis(y, 0.8);
        const double g = homeostasis_gain(norm2(y), 0.8);
        CHECK(g >= 0.0);
        for (std::size_t j = 0; j < y.size(); ++j)
            CHECK(out[j] == Catch::Approx(g * y[j]).margin(1e-14 * (1.0 + std::abs(y[j]))));
    }
}

TEST_CASE("ema_update: alpha = 0 leaves the state unchanged") {
    FHRLConfig cfg = tiny_cfg(3, 2);
    cfg.alpha = 0.0;  // op-level behavior; config validation would reject this
    Rng prng(1);
    FHRLParams p = random_params(cfg, prng);
    FastWeightState s(cfg.r, cfg.d);
    for (double& x : s.u.data) x = prng.normal();
    for (double& x : s.v.data) x = prng.normal();
    Rng rng(2);
    const FastWeightState next = ema_update(s, Vector{1.0, -2.0, 0.5}, p, cfg, rng);
    CHECK(next.u.data == s.u.data);
    CHECK(next.v.data == s.v.data);
}

TEST_CASE("ema_update: alpha = 1, sigma = 0 replaces with row-normalized projections") {
    FHRLConfig cfg = tiny_cfg(3, 2);
    cfg.alpha = 1.0;
    Rng prng(3);
    FHRLParams p = random_params(cfg, prng);
    FastWeightState s(cfg.r, cfg.d);
    const Vector x = {0.3, -1.0, 2.0};
    Rng rng(4);
    const FastWeightState next = ema_update(s, x, p, cfg, rng);

    Matrix q = reshape_to_slots(matvec(p.wq, x), cfg.r, cfg.d);
    normalize_rows(q);
    for (std::size_t i = 0; i < q.size(); ++i)
        CHECK(next.u.data[i] == Catch::Approx(q.data[i]).margin(1e-15));
    for (std::size_t i = 0; i < cfg.r; ++i) {
        double n = 0.0;
        for (std::size_t j = 0; j < cfg.d; ++j) n += next.u(i, j) * next.u(i, j);
        CHECK(std::sqrt(n) == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("ema_update: hand-evaluated half step, r = 1, d = 2") {
    FHRLConfig cfg = tiny_cfg(2, 1);
    cfg.alpha = 0.5;
    FHRLParams p;
    p.wq = Matrix(2, 2);
    p.wq(1, 1) = 1.0;  // Q = [0, x2]
    p.wk = Matrix(2, 2);
    p.wk(1, 1) = 1.0;
    p.wv = Matrix::identity(2);
    p.wr = Matrix::identity(2);
    FastWeightState s(1, 2);
    s.u(0, 0) = 1.0;  // U0 = [1, 0]
    Rng rng(5);
    const FastWeightState next = ema_update(s, Vector{0.0, 1.0}, p, cfg, rng);
    CHECK(next.u(0, 0) == Catch::Approx(0.5).margin(1e-15));
    CHECK(next.u(0, 1) == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("ema_update: rejects shape mismatch") {
    FHRLConfig cfg = tiny_cfg(3, 2);
    Rng prng(6);
    FHRLParams p = random_params(cfg, prng);
    FastWeightState s(cfg.r, cfg.d);
    Rng rng(7);
    CHECK_THROWS_AS(ema_update(s, Vector{1.0, 2.0}, p, cfg, rng), std::invalid_argument);
}

TEST_CASE("ema_update: rows stay within the unit ball from zero init") {
    FHRLConfig cfg = tiny_cfg(4, 3);
    cfg.sigma = 1e-3;
    Rng prng(8);
    FHRLParams p = random_params(cfg, prng);
    FastWeightState s(cfg.r, cfg.d);
    Rng rng(9);
    for (int t = 0; t < 200; ++t) {
        Vector x(cfg.d);
        for (double& xi : x) xi = rng.normal();
        s = ema_update(s, x, p, cfg, rng);
        for (std::size_t i = 0; i < cfg.r; ++i) {
            double nu = 0.0, nv = 0.0;
            for (std::size_t j = 0; j < cfg.d; ++j) {
                nu += s.u(i, j) * s.u(i, j);
                nv += s.v(i, j) * s.v(i, j);
            }
            REQUIRE(std::sqrt(nu) <= 1.0 + 1e-12);
            REQUIRE(std::sqrt(nv) <= 1.0 + 1e-12);
        }
    }
}

TEST_CASE("fast_output: empty memory gives zero") {
    FHRLConfig cfg = tiny_cfg(3, 2);
    Rng prng(10);
    FHRLParams p = random_params(cfg, prng);
    FastWeightState s(cfg.r, cfg.d);
    const Vector y = fast_output(s, Vector{1.0, 2.0, 3.0}, p);
    for (double v : y) CHECK(v == 0.0);
}

TEST_CASE("fast_output: rank-1 projector reproduces e1") {
    const std::size_t d = 4;
    FHRLParams p;
    p.wv = Matrix::identity(d);
    p.wq = Matrix(d, d);
    p.wk = Matrix(d, d);
    p.wr = Matrix::identity(d);
    FastWeightState s(1, d);
    s.u(0, 0) = 1.0;
    s.v(0, 0) = 1.0;
    Vector x(d, 0.0);
    x[0] = 1.0;
    const Vector y = fast_output(s, x, p);
    CHECK(y[0] == Catch::Approx(1.0).margin(1e-15));
    for (std::size_t i = 1; i < d; ++i) CHECK(y[i] == 0.0);
}

TEST_CASE("fast_output: value orthogonal to V rows gives zero") {
    const std::size_t d = 3;
    FHRLParams p;
    p.wv = Matrix::identity(d);
    p.wq = Matrix(d, d);
    p.wk = Matrix(d, d);
    p.wr = Matrix::identity(d);
    FastWeightState s(2, d);
    s.v(0, 0) = 1.0;  // rows span e1, e2
    s.v(1, 1) = 1.0;
    s.u(0, 2) = 1.0;
    s.u(1, 2) = 1.0;
    Vector x(d, 0.0);
    x[2] = 5.0;  // Wv x = 5 e3, orthogonal to both V rows
    const Vector y = fast_output(s, x, p);
    for (double v : y) CHECK(v == 0.0);
}

TEST_CASE("fast_output: O(rd) path equals explicit materialization") {
    Rng rng(12);
    for (std::size_t d : {4, 16}) {
        FHRLConfig cfg = tiny_cfg(d, 3);
        FHRLParams p = random_params(cfg, rng);
        FastWeightState s(cfg.r, cfg.d);
        for (double& x : s.u.data) x = rng.normal();
        for (double& x : s.v.data) x = rng.normal();
        Vector x(d);
        for (double& xi : x) xi = rng.normal();

        const Vector fast = fast_output(s, x, p);
        const Matrix weff = matmul(transpose(s.u), s.v);  // d x d
        const Vector slow = matvec(weff, matvec(p.wv, x));
        for (std::size_t i = 0; i < d; ++i)
            CHECK(fast[i] == Catch::Approx(slow[i]).margin(1e-10));
    }
}

TEST_CASE("reentry_step: gamma = 0 passes input through") {
    const Vector x = {1.0, 2.0};
    auto [x_next, reentry] = reentry_step(x, Vector{5.0, -1.0}, Matrix::identity(2), 0.0);
    CHECK(x_next == x);
    for (double v : reentry) CHECK(v == 0.0);
}

TEST_CASE("reentry_step: identity projection adds gamma * y") {
    Vector x = {1.0, 1.0, 1.0};
    Vector y(3, 0.0);
    y[1] = 1.0;
    auto [x_next, reentry] = reentry_step(x, y, Matrix::identity(3), 0.1);
    CHECK(x_next[0] == 1.0);
    CHECK(x_next[1] == Catch::Approx(1.1).margin(1e-15));
    CHECK(reentry[1] == Catch::Approx(0.1).margin(1e-15));
}

TEST_CASE("reentry_step: matches an independent matvec oracle") {
    Rng rng(14);
    Matrix wr(5, 5);
    for (double& v : wr.data) v = rng.normal();
    Vector y(5);
    for (double& v : y) v = rng.normal();
    auto [x_next, reentry] = reentry_step(Vector(5, 0.0), y, wr, 0.2);
    for (std::size_t i = 0; i < 5; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 5; ++j) s += wr(i, j) * y[j];
        CHECK(reentry[i] == Catch::Approx(0.2 * s).margin(1e-12));
    }
}

TEST_CASE("fhrl_forward: gamma = 0 equals the reentry-disabled loop") {
    FHRLConfig cfg = tiny_cfg(6, 2);
    cfg.gamma = 0.0;
    Rng prng(15);
    FHRLParams p = random_params(cfg, prng);
    std::vector<Vector> xs;
    for (int t = 0; t < 5; ++t) {
        Vector x(cfg.d);
        for (double& v : x) v = prng.normal();
        xs.push_back(x);
    }
    Rng rng(16);
    const ForwardTrace full = fhrl_forward(xs, p, cfg, rng);

    // hand loop with no injection at all
    Rng rng2(16);
    FastWeightState s(cfg.r, cfg.d);
    for (std::size_t t = 0; t < xs.size(); ++t) {
        s = ema_update(s, xs[t], p, cfg, rng2);
        const Vector y = homeostasis(fast_output(s, xs[t], p), cfg.beta);
        for (std::size_t i = 0; i < y.size(); ++i) REQUIRE(full.ys[t][i] == y[i]);
    }
}

TEST_CASE("fhrl_forward: single step never applies reentry") {
    FHRLConfig cfg = tiny_cfg(4, 2);
    cfg.gamma = 0.25;
    Rng prng(17);
    FHRLParams p = random_params(cfg, prng);
    const std::vector<Vector> xs = {Vector{1.0, -1.0, 0.5, 2.0}};
    Rng rng(18);
    const ForwardTrace out = fhrl_forward(xs, p, cfg, rng);
    REQUIRE(out.traces.size() == 1);
    CHECK(out.traces[0].x_pre == xs[0]);  // nothing was injected into step 1
    // final injection is computed and traced, with no recipient
    CHECK(norm2(out.traces[0].reentry) > 0.0);
}

TEST_CASE("fhrl_forward: three-step hand-unrolled oracle, r = 1, d = 2") {
    // All parameters hand-set; sigma = 0. Evaluated step by step with
    // scalar arithmetic below, independent of the library loop.
    FHRLConfig cfg = tiny_cfg(2, 1);
    cfg.alpha = 0.5;
    cfg.beta = 0.5;
    cfg.gamma = 0.2;
    FHRLParams p;
    p.wq = Matrix(2, 2);
    p.wq(0, 0) = 1.0;
    p.wq(1, 1) = 1.0;  // Q = x
    p.wk = Matrix(2, 2);
    p.wk(0, 1) = 1.0;
    p.wk(1, 0) = 1.0;  // K = swap(x)
    p.wv = Matrix::identity(2);
    p.wr = Matrix(2, 2);
    p.wr(0, 1) = 1.0;
    p.wr(1, 0) = -1.0;  // rotation-like feedback

    const std::vector<Vector> xs = {{1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}};
    Rng rng(19);
    const ForwardTrace out = fhrl_forward(xs, p, cfg, rng);

    auto rownorm2 = [](double a, double b) { return std::sqrt(a * a + b * b); };
    auto homeo = [&](double a, double b) {
        const double n = rownorm2(a, b);
        if (n == 0.0) return std::pair<double, double>{0.0, 0.0};
        const double g = 1.0 / (1.0 + cfg.beta * (n - 1.0));
        return std::pair<double, double>{g * a, g * b};
    };

    double u0 = 0.0, u1 = 0.0, v0 = 0.0, v1 = 0.0;
    double carry0 = 0.0, carry1 = 0.0;
    for (std::size_t t = 0; t < 3; ++t) {
        const double x0 = xs[t][0] + carry0;
        const double x1 = xs[t][1] + carry1;
        // Q = (x0, x1), K = (x1, x0), row-normalized
        const double qn = rownorm2(x0, x1);
        const double nq0 = qn > 0 ? x0 / qn : 0.0, nq1 = qn > 0 ? x1 / qn : 0.0;
        const double kn = rownorm2(x1, x0);
        const double nk0 = kn > 0 ? x1 / kn : 0.0, nk1 = kn > 0 ? x0 / kn : 0.0;
        u0 = 0.5 * u0 + 0.5 * nq0;
        u1 = 0.5 * u1 + 0.5 * nq1;
        v0 = 0.5 * v0 + 0.5 * nk0;
        v1 = 0.5 * v1 + 0.5 * nk1;
        // y_raw = U^T (V . (x))  with wv = I
        const double m = v0 * x0 + v1 * x1;
        const double yr0 = u0 * m, yr1 = u1 * m;
        auto [y0, y1] = homeo(yr0, yr1);
        CHECK(out.ys[t][0] == Catch::Approx(y0).margin(1e-10));
        CHECK(out.ys[t][1] == Catch::Approx(y1).margin(1e-10));
        // reentry = gamma * Wr y = gamma * (y1, -y0)
        carry0 = cfg.gamma * y1;
        carry1 = cfg.gamma * (-y0);
        CHECK(out.traces[t].reentry[0] == Catch::Approx(carry0).margin(1e-12));
        CHECK(out.traces[t].reentry[1] == Catch::Approx(carry1).margin(1e-12));
    }
}

TEST_CASE("fhrl_forward: trace chaining and error paths") {
    FHRLConfig cfg = tiny_cfg(4, 2);
    cfg.gamma = 0.3;
    cfg.sigma = 1e-3;
    Rng prng(20);
    FHRLParams p = random_params(cfg, prng);
    std::vector<Vector> xs;
    for (int t = 0; t < 6; ++t) {
        Vector x(cfg.d);
        for (double& v : x) v = prng.normal();
        xs.push_back(x);
    }
    Rng rng(21);
    const ForwardTrace out = fhrl_forward(xs, p, cfg, rng);
    for (std::size_t t = 0; t + 1 < xs.size(); ++t)
        REQUIRE(out.traces[t].x_next == out.traces[t + 1].x_pre);

    CHECK_THROWS_AS(fhrl_forward({}, p, cfg, rng), std::invalid_argument);
    CHECK_THROWS_AS(fhrl_forward({Vector{1.0}}, p, cfg, rng), std::invalid_argument);
}

TEST_CASE("fhrl_forward: deterministic for identical seeds") {
    FHRLConfig cfg = tiny_cfg(5, 2);
    cfg.sigma = 5e-4;
    cfg.gamma = 0.15;
    Rng prng(22);
    FHRLParams p = random_params(cfg, prng);
    std::vector<Vector> xs;
    for (int t = 0; t < 4; ++t) {
        Vector x(cfg.d);
        for (double& v : x) v = prng.normal();
        xs.push_back(x);
    }
    Rng r1(77), r2(77);
    const ForwardTrace a = fhrl_forward(xs, p, cfg, r1);
    const ForwardTrace b = fhrl_forward(xs, p, cfg, r2);
    for (std::size_t t = 0; t < xs.size(); ++t) {
        REQUIRE(a.ys[t] == b.ys[t]);
        REQUIRE(a.traces[t].x_pre == b.traces[t].x_pre);
        REQUIRE(a.traces[t].reentry == b.traces[t].reentry);
    }
}

TEST_CASE("reentry gamma-linearity for frozen outputs") {
    FHRLConfig cfg = tiny_cfg(5, 2);
    cfg.sigma = 1e-3;
    cfg.gamma = 0.12;
    Rng prng(23);
    FHRLParams p = random_params(cfg, prng);
    std::vector<Vector> xs;
    for (int t = 0; t < 5; ++t) {
        Vector x(cfg.d);
        for (double& v : x) v = prng.normal();
        xs.push_back(x);
    }
    Rng rng(24);
    const ForwardTrace out = fhrl_forward(xs, p, cfg, rng);
    const double g1 = 0.12, g2 = 0.3;
    for (const StepTrace& tr : out.traces) {
        auto [xn1, r1] = reentry_step(tr.x_pre, tr.y, p.wr, g1);
        auto [xn2, r2] = reentry_step(tr.x_pre, tr.y, p.wr, g2);
        for (std::size_t i = 0; i < r1.size(); ++i)
            CHECK(r2[i] == Catch::Approx(r1[i] * g2 / g1).margin(1e-12 * (1.0 + std::abs(r1[i]))));
    }
}

TEST_CASE("jacobian_estimate: identity and linear maps") {
    auto ident = [](const Vector& v) { return v; };
    Vector x = {0.3, -0.2, 1.0};
    const Matrix ji = jacobian_estimate(ident, x, 1e-5);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(ji(i, j) == Catch::Approx(i == j ? 1.0 : 0.0).margin(1e-8));

    Rng rng(25);
    Matrix a(4, 4);
    for (double& v : a.data) v = rng.normal();
    auto lin = [&](const Vector& v) { return matvec(a, v); };
    Vector x4 = {1.0, 0.5, -0.5, 2.0};
    const Matrix ja = jacobian_estimate(lin, x4, 1e-5);
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(ja.data[i] == Catch::Approx(a.data[i]).margin(1e-6));

    CHECK_THROWS_AS(jacobian_estimate(ident, x, 0.0), std::invalid_argument);
}

TEST_CASE("jacobian_estimate: frozen FH-RL step radius") {
    FHRLConfig cfg = tiny_cfg(6, 2);
    cfg.beta = 0.0;  // linear regime so the explicit matrix is exact
    Rng prng(26);
    FHRLParams p = random_params(cfg, prng, 0.4);
    FastWeightState s(cfg.r, cfg.d);
    Rng rng(27);
    Vector x(cfg.d);
    for (double& v : x) v = rng.normal();
    for (int t = 0; t < 3; ++t) s = ema_update(s, x, p, cfg, rng);

    auto frozen_step = [&](const Vector& v) {
        const Vector y = homeostasis(fast_output(s, v, p), cfg.beta);
        auto [xn, re] = reentry_step(v, y, p.wr, cfg.gamma);
        return xn;
    };

    SECTION("gamma = 0 gives the identity map, radius 1") {
        FHRLConfig c0 = cfg;
        c0.gamma = 0.0;
        auto step0 = [&](const Vector& v) {
            const Vector y = homeostasis(fast_output(s, v, p), c0.beta);
            auto [xn, re] = reentry_step(v, y, p.wr, c0.gamma);
            return xn;
        };
        const Matrix j = jacobian_estimate(step0, x, 1e-5);
        Rng prng2(28);
        auto apply = [&](const Vector& v) { return matvec(j, v); };
        CHECK(power_iteration_radius(apply, cfg.d, 200, prng2) == Catch::Approx(1.0).margin(1e-3));
    }

    SECTION("linear regime matches the explicit matrix") {
        const Matrix j = jacobian_estimate(frozen_step, x, 1e-5);
        // explicit I + gamma * Wr (U^T V) Wv
        Matrix weff = matmul(transpose(s.u), s.v);
        Matrix m = matmul(p.wr, matmul(weff, p.wv));
        for (double& v : m.data) v *= cfg.gamma;
        for (std::size_t i = 0; i < cfg.d; ++i) m(i, i) += 1.0;

        Rng prng2(29), prng3(29);
        auto apply_j = [&](const Vector& v) { return matvec(j, v); };
        auto apply_m = [&](const Vector& v) { return matvec(m, v); };
        const double rj = power_iteration_radius(apply_j, cfg.d, 300, prng2);
        const double rm = power_iteration_radius(apply_m, cfg.d, 300, prng3);
        CHECK(rj == Catch::Approx(rm).margin(1e-3));
    }
}

TEST_CASE("trace dump: JSONL records round-trip") {
    FHRLConfig cfg = tiny_cfg(3, 1);
    cfg.sigma = 1e-4;
    Rng prng(30);
    FHRLParams p = random_params(cfg, prng);
    const std::vector<Vector> xs = {{1.0, 0.0, 0.5}, {0.0, 1.0, -0.5}};
    Rng rng(31);
    const ForwardTrace out = fhrl_forward(xs, p, cfg, rng);

    std::ostringstream os;
    dump_traces_jsonl(os, out.traces);
    std::istringstream is(os.str());
    std::string line;
    std::size_t t = 0;
    while (std::getline(is, line)) {
        const auto rec = nlohmann::json::parse(line);
        REQUIRE(rec["t"] == t);
        const auto x_pre = rec["x_pre"].get<Vector>();
        const auto y = rec["y"].get<Vector>();
        REQUIRE(x_pre.size() == cfg.d);
        for (std::size_t i = 0; i < cfg.d; ++i) {
            CHECK(x_pre[i] == out.traces[t].x_pre[i]);
            CHECK(y[i] == out.traces[t].y[i]);
        }
        CHECK(rec["y_norm_raw"].get<double>() == out.traces[t].y_norm_raw);
        ++t;
    }
    CHECK(t == 2);
}
