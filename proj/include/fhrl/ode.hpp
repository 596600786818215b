#pragma once
// Continuous-time counterpart of the reentry layer: leaky activation
// dynamics driven by a bounded nonlinearity, a radial homeostatic field,
// and an exponentially decaying Hebbian trace. Fixed-step RK4 keeps the
// trajectories deterministic and makes order checks trivial.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fhrl/numerics.hpp"

namespace fhrl {

struct OdeState {
    Vector y;   // activation
    Matrix a;   // fast-weight trace

    OdeState() = default;
    OdeState(std::size_t d) : y(d, 0.0), a(d, d) {}
};

enum class DriveKind { zero, tanh_sat, linear };

inline DriveKind parse_drive_kind(const std::string& name) {
    if (name == "zero") return DriveKind::zero;
    if (name == "tanh") return DriveKind::tanh_sat;
    if (name == "linear") return DriveKind::linear;
    throw std::invalid_argument("ode: unregistered f_kind '" + name + "'");
}

enum class TraceKind { zero, hebbian };

struct OdeParams {
    Matrix w;                 // recurrent weight inside f
    double lambda = 0.5;      // trace decay, > 0
    double kappa = 1.0;       // homeostatic gain, > 0
    double eps = 1e-6;        // radial guard, >= 0
    DriveKind f_kind = DriveKind::tanh_sat;
    TraceKind phi_kind = TraceKind::hebbian;
    std::function<Vector(double)> drive;  // u(t); empty means zero input

    void validate() const {
        if (!(lambda > 0.0)) throw std::invalid_argument("ode: lambda must be > 0");
        if (!(kappa > 0.0)) throw std::invalid_argument("ode: kappa must be > 0");
        if (eps < 0.0) throw std::invalid_argument("ode: eps must be >= 0");
    }
};

// Deterministic smooth bounded input: per-component sum of two sinusoids
// with seeded phases.
inline std::function<Vector(double)> make_sinusoid_drive(std::size_t d, std::uint64_t seed,
                                                         double a1 = 0.5, double f1 = 0.23,
                                                         double a2 = 0.3, double f2 = 0.071) {
    Rng rng(seed);
    std::vector<double> phase1(d), phase2(d);
    for (std::size_t i = 0; i < d; ++i) {
        phase1[i] = 2.0 * M_PI * rng.uniform01();
        phase2[i] = 2.0 * M_PI * rng.uniform01();
    }
    return [=](double t) {
        Vector u(d);
        for (std::size_t i = 0; i < d; ++i)
            u[i] = a1 * std::sin(2.0 * M_PI * f1 * t + phase1[i]) +
                   a2 * std::sin(2.0 * M_PI * f2 * t + phase2[i]);
        return u;
    };
}

// -kappa (||y|| - 1) y / (||y|| + eps); the origin maps to zero.
inline Vector homeo_field(const Vector& y, double kappa, double eps) {
    const double n = norm2(y);
    Vector g(y.size(), 0.0);
    if (n == 0.0) return g;
    const double c = -kappa * (n - 1.0) / (n + eps);
    for (std::size_t i = 0; i < y.size(); ++i) g[i] = c * y[i];
    return g;
}

// Radial deviation from the unit sphere.
inline double lyapunov(const Vector& y) {
    const double n = norm2(y);
    return 0.5 * (n - 1.0) * (n - 1.0);
}

struct OdeDerivative {
    Vector dy;
    Matrix da;
};

// dy = -y + f(Wy, u, A) + g_homeo(y);  dA = -lambda A + Phi(y, u).
inline OdeDerivative rhs(const OdeState& state, double t, const OdeParams& p) {
    const std::size_t d = state.y.size();
    Vector u(d, 0.0);
    if (p.drive) u = p.drive(t);

    Vector f(d, 0.0);
    if (p.f_kind != DriveKind::zero) {
        // pre-activation Wy + A u + u
        Vector pre = matvec(p.w, state.y);
        if (state.a.rows == d && state.a.cols == d) {
            const Vector au = matvec(state.a, u);
            for (std::size_t i = 0; i < d; ++i) pre[i] += au[i];
        }
        for (std::size_t i = 0; i < d; ++i) pre[i] += u[i];
        if (p.f_kind == DriveKind::tanh_sat) {
            for (std::size_t i = 0; i < d; ++i) f[i] = std::tanh(pre[i]);
        } else {
            f = pre;
        }
    }

    OdeDerivative out;
    out.dy = homeo_field(state.y, p.kappa, p.eps);
    for (std::size_t i = 0; i < d; ++i) out.dy[i] += -state.y[i] + f[i];

    out.da = Matrix(state.a.rows, state.a.cols);
    for (std::size_t i = 0; i < state.a.size(); ++i)
        out.da.data[i] = -p.lambda * state.a.data[i];
    if (p.phi_kind == TraceKind::hebbian && state.a.rows == d && state.a.cols == d) {
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) out.da(i, j) += state.y[i] * u[j];
    }
    return out;
}

struct TrajPoint {
    double t = 0.0;
    double norm_y = 0.0;
    double v = 0.0;       // lyapunov(y)
    double norm_a = 0.0;  // Frobenius
};

struct Trajectory {
    std::vector<TrajPoint> points;        // includes the initial state
    std::vector<OdeState> states;         // populated when record_states is set
    OdeState final_state;
    bool diverged = false;
    std::size_t steps_run = 0;
};

namespace detail {
inline OdeState ode_axpy(const OdeState& base, double h, const OdeDerivative& k) {
    OdeState s = base;
    for (std::size_t i = 0; i < s.y.size(); ++i) s.y[i] += h * k.dy[i];
    for (std::size_t i = 0; i < s.a.size(); ++i) s.a.data[i] += h * k.da.data[i];
    return s;
}
}  // namespace detail

// Classic fixed-step RK4. Halts with a divergence flag (not an exception)
// once ||y|| exceeds 1e6.
inline Trajectory integrate(const OdeState& state0, const OdeParams& p, double dt,
                            std::size_t steps, bool record_states = false) {
    if (!(dt > 0.0)) throw std::invalid_argument("integrate: dt must be positive");
    p.validate();

    Trajectory traj;
    OdeState s = state0;
    auto record = [&](double t) {
        TrajPoint pt;
        pt.t = t;
        pt.norm_y = norm2(s.y);
        pt.v = lyapunov(s.y);
        pt.norm_a = frobenius_norm(s.a);
        traj.points.push_back(pt);
        if (record_states) traj.states.push_back(s);
    };
    record(0.0);

    for (std::size_t k = 0; k < steps; ++k) {
        const double t = dt * static_cast<double>(k);
        const OdeDerivative k1 = rhs(s, t, p);
        const OdeDerivative k2 = rhs(detail::ode_axpy(s, 0.5 * dt, k1), t + 0.5 * dt, p);
        const OdeDerivative k3 = rhs(detail::ode_axpy(s, 0.5 * dt, k2), t + 0.5 * dt, p);
        const OdeDerivative k4 = rhs(detail::ode_axpy(s, dt, k3), t + dt, p);
        for (std::size_t i = 0; i < s.y.size(); ++i)
            s.y[i] += dt / 6.0 * (k1.dy[i] + 2.0 * k2.dy[i] + 2.0 * k3.dy[i] + k4.dy[i]);
        for (std::size_t i = 0; i < s.a.size(); ++i)
            s.a.data[i] += dt / 6.0 * (k1.da.data[i] + 2.0 * k2.da.data[i] +
                                       2.0 * k3.da.data[i] + k4.da.data[i]);
        traj.steps_run = k + 1;
        record(dt * static_cast<double>(k + 1));
        if (norm2(s.y) > 1e6) {
            traj.diverged = true;
            break;
        }
    }
    traj.final_state = std::move(s);
    return traj;
}

// Discrete EMA iteration y <- (1-eta) y + eta H(y) against its
// continuous-time limit dy/dt = alpha (H(y) - y), alpha = eta / dt held
// fixed. Returns the max pointwise deviation over the horizon; shrinks as
// eta -> 0.
inline double ema_limit_check(const std::function<Vector(const Vector&)>& H, const Vector& y0,
                              double eta, double dt, double horizon) {
    if (!(eta > 0.0) || eta > 0.05)
        throw std::invalid_argument("ema_limit_check: eta must be in (0, 0.05]");
    if (!(dt > 0.0) || !(horizon > 0.0))
        throw std::invalid_argument("ema_limit_check: dt and horizon must be positive");

    const double alpha = eta / dt;
    const std::size_t steps = static_cast<std::size_t>(std::llround(horizon / dt));
    Vector y_disc = y0;
    Vector y_ode = y0;

    auto ode_rhs = [&](const Vector& y) {
        Vector hy = H(y);
        for (std::size_t i = 0; i < y.size(); ++i) hy[i] = alpha * (hy[i] - y[i]);
        return hy;
    };
    auto add_scaled = [](const Vector& y, double h, const Vector& k) {
        Vector out = y;
        for (std::size_t i = 0; i < y.size(); ++i) out[i] += h * k[i];
        return out;
    };

    double max_dev = 0.0;
    for (std::size_t k = 0; k < steps; ++k) {
        const Vector hy = H(y_disc);
        for (std::size_t i = 0; i < y_disc.size(); ++i)
            y_disc[i] = (1.0 - eta) * y_disc[i] + eta * hy[i];

        const Vector k1 = ode_rhs(y_ode);
        const Vector k2 = ode_rhs(add_scaled(y_ode, 0.5 * dt, k1));
        const Vector k3 = ode_rhs(add_scaled(y_ode, 0.5 * dt, k2));
        const Vector k4 = ode_rhs(add_scaled(y_ode, dt, k3));
        for (std::size_t i = 0; i < y_ode.size(); ++i)
            y_ode[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);

        double dev = 0.0;
        for (std::size_t i = 0; i < y_disc.size(); ++i)
            dev += (y_disc[i] - y_ode[i]) * (y_disc[i] - y_ode[i]);
        max_dev = std::max(max_dev, std::sqrt(dev));
    }
    return max_dev;
}

}  // namespace fhrl
