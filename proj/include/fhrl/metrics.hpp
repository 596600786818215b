#pragma once
// Recursion metrics over frozen models: reentry-to-input energy ratio
// (IRR), drift of the hidden-state covariance eigen-spectrum across
// positions (ESRI), and the dominant frequency of the run-to-run
// similarity series under repeated perturbed inference (RDP).

#include <string>
#include <vector>

#include <json.hpp>

#include "fhrl/layer.hpp"
#include "fhrl/model.hpp"
#include "fhrl/numerics.hpp"

namespace fhrl {

struct ProbeConfig {
    std::size_t n_sequences = 32;
    std::size_t seq_len = 128;
    std::size_t n_perturbations = 64;  // K repeated runs per input
    std::size_t rdp_inputs = 2;        // inputs whose spectra are averaged
    std::uint64_t seed = 9001;
    bool use_pearson = false;          // similarity: cosine by default

    void validate() const {
        if (n_sequences < 2) throw std::invalid_argument("probe: n_sequences must be >= 2");
        if (n_perturbations < 8) throw std::invalid_argument("probe: K must be >= 8");
        if (seq_len < 2) throw std::invalid_argument("probe: seq_len must be >= 2");
        if (rdp_inputs == 0) throw std::invalid_argument("probe: rdp_inputs must be >= 1");
    }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ProbeConfig, n_sequences, seq_len, n_perturbations,
                                   rdp_inputs, seed, use_pearson)

struct MetricsReport {
    double irr_effective = 0.0;
    double irr_wr_only = 0.0;
    double esri = 0.0;
    double rdp_freq = 0.0;       // cycles/sample
    double rdp_magnitude = 0.0;
    // probe metadata
    std::uint64_t seed = 0;
    std::size_t n_sequences = 0;
    std::size_t k = 0;
    std::size_t rdp_inputs = 0;
    std::string pooling = "mean";
    std::string similarity = "cosine";
    std::string hidden_source = "final-fhrl-sublayer-output";
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(MetricsReport, irr_effective, irr_wr_only, esri, rdp_freq,
                                   rdp_magnitude, seed, n_sequences, k, rdp_inputs, pooling,
                                   similarity, hidden_source)

using ProbeTraces = std::vector<std::vector<std::vector<StepTrace>>>;  // [layer][seq][step]

struct IrrResult {
    double effective = 0.0;
    double wr_only = 0.0;
};

// Mean over layers, sequences, and steps of ||R_t|| / ||x_t||, plus the
// same ratio with the gain divided out (recomputed as ||Wr y_t|| from the
// traced outputs). Steps with vanishing input norm are skipped.
inline IrrResult irr(const ProbeTraces& traces, const std::vector<Matrix>& wr_per_layer) {
    if (traces.empty() || traces.size() != wr_per_layer.size())
        throw std::invalid_argument("irr: traces and reentry matrices must align per layer");
    double sum_eff = 0.0, sum_wr = 0.0;
    std::size_t count = 0;
    for (std::size_t l = 0; l < traces.size(); ++l) {
        for (const auto& seq : traces[l]) {
            for (const StepTrace& st : seq) {
                const double nx = norm2(st.x_pre);
                if (nx < 1e-9) continue;
                sum_eff += norm2(st.reentry) / nx;
                sum_wr += norm2(matvec(wr_per_layer[l], st.y)) / nx;
                ++count;
            }
        }
    }
    if (count == 0) throw std::invalid_argument("irr: no usable steps in traces");
    return {sum_eff / static_cast<double>(count), sum_wr / static_cast<double>(count)};
}

namespace detail {

// Nonzero covariance eigenvalues across the batch at one position,
// descending, via the n x n Gram matrix (rank <= n - 1 after centering).
inline Vector covariance_spectrum(const Matrix& batch) {
    const std::size_t n = batch.rows, d = batch.cols;
    Matrix centered = batch;
    for (std::size_t j = 0; j < d; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += batch(i, j);
        mean /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) centered(i, j) -= mean;
    }
    Matrix gram(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            const double v = kernels::dot_k(centered.row(i), centered.row(j), d) /
                             static_cast<double>(n - 1);
            gram(i, j) = v;
            gram(j, i) = v;
        }
    Vector values = sym_eig(gram).values;
    for (double& v : values) v = std::max(0.0, v);
    return values;
}

inline std::size_t nonzero_count(const Vector& spectrum) {
    if (spectrum.empty()) return 0;
    const double tol = 1e-12 * spectrum[0];
    std::size_t c = 0;
    while (c < spectrum.size() && spectrum[c] > tol) ++c;
    return c;
}

}  // namespace detail

// Mean over positions of 1 - cos(spectrum_t, spectrum_{t+1}), spectra
// truncated to their common nonzero count.
inline double esri(const std::vector<Matrix>& hidden_by_pos) {
    if (hidden_by_pos.size() < 2) throw std::invalid_argument("esri: need at least 2 positions");
    if (hidden_by_pos[0].rows < 2) throw std::invalid_argument("esri: need at least 2 sequences");

    std::vector<Vector> spectra;
    spectra.reserve(hidden_by_pos.size());
    for (const Matrix& batch : hidden_by_pos)
        spectra.push_back(detail::covariance_spectrum(batch));

    double total = 0.0;
    for (std::size_t t = 0; t + 1 < spectra.size(); ++t) {
        const std::size_t common =
            std::min(detail::nonzero_count(spectra[t]), detail::nonzero_count(spectra[t + 1]));
        if (common == 0) {
            const bool both_zero = detail::nonzero_count(spectra[t]) == 0 &&
                                   detail::nonzero_count(spectra[t + 1]) == 0;
            total += both_zero ? 0.0 : 1.0;
            continue;
        }
        double dotp = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t i = 0; i < common; ++i) {
            dotp += spectra[t][i] * spectra[t + 1][i];
            na += spectra[t][i] * spectra[t][i];
            nb += spectra[t + 1][i] * spectra[t + 1][i];
        }
        total += 1.0 - dotp / (std::sqrt(na) * std::sqrt(nb));
    }
    return total / static_cast<double>(spectra.size() - 1);
}

struct RdpResult {
    double freq = 0.0;       // cycles/sample, in (0, 0.5]
    double magnitude = 0.0;
    Vector series;
    Vector spectrum;         // magnitudes for bins 0..N/2 after mean removal
    bool degenerate = false;
};

// Mean-removed DFT of a similarity series; the dominant bin is taken over
// nonzero frequencies only.
inline RdpResult rdp_from_series(const Vector& series) {
    RdpResult out;
    out.series = series;
    Vector centered = series;
    double mean = 0.0;
    for (double v : centered) mean += v;
    mean /= static_cast<double>(centered.size());
    for (double& v : centered) v -= mean;
    out.spectrum = dft_magnitude(centered);

    double smax = 0.0;
    for (double v : series) smax = std::max(smax, std::abs(v));
    std::size_t arg = 0;
    for (std::size_t kbin = 1; kbin < out.spectrum.size(); ++kbin)
        if (arg == 0 || out.spectrum[kbin] > out.spectrum[arg]) arg = kbin;
    if (arg == 0 || out.spectrum[arg] <= 1e-12 * (smax + 1.0)) {
        out.degenerate = true;
        return out;
    }
    out.freq = static_cast<double>(arg) / static_cast<double>(centered.size());
    out.magnitude = out.spectrum[arg];
    return out;
}

namespace detail {

inline double similarity(const Vector& a, const Vector& b, bool pearson) {
    if (pearson) {
        double ma = 0.0, mb = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            ma += a[i];
            mb += b[i];
        }
        ma /= static_cast<double>(a.size());
        mb /= static_cast<double>(b.size());
        double dotp = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            dotp += (a[i] - ma) * (b[i] - mb);
            na += (a[i] - ma) * (a[i] - ma);
            nb += (b[i] - mb) * (b[i] - mb);
        }
        const double denom = std::sqrt(na) * std::sqrt(nb);
        return denom == 0.0 ? 0.0 : dotp / denom;
    }
    const double denom = norm2(a) * norm2(b);
    return denom == 0.0 ? 0.0 : dot(a, b) / denom;
}

// K noisy runs on one input, batched as K lanes; returns the mean-pooled
// final-layer hidden state per run.
inline std::vector<Vector> perturbed_pool(const ModelParams& params, const TokenSeq& input,
                                          std::size_t k_runs, Rng noise_rng) {
    TokenBatch batch(k_runs, input);
    ForwardOptions opt;
    opt.trace = TraceMode::hidden;
    const ForwardOutput out = forward(params, batch, noise_rng, opt);
    const std::size_t d = params.cfg.d, T = input.size();
    std::vector<Vector> pooled(k_runs, Vector(d, 0.0));
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t k = 0; k < k_runs; ++k)
            for (std::size_t i = 0; i < d; ++i) pooled[k][i] += out.hidden[t](k, i);
    for (auto& v : pooled)
        for (double& x : v) x /= static_cast<double>(T);
    return pooled;
}

}  // namespace detail

// Drift periodicity for one input: K runs with fresh perturbation noise,
// similarity between consecutive runs, dominant nonzero frequency.
inline RdpResult rdp(const ModelParams& params, const TokenSeq& input, const ProbeConfig& probe,
                     Rng noise_rng) {
    probe.validate();
    if (params.cfg.fhrl.sigma <= 0.0)
        throw std::invalid_argument("rdp: degenerate probe, model sigma must be > 0");
    const auto pooled = detail::perturbed_pool(params, input, probe.n_perturbations, noise_rng);
    Vector series(probe.n_perturbations - 1);
    for (std::size_t k = 0; k + 1 < probe.n_perturbations; ++k)
        series[k] = detail::similarity(pooled[k], pooled[k + 1], probe.use_pearson);
    return rdp_from_series(series);
}

// Frozen-step spectral radius at a representative state: the final layer's
// fast-weight state after one probe sequence, linearized by central
// differences and fed to power iteration.
inline double jacobian_spectral_radius(const ModelParams& params, std::uint64_t seed) {
    const ModelConfig& cfg = params.cfg;
    Rng rng(seed);
    TokenSeq input(cfg.context);
    for (auto& t : input) t = static_cast<std::uint8_t>(rng.uniform_below(cfg.vocab));

    Tape tape;
    ForwardOptions opt;
    opt.record_tape = true;
    forward(params, {input}, rng.substream(1), opt, &tape);

    const std::size_t li = cfg.layers - 1;
    const std::string bl = "block" + std::to_string(li) + ".";
    const Tape::Layer& L = tape.layers[li];
    const std::size_t rd = cfg.fhrl.r * cfg.d;
    const std::size_t last = (tape.T - 1) * tape.B;  // B == 1

    FastWeightState state(cfg.fhrl.r, cfg.d);
    std::copy(L.u.begin() + last * rd, L.u.begin() + (last + 1) * rd, state.u.data.begin());
    std::copy(L.v_fw.begin() + last * rd, L.v_fw.begin() + (last + 1) * rd,
              state.v.data.begin());
    Vector x(L.xf.begin() + last * cfg.d, L.xf.begin() + (last + 1) * cfg.d);

    FHRLParams fp;
    fp.wq = params.tensor_matrix(bl + "fhrl_q");
    fp.wk = params.tensor_matrix(bl + "fhrl_k");
    fp.wv = params.tensor_matrix(bl + "fhrl_v");
    fp.wr = params.tensor_matrix(bl + "fhrl_r");

    auto frozen_step = [&](const Vector& v) {
        const Vector y = homeostasis(fast_output(state, v, fp), cfg.fhrl.beta);
        auto [xn, re] = reentry_step(v, y, fp.wr, cfg.fhrl.gamma);
        return xn;
    };
    const Matrix jac = jacobian_estimate(frozen_step, x, 1e-5);
    Rng prng = rng.substream(2);
    auto apply = [&](const Vector& v) { return matvec(jac, v); };
    return power_iteration_radius(apply, cfg.d, 200, prng);
}

// Full probe: random byte sequences, one traced forward for IRR/ESRI, and
// spectrum-averaged RDP over a few inputs.
inline MetricsReport run_probe(const ModelParams& params, const ProbeConfig& probe) {
    probe.validate();
    params.cfg.validate();
    Rng base(probe.seed);

    TokenBatch batch(probe.n_sequences);
    for (std::size_t i = 0; i < probe.n_sequences; ++i) {
        Rng srng = base.substream(1, i);
        batch[i].resize(probe.seq_len);
        for (auto& t : batch[i])
            t = static_cast<std::uint8_t>(srng.uniform_below(params.cfg.vocab));
    }

    ForwardOptions opt;
    opt.trace = TraceMode::full;
    const ForwardOutput out = forward(params, batch, base.substream(2), opt);

    std::vector<Matrix> wr_layers;
    for (std::size_t l = 0; l < params.cfg.layers; ++l)
        wr_layers.push_back(params.tensor_matrix("block" + std::to_string(l) + ".fhrl_r"));

    MetricsReport rep;
    const IrrResult ir = irr(out.traces, wr_layers);
    rep.irr_effective = ir.effective;
    rep.irr_wr_only = ir.wr_only;
    rep.esri = esri(out.hidden);

    // average the drift spectra over a few probe inputs, then pick the bin
    Vector mean_spectrum;
    Vector first_series;
    for (std::size_t j = 0; j < probe.rdp_inputs; ++j) {
        const RdpResult r = rdp(params, batch[j % batch.size()], probe, base.substream(3, j));
        if (j == 0) {
            first_series = r.series;
            mean_spectrum = r.spectrum;
        } else {
            for (std::size_t i = 0; i < mean_spectrum.size(); ++i)
                mean_spectrum[i] += r.spectrum[i];
        }
    }
    for (double& v : mean_spectrum) v /= static_cast<double>(probe.rdp_inputs);
    std::size_t arg = 1;
    for (std::size_t kbin = 1; kbin < mean_spectrum.size(); ++kbin)
        if (mean_spectrum[kbin] > mean_spectrum[arg]) arg = kbin;
    rep.rdp_freq = static_cast<double>(arg) / static_cast<double>(first_series.size());
    rep.rdp_magnitude = mean_spectrum[arg];

    rep.seed = probe.seed;
    rep.n_sequences = probe.n_sequences;
    rep.k = probe.n_perturbations;
    rep.rdp_inputs = probe.rdp_inputs;
    rep.similarity = probe.use_pearson ? "pearson" : "cosine";
    return rep;
}

}  // namespace fhrl
