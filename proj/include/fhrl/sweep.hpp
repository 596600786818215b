#pragma once
// Sweep orchestration: configuration file handling, per-gamma
// train/probe/analyze pipelines on a bounded worker pool, resumable
// on-disk records, and plot-ready CSV emission.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "fhrl/metrics.hpp"
#include "fhrl/model.hpp"
#include "fhrl/wr_analysis.hpp"

namespace fhrl {

inline void to_json(nlohmann::json& j, const WrReport& r) {
    j = nlohmann::json{{"frobenius", r.frobenius},     {"anisotropy", r.anisotropy},
                       {"alignment", r.alignment},     {"alignment_80", r.alignment_80},
                       {"alignment_95", r.alignment_95}, {"k_eff", r.k_eff},
                       {"singular_values", r.singular_values}};
}
inline void from_json(const nlohmann::json& j, WrReport& r) {
    j.at("frobenius").get_to(r.frobenius);
    j.at("anisotropy").get_to(r.anisotropy);
    j.at("alignment").get_to(r.alignment);
    j.at("alignment_80").get_to(r.alignment_80);
    j.at("alignment_95").get_to(r.alignment_95);
    j.at("k_eff").get_to(r.k_eff);
    j.at("singular_values").get_to(r.singular_values);
}

struct SweepConfig {
    std::vector<double> gammas = {0.00, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30};
    ModelConfig model;
    TrainConfig train;
    ProbeConfig probe;
    std::size_t workers = 1;
    bool vary_seed = false;  // same seed across gammas by default
    std::string out_dir = "out";
    std::string corpus_path = "data/corpus.txt";

    void validate() const {
        if (gammas.empty()) throw std::invalid_argument("sweep: gamma list must be non-empty");
        for (double g : gammas)
            if (g < 0.0) throw std::invalid_argument("sweep: gamma values must be >= 0");
        if (workers == 0) throw std::invalid_argument("sweep: workers must be >= 1");
        model.validate();
        train.validate();
        probe.validate();
    }

    static std::vector<double> extended_gammas() {
        return {0.0, 0.1, 0.2, 0.3, 0.5, 1.0, 2.0, 3.0, 5.0};
    }
};

// ---------------------------------------------------------------------------
// Minimal TOML-style config reader: [section], key = value with numbers,
// booleans, quoted strings, and flat numeric arrays. Unknown keys are
// rejected so typos fail loudly.
// ---------------------------------------------------------------------------
namespace configfile {

inline std::string strip(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline double parse_number(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (...) {
        throw std::invalid_argument("config: bad numeric value for '" + key + "': " + v);
    }
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw std::invalid_argument("config: bad boolean for '" + key + "': " + v);
}

inline std::vector<double> parse_array(const std::string& v, const std::string& key) {
    if (v.size() < 2 || v.front() != '[' || v.back() != ']')
        throw std::invalid_argument("config: bad array for '" + key + "': " + v);
    std::vector<double> out;
    std::string body = v.substr(1, v.size() - 2);
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = strip(item);
        if (!item.empty()) out.push_back(parse_number(item, key));
    }
    return out;
}

inline std::string parse_string(const std::string& v) {
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"')
        return v.substr(1, v.size() - 2);
    return v;
}

}  // namespace configfile

inline SweepConfig load_sweep_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open file: " + path);

    SweepConfig cfg;
    std::string section;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = configfile::strip(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::invalid_argument("config: malformed section at line " +
                                            std::to_string(lineno));
            section = line.substr(1, line.size() - 2);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: expected key = value at line " +
                                        std::to_string(lineno));
        const std::string key = configfile::strip(line.substr(0, eq));
        const std::string value = configfile::strip(line.substr(eq + 1));
        const std::string full = section.empty() ? key : section + "." + key;

        using configfile::parse_array;
        using configfile::parse_bool;
        using configfile::parse_number;
        using configfile::parse_string;

        if (full == "gammas") cfg.gammas = parse_array(value, full);
        else if (full == "workers") cfg.workers = (std::size_t)parse_number(value, full);
        else if (full == "vary_seed") cfg.vary_seed = parse_bool(value, full);
        else if (full == "out_dir") cfg.out_dir = parse_string(value);
        else if (full == "corpus") cfg.corpus_path = parse_string(value);
        else if (full == "model.d") cfg.model.d = (std::size_t)parse_number(value, full);
        else if (full == "model.heads") cfg.model.heads = (std::size_t)parse_number(value, full);
        else if (full == "model.layers") cfg.model.layers = (std::size_t)parse_number(value, full);
        else if (full == "model.vocab") cfg.model.vocab = (std::size_t)parse_number(value, full);
        else if (full == "model.context")
            cfg.model.context = (std::size_t)parse_number(value, full);
        else if (full == "model.ff_mult")
            cfg.model.ff_mult = (std::size_t)parse_number(value, full);
        else if (full == "fhrl.r") cfg.model.fhrl.r = (std::size_t)parse_number(value, full);
        else if (full == "fhrl.alpha") cfg.model.fhrl.alpha = parse_number(value, full);
        else if (full == "fhrl.beta") cfg.model.fhrl.beta = parse_number(value, full);
        else if (full == "fhrl.gamma") cfg.model.fhrl.gamma = parse_number(value, full);
        else if (full == "fhrl.sigma") cfg.model.fhrl.sigma = parse_number(value, full);
        else if (full == "fhrl.eps") cfg.model.fhrl.eps = parse_number(value, full);
        else if (full == "train.steps") cfg.train.steps = (std::size_t)parse_number(value, full);
        else if (full == "train.lr") cfg.train.lr = parse_number(value, full);
        else if (full == "train.weight_decay") cfg.train.weight_decay = parse_number(value, full);
        else if (full == "train.batch") cfg.train.batch = (std::size_t)parse_number(value, full);
        else if (full == "train.seed") cfg.train.seed = (std::uint64_t)parse_number(value, full);
        else if (full == "train.clip") cfg.train.clip = parse_bool(value, full);
        else if (full == "train.clip_norm") cfg.train.clip_norm = parse_number(value, full);
        else if (full == "probe.n_sequences")
            cfg.probe.n_sequences = (std::size_t)parse_number(value, full);
        else if (full == "probe.seq_len")
            cfg.probe.seq_len = (std::size_t)parse_number(value, full);
        else if (full == "probe.k")
            cfg.probe.n_perturbations = (std::size_t)parse_number(value, full);
        else if (full == "probe.rdp_inputs")
            cfg.probe.rdp_inputs = (std::size_t)parse_number(value, full);
        else if (full == "probe.seed") cfg.probe.seed = (std::uint64_t)parse_number(value, full);
        else if (full == "probe.pearson") cfg.probe.use_pearson = parse_bool(value, full);
        else
            throw std::invalid_argument("config: unknown key '" + full + "' at line " +
                                        std::to_string(lineno));
    }
    cfg.model.fhrl.d = cfg.model.d;
    return cfg;
}

// ---------------------------------------------------------------------------
// Per-gamma record.
// ---------------------------------------------------------------------------
struct SweepRecord {
    double gamma = 0.0;
    double final_loss = std::numeric_limits<double>::quiet_NaN();  // tail-smoothed
    std::string loss_curve_path;
    std::string checkpoint_path;
    MetricsReport metrics;
    WrReport wr;
    double jacobian_radius = 0.0;
    std::uint64_t seed = 0;
    bool diverged = false;
    std::size_t steps_run = 0;
    std::string error;  // non-empty when this point failed
};

inline void to_json(nlohmann::json& j, const SweepRecord& r) {
    j = nlohmann::json{{"gamma", r.gamma},
                       {"loss_curve_path", r.loss_curve_path},
                       {"checkpoint_path", r.checkpoint_path},
                       {"metrics", r.metrics},
                       {"wr", r.wr},
                       {"jacobian_radius", r.jacobian_radius},
                       {"seed", r.seed},
                       {"diverged", r.diverged},
                       {"steps_run", r.steps_run},
                       {"error", r.error}};
    if (std::isfinite(r.final_loss)) j["final_loss"] = r.final_loss;
    else j["final_loss"] = nullptr;
}
inline void from_json(const nlohmann::json& j, SweepRecord& r) {
    j.at("gamma").get_to(r.gamma);
    if (j.at("final_loss").is_null())
        r.final_loss = std::numeric_limits<double>::quiet_NaN();
    else
        j.at("final_loss").get_to(r.final_loss);
    j.at("loss_curve_path").get_to(r.loss_curve_path);
    j.at("checkpoint_path").get_to(r.checkpoint_path);
    j.at("metrics").get_to(r.metrics);
    j.at("wr").get_to(r.wr);
    j.at("jacobian_radius").get_to(r.jacobian_radius);
    j.at("seed").get_to(r.seed);
    j.at("diverged").get_to(r.diverged);
    j.at("steps_run").get_to(r.steps_run);
    j.at("error").get_to(r.error);
}

namespace detail {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string gamma_dir_name(double gamma) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "gamma_%.4f", gamma);
    return buf;
}

// tail-smoothed training loss: mean over the final 25 recorded steps
inline double smoothed_final_loss(const Vector& curve) {
    if (curve.empty()) return std::numeric_limits<double>::quiet_NaN();
    const std::size_t window = std::min<std::size_t>(25, curve.size());
    double sum = 0.0;
    for (std::size_t i = curve.size() - window; i < curve.size(); ++i) sum += curve[i];
    return sum / static_cast<double>(window);
}

}  // namespace detail

inline void write_loss_csv(const std::string& path, const Vector& curve) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "step,loss\n";
    for (std::size_t i = 0; i < curve.size(); ++i)
        os << i << ',' << detail::fmt_double(curve[i]) << '\n';
}

inline Vector read_loss_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read " + path);
    std::string line;
    std::getline(is, line);  // header
    Vector curve;
    while (std::getline(is, line)) {
        const auto comma = line.find(',');
        if (comma == std::string::npos) continue;
        curve.push_back(std::stod(line.substr(comma + 1)));
    }
    return curve;
}

// Runs one gamma point end to end: train, checkpoint, probe, analyze.
inline SweepRecord run_gamma_point(const SweepConfig& cfg, double gamma, std::size_t index) {
    namespace fs = std::filesystem;
    SweepRecord rec;
    rec.gamma = gamma;
    rec.seed = cfg.train.seed + (cfg.vary_seed ? index : 0);

    const fs::path dir = fs::path(cfg.out_dir) / detail::gamma_dir_name(gamma);
    fs::create_directories(dir);

    ModelConfig mc = cfg.model;
    mc.fhrl.gamma = gamma;
    TrainConfig tc = cfg.train;
    tc.seed = rec.seed;

    std::ifstream corpus_file(cfg.corpus_path, std::ios::binary);
    if (!corpus_file) throw std::runtime_error("cannot open corpus: " + cfg.corpus_path);
    std::vector<std::uint8_t> corpus((std::istreambuf_iterator<char>(corpus_file)),
                                     std::istreambuf_iterator<char>());

    const TrainResult tr = train(mc, tc, corpus);
    rec.diverged = tr.diverged;
    rec.steps_run = tr.steps_run;
    rec.final_loss = detail::smoothed_final_loss(tr.loss_curve);

    rec.loss_curve_path = (dir / "loss.csv").string();
    write_loss_csv(rec.loss_curve_path, tr.loss_curve);
    rec.checkpoint_path = (dir / "checkpoint.bin").string();
    save_checkpoint(rec.checkpoint_path, tr.params, tc);

    if (!rec.diverged) {
        rec.metrics = run_probe(tr.params, cfg.probe);
        {
            std::ofstream os(dir / "metrics.json");
            os << nlohmann::json(rec.metrics).dump(2) << '\n';
        }
        const std::string last_block = "block" + std::to_string(mc.layers - 1) + ".";
        const Matrix wr = tr.params.tensor_matrix(last_block + "fhrl_r");
        const Matrix emb = tr.params.tensor_matrix("embedding");
        rec.wr = analyze_wr(wr, emb, 0.9);
        {
            std::ofstream os(dir / "wr.json");
            os << nlohmann::json(rec.wr).dump(2) << '\n';
        }
        rec.jacobian_radius = jacobian_spectral_radius(tr.params, cfg.probe.seed);
    }

    {
        std::ofstream os(dir / "record.json");
        os << nlohmann::json(rec).dump(2) << '\n';
    }
    return rec;
}

// Completed points (a readable record.json with no error) are loaded, not
// recomputed, so interrupted sweeps resume where they stopped.
inline std::vector<SweepRecord> run_sweep(const SweepConfig& cfg,
                                          std::ostream* log = nullptr) {
    namespace fs = std::filesystem;
    cfg.validate();
    fs::create_directories(cfg.out_dir);

    std::vector<SweepRecord> records(cfg.gammas.size());
    std::mutex log_mutex;
    std::size_t next = 0;
    std::mutex next_mutex;

    auto worker = [&]() {
        for (;;) {
            std::size_t i;
            {
                std::lock_guard<std::mutex> lk(next_mutex);
                if (next >= cfg.gammas.size()) return;
                i = next++;
            }
            const double gamma = cfg.gammas[i];
            const fs::path rec_path =
                fs::path(cfg.out_dir) / detail::gamma_dir_name(gamma) / "record.json";
            SweepRecord rec;
            bool loaded = false;
            if (fs::exists(rec_path)) {
                try {
                    std::ifstream is(rec_path);
                    nlohmann::json j;
                    is >> j;
                    rec = j.get<SweepRecord>();
                    loaded = rec.error.empty();
                } catch (...) {
                    loaded = false;
                }
            }
            if (!loaded) {
                try {
                    rec = run_gamma_point(cfg, gamma, i);
                } catch (const std::exception& e) {
                    rec = SweepRecord{};
                    rec.gamma = gamma;
                    rec.error = e.what();
                    fs::create_directories(rec_path.parent_path());
                    std::ofstream os(rec_path);
                    os << nlohmann::json(rec).dump(2) << '\n';
                }
            }
            if (log) {
                std::lock_guard<std::mutex> lk(log_mutex);
                *log << "gamma " << gamma << (loaded ? " (cached)" : "")
                     << (rec.diverged ? " DIVERGED" : "")
                     << (rec.error.empty() ? "" : (" ERROR: " + rec.error))
                     << " final_loss=" << rec.final_loss << '\n';
            }
            records[i] = std::move(rec);
        }
    };

    const std::size_t nworkers = std::min(cfg.workers, cfg.gammas.size());
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w + 1 < nworkers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    return records;
}

inline constexpr const char* kSummarySchema = "# fhrl-summary-v1";
inline constexpr const char* kSummaryHeader =
    "gamma,final_loss,irr_effective,irr_wr_only,esri,rdp_freq,rdp_magnitude,"
    "wr_frobenius,wr_anisotropy,wr_alignment,jacobian_radius";

// summary.csv + per-record detail already on disk + the long-format
// loss/IRR/gamma table behind the extended-sweep surface plot.
inline void emit_tables(const std::vector<SweepRecord>& records, const std::string& out_dir) {
    namespace fs = std::filesystem;
    if (records.empty()) throw std::invalid_argument("emit_tables: no records");
    fs::create_directories(out_dir);

    std::vector<SweepRecord> sorted = records;
    std::sort(sorted.begin(), sorted.end(),
              [](const SweepRecord& a, const SweepRecord& b) { return a.gamma < b.gamma; });

    const fs::path summary = fs::path(out_dir) / "summary.csv";
    {
        std::ofstream os(summary);
        if (!os) throw std::runtime_error("cannot write " + summary.string());
        os << kSummarySchema << '\n' << kSummaryHeader << '\n';
        for (const SweepRecord& r : sorted) {
            using detail::fmt_double;
            os << fmt_double(r.gamma) << ',' << fmt_double(r.final_loss) << ','
               << fmt_double(r.metrics.irr_effective) << ',' << fmt_double(r.metrics.irr_wr_only)
               << ',' << fmt_double(r.metrics.esri) << ',' << fmt_double(r.metrics.rdp_freq)
               << ',' << fmt_double(r.metrics.rdp_magnitude) << ','
               << fmt_double(r.wr.frobenius) << ',' << fmt_double(r.wr.anisotropy) << ','
               << fmt_double(r.wr.alignment) << ',' << fmt_double(r.jacobian_radius) << '\n';
        }
        if (!os) throw std::runtime_error("write failed: " + summary.string());
    }

    const fs::path surface = fs::path(out_dir) / "surface.csv";
    {
        std::ofstream os(surface);
        if (!os) throw std::runtime_error("cannot write " + surface.string());
        os << "gamma,step,loss,irr_effective\n";
        for (const SweepRecord& r : sorted) {
            if (r.loss_curve_path.empty() || !fs::exists(r.loss_curve_path)) continue;
            const Vector curve = read_loss_csv(r.loss_curve_path);
            for (std::size_t s = 0; s < curve.size(); ++s)
                os << detail::fmt_double(r.gamma) << ',' << s << ','
                   << detail::fmt_double(curve[s]) << ','
                   << detail::fmt_double(r.metrics.irr_effective) << '\n';
        }
        if (!os) throw std::runtime_error("write failed: " + surface.string());
    }
}

inline std::vector<SweepRecord> load_records(const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::vector<SweepRecord> records;
    if (!fs::exists(out_dir)) throw std::runtime_error("no such directory: " + out_dir);
    for (const auto& entry : fs::directory_iterator(out_dir)) {
        if (!entry.is_directory()) continue;
        const fs::path rec_path = entry.path() / "record.json";
        if (!fs::exists(rec_path)) continue;
        std::ifstream is(rec_path);
        nlohmann::json j;
        is >> j;
        records.push_back(j.get<SweepRecord>());
    }
    std::sort(records.begin(), records.end(),
              [](const SweepRecord& a, const SweepRecord& b) { return a.gamma < b.gamma; });
    return records;
}

}  // namespace fhrl
