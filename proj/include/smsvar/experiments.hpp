// Copyright 2026 the smsvar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "smsvar/baselines.hpp"
#include "smsvar/io.hpp"

namespace smsvar {

// ---------------------------------------------------------------------------
// Scenario configuration and ground-truth generation.

enum class AnomalyKind { kMode, kPhase, kSensor };

inline const char* to_string(AnomalyKind k) {
    switch (k) {
        case AnomalyKind::kMode: return "mode";
        case AnomalyKind::kPhase: return "phase";
        case AnomalyKind::kSensor: return "sensor";
    }
    return "?";
}

inline AnomalyKind anomaly_kind_from_string(const std::string& s) {
    if (s == "mode") return AnomalyKind::kMode;
    if (s == "phase") return AnomalyKind::kPhase;
    if (s == "sensor") return AnomalyKind::kSensor;
    throw std::invalid_argument("unknown anomaly kind: " + s);
}

struct ScenarioConfig {
    std::string name;  // defaults to the anomaly kind
    int n_normal = 100;
    int n_anomalous = 10;
    long flight_length = 200;
    int n_phases = 3;
    int n_sensors = 4;
    int n_switches = 5;
    AnomalyKind anomaly = AnomalyKind::kMode;
    // When set, overrides n_anomalous: round(contamination * total flights).
    std::optional<double> contamination;
    int events_min = 2;
    int events_max = 5;
    long phase_window = 10;
    long sensor_window = 5;
    double sensor_noise_scale = 3.0;
    std::uint64_t seed = 0;

    int total_flights() const { return n_normal + n_anomalous; }

    void validate() const {
        if (n_normal < 0 || n_anomalous < 0 || total_flights() <= 0)
            throw std::invalid_argument("flight counts must be positive");
        if (flight_length < 1 || n_phases < 1 || n_sensors < 1 || n_switches < 1)
            throw std::invalid_argument("dimensions must be positive");
        if (contamination && !(*contamination >= 0.0 && *contamination <= 1.0))
            throw std::invalid_argument("contamination must be in [0,1]");
        if (events_min < 1 || events_max < events_min)
            throw std::invalid_argument("bad event count range");
    }

    std::string resolved_name() const {
        return name.empty() ? to_string(anomaly) : name;
    }
};

// Ground-truth model used to simulate flights. Normal mode transitions flip a
// single switch, with a sharp (low-concentration Dirichlet) preference among
// the flip neighbours so trajectories form a coherent profile across flights;
// each mode pulls the phase toward a preferred target while allowing
// persistence, and per-phase VAR matrices are random stable systems.
inline ModelParams make_ground_truth(const ScenarioConfig& cfg, std::mt19937_64& rng) {
    int real_modes = 1 << cfg.n_switches;
    int n_modes = real_modes + 1;  // trailing reserved slot stays unused
    ModelParams params;
    params.n_modes = n_modes;
    params.n_phases = cfg.n_phases;
    params.n_sensors = cfg.n_sensors;

    // Phases correspond to regions of the switch configuration space: a
    // random linear threshold on the bits splits the modes into n_phases
    // groups, so the phase is close to a deterministic function of the mode.
    std::normal_distribution<double> bit_gauss(0.0, 1.0);
    Eigen::VectorXd bit_weight(cfg.n_switches);
    for (int b = 0; b < cfg.n_switches; ++b) bit_weight[b] = bit_gauss(rng);
    std::vector<int> order(real_modes);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        double sa = 0.0, sb = 0.0;
        for (int bit = 0; bit < cfg.n_switches; ++bit) {
            if (a & (1 << bit)) sa += bit_weight[bit];
            if (b & (1 << bit)) sb += bit_weight[bit];
        }
        return sa < sb;
    });
    std::vector<int> preferred(n_modes, 0);
    for (int rank = 0; rank < real_modes; ++rank)
        preferred[order[rank]] =
            std::min(rank * cfg.n_phases / real_modes, cfg.n_phases - 1);
    preferred[real_modes] = 0;

    // Mode transitions flip one switch. Normal walks stay inside a phase
    // region (cross-region flips are heavily damped) except at gateway
    // modes, whose dominant successor deliberately crosses into another
    // region, the way procedural phase changes are driven by specific switch
    // actions. This keeps normal transitions predictable while still
    // exercising every phase.
    params.mode_trans = Eigen::MatrixXd::Zero(n_modes, n_modes);
    std::uniform_real_distribution<double> unif01(0.0, 1.0);
    for (int m = 0; m < real_modes; ++m) {
        Eigen::VectorXd w = detail::dirichlet_row(cfg.n_switches, rng, 0.15);
        std::vector<int> cross_bits;
        for (int b = 0; b < cfg.n_switches; ++b) {
            int neighbor = m ^ (1 << b);
            if (preferred[neighbor] != preferred[m]) {
                w[b] *= 0.01;
                cross_bits.push_back(b);
            }
        }
        bool gateway = unif01(rng) < 0.25;
        if (gateway && !cross_bits.empty()) {
            int pick = cross_bits[static_cast<std::size_t>(
                unif01(rng) * static_cast<double>(cross_bits.size()))];
            w[pick] = std::max(w.sum() * 8.0, 1e-6);
        }
        w /= w.sum();
        for (int b = 0; b < cfg.n_switches; ++b)
            params.mode_trans(m, m ^ (1 << b)) = w[b];
    }
    // Reserved row: uniform over real modes; never entered during sampling.
    params.mode_trans.row(real_modes).head(real_modes).setConstant(1.0 / real_modes);

    std::uniform_real_distribution<double> rate(3.0, 15.0);
    params.duration_rate.resize(n_modes);
    for (int m = 0; m < n_modes; ++m) params.duration_rate[m] = rate(rng);

    params.phase_trans.resize(n_modes);
    for (int m = 0; m < n_modes; ++m) {
        params.phase_trans[m].resize(cfg.n_phases, cfg.n_phases);
        for (int r = 0; r < cfg.n_phases; ++r) {
            Eigen::VectorXd row =
                0.03 * detail::dirichlet_row(cfg.n_phases, rng);
            row[preferred[m]] += 0.92;
            row[r] += 0.05;  // persistence mass
            params.phase_trans[m].row(r) = (row / row.sum()).transpose();
        }
    }

    // Scaled rotations around a common base: spectral radius and operator
    // norm 0.9, so the sensor process stays bounded no matter how the phases
    // switch (individually stable matrices alone do not guarantee that), and
    // per-phase dynamics differ moderately rather than maximally.
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto random_square = [&]() {
        Eigen::MatrixXd g(cfg.n_sensors, cfg.n_sensors);
        for (int i = 0; i < cfg.n_sensors; ++i)
            for (int j = 0; j < cfg.n_sensors; ++j) g(i, j) = gauss(rng);
        return g;
    };
    auto orthonormalize = [&](const Eigen::MatrixXd& g) {
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
        Eigen::MatrixXd q = qr.householderQ();
        Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
        for (int i = 0; i < cfg.n_sensors; ++i)
            if (r(i, i) < 0) q.col(i) = -q.col(i);
        return q;
    };
    Eigen::MatrixXd base = orthonormalize(random_square());
    params.var_coeff.resize(cfg.n_phases);
    for (int k = 0; k < cfg.n_phases; ++k) {
        Eigen::MatrixXd q = orthonormalize(base + 0.35 * random_square());
        params.var_coeff[k] = 0.9 * q;
        if (ModelParams::spectral_radius(params.var_coeff[k]) >= 1.0)
            throw std::runtime_error("sampled VAR matrix not stable");
    }
    params.validate(1e-9);
    return params;
}

// ---------------------------------------------------------------------------
// Anomaly injection helpers. Each takes the per-flight RNG so datasets are
// reproducible from the scenario seed alone.

// Sample a flight whose mode transitions at `n_events` expiry steps are
// forced to the dataset's unusual-successor map instead of the model draw.
inline SampledFlight sample_with_mode_injections(
    const ModelParams& params, long T, int init_mode,
    const std::vector<int>& unusual_successor, int n_events,
    std::mt19937_64& rng, const std::string& flight_id) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<long> event_times(n_events);
    for (auto& e : event_times)
        e = 1 + static_cast<long>(unif(rng) * static_cast<double>(T - 1));
    std::sort(event_times.begin(), event_times.end());
    std::size_t next_event = 0;

    SampledFlight out;
    out.record.flight_id = flight_id;
    int m = init_mode;
    int d = detail::sample_shifted_poisson(params.duration_rate[m], rng);
    std::uniform_int_distribution<int> init_phase(0, params.n_phases - 1);
    int x = init_phase(rng);
    Eigen::VectorXd y(params.n_sensors);
    for (int j = 0; j < params.n_sensors; ++j) y[j] = gauss(rng);

    out.record.durations.reserve(T);
    out.record.modes.reserve(T);
    out.phases.reserve(T);
    out.record.sensors.resize(T, params.n_sensors);
    out.record.durations.push_back(d);
    out.record.modes.push_back(m);
    out.phases.push_back(x);
    out.record.sensors.row(0) = y.transpose();

    for (long t = 1; t < T; ++t) {
        if (d > 1) {
            --d;
        } else {
            int drawn =
                detail::sample_categorical(params.mode_trans.row(m).transpose(), rng);
            if (next_event < event_times.size() && event_times[next_event] <= t) {
                drawn = unusual_successor[m];
                ++next_event;
            }
            m = drawn;
            d = detail::sample_shifted_poisson(params.duration_rate[m], rng);
            x = detail::sample_categorical(params.phase_trans[m].row(x).transpose(), rng);
        }
        Eigen::VectorXd noise(params.n_sensors);
        for (int j = 0; j < params.n_sensors; ++j) noise[j] = gauss(rng);
        y = params.var_coeff[x] * y + noise;
        out.record.durations.push_back(d);
        out.record.modes.push_back(m);
        out.phases.push_back(x);
        out.record.sensors.row(t) = y.transpose();
    }
    return out;
}

// Re-generate the sensors inside each window under a different phase's VAR
// matrix, keeping everything outside the windows equal to the twin: the
// anomaly is confined to the windows (plus the re-entry residual). Callers
// place windows at countdown-expiry boundaries, where a phase switch is a
// legal move of the generative process.
inline FlightRecord inject_phase_anomaly(const SampledFlight& twin,
                                         const ModelParams& params,
                                         const std::vector<long>& window_starts,
                                         long window_len, std::mt19937_64& rng) {
    FlightRecord rec = twin.record;
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_int_distribution<int> shift(1, params.n_phases - 1);
    long T = rec.length();
    for (long start : window_starts) {
        long end = std::min(start + window_len, T);
        if (start < 1 || start >= T) continue;
        int truth = twin.phases[start];
        int override_phase = (truth + shift(rng)) % params.n_phases;
        Eigen::VectorXd y = rec.sensors.row(start - 1).transpose();
        for (long t = start; t < end; ++t) {
            Eigen::VectorXd noise(params.n_sensors);
            for (int j = 0; j < params.n_sensors; ++j) noise[j] = gauss(rng);
            y = params.var_coeff[override_phase] * y + noise;
            rec.sensors.row(t) = y.transpose();
        }
    }
    return rec;
}

// Additive measurement noise over each window; dynamics are untouched.
inline FlightRecord inject_sensor_anomaly(const FlightRecord& twin,
                                          const std::vector<long>& window_starts,
                                          long window_len, double noise_scale,
                                          std::mt19937_64& rng) {
    FlightRecord rec = twin;
    std::normal_distribution<double> gauss(0.0, 1.0);
    long T = rec.length();
    for (long start : window_starts) {
        long end = std::min(start + window_len, T);
        for (long t = std::max<long>(start, 0); t < end; ++t)
            for (int j = 0; j < rec.sensors.cols(); ++j)
                rec.sensors(t, j) += noise_scale * gauss(rng);
    }
    return rec;
}

struct LabeledDataset {
    std::vector<RawFlight> flights;
    std::vector<int> labels;  // 1 = anomalous
    ModelParams ground_truth;
    ModeDictionary dictionary;
};

namespace detail {

inline RawFlight to_raw(const FlightRecord& rec, const ModeDictionary& dict) {
    RawFlight raw;
    raw.flight_id = rec.flight_id;
    raw.switches.reserve(rec.modes.size());
    for (int m : rec.modes) raw.switches.push_back(dict.pattern(m));
    raw.sensors = rec.sensors;
    return raw;
}

inline std::vector<long> draw_window_starts(int count, long T, long window,
                                            std::mt19937_64& rng) {
    std::uniform_int_distribution<long> pos(1, std::max<long>(T - window, 1));
    std::vector<long> starts(count);
    for (auto& s : starts) s = pos(rng);
    std::sort(starts.begin(), starts.end());
    return starts;
}

// Hamming distance-2 targets break the single-flip structure of normal
// transitions; one fixed map per dataset so heavy contamination genuinely
// shifts what the learned model considers usual.
inline std::vector<int> draw_unusual_successors(int real_modes, int n_switches,
                                                std::mt19937_64& rng) {
    std::vector<int> target(real_modes);
    std::vector<int> masks;
    for (int a = 0; a < n_switches; ++a)
        for (int b = a + 1; b < n_switches; ++b) masks.push_back((1 << a) | (1 << b));
    std::uniform_int_distribution<std::size_t> pick(0, masks.size() - 1);
    for (int m = 0; m < real_modes; ++m) target[m] = m ^ masks[pick(rng)];
    return target;
}

}  // namespace detail

// Build one labeled synthetic dataset: normal flights sampled from a seeded
// ground-truth model, anomalous flights with injected events of the
// configured kind. Countdowns are re-derived from the mode runs so generated
// data matches what ingestion would produce.
inline LabeledDataset generate_scenario(const ScenarioConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(derive_seed(cfg.seed, 0x5ce0a1));
    LabeledDataset out;
    out.dictionary = ModeDictionary::full(cfg.n_switches);
    out.ground_truth = make_ground_truth(cfg, rng);
    int real_modes = 1 << cfg.n_switches;

    int total = cfg.total_flights();
    int n_anom = cfg.contamination
                     ? static_cast<int>(std::lround(*cfg.contamination * total))
                     : cfg.n_anomalous;
    n_anom = std::min(n_anom, total);
    int n_norm = total - n_anom;

    std::vector<int> unusual =
        detail::draw_unusual_successors(real_modes, cfg.n_switches, rng);
    std::uniform_int_distribution<int> event_count(cfg.events_min, cfg.events_max);
    // All flights share the same initial switch configuration, the way real
    // datasets share a flight profile; trajectories then diverge by sampling.
    const int init_mode = 0;

    auto flight_name = [&](int i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "f%04d", i);
        return std::string(buf);
    };

    for (int i = 0; i < total; ++i) {
        std::mt19937_64 flight_rng(derive_seed(cfg.seed, 1000 + i));
        bool anomalous = i >= n_norm;
        FlightRecord rec;
        if (!anomalous) {
            InitialState init;
            init.mode = init_mode;
            rec = sample_flight_with_phases(out.ground_truth, cfg.flight_length, init,
                                            derive_seed(cfg.seed, 5000 + i),
                                            flight_name(i))
                      .record;
        } else {
            int events = event_count(flight_rng);
            switch (cfg.anomaly) {
                case AnomalyKind::kMode: {
                    rec = sample_with_mode_injections(
                              out.ground_truth, cfg.flight_length, init_mode,
                              unusual, events, flight_rng, flight_name(i))
                              .record;
                    break;
                }
                case AnomalyKind::kPhase: {
                    InitialState init;
                    init.mode = init_mode;
                    SampledFlight twin = sample_flight_with_phases(
                        out.ground_truth, cfg.flight_length, init,
                        derive_seed(cfg.seed, 5000 + i), flight_name(i));
                    auto windows = detail::draw_window_starts(
                        events, cfg.flight_length, cfg.phase_window, flight_rng);
                    rec = inject_phase_anomaly(twin, out.ground_truth, windows,
                                               cfg.phase_window, flight_rng);
                    break;
                }
                case AnomalyKind::kSensor: {
                    InitialState init;
                    init.mode = init_mode;
                    SampledFlight twin = sample_flight_with_phases(
                        out.ground_truth, cfg.flight_length, init,
                        derive_seed(cfg.seed, 5000 + i), flight_name(i));
                    auto windows = detail::draw_window_starts(
                        events, cfg.flight_length, cfg.sensor_window, flight_rng);
                    rec = inject_sensor_anomaly(twin.record, windows,
                                                cfg.sensor_window,
                                                cfg.sensor_noise_scale, flight_rng);
                    break;
                }
            }
        }
        rec.durations = derive_durations(rec.modes);
        out.flights.push_back(detail::to_raw(rec, out.dictionary));
        out.labels.push_back(anomalous ? 1 : 0);
    }
    return out;
}

// ---------------------------------------------------------------------------
// ROC / AUC.

struct RocResult {
    std::vector<double> thresholds;
    std::vector<double> tpr;
    std::vector<double> fpr;
    double auc = 0.0;
    int n_runs = 1;
    double auc_mean = 0.0;
    double auc_std = 0.0;
};

// Rank-statistic AUC (ties averaged) plus the ROC staircase over unique
// score thresholds.
inline RocResult roc_auc(const std::vector<double>& scores,
                         const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("scores/labels size mismatch");
    long n_pos = 0, n_neg = 0;
    for (int l : labels) (l ? n_pos : n_neg) += 1;
    if (n_pos == 0 || n_neg == 0)
        throw std::invalid_argument("roc_auc requires both classes");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] < scores[b];
    });

    // Average ranks over tie groups, accumulate positive ranks.
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() &&
               scores[order[j + 1]] == scores[order[i]])
            ++j;
        double avg_rank = 0.5 * static_cast<double>(i + 1 + j + 1);
        for (std::size_t k = i; k <= j; ++k)
            if (labels[order[k]]) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    RocResult out;
    out.auc = (rank_sum_pos -
               0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1)) /
              (static_cast<double>(n_pos) * static_cast<double>(n_neg));

    // Staircase from highest threshold down, grouping tied scores.
    out.fpr.push_back(0.0);
    out.tpr.push_back(0.0);
    long tp = 0, fp = 0;
    std::size_t k = order.size();
    while (k > 0) {
        double threshold = scores[order[k - 1]];
        while (k > 0 && scores[order[k - 1]] == threshold) {
            if (labels[order[k - 1]]) ++tp;
            else ++fp;
            --k;
        }
        out.thresholds.push_back(threshold);
        out.tpr.push_back(static_cast<double>(tp) / n_pos);
        out.fpr.push_back(static_cast<double>(fp) / n_neg);
    }
    out.auc_mean = out.auc;
    return out;
}

// ---------------------------------------------------------------------------
// Benchmark protocol: per run, one dataset per scenario; every detector is
// fitted on the full unlabeled mixture and scores the same flights.

struct BenchmarkConfig {
    std::vector<ScenarioConfig> scenarios;
    std::vector<ScoreMethod> detectors = {ScoreMethod::kKl, ScoreMethod::kLl,
                                          ScoreMethod::kVar, ScoreMethod::kSmm,
                                          ScoreMethod::kMkad};
    int n_runs = 30;
    EMConfig em;
    MkadConfig mkad;
    std::uint64_t seed = 0;
    unsigned jobs = 1;
};

struct BenchmarkRow {
    std::string scenario;
    ScoreMethod detector = ScoreMethod::kKl;
    std::uint64_t seed = 0;
    double auc = 0.0;
};

struct BenchmarkAggregate {
    double mean = 0.0;
    double stddev = 0.0;
    int n_runs = 0;
};

struct BenchmarkResult {
    std::vector<BenchmarkRow> rows;

    std::map<std::pair<std::string, ScoreMethod>, BenchmarkAggregate> aggregate() const {
        std::map<std::pair<std::string, ScoreMethod>, std::vector<double>> buckets;
        for (const auto& row : rows)
            buckets[{row.scenario, row.detector}].push_back(row.auc);
        std::map<std::pair<std::string, ScoreMethod>, BenchmarkAggregate> out;
        for (const auto& [key, aucs] : buckets) {
            BenchmarkAggregate agg;
            agg.n_runs = static_cast<int>(aucs.size());
            for (double a : aucs) agg.mean += a;
            agg.mean /= agg.n_runs;
            if (agg.n_runs > 1) {
                double ss = 0.0;
                for (double a : aucs) ss += (a - agg.mean) * (a - agg.mean);
                agg.stddev = std::sqrt(ss / (agg.n_runs - 1));
            }
            out[key] = agg;
        }
        return out;
    }
};

// Score one prepared dataset with every requested detector. The SMS-VAR model
// is fitted once and shared by the KL and LL scorers; observed-variable
// parameters double as the SMM model.
inline std::map<ScoreMethod, std::vector<double>> score_dataset(
    const PreparedDataset& prepared, const std::vector<ScoreMethod>& detectors,
    const EMConfig& em_cfg, const MkadConfig& mkad_cfg, unsigned jobs = 1) {
    std::map<ScoreMethod, std::vector<double>> out;
    const auto& records = prepared.records;
    bool want_kl = false, want_ll = false, want_smm = false;
    for (auto d : detectors) {
        want_kl |= d == ScoreMethod::kKl;
        want_ll |= d == ScoreMethod::kLl;
        want_smm |= d == ScoreMethod::kSmm;
    }

    int n_modes = prepared.dictionary.total_modes();
    if (want_kl || want_ll) {
        EMConfig cfg = em_cfg;
        cfg.jobs = jobs;
        EMReport report = em_fit(records, n_modes,
                                 static_cast<int>(records.front().n_sensors()), cfg);
        std::vector<double> kl(records.size()), ll(records.size());
        parallel_for(records.size(), jobs, [&](std::size_t i) {
            FilterTrace trace = forward_filter(records[i], report.params);
            kl[i] = score_kl(trace, records[i].flight_id).summary;
            ll[i] = score_ll(trace, records[i].flight_id).summary;
        });
        if (want_kl) out[ScoreMethod::kKl] = std::move(kl);
        if (want_ll) out[ScoreMethod::kLl] = std::move(ll);
    }
    if (want_smm) {
        ObservedParams obs = estimate_observed_params(records, n_modes);
        std::vector<double> scores(records.size());
        for (std::size_t i = 0; i < records.size(); ++i)
            scores[i] = smm_score(records[i], obs.mode_trans, obs.duration_rate).summary;
        out[ScoreMethod::kSmm] = std::move(scores);
    }
    for (auto d : detectors) {
        if (d == ScoreMethod::kVar) {
            Eigen::MatrixXd coeff = var_baseline_fit(records);
            std::vector<double> scores(records.size());
            for (std::size_t i = 0; i < records.size(); ++i)
                scores[i] = var_baseline_score(records[i], coeff).summary;
            out[ScoreMethod::kVar] = std::move(scores);
        } else if (d == ScoreMethod::kMkad) {
            auto series = mkad_score(records, mkad_cfg, jobs);
            std::vector<double> scores(series.size());
            for (std::size_t i = 0; i < series.size(); ++i)
                scores[i] = series[i].summary;
            out[ScoreMethod::kMkad] = std::move(scores);
        }
    }
    return out;
}

using ScoreDumpHook = std::function<void(
    const std::string& scenario, int run,
    const std::map<ScoreMethod, std::vector<double>>& scores,
    const std::vector<int>& labels)>;

inline BenchmarkResult run_benchmark(const BenchmarkConfig& cfg,
                                     const ScoreDumpHook& dump = nullptr) {
    BenchmarkResult result;
    struct Job {
        std::size_t scenario_index;
        int run;
    };
    std::vector<Job> jobs_list;
    for (std::size_t s = 0; s < cfg.scenarios.size(); ++s)
        for (int r = 0; r < cfg.n_runs; ++r) jobs_list.push_back({s, r});
    std::vector<std::vector<BenchmarkRow>> rows(jobs_list.size());
    std::mutex dump_mutex;

    parallel_for(jobs_list.size(), cfg.jobs, [&](std::size_t idx) {
        const Job& job = jobs_list[idx];
        ScenarioConfig scenario = cfg.scenarios[job.scenario_index];
        std::uint64_t run_seed = derive_seed(cfg.seed ^ scenario.seed,
                                             job.scenario_index * 1000003 + job.run);
        scenario.seed = run_seed;
        LabeledDataset data = generate_scenario(scenario);
        PreparedDataset prepared = prepare_training(data.flights);
        EMConfig em_cfg = cfg.em;
        em_cfg.n_phases = scenario.n_phases;
        em_cfg.seed = derive_seed(run_seed, 0xe111);
        auto scores = score_dataset(prepared, cfg.detectors, em_cfg, cfg.mkad, 1);
        for (const auto& [method, values] : scores) {
            BenchmarkRow row;
            row.scenario = scenario.resolved_name();
            row.detector = method;
            row.seed = run_seed;
            row.auc = roc_auc(values, data.labels).auc;
            rows[idx].push_back(row);
        }
        if (dump) {
            std::lock_guard<std::mutex> lock(dump_mutex);
            dump(scenario.resolved_name(), job.run, scores, data.labels);
        }
    });
    for (auto& batch : rows)
        result.rows.insert(result.rows.end(), batch.begin(), batch.end());
    return result;
}

inline std::string benchmark_to_csv(const BenchmarkResult& result) {
    std::ostringstream out;
    out << "scenario,detector,seed,auc\n";
    for (const auto& row : result.rows)
        out << row.scenario << ',' << to_string(row.detector) << ',' << row.seed
            << ',' << format_double(row.auc) << "\n";
    return out.str();
}

inline nlohmann::json benchmark_aggregate_json(const BenchmarkResult& result) {
    nlohmann::json j;
    for (const auto& [key, agg] : result.aggregate()) {
        j[key.first][to_string(key.second)] = {{"auc_mean", agg.mean},
                                               {"auc_std", agg.stddev},
                                               {"n_runs", agg.n_runs}};
    }
    return j;
}

}  // namespace smsvar
