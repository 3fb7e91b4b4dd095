// Copyright 2026 the smsvar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstring>
#include <string>
#include <vector>

#include <json.hpp>

#include "smsvar/detection.hpp"
#include "smsvar/learning.hpp"

namespace smsvar {

// ---------------------------------------------------------------------------
// Single-VAR baseline: one first-order process fitted to everything.

inline Eigen::MatrixXd var_baseline_fit(const std::vector<FlightRecord>& records,
                                        double ridge = 1e-8,
                                        bool* ridge_applied = nullptr) {
    std::vector<Panel> panels;
    for (const auto& rec : records) {
        long rows = rec.length() - 1;
        if (rows < 1) continue;
        Panel p;
        p.design = rec.sensors.topRows(rows);
        p.response = rec.sensors.bottomRows(rows);
        panels.push_back(std::move(p));
    }
    if (panels.empty()) throw std::invalid_argument("no usable rows for VAR fit");
    TsqrResult solved = tsqr_solve(panels, ridge);
    if (ridge_applied) *ridge_applied = solved.ridge_applied;
    return solved.solution.transpose();
}

// One-step-ahead prediction error norms, summarized like every other score.
inline ScoreSeries var_baseline_score(const FlightRecord& rec,
                                      const Eigen::MatrixXd& coeff) {
    ScoreSeries s;
    s.flight_id = rec.flight_id;
    s.method = ScoreMethod::kVar;
    for (long t = 1; t < rec.length(); ++t) {
        Eigen::VectorXd r = rec.sensors.row(t).transpose() -
                            coeff * rec.sensors.row(t - 1).transpose();
        s.values.push_back(r.norm());
    }
    s.summary = variance_summary(s.values);
    return s;
}

// ---------------------------------------------------------------------------
// Semi-Markov mode model: scores only the discrete part of the data through
// the mode and duration conditionals. Countdown steps are deterministic and
// contribute log 1 = 0.

inline ScoreSeries smm_score(const FlightRecord& rec,
                             const Eigen::MatrixXd& mode_trans,
                             const Eigen::VectorXd& duration_rate) {
    ScoreSeries s;
    s.flight_id = rec.flight_id;
    s.method = ScoreMethod::kSmm;
    for (long t = 1; t < rec.length(); ++t) {
        int d_prev = rec.durations[t - 1];
        double lp;
        if (d_prev > 1) {
            lp = (rec.modes[t] == rec.modes[t - 1] &&
                  rec.durations[t] == d_prev - 1)
                     ? 0.0
                     : kNegInf;
        } else {
            lp = std::log(mode_trans(rec.modes[t - 1], rec.modes[t])) +
                 shifted_poisson_logpmf(rec.durations[t],
                                        duration_rate[rec.modes[t]]);
        }
        s.values.push_back(lp);
    }
    s.summary = variance_summary(s.values);
    return s;
}

// ---------------------------------------------------------------------------
// SAX: piecewise means discretized through equiprobable standard-normal
// breakpoints.

struct SaxConfig {
    int alphabet_size = 4;
    int window = 2;
    std::vector<double> breakpoints;  // alphabet_size - 1, strictly increasing

    static SaxConfig make(int alphabet_size, int window) {
        if (alphabet_size < 2) throw std::invalid_argument("alphabet size must be >= 2");
        if (window < 1) throw std::invalid_argument("window must be >= 1");
        SaxConfig cfg;
        cfg.alphabet_size = alphabet_size;
        cfg.window = window;
        cfg.breakpoints = sax_breakpoints(alphabet_size);
        return cfg;
    }

    static std::vector<double> sax_breakpoints(int alphabet_size) {
        std::vector<double> bp(alphabet_size - 1);
        for (int i = 1; i < alphabet_size; ++i)
            bp[i - 1] = std_normal_quantile(static_cast<double>(i) / alphabet_size);
        return bp;
    }
};

// The final ragged segment is averaged over its actual length.
inline std::vector<int> sax_transform(const Eigen::VectorXd& series,
                                      const SaxConfig& cfg) {
    if (series.size() == 0) throw std::invalid_argument("sax_transform: empty series");
    std::vector<int> symbols;
    long n = series.size();
    for (long start = 0; start < n; start += cfg.window) {
        long len = std::min<long>(cfg.window, n - start);
        double mean = series.segment(start, len).mean();
        int sym = 0;
        while (sym < static_cast<int>(cfg.breakpoints.size()) &&
               mean > cfg.breakpoints[sym])
            ++sym;
        symbols.push_back(sym);
    }
    return symbols;
}

// ---------------------------------------------------------------------------
// Normalized longest-common-subsequence similarity between symbol sequences.

inline long lcs_length(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.empty() || b.empty()) return 0;
    std::vector<long> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            if (a[i - 1] == b[j - 1])
                cur[j] = prev[j - 1] + 1;
            else
                cur[j] = std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

inline double lcs_kernel(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.empty() || b.empty())
        throw std::invalid_argument("lcs_kernel: empty sequence");
    return static_cast<double>(lcs_length(a, b)) /
           std::sqrt(static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

// ---------------------------------------------------------------------------
// MKAD: convex combination of a discrete LCS kernel over the joint switch
// symbols and a continuous kernel from per-channel SAX mismatch distance,
// fed into a one-class separator.

struct MkadConfig {
    SaxConfig sax = SaxConfig::make(4, 2);
    double alpha = 0.5;  // weight of the discrete kernel
    double nu = 0.1;     // one-class bound fraction
};

struct KernelMatrix {
    Eigen::MatrixXd values;  // N x N, symmetric, entries in [0,1]
    double alpha = 0.5;
};

namespace detail {

// Mean per-channel symbol mismatch, with the length difference counted as
// mismatches, normalized to [0,1] by the longer sequence.
inline double sax_mismatch_distance(const std::vector<std::vector<int>>& a,
                                    const std::vector<std::vector<int>>& b) {
    double total = 0.0;
    for (std::size_t ch = 0; ch < a.size(); ++ch) {
        std::size_t na = a[ch].size(), nb = b[ch].size();
        std::size_t overlap = std::min(na, nb);
        std::size_t longest = std::max(na, nb);
        long mismatches = static_cast<long>(longest - overlap);
        for (std::size_t i = 0; i < overlap; ++i)
            if (a[ch][i] != b[ch][i]) ++mismatches;
        total += longest > 0 ? static_cast<double>(mismatches) / longest : 0.0;
    }
    return a.empty() ? 0.0 : total / a.size();
}

}  // namespace detail

inline KernelMatrix build_mkad_kernel(const std::vector<FlightRecord>& records,
                                      const MkadConfig& cfg, unsigned jobs = 1) {
    std::size_t n = records.size();
    // Per-flight representations: the dense mode ids already are the joint
    // discrete symbols; continuous channels are SAX-ed independently.
    std::vector<std::vector<std::vector<int>>> sax(n);
    for (std::size_t i = 0; i < n; ++i) {
        int ny = records[i].n_sensors();
        sax[i].resize(ny);
        for (int c = 0; c < ny; ++c)
            sax[i][c] = sax_transform(records[i].sensors.col(c), cfg.sax);
    }
    KernelMatrix km;
    km.alpha = cfg.alpha;
    km.values.resize(n, n);
    parallel_for(n, jobs, [&](std::size_t i) {
        for (std::size_t j = i; j < n; ++j) {
            double kd = lcs_kernel(records[i].modes, records[j].modes);
            double kc =
                1.0 / (1.0 + detail::sax_mismatch_distance(sax[i], sax[j]));
            double v = cfg.alpha * kd + (1.0 - cfg.alpha) * kc;
            km.values(i, j) = v;
            km.values(j, i) = v;
        }
    });
    return km;
}

// One-class separator on a precomputed kernel: minimize 0.5 a^T K a subject
// to 0 <= a_i <= 1/(nu N), sum a = 1, by pairwise coordinate ascent on the
// most violating pair. Deterministic: uniform start, lowest-index tie wins.
struct OneClassResult {
    Eigen::VectorXd alpha;
    Eigen::VectorXd decision;  // K alpha - rho per flight
    double rho = 0.0;
    bool jitter_applied = false;
};

inline OneClassResult one_class_svm(const KernelMatrix& kernel, double nu,
                                    std::vector<std::string>* flags = nullptr) {
    Eigen::Index n = kernel.values.rows();
    if (n == 0) throw std::invalid_argument("empty kernel");
    if (!(nu > 0.0 && nu <= 1.0)) throw std::invalid_argument("nu must be in (0,1]");
    Eigen::MatrixXd k = kernel.values;
    OneClassResult out;
    double jitter = 1e-10;
    while (Eigen::LLT<Eigen::MatrixXd>(k).info() != Eigen::Success) {
        k.diagonal().array() += jitter;
        jitter *= 10.0;
        out.jitter_applied = true;
        if (jitter > 1.0) break;
    }
    if (out.jitter_applied && flags)
        flags->push_back("combined kernel not positive definite; jitter added");

    double cap = 1.0 / (nu * static_cast<double>(n));
    Eigen::VectorXd alpha =
        Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
    Eigen::VectorXd grad = k * alpha;
    const double tol = 1e-10;
    const long max_iters = 200 * std::max<long>(n, 16);
    for (long it = 0; it < max_iters; ++it) {
        Eigen::Index up = -1, down = -1;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (alpha[i] < cap - 1e-15 && (up < 0 || grad[i] < grad[up])) up = i;
            if (alpha[i] > 1e-15 && (down < 0 || grad[i] > grad[down])) down = i;
        }
        if (up < 0 || down < 0 || grad[down] - grad[up] < tol) break;
        double curvature = k(up, up) + k(down, down) - 2.0 * k(up, down);
        double step = curvature > 1e-300 ? (grad[down] - grad[up]) / curvature
                                         : std::numeric_limits<double>::max();
        step = std::min({step, cap - alpha[up], alpha[down]});
        if (step <= 0.0) break;
        alpha[up] += step;
        alpha[down] -= step;
        grad += step * (k.col(up) - k.col(down));
    }

    double rho_sum = 0.0;
    long rho_count = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (alpha[i] > 1e-12 && alpha[i] < cap - 1e-12) {
            rho_sum += grad[i];
            ++rho_count;
        }
    }
    double rho;
    if (rho_count > 0) {
        rho = rho_sum / rho_count;
    } else {
        double lo = -std::numeric_limits<double>::infinity();
        double hi = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < n; ++i) {
            if (alpha[i] >= cap - 1e-12) lo = std::max(lo, grad[i]);
            if (alpha[i] <= 1e-12) hi = std::min(hi, grad[i]);
        }
        if (!std::isfinite(lo)) lo = hi;
        if (!std::isfinite(hi)) hi = lo;
        rho = 0.5 * (lo + hi);
    }
    out.alpha = std::move(alpha);
    out.rho = rho;
    out.decision = grad.array() - rho;
    return out;
}

// Scalar anomaly scores: the negated one-class decision value per flight.
inline std::vector<ScoreSeries> mkad_score(const std::vector<FlightRecord>& records,
                                           const MkadConfig& cfg, unsigned jobs = 1,
                                           std::vector<std::string>* flags = nullptr,
                                           KernelMatrix* kernel_out = nullptr) {
    KernelMatrix kernel = build_mkad_kernel(records, cfg, jobs);
    OneClassResult svm = one_class_svm(kernel, cfg.nu, flags);
    std::vector<ScoreSeries> scores;
    scores.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        ScoreSeries s;
        s.flight_id = records[i].flight_id;
        s.method = ScoreMethod::kMkad;
        s.summary = -svm.decision[static_cast<Eigen::Index>(i)];
        scores.push_back(std::move(s));
    }
    if (kernel_out) *kernel_out = std::move(kernel);
    return scores;
}

// ---------------------------------------------------------------------------
// Kernel matrix dump: one JSON header line, then row-major doubles.

inline void save_kernel(const std::string& path, const KernelMatrix& kernel,
                        const std::string& config_fingerprint = "") {
    nlohmann::json header;
    header["dims"] = kernel.values.rows();
    header["alpha"] = kernel.alpha;
    header["config_hash"] = config_fingerprint;
    std::string payload = header.dump();
    payload.push_back('\n');
    std::size_t count = static_cast<std::size_t>(kernel.values.size());
    std::string bytes(count * sizeof(double), '\0');
    Eigen::Index n = kernel.values.rows();
    std::vector<double> row_major(count);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            row_major[static_cast<std::size_t>(i * n + j)] = kernel.values(i, j);
    std::memcpy(bytes.data(), row_major.data(), bytes.size());
    write_file_atomic(path, payload + bytes);
}

inline KernelMatrix load_kernel(const std::string& path) {
    std::string content = read_file(path);
    std::size_t eol = content.find('\n');
    if (eol == std::string::npos) throw std::runtime_error("bad kernel file");
    nlohmann::json header = nlohmann::json::parse(content.substr(0, eol));
    Eigen::Index n = header.at("dims").get<Eigen::Index>();
    KernelMatrix km;
    km.alpha = header.at("alpha").get<double>();
    km.values.resize(n, n);
    const char* data = content.data() + eol + 1;
    if (content.size() - eol - 1 <
        static_cast<std::size_t>(n) * static_cast<std::size_t>(n) * sizeof(double))
        throw std::runtime_error("kernel file truncated");
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            double v;
            std::memcpy(&v, data + (i * n + j) * sizeof(double), sizeof(double));
            km.values(i, j) = v;
        }
    return km;
}

}  // namespace smsvar
