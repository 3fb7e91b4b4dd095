// Copyright 2026 the smsvar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "smsvar/inference.hpp"

namespace smsvar {

inline constexpr double kMultinomialSmoothing = 1e-6;
inline constexpr double kDurationRateFloor = 1e-3;

// Mode and duration parameters depend only on observed variables, so they
// are estimated once from counts and never touched by EM.
struct ObservedParams {
    Eigen::MatrixXd mode_trans;
    Eigen::VectorXd duration_rate;
    std::vector<std::string> flags;
};

inline ObservedParams estimate_observed_params(const std::vector<FlightRecord>& records,
                                               int n_modes) {
    if (records.empty()) throw std::invalid_argument("empty dataset");
    ObservedParams out;
    out.mode_trans = Eigen::MatrixXd::Zero(n_modes, n_modes);
    if (n_modes < 2) {
        out.flags.push_back("degenerate 1x1 mode space: no transitions exist");
        out.duration_rate = Eigen::VectorXd::Constant(std::max(n_modes, 1), 1.0);
    }

    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(n_modes, n_modes);
    std::vector<double> run_sum(n_modes, 0.0);
    std::vector<long> run_count(n_modes, 0);
    double global_run_sum = 0.0;
    long global_runs = 0;
    for (const auto& rec : records) {
        long T = rec.length();
        for (long t = 0; t + 1 < T; ++t)
            if (rec.durations[t] == 1) counts(rec.modes[t], rec.modes[t + 1]) += 1.0;
        // Maximal runs; the final (possibly truncated) run counts as exact.
        long start = 0;
        for (long t = 1; t <= T; ++t) {
            if (t == T || rec.modes[t] != rec.modes[start]) {
                int m = rec.modes[start];
                double len = static_cast<double>(t - start);
                run_sum[m] += len;
                run_count[m] += 1;
                global_run_sum += len;
                global_runs += 1;
                start = t;
            }
        }
    }

    if (n_modes >= 2) {
        for (int i = 0; i < n_modes; ++i) {
            counts(i, i) = 0.0;
            double row_total = counts.row(i).sum();
            if (row_total == 0.0)
                out.flags.push_back("mode " + std::to_string(i) +
                                    ": no outgoing transitions observed; uniform row");
            for (int j = 0; j < n_modes; ++j)
                if (j != i) counts(i, j) += kMultinomialSmoothing;
            out.mode_trans.row(i) = counts.row(i) / counts.row(i).sum();
        }
    }

    double global_mean = global_runs > 0 ? global_run_sum / global_runs : 1.0;
    out.duration_rate.resize(n_modes);
    for (int m = 0; m < n_modes; ++m) {
        double mean_len;
        if (run_count[m] > 0) {
            mean_len = run_sum[m] / run_count[m];
        } else {
            mean_len = global_mean;
            out.flags.push_back("mode " + std::to_string(m) +
                                ": no observed runs; global-mean duration rate");
        }
        out.duration_rate[m] = std::max(mean_len - 1.0, kDurationRateFloor);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tall-and-skinny QR: each row panel is reduced to its R factor (plus the
// correspondingly transformed response), then R factors are merged pairwise
// until a single triangular system remains. Equivalent to QR of the stacked
// matrix, without ever forming it.

struct Panel {
    Eigen::MatrixXd design;    // rows x n
    Eigen::MatrixXd response;  // rows x rhs
};

struct TsqrResult {
    Eigen::MatrixXd solution;  // n x rhs
    bool ridge_applied = false;
};

namespace detail {

struct ReducedPanel {
    Eigen::MatrixXd r;  // upper triangular/trapezoidal
    Eigen::MatrixXd c;  // transformed response
};

inline ReducedPanel reduce_panel(const Eigen::MatrixXd& design,
                                 const Eigen::MatrixXd& response) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(design);
    Eigen::Index keep = std::min(design.rows(), design.cols());
    ReducedPanel out;
    out.r = qr.matrixQR()
                .topRows(keep)
                .triangularView<Eigen::Upper>();
    out.c = (qr.householderQ().transpose() * response).topRows(keep);
    return out;
}

inline ReducedPanel merge_reduced(const ReducedPanel& a, const ReducedPanel& b) {
    Eigen::MatrixXd design(a.r.rows() + b.r.rows(), a.r.cols());
    design << a.r, b.r;
    Eigen::MatrixXd response(a.c.rows() + b.c.rows(), a.c.cols());
    response << a.c, b.c;
    return reduce_panel(design, response);
}

}  // namespace detail

inline TsqrResult tsqr_solve(const std::vector<Panel>& panels, double ridge = 1e-8) {
    if (panels.empty()) throw std::invalid_argument("tsqr_solve: no panels");
    Eigen::Index n = panels.front().design.cols();
    Eigen::Index rhs = panels.front().response.cols();
    long total_rows = 0;
    std::vector<detail::ReducedPanel> level;
    level.reserve(panels.size());
    for (const auto& p : panels) {
        if (p.design.cols() != n || p.response.cols() != rhs ||
            p.design.rows() != p.response.rows())
            throw std::invalid_argument("tsqr_solve: inconsistent panel shapes");
        if (p.design.rows() == 0) continue;
        total_rows += p.design.rows();
        level.push_back(detail::reduce_panel(p.design, p.response));
    }

    auto reduce_all = [&](std::vector<detail::ReducedPanel> work) {
        while (work.size() > 1) {
            std::vector<detail::ReducedPanel> next;
            next.reserve((work.size() + 1) / 2);
            for (std::size_t i = 0; i + 1 < work.size(); i += 2)
                next.push_back(detail::merge_reduced(work[i], work[i + 1]));
            if (work.size() % 2 == 1) next.push_back(std::move(work.back()));
            work = std::move(next);
        }
        return work.empty() ? detail::ReducedPanel{Eigen::MatrixXd::Zero(0, n),
                                                   Eigen::MatrixXd::Zero(0, rhs)}
                            : std::move(work.front());
    };

    detail::ReducedPanel final_panel = reduce_all(std::move(level));

    bool deficient = total_rows < n || final_panel.r.rows() < n;
    if (!deficient) {
        double max_diag = final_panel.r.diagonal().cwiseAbs().maxCoeff();
        double min_diag = final_panel.r.diagonal().cwiseAbs().minCoeff();
        deficient = max_diag == 0.0 || min_diag < 1e-10 * max_diag;
    }

    TsqrResult out;
    if (deficient) {
        // Re-run with a ridge block appended so the system is full rank.
        std::vector<Panel> padded = panels;
        Panel reg;
        reg.design = std::sqrt(std::max(ridge, 1e-300)) *
                     Eigen::MatrixXd::Identity(n, n);
        reg.response = Eigen::MatrixXd::Zero(n, rhs);
        padded.push_back(std::move(reg));
        std::vector<detail::ReducedPanel> lvl;
        for (const auto& p : padded)
            if (p.design.rows() > 0) lvl.push_back(detail::reduce_panel(p.design, p.response));
        final_panel = reduce_all(std::move(lvl));
        out.ridge_applied = true;
    }

    out.solution = final_panel.r.topRows(n)
                       .triangularView<Eigen::Upper>()
                       .solve(final_panel.c.topRows(n));
    return out;
}

// ---------------------------------------------------------------------------
// EM

struct EMConfig {
    int n_phases = 1;
    int max_iters = 100;
    double rel_tol = 1e-6;
    int restarts = 3;
    double ridge = 1e-8;
    std::uint64_t seed = 0;
    unsigned jobs = 1;
};

struct EMReport {
    std::vector<double> loglik_history;
    int iterations_run = 0;
    bool converged = false;
    ModelParams params;
    std::vector<std::string> flags;
};

struct EStepResult {
    std::vector<SmoothResult> per_flight;
    double total_loglik = 0.0;
};

inline EStepResult e_step(const std::vector<FlightRecord>& records,
                          const ModelParams& params, unsigned jobs = 1) {
    EStepResult out;
    out.per_flight.resize(records.size());
    std::vector<double> logliks(records.size(), 0.0);
    parallel_for(records.size(), jobs, [&](std::size_t i) {
        FilterTrace trace = forward_filter(records[i], params);
        out.per_flight[i] = backward_smooth(records[i], params, trace);
        logliks[i] = trace.total_loglik;
    });
    out.total_loglik = std::accumulate(logliks.begin(), logliks.end(), 0.0);
    return out;
}

// Expected phase-transition counts are accumulated per successor mode over
// countdown-expiry steps, smoothed and row-normalized.
inline std::vector<Eigen::MatrixXd> m_step_phase(
    const std::vector<FlightRecord>& records,
    const std::vector<SmoothResult>& smooth, int n_modes, int n_phases,
    std::vector<std::string>* flags = nullptr) {
    std::vector<Eigen::MatrixXd> acc(n_modes,
                                     Eigen::MatrixXd::Zero(n_phases, n_phases));
    std::vector<bool> seen(n_modes, false);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& rec = records[i];
        for (long t = 0; t + 1 < rec.length(); ++t) {
            if (rec.durations[t] != 1) continue;
            acc[rec.modes[t + 1]] += smooth[i].pairwise[t];
            seen[rec.modes[t + 1]] = true;
        }
    }
    for (int m = 0; m < n_modes; ++m) {
        if (!seen[m] && flags)
            flags->push_back("mode " + std::to_string(m) +
                             ": no expiry steps; uniform phase transitions");
        acc[m].array() += kMultinomialSmoothing;
        for (int r = 0; r < n_phases; ++r) acc[m].row(r) /= acc[m].row(r).sum();
    }
    return acc;
}

// Responsibility-weighted least squares per phase: each sample row (both the
// regressor y_{t-1} and the target y_t) is scaled by w_t = p(x_t = k | F),
// i.e. the loss carries w_t^2, and the stacked system is solved blockwise.
inline std::vector<Eigen::MatrixXd> m_step_var(
    const std::vector<FlightRecord>& records,
    const std::vector<SmoothResult>& smooth, int n_phases, double ridge,
    const std::vector<Eigen::MatrixXd>& previous,
    std::vector<std::string>* flags = nullptr) {
    std::vector<Eigen::MatrixXd> result(n_phases);
    for (int k = 0; k < n_phases; ++k) {
        std::vector<Panel> panels;
        panels.reserve(records.size());
        double total_weight = 0.0;
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto& rec = records[i];
            long rows = std::max<long>(rec.length() - 1, 0);
            if (rows == 0) continue;
            Panel p;
            p.design.resize(rows, rec.n_sensors());
            p.response.resize(rows, rec.n_sensors());
            for (long t = 1; t < rec.length(); ++t) {
                double w = smooth[i].marginals(t, k);
                total_weight += w;
                p.design.row(t - 1) = w * rec.sensors.row(t - 1);
                p.response.row(t - 1) = w * rec.sensors.row(t);
            }
            panels.push_back(std::move(p));
        }
        if (total_weight <= 0.0) {
            if (flags)
                flags->push_back("phase " + std::to_string(k) +
                                 ": zero responsibility mass; VAR kept");
            result[k] = previous.at(k);
            continue;
        }
        TsqrResult solved = tsqr_solve(panels, ridge);
        if (solved.ridge_applied && flags)
            flags->push_back("phase " + std::to_string(k) +
                             ": rank-deficient design; ridge applied");
        result[k] = solved.solution.transpose();  // solution is B = A^T
    }
    return result;
}

namespace detail {

inline Eigen::VectorXd dirichlet_row(int n, std::mt19937_64& rng,
                                     double concentration = 1.0) {
    std::gamma_distribution<double> gamma(concentration, 1.0);
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = std::max(gamma(rng), 1e-12);
    return v / v.sum();
}

// Initial VAR matrices: chop each flight into n_phases contiguous segments,
// assign segments to phases by a per-flight random permutation, and fit OLS
// per phase on its pooled segments.
inline std::vector<Eigen::MatrixXd> init_var_matrices(
    const std::vector<FlightRecord>& records, int n_phases, int n_sensors,
    double ridge, std::mt19937_64& rng) {
    std::vector<std::vector<Panel>> per_phase(n_phases);
    for (const auto& rec : records) {
        long rows = rec.length() - 1;
        if (rows < 1) continue;
        std::vector<int> perm(n_phases);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        for (int s = 0; s < n_phases; ++s) {
            long lo = 1 + rows * s / n_phases;
            long hi = 1 + rows * (s + 1) / n_phases;
            if (hi <= lo) continue;
            Panel p;
            p.design = rec.sensors.middleRows(lo - 1, hi - lo);
            p.response = rec.sensors.middleRows(lo, hi - lo);
            per_phase[perm[s]].push_back(std::move(p));
        }
    }
    std::vector<Eigen::MatrixXd> init(n_phases);
    for (int k = 0; k < n_phases; ++k) {
        if (per_phase[k].empty()) {
            init[k] = Eigen::MatrixXd::Zero(n_sensors, n_sensors);
            continue;
        }
        init[k] = tsqr_solve(per_phase[k], ridge).solution.transpose();
    }
    return init;
}

}  // namespace detail

// Full EM loop. Observed-variable parameters are estimated once; each
// restart re-seeds the phase-transition and VAR initialization, and the
// restart with the best final log-likelihood wins.
inline EMReport em_fit(const std::vector<FlightRecord>& records, int n_modes,
                       int n_sensors, const EMConfig& cfg) {
    if (records.empty()) throw std::invalid_argument("empty dataset");
    if (cfg.n_phases < 1) throw std::invalid_argument("n_phases must be >= 1");
    ObservedParams observed = estimate_observed_params(records, n_modes);

    EMReport best;
    bool have_best = false;
    for (int restart = 0; restart < std::max(cfg.restarts, 1); ++restart) {
        std::mt19937_64 rng(derive_seed(cfg.seed, restart));
        ModelParams params;
        params.n_modes = n_modes;
        params.n_phases = cfg.n_phases;
        params.n_sensors = n_sensors;
        params.mode_trans = observed.mode_trans;
        params.duration_rate = observed.duration_rate;
        params.phase_trans.resize(n_modes);
        for (int m = 0; m < n_modes; ++m) {
            params.phase_trans[m].resize(cfg.n_phases, cfg.n_phases);
            for (int r = 0; r < cfg.n_phases; ++r)
                params.phase_trans[m].row(r) =
                    detail::dirichlet_row(cfg.n_phases, rng).transpose();
        }
        params.var_coeff = detail::init_var_matrices(records, cfg.n_phases,
                                                     n_sensors, cfg.ridge, rng);

        EMReport report;
        report.flags = observed.flags;
        int iter = 0;
        double prev_ll = kNegInf;
        while (true) {
            EStepResult estep = e_step(records, params, cfg.jobs);
            report.loglik_history.push_back(estep.total_loglik);
            if (iter > 0) {
                double improvement =
                    (estep.total_loglik - prev_ll) / std::abs(prev_ll);
                if (improvement < cfg.rel_tol) {
                    report.converged = true;
                    break;
                }
            }
            prev_ll = estep.total_loglik;
            if (iter >= cfg.max_iters) break;
            params.phase_trans = m_step_phase(records, estep.per_flight, n_modes,
                                              cfg.n_phases, &report.flags);
            params.var_coeff = m_step_var(records, estep.per_flight, cfg.n_phases,
                                          cfg.ridge, params.var_coeff, &report.flags);
            ++iter;
        }
        report.iterations_run = iter;
        report.params = std::move(params);
        if (!have_best ||
            report.loglik_history.back() > best.loglik_history.back()) {
            best = std::move(report);
            have_best = true;
        }
    }

    for (int k = 0; k < cfg.n_phases; ++k) {
        double radius = ModelParams::spectral_radius(best.params.var_coeff[k]);
        if (radius >= 1.0)
            best.flags.push_back("phase " + std::to_string(k) +
                                 ": learned VAR spectral radius " +
                                 std::to_string(radius) + " >= 1");
    }
    return best;
}

inline nlohmann::json em_report_to_json(const EMReport& report) {
    nlohmann::json j;
    j["loglik_history"] = report.loglik_history;
    j["iterations_run"] = report.iterations_run;
    j["converged"] = report.converged;
    j["flags"] = report.flags;
    return j;
}

}  // namespace smsvar
