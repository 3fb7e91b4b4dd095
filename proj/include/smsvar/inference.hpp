// Copyright 2026 the smsvar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <sstream>
#include <vector>

#include "smsvar/model.hpp"

namespace smsvar {

// Probability vector over the hidden phases at one time step.
using PhaseDistribution = Eigen::VectorXd;

inline void check_phase_distribution(const PhaseDistribution& p, double tol = 1e-10) {
    if (p.minCoeff() < 0.0 || std::abs(p.sum() - 1.0) > tol)
        throw std::invalid_argument("phase distribution not normalized");
}

// Everything the forward pass produces for one flight. Rows of `priors` and
// `posteriors` correspond to t = 2..T; the first frame is conditioning
// context, so |priors| = |posteriors| = T-1. The filter state itself lives in
// log scale (log_posteriors) so that phases suppressed by long stretches of
// evidence keep finite log-mass and can recover; the linear posteriors are
// the exponentiated view of the same rows.
struct FilterTrace {
    Eigen::MatrixXd priors;                // (T-1) x n_phases, one-step-ahead
    Eigen::MatrixXd posteriors;            // (T-1) x n_phases, filtered
    Eigen::MatrixXd log_posteriors;        // (T-1) x n_phases, normalized logs
    Eigen::VectorXd step_loglik;           // log l_t, full observation likelihood
    Eigen::VectorXd phase_evidence_lognorm; // posterior normalizer, used by smoothing
    double total_loglik = 0.0;

    long n_steps() const { return step_loglik.size(); }
};

namespace detail {

inline constexpr double kLogEvidenceFloor = -690.77552789821368;  // log(1e-300)

// log-space x' = x^T M for a stochastic matrix M with possible zero entries.
inline void log_transition_apply(const std::vector<double>& log_in,
                                 const Eigen::MatrixXd& trans,
                                 std::vector<double>& log_out,
                                 std::vector<double>& scratch) {
    std::size_t n = log_in.size();
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i)
            scratch[i] = log_in[i] + std::log(trans(static_cast<Eigen::Index>(i),
                                                    static_cast<Eigen::Index>(j)));
        log_out[j] = log_sum_exp(scratch.data(), n);
    }
}

}  // namespace detail

// One-step-ahead phase prediction: while the countdown runs the phase is
// pinned, so the belief is unchanged; on expiry the posterior is pushed
// through the mixture of per-mode phase transitions weighted by the mode
// transition row (the successor mode is not yet observed at prediction time).
inline PhaseDistribution predict_prior(const PhaseDistribution& posterior,
                                       int d_prev, int mode_prev,
                                       const ModelParams& params) {
    if (d_prev > 1) return posterior;
    Eigen::MatrixXd mixed = Eigen::MatrixXd::Zero(params.n_phases, params.n_phases);
    for (int m = 0; m < params.n_modes; ++m) {
        double w = params.mode_trans(mode_prev, m);
        if (w > 0.0) mixed += w * params.phase_trans[m];
    }
    PhaseDistribution prior = mixed.transpose() * posterior;
    double s = prior.sum();
    if (s > 0.0) prior /= s;
    return prior;
}

struct UpdateResult {
    PhaseDistribution posterior;
    double log_step_lik = 0.0;          // log p(d,m,y at t+1 | past)
    double phase_evidence_lognorm = 0.0; // normalizer of the phase update alone
};

namespace detail {

struct PhaseUpdateLog {
    std::vector<double> log_posterior;  // normalized: logsumexp == 0
    double lognorm;
};

// The phase part of the filtered update in log scale: transition
// (observed-mode mixing on expiry, identity otherwise) followed by emission
// reweighting. The mode and duration conditionals are scalars with respect
// to the phase and are handled by the callers.
inline PhaseUpdateLog phase_update_log(const std::vector<double>& log_post_prev,
                                       bool expiry, int mode,
                                       const Eigen::VectorXd& y_prev,
                                       const Eigen::VectorXd& y,
                                       const ModelParams& params) {
    int n = params.n_phases;
    std::vector<double> mixed(n), scratch(n);
    if (!expiry) {
        mixed = log_post_prev;
    } else {
        log_transition_apply(log_post_prev, params.phase_trans[mode], mixed, scratch);
    }
    for (int j = 0; j < n; ++j)
        mixed[j] += emission_logprob(y, y_prev, j, params);
    PhaseUpdateLog out;
    out.lognorm = log_sum_exp(mixed);
    out.log_posterior.resize(n);
    for (int j = 0; j < n; ++j) out.log_posterior[j] = mixed[j] - out.lognorm;
    return out;
}

inline PhaseDistribution to_linear(const std::vector<double>& log_probs) {
    PhaseDistribution p(static_cast<Eigen::Index>(log_probs.size()));
    for (std::size_t i = 0; i < log_probs.size(); ++i) p[i] = std::exp(log_probs[i]);
    double s = p.sum();
    if (s > 0.0) p /= s;
    return p;
}

}  // namespace detail

// Filtered update once (d, m, y) at t+1 are observed: propagate the previous
// posterior through the observed-mode phase transition, reweight by the
// emission and normalize.
inline UpdateResult update_posterior(const PhaseDistribution& posterior_prev,
                                     int d_prev, int mode_prev,
                                     const Eigen::VectorXd& y_prev,
                                     int d, int mode, const Eigen::VectorXd& y,
                                     const ModelParams& params, long t_for_error = -1) {
    std::vector<double> log_post(posterior_prev.size());
    for (Eigen::Index i = 0; i < posterior_prev.size(); ++i)
        log_post[i] = std::log(posterior_prev[i]);
    detail::PhaseUpdateLog upd =
        detail::phase_update_log(log_post, d_prev == 1, mode, y_prev, y, params);
    double mode_lp = mode_logprob(mode, mode_prev, d_prev, params);
    double dur_lp = duration_logprob(d, mode, d_prev, params);
    double step = mode_lp + dur_lp + upd.lognorm;
    if (!(step > detail::kLogEvidenceFloor))
        throw DegenerateEvidenceError(t_for_error);
    UpdateResult out;
    out.posterior = detail::to_linear(upd.log_posterior);
    out.log_step_lik = step;
    out.phase_evidence_lognorm = upd.lognorm;
    return out;
}

// Incremental filter over one flight. The first frame is absorbed as
// conditioning context; every later frame yields the prior/posterior pair
// and the step likelihood. The belief is carried in log scale between steps;
// batch filtering goes through this same path.
class StreamingFilter {
public:
    struct Step {
        PhaseDistribution prior;
        PhaseDistribution posterior;
        std::vector<double> log_posterior;  // normalized logs of `posterior`
        double log_step_lik;
        double phase_evidence_lognorm;
    };

    explicit StreamingFilter(const ModelParams& params)
        : params_(&params),
          log_posterior_(params.n_phases,
                         -std::log(static_cast<double>(params.n_phases))) {}

    // Feed the frame at the next time step; returns nothing for the first.
    std::optional<Step> push(int duration, int mode, const Eigen::VectorXd& sensors) {
        ++t_;
        if (t_ == 1) {
            prev_duration_ = duration;
            prev_mode_ = mode;
            prev_sensors_ = sensors;
            return std::nullopt;
        }
        Step step;
        step.prior = predict_prior(detail::to_linear(log_posterior_), prev_duration_,
                                   prev_mode_, *params_);
        auto upd = detail::phase_update_log(log_posterior_, prev_duration_ == 1,
                                            mode, prev_sensors_, sensors, *params_);
        double mode_lp = mode_logprob(mode, prev_mode_, prev_duration_, *params_);
        double dur_lp = duration_logprob(duration, mode, prev_duration_, *params_);
        step.log_step_lik = mode_lp + dur_lp + upd.lognorm;
        if (!(step.log_step_lik > detail::kLogEvidenceFloor))
            throw DegenerateEvidenceError(t_);
        step.posterior = detail::to_linear(upd.log_posterior);
        step.log_posterior = upd.log_posterior;
        step.phase_evidence_lognorm = upd.lognorm;
        log_posterior_ = std::move(upd.log_posterior);
        prev_duration_ = duration;
        prev_mode_ = mode;
        prev_sensors_ = sensors;
        return step;
    }

    long steps_seen() const { return t_; }
    PhaseDistribution posterior() const { return detail::to_linear(log_posterior_); }

private:
    const ModelParams* params_;
    std::vector<double> log_posterior_;
    long t_ = 0;
    int prev_duration_ = 0;
    int prev_mode_ = 0;
    Eigen::VectorXd prev_sensors_;
};

inline FilterTrace forward_filter(const FlightRecord& flight, const ModelParams& params) {
    flight.validate();
    long T = flight.length();
    FilterTrace trace;
    long steps = std::max<long>(T - 1, 0);
    trace.priors.resize(steps, params.n_phases);
    trace.posteriors.resize(steps, params.n_phases);
    trace.log_posteriors.resize(steps, params.n_phases);
    trace.step_loglik.resize(steps);
    trace.phase_evidence_lognorm.resize(steps);
    StreamingFilter filter(params);
    for (long t = 0; t < T; ++t) {
        auto step = filter.push(flight.durations[t], flight.modes[t],
                                flight.sensors.row(t).transpose());
        if (!step) continue;
        trace.priors.row(t - 1) = step->prior.transpose();
        trace.posteriors.row(t - 1) = step->posterior.transpose();
        for (int j = 0; j < params.n_phases; ++j)
            trace.log_posteriors(t - 1, j) = step->log_posterior[j];
        trace.step_loglik[t - 1] = step->log_step_lik;
        trace.phase_evidence_lognorm[t - 1] = step->phase_evidence_lognorm;
    }
    trace.total_loglik = trace.step_loglik.sum();
    return trace;
}

// Smoothed singleton marginals p(x_t | F) for t = 1..T and pairwise joints
// p(x_t, x_{t+1} | F) for t = 1..T-1.
struct SmoothResult {
    Eigen::MatrixXd marginals;             // T x n_phases
    std::vector<Eigen::MatrixXd> pairwise; // T-1 matrices, n_phases x n_phases
};

inline SmoothResult backward_smooth(const FlightRecord& flight,
                                    const ModelParams& params,
                                    const FilterTrace& trace) {
    long T = flight.length();
    int n = params.n_phases;
    SmoothResult out;
    out.marginals.resize(T, n);
    if (T == 0) return out;
    out.pairwise.reserve(std::max<long>(T - 1, 0));

    // Filtered log-marginals, with the uniform t=1 belief restored at row 0.
    Eigen::MatrixXd log_filtered(T, n);
    log_filtered.row(0).setConstant(-std::log(static_cast<double>(n)));
    for (long t = 1; t < T; ++t) log_filtered.row(t) = trace.log_posteriors.row(t - 1);

    // Scaled backward messages, log-space; scaled by the same per-step
    // normalizers the forward pass used so products stay O(1).
    Eigen::MatrixXd log_beta(T, n);
    log_beta.row(T - 1).setZero();
    std::vector<double> terms(n);
    for (long t = T - 2; t >= 0; --t) {
        bool expiry = flight.durations[t] == 1;
        const Eigen::MatrixXd& trans = params.phase_trans[flight.modes[t + 1]];
        std::vector<double> em(n);
        for (int j = 0; j < n; ++j)
            em[j] = emission_logprob(flight.sensors.row(t + 1).transpose(),
                                     flight.sensors.row(t).transpose(), j, params);
        for (int i = 0; i < n; ++i) {
            if (expiry) {
                for (int j = 0; j < n; ++j)
                    terms[j] = std::log(trans(i, j)) + em[j] + log_beta(t + 1, j);
                log_beta(t, i) = log_sum_exp(terms) - trace.phase_evidence_lognorm[t];
            } else {
                log_beta(t, i) = em[i] + log_beta(t + 1, i) -
                                 trace.phase_evidence_lognorm[t];
            }
        }
    }

    std::vector<double> lg(n);
    for (long t = 0; t < T; ++t) {
        for (int i = 0; i < n; ++i) lg[i] = log_filtered(t, i) + log_beta(t, i);
        double norm = log_sum_exp(lg);
        if (norm == kNegInf || std::isnan(norm)) throw DegenerateEvidenceError(t + 1);
        for (int i = 0; i < n; ++i) out.marginals(t, i) = std::exp(lg[i] - norm);
        out.marginals.row(t) /= out.marginals.row(t).sum();
    }

    std::vector<double> lxi(n * n);
    for (long t = 0; t + 1 < T; ++t) {
        bool expiry = flight.durations[t] == 1;
        const Eigen::MatrixXd& trans = params.phase_trans[flight.modes[t + 1]];
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                double log_trans = expiry ? std::log(trans(i, j))
                                          : (i == j ? 0.0 : kNegInf);
                double em = emission_logprob(flight.sensors.row(t + 1).transpose(),
                                             flight.sensors.row(t).transpose(), j,
                                             params);
                lxi[i * n + j] = log_filtered(t, i) + log_trans + em +
                                 log_beta(t + 1, j) - trace.phase_evidence_lognorm[t];
            }
        }
        double norm = log_sum_exp(lxi);
        if (norm == kNegInf || std::isnan(norm)) throw DegenerateEvidenceError(t + 1);
        Eigen::MatrixXd xi(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) xi(i, j) = std::exp(lxi[i * n + j] - norm);
        xi /= xi.sum();
        out.pairwise.push_back(xi);
    }
    return out;
}

// Most probable hidden phase path given the whole flight; ties break toward
// the lowest phase id.
inline std::vector<int> viterbi_phases(const FlightRecord& flight,
                                       const ModelParams& params) {
    flight.validate();
    long T = flight.length();
    int n = params.n_phases;
    if (T == 0) return {};
    Eigen::MatrixXd delta(T, n);
    Eigen::MatrixXi back(T, n);
    delta.row(0).setConstant(-std::log(static_cast<double>(n)));
    back.row(0).setConstant(0);
    for (long t = 1; t < T; ++t) {
        bool expiry = flight.durations[t - 1] == 1;
        const Eigen::MatrixXd& trans = params.phase_trans[flight.modes[t]];
        double scalars =
            mode_logprob(flight.modes[t], flight.modes[t - 1],
                         flight.durations[t - 1], params) +
            duration_logprob(flight.durations[t], flight.modes[t],
                             flight.durations[t - 1], params);
        for (int j = 0; j < n; ++j) {
            double best = kNegInf;
            int arg = 0;
            for (int i = 0; i < n; ++i) {
                double log_trans = expiry ? std::log(trans(i, j))
                                          : (i == j ? 0.0 : kNegInf);
                double cand = delta(t - 1, i) + log_trans;
                if (cand > best) {
                    best = cand;
                    arg = i;
                }
            }
            double em = emission_logprob(flight.sensors.row(t).transpose(),
                                         flight.sensors.row(t - 1).transpose(), j,
                                         params);
            delta(t, j) = best + em + scalars;
            back(t, j) = arg;
        }
    }
    std::vector<int> path(T);
    int best_j = 0;
    for (int j = 1; j < n; ++j)
        if (delta(T - 1, j) > delta(T - 1, best_j)) best_j = j;
    path[T - 1] = best_j;
    for (long t = T - 1; t > 0; --t) path[t - 1] = back(t, path[t]);
    return path;
}

// CSV export of a trace for plotting: t, loglik, prior_1..n, post_1..n.
inline std::string trace_to_csv(const FilterTrace& trace) {
    std::ostringstream out;
    int n = static_cast<int>(trace.priors.cols());
    out << "t,loglik";
    for (int j = 1; j <= n; ++j) out << ",prior_" << j;
    for (int j = 1; j <= n; ++j) out << ",post_" << j;
    out << "\n";
    for (long t = 0; t < trace.n_steps(); ++t) {
        out << (t + 2) << ',' << format_double(trace.step_loglik[t]);
        for (int j = 0; j < n; ++j) out << ',' << format_double(trace.priors(t, j));
        for (int j = 0; j < n; ++j) out << ',' << format_double(trace.posteriors(t, j));
        out << "\n";
    }
    return out.str();
}

}  // namespace smsvar
