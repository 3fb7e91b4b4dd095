// Copyright 2026 the smsvar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <sstream>
#include <string>
#include <vector>

#include "smsvar/inference.hpp"

namespace smsvar {

// Posterior entries are floored here so a badly surprised model yields a
// large but finite divergence.
inline constexpr double kKlFloor = 1e-12;

enum class ScoreMethod { kKl, kLl, kVar, kSmm, kMkad };

inline const char* to_string(ScoreMethod m) {
    switch (m) {
        case ScoreMethod::kKl: return "kl";
        case ScoreMethod::kLl: return "ll";
        case ScoreMethod::kVar: return "var";
        case ScoreMethod::kSmm: return "smm";
        case ScoreMethod::kMkad: return "mkad";
    }
    return "?";
}

inline ScoreMethod score_method_from_string(const std::string& s) {
    if (s == "kl") return ScoreMethod::kKl;
    if (s == "ll") return ScoreMethod::kLl;
    if (s == "var") return ScoreMethod::kVar;
    if (s == "smm") return ScoreMethod::kSmm;
    if (s == "mkad") return ScoreMethod::kMkad;
    throw std::invalid_argument("unknown score method: " + s);
}

// Per-flight score: the per-step series (empty for kernel methods) and its
// scalar summary.
struct ScoreSeries {
    std::string flight_id;
    ScoreMethod method = ScoreMethod::kKl;
    std::vector<double> values;
    double summary = 0.0;
};

inline double kl_divergence(const PhaseDistribution& p, const PhaseDistribution& q) {
    if (p.size() != q.size())
        throw std::invalid_argument("KL divergence: dimension mismatch");
    double d = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        d += p[i] * std::log(p[i] / std::max(q[i], kKlFloor));
    }
    return std::max(d, 0.0);
}

// Mean squared deviation from the mean. The reference formula is written as
// an STD but evaluates the square; the square root is monotone, so rankings
// are identical either way.
inline double variance_summary(const std::vector<double>& values) {
    if (values.empty()) return 0.0;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double acc = 0.0;
    for (double v : values) acc += (v - mean) * (v - mean);
    return acc / static_cast<double>(values.size());
}

// Divergence between the one-step-ahead predicted and the filtered phase
// distribution at every step, summarized by the variance functional.
inline ScoreSeries score_kl(const FilterTrace& trace, const std::string& flight_id) {
    ScoreSeries s;
    s.flight_id = flight_id;
    s.method = ScoreMethod::kKl;
    s.values.reserve(trace.n_steps());
    for (long t = 0; t < trace.n_steps(); ++t)
        s.values.push_back(kl_divergence(trace.priors.row(t).transpose(),
                                         trace.posteriors.row(t).transpose()));
    s.summary = variance_summary(s.values);
    return s;
}

inline ScoreSeries score_ll(const FilterTrace& trace, const std::string& flight_id) {
    ScoreSeries s;
    s.flight_id = flight_id;
    s.method = ScoreMethod::kLl;
    s.values.assign(trace.step_loglik.data(),
                    trace.step_loglik.data() + trace.step_loglik.size());
    s.summary = variance_summary(s.values);
    return s;
}

// Flight ids ordered by decreasing summary; ties break by id so rankings are
// deterministic.
inline std::vector<std::string> rank_flights(const std::vector<ScoreSeries>& scores,
                                             std::size_t top_k) {
    for (const auto& s : scores)
        if (s.method != scores.front().method)
            throw std::invalid_argument("rank_flights: mixed score methods");
    std::vector<const ScoreSeries*> order;
    order.reserve(scores.size());
    for (const auto& s : scores) order.push_back(&s);
    std::sort(order.begin(), order.end(),
              [](const ScoreSeries* a, const ScoreSeries* b) {
                  if (a->summary != b->summary) return a->summary > b->summary;
                  return a->flight_id < b->flight_id;
              });
    std::vector<std::string> ids;
    for (const auto* s : order) {
        if (ids.size() >= top_k) break;
        ids.push_back(s->flight_id);
    }
    return ids;
}

// Incremental scoring of a flight from (mode, sensors) frames alone, as they
// arrive. Countdown values are not observable online, but the phase update
// only needs to know whether the countdown expired, which is exactly whether
// the mode changed; D_t is therefore emitted one frame after the data.
// Step log-likelihoods need the completed run length for the duration term,
// so they finalize at run boundaries, recomputed in the same operation order
// the batch filter uses.
class OnlineScorer {
public:
    struct KlStep {
        long t;  // 1-based frame index the transition lands on
        double value;
    };
    struct LlStep {
        long t;
        double value;
    };
    struct Emitted {
        std::optional<KlStep> kl;
        std::vector<LlStep> ll;
    };

    explicit OnlineScorer(const ModelParams& params)
        : params_(&params),
          log_posterior_(params.n_phases,
                         -std::log(static_cast<double>(params.n_phases))) {}

    Emitted feed(int mode, const Eigen::VectorXd& sensors) {
        Emitted emitted;
        ++t_;
        if (t_ == 1) {
            prev_mode_ = mode;
            prev_sensors_ = sensors;
            run_start_ = 1;
            return emitted;
        }
        bool expiry = mode != prev_mode_;
        PhaseDistribution prior = predict_prior(detail::to_linear(log_posterior_),
                                                expiry ? 1 : 2, prev_mode_, *params_);
        detail::PhaseUpdateLog upd = detail::phase_update_log(
            log_posterior_, expiry, mode, prev_sensors_, sensors, *params_);
        kl_values_.push_back(kl_divergence(prior, detail::to_linear(upd.log_posterior)));
        emitted.kl = KlStep{t_, kl_values_.back()};

        if (expiry) {
            // Run [run_start_, t_-1] just completed; the step that entered it
            // can now take its duration term.
            close_run(t_ - 1);
            PendingLl pending;
            pending.t = t_;
            pending.mode_lp = std::log(params_->mode_trans(prev_mode_, mode));
            pending.lognorm = upd.lognorm;
            pending.run_mode = mode;
            pending.finalized = false;
            pending_ll_.push_back(pending);
            run_start_ = t_;
        } else {
            PendingLl pending;
            pending.t = t_;
            pending.mode_lp = 0.0;
            pending.lognorm = upd.lognorm;
            pending.run_mode = mode;
            pending.finalized = true;  // countdown duration term is log 1
            pending.value = 0.0 + 0.0 + pending.lognorm;
            check_step(pending.value, pending.t);
            pending_ll_.push_back(pending);
        }
        flush_ready_ll(&emitted);

        log_posterior_ = std::move(upd.log_posterior);
        prev_mode_ = mode;
        prev_sensors_ = sensors;
        return emitted;
    }

    // Close the flight: the final run ends at the last frame.
    Emitted finish() {
        Emitted emitted;
        if (t_ >= 1) close_run(t_);
        flush_ready_ll(&emitted);
        return emitted;
    }

    const std::vector<double>& kl_values() const { return kl_values_; }
    const std::vector<double>& ll_values() const { return ll_values_; }

    ScoreSeries kl_series(const std::string& flight_id) const {
        ScoreSeries s;
        s.flight_id = flight_id;
        s.method = ScoreMethod::kKl;
        s.values = kl_values_;
        s.summary = variance_summary(s.values);
        return s;
    }

    ScoreSeries ll_series(const std::string& flight_id) const {
        ScoreSeries s;
        s.flight_id = flight_id;
        s.method = ScoreMethod::kLl;
        s.values = ll_values_;
        s.summary = variance_summary(s.values);
        return s;
    }

private:
    struct PendingLl {
        long t;
        double mode_lp;
        double lognorm;
        int run_mode;
        bool finalized;
        double value = 0.0;
    };

    void check_step(double step, long t) const {
        if (!(step > detail::kLogEvidenceFloor)) throw DegenerateEvidenceError(t);
    }

    // The run [run_start_, run_end] is complete: the step that entered it at
    // run_start_ (if any transition did) gets its shifted-Poisson term.
    void close_run(long run_end) {
        long length = run_end - run_start_ + 1;
        for (auto& p : pending_ll_) {
            if (p.finalized || p.t != run_start_) continue;
            double dur_lp = shifted_poisson_logpmf(
                static_cast<int>(length), params_->duration_rate[p.run_mode]);
            p.value = p.mode_lp + dur_lp + p.lognorm;
            check_step(p.value, p.t);
            p.finalized = true;
        }
    }

    void flush_ready_ll(Emitted* emitted) {
        while (next_ll_ < pending_ll_.size() && pending_ll_[next_ll_].finalized) {
            const auto& p = pending_ll_[next_ll_];
            ll_values_.push_back(p.value);
            emitted->ll.push_back(LlStep{p.t, p.value});
            ++next_ll_;
        }
    }

    const ModelParams* params_;
    std::vector<double> log_posterior_;
    long t_ = 0;
    int prev_mode_ = 0;
    Eigen::VectorXd prev_sensors_;
    long run_start_ = 0;
    std::vector<double> kl_values_;
    std::vector<double> ll_values_;
    std::vector<PendingLl> pending_ll_;
    std::size_t next_ll_ = 0;
};

inline std::string scores_to_csv(const std::vector<ScoreSeries>& scores) {
    std::ostringstream out;
    out << "flight_id,method,summary,n_steps\n";
    for (const auto& s : scores)
        out << s.flight_id << ',' << to_string(s.method) << ','
            << format_double(s.summary) << ',' << s.values.size() << "\n";
    return out.str();
}

// Per-step series for plotting; steps start at t = 2 (the first frame is
// conditioning context).
inline std::string series_to_csv(const ScoreSeries& s) {
    std::ostringstream out;
    out << "t,value\n";
    for (std::size_t i = 0; i < s.values.size(); ++i)
        out << (i + 2) << ',' << format_double(s.values[i]) << "\n";
    return out.str();
}

}  // namespace smsvar
