// Copyright 2026 the smsvar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <optional>
#include <random>

#include "smsvar/types.hpp"

namespace smsvar {

// Conditional log-probabilities of the four per-step distributions. Each one
// has a deterministic countdown branch (d_prev > 1) and a stochastic branch
// taken when the countdown expires (d_prev == 1). All values are natural-log.

namespace detail {
inline void check_mode_id(int m, const ModelParams& p) {
    if (m < 0 || m >= p.n_modes) throw std::out_of_range("mode id out of range");
}
inline void check_phase_id(int x, const ModelParams& p) {
    if (x < 0 || x >= p.n_phases) throw std::out_of_range("phase id out of range");
}
}  // namespace detail

inline double mode_logprob(int mode, int mode_prev, int d_prev,
                           const ModelParams& params) {
    detail::check_mode_id(mode, params);
    detail::check_mode_id(mode_prev, params);
    if (d_prev < 1) throw std::invalid_argument("duration must be >= 1");
    if (d_prev > 1) return mode == mode_prev ? 0.0 : kNegInf;
    return std::log(params.mode_trans(mode_prev, mode));
}

// Durations are 1 + Poisson(lambda): P(d = k) = lambda^(k-1) e^-lambda / (k-1)!
// for k >= 1, so a freshly sampled countdown is always legal.
inline double shifted_poisson_logpmf(int k, double lambda) {
    if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
    if (k < 1) return kNegInf;
    return (k - 1) * std::log(lambda) - lambda - std::lgamma(static_cast<double>(k));
}

inline double duration_logprob(int d, int mode, int d_prev,
                               const ModelParams& params) {
    detail::check_mode_id(mode, params);
    if (d < 1 || d_prev < 1) throw std::invalid_argument("duration must be >= 1");
    if (d_prev > 1) return d == d_prev - 1 ? 0.0 : kNegInf;
    return shifted_poisson_logpmf(d, params.duration_rate[mode]);
}

inline double phase_logprob(int phase, int phase_prev, int mode, int d_prev,
                            const ModelParams& params) {
    detail::check_phase_id(phase, params);
    detail::check_phase_id(phase_prev, params);
    detail::check_mode_id(mode, params);
    if (d_prev < 1) throw std::invalid_argument("duration must be >= 1");
    if (d_prev > 1) return phase == phase_prev ? 0.0 : kNegInf;
    return std::log(params.phase_trans[mode](phase_prev, phase));
}

// Gaussian VAR emission with identity covariance:
//   log p(y | y_prev, x) = -(n/2) log(2 pi) - 0.5 * ||y - A_x y_prev||^2
inline double emission_logprob(const Eigen::VectorXd& y, const Eigen::VectorXd& y_prev,
                               int phase, const ModelParams& params) {
    detail::check_phase_id(phase, params);
    if (y.size() != params.n_sensors || y_prev.size() != params.n_sensors)
        throw std::invalid_argument("sensor dimension mismatch");
    double sq = (y - params.var_coeff[phase] * y_prev).squaredNorm();
    return -0.5 * params.n_sensors * std::log(2.0 * M_PI) - 0.5 * sq;
}

// Starting values for ancestral sampling; unset fields are drawn from the
// least-commitment defaults (uniform mode and phase, fresh duration,
// standard-normal sensors).
struct InitialState {
    std::optional<int> mode;
    std::optional<int> duration;
    std::optional<int> phase;
    std::optional<Eigen::VectorXd> sensors;
};

namespace detail {

inline int sample_categorical(const Eigen::VectorXd& weights, std::mt19937_64& rng) {
    double total = weights.sum();
    if (!(total > 0.0)) throw std::runtime_error("cannot sample from zero-mass row");
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double u = unif(rng) * total;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
        acc += weights[i];
        if (u <= acc) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size() - 1);
}

inline int sample_shifted_poisson(double lambda, std::mt19937_64& rng) {
    std::poisson_distribution<int> pois(lambda);
    return 1 + pois(rng);
}

}  // namespace detail

// Hidden phase path alongside the observables, for generators that need the
// ground truth.
struct SampledFlight {
    FlightRecord record;
    std::vector<int> phases;
};

// Ancestral sampling through the model's DBN. The countdown branches are
// deterministic; fresh modes, durations and phases are drawn only on expiry.
inline SampledFlight sample_flight_with_phases(const ModelParams& params, long T,
                                               const InitialState& init,
                                               std::uint64_t seed,
                                               const std::string& flight_id = "sampled") {
    params.validate();
    std::mt19937_64 rng(seed);
    SampledFlight out;
    out.record.flight_id = flight_id;
    if (T <= 0) {
        out.record.sensors.resize(0, params.n_sensors);
        return out;
    }
    std::uniform_int_distribution<int> unif_mode(0, params.n_modes - 1);
    std::uniform_int_distribution<int> unif_phase(0, params.n_phases - 1);
    std::normal_distribution<double> gauss(0.0, 1.0);

    int m = init.mode ? *init.mode : unif_mode(rng);
    detail::check_mode_id(m, params);
    int d = init.duration
                ? *init.duration
                : detail::sample_shifted_poisson(params.duration_rate[m], rng);
    int x = init.phase ? *init.phase : unif_phase(rng);
    detail::check_phase_id(x, params);
    Eigen::VectorXd y(params.n_sensors);
    if (init.sensors) {
        y = *init.sensors;
    } else {
        for (int j = 0; j < params.n_sensors; ++j) y[j] = gauss(rng);
    }

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
            m = detail::sample_categorical(params.mode_trans.row(m).transpose(), rng);
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
    out.record.validate();
    return out;
}

inline FlightRecord sample_flight(const ModelParams& params, long T,
                                  const InitialState& init, std::uint64_t seed,
                                  const std::string& flight_id = "sampled") {
    return sample_flight_with_phases(params, T, init, seed, flight_id).record;
}

}  // namespace smsvar
