// Copyright 2026 the smsvar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "smsvar/common.hpp"

namespace smsvar {

// One time step of pilot-switch readings, kept as a '0'/'1' string so it can
// double as a dictionary key.
struct SwitchFrame {
    std::string bits;

    static SwitchFrame from_string(const std::string& s) {
        for (char c : s)
            if (c != '0' && c != '1')
                throw std::invalid_argument("switch values must be 0 or 1");
        return SwitchFrame{s};
    }

    template <typename Seq>
    static SwitchFrame from_values(const Seq& values) {
        std::string s;
        s.reserve(values.size());
        for (auto v : values) {
            if (v != 0 && v != 1)
                throw std::invalid_argument("switch values must be 0 or 1");
            s.push_back(v ? '1' : '0');
        }
        return SwitchFrame{s};
    }

    std::size_t width() const { return bits.size(); }
};

// Maps observed switch bit-patterns to dense mode ids. Real data exercises a
// tiny fraction of the 2^S possible patterns, so transition matrices are
// sized by what was actually seen plus one reserved slot for patterns that
// first appear at scoring time.
class ModeDictionary {
public:
    ModeDictionary() = default;

    explicit ModeDictionary(std::size_t width) : width_(width) {}

    // Training mode appends unseen patterns; a frozen dictionary maps them to
    // the reserved novel id instead.
    int encode(const SwitchFrame& frame, bool training) {
        if (width_ == 0 && patterns_.empty()) width_ = frame.width();
        if (frame.width() != width_)
            throw std::invalid_argument("switch frame width " +
                                        std::to_string(frame.width()) +
                                        " does not match dictionary width " +
                                        std::to_string(width_));
        auto it = index_.find(frame.bits);
        if (it != index_.end()) return it->second;
        if (!training) return novel_id();
        int id = static_cast<int>(patterns_.size());
        patterns_.push_back(frame.bits);
        index_.emplace(frame.bits, id);
        return id;
    }

    int lookup(const SwitchFrame& frame) const {
        auto it = index_.find(frame.bits);
        return it == index_.end() ? novel_id() : it->second;
    }

    const std::string& pattern(int id) const { return patterns_.at(id); }
    bool has_pattern(int id) const {
        return id >= 0 && id < static_cast<int>(patterns_.size());
    }

    std::size_t observed_count() const { return patterns_.size(); }
    int novel_id() const { return static_cast<int>(patterns_.size()); }
    // Mode axis length for model matrices: observed patterns + novel slot.
    int total_modes() const { return static_cast<int>(patterns_.size()) + 1; }
    std::size_t width() const { return width_; }

    const std::vector<std::string>& patterns() const { return patterns_; }

    static ModeDictionary from_patterns(std::size_t width,
                                        const std::vector<std::string>& patterns) {
        ModeDictionary dict(width);
        for (const auto& p : patterns) dict.encode(SwitchFrame::from_string(p), true);
        return dict;
    }

    // Every pattern over `width` switches, in binary counting order. Used by
    // synthetic generators where the ground truth covers the full space.
    static ModeDictionary full(std::size_t width) {
        ModeDictionary dict(width);
        std::size_t n = std::size_t{1} << width;
        for (std::size_t v = 0; v < n; ++v) {
            std::string bits(width, '0');
            for (std::size_t b = 0; b < width; ++b)
                if (v & (std::size_t{1} << (width - 1 - b))) bits[b] = '1';
            dict.encode(SwitchFrame{bits}, true);
        }
        return dict;
    }

private:
    std::size_t width_ = 0;
    std::vector<std::string> patterns_;
    std::unordered_map<std::string, int> index_;
};

// One flight, ready for inference: duration countdowns, dense mode ids and
// standardized sensor rows, all of length T.
struct FlightRecord {
    std::string flight_id;
    std::vector<int> durations;       // d_t >= 1
    std::vector<int> modes;           // dense ids from a ModeDictionary
    Eigen::MatrixXd sensors;          // T x n_sensors, standardized

    long length() const { return static_cast<long>(modes.size()); }
    int n_sensors() const { return static_cast<int>(sensors.cols()); }

    // Countdown semantics: while d > 1 the mode is pinned and d decrements.
    void validate() const {
        long T = length();
        if (static_cast<long>(durations.size()) != T ||
            sensors.rows() != T)
            throw std::invalid_argument("flight " + flight_id +
                                        ": d/m/y length mismatch");
        for (long t = 0; t < T; ++t) {
            if (durations[t] < 1)
                throw std::invalid_argument("flight " + flight_id +
                                            ": duration < 1 at t=" + std::to_string(t));
            if (t > 0 && durations[t - 1] > 1) {
                if (modes[t] != modes[t - 1] || durations[t] != durations[t - 1] - 1)
                    throw std::invalid_argument("flight " + flight_id +
                                                ": countdown violated at t=" +
                                                std::to_string(t));
            }
        }
    }
};

// In each maximal run of identical modes of length L the countdown reads
// L, L-1, ..., 1. The final run is counted to the flight's end.
inline std::vector<int> derive_durations(const std::vector<int>& modes) {
    if (modes.empty()) throw std::invalid_argument("empty mode sequence");
    std::vector<int> d(modes.size());
    std::size_t run_start = 0;
    for (std::size_t t = 1; t <= modes.size(); ++t) {
        if (t == modes.size() || modes[t] != modes[run_start]) {
            int len = static_cast<int>(t - run_start);
            for (std::size_t k = run_start; k < t; ++k)
                d[k] = len - static_cast<int>(k - run_start);
            run_start = t;
        }
    }
    return d;
}

// Per-channel z-scoring. Constant channels get unit scale so the transform
// stays invertible.
struct Standardizer {
    Eigen::VectorXd mean;
    Eigen::VectorXd scale;

    static Standardizer fit(const std::vector<Eigen::MatrixXd>& sensor_blocks) {
        if (sensor_blocks.empty())
            throw std::invalid_argument("cannot fit standardizer on empty data");
        Eigen::Index cols = sensor_blocks.front().cols();
        double n = 0;
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(cols);
        Eigen::VectorXd sumsq = Eigen::VectorXd::Zero(cols);
        for (const auto& block : sensor_blocks) {
            if (block.cols() != cols)
                throw std::invalid_argument("inconsistent sensor dimension");
            n += static_cast<double>(block.rows());
            sum += block.colwise().sum();
            sumsq += block.array().square().colwise().sum().matrix();
        }
        Standardizer s;
        s.mean = sum / std::max(n, 1.0);
        Eigen::VectorXd var =
            (sumsq / std::max(n, 1.0) - s.mean.array().square().matrix());
        s.scale = var.array().max(0.0).sqrt();
        for (Eigen::Index j = 0; j < s.scale.size(); ++j)
            if (s.scale[j] < 1e-12) s.scale[j] = 1.0;
        return s;
    }

    Eigen::MatrixXd apply(const Eigen::MatrixXd& raw) const {
        Eigen::MatrixXd out = raw;
        out.rowwise() -= mean.transpose();
        out.array().rowwise() /= scale.transpose().array();
        return out;
    }

    Eigen::MatrixXd invert(const Eigen::MatrixXd& standardized) const {
        Eigen::MatrixXd out = standardized;
        out.array().rowwise() *= scale.transpose().array();
        out.rowwise() += mean.transpose();
        return out;
    }

    int n_channels() const { return static_cast<int>(mean.size()); }
};

// Full parameter set of the switching model: mode transition matrix, per-mode
// Poisson duration rates, per-mode phase transition matrices and per-phase
// VAR coefficient matrices. Noise covariance is fixed to identity.
struct ModelParams {
    int n_modes = 0;    // includes the reserved novel-mode slot when learned
    int n_phases = 0;
    int n_sensors = 0;

    Eigen::MatrixXd mode_trans;               // n_modes x n_modes, zero diagonal
    Eigen::VectorXd duration_rate;            // n_modes, > 0
    std::vector<Eigen::MatrixXd> phase_trans; // n_modes of n_phases x n_phases
    std::vector<Eigen::MatrixXd> var_coeff;   // n_phases of n_sensors x n_sensors

    static double spectral_radius(const Eigen::MatrixXd& m) {
        return m.eigenvalues().cwiseAbs().maxCoeff();
    }

    void validate(double row_tol = 1e-12) const {
        if (mode_trans.rows() != n_modes || mode_trans.cols() != n_modes)
            throw std::invalid_argument("mode transition matrix shape mismatch");
        if (duration_rate.size() != n_modes)
            throw std::invalid_argument("duration rate length mismatch");
        if (static_cast<int>(phase_trans.size()) != n_modes)
            throw std::invalid_argument("phase transition stack size mismatch");
        if (static_cast<int>(var_coeff.size()) != n_phases)
            throw std::invalid_argument("VAR stack size mismatch");
        for (int i = 0; i < n_modes; ++i) {
            if (mode_trans(i, i) != 0.0)
                throw std::invalid_argument("mode self-transitions must be zero");
            if (std::abs(mode_trans.row(i).sum() - 1.0) > row_tol)
                throw std::invalid_argument("mode transition row " +
                                            std::to_string(i) + " not stochastic");
            if (!(duration_rate[i] > 0.0))
                throw std::invalid_argument("duration rate must be positive");
            if (phase_trans[i].rows() != n_phases || phase_trans[i].cols() != n_phases)
                throw std::invalid_argument("phase transition shape mismatch");
            for (int r = 0; r < n_phases; ++r)
                if (std::abs(phase_trans[i].row(r).sum() - 1.0) > row_tol)
                    throw std::invalid_argument("phase transition row not stochastic");
        }
        for (const auto& a : var_coeff)
            if (a.rows() != n_sensors || a.cols() != n_sensors)
                throw std::invalid_argument("VAR coefficient shape mismatch");
    }
};

// Ingestion-level view of a flight: exactly what the files carry, no
// standardization or mode encoding applied.
struct RawFlight {
    std::string flight_id;
    std::vector<std::string> switches;  // per-step bit strings
    Eigen::MatrixXd sensors;            // T x n_sensors, raw units

    long length() const { return static_cast<long>(switches.size()); }
};

struct PreparedDataset {
    std::vector<FlightRecord> records;
    ModeDictionary dictionary;
    Standardizer standardizer;
};

}  // namespace smsvar
