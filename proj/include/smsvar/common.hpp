// Copyright 2026 the smsvar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace smsvar {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Normalizers below this are treated as degenerate evidence rather than
// silently producing -inf scores.
inline constexpr double kEvidenceFloor = 1e-300;

// Raised when a file's content fails schema validation; carries the flight
// and time index so the offending row can be located.
class IngestError : public std::runtime_error {
public:
    IngestError(std::string flight_id, long t, const std::string& what)
        : std::runtime_error("ingest error [flight=" + flight_id +
                             ", t=" + std::to_string(t) + "]: " + what),
          flight_id_(std::move(flight_id)),
          t_(t) {}
    const std::string& flight_id() const { return flight_id_; }
    long t() const { return t_; }

private:
    std::string flight_id_;
    long t_;
};

// Raised when a filtering step has (numerically) zero evidence.
class DegenerateEvidenceError : public std::runtime_error {
public:
    explicit DegenerateEvidenceError(long t)
        : std::runtime_error("degenerate evidence at t=" + std::to_string(t)),
          t_(t) {}
    long t() const { return t_; }

private:
    long t_;
};

inline double log_sum_exp(const double* x, std::size_t n) {
    double m = kNegInf;
    for (std::size_t i = 0; i < n; ++i) m = std::max(m, x[i]);
    if (m == kNegInf) return kNegInf;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(x[i] - m);
    return m + std::log(s);
}

inline double log_sum_exp(const std::vector<double>& x) {
    return log_sum_exp(x.data(), x.size());
}

// SplitMix64 step; used to derive independent per-item seeds from one base
// seed so parallel sampling stays reproducible regardless of scheduling.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t s = base ^ (0x2545f4914f6cdd1dULL * (stream + 1));
    return splitmix64(s);
}

// Run fn(i) for i in [0, n). Results must be written to preallocated,
// index-disjoint slots; the partition over threads is static so output is
// independent of scheduling.
inline void parallel_for(std::size_t n, unsigned jobs,
                         const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    if (jobs <= 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    unsigned workers = std::min<std::size_t>(jobs, n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::exception_ptr error;
    std::mutex error_mutex;
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            try {
                for (std::size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

// Standard normal CDF and its inverse. The inverse is a bracketed Newton
// iteration on erf, accurate to ~1e-15; good enough for alphabet breakpoints.
inline double std_normal_cdf(double x) {
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

inline double std_normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0))
        throw std::invalid_argument("quantile requires p in (0,1)");
    double lo = -10.0, hi = 10.0;
    double x = 0.0;
    for (int it = 0; it < 200; ++it) {
        double f = std_normal_cdf(x) - p;
        if (f > 0)
            hi = x;
        else
            lo = x;
        double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
        double step = pdf > 0 ? f / pdf : 0.0;
        double next = x - step;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (std::abs(next - x) < 1e-16) return next;
        x = next;
    }
    return x;
}

// Write-then-rename so readers never observe a half-written file.
inline void write_file_atomic(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open for write: " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    fs::rename(tmp, target);
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    return std::string(std::istreambuf_iterator<char>(in),
                       std::istreambuf_iterator<char>());
}

// Shortest-exact decimal form: 17 significant digits round-trip any IEEE
// double through strtod.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace smsvar
