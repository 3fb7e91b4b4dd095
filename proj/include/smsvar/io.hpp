// Copyright 2026 the smsvar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "smsvar/types.hpp"

namespace smsvar {

inline constexpr int kModelFormatVersion = 1;

// Expected data dimensions; unset fields are inferred from the first row.
struct DataSchema {
    std::optional<int> n_switches;
    std::optional<int> n_sensors;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

inline double parse_sensor(const std::string& s, const std::string& flight_id, long t) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        if (std::isnan(v))
            throw IngestError(flight_id, t, "NaN sensor value");
        return v;
    } catch (const IngestError&) {
        throw;
    } catch (const std::exception&) {
        throw IngestError(flight_id, t, "bad sensor value '" + s + "'");
    }
}

inline void check_switches(const std::string& bits, const std::string& flight_id, long t) {
    for (char c : bits)
        if (c != '0' && c != '1')
            throw IngestError(flight_id, t, "non-binary switch value '" + bits + "'");
}

struct RowBuffer {
    std::string flight_id;
    long last_t = 0;
    std::vector<std::string> switches;
    std::vector<std::vector<double>> sensors;
};

inline RawFlight flush_row_buffer(RowBuffer& buf) {
    RawFlight f;
    f.flight_id = buf.flight_id;
    f.switches = std::move(buf.switches);
    long T = static_cast<long>(f.switches.size());
    int ny = T > 0 ? static_cast<int>(buf.sensors.front().size()) : 0;
    f.sensors.resize(T, ny);
    for (long t = 0; t < T; ++t)
        for (int j = 0; j < ny; ++j) f.sensors(t, j) = buf.sensors[t][j];
    return f;
}

}  // namespace detail

// CSV with header `flight_id,t,switches,sensor_1..sensor_n`. Rows of one
// flight must be contiguous with strictly increasing t. A file with no data
// rows yields an empty dataset.
inline std::vector<RawFlight> load_csv(const std::string& path,
                                       const DataSchema& schema = {}) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string line;
    std::vector<RawFlight> flights;
    bool have_header = false;
    int col_id = -1, col_t = -1, col_sw = -1, first_sensor_col = -1, n_sensor_cols = 0;
    detail::RowBuffer buf;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto fields = detail::split_csv_line(line);
        if (!have_header) {
            for (int i = 0; i < static_cast<int>(fields.size()); ++i) {
                if (fields[i] == "flight_id") col_id = i;
                else if (fields[i] == "t") col_t = i;
                else if (fields[i] == "switches") col_sw = i;
                else if (fields[i].rfind("sensor_", 0) == 0 && first_sensor_col < 0)
                    first_sensor_col = i;
            }
            if (col_id < 0 || col_t < 0 || col_sw < 0 || first_sensor_col < 0)
                throw IngestError("?", line_no,
                                  "missing required columns in header of " + path);
            n_sensor_cols = static_cast<int>(fields.size()) - first_sensor_col;
            if (schema.n_sensors && *schema.n_sensors != n_sensor_cols)
                throw IngestError("?", line_no, "sensor column count mismatch");
            have_header = true;
            continue;
        }
        if (static_cast<int>(fields.size()) != first_sensor_col + n_sensor_cols)
            throw IngestError(buf.flight_id.empty() ? "?" : buf.flight_id, line_no,
                              "wrong field count");
        const std::string& id = fields[col_id];
        long t = std::strtol(fields[col_t].c_str(), nullptr, 10);
        if (!buf.flight_id.empty() && id != buf.flight_id) {
            flights.push_back(detail::flush_row_buffer(buf));
            buf = detail::RowBuffer{};
        }
        if (buf.flight_id.empty()) {
            buf.flight_id = id;
        } else if (t <= buf.last_t) {
            throw IngestError(id, t, "time index not increasing");
        }
        buf.last_t = t;
        detail::check_switches(fields[col_sw], id, t);
        if (schema.n_switches &&
            static_cast<int>(fields[col_sw].size()) != *schema.n_switches)
            throw IngestError(id, t, "switch width mismatch");
        std::vector<double> row(n_sensor_cols);
        for (int j = 0; j < n_sensor_cols; ++j)
            row[j] = detail::parse_sensor(fields[first_sensor_col + j], id, t);
        buf.switches.push_back(fields[col_sw]);
        buf.sensors.push_back(std::move(row));
    }
    if (!buf.flight_id.empty()) flights.push_back(detail::flush_row_buffer(buf));
    return flights;
}

// JSONL: one flight object per line with fields flight_id, t, switches
// (bit strings or 0/1 arrays) and sensors (array of arrays).
inline std::vector<RawFlight> load_jsonl(const std::string& path,
                                         const DataSchema& schema = {}) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::vector<RawFlight> flights;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw IngestError("?", line_no, std::string("bad JSON: ") + e.what());
        }
        if (!j.contains("flight_id") || !j.contains("switches") || !j.contains("sensors"))
            throw IngestError("?", line_no, "missing flight_id/switches/sensors field");
        RawFlight f;
        f.flight_id = j["flight_id"].is_string()
                          ? j["flight_id"].get<std::string>()
                          : j["flight_id"].dump();
        const auto& sw = j["switches"];
        for (std::size_t t = 0; t < sw.size(); ++t) {
            std::string bits;
            if (sw[t].is_string()) {
                bits = sw[t].get<std::string>();
            } else {
                for (const auto& v : sw[t]) {
                    long b = v.get<long>();
                    bits.push_back(b == 1 ? '1' : (b == 0 ? '0' : 'x'));
                }
            }
            detail::check_switches(bits, f.flight_id, static_cast<long>(t) + 1);
            if (schema.n_switches && static_cast<int>(bits.size()) != *schema.n_switches)
                throw IngestError(f.flight_id, static_cast<long>(t) + 1,
                                  "switch width mismatch");
            f.switches.push_back(std::move(bits));
        }
        const auto& se = j["sensors"];
        if (se.size() != f.switches.size())
            throw IngestError(f.flight_id, 0, "switches/sensors length mismatch");
        long T = static_cast<long>(se.size());
        int ny = T > 0 ? static_cast<int>(se[0].size()) : 0;
        if (schema.n_sensors && T > 0 && *schema.n_sensors != ny)
            throw IngestError(f.flight_id, 1, "sensor dimension mismatch");
        f.sensors.resize(T, ny);
        for (long t = 0; t < T; ++t) {
            if (static_cast<int>(se[t].size()) != ny)
                throw IngestError(f.flight_id, t + 1, "ragged sensor row");
            for (int c = 0; c < ny; ++c) {
                double v = se[t][c].get<double>();
                if (std::isnan(v))
                    throw IngestError(f.flight_id, t + 1, "NaN sensor value");
                f.sensors(t, c) = v;
            }
        }
        flights.push_back(std::move(f));
    }
    return flights;
}

// Dispatch on extension; a directory loads every contained .csv/.jsonl in
// name order.
inline std::vector<RawFlight> load_flights(const std::string& path,
                                           const DataSchema& schema = {}) {
    namespace fs = std::filesystem;
    if (fs::is_directory(path)) {
        std::vector<std::string> names;
        for (const auto& entry : fs::directory_iterator(path)) {
            auto ext = entry.path().extension().string();
            if (ext == ".csv" || ext == ".jsonl") names.push_back(entry.path().string());
        }
        std::sort(names.begin(), names.end());
        std::vector<RawFlight> all;
        for (const auto& name : names) {
            auto part = load_flights(name, schema);
            all.insert(all.end(), std::make_move_iterator(part.begin()),
                       std::make_move_iterator(part.end()));
        }
        return all;
    }
    if (path.size() >= 6 && path.substr(path.size() - 6) == ".jsonl")
        return load_jsonl(path, schema);
    return load_csv(path, schema);
}

inline std::string flights_to_csv(const std::vector<RawFlight>& flights) {
    std::ostringstream out;
    int ny = flights.empty() ? 0 : static_cast<int>(flights.front().sensors.cols());
    out << "flight_id,t,switches";
    for (int j = 1; j <= ny; ++j) out << ",sensor_" << j;
    out << "\n";
    for (const auto& f : flights) {
        for (long t = 0; t < f.length(); ++t) {
            out << f.flight_id << ',' << (t + 1) << ',' << f.switches[t];
            for (int j = 0; j < f.sensors.cols(); ++j)
                out << ',' << format_double(f.sensors(t, j));
            out << "\n";
        }
    }
    return out.str();
}

inline void save_csv(const std::string& path, const std::vector<RawFlight>& flights) {
    write_file_atomic(path, flights_to_csv(flights));
}

inline std::string flights_to_jsonl(const std::vector<RawFlight>& flights) {
    std::ostringstream out;
    for (const auto& f : flights) {
        nlohmann::json j;
        j["flight_id"] = f.flight_id;
        std::vector<long> ts(f.length());
        for (long t = 0; t < f.length(); ++t) ts[t] = t + 1;
        j["t"] = ts;
        j["switches"] = f.switches;
        std::vector<std::vector<double>> rows(f.length());
        for (long t = 0; t < f.length(); ++t) {
            rows[t].resize(f.sensors.cols());
            for (int c = 0; c < f.sensors.cols(); ++c) rows[t][c] = f.sensors(t, c);
        }
        j["sensors"] = rows;
        out << j.dump() << "\n";
    }
    return out.str();
}

inline void save_jsonl(const std::string& path, const std::vector<RawFlight>& flights) {
    write_file_atomic(path, flights_to_jsonl(flights));
}

// Encode modes, derive countdowns and standardize sensors. Training fits the
// dictionary and the per-channel statistics from this dataset.
inline PreparedDataset prepare_training(const std::vector<RawFlight>& raw) {
    PreparedDataset out;
    if (raw.empty()) return out;
    std::vector<Eigen::MatrixXd> blocks;
    blocks.reserve(raw.size());
    for (const auto& f : raw) blocks.push_back(f.sensors);
    out.standardizer = Standardizer::fit(blocks);
    for (const auto& f : raw) {
        FlightRecord rec;
        rec.flight_id = f.flight_id;
        rec.modes.reserve(f.switches.size());
        for (std::size_t t = 0; t < f.switches.size(); ++t)
            rec.modes.push_back(out.dictionary.encode(
                SwitchFrame::from_string(f.switches[t]), true));
        if (!rec.modes.empty()) rec.durations = derive_durations(rec.modes);
        rec.sensors = out.standardizer.apply(f.sensors);
        rec.validate();
        out.records.push_back(std::move(rec));
    }
    return out;
}

// Scoring uses a frozen dictionary (unknown patterns map to the reserved
// novel id) and the training-time channel statistics.
inline std::vector<FlightRecord> prepare_scoring(const std::vector<RawFlight>& raw,
                                                 const ModeDictionary& dict,
                                                 const Standardizer& standardizer) {
    std::vector<FlightRecord> records;
    ModeDictionary frozen = dict;
    for (const auto& f : raw) {
        if (f.sensors.cols() != standardizer.n_channels())
            throw IngestError(f.flight_id, 1, "sensor dimension incompatible with model");
        FlightRecord rec;
        rec.flight_id = f.flight_id;
        for (std::size_t t = 0; t < f.switches.size(); ++t) {
            try {
                rec.modes.push_back(
                    frozen.encode(SwitchFrame::from_string(f.switches[t]), false));
            } catch (const std::invalid_argument& e) {
                throw IngestError(f.flight_id, static_cast<long>(t) + 1, e.what());
            }
        }
        if (!rec.modes.empty()) rec.durations = derive_durations(rec.modes);
        rec.sensors = standardizer.apply(f.sensors);
        rec.validate();
        records.push_back(std::move(rec));
    }
    return records;
}

namespace detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    Eigen::Index rows = static_cast<Eigen::Index>(j.size());
    Eigen::Index cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : 0;
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
    return m;
}

inline nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j[i].get<double>();
    return v;
}

}  // namespace detail

// A trained model bundled with everything needed to score new data.
struct ModelFile {
    ModelParams params;
    ModeDictionary dictionary;
    Standardizer standardizer;
    std::optional<Eigen::MatrixXd> var_baseline;
};

inline nlohmann::json model_to_json(const ModelFile& mf) {
    nlohmann::json j;
    j["format_version"] = kModelFormatVersion;
    nlohmann::json p;
    p["n_modes"] = mf.params.n_modes;
    p["n_phases"] = mf.params.n_phases;
    p["n_sensors"] = mf.params.n_sensors;
    p["mode_trans"] = detail::matrix_to_json(mf.params.mode_trans);
    p["duration_rate"] = detail::vector_to_json(mf.params.duration_rate);
    nlohmann::json pt = nlohmann::json::array();
    for (const auto& m : mf.params.phase_trans) pt.push_back(detail::matrix_to_json(m));
    p["phase_trans"] = std::move(pt);
    nlohmann::json vc = nlohmann::json::array();
    for (const auto& m : mf.params.var_coeff) vc.push_back(detail::matrix_to_json(m));
    p["var_coeff"] = std::move(vc);
    j["model"] = std::move(p);
    j["mode_dictionary"] = {{"width", mf.dictionary.width()},
                            {"patterns", mf.dictionary.patterns()}};
    j["standardizer"] = {{"mean", detail::vector_to_json(mf.standardizer.mean)},
                         {"scale", detail::vector_to_json(mf.standardizer.scale)}};
    if (mf.var_baseline)
        j["var_baseline"] = detail::matrix_to_json(*mf.var_baseline);
    return j;
}

inline ModelFile model_from_json(const nlohmann::json& j) {
    if (!j.contains("format_version") ||
        j["format_version"].get<int>() != kModelFormatVersion)
        throw std::runtime_error("unsupported model format version");
    ModelFile mf;
    const auto& p = j.at("model");
    mf.params.n_modes = p.at("n_modes").get<int>();
    mf.params.n_phases = p.at("n_phases").get<int>();
    mf.params.n_sensors = p.at("n_sensors").get<int>();
    mf.params.mode_trans = detail::matrix_from_json(p.at("mode_trans"));
    mf.params.duration_rate = detail::vector_from_json(p.at("duration_rate"));
    for (const auto& m : p.at("phase_trans"))
        mf.params.phase_trans.push_back(detail::matrix_from_json(m));
    for (const auto& m : p.at("var_coeff"))
        mf.params.var_coeff.push_back(detail::matrix_from_json(m));
    mf.params.validate();
    const auto& d = j.at("mode_dictionary");
    mf.dictionary = ModeDictionary::from_patterns(
        d.at("width").get<std::size_t>(),
        d.at("patterns").get<std::vector<std::string>>());
    mf.standardizer.mean = detail::vector_from_json(j.at("standardizer").at("mean"));
    mf.standardizer.scale = detail::vector_from_json(j.at("standardizer").at("scale"));
    if (j.contains("var_baseline"))
        mf.var_baseline = detail::matrix_from_json(j.at("var_baseline"));
    return mf;
}

inline void save_model(const std::string& path, const ModelFile& mf) {
    write_file_atomic(path, model_to_json(mf).dump(2) + "\n");
}

inline ModelFile load_model(const std::string& path) {
    return model_from_json(nlohmann::json::parse(read_file(path)));
}

}  // namespace smsvar
