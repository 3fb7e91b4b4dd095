// Copyright 2026 the smsvar authors
// SPDX-License-Identifier: Apache-2.0
//
// Command line front end: train a switching model, score flights with any of
// the detectors, simulate labeled synthetic datasets and run benchmark grids.

#include <chrono>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "smsvar/experiments.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "0.1.0";
constexpr int kExitUsage = 2;
constexpr int kExitIngest = 3;
constexpr int kExitNumeric = 4;

struct CommandError : std::runtime_error {
    int code;
    CommandError(int code, const std::string& what)
        : std::runtime_error(what), code(code) {}
};

void require_file(const std::string& path) {
    if (!fs::exists(path))
        throw CommandError(kExitUsage, "no such file or directory: " + path);
}

// Configs are plain JSON objects; a manifest produced by an earlier run is
// accepted too (its config snapshot is extracted), so any run can be replayed
// straight from its manifest.
json load_config(const std::string& path) {
    require_file(path);
    json j = json::parse(smsvar::read_file(path));
    if (j.contains("command") && j.contains("config")) return j["config"];
    return j;
}

smsvar::EMConfig em_config_from_json(const json& j) {
    smsvar::EMConfig cfg;
    cfg.n_phases = j.value("n_phases", cfg.n_phases);
    cfg.max_iters = j.value("max_iters", cfg.max_iters);
    cfg.rel_tol = j.value("rel_tol", cfg.rel_tol);
    cfg.restarts = j.value("restarts", cfg.restarts);
    cfg.ridge = j.value("ridge", cfg.ridge);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
}

json em_config_to_json(const smsvar::EMConfig& cfg) {
    return json{{"n_phases", cfg.n_phases},   {"max_iters", cfg.max_iters},
                {"rel_tol", cfg.rel_tol},     {"restarts", cfg.restarts},
                {"ridge", cfg.ridge},         {"seed", cfg.seed}};
}

smsvar::MkadConfig mkad_config_from_json(const json& j) {
    smsvar::MkadConfig cfg;
    cfg.sax = smsvar::SaxConfig::make(j.value("sax_alphabet", cfg.sax.alphabet_size),
                                      j.value("sax_window", cfg.sax.window));
    cfg.alpha = j.value("alpha", cfg.alpha);
    cfg.nu = j.value("nu", cfg.nu);
    return cfg;
}

json mkad_config_to_json(const smsvar::MkadConfig& cfg) {
    return json{{"sax_alphabet", cfg.sax.alphabet_size},
                {"sax_window", cfg.sax.window},
                {"alpha", cfg.alpha},
                {"nu", cfg.nu}};
}

smsvar::ScenarioConfig scenario_from_json(const json& j) {
    smsvar::ScenarioConfig cfg;
    cfg.name = j.value("name", cfg.name);
    cfg.n_normal = j.value("n_normal", cfg.n_normal);
    cfg.n_anomalous = j.value("n_anomalous", cfg.n_anomalous);
    cfg.flight_length = j.value("flight_length", cfg.flight_length);
    cfg.n_phases = j.value("n_phases", cfg.n_phases);
    cfg.n_sensors = j.value("n_sensors", cfg.n_sensors);
    cfg.n_switches = j.value("n_switches", cfg.n_switches);
    cfg.anomaly = smsvar::anomaly_kind_from_string(
        j.value("anomaly", std::string(smsvar::to_string(cfg.anomaly))));
    if (j.contains("contamination") && !j["contamination"].is_null())
        cfg.contamination = j["contamination"].get<double>();
    cfg.events_min = j.value("events_min", cfg.events_min);
    cfg.events_max = j.value("events_max", cfg.events_max);
    cfg.phase_window = j.value("phase_window", cfg.phase_window);
    cfg.sensor_window = j.value("sensor_window", cfg.sensor_window);
    cfg.sensor_noise_scale = j.value("sensor_noise_scale", cfg.sensor_noise_scale);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
}

json scenario_to_json(const smsvar::ScenarioConfig& cfg) {
    json j{{"name", cfg.name},
           {"n_normal", cfg.n_normal},
           {"n_anomalous", cfg.n_anomalous},
           {"flight_length", cfg.flight_length},
           {"n_phases", cfg.n_phases},
           {"n_sensors", cfg.n_sensors},
           {"n_switches", cfg.n_switches},
           {"anomaly", smsvar::to_string(cfg.anomaly)},
           {"events_min", cfg.events_min},
           {"events_max", cfg.events_max},
           {"phase_window", cfg.phase_window},
           {"sensor_window", cfg.sensor_window},
           {"sensor_noise_scale", cfg.sensor_noise_scale},
           {"seed", cfg.seed}};
    if (cfg.contamination) j["contamination"] = *cfg.contamination;
    return j;
}

smsvar::BenchmarkConfig benchmark_from_json(const json& j) {
    smsvar::BenchmarkConfig cfg;
    if (j.contains("scenarios"))
        for (const auto& s : j["scenarios"]) cfg.scenarios.push_back(scenario_from_json(s));
    if (j.contains("detectors")) {
        cfg.detectors.clear();
        for (const auto& d : j["detectors"])
            cfg.detectors.push_back(
                smsvar::score_method_from_string(d.get<std::string>()));
    }
    cfg.n_runs = j.value("n_runs", cfg.n_runs);
    if (j.contains("em")) cfg.em = em_config_from_json(j["em"]);
    if (j.contains("mkad")) cfg.mkad = mkad_config_from_json(j["mkad"]);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
}

json benchmark_to_json(const smsvar::BenchmarkConfig& cfg) {
    json scenarios = json::array();
    for (const auto& s : cfg.scenarios) scenarios.push_back(scenario_to_json(s));
    json detectors = json::array();
    for (auto d : cfg.detectors) detectors.push_back(smsvar::to_string(d));
    return json{{"scenarios", scenarios}, {"detectors", detectors},
                {"n_runs", cfg.n_runs},   {"em", em_config_to_json(cfg.em)},
                {"mkad", mkad_config_to_json(cfg.mkad)}, {"seed", cfg.seed}};
}

class ManifestWriter {
public:
    ManifestWriter(std::string command, json config)
        : command_(std::move(command)),
          config_(std::move(config)),
          start_(std::chrono::steady_clock::now()) {}

    void add_input(const std::string& key, const std::string& path) {
        inputs_[key] = path;
    }
    void add_output(const std::string& key, const std::string& path) {
        outputs_[key] = path;
    }
    void set_seed(std::uint64_t seed) { seed_ = seed; }

    void write(const std::string& path) const {
        auto elapsed = std::chrono::duration<double>(
                           std::chrono::steady_clock::now() - start_)
                           .count();
        json j{{"command", command_}, {"config", config_},
               {"seed", seed_},       {"inputs", inputs_},
               {"outputs", outputs_}, {"tool_version", kToolVersion},
               {"wall_clock_sec", elapsed}};
        smsvar::write_file_atomic(path, j.dump(2) + "\n");
    }

private:
    std::string command_;
    json config_;
    std::uint64_t seed_ = 0;
    json inputs_ = json::object();
    json outputs_ = json::object();
    std::chrono::steady_clock::time_point start_;
};

// ---------------------------------------------------------------------------

int cmd_train(const std::string& data_path, const std::string& model_out,
              const std::string& config_path, const std::string& report_out,
              std::uint64_t seed, unsigned jobs) {
    require_file(data_path);
    json config = config_path.empty() ? json::object() : load_config(config_path);
    smsvar::EMConfig em_cfg = em_config_from_json(config);
    if (seed != 0) em_cfg.seed = seed;

    auto raw = smsvar::load_flights(data_path);
    if (raw.empty()) throw CommandError(kExitIngest, "dataset is empty: " + data_path);
    smsvar::PreparedDataset prepared = smsvar::prepare_training(raw);

    em_cfg.jobs = jobs;
    smsvar::EMReport report =
        smsvar::em_fit(prepared.records, prepared.dictionary.total_modes(),
                       prepared.records.front().n_sensors(), em_cfg);

    smsvar::ModelFile mf;
    mf.params = report.params;
    mf.dictionary = prepared.dictionary;
    mf.standardizer = prepared.standardizer;
    mf.var_baseline = smsvar::var_baseline_fit(prepared.records, em_cfg.ridge);
    smsvar::save_model(model_out, mf);

    std::string report_path =
        report_out.empty() ? model_out + ".report.json" : report_out;
    smsvar::write_file_atomic(report_path,
                              smsvar::em_report_to_json(report).dump(2) + "\n");

    ManifestWriter manifest("train", em_config_to_json(em_cfg));
    manifest.set_seed(em_cfg.seed);
    manifest.add_input("data", data_path);
    manifest.add_output("model", model_out);
    manifest.add_output("report", report_path);
    manifest.write(model_out + ".manifest.json");

    std::cerr << "trained: " << report.iterations_run << " iterations, "
              << (report.converged ? "converged" : "not converged")
              << ", loglik " << report.loglik_history.back() << "\n";
    for (const auto& flag : report.flags) std::cerr << "  note: " << flag << "\n";
    return 0;
}

void write_per_step(const std::string& scores_out,
                    const std::vector<smsvar::ScoreSeries>& series) {
    fs::path dir = fs::path(scores_out).string() + ".steps";
    fs::create_directories(dir);
    for (const auto& s : series)
        smsvar::write_file_atomic((dir / (s.flight_id + ".csv")).string(),
                                  smsvar::series_to_csv(s));
}

int cmd_score(const std::string& data_path, const std::string& model_path,
              const std::string& method_name, const std::string& scores_out,
              const std::string& config_path, bool per_step, bool stream,
              unsigned jobs) {
    require_file(data_path);
    require_file(model_path);
    smsvar::ModelFile mf = smsvar::load_model(model_path);
    smsvar::ScoreMethod method = smsvar::score_method_from_string(method_name);
    json config = config_path.empty() ? json::object() : load_config(config_path);

    std::vector<smsvar::ScoreSeries> series;
    if (stream) {
        if (method != smsvar::ScoreMethod::kKl && method != smsvar::ScoreMethod::kLl)
            throw CommandError(kExitUsage, "--stream supports methods kl and ll");
        // Rows are consumed flight by flight; D_t values print as soon as the
        // next frame arrives, step likelihoods once each mode run completes.
        auto raw = smsvar::load_flights(data_path);
        for (const auto& flight : raw) {
            auto records = smsvar::prepare_scoring({flight}, mf.dictionary,
                                                   mf.standardizer);
            const auto& rec = records.front();
            smsvar::OnlineScorer scorer(mf.params);
            auto emit = [&](long t, double v) {
                std::cout << rec.flight_id << ',' << t << ','
                          << smsvar::format_double(v) << "\n";
            };
            for (long t = 0; t < rec.length(); ++t) {
                auto out = scorer.feed(rec.modes[t], rec.sensors.row(t).transpose());
                if (method == smsvar::ScoreMethod::kKl && out.kl)
                    emit(out.kl->t, out.kl->value);
                if (method == smsvar::ScoreMethod::kLl)
                    for (const auto& step : out.ll) emit(step.t, step.value);
            }
            auto tail = scorer.finish();
            if (method == smsvar::ScoreMethod::kLl)
                for (const auto& step : tail.ll) emit(step.t, step.value);
            series.push_back(method == smsvar::ScoreMethod::kKl
                                 ? scorer.kl_series(rec.flight_id)
                                 : scorer.ll_series(rec.flight_id));
        }
    } else {
        auto raw = smsvar::load_flights(data_path);
        auto records = smsvar::prepare_scoring(raw, mf.dictionary, mf.standardizer);
        series.resize(records.size());
        switch (method) {
            case smsvar::ScoreMethod::kKl:
            case smsvar::ScoreMethod::kLl: {
                smsvar::parallel_for(records.size(), jobs, [&](std::size_t i) {
                    smsvar::FilterTrace trace =
                        smsvar::forward_filter(records[i], mf.params);
                    series[i] = method == smsvar::ScoreMethod::kKl
                                    ? smsvar::score_kl(trace, records[i].flight_id)
                                    : smsvar::score_ll(trace, records[i].flight_id);
                });
                break;
            }
            case smsvar::ScoreMethod::kVar: {
                Eigen::MatrixXd coeff;
                if (mf.var_baseline) {
                    coeff = *mf.var_baseline;
                } else {
                    std::cerr << "model has no var baseline; fitting on scored data\n";
                    coeff = smsvar::var_baseline_fit(records);
                }
                for (std::size_t i = 0; i < records.size(); ++i)
                    series[i] = smsvar::var_baseline_score(records[i], coeff);
                break;
            }
            case smsvar::ScoreMethod::kSmm: {
                for (std::size_t i = 0; i < records.size(); ++i)
                    series[i] = smsvar::smm_score(records[i], mf.params.mode_trans,
                                                  mf.params.duration_rate);
                break;
            }
            case smsvar::ScoreMethod::kMkad: {
                smsvar::MkadConfig mkad_cfg = mkad_config_from_json(config);
                std::vector<std::string> flags;
                smsvar::KernelMatrix kernel;
                series = smsvar::mkad_score(records, mkad_cfg, jobs, &flags, &kernel);
                for (const auto& flag : flags) std::cerr << "note: " << flag << "\n";
                if (config.contains("kernel_out"))
                    smsvar::save_kernel(config["kernel_out"].get<std::string>(),
                                        kernel, mkad_config_to_json(mkad_cfg).dump());
                break;
            }
        }
    }

    // Output rows ranked by anomaly score; sqrt of the variance summary is
    // logged alongside for readers who expect a standard deviation.
    auto ranked_ids = smsvar::rank_flights(series, series.size());
    std::vector<smsvar::ScoreSeries> ranked;
    for (const auto& id : ranked_ids)
        for (const auto& s : series)
            if (s.flight_id == id) ranked.push_back(s);
    smsvar::write_file_atomic(scores_out, smsvar::scores_to_csv(ranked));
    if (per_step) write_per_step(scores_out, ranked);
    if (!ranked.empty())
        std::cerr << "top flight: " << ranked.front().flight_id << " summary "
                  << ranked.front().summary << " (sqrt "
                  << std::sqrt(std::max(ranked.front().summary, 0.0)) << ")\n";

    ManifestWriter manifest("score", json{{"method", method_name},
                                          {"per_step", per_step},
                                          {"stream", stream},
                                          {"score_config", config}});
    manifest.add_input("data", data_path);
    manifest.add_input("model", model_path);
    manifest.add_output("scores", scores_out);
    manifest.write(scores_out + ".manifest.json");
    return 0;
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir,
                 std::uint64_t seed, const std::string& format) {
    json config = config_path.empty() ? json::object() : load_config(config_path);
    smsvar::ScenarioConfig cfg = scenario_from_json(config);
    if (seed != 0) cfg.seed = seed;
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw CommandError(kExitUsage, e.what());
    }

    smsvar::LabeledDataset data = smsvar::generate_scenario(cfg);
    fs::create_directories(out_dir);
    fs::path dir(out_dir);
    std::string flights_path =
        (dir / (format == "jsonl" ? "flights.jsonl" : "flights.csv")).string();
    if (format == "jsonl")
        smsvar::save_jsonl(flights_path, data.flights);
    else
        smsvar::save_csv(flights_path, data.flights);

    std::ostringstream labels;
    labels << "flight_id,label\n";
    for (std::size_t i = 0; i < data.flights.size(); ++i)
        labels << data.flights[i].flight_id << ',' << data.labels[i] << "\n";
    std::string labels_path = (dir / "labels.csv").string();
    smsvar::write_file_atomic(labels_path, labels.str());

    ManifestWriter manifest("simulate", scenario_to_json(cfg));
    manifest.set_seed(cfg.seed);
    manifest.add_output("flights", flights_path);
    manifest.add_output("labels", labels_path);
    manifest.write((dir / "manifest.json").string());
    std::cerr << "simulated " << data.flights.size() << " flights ("
              << std::count(data.labels.begin(), data.labels.end(), 1)
              << " anomalous)\n";
    return 0;
}

int cmd_experiment(const std::string& config_path, const std::string& out_dir,
                   std::uint64_t seed, unsigned jobs, bool dump_scores) {
    json config = load_config(config_path);
    smsvar::BenchmarkConfig cfg = benchmark_from_json(config);
    if (seed != 0) cfg.seed = seed;
    cfg.jobs = jobs;
    if (cfg.scenarios.empty())
        throw CommandError(kExitUsage, "benchmark config needs at least one scenario");
    for (auto& s : cfg.scenarios) {
        try {
            s.validate();
        } catch (const std::invalid_argument& e) {
            throw CommandError(kExitUsage, e.what());
        }
    }

    fs::create_directories(out_dir);
    fs::path dir(out_dir);
    smsvar::ScoreDumpHook hook;
    if (dump_scores || config.value("dump_scores", false)) {
        hook = [&](const std::string& scenario, int run,
                   const std::map<smsvar::ScoreMethod, std::vector<double>>& scores,
                   const std::vector<int>& labels) {
            std::ostringstream out;
            out << "flight_index,label";
            for (const auto& [method, _] : scores)
                out << ',' << smsvar::to_string(method);
            out << "\n";
            for (std::size_t i = 0; i < labels.size(); ++i) {
                out << i << ',' << labels[i];
                for (const auto& [_, values] : scores)
                    out << ',' << smsvar::format_double(values[i]);
                out << "\n";
            }
            smsvar::write_file_atomic(
                (dir / ("scores_" + scenario + "_run" + std::to_string(run) + ".csv"))
                    .string(),
                out.str());
        };
    }

    smsvar::BenchmarkResult result = smsvar::run_benchmark(cfg, hook);
    std::string results_path = (dir / "results.csv").string();
    smsvar::write_file_atomic(results_path, smsvar::benchmark_to_csv(result));
    std::string aggregate_path = (dir / "aggregate.json").string();
    smsvar::write_file_atomic(aggregate_path,
                              smsvar::benchmark_aggregate_json(result).dump(2) + "\n");

    ManifestWriter manifest("experiment", benchmark_to_json(cfg));
    manifest.set_seed(cfg.seed);
    manifest.add_input("config", config_path);
    manifest.add_output("results", results_path);
    manifest.add_output("aggregate", aggregate_path);
    manifest.write((dir / "manifest.json").string());

    for (const auto& [key, agg] : result.aggregate())
        std::cerr << key.first << " / " << smsvar::to_string(key.second)
                  << ": auc " << agg.mean << " +- " << agg.stddev << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"semi-Markov switching VAR anomaly detection toolkit"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    std::string data_path, model_path, config_path, out_path, method = "kl";
    std::string format = "csv", report_path;
    std::uint64_t seed = 0;
    unsigned jobs = 1;
    bool per_step = false, stream = false, dump_scores = false;

    auto* train = app.add_subcommand("train", "fit a model on flight data");
    train->add_option("--data", data_path, "flight data (csv/jsonl/dir)")->required();
    train->add_option("--model", model_path, "output model JSON")->required();
    train->add_option("--config", config_path, "EM config JSON");
    train->add_option("--out", report_path, "EM report JSON path");
    train->add_option("--seed", seed, "seed override");
    train->add_option("--jobs", jobs, "worker threads");

    auto* score = app.add_subcommand("score", "score flights against a model");
    score->add_option("--data", data_path, "flight data (csv/jsonl/dir)")->required();
    score->add_option("--model", model_path, "model JSON")->required();
    score->add_option("--method", method, "kl|ll|var|smm|mkad");
    score->add_option("--out", out_path, "scores CSV path")->required();
    score->add_option("--config", config_path, "method config JSON");
    score->add_flag("--per-step", per_step, "write per-step series files");
    score->add_flag("--stream", stream, "incremental scoring, emit steps to stdout");
    score->add_option("--jobs", jobs, "worker threads");

    auto* simulate = app.add_subcommand("simulate", "generate a labeled synthetic dataset");
    simulate->add_option("--config", config_path, "scenario config JSON");
    simulate->add_option("--out", out_path, "output directory")->required();
    simulate->add_option("--seed", seed, "seed override");
    simulate->add_option("--format", format, "csv|jsonl")->check(CLI::IsMember({"csv", "jsonl"}));

    auto* experiment = app.add_subcommand("experiment", "run a benchmark grid");
    experiment->add_option("--config", config_path, "benchmark config JSON")->required();
    experiment->add_option("--out", out_path, "output directory")->required();
    experiment->add_option("--seed", seed, "seed override");
    experiment->add_option("--jobs", jobs, "worker threads");
    experiment->add_flag("--dump-scores", dump_scores, "write per-run score tables");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (train->parsed())
            return cmd_train(data_path, model_path, config_path, report_path, seed, jobs);
        if (score->parsed())
            return cmd_score(data_path, model_path, method, out_path, config_path,
                             per_step, stream, jobs);
        if (simulate->parsed())
            return cmd_simulate(config_path, out_path, seed, format);
        if (experiment->parsed())
            return cmd_experiment(config_path, out_path, seed, jobs, dump_scores);
    } catch (const CommandError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.code;
    } catch (const smsvar::IngestError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIngest;
    } catch (const smsvar::DegenerateEvidenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    }
    return kExitUsage;
}
