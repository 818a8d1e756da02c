#include "neurodec/cli.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "neurodec/eval.hpp"
#include "neurodec/lagging.hpp"
#include "neurodec/tensorio.hpp"

namespace neurodec {

namespace {

// Thrown for malformed invocations; maps to exit code 1.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> parts;
    std::string current;
    for (char ch : text) {
        if (ch == sep) {
            parts.push_back(current);
            current.clear();
        } else {
            current += ch;
        }
    }
    parts.push_back(current);
    return parts;
}

double parse_one_double(const std::string& text) {
    std::size_t used = 0;
    double value = 0.0;
    try {
        value = std::stod(text, &used);
    } catch (const std::exception&) {
        throw ValidationError("'" + text + "' is not a number");
    }
    if (used != text.size()) throw ValidationError("'" + text + "' is not a number");
    return value;
}

int parse_one_int(const std::string& text) {
    std::size_t used = 0;
    int value = 0;
    try {
        value = std::stoi(text, &used);
    } catch (const std::exception&) {
        throw ValidationError("'" + text + "' is not an integer");
    }
    if (used != text.size()) throw ValidationError("'" + text + "' is not an integer");
    return value;
}

const char* command_name(Command command) {
    switch (command) {
        case Command::prepare: return "prepare";
        case Command::spectrogram: return "spectrogram";
        case Command::fit: return "fit";
        case Command::predict: return "predict";
        case Command::evaluate: return "evaluate";
        case Command::sweep: return "sweep";
        case Command::synth: return "synth";
    }
    return "unknown";
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string join_doubles(const std::vector<double>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ',';
        out += format_double(values[i]);
    }
    return out;
}

std::string kernel_to_string(const KernelSpec& kernel) {
    if (kernel.kind == KernelKind::linear) return "linear";
    return "gaussian:" + format_double(kernel.gamma);
}

nlohmann::json config_to_json(const RunConfig& c) {
    nlohmann::json j = {
        {"command", command_name(c.command)},
        {"dataset", c.dataset.string()},
        {"out", c.out.string()},
        {"seed", c.seed},
        {"threads", c.threads},
    };
    switch (c.command) {
        case Command::prepare:
            j["channels_file"] = c.channels_file.string();
            j["baseline"] = c.baseline ? nlohmann::json({c.baseline->first, c.baseline->second})
                                       : nlohmann::json(nullptr);
            j["downsample_ms"] =
                c.downsample_ms ? nlohmann::json(*c.downsample_ms) : nlohmann::json(nullptr);
            break;
        case Command::spectrogram:
            j["audio"] = c.audio.string();
            j["filterbank"] = {{"n_channels", c.filterbank.n_channels},
                               {"f_min_hz", c.filterbank.f_min_hz},
                               {"f_max_hz", c.filterbank.f_max_hz},
                               {"frame_period_ms", c.filterbank.frame_period_ms},
                               {"window_ms", c.filterbank.window_ms},
                               {"compression",
                                c.filterbank.compression == Compression::log_power ? "log_power"
                                                                                    : "linear"}};
            break;
        case Command::fit:
        case Command::evaluate:
        case Command::sweep:
            j["kernel"] = kernel_to_string(c.kernel);
            j["lambda_grid"] =
                c.lambda_grid ? nlohmann::json(c.lambda_grid->values) : nlohmann::json(nullptr);
            if (c.command == Command::sweep) {
                j["lags_ms"] = c.lags_ms;
            } else {
                j["lag_ms"] = c.lag_ms;
            }
            if (c.command != Command::fit) {
                j["pair_sample"] =
                    c.pair_sample ? nlohmann::json(*c.pair_sample) : nlohmann::json(nullptr);
                j["gnuplot"] = c.gnuplot;
            }
            break;
        case Command::predict:
            j["model"] = c.model.string();
            j["stimulus_ids"] = c.stimulus_ids;
            break;
        case Command::synth:
            j["synth"] = {{"n_stimuli", c.synth.n_stimuli},
                          {"channels", c.synth.channels},
                          {"freq_channels", c.synth.freq_channels},
                          {"frames_min", c.synth.frames_min},
                          {"frames_max", c.synth.frames_max},
                          {"lag_bins_true", c.synth.lag_bins_true},
                          {"snr", std::isinf(c.synth.snr) ? nlohmann::json("inf")
                                                          : nlohmann::json(c.synth.snr)},
                          {"frame_period_ms", c.synth.frame_period_ms},
                          {"g_support", c.synth.g_support},
                          {"g_lag_support",
                           c.synth.g_lag_support
                               ? nlohmann::json({c.synth.g_lag_support->first,
                                                 c.synth.g_lag_support->second})
                               : nlohmann::json(nullptr)},
                          {"channel_rank", c.synth.channel_rank}};
            break;
    }
    return j;
}

std::string quote_arg(const std::string& arg) {
    if (arg.find_first_of(" \t'\"") == std::string::npos && !arg.empty()) return arg;
    std::string quoted = "'";
    for (char ch : arg) {
        if (ch == '\'') {
            quoted += "'\\''";
        } else {
            quoted += ch;
        }
    }
    quoted += "'";
    return quoted;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ValidationError("cannot create '" + path.string() + "'");
    out << text;
    if (!out) throw ValidationError("short write on '" + path.string() + "'");
}

// rerun.txt + config.json; written before the command body so failed runs
// still record what was attempted.
void write_run_records(const RunConfig& config) {
    std::filesystem::create_directories(config.out);
    std::vector<std::string> args = config_to_args(config);
    std::string line;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (i) line += ' ';
        line += quote_arg(args[i]);
    }
    write_text(config.out / "rerun.txt", line + "\n");
    write_text(config.out / "config.json", config_to_json(config).dump(2) + "\n");
}

void emit_error(const RunConfig& config, int code, const std::string& kind,
                const std::string& message) {
    nlohmann::json j = {{"error", {{"code", code}, {"type", kind}, {"message", message}}}};
    std::cerr << j.dump() << "\n";
    if (!config.out.empty()) {
        try {
            std::filesystem::create_directories(config.out);
            write_text(config.out / "error.json", j.dump(2) + "\n");
        } catch (...) {
            // stderr already carries the record
        }
    }
}

void require_path(const std::filesystem::path& path, const char* flag) {
    if (path.empty()) throw UsageError(std::string("missing required flag ") + flag);
}

double dataset_frame_period(const Dataset& ds) {
    if (ds.spectrograms.empty()) throw ValidationError("dataset has no spectrograms");
    return ds.spectrograms.front().frame_period_ms;
}

EvalOptions eval_options(const RunConfig& config) {
    EvalOptions opts;
    opts.threads = config.threads;
    opts.lambda_grid = config.lambda_grid;
    if (config.pair_sample) {
        opts.pair_filter = PairSampleSpec{*config.pair_sample, config.seed};
    }
    return opts;
}

void write_features_dat(const EvalReport& report, const std::vector<double>& center_freqs,
                        const std::filesystem::path& path) {
    std::string text = "# center_freq_hz score\n";
    for (Eigen::Index f = 0; f < report.feature_scores.per_freq.size(); ++f) {
        text += format_double(center_freqs[static_cast<std::size_t>(f)]) + " " +
                format_double(report.feature_scores.per_freq(f)) + "\n";
    }
    write_text(path, text);
}

void run_prepare(const RunConfig& config) {
    require_path(config.dataset, "--dataset");
    Dataset ds = load_dataset(config.dataset);
    if (!config.channels_file.empty()) {
        std::ifstream in(config.channels_file);
        if (!in) {
            throw ValidationError("cannot open channels file '" + config.channels_file.string() +
                                  "'");
        }
        std::vector<std::string> names;
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) names.push_back(line);
        }
        if (names.empty()) {
            throw ValidationError("channels file '" + config.channels_file.string() +
                                  "' names no channels");
        }
        for (auto& rec : ds.recordings) rec = select_channels(rec, names);
    }
    if (config.baseline) {
        for (auto& rec : ds.recordings) {
            rec = baseline_correct(rec, config.baseline->first, config.baseline->second);
        }
    }
    if (config.downsample_ms) {
        for (auto& rec : ds.recordings) rec = downsample(rec, *config.downsample_ms);
    }
    save_dataset(ds, config.out);
}

void run_spectrogram(const RunConfig& config) {
    require_path(config.audio, "--audio");
    std::vector<AudioClip> clips = load_audio_manifest(config.audio);
    if (clips.empty()) throw ValidationError("audio manifest lists no clips");
    std::vector<Spectrogram> spectrograms;
    spectrograms.reserve(clips.size());
    for (const auto& clip : clips) {
        spectrograms.push_back(compute_spectrogram(clip, config.filterbank));
    }

    if (!config.dataset.empty()) {
        Dataset ds = load_dataset(config.dataset);
        if (ds.size() != spectrograms.size()) {
            throw ValidationError("dataset has " + std::to_string(ds.size()) +
                                  " stimuli, audio manifest has " +
                                  std::to_string(spectrograms.size()));
        }
        std::vector<Spectrogram> ordered;
        ordered.reserve(spectrograms.size());
        for (const auto& rec : ds.recordings) {
            auto it = std::find_if(spectrograms.begin(), spectrograms.end(),
                                   [&](const Spectrogram& s) {
                                       return s.stimulus_id == rec.stimulus_id;
                                   });
            if (it == spectrograms.end()) {
                throw ValidationError("no audio clip for stimulus '" + rec.stimulus_id + "'");
            }
            ordered.push_back(std::move(*it));
        }
        ds.spectrograms = std::move(ordered);
        save_dataset(ds, config.out);
        return;
    }

    nlohmann::json items = nlohmann::json::array();
    char name[32];
    for (std::size_t i = 0; i < spectrograms.size(); ++i) {
        std::snprintf(name, sizeof(name), "spec_%04zu.f64", i);
        write_blob(config.out / name, spectrograms[i].data);
        items.push_back({{"id", spectrograms[i].stimulus_id},
                         {"blob", std::string(name)},
                         {"freq_channels", spectrograms[i].freq_channels()},
                         {"frames", spectrograms[i].frames()}});
    }
    nlohmann::json j = {{"format_version", 1},
                        {"frame_period_ms", config.filterbank.frame_period_ms},
                        {"center_freqs_hz", spectrograms.front().center_freqs_hz},
                        {"items", items}};
    write_text(config.out / "spectrograms.json", j.dump(2) + "\n");
}

void run_fit(const RunConfig& config) {
    require_path(config.dataset, "--dataset");
    Dataset ds = load_dataset(config.dataset);
    LagSpec lag = make_lag_spec(config.lag_ms, dataset_frame_period(ds));
    auto [design, targets] = build_lagged_design(ds, lag, ds.stimulus_ids());
    DecoderModel model = fit_ridge_loo(design, targets, config.kernel, config.lambda_grid);
    save_model(model, config.out / "model");
    nlohmann::json lambdas = nlohmann::json::array();
    for (Eigen::Index f = 0; f < model.lambdas.size(); ++f) lambdas.push_back(model.lambdas(f));
    nlohmann::json j = {{"lag_ms", lag.lag_ms},
                        {"lag_bins", lag.lag_bins},
                        {"kernel", kernel_to_string(config.kernel)},
                        {"mode", model.mode == FitMode::primal ? "primal" : "dual"},
                        {"training_rows", design.rows.rows()},
                        {"design_cols", design.rows.cols()},
                        {"selected_lambdas", lambdas}};
    write_text(config.out / "fit.json", j.dump(2) + "\n");
}

void run_predict(const RunConfig& config) {
    require_path(config.model, "--model");
    require_path(config.dataset, "--dataset");
    std::filesystem::path model_dir = config.model;
    // Accept a fit output directory as well as the model directory inside it.
    if (!std::filesystem::exists(model_dir / "model.json") &&
        std::filesystem::exists(model_dir / "model" / "model.json")) {
        model_dir /= "model";
    }
    DecoderModel model = load_model(model_dir);
    Dataset ds = load_dataset(config.dataset);
    std::vector<std::string> ids =
        config.stimulus_ids.empty() ? ds.stimulus_ids() : config.stimulus_ids;
    std::vector<Spectrogram> preds = predict(model, ds, ids);

    nlohmann::json items = nlohmann::json::array();
    char name[32];
    for (std::size_t i = 0; i < preds.size(); ++i) {
        std::snprintf(name, sizeof(name), "pred_%04zu.f64", i);
        write_blob(config.out / name, preds[i].data);
        items.push_back({{"id", preds[i].stimulus_id},
                         {"blob", std::string(name)},
                         {"freq_channels", preds[i].freq_channels()},
                         {"frames", preds[i].frames()}});
    }
    nlohmann::json j = {{"format_version", 1},
                        {"frame_period_ms", model.lag_spec.frame_period_ms},
                        {"center_freqs_hz", preds.front().center_freqs_hz},
                        {"items", items}};
    write_text(config.out / "predictions.json", j.dump(2) + "\n");
}

void run_evaluate(const RunConfig& config) {
    require_path(config.dataset, "--dataset");
    Dataset ds = load_dataset(config.dataset);
    LagSpec lag = make_lag_spec(config.lag_ms, dataset_frame_period(ds));
    EvalReport report = leave_two_out_cv(ds, lag, config.kernel, eval_options(config));
    write_pairs_csv(report, config.out / "pairs.csv");
    write_summary_json(report, config.out / "summary.json");
    if (config.gnuplot) {
        write_features_dat(report, ds.spectrograms.front().center_freqs_hz,
                           config.out / "features.dat");
    }
}

void run_sweep(const RunConfig& config) {
    require_path(config.dataset, "--dataset");
    if (config.lags_ms.empty()) throw UsageError("missing required flag --lags-ms");
    Dataset ds = load_dataset(config.dataset);
    auto rows = lag_sweep(ds, config.lags_ms, config.kernel, eval_options(config));
    write_sweep_csv(rows, config.out / "sweep.csv");
    nlohmann::json summaries = nlohmann::json::array();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "pairs_%04zu.csv", i);
        write_pairs_csv(rows[i].second, config.out / name);
        summaries.push_back({{"lag_ms", rows[i].first},
                             {"accuracy", rows[i].second.accuracy},
                             {"n_pairs", rows[i].second.n_pairs},
                             {"pairs_csv", std::string(name)}});
    }
    write_text(config.out / "summary.json",
               nlohmann::json({{"lags", summaries}}).dump(2) + "\n");
    if (config.gnuplot) {
        std::string dat = "# lag_ms accuracy\n";
        for (const auto& [lag, report] : rows) {
            dat += format_double(lag) + " " + format_double(report.accuracy) + "\n";
        }
        write_text(config.out / "sweep.dat", dat);
    }
}

void run_synth(const RunConfig& config) {
    SynthConfig synth = config.synth;
    synth.seed = config.seed;
    auto [ds, truth] = generate_synthetic(synth);
    save_dataset(ds, config.out);
    save_truth(truth, config.out);
}

}  // namespace

int run(const RunConfig& config) {
    try {
        if (config.out.empty()) throw UsageError("missing required flag --out");
        if (config.threads < 1) throw UsageError("--threads must be at least 1");
        write_run_records(config);
        switch (config.command) {
            case Command::prepare: run_prepare(config); break;
            case Command::spectrogram: run_spectrogram(config); break;
            case Command::fit: run_fit(config); break;
            case Command::predict: run_predict(config); break;
            case Command::evaluate: run_evaluate(config); break;
            case Command::sweep: run_sweep(config); break;
            case Command::synth: run_synth(config); break;
        }
        return 0;
    } catch (const UsageError& e) {
        emit_error(config, 1, "usage", e.what());
        return 1;
    } catch (const NumericalError& e) {
        emit_error(config, 3, "numerical", e.what());
        return 3;
    } catch (const ValidationError& e) {
        emit_error(config, 2, "data", e.what());
        return 2;
    } catch (const std::exception& e) {
        emit_error(config, 2, "data", e.what());
        return 2;
    }
}

KernelSpec parse_kernel(const std::string& text) {
    if (text == "linear") return KernelSpec::linear();
    const std::string prefix = "gaussian:";
    if (text.rfind(prefix, 0) == 0) {
        double gamma = parse_one_double(text.substr(prefix.size()));
        return KernelSpec::gaussian(gamma);
    }
    throw ValidationError("unknown kernel '" + text + "' (expected linear or gaussian:G)");
}

LambdaGrid parse_lambda_grid(const std::string& text) {
    auto parts = split(text, ',');
    if (parts.size() != 3) {
        throw ValidationError("lambda grid must be min,max,count, got '" + text + "'");
    }
    return LambdaGrid::log_space(parse_one_double(parts[0]), parse_one_double(parts[1]),
                                 parse_one_int(parts[2]));
}

FilterbankSpec parse_filterbank(const std::string& text) {
    auto parts = split(text, ',');
    if (parts.size() != 4) {
        throw ValidationError("filterbank must be n,fmin,fmax,hop_ms, got '" + text + "'");
    }
    FilterbankSpec spec;
    spec.n_channels = parse_one_int(parts[0]);
    spec.f_min_hz = parse_one_double(parts[1]);
    spec.f_max_hz = parse_one_double(parts[2]);
    spec.frame_period_ms = parse_one_double(parts[3]);
    return spec;
}

std::pair<double, double> parse_window(const std::string& text) {
    auto parts = split(text, ',');
    if (parts.size() != 2) {
        throw ValidationError("window must be start,end, got '" + text + "'");
    }
    return {parse_one_double(parts[0]), parse_one_double(parts[1])};
}

std::vector<double> parse_double_list(const std::string& text) {
    auto parts = split(text, ',');
    std::vector<double> values;
    values.reserve(parts.size());
    for (const auto& part : parts) values.push_back(parse_one_double(part));
    return values;
}

std::vector<std::string> config_to_args(const RunConfig& c) {
    std::vector<std::string> args = {"neurodec", command_name(c.command)};
    auto add = [&](const char* flag, const std::string& value) {
        args.emplace_back(flag);
        args.push_back(value);
    };
    if (!c.dataset.empty()) add("--dataset", c.dataset.string());
    if (!c.out.empty()) add("--out", c.out.string());
    switch (c.command) {
        case Command::prepare:
            if (!c.channels_file.empty()) add("--channels", c.channels_file.string());
            if (c.baseline) {
                add("--baseline", format_double(c.baseline->first) + "," +
                                      format_double(c.baseline->second));
            }
            if (c.downsample_ms) add("--downsample", format_double(*c.downsample_ms));
            break;
        case Command::spectrogram:
            add("--audio", c.audio.string());
            add("--filterbank", std::to_string(c.filterbank.n_channels) + "," +
                                    format_double(c.filterbank.f_min_hz) + "," +
                                    format_double(c.filterbank.f_max_hz) + "," +
                                    format_double(c.filterbank.frame_period_ms));
            break;
        case Command::fit:
        case Command::evaluate:
            add("--lag-ms", format_double(c.lag_ms));
            add("--kernel", kernel_to_string(c.kernel));
            if (c.lambda_grid) {
                add("--lambda-grid", format_double(c.lambda_grid->values.front()) + "," +
                                         format_double(c.lambda_grid->values.back()) + "," +
                                         std::to_string(c.lambda_grid->values.size()));
            }
            if (c.command == Command::evaluate) {
                if (c.pair_sample) add("--pair-sample", std::to_string(*c.pair_sample));
                if (c.gnuplot) args.emplace_back("--gnuplot");
            }
            break;
        case Command::sweep:
            add("--lags-ms", join_doubles(c.lags_ms));
            add("--kernel", kernel_to_string(c.kernel));
            if (c.lambda_grid) {
                add("--lambda-grid", format_double(c.lambda_grid->values.front()) + "," +
                                         format_double(c.lambda_grid->values.back()) + "," +
                                         std::to_string(c.lambda_grid->values.size()));
            }
            if (c.pair_sample) add("--pair-sample", std::to_string(*c.pair_sample));
            if (c.gnuplot) args.emplace_back("--gnuplot");
            break;
        case Command::predict:
            add("--model", c.model.string());
            if (!c.stimulus_ids.empty()) {
                std::string ids;
                for (std::size_t i = 0; i < c.stimulus_ids.size(); ++i) {
                    if (i) ids += ',';
                    ids += c.stimulus_ids[i];
                }
                add("--ids", ids);
            }
            break;
        case Command::synth:
            add("--n-stimuli", std::to_string(c.synth.n_stimuli));
            add("--channels", std::to_string(c.synth.channels));
            add("--freq-channels", std::to_string(c.synth.freq_channels));
            add("--frames", c.synth.frames_min == c.synth.frames_max
                                ? std::to_string(c.synth.frames_min)
                                : std::to_string(c.synth.frames_min) + ":" +
                                      std::to_string(c.synth.frames_max));
            add("--lag-bins", std::to_string(c.synth.lag_bins_true));
            add("--snr", std::isinf(c.synth.snr) ? "inf" : format_double(c.synth.snr));
            add("--frame-period", format_double(c.synth.frame_period_ms));
            if (!c.synth.g_support.empty()) {
                std::string support;
                for (std::size_t i = 0; i < c.synth.g_support.size(); ++i) {
                    if (i) support += ',';
                    support += std::to_string(c.synth.g_support[i]);
                }
                add("--g-support", support);
            }
            if (c.synth.g_lag_support) {
                add("--g-lag-support", std::to_string(c.synth.g_lag_support->first) + "," +
                                           std::to_string(c.synth.g_lag_support->second));
            }
            if (c.synth.channel_rank > 0) {
                add("--channel-rank", std::to_string(c.synth.channel_rank));
            }
            break;
    }
    add("--seed", std::to_string(c.seed));
    add("--threads", std::to_string(c.threads));
    return args;
}

}  // namespace neurodec
