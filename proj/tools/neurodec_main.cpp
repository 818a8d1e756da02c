#include <CLI11.hpp>
#include <json.hpp>

#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include "neurodec/cli.hpp"

namespace {

std::vector<std::string> split_on(const std::string& text, char sep) {
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

// Raw flag values; converted to a RunConfig only after CLI11 accepts the
// invocation, so conversion failures are reported as usage errors.
struct RawArgs {
    std::string dataset, out, model, audio, channels_file, ids;
    double lag_ms = 0.0;
    std::string lags_ms;
    std::string kernel = "linear";
    std::string lambda_grid;
    int pair_sample = -1;
    std::uint64_t seed = 0;
    int threads = 1;
    std::string filterbank;
    std::string compression = "log_power";
    std::string baseline;
    double downsample_ms = 0.0;
    bool gnuplot = false;
    int n_stimuli = 12;
    int channels = 8;
    int freq_channels = 16;
    std::string frames = "100";
    int lag_bins = 3;
    std::string snr = "10";
    double frame_period = 10.0;
    std::string g_support;
    std::string g_lag_support;
    int channel_rank = 0;
};

int usage_failure(const std::string& message) {
    nlohmann::json j = {{"error", {{"code", 1}, {"type", "usage"}, {"message", message}}}};
    std::cerr << message << "\n" << j.dump() << "\n";
    return 1;
}

neurodec::RunConfig to_config(neurodec::Command command, const RawArgs& raw, CLI::App* sub) {
    neurodec::RunConfig config;
    config.command = command;
    config.dataset = raw.dataset;
    config.out = raw.out;
    config.model = raw.model;
    config.audio = raw.audio;
    config.channels_file = raw.channels_file;
    config.lag_ms = raw.lag_ms;
    config.seed = raw.seed;
    config.threads = raw.threads;
    config.gnuplot = raw.gnuplot;
    if (!raw.ids.empty()) {
        for (const auto& id : split_on(raw.ids, ',')) {
            config.stimulus_ids.push_back(id);
        }
    }
    if (!raw.lags_ms.empty()) config.lags_ms = neurodec::parse_double_list(raw.lags_ms);
    config.kernel = neurodec::parse_kernel(raw.kernel);
    if (!raw.lambda_grid.empty()) {
        config.lambda_grid = neurodec::parse_lambda_grid(raw.lambda_grid);
    }
    const CLI::Option* pair_sample = sub->get_option_no_throw("--pair-sample");
    if (pair_sample && pair_sample->count()) config.pair_sample = raw.pair_sample;
    if (!raw.filterbank.empty()) config.filterbank = neurodec::parse_filterbank(raw.filterbank);
    if (raw.compression == "linear") {
        config.filterbank.compression = neurodec::Compression::linear;
    } else if (raw.compression == "log_power") {
        config.filterbank.compression = neurodec::Compression::log_power;
    } else {
        throw neurodec::ValidationError("unknown compression '" + raw.compression + "'");
    }
    if (!raw.baseline.empty()) config.baseline = neurodec::parse_window(raw.baseline);
    const CLI::Option* downsample = sub->get_option_no_throw("--downsample");
    if (downsample && downsample->count()) config.downsample_ms = raw.downsample_ms;

    config.synth.n_stimuli = raw.n_stimuli;
    config.synth.channels = raw.channels;
    config.synth.freq_channels = raw.freq_channels;
    config.synth.lag_bins_true = raw.lag_bins;
    config.synth.frame_period_ms = raw.frame_period;
    config.synth.channel_rank = raw.channel_rank;
    auto frames = split_on(raw.frames, ':');
    if (frames.size() == 1) {
        config.synth.frames_min = config.synth.frames_max = std::stoi(frames[0]);
    } else if (frames.size() == 2) {
        config.synth.frames_min = std::stoi(frames[0]);
        config.synth.frames_max = std::stoi(frames[1]);
    } else {
        throw neurodec::ValidationError("--frames must be N or MIN:MAX");
    }
    if (raw.snr == "inf") {
        config.synth.snr = std::numeric_limits<double>::infinity();
    } else {
        config.synth.snr = std::stod(raw.snr);
    }
    if (!raw.g_support.empty()) {
        for (double v : neurodec::parse_double_list(raw.g_support)) {
            config.synth.g_support.push_back(static_cast<int>(v));
        }
    }
    if (!raw.g_lag_support.empty()) {
        auto window = neurodec::parse_window(raw.g_lag_support);
        config.synth.g_lag_support = {static_cast<int>(window.first),
                                      static_cast<int>(window.second)};
    }
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kernel ridge decoder: time-varying spectrograms from multichannel responses"};
    app.require_subcommand(1);
    RawArgs raw;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--out", raw.out, "output directory")->required();
        sub->add_option("--seed", raw.seed, "random seed");
        sub->add_option("--threads", raw.threads, "worker threads");
    };
    auto add_eval_flags = [&](CLI::App* sub) {
        sub->add_option("--kernel", raw.kernel, "linear or gaussian:G");
        sub->add_option("--lambda-grid", raw.lambda_grid, "min,max,count (log-spaced)");
        sub->add_option("--pair-sample", raw.pair_sample, "evaluate only this many pairs");
        sub->add_flag("--gnuplot", raw.gnuplot, "also write plot-ready .dat files");
    };

    CLI::App* prepare = app.add_subcommand("prepare", "baseline, channel and timebase cleanup");
    prepare->add_option("--dataset", raw.dataset, "input dataset manifest")->required();
    prepare->add_option("--channels", raw.channels_file, "file naming channels to keep");
    prepare->add_option("--baseline", raw.baseline, "start,end window in ms");
    prepare->add_option("--downsample", raw.downsample_ms, "target sample period in ms");
    add_common(prepare);

    CLI::App* spectrogram =
        app.add_subcommand("spectrogram", "compute stimulus spectrograms from audio");
    spectrogram->add_option("--audio", raw.audio, "audio manifest")->required();
    spectrogram->add_option("--dataset", raw.dataset,
                            "pair the spectrograms with this dataset's recordings");
    spectrogram->add_option("--filterbank", raw.filterbank, "n,fmin,fmax,hop_ms");
    spectrogram->add_option("--compression", raw.compression, "linear or log_power");
    add_common(spectrogram);

    CLI::App* fit = app.add_subcommand("fit", "fit a decoder on the whole dataset");
    fit->add_option("--dataset", raw.dataset, "input dataset manifest")->required();
    fit->add_option("--lag-ms", raw.lag_ms, "response window length in ms")->required();
    fit->add_option("--kernel", raw.kernel, "linear or gaussian:G");
    fit->add_option("--lambda-grid", raw.lambda_grid, "min,max,count (log-spaced)");
    add_common(fit);

    CLI::App* predict = app.add_subcommand("predict", "predict spectrograms with a saved model");
    predict->add_option("--model", raw.model, "fitted model directory")->required();
    predict->add_option("--dataset", raw.dataset, "input dataset manifest")->required();
    predict->add_option("--ids", raw.ids, "comma-separated stimulus ids (default: all)");
    add_common(predict);

    CLI::App* evaluate = app.add_subcommand("evaluate", "leave-two-out pair discrimination");
    evaluate->add_option("--dataset", raw.dataset, "input dataset manifest")->required();
    evaluate->add_option("--lag-ms", raw.lag_ms, "response window length in ms")->required();
    add_eval_flags(evaluate);
    add_common(evaluate);

    CLI::App* sweep = app.add_subcommand("sweep", "evaluate across response window lengths");
    sweep->add_option("--dataset", raw.dataset, "input dataset manifest")->required();
    sweep->add_option("--lags-ms", raw.lags_ms, "comma-separated window lengths")->required();
    add_eval_flags(sweep);
    add_common(sweep);

    CLI::App* synth = app.add_subcommand("synth", "generate a forward-model dataset");
    synth->add_option("--n-stimuli", raw.n_stimuli, "stimulus count");
    synth->add_option("--channels", raw.channels, "response channels");
    synth->add_option("--freq-channels", raw.freq_channels, "spectrogram channels");
    synth->add_option("--frames", raw.frames, "frames per stimulus, N or MIN:MAX");
    synth->add_option("--lag-bins", raw.lag_bins, "true response window length in bins");
    synth->add_option("--snr", raw.snr, "signal/noise variance ratio, or inf");
    synth->add_option("--frame-period", raw.frame_period, "frame period in ms");
    synth->add_option("--g-support", raw.g_support, "frequency channels carrying signal");
    synth->add_option("--g-lag-support", raw.g_lag_support, "lo,hi lag bins carrying signal");
    synth->add_option("--channel-rank", raw.channel_rank, "latent rank of the responses");
    add_common(synth);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return usage_failure(e.what());
    }

    neurodec::Command command = neurodec::Command::synth;
    CLI::App* sub = nullptr;
    if (prepare->parsed()) {
        command = neurodec::Command::prepare, sub = prepare;
    } else if (spectrogram->parsed()) {
        command = neurodec::Command::spectrogram, sub = spectrogram;
    } else if (fit->parsed()) {
        command = neurodec::Command::fit, sub = fit;
    } else if (predict->parsed()) {
        command = neurodec::Command::predict, sub = predict;
    } else if (evaluate->parsed()) {
        command = neurodec::Command::evaluate, sub = evaluate;
    } else if (sweep->parsed()) {
        command = neurodec::Command::sweep, sub = sweep;
    } else {
        command = neurodec::Command::synth, sub = synth;
    }

    neurodec::RunConfig config;
    try {
        config = to_config(command, raw, sub);
    } catch (const std::exception& e) {
        return usage_failure(e.what());
    }
    return neurodec::run(config);
}
