#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "neurodec/audiofeat.hpp"
#include "neurodec/decoder.hpp"
#include "neurodec/synth.hpp"

namespace neurodec {

enum class Command { prepare, spectrogram, fit, predict, evaluate, sweep, synth };

// Fully resolved invocation of one subcommand. run() owns dispatch, output
// layout and the exit-code contract: 0 success, 1 usage, 2 data/validation,
// 3 numerical. Every output directory receives rerun.txt (an exact
// re-runnable command line) and config.json (the resolved settings).
struct RunConfig {
    Command command = Command::evaluate;

    std::filesystem::path dataset;  // manifest path or its directory
    std::filesystem::path out;
    std::filesystem::path model;           // predict: fitted model directory
    std::filesystem::path audio;           // spectrogram: audio manifest
    std::filesystem::path channels_file;   // prepare: one channel name per line
    std::vector<std::string> stimulus_ids; // predict subset; empty = all

    double lag_ms = 0.0;
    std::vector<double> lags_ms;  // sweep
    KernelSpec kernel = KernelSpec::linear();
    std::optional<LambdaGrid> lambda_grid;
    std::optional<int> pair_sample;
    std::uint64_t seed = 0;
    int threads = 1;
    FilterbankSpec filterbank;
    std::optional<std::pair<double, double>> baseline;  // prepare: window in ms
    std::optional<double> downsample_ms;                // prepare
    bool gnuplot = false;
    SynthConfig synth;
};

int run(const RunConfig& config);

// Flag-value parsers, shared by the binary and the tests.
KernelSpec parse_kernel(const std::string& text);            // "linear" | "gaussian:G"
LambdaGrid parse_lambda_grid(const std::string& text);       // "min,max,count"
FilterbankSpec parse_filterbank(const std::string& text);    // "n,fmin,fmax,hop_ms"
std::pair<double, double> parse_window(const std::string& text);  // "start,end"
std::vector<double> parse_double_list(const std::string& text);

// The canonical command line reproducing this config, starting with the
// program name.
std::vector<std::string> config_to_args(const RunConfig& config);

}  // namespace neurodec
