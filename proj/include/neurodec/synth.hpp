#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>

#include "neurodec/eval.hpp"
#include "neurodec/types.hpp"

namespace neurodec {

// Forward-model generator: white Gaussian responses pushed through a planted
// lagged linear map, plus Gaussian noise scaled to hit a target SNR. All
// draws derive from `seed`, with one independent stream per stimulus, so
// regenerating with equal configs is bit-identical.
struct SynthConfig {
    int n_stimuli = 12;
    int channels = 8;
    int freq_channels = 16;
    int frames_min = 100;  // frames per stimulus; a range draws uniformly
    int frames_max = 100;
    int lag_bins_true = 3;
    double snr = 10.0;  // signal variance / noise variance; +inf = noiseless
    std::uint64_t seed = 0;
    double frame_period_ms = 10.0;
    // Frequency columns of the true map left non-zero; empty = all.
    std::vector<int> g_support;
    // Lag bins of the true map left non-zero, [first, last] inclusive.
    std::optional<std::pair<int, int>> g_lag_support;
    // When set (< channels), responses are a rank-limited mixture of this
    // many latent series, giving correlated channels and a singular design.
    int channel_rank = 0;
};

struct SynthTruth {
    Matrix true_g;  // (lag_bins_true * channels) x freq_channels
    double noise_sigma = 0.0;
    SynthConfig config;
};

std::pair<Dataset, SynthTruth> generate_synthetic(const SynthConfig& config);

// truth.json + true_g blob alongside a saved dataset.
void save_truth(const SynthTruth& truth, const std::filesystem::path& dir);
SynthTruth load_truth(const std::filesystem::path& dir);

struct SnrCurveRow {
    double snr = 0.0;
    double accuracy = 0.0;
};

// Regenerates the dataset at each SNR (same seed, same truth dimensions) and
// runs the leave-two-out evaluation at the true lag. Accuracy is
// non-decreasing in SNR up to Monte Carlo noise.
std::vector<SnrCurveRow> snr_curve(const SynthConfig& base, const std::vector<double>& snrs,
                                   const EvalOptions& opts = {});

}  // namespace neurodec
