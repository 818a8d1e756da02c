#pragma once

#include <filesystem>

#include "neurodec/types.hpp"

namespace neurodec {

struct AudioClip {
    std::string stimulus_id;
    Vector samples;
    double sample_rate_hz = 16000.0;

    double duration_ms() const {
        return 1000.0 * static_cast<double>(samples.size()) / sample_rate_hz;
    }
};

enum class Compression {
    linear,    // band energy as-is
    log_power  // log(1 + band energy)
};

struct FilterbankSpec {
    int n_channels = 128;
    double f_min_hz = 180.0;
    double f_max_hz = 7246.0;
    double frame_period_ms = 10.0;
    double window_ms = 25.0;
    Compression compression = Compression::log_power;
};

// Center frequencies log-spaced from f_min to f_max inclusive:
// f_k = f_min * (f_max / f_min)^(k / (n - 1)). n_channels == 2 degenerates to
// {f_min, f_max}.
std::vector<double> filterbank_centers(const FilterbankSpec& spec);

// Triangular filters on a log-frequency axis, one row per channel, one column
// per non-negative FFT bin, each peaking at 1 at its center. Channel k spans
// (center[k-1], center[k+1]) with the span clamped to f_min/f_max at the
// edges.
Matrix design_filterbank(const FilterbankSpec& spec, double sample_rate_hz);

// Short-time energy through the filterbank: Hann-windowed frames every
// frame_period_ms, power spectrum, filter projection, then compression.
// Frame count = floor(n_samples / hop_samples); the tail of the last window
// is zero-padded. Errors if the clip is shorter than one window or the sample
// rate cannot represent f_max.
Spectrogram compute_spectrogram(const AudioClip& clip, const FilterbankSpec& spec);

// Audio manifest: {format_version, sample_rate_hz, clips: [{id, blob,
// samples}]} with one float64 blob per clip next to the manifest.
std::vector<AudioClip> load_audio_manifest(const std::filesystem::path& manifest_path);
std::filesystem::path save_audio_manifest(const std::vector<AudioClip>& clips,
                                          const std::filesystem::path& dir);

}  // namespace neurodec
