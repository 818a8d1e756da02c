#pragma once

#include <utility>

#include "neurodec/types.hpp"

namespace neurodec {

// A causal lag window: a stimulus frame at time t is paired with response
// frames t .. t + lag_bins - 1. lag_bins = lag_ms / frame_period_ms + 1, so
// lag 0 keeps the simultaneous frame only.
struct LagSpec {
    double lag_ms = 0.0;
    double frame_period_ms = 1.0;
    int lag_bins = 1;
};

// Validates lag_ms >= 0, frame_period_ms > 0 and that lag_ms is an integer
// multiple of the frame period.
LagSpec make_lag_spec(double lag_ms, double frame_period_ms);
std::vector<LagSpec> lag_grid_from_ms(const std::vector<double>& lags_ms, double frame_period_ms);

// Identifies the (stimulus, frame) a design/target row came from.
struct RowRef {
    std::string stimulus_id;
    int frame = 0;

    friend bool operator==(const RowRef&, const RowRef&) = default;
};

// Stacked per-frame response windows: row (n, t) holds the response at frames
// t .. t + lag_bins - 1, ordered lag-major then channel, i.e. all channels at
// lag 0, then all channels at lag 1, and so on. Lags past the end of the
// recording are zero-filled.
struct LaggedDesign {
    Matrix rows;  // (sum of frames) x (lag_bins * channels)
    std::vector<RowRef> row_index;
    LagSpec lag_spec;
    std::vector<std::string> channel_names;
};

// Stacked spectrogram frames with a row index identical to the design's.
struct TargetMatrix {
    Matrix values;  // (sum of frames) x freq_channels
    std::vector<RowRef> row_index;
};

struct LagOptions {
    // Frames a spectrogram may extend past its recording before it is an
    // error; overrun frames are zero-filled like trailing lags.
    int overrun_frames_tolerance = 0;
};

// Builds design and target rows for the listed stimuli, concatenated in the
// given order. Requires recordings already on the spectrogram timebase
// (sample period == frame period == spec.frame_period_ms) and the stimulus
// onset to fall exactly on a sample.
std::pair<LaggedDesign, TargetMatrix> build_lagged_design(const Dataset& ds, const LagSpec& spec,
                                                          const std::vector<std::string>& stimulus_ids,
                                                          const LagOptions& opts = {});

}  // namespace neurodec
