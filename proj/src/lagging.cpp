#include "neurodec/lagging.hpp"

#include <cmath>

namespace neurodec {

LagSpec make_lag_spec(double lag_ms, double frame_period_ms) {
    if (!(frame_period_ms > 0.0)) {
        throw ValidationError("frame period must be positive, got " +
                              std::to_string(frame_period_ms));
    }
    if (lag_ms < 0.0) {
        throw ValidationError("lag must be non-negative, got " + std::to_string(lag_ms));
    }
    double steps = lag_ms / frame_period_ms;
    auto rounded = static_cast<long long>(std::llround(steps));
    if (std::abs(steps - static_cast<double>(rounded)) > 1e-6) {
        throw ValidationError("lag " + std::to_string(lag_ms) +
                              " ms is not a multiple of the frame period " +
                              std::to_string(frame_period_ms) + " ms");
    }
    LagSpec spec;
    spec.lag_ms = lag_ms;
    spec.frame_period_ms = frame_period_ms;
    spec.lag_bins = static_cast<int>(rounded) + 1;
    return spec;
}

std::vector<LagSpec> lag_grid_from_ms(const std::vector<double>& lags_ms,
                                      double frame_period_ms) {
    std::vector<LagSpec> grid;
    grid.reserve(lags_ms.size());
    for (double lag : lags_ms) grid.push_back(make_lag_spec(lag, frame_period_ms));
    return grid;
}

std::pair<LaggedDesign, TargetMatrix> build_lagged_design(const Dataset& ds, const LagSpec& spec,
                                                          const std::vector<std::string>& stimulus_ids,
                                                          const LagOptions& opts) {
    if (stimulus_ids.empty()) throw ValidationError("no stimuli requested for lagged design");
    if (spec.lag_bins < 1) throw ValidationError("lag_bins must be at least 1");

    Eigen::Index total_frames = 0;
    Eigen::Index channels = -1;
    Eigen::Index freq_channels = -1;
    for (const auto& id : stimulus_ids) {
        const Recording& rec = ds.recording(id);
        const Spectrogram& sp = ds.spectrogram(id);
        if (rec.sample_period_ms != spec.frame_period_ms) {
            throw ValidationError("stimulus '" + id + "': recording period " +
                                  std::to_string(rec.sample_period_ms) +
                                  " ms differs from the lag frame period " +
                                  std::to_string(spec.frame_period_ms) + " ms");
        }
        if (sp.frame_period_ms != spec.frame_period_ms) {
            throw ValidationError("stimulus '" + id + "': spectrogram frame period " +
                                  std::to_string(sp.frame_period_ms) +
                                  " ms differs from the lag frame period " +
                                  std::to_string(spec.frame_period_ms) + " ms");
        }
        if (channels < 0) {
            channels = rec.channels();
            freq_channels = sp.freq_channels();
        } else if (rec.channels() != channels || sp.freq_channels() != freq_channels) {
            throw ValidationError("stimulus '" + id + "' has inconsistent channel counts");
        }
        if (rec.channel_names != ds.recording(stimulus_ids.front()).channel_names) {
            throw ValidationError("stimulus '" + id + "' names different channels");
        }
        total_frames += sp.frames();
    }

    Eigen::Index lag_bins = spec.lag_bins;
    LaggedDesign design;
    design.lag_spec = spec;
    design.channel_names = ds.recording(stimulus_ids.front()).channel_names;
    design.rows = Matrix::Zero(total_frames, lag_bins * channels);
    design.row_index.reserve(static_cast<std::size_t>(total_frames));
    TargetMatrix targets;
    targets.values.resize(total_frames, freq_channels);
    targets.row_index.reserve(static_cast<std::size_t>(total_frames));

    Eigen::Index row = 0;
    for (const auto& id : stimulus_ids) {
        const Recording& rec = ds.recording(id);
        const Spectrogram& sp = ds.spectrogram(id);

        // The first response frame used for spectrogram frame 0 is the sample
        // at stimulus onset, which must exist and sit exactly on the grid.
        double onset_real = -rec.t0_offset_ms / spec.frame_period_ms;
        auto onset = static_cast<Eigen::Index>(std::llround(onset_real));
        if (std::abs(onset_real - static_cast<double>(onset)) > 1e-6) {
            throw ValidationError("stimulus '" + id + "': onset (t0 offset " +
                                  std::to_string(rec.t0_offset_ms) +
                                  " ms) does not fall on a sample");
        }
        if (onset < 0) {
            throw ValidationError("stimulus '" + id + "': recording starts " +
                                  std::to_string(rec.t0_offset_ms) + " ms after onset");
        }
        Eigen::Index frames = sp.frames();
        Eigen::Index available = rec.samples() - onset;
        if (frames > available + opts.overrun_frames_tolerance) {
            throw ValidationError("stimulus '" + id + "': spectrogram has " +
                                  std::to_string(frames) + " frames but only " +
                                  std::to_string(available) +
                                  " response frames follow the onset");
        }

        for (Eigen::Index t = 0; t < frames; ++t, ++row) {
            for (Eigen::Index lag = 0; lag < lag_bins; ++lag) {
                Eigen::Index src = onset + t + lag;
                if (src < rec.samples()) {
                    design.rows.row(row).segment(lag * channels, channels) =
                        rec.data.col(src).transpose();
                }
                // else: past the recording end, stays zero
            }
            targets.values.row(row) = sp.data.col(t).transpose();
            RowRef ref{id, static_cast<int>(t)};
            design.row_index.push_back(ref);
            targets.row_index.push_back(std::move(ref));
        }
    }
    return {std::move(design), std::move(targets)};
}

}  // namespace neurodec
