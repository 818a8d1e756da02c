#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "neurodec/errors.hpp"

namespace neurodec {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Multichannel response to one stimulus, channels x samples, with the time of
// the first sample expressed relative to stimulus onset (negative = pre-onset
// context).
struct Recording {
    std::string stimulus_id;
    Matrix data;  // channels x samples
    double sample_period_ms = 1.0;
    double t0_offset_ms = 0.0;
    std::vector<std::string> channel_names;

    Eigen::Index channels() const { return data.rows(); }
    Eigen::Index samples() const { return data.cols(); }
    double time_of_sample(Eigen::Index i) const {
        return t0_offset_ms + sample_period_ms * static_cast<double>(i);
    }
};

// Frequency x time energy representation of one stimulus. Frame 0 starts at
// stimulus onset; center_freqs_hz must be strictly increasing.
struct Spectrogram {
    std::string stimulus_id;
    Matrix data;  // freq_channels x frames
    double frame_period_ms = 1.0;
    std::vector<double> center_freqs_hz;

    Eigen::Index freq_channels() const { return data.rows(); }
    Eigen::Index frames() const { return data.cols(); }
};

// Per-column mean and population standard deviation. Columns whose deviation
// fell below epsilon at fit time are recorded with std 0 and map to zero when
// applied, so constant columns cannot inject NaNs downstream.
struct StandardizationStats {
    Vector means;
    Vector stds;
    double epsilon = 1e-12;

    Eigen::Index size() const { return means.size(); }
};

// Paired recordings and spectrograms. Pairing is by stimulus_id: every id
// appears exactly once on each side.
struct Dataset {
    std::vector<Recording> recordings;
    std::vector<Spectrogram> spectrograms;

    std::size_t size() const { return recordings.size(); }
    // Ids in recording order; this is the canonical stimulus ordering.
    std::vector<std::string> stimulus_ids() const;
    const Recording& recording(const std::string& id) const;
    const Spectrogram& spectrogram(const std::string& id) const;
    // Throws ValidationError on duplicate or unpaired ids.
    void validate_pairing() const;
};

}  // namespace neurodec
