#pragma once

#include <filesystem>

#include "neurodec/types.hpp"

namespace neurodec {

// Raw float64 blob, little-endian, row-major, no header. The byte length must
// equal rows * cols * 8 exactly.
Matrix read_blob(const std::filesystem::path& path, Eigen::Index rows, Eigen::Index cols);
void write_blob(const std::filesystem::path& path, const Matrix& m);

// Loads a dataset directory via its manifest. Validates shapes against the
// manifest, rejects non-finite values (reporting stimulus id, flat element
// index and byte offset), and checks recording/spectrogram pairing.
Dataset load_dataset(const std::filesystem::path& manifest_path);

// Writes manifest.json plus one blob per recording and spectrogram into dir.
// Requires uniform sampling metadata across stimuli. Returns the manifest
// path; a save/load round trip is bit-exact.
std::filesystem::path save_dataset(const Dataset& ds, const std::filesystem::path& dir);

// Subtracts the per-channel mean over samples with time in
// [window_start_ms, window_end_ms). The window must be non-empty and overlap
// the recording.
Recording baseline_correct(const Recording& rec, double window_start_ms, double window_end_ms);

// Block-averages non-overlapping groups of samples so the period becomes
// target_period_ms. The ratio must be a positive integer; a trailing partial
// block is dropped; t0_offset_ms is unchanged.
Recording downsample(const Recording& rec, double target_period_ms);

// Restricts and reorders rows to the given channel names.
Recording select_channels(const Recording& rec, const std::vector<std::string>& names);

// Per-column mean / population std over the rows (at least one row required).
StandardizationStats fit_standardizer(const Matrix& rows);
// (x - mean) / std per column; columns recorded with std 0 map to zero.
Matrix apply_standardizer(const Matrix& rows, const StandardizationStats& stats);

// Downsamples every recording to its spectrogram's frame period. No-op for
// already-aligned pairs; errors if a ratio is not a positive integer.
Dataset align_timebase(Dataset ds);

}  // namespace neurodec
