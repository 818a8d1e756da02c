#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>

#include "neurodec/decoder.hpp"
#include "neurodec/types.hpp"

namespace neurodec {

// One two-alternative trial: correct iff
// corr(s1,p1) + corr(s2,p2) > corr(s1,p2) + corr(s2,p1), strictly. Pearson
// correlations are taken over the flattened frequency x time blocks after
// truncating all four matrices to the shorter pair member; truncated_frames
// records how many frames the longer member lost. A zero-variance flattened
// vector makes the trial degenerate: flagged and counted incorrect.
struct PairResult {
    std::string id_a;
    std::string id_b;
    double corr_matched = 0.0;
    double corr_swapped = 0.0;
    bool correct = false;
    bool degenerate = false;
    int truncated_frames = 0;
};

PairResult pair_correlation_test(const Spectrogram& s1, const Spectrogram& s2,
                                 const Spectrogram& p1, const Spectrogram& p2);

// Per-feature fraction of variance explained across a collection of
// (original, prediction) pairs: 1 - sum((s - s_hat)^2) / sum((s - s_bar)^2),
// where s_bar is the per-(frequency, frame) mean of the originals. Undefined
// entries (zero denominator) are NaN.
struct FeatureScores {
    Vector per_freq;  // freq_channels
    Matrix per_bin;   // freq_channels x max frames, NaN where undefined
};

FeatureScores feature_score(const std::vector<Matrix>& originals,
                            const std::vector<Matrix>& predictions);

// Top-k (frequency_hz, score) sorted by score descending, ties broken toward
// the lower frequency; undefined (NaN) scores are excluded.
std::vector<std::pair<double, double>> rank_features(const Vector& scores,
                                                     const std::vector<double>& center_freqs_hz,
                                                     int k);

struct PairSampleSpec {
    int count = 0;
    std::uint64_t seed = 0;
};

struct EvalOptions {
    int threads = 1;
    std::optional<PairSampleSpec> pair_filter;  // deterministic subsample
    std::optional<LambdaGrid> lambda_grid;      // default: per-fold scaled grid
    bool keep_per_bin_scores = false;
};

struct EvalReport {
    double lag_ms = 0.0;
    std::vector<PairResult> pair_results;
    double accuracy = 0.0;
    int n_pairs = 0;
    int n_degenerate = 0;
    std::map<std::string, double> item_accuracy;  // mean over trials involving the id
    FeatureScores feature_scores;
};

// All unordered stimulus pairs in canonical (index) order; the fold list of
// the cross-validation below.
std::vector<std::pair<std::string, std::string>> leave_two_out_pairs(const Dataset& ds);

// For every fold: hold out one pair, fit a fresh decoder on the remaining
// stimuli (standardizers and lambdas re-estimated per fold), predict the two
// held-out spectrograms and run the pair test. Results are aggregated in
// canonical fold order regardless of thread count.
EvalReport leave_two_out_cv(const Dataset& ds, const LagSpec& lag, const KernelSpec& kernel,
                            const EvalOptions& opts = {});

// Runs the cross-validation once per lag; one (lag_ms, report) row per entry,
// in input order.
std::vector<std::pair<double, EvalReport>> lag_sweep(const Dataset& ds,
                                                     const std::vector<double>& lags_ms,
                                                     const KernelSpec& kernel,
                                                     const EvalOptions& opts = {});

// One row per pair: id_a,id_b,corr_matched,corr_swapped,correct.
void write_pairs_csv(const EvalReport& report, const std::filesystem::path& path);
// Accuracy, per-item accuracies and per-frequency scores as JSON (NaN -> null).
void write_summary_json(const EvalReport& report, const std::filesystem::path& path);
// lag_ms,accuracy,n_pairs per row.
void write_sweep_csv(const std::vector<std::pair<double, EvalReport>>& rows,
                     const std::filesystem::path& path);

}  // namespace neurodec
