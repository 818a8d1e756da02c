#include "neurodec/eval.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "neurodec/lagging.hpp"
#include "neurodec/parallel.hpp"
#include "neurodec/rng.hpp"

namespace neurodec {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Pearson correlation of two equal-length vectors, or nullopt when either is
// (numerically) constant.
std::optional<double> pearson(const Eigen::Map<const Vector>& x,
                              const Eigen::Map<const Vector>& y) {
    auto n = static_cast<double>(x.size());
    Vector cx = x.array() - x.sum() / n;
    Vector cy = y.array() - y.sum() / n;
    double sx = cx.squaredNorm();
    double sy = cy.squaredNorm();
    // Constant vectors can leave rounding residue after centering; treat
    // anything that tiny relative to the raw magnitude as zero variance.
    if (sx <= 1e-24 * std::max(1.0, x.squaredNorm()) ||
        sy <= 1e-24 * std::max(1.0, y.squaredNorm())) {
        return std::nullopt;
    }
    return cx.dot(cy) / std::sqrt(sx * sy);
}

Eigen::Map<const Vector> flatten(const Matrix& m, Eigen::Index frames) {
    return {m.data(), m.rows() * frames};
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ValidationError("cannot create '" + path.string() + "'");
    return out;
}

}  // namespace

PairResult pair_correlation_test(const Spectrogram& s1, const Spectrogram& s2,
                                 const Spectrogram& p1, const Spectrogram& p2) {
    Eigen::Index freq = s1.freq_channels();
    if (s2.freq_channels() != freq || p1.freq_channels() != freq || p2.freq_channels() != freq) {
        throw ValidationError("pair test inputs disagree on frequency channel count");
    }
    Eigen::Index frames = std::min({s1.frames(), s2.frames(), p1.frames(), p2.frames()});
    if (frames < 1) throw ValidationError("pair test needs at least one common frame");

    PairResult result;
    result.id_a = s1.stimulus_id;
    result.id_b = s2.stimulus_id;
    result.truncated_frames =
        static_cast<int>(std::max({s1.frames(), s2.frames(), p1.frames(), p2.frames()}) - frames);

    auto c11 = pearson(flatten(s1.data, frames), flatten(p1.data, frames));
    auto c22 = pearson(flatten(s2.data, frames), flatten(p2.data, frames));
    auto c12 = pearson(flatten(s1.data, frames), flatten(p2.data, frames));
    auto c21 = pearson(flatten(s2.data, frames), flatten(p1.data, frames));
    if (!c11 || !c22 || !c12 || !c21) {
        result.degenerate = true;
        result.correct = false;
        result.corr_matched = kNaN;
        result.corr_swapped = kNaN;
        return result;
    }
    result.corr_matched = *c11 + *c22;
    result.corr_swapped = *c12 + *c21;
    result.correct = result.corr_matched > result.corr_swapped;
    return result;
}

FeatureScores feature_score(const std::vector<Matrix>& originals,
                            const std::vector<Matrix>& predictions) {
    if (originals.empty() || originals.size() != predictions.size()) {
        throw ValidationError("feature_score needs matching non-empty collections");
    }
    Eigen::Index freq = originals.front().rows();
    Eigen::Index max_frames = 0;
    for (std::size_t i = 0; i < originals.size(); ++i) {
        if (originals[i].rows() != freq || predictions[i].rows() != freq) {
            throw ValidationError("feature_score inputs disagree on frequency channel count");
        }
        if (originals[i].cols() != predictions[i].cols()) {
            throw ValidationError("feature_score original/prediction frame counts differ");
        }
        max_frames = std::max(max_frames, originals[i].cols());
    }

    Matrix sum_s = Matrix::Zero(freq, max_frames);
    Matrix sum_sq = Matrix::Zero(freq, max_frames);
    Matrix sse = Matrix::Zero(freq, max_frames);
    Eigen::VectorXi count = Eigen::VectorXi::Zero(max_frames);
    for (std::size_t i = 0; i < originals.size(); ++i) {
        Eigen::Index frames = originals[i].cols();
        sum_s.leftCols(frames) += originals[i];
        sum_sq.leftCols(frames) += originals[i].array().square().matrix();
        sse.leftCols(frames) += (originals[i] - predictions[i]).array().square().matrix();
        count.head(frames).array() += 1;
    }

    FeatureScores scores;
    scores.per_bin = Matrix::Constant(freq, max_frames, kNaN);
    scores.per_freq = Vector::Constant(freq, kNaN);
    for (Eigen::Index f = 0; f < freq; ++f) {
        double total_sse = 0.0;
        double total_var = 0.0;
        for (Eigen::Index t = 0; t < max_frames; ++t) {
            if (count(t) == 0) continue;
            // Sum of squared deviations from the per-bin mean of the originals.
            double var = sum_sq(f, t) - sum_s(f, t) * sum_s(f, t) / count(t);
            total_sse += sse(f, t);
            total_var += var;
            if (var > 0.0) scores.per_bin(f, t) = 1.0 - sse(f, t) / var;
        }
        if (total_var > 0.0) scores.per_freq(f) = 1.0 - total_sse / total_var;
    }
    return scores;
}

std::vector<std::pair<double, double>> rank_features(const Vector& scores,
                                                     const std::vector<double>& center_freqs_hz,
                                                     int k) {
    if (scores.size() != static_cast<Eigen::Index>(center_freqs_hz.size())) {
        throw ValidationError("rank_features: scores and frequencies differ in length");
    }
    if (k < 0 || k > scores.size()) {
        throw ValidationError("rank_features: k must lie in [0, feature count]");
    }
    std::vector<std::pair<double, double>> ranked;  // (freq, score), defined only
    for (Eigen::Index f = 0; f < scores.size(); ++f) {
        if (!std::isnan(scores(f))) {
            ranked.emplace_back(center_freqs_hz[static_cast<std::size_t>(f)], scores(f));
        }
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (ranked.size() > static_cast<std::size_t>(k)) ranked.resize(static_cast<std::size_t>(k));
    return ranked;
}

std::vector<std::pair<std::string, std::string>> leave_two_out_pairs(const Dataset& ds) {
    ds.validate_pairing();
    std::vector<std::string> ids = ds.stimulus_ids();
    std::vector<std::pair<std::string, std::string>> pairs;
    pairs.reserve(ids.size() * (ids.size() - 1) / 2);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        for (std::size_t j = i + 1; j < ids.size(); ++j) {
            pairs.emplace_back(ids[i], ids[j]);
        }
    }
    return pairs;
}

namespace {

// Everything one fold produces; collected per slot so aggregation order never
// depends on the thread count.
struct FoldOutput {
    PairResult result;
    Matrix orig_a, pred_a, orig_b, pred_b;  // truncated to the common frames
};

FoldOutput run_fold(const Dataset& ds, const std::vector<std::string>& ids,
                    const std::pair<std::string, std::string>& pair, const LagSpec& lag,
                    const KernelSpec& kernel, const EvalOptions& opts) {
    std::vector<std::string> train_ids;
    train_ids.reserve(ids.size() - 2);
    for (const auto& id : ids) {
        if (id != pair.first && id != pair.second) train_ids.push_back(id);
    }
    auto [design, targets] = build_lagged_design(ds, lag, train_ids);
    DecoderModel model = fit_ridge_loo(design, targets, kernel, opts.lambda_grid);
    std::vector<Spectrogram> preds = predict(model, ds, {pair.first, pair.second});

    const Spectrogram& sa = ds.spectrogram(pair.first);
    const Spectrogram& sb = ds.spectrogram(pair.second);
    FoldOutput out;
    out.result = pair_correlation_test(sa, sb, preds[0], preds[1]);
    Eigen::Index frames = std::min({sa.frames(), sb.frames(), preds[0].frames(),
                                    preds[1].frames()});
    out.orig_a = sa.data.leftCols(frames);
    out.pred_a = preds[0].data.leftCols(frames);
    out.orig_b = sb.data.leftCols(frames);
    out.pred_b = preds[1].data.leftCols(frames);
    return out;
}

}  // namespace

EvalReport leave_two_out_cv(const Dataset& ds, const LagSpec& lag, const KernelSpec& kernel,
                            const EvalOptions& opts) {
    ds.validate_pairing();
    if (ds.size() < 3) {
        throw ValidationError("leave-two-out needs at least three stimuli, got " +
                              std::to_string(ds.size()));
    }
    std::vector<std::string> ids = ds.stimulus_ids();
    auto pairs = leave_two_out_pairs(ds);

    if (opts.pair_filter) {
        int count = opts.pair_filter->count;
        if (count < 1) throw ValidationError("pair sample count must be positive");
        if (static_cast<std::size_t>(count) < pairs.size()) {
            // Partial Fisher-Yates over the pair indices, then back to
            // canonical order.
            std::vector<std::size_t> index(pairs.size());
            std::iota(index.begin(), index.end(), 0);
            std::mt19937_64 rng = stream_rng(opts.pair_filter->seed, 0x70616972u);
            for (int i = 0; i < count; ++i) {
                std::size_t j = static_cast<std::size_t>(i) +
                                uniform_below(rng, index.size() - static_cast<std::size_t>(i));
                std::swap(index[static_cast<std::size_t>(i)], index[j]);
            }
            index.resize(static_cast<std::size_t>(count));
            std::sort(index.begin(), index.end());
            std::vector<std::pair<std::string, std::string>> sampled;
            sampled.reserve(index.size());
            for (std::size_t i : index) sampled.push_back(pairs[i]);
            pairs = std::move(sampled);
        }
    }

    std::vector<FoldOutput> folds(pairs.size());
    parallel_for(static_cast<int>(pairs.size()), opts.threads, [&](int i) {
        const auto& pair = pairs[static_cast<std::size_t>(i)];
        try {
            folds[static_cast<std::size_t>(i)] = run_fold(ds, ids, pair, lag, kernel, opts);
        } catch (const NumericalError& e) {
            throw NumericalError("fold (" + pair.first + ", " + pair.second + "): " + e.what(),
                                 e.diagnostic());
        } catch (const ValidationError& e) {
            throw ValidationError("fold (" + pair.first + ", " + pair.second + "): " + e.what());
        }
    });

    EvalReport report;
    report.lag_ms = lag.lag_ms;
    report.n_pairs = static_cast<int>(folds.size());
    std::map<std::string, std::pair<int, int>> per_item;  // id -> (correct, total)
    std::vector<Matrix> originals;
    std::vector<Matrix> predictions;
    originals.reserve(2 * folds.size());
    predictions.reserve(2 * folds.size());
    int n_correct = 0;
    for (auto& fold : folds) {
        const PairResult& pr = fold.result;
        n_correct += pr.correct ? 1 : 0;
        report.n_degenerate += pr.degenerate ? 1 : 0;
        auto& a = per_item[pr.id_a];
        a.first += pr.correct ? 1 : 0;
        a.second += 1;
        auto& b = per_item[pr.id_b];
        b.first += pr.correct ? 1 : 0;
        b.second += 1;
        originals.push_back(std::move(fold.orig_a));
        predictions.push_back(std::move(fold.pred_a));
        originals.push_back(std::move(fold.orig_b));
        predictions.push_back(std::move(fold.pred_b));
        report.pair_results.push_back(pr);
    }
    report.accuracy = static_cast<double>(n_correct) / static_cast<double>(folds.size());
    for (const auto& [id, counts] : per_item) {
        report.item_accuracy[id] =
            static_cast<double>(counts.first) / static_cast<double>(counts.second);
    }
    report.feature_scores = feature_score(originals, predictions);
    if (!opts.keep_per_bin_scores) report.feature_scores.per_bin.resize(0, 0);
    return report;
}

std::vector<std::pair<double, EvalReport>> lag_sweep(const Dataset& ds,
                                                     const std::vector<double>& lags_ms,
                                                     const KernelSpec& kernel,
                                                     const EvalOptions& opts) {
    if (lags_ms.empty()) throw ValidationError("lag sweep needs at least one lag");
    if (ds.spectrograms.empty()) throw ValidationError("lag sweep needs a non-empty dataset");
    double frame_period = ds.spectrograms.front().frame_period_ms;
    std::vector<std::pair<double, EvalReport>> rows;
    rows.reserve(lags_ms.size());
    for (const LagSpec& lag : lag_grid_from_ms(lags_ms, frame_period)) {
        rows.emplace_back(lag.lag_ms, leave_two_out_cv(ds, lag, kernel, opts));
    }
    return rows;
}

void write_pairs_csv(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream out = open_for_write(path);
    out << "id_a,id_b,corr_matched,corr_swapped,correct\n";
    for (const auto& pr : report.pair_results) {
        out << pr.id_a << ',' << pr.id_b << ',' << format_double(pr.corr_matched) << ','
            << format_double(pr.corr_swapped) << ',' << (pr.correct ? 1 : 0) << '\n';
    }
    if (!out) throw ValidationError("short write on '" + path.string() + "'");
}

void write_summary_json(const EvalReport& report, const std::filesystem::path& path) {
    nlohmann::json item_accuracy = nlohmann::json::object();
    for (const auto& [id, acc] : report.item_accuracy) item_accuracy[id] = acc;
    nlohmann::json feature_scores = nlohmann::json::array();
    for (Eigen::Index f = 0; f < report.feature_scores.per_freq.size(); ++f) {
        double v = report.feature_scores.per_freq(f);
        if (std::isnan(v)) {
            feature_scores.push_back(nullptr);  // undefined score
        } else {
            feature_scores.push_back(v);
        }
    }
    nlohmann::json j = {{"lag_ms", report.lag_ms},
                        {"accuracy", report.accuracy},
                        {"n_pairs", report.n_pairs},
                        {"n_degenerate", report.n_degenerate},
                        {"item_accuracy", item_accuracy},
                        {"feature_scores", feature_scores}};
    if (report.feature_scores.per_bin.size() > 0) {
        nlohmann::json bins = nlohmann::json::array();
        for (Eigen::Index f = 0; f < report.feature_scores.per_bin.rows(); ++f) {
            nlohmann::json row = nlohmann::json::array();
            for (Eigen::Index t = 0; t < report.feature_scores.per_bin.cols(); ++t) {
                double v = report.feature_scores.per_bin(f, t);
                if (std::isnan(v)) {
                    row.push_back(nullptr);
                } else {
                    row.push_back(v);
                }
            }
            bins.push_back(std::move(row));
        }
        j["per_bin_scores"] = std::move(bins);
    }
    std::ofstream out = open_for_write(path);
    out << j.dump(2) << "\n";
    if (!out) throw ValidationError("short write on '" + path.string() + "'");
}

void write_sweep_csv(const std::vector<std::pair<double, EvalReport>>& rows,
                     const std::filesystem::path& path) {
    std::ofstream out = open_for_write(path);
    out << "lag_ms,accuracy,n_pairs\n";
    for (const auto& [lag, report] : rows) {
        out << format_double(lag) << ',' << format_double(report.accuracy) << ','
            << report.n_pairs << '\n';
    }
    if (!out) throw ValidationError("short write on '" + path.string() + "'");
}

}  // namespace neurodec
