#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "neurodec/eval.hpp"
#include "neurodec/lagging.hpp"
#include "test_support.hpp"

using neurodec::Dataset;
using neurodec::EvalOptions;
using neurodec::EvalReport;
using neurodec::KernelSpec;
using neurodec::Matrix;
using neurodec::PairResult;
using neurodec::Recording;
using neurodec::Spectrogram;
using neurodec::ValidationError;
using neurodec::Vector;
using testsupport::contains;
using testsupport::message_of;
using testsupport::TempDir;

namespace {

Spectrogram make_spec(const std::string& id, const Matrix& data) {
    Spectrogram sp;
    sp.stimulus_id = id;
    sp.frame_period_ms = 10.0;
    sp.data = data;
    for (Eigen::Index f = 0; f < data.rows(); ++f) {
        sp.center_freqs_hz.push_back(100.0 * static_cast<double>(f + 1));
    }
    return sp;
}

// Dataset with a planted lagged linear map plus a little noise, strong enough
// that the cross-validation should get every pair right.
Dataset make_cv_dataset(std::uint64_t seed, int n_stimuli, Eigen::Index channels,
                        Eigen::Index freq_channels, Eigen::Index base_frames, int lag_bins,
                        double noise_scale = 0.05) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    Dataset ds;
    neurodec::LagSpec spec =
        neurodec::make_lag_spec(10.0 * static_cast<double>(lag_bins - 1), 10.0);
    Matrix g = testsupport::random_matrix(rng, lag_bins * channels, freq_channels);
    for (int i = 0; i < n_stimuli; ++i) {
        Eigen::Index frames = base_frames + 2 * i;  // ragged on purpose
        Recording rec;
        rec.stimulus_id = "s" + std::to_string(i);
        rec.sample_period_ms = 10.0;
        rec.data = testsupport::random_matrix(rng, channels, frames + lag_bins - 1);
        for (Eigen::Index c = 0; c < channels; ++c) {
            rec.channel_names.push_back("ch" + std::to_string(c));
        }
        ds.recordings.push_back(std::move(rec));
        ds.spectrograms.push_back(make_spec("s" + std::to_string(i),
                                            Matrix::Zero(freq_channels, frames)));
    }
    for (int i = 0; i < n_stimuli; ++i) {
        auto [d, t] =
            neurodec::build_lagged_design(ds, spec, {ds.recordings[static_cast<std::size_t>(i)].stimulus_id});
        Matrix clean = (d.rows * g).transpose();
        for (Eigen::Index r = 0; r < clean.rows(); ++r) {
            for (Eigen::Index c = 0; c < clean.cols(); ++c) {
                clean(r, c) += noise_scale * normal(rng);
            }
        }
        ds.spectrograms[static_cast<std::size_t>(i)].data = clean;
    }
    return ds;
}

bool reports_identical(const EvalReport& a, const EvalReport& b) {
    if (a.accuracy != b.accuracy || a.n_pairs != b.n_pairs || a.n_degenerate != b.n_degenerate) {
        return false;
    }
    if (a.pair_results.size() != b.pair_results.size()) return false;
    for (std::size_t i = 0; i < a.pair_results.size(); ++i) {
        const PairResult& x = a.pair_results[i];
        const PairResult& y = b.pair_results[i];
        if (x.id_a != y.id_a || x.id_b != y.id_b || x.corr_matched != y.corr_matched ||
            x.corr_swapped != y.corr_swapped || x.correct != y.correct) {
            return false;
        }
    }
    if (a.item_accuracy != b.item_accuracy) return false;
    return (a.feature_scores.per_freq.array() == b.feature_scores.per_freq.array()).all();
}

}  // namespace

TEST_CASE("matched predictions win the pair test") {
    std::mt19937_64 rng(41);
    Matrix a = testsupport::random_matrix(rng, 3, 10);
    Matrix b = testsupport::random_matrix(rng, 3, 10);
    Spectrogram s1 = make_spec("a", a);
    Spectrogram s2 = make_spec("b", b);

    PairResult good = neurodec::pair_correlation_test(s1, s2, s1, s2);
    CHECK(good.correct);
    CHECK_FALSE(good.degenerate);
    CHECK(good.corr_matched == doctest::Approx(2.0));
    CHECK(good.truncated_frames == 0);
    CHECK(good.id_a == "a");

    PairResult swapped = neurodec::pair_correlation_test(s1, s2, s2, s1);
    CHECK_FALSE(swapped.correct);
    CHECK(swapped.corr_swapped == doctest::Approx(2.0));
}

TEST_CASE("a tie is not a win") {
    std::mt19937_64 rng(42);
    Spectrogram s1 = make_spec("a", testsupport::random_matrix(rng, 2, 8));
    Spectrogram s2 = make_spec("b", testsupport::random_matrix(rng, 2, 8));
    Spectrogram p = make_spec("p", testsupport::random_matrix(rng, 2, 8));

    // Identical predictions for both stimuli make the sums equal exactly.
    PairResult tie = neurodec::pair_correlation_test(s1, s2, p, p);
    CHECK(tie.corr_matched == tie.corr_swapped);
    CHECK_FALSE(tie.correct);
}

TEST_CASE("zero-variance predictions are degenerate, not lucky") {
    std::mt19937_64 rng(43);
    Spectrogram s1 = make_spec("a", testsupport::random_matrix(rng, 2, 8));
    Spectrogram s2 = make_spec("b", testsupport::random_matrix(rng, 2, 8));
    Spectrogram flat = make_spec("flat", Matrix::Constant(2, 8, 3.25));

    PairResult r = neurodec::pair_correlation_test(s1, s2, flat, s2);
    CHECK(r.degenerate);
    CHECK_FALSE(r.correct);
    CHECK(std::isnan(r.corr_matched));
    CHECK(std::isnan(r.corr_swapped));
}

TEST_CASE("pair test truncates to the shorter member") {
    std::mt19937_64 rng(44);
    Matrix long_a = testsupport::random_matrix(rng, 2, 10);
    Matrix short_b = testsupport::random_matrix(rng, 2, 8);
    Spectrogram s1 = make_spec("a", long_a);
    Spectrogram s2 = make_spec("b", short_b);
    Spectrogram p1 = make_spec("a", long_a);
    Spectrogram p2 = make_spec("b", short_b);

    PairResult r = neurodec::pair_correlation_test(s1, s2, p1, p2);
    CHECK(r.truncated_frames == 2);
    CHECK(r.correct);

    // Only the first 8 frames participate: altering the tail changes nothing.
    Matrix tweaked = long_a;
    tweaked.col(9).array() += 100.0;
    PairResult same = neurodec::pair_correlation_test(make_spec("a", tweaked), s2,
                                                      p1, p2);
    CHECK(same.corr_matched == r.corr_matched);

    Spectrogram wrong_freq = make_spec("w", testsupport::random_matrix(rng, 3, 8));
    CHECK_THROWS_AS(neurodec::pair_correlation_test(s1, s2, wrong_freq, p2), ValidationError);
}

TEST_CASE("feature scores hit 1 for perfect and 0 for mean predictions") {
    std::mt19937_64 rng(45);
    std::vector<Matrix> originals = {testsupport::random_matrix(rng, 3, 6),
                                     testsupport::random_matrix(rng, 3, 6)};

    auto perfect = neurodec::feature_score(originals, originals);
    for (Eigen::Index f = 0; f < 3; ++f) CHECK(perfect.per_freq(f) == doctest::Approx(1.0));

    // Predicting the per-bin mean of the originals scores exactly zero.
    Matrix mean = 0.5 * (originals[0] + originals[1]);
    auto zero = neurodec::feature_score(originals, {mean, mean});
    for (Eigen::Index f = 0; f < 3; ++f) {
        CHECK(zero.per_freq(f) == doctest::Approx(0.0).epsilon(1e-12));
    }

    // The classic two-point example: originals {1, 3}, predictions {2, 2}.
    std::vector<Matrix> toy_orig = {Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 3.0)};
    std::vector<Matrix> toy_pred = {Matrix::Constant(1, 1, 2.0), Matrix::Constant(1, 1, 2.0)};
    CHECK(neurodec::feature_score(toy_orig, toy_pred).per_freq(0) == doctest::Approx(0.0));
}

TEST_CASE("feature scores ignore collection order and flag constant bins") {
    std::mt19937_64 rng(46);
    std::vector<Matrix> originals;
    std::vector<Matrix> predictions;
    for (int i = 0; i < 4; ++i) {
        originals.push_back(testsupport::random_matrix(rng, 2, 5 + i));  // ragged
        predictions.push_back(originals.back() +
                              0.1 * testsupport::random_matrix(rng, 2, 5 + i));
    }
    auto forward = neurodec::feature_score(originals, predictions);

    std::vector<Matrix> ro = {originals[2], originals[0], originals[3], originals[1]};
    std::vector<Matrix> rp = {predictions[2], predictions[0], predictions[3], predictions[1]};
    auto shuffled = neurodec::feature_score(ro, rp);
    CHECK((forward.per_freq - shuffled.per_freq).cwiseAbs().maxCoeff() <= 1e-12);

    // A frequency that never varies has no variance to explain.
    std::vector<Matrix> flat = {Matrix::Constant(1, 4, 2.0), Matrix::Constant(1, 4, 2.0)};
    auto undefined = neurodec::feature_score(flat, flat);
    CHECK(std::isnan(undefined.per_freq(0)));

    CHECK_THROWS_AS(neurodec::feature_score({originals[0]}, {predictions[1]}),
                    ValidationError);
    CHECK_THROWS_AS(neurodec::feature_score({}, {}), ValidationError);
}

TEST_CASE("rank_features sorts by score with ties toward lower frequencies") {
    Vector scores(4);
    scores << 0.5, 0.9, std::numeric_limits<double>::quiet_NaN(), 0.9;
    std::vector<double> freqs = {100.0, 200.0, 300.0, 400.0};

    auto top = neurodec::rank_features(scores, freqs, 4);
    REQUIRE(top.size() == 3);  // the NaN entry is excluded
    CHECK(top[0] == std::pair<double, double>{200.0, 0.9});
    CHECK(top[1] == std::pair<double, double>{400.0, 0.9});
    CHECK(top[2] == std::pair<double, double>{100.0, 0.5});

    CHECK(neurodec::rank_features(scores, freqs, 1).size() == 1);
    CHECK(neurodec::rank_features(scores, freqs, 0).empty());
    CHECK_THROWS_AS(neurodec::rank_features(scores, freqs, 5), ValidationError);
    CHECK_THROWS_AS(neurodec::rank_features(scores, {100.0}, 1), ValidationError);
}

TEST_CASE("leave_two_out_pairs enumerates canonical unordered pairs") {
    Dataset ds = make_cv_dataset(47, 5, 2, 3, 10, 1);
    auto pairs = neurodec::leave_two_out_pairs(ds);
    REQUIRE(pairs.size() == 10);
    CHECK(pairs[0] == std::pair<std::string, std::string>{"s0", "s1"});
    CHECK(pairs[1] == std::pair<std::string, std::string>{"s0", "s2"});
    CHECK(pairs.back() == std::pair<std::string, std::string>{"s3", "s4"});
}

TEST_CASE("cross-validation aggregates folds the same at any thread count") {
    Dataset ds = make_cv_dataset(48, 5, 3, 4, 30, 2);
    auto lag = neurodec::make_lag_spec(10.0, 10.0);

    EvalOptions one;
    one.threads = 1;
    EvalReport r1 = neurodec::leave_two_out_cv(ds, lag, KernelSpec::linear(), one);
    CHECK(r1.n_pairs == 10);
    CHECK(r1.accuracy == 1.0);  // planted map, light noise
    CHECK(r1.n_degenerate == 0);
    REQUIRE(r1.item_accuracy.size() == 5);
    for (const auto& [id, acc] : r1.item_accuracy) CHECK(acc == 1.0);
    CHECK(r1.feature_scores.per_freq.minCoeff() > 0.5);
    CHECK(r1.feature_scores.per_bin.size() == 0);  // dropped by default

    EvalOptions three;
    three.threads = 3;
    EvalReport r3 = neurodec::leave_two_out_cv(ds, lag, KernelSpec::linear(), three);
    CHECK(reports_identical(r1, r3));

    EvalOptions keep;
    keep.keep_per_bin_scores = true;
    EvalReport rk = neurodec::leave_two_out_cv(ds, lag, KernelSpec::linear(), keep);
    CHECK(rk.feature_scores.per_bin.rows() == 4);

    Dataset tiny = make_cv_dataset(49, 2, 2, 2, 10, 1);
    CHECK(contains(message_of([&] {
                       neurodec::leave_two_out_cv(tiny, lag, KernelSpec::linear(), one);
                   }),
                   "at least three"));
}

TEST_CASE("each fold is fit strictly on the training stimuli") {
    Dataset ds = make_cv_dataset(50, 5, 3, 4, 30, 2);
    auto lag = neurodec::make_lag_spec(10.0, 10.0);
    EvalReport report = neurodec::leave_two_out_cv(ds, lag, KernelSpec::linear(), {});

    // Recompute fold (s0, s1) by hand: train on the other three, predict the
    // held-out pair, test. The CV row must match bitwise.
    std::vector<std::string> train_ids = {"s2", "s3", "s4"};
    auto [design, targets] = neurodec::build_lagged_design(ds, lag, train_ids);
    auto model = neurodec::fit_ridge_loo(design, targets, KernelSpec::linear());
    auto preds = neurodec::predict(model, ds, {"s0", "s1"});
    PairResult manual = neurodec::pair_correlation_test(ds.spectrogram("s0"),
                                                        ds.spectrogram("s1"),
                                                        preds[0], preds[1]);
    CHECK(report.pair_results[0].corr_matched == manual.corr_matched);
    CHECK(report.pair_results[0].corr_swapped == manual.corr_swapped);

    // The training design is the same whether or not the held-out stimuli
    // exist in the dataset, so nothing can leak through the standardizers.
    Dataset sub;
    for (const auto& id : train_ids) {
        sub.recordings.push_back(ds.recording(id));
        sub.spectrograms.push_back(ds.spectrogram(id));
    }
    auto [sub_design, sub_targets] = neurodec::build_lagged_design(sub, lag, train_ids);
    CHECK((sub_design.rows.array() == design.rows.array()).all());
}

TEST_CASE("pair subsampling is deterministic and keeps canonical order") {
    Dataset ds = make_cv_dataset(51, 6, 2, 3, 20, 1);
    auto lag = neurodec::make_lag_spec(0.0, 10.0);

    EvalOptions opts;
    opts.pair_filter = neurodec::PairSampleSpec{5, 42};
    EvalReport a = neurodec::leave_two_out_cv(ds, lag, KernelSpec::linear(), opts);
    EvalReport b = neurodec::leave_two_out_cv(ds, lag, KernelSpec::linear(), opts);
    REQUIRE(a.n_pairs == 5);
    CHECK(reports_identical(a, b));

    // Sampled pairs appear in the same relative order as the full listing.
    auto all = neurodec::leave_two_out_pairs(ds);
    std::size_t cursor = 0;
    for (const auto& pr : a.pair_results) {
        std::pair<std::string, std::string> key{pr.id_a, pr.id_b};
        while (cursor < all.size() && all[cursor] != key) ++cursor;
        CHECK(cursor < all.size());
    }

    // Asking for at least as many pairs as exist disables the filter.
    opts.pair_filter = neurodec::PairSampleSpec{100, 42};
    CHECK(neurodec::leave_two_out_cv(ds, lag, KernelSpec::linear(), opts).n_pairs == 15);

    opts.pair_filter = neurodec::PairSampleSpec{0, 42};
    CHECK_THROWS_AS(neurodec::leave_two_out_cv(ds, lag, KernelSpec::linear(), opts),
                    ValidationError);
}

TEST_CASE("fold failures name the offending pair") {
    Dataset ds = make_cv_dataset(52, 3, 2, 3, 12, 1);
    ds.recordings[2].channel_names = {"odd0", "odd1"};  // breaks prediction folds
    auto lag = neurodec::make_lag_spec(0.0, 10.0);

    std::string msg = message_of([&] {
        neurodec::leave_two_out_cv(ds, lag, KernelSpec::linear(), {});
    });
    CHECK(contains(msg, "fold (s0, s1)"));
}

TEST_CASE("pairs csv has one exact row per result") {
    EvalReport report;
    PairResult r1;
    r1.id_a = "s0";
    r1.id_b = "s1";
    r1.corr_matched = 1.5;
    r1.corr_swapped = -0.25;
    r1.correct = true;
    PairResult r2;
    r2.id_a = "s0";
    r2.id_b = "s2";
    r2.corr_matched = 0.125;
    r2.corr_swapped = 0.5;
    r2.correct = false;
    report.pair_results = {r1, r2};

    TempDir tmp("pairs_csv");
    auto path = tmp.path / "pairs.csv";
    neurodec::write_pairs_csv(report, path);
    std::ifstream in(path);
    std::stringstream buf;
    buf << in.rdbuf();
    CHECK(buf.str() ==
          "id_a,id_b,corr_matched,corr_swapped,correct\n"
          "s0,s1,1.5,-0.25,1\n"
          "s0,s2,0.125,0.5,0\n");
}

TEST_CASE("summary json writes undefined scores as null") {
    EvalReport report;
    report.lag_ms = 20.0;
    report.accuracy = 0.75;
    report.n_pairs = 4;
    report.item_accuracy = {{"s0", 1.0}, {"s1", 0.5}};
    report.feature_scores.per_freq = Vector(2);
    report.feature_scores.per_freq << 0.5, std::numeric_limits<double>::quiet_NaN();

    TempDir tmp("summary");
    auto path = tmp.path / "summary.json";
    neurodec::write_summary_json(report, path);

    std::ifstream in(path);
    nlohmann::json j = nlohmann::json::parse(in);
    CHECK(j.at("lag_ms") == 20.0);
    CHECK(j.at("accuracy") == 0.75);
    CHECK(j.at("n_pairs") == 4);
    CHECK(j.at("item_accuracy").at("s1") == 0.5);
    CHECK(j.at("feature_scores")[0] == 0.5);
    CHECK(j.at("feature_scores")[1].is_null());
    CHECK_FALSE(j.contains("per_bin_scores"));
}

TEST_CASE("lag sweep returns one report per lag in input order") {
    Dataset ds = make_cv_dataset(53, 4, 2, 3, 20, 2);
    auto rows = neurodec::lag_sweep(ds, {0.0, 10.0}, KernelSpec::linear(), {});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].first == 0.0);
    CHECK(rows[1].first == 10.0);
    CHECK(rows[0].second.n_pairs == 6);

    TempDir tmp("sweep_csv");
    auto path = tmp.path / "sweep.csv";
    neurodec::write_sweep_csv(rows, path);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "lag_ms,accuracy,n_pairs");
    int data_lines = 0;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty()) ++data_lines;
    }
    CHECK(data_lines == 2);

    CHECK_THROWS_AS(neurodec::lag_sweep(ds, {}, KernelSpec::linear(), {}), ValidationError);
}
