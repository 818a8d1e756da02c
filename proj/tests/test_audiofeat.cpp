#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "neurodec/audiofeat.hpp"
#include "test_support.hpp"

using neurodec::AudioClip;
using neurodec::Compression;
using neurodec::FilterbankSpec;
using neurodec::Matrix;
using neurodec::Spectrogram;
using neurodec::ValidationError;
using neurodec::Vector;
using testsupport::contains;
using testsupport::message_of;
using testsupport::TempDir;

namespace {

AudioClip make_clip(const std::string& id, Eigen::Index samples, double rate = 16000.0) {
    AudioClip clip;
    clip.stimulus_id = id;
    clip.sample_rate_hz = rate;
    clip.samples = Vector::Zero(samples);
    return clip;
}

FilterbankSpec small_spec() {
    FilterbankSpec spec;
    spec.n_channels = 3;
    spec.f_min_hz = 625.0;
    spec.f_max_hz = 2500.0;
    spec.frame_period_ms = 10.0;
    spec.window_ms = 32.0;  // 512 samples at 16 kHz, so bins sit every 31.25 Hz
    spec.compression = Compression::linear;
    return spec;
}

}  // namespace

TEST_CASE("centers are log-spaced with pinned endpoints") {
    FilterbankSpec two;
    two.n_channels = 2;
    two.f_min_hz = 100.0;
    two.f_max_hz = 400.0;
    CHECK(neurodec::filterbank_centers(two) == std::vector<double>{100.0, 400.0});

    FilterbankSpec dense;
    dense.n_channels = 128;
    dense.f_min_hz = 180.0;
    dense.f_max_hz = 7246.0;
    auto centers = neurodec::filterbank_centers(dense);
    REQUIRE(centers.size() == 128);
    CHECK(centers.front() == 180.0);
    CHECK(centers.back() == 7246.0);
    for (int k : {1, 64, 100}) {
        double expected = 180.0 * std::pow(7246.0 / 180.0, k / 127.0);
        CHECK(std::abs(centers[static_cast<std::size_t>(k)] - expected) <= 1e-12 * expected);
    }
    for (std::size_t k = 1; k < centers.size(); ++k) CHECK(centers[k] > centers[k - 1]);

    FilterbankSpec bad = dense;
    bad.f_max_hz = 90.0;
    CHECK_THROWS_AS(neurodec::filterbank_centers(bad), ValidationError);
}

TEST_CASE("filterbank rows are unit-peak triangles on the bin grid") {
    FilterbankSpec spec = small_spec();
    // Centers 625, 1250, 2500 Hz land exactly on bins 20, 40, 80.
    Matrix filters = neurodec::design_filterbank(spec, 16000.0);
    REQUIRE(filters.rows() == 3);
    REQUIRE(filters.cols() == 257);  // 512 / 2 + 1

    CHECK(filters(0, 20) == 1.0);
    CHECK(filters(1, 40) == 1.0);
    CHECK(filters(2, 80) == 1.0);

    // Triangles vanish outside their neighbours' centers.
    CHECK(filters(0, 19) == 0.0);  // below f_min
    CHECK(filters(0, 41) == 0.0);  // past the next center
    CHECK(filters(1, 20) == 0.0);
    CHECK(filters(2, 81) == 0.0);  // above f_max

    // Halfway up the rising edge of channel 1: bin 30 is 937.5 Hz.
    CHECK(filters(1, 30) == doctest::Approx((937.5 - 625.0) / (1250.0 - 625.0)));

    FilterbankSpec over = spec;
    over.f_max_hz = 7246.0;
    CHECK(contains(message_of([&] { neurodec::design_filterbank(over, 8000.0); }), "Nyquist"));
}

TEST_CASE("silence maps to zeros under both compressions") {
    for (Compression comp : {Compression::linear, Compression::log_power}) {
        FilterbankSpec spec = small_spec();
        spec.compression = comp;
        Spectrogram sp = neurodec::compute_spectrogram(make_clip("quiet", 8000), spec);
        CHECK(sp.data.rows() == 3);
        CHECK((sp.data.array() == 0.0).all());
    }
}

TEST_CASE("frame count is the hop count that fits the clip") {
    FilterbankSpec spec = small_spec();
    CHECK(neurodec::compute_spectrogram(make_clip("a", 16000), spec).frames() == 100);
    CHECK(neurodec::compute_spectrogram(make_clip("b", 15984), spec).frames() == 99);

    std::string msg =
        message_of([&] { neurodec::compute_spectrogram(make_clip("short", 300), spec); });
    CHECK(contains(msg, "shorter than one analysis window"));
}

TEST_CASE("a pure tone at a center frequency lights up that channel") {
    FilterbankSpec spec = small_spec();
    AudioClip clip = make_clip("tone", 16000);
    for (Eigen::Index i = 0; i < clip.samples.size(); ++i) {
        clip.samples(i) = std::sin(2.0 * M_PI * 1250.0 * static_cast<double>(i) / 16000.0);
    }
    Spectrogram sp = neurodec::compute_spectrogram(clip, spec);
    Vector mean_energy = sp.data.rowwise().mean();
    Eigen::Index argmax = 0;
    mean_energy.maxCoeff(&argmax);
    CHECK(argmax == 1);
    CHECK(mean_energy(1) > 100.0 * mean_energy(0));
    CHECK(mean_energy(1) > 100.0 * mean_energy(2));
}

TEST_CASE("delaying a clip by one hop shifts its frames") {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> noise;
    AudioClip x = make_clip("x", 16000);
    for (Eigen::Index i = 0; i < x.samples.size(); ++i) x.samples(i) = noise(rng);

    AudioClip y = make_clip("y", 16000);
    y.samples.tail(16000 - 160) = x.samples.head(16000 - 160);  // one 10 ms hop later

    FilterbankSpec spec = small_spec();
    spec.compression = Compression::log_power;
    Spectrogram sx = neurodec::compute_spectrogram(x, spec);
    Spectrogram sy = neurodec::compute_spectrogram(y, spec);

    // Frame t of the delayed clip sees the same window as frame t-1 of the
    // original while both windows stay inside the data.
    for (Eigen::Index t = 1; t <= 96; ++t) {
        CHECK((sy.data.col(t) - sx.data.col(t - 1)).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("white noise gives a flat normalized band profile") {
    FilterbankSpec spec;
    spec.n_channels = 24;
    spec.f_min_hz = 400.0;
    spec.f_max_hz = 6000.0;
    spec.frame_period_ms = 10.0;
    spec.window_ms = 64.0;
    spec.compression = Compression::linear;

    std::mt19937_64 rng(32);
    std::normal_distribution<double> noise;
    AudioClip clip = make_clip("noise", 320000);  // 20 s
    for (Eigen::Index i = 0; i < clip.samples.size(); ++i) clip.samples(i) = noise(rng);

    Spectrogram sp = neurodec::compute_spectrogram(clip, spec);
    Matrix filters = neurodec::design_filterbank(spec, 16000.0);

    // Mean band energy scaled by the band's total filter weight should be
    // flat for a white input.
    Vector profile = sp.data.rowwise().mean().array() / filters.rowwise().sum().array();
    double mid = profile.sum() / static_cast<double>(profile.size());
    CHECK(profile.maxCoeff() <= 1.2 * mid);
    CHECK(profile.minCoeff() >= 0.8 * mid);
}

TEST_CASE("doubling the amplitude quadruples linear band energy") {
    std::mt19937_64 rng(33);
    std::normal_distribution<double> noise;
    AudioClip clip = make_clip("base", 8000);
    for (Eigen::Index i = 0; i < clip.samples.size(); ++i) clip.samples(i) = noise(rng);
    AudioClip loud = clip;
    loud.samples *= 2.0;

    FilterbankSpec spec = small_spec();
    Spectrogram a = neurodec::compute_spectrogram(clip, spec);
    Spectrogram b = neurodec::compute_spectrogram(loud, spec);
    CHECK(testsupport::rel_diff(b.data, 4.0 * a.data) <= 1e-12);
}

TEST_CASE("audio manifest round trip preserves clips") {
    std::mt19937_64 rng(34);
    std::normal_distribution<double> noise;
    std::vector<AudioClip> clips = {make_clip("first", 500), make_clip("second", 700)};
    for (auto& clip : clips) {
        for (Eigen::Index i = 0; i < clip.samples.size(); ++i) clip.samples(i) = noise(rng);
    }

    TempDir tmp("audio_rt");
    auto manifest = neurodec::save_audio_manifest(clips, tmp.path);
    auto back = neurodec::load_audio_manifest(manifest);
    REQUIRE(back.size() == 2);
    CHECK(back[0].stimulus_id == "first");
    CHECK(back[1].stimulus_id == "second");
    CHECK(back[0].sample_rate_hz == 16000.0);
    CHECK((back[0].samples.array() == clips[0].samples.array()).all());
    CHECK((back[1].samples.array() == clips[1].samples.array()).all());

    // Loading by directory works too.
    CHECK(neurodec::load_audio_manifest(tmp.path).size() == 2);

    clips[1].sample_rate_hz = 8000.0;
    CHECK(contains(message_of([&] { neurodec::save_audio_manifest(clips, tmp.path); }),
                   "sample rates differ"));
}
