#include "neurodec/audiofeat.hpp"

#include <fftw3.h>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

#include "neurodec/tensorio.hpp"

namespace neurodec {

namespace {

constexpr double kPi = 3.14159265358979323846;

void validate_spec(const FilterbankSpec& spec) {
    if (spec.n_channels < 2) {
        throw ValidationError("filterbank needs at least two channels");
    }
    if (!(spec.f_min_hz > 0.0) || !(spec.f_max_hz > spec.f_min_hz)) {
        throw ValidationError("filterbank needs 0 < f_min < f_max, got [" +
                              std::to_string(spec.f_min_hz) + ", " +
                              std::to_string(spec.f_max_hz) + "]");
    }
    if (!(spec.frame_period_ms > 0.0) || !(spec.window_ms > 0.0)) {
        throw ValidationError("frame period and window must be positive");
    }
}

// Sample count for a duration, required to land on an integer.
Eigen::Index exact_samples(double duration_ms, double sample_rate_hz, const char* what) {
    double real = duration_ms / 1000.0 * sample_rate_hz;
    auto rounded = static_cast<Eigen::Index>(std::llround(real));
    if (rounded < 1 || std::abs(real - static_cast<double>(rounded)) > 1e-6) {
        throw ValidationError(std::string(what) + " of " + std::to_string(duration_ms) +
                              " ms is not a whole number of samples at " +
                              std::to_string(sample_rate_hz) + " Hz");
    }
    return rounded;
}

Eigen::Index fft_size_for(Eigen::Index window_samples) {
    Eigen::Index n = 1;
    while (n < window_samples) n *= 2;
    return n;
}

struct PlanDeleter {
    void operator()(fftw_plan_s* p) const { fftw_destroy_plan(p); }
};

}  // namespace

std::vector<double> filterbank_centers(const FilterbankSpec& spec) {
    validate_spec(spec);
    std::vector<double> centers(static_cast<std::size_t>(spec.n_channels));
    double ratio = spec.f_max_hz / spec.f_min_hz;
    for (int k = 0; k < spec.n_channels; ++k) {
        centers[static_cast<std::size_t>(k)] =
            spec.f_min_hz * std::pow(ratio, static_cast<double>(k) / (spec.n_channels - 1));
    }
    centers.front() = spec.f_min_hz;
    centers.back() = spec.f_max_hz;
    return centers;
}

Matrix design_filterbank(const FilterbankSpec& spec, double sample_rate_hz) {
    validate_spec(spec);
    if (!(sample_rate_hz > 0.0)) throw ValidationError("sample rate must be positive");
    if (spec.f_max_hz > sample_rate_hz / 2.0) {
        throw ValidationError("filterbank f_max " + std::to_string(spec.f_max_hz) +
                              " Hz is above the Nyquist frequency " +
                              std::to_string(sample_rate_hz / 2.0) + " Hz");
    }
    Eigen::Index window_samples = exact_samples(spec.window_ms, sample_rate_hz, "window");
    Eigen::Index nfft = fft_size_for(window_samples);
    Eigen::Index n_bins = nfft / 2 + 1;
    std::vector<double> centers = filterbank_centers(spec);

    Matrix filters = Matrix::Zero(spec.n_channels, n_bins);
    for (int c = 0; c < spec.n_channels; ++c) {
        double center = centers[static_cast<std::size_t>(c)];
        double left = c > 0 ? centers[static_cast<std::size_t>(c - 1)] : spec.f_min_hz;
        double right = c + 1 < spec.n_channels ? centers[static_cast<std::size_t>(c + 1)]
                                               : spec.f_max_hz;
        for (Eigen::Index k = 0; k < n_bins; ++k) {
            double f = static_cast<double>(k) * sample_rate_hz / static_cast<double>(nfft);
            double w = 0.0;
            if (f >= left && f <= center && center > left) {
                w = (f - left) / (center - left);
            } else if (f >= center && f <= right && right > center) {
                w = (right - f) / (right - center);
            } else if (f == center) {
                w = 1.0;  // degenerate edge wedge
            }
            filters(c, k) = std::max(filters(c, k), w);
        }
    }
    return filters;
}

Spectrogram compute_spectrogram(const AudioClip& clip, const FilterbankSpec& spec) {
    validate_spec(spec);
    if (!(clip.sample_rate_hz > 0.0)) throw ValidationError("sample rate must be positive");
    Eigen::Index window_samples = exact_samples(spec.window_ms, clip.sample_rate_hz, "window");
    Eigen::Index hop_samples = exact_samples(spec.frame_period_ms, clip.sample_rate_hz,
                                             "frame period");
    if (clip.samples.size() < window_samples) {
        throw ValidationError("clip '" + clip.stimulus_id + "' has " +
                              std::to_string(clip.samples.size()) +
                              " samples, shorter than one analysis window (" +
                              std::to_string(window_samples) + ")");
    }
    Matrix filters = design_filterbank(spec, clip.sample_rate_hz);
    Eigen::Index nfft = fft_size_for(window_samples);
    Eigen::Index n_bins = nfft / 2 + 1;
    Eigen::Index frames = clip.samples.size() / hop_samples;

    Vector window(window_samples);
    for (Eigen::Index i = 0; i < window_samples; ++i) {
        window(i) = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) /
                                         static_cast<double>(window_samples));
    }

    std::unique_ptr<double, decltype(&fftw_free)> in(fftw_alloc_real(static_cast<size_t>(nfft)),
                                                     &fftw_free);
    std::unique_ptr<fftw_complex, decltype(&fftw_free)> out(
        fftw_alloc_complex(static_cast<size_t>(n_bins)), &fftw_free);
    if (!in || !out) throw NumericalError("FFT buffer allocation failed");
    std::unique_ptr<fftw_plan_s, PlanDeleter> plan(fftw_plan_dft_r2c_1d(
        static_cast<int>(nfft), in.get(), out.get(), FFTW_ESTIMATE));
    if (!plan) throw NumericalError("FFT planning failed");

    Spectrogram result;
    result.stimulus_id = clip.stimulus_id;
    result.frame_period_ms = spec.frame_period_ms;
    result.center_freqs_hz = filterbank_centers(spec);
    result.data.resize(spec.n_channels, frames);

    Vector power(n_bins);
    for (Eigen::Index t = 0; t < frames; ++t) {
        Eigen::Index start = t * hop_samples;
        for (Eigen::Index i = 0; i < nfft; ++i) {
            Eigen::Index src = start + i;
            in.get()[i] = (i < window_samples && src < clip.samples.size())
                              ? clip.samples(src) * window(i)
                              : 0.0;  // zero-pad past the clip and the window
        }
        fftw_execute(plan.get());
        for (Eigen::Index k = 0; k < n_bins; ++k) {
            power(k) = out.get()[k][0] * out.get()[k][0] + out.get()[k][1] * out.get()[k][1];
        }
        Vector energy = filters * power;
        if (spec.compression == Compression::log_power) {
            energy = (energy.array() + 1.0).log();
        }
        result.data.col(t) = energy;
    }
    return result;
}

std::vector<AudioClip> load_audio_manifest(const std::filesystem::path& manifest_path) {
    std::filesystem::path manifest = manifest_path;
    if (std::filesystem::is_directory(manifest)) manifest /= "audio.json";
    std::ifstream in(manifest);
    if (!in) throw ValidationError("cannot open '" + manifest.string() + "'");
    std::filesystem::path dir = manifest.parent_path();
    try {
        nlohmann::json j = nlohmann::json::parse(in);
        if (j.at("format_version").get<int>() != 1) {
            throw ValidationError("unsupported audio manifest format_version in '" +
                                  manifest.string() + "'");
        }
        double rate = j.at("sample_rate_hz").get<double>();
        if (!(rate > 0.0)) throw ValidationError("sample rate must be positive");
        std::vector<AudioClip> clips;
        for (const auto& entry : j.at("clips")) {
            AudioClip clip;
            clip.stimulus_id = entry.at("id").get<std::string>();
            clip.sample_rate_hz = rate;
            auto samples = entry.at("samples").get<Eigen::Index>();
            Matrix m = read_blob(dir / entry.at("blob").get<std::string>(), 1, samples);
            if (!m.allFinite()) {
                throw ValidationError("non-finite sample in clip '" + clip.stimulus_id + "'");
            }
            clip.samples = m.row(0).transpose();
            clips.push_back(std::move(clip));
        }
        return clips;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("invalid audio manifest '" + manifest.string() + "': " + e.what());
    }
}

std::filesystem::path save_audio_manifest(const std::vector<AudioClip>& clips,
                                          const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    double rate = clips.empty() ? 16000.0 : clips.front().sample_rate_hz;
    nlohmann::json entries = nlohmann::json::array();
    char name[32];
    for (std::size_t i = 0; i < clips.size(); ++i) {
        if (clips[i].sample_rate_hz != rate) {
            throw ValidationError("cannot save audio manifest: sample rates differ across clips");
        }
        std::snprintf(name, sizeof(name), "clip_%04zu.f64", i);
        write_blob(dir / name, clips[i].samples.transpose());
        entries.push_back({{"id", clips[i].stimulus_id},
                           {"blob", std::string(name)},
                           {"samples", clips[i].samples.size()}});
    }
    nlohmann::json manifest = {
        {"format_version", 1}, {"sample_rate_hz", rate}, {"clips", entries}};
    std::filesystem::path path = dir / "audio.json";
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ValidationError("cannot create '" + path.string() + "'");
    out << manifest.dump(2) << "\n";
    if (!out) throw ValidationError("short write on '" + path.string() + "'");
    return path;
}

}  // namespace neurodec
