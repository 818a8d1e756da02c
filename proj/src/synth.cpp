#include "neurodec/synth.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "neurodec/lagging.hpp"
#include "neurodec/rng.hpp"
#include "neurodec/tensorio.hpp"

namespace neurodec {

namespace {

// Stream tags carving independent generators out of one seed.
constexpr std::uint64_t kTruthStream = 0x0100000000ull;
constexpr std::uint64_t kMixingStream = 0x0200000000ull;
constexpr std::uint64_t kResponseStream = 0x0300000000ull;
constexpr std::uint64_t kNoiseStream = 0x0400000000ull;

void validate_config(const SynthConfig& c) {
    if (c.n_stimuli < 3) {
        throw ValidationError("synthetic dataset needs at least three stimuli, got " +
                              std::to_string(c.n_stimuli));
    }
    if (c.channels < 1 || c.freq_channels < 1) {
        throw ValidationError("synthetic dataset needs positive channel counts");
    }
    if (c.frames_min < 1 || c.frames_max < c.frames_min) {
        throw ValidationError("invalid synthetic frame range [" + std::to_string(c.frames_min) +
                              ", " + std::to_string(c.frames_max) + "]");
    }
    if (c.lag_bins_true < 1) throw ValidationError("true lag window needs at least one bin");
    if (!(c.snr > 0.0)) throw ValidationError("snr must be positive (use inf for noiseless)");
    if (!(c.frame_period_ms > 0.0)) throw ValidationError("frame period must be positive");
    for (int f : c.g_support) {
        if (f < 0 || f >= c.freq_channels) {
            throw ValidationError("g_support index " + std::to_string(f) + " outside [0, " +
                                  std::to_string(c.freq_channels) + ")");
        }
    }
    if (c.g_lag_support) {
        auto [lo, hi] = *c.g_lag_support;
        if (lo < 0 || hi < lo || hi >= c.lag_bins_true) {
            throw ValidationError("g_lag_support outside [0, " +
                                  std::to_string(c.lag_bins_true) + ")");
        }
    }
    if (c.channel_rank < 0 || c.channel_rank > c.channels) {
        throw ValidationError("channel_rank must lie in [0, channels]");
    }
}

Matrix draw_normal(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> normal;
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
    }
    return m;
}

std::string stimulus_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%03d", i);
    return buf;
}

nlohmann::json snr_to_json(double snr) {
    if (std::isinf(snr)) return "inf";
    return snr;
}

double snr_from_json(const nlohmann::json& j) {
    if (j.is_string()) {
        if (j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
        throw ValidationError("unrecognized snr value in truth file");
    }
    return j.get<double>();
}

}  // namespace

std::pair<Dataset, SynthTruth> generate_synthetic(const SynthConfig& config) {
    validate_config(config);
    const Eigen::Index channels = config.channels;
    const Eigen::Index freq = config.freq_channels;
    const Eigen::Index lag_bins = config.lag_bins_true;

    // Planted map, drawn densely so the support masks never shift other draws.
    std::mt19937_64 truth_rng = stream_rng(config.seed, kTruthStream);
    Matrix true_g = draw_normal(truth_rng, lag_bins * channels, freq);
    if (!config.g_support.empty()) {
        std::vector<bool> keep(static_cast<std::size_t>(freq), false);
        for (int f : config.g_support) keep[static_cast<std::size_t>(f)] = true;
        for (Eigen::Index f = 0; f < freq; ++f) {
            if (!keep[static_cast<std::size_t>(f)]) true_g.col(f).setZero();
        }
    }
    if (config.g_lag_support) {
        auto [lo, hi] = *config.g_lag_support;
        for (Eigen::Index lag = 0; lag < lag_bins; ++lag) {
            if (lag < lo || lag > hi) {
                true_g.middleRows(lag * channels, channels).setZero();
            }
        }
    }

    Matrix mixing;
    if (config.channel_rank > 0 && config.channel_rank < config.channels) {
        std::mt19937_64 mix_rng = stream_rng(config.seed, kMixingStream);
        mixing = draw_normal(mix_rng, channels, config.channel_rank);
    }

    std::vector<std::string> channel_names;
    channel_names.reserve(static_cast<std::size_t>(channels));
    for (Eigen::Index c = 0; c < channels; ++c) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "ch%03d", static_cast<int>(c));
        channel_names.emplace_back(buf);
    }

    Dataset ds;
    std::vector<double> center_freqs;
    center_freqs.reserve(static_cast<std::size_t>(freq));
    for (Eigen::Index f = 0; f < freq; ++f) {
        center_freqs.push_back(100.0 * static_cast<double>(f + 1));
    }
    for (int i = 0; i < config.n_stimuli; ++i) {
        std::mt19937_64 rng = stream_rng(config.seed, kResponseStream + static_cast<unsigned>(i));
        Eigen::Index frames = config.frames_min;
        if (config.frames_max > config.frames_min) {
            frames += static_cast<Eigen::Index>(uniform_below(
                rng, static_cast<std::uint64_t>(config.frames_max - config.frames_min + 1)));
        }
        Eigen::Index samples = frames + lag_bins - 1;
        Matrix data = mixing.size() ? Matrix(mixing * draw_normal(rng, config.channel_rank, samples))
                                    : draw_normal(rng, channels, samples);
        Recording rec;
        rec.stimulus_id = stimulus_name(i);
        rec.data = std::move(data);
        rec.sample_period_ms = config.frame_period_ms;
        rec.t0_offset_ms = 0.0;
        rec.channel_names = channel_names;
        ds.recordings.push_back(std::move(rec));

        Spectrogram sp;
        sp.stimulus_id = stimulus_name(i);
        sp.data = Matrix::Zero(freq, frames);  // filled below
        sp.frame_period_ms = config.frame_period_ms;
        sp.center_freqs_hz = center_freqs;
        ds.spectrograms.push_back(std::move(sp));
    }

    // Push the responses through the planted map with the same builder the
    // decoder uses, so the lagging conventions are exercised end to end.
    LagSpec lag = make_lag_spec(static_cast<double>(lag_bins - 1) * config.frame_period_ms,
                                config.frame_period_ms);
    auto [design, targets] = build_lagged_design(ds, lag, ds.stimulus_ids());
    Matrix signal = design.rows * true_g;

    double noise_sigma = 0.0;
    if (!std::isinf(config.snr)) {
        double mean = signal.mean();
        double variance = (signal.array() - mean).square().mean();
        noise_sigma = std::sqrt(variance / config.snr);
    }

    Eigen::Index row = 0;
    for (int i = 0; i < config.n_stimuli; ++i) {
        Spectrogram& sp = ds.spectrograms[static_cast<std::size_t>(i)];
        Eigen::Index frames = sp.frames();
        Matrix block = signal.middleRows(row, frames);
        row += frames;
        if (noise_sigma > 0.0) {
            std::mt19937_64 rng =
                stream_rng(config.seed, kNoiseStream + static_cast<unsigned>(i));
            block += noise_sigma * draw_normal(rng, frames, freq);
        }
        sp.data = block.transpose();
    }

    SynthTruth truth;
    truth.true_g = std::move(true_g);
    truth.noise_sigma = noise_sigma;
    truth.config = config;
    return {std::move(ds), std::move(truth)};
}

void save_truth(const SynthTruth& truth, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_blob(dir / "true_g.f64", truth.true_g);
    const SynthConfig& c = truth.config;
    nlohmann::json j = {
        {"format_version", 1},
        {"noise_sigma", truth.noise_sigma},
        {"true_g_rows", truth.true_g.rows()},
        {"true_g_cols", truth.true_g.cols()},
        {"config",
         {{"n_stimuli", c.n_stimuli},
          {"channels", c.channels},
          {"freq_channels", c.freq_channels},
          {"frames_min", c.frames_min},
          {"frames_max", c.frames_max},
          {"lag_bins_true", c.lag_bins_true},
          {"snr", snr_to_json(c.snr)},
          {"seed", c.seed},
          {"frame_period_ms", c.frame_period_ms},
          {"g_support", c.g_support},
          {"g_lag_support",
           c.g_lag_support ? nlohmann::json({c.g_lag_support->first, c.g_lag_support->second})
                           : nlohmann::json(nullptr)},
          {"channel_rank", c.channel_rank}}}};
    std::filesystem::path path = dir / "truth.json";
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ValidationError("cannot create '" + path.string() + "'");
    out << j.dump(2) << "\n";
    if (!out) throw ValidationError("short write on '" + path.string() + "'");
}

SynthTruth load_truth(const std::filesystem::path& dir) {
    std::filesystem::path path = dir / "truth.json";
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open '" + path.string() + "'");
    try {
        nlohmann::json j = nlohmann::json::parse(in);
        if (j.at("format_version").get<int>() != 1) {
            throw ValidationError("unsupported truth format_version in '" + path.string() + "'");
        }
        SynthTruth truth;
        truth.noise_sigma = j.at("noise_sigma").get<double>();
        const auto& c = j.at("config");
        truth.config.n_stimuli = c.at("n_stimuli").get<int>();
        truth.config.channels = c.at("channels").get<int>();
        truth.config.freq_channels = c.at("freq_channels").get<int>();
        truth.config.frames_min = c.at("frames_min").get<int>();
        truth.config.frames_max = c.at("frames_max").get<int>();
        truth.config.lag_bins_true = c.at("lag_bins_true").get<int>();
        truth.config.snr = snr_from_json(c.at("snr"));
        truth.config.seed = c.at("seed").get<std::uint64_t>();
        truth.config.frame_period_ms = c.at("frame_period_ms").get<double>();
        truth.config.g_support = c.at("g_support").get<std::vector<int>>();
        if (!c.at("g_lag_support").is_null()) {
            auto arr = c.at("g_lag_support");
            truth.config.g_lag_support = {arr.at(0).get<int>(), arr.at(1).get<int>()};
        }
        truth.config.channel_rank = c.at("channel_rank").get<int>();
        truth.true_g = read_blob(dir / "true_g.f64", j.at("true_g_rows").get<Eigen::Index>(),
                                 j.at("true_g_cols").get<Eigen::Index>());
        return truth;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("invalid truth file '" + path.string() + "': " + e.what());
    }
}

std::vector<SnrCurveRow> snr_curve(const SynthConfig& base, const std::vector<double>& snrs,
                                   const EvalOptions& opts) {
    if (snrs.empty()) throw ValidationError("snr curve needs at least one level");
    std::vector<SnrCurveRow> rows;
    rows.reserve(snrs.size());
    for (double snr : snrs) {
        SynthConfig config = base;
        config.snr = snr;
        auto [ds, truth] = generate_synthetic(config);
        LagSpec lag = make_lag_spec(
            static_cast<double>(config.lag_bins_true - 1) * config.frame_period_ms,
            config.frame_period_ms);
        EvalReport report = leave_two_out_cv(ds, lag, KernelSpec::linear(), opts);
        rows.push_back({snr, report.accuracy});
    }
    return rows;
}

}  // namespace neurodec
