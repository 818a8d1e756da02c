#include "neurodec/tensorio.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

namespace neurodec {

namespace {

static_assert(std::endian::native == std::endian::little,
              "blob format is little-endian; big-endian hosts are unsupported");
static_assert(sizeof(double) == 8);

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

nlohmann::json parse_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open '" + path.string() + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed JSON in '" + path.string() + "': " + e.what());
    }
}

// Rejects NaN/inf, reporting where in the blob the bad value sits.
void require_finite(const Matrix& m, const std::string& blob_name, const std::string& id) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            if (!std::isfinite(m(r, c))) {
                Eigen::Index flat = r * m.cols() + c;
                throw ValidationError("non-finite value in blob '" + blob_name +
                                      "' for stimulus '" + id + "' at element " +
                                      std::to_string(flat) + " (byte offset " +
                                      std::to_string(flat * 8) + ")");
            }
        }
    }
}

void require_positive(double v, const std::string& what) {
    if (!(v > 0.0) || !std::isfinite(v)) {
        throw ValidationError(what + " must be positive, got " + std::to_string(v));
    }
}

}  // namespace

Matrix read_blob(const std::filesystem::path& path, Eigen::Index rows, Eigen::Index cols) {
    if (rows < 0 || cols < 0) throw ValidationError("blob shape must be non-negative");
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw ValidationError("cannot open blob '" + path.string() + "'");
    auto actual = static_cast<std::uint64_t>(in.tellg());
    std::uint64_t expected =
        static_cast<std::uint64_t>(rows) * static_cast<std::uint64_t>(cols) * 8u;
    if (actual != expected) {
        throw ValidationError("blob '" + path.string() + "' holds " + std::to_string(actual) +
                              " bytes, expected " + std::to_string(expected) + " (" +
                              std::to_string(rows) + "x" + std::to_string(cols) + " float64)");
    }
    RowMajorMatrix m(rows, cols);
    in.seekg(0);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(expected));
    if (!in) throw ValidationError("short read on blob '" + path.string() + "'");
    return m;
}

void write_blob(const std::filesystem::path& path, const Matrix& m) {
    RowMajorMatrix rm = m;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot create blob '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(rm.data()),
              static_cast<std::streamsize>(static_cast<std::uint64_t>(rm.size()) * 8u));
    if (!out) throw ValidationError("short write on blob '" + path.string() + "'");
}

std::vector<std::string> Dataset::stimulus_ids() const {
    std::vector<std::string> ids;
    ids.reserve(recordings.size());
    for (const auto& r : recordings) ids.push_back(r.stimulus_id);
    return ids;
}

const Recording& Dataset::recording(const std::string& id) const {
    for (const auto& r : recordings) {
        if (r.stimulus_id == id) return r;
    }
    throw ValidationError("no recording for stimulus '" + id + "'");
}

const Spectrogram& Dataset::spectrogram(const std::string& id) const {
    for (const auto& s : spectrograms) {
        if (s.stimulus_id == id) return s;
    }
    throw ValidationError("no spectrogram for stimulus '" + id + "'");
}

void Dataset::validate_pairing() const {
    std::unordered_set<std::string> rec_ids;
    for (const auto& r : recordings) {
        if (!rec_ids.insert(r.stimulus_id).second) {
            throw ValidationError("duplicate recording for stimulus '" + r.stimulus_id + "'");
        }
    }
    std::unordered_set<std::string> spec_ids;
    for (const auto& s : spectrograms) {
        if (!spec_ids.insert(s.stimulus_id).second) {
            throw ValidationError("duplicate spectrogram for stimulus '" + s.stimulus_id + "'");
        }
        if (!rec_ids.count(s.stimulus_id)) {
            throw ValidationError("unpaired stimulus id '" + s.stimulus_id +
                                  "' (spectrogram without recording)");
        }
    }
    for (const auto& r : recordings) {
        if (!spec_ids.count(r.stimulus_id)) {
            throw ValidationError("unpaired stimulus id '" + r.stimulus_id +
                                  "' (recording without spectrogram)");
        }
    }
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
    std::filesystem::path manifest = manifest_path;
    if (std::filesystem::is_directory(manifest)) manifest /= "manifest.json";
    nlohmann::json j = parse_json_file(manifest);
    std::filesystem::path dir = manifest.parent_path();

    try {
        if (j.at("format_version").get<int>() != 1) {
            throw ValidationError("unsupported manifest format_version in '" + manifest.string() +
                                  "'");
        }
        double sample_period = j.at("sample_period_ms").get<double>();
        double frame_period = j.at("frame_period_ms").get<double>();
        double t0_offset = j.at("t0_offset_ms").get<double>();
        require_positive(sample_period, "sample_period_ms");
        require_positive(frame_period, "frame_period_ms");
        auto channel_names = j.at("channel_names").get<std::vector<std::string>>();
        auto center_freqs = j.at("center_freqs_hz").get<std::vector<double>>();
        for (std::size_t i = 0; i + 1 < center_freqs.size(); ++i) {
            if (!(center_freqs[i] < center_freqs[i + 1])) {
                throw ValidationError("center_freqs_hz must be strictly increasing in '" +
                                      manifest.string() + "'");
            }
        }

        Dataset ds;
        for (const auto& entry : j.at("stimuli")) {
            auto id = entry.at("id").get<std::string>();
            std::string rec_blob = entry.value("recording_blob", std::string());
            std::string spec_blob = entry.value("spectrogram_blob", std::string());
            if (rec_blob.empty() || spec_blob.empty()) {
                throw ValidationError("unpaired stimulus id '" + id +
                                      "': manifest entry must name both blobs");
            }
            auto channels = entry.at("channels").get<Eigen::Index>();
            auto samples = entry.at("samples").get<Eigen::Index>();
            auto freq_channels = entry.at("freq_channels").get<Eigen::Index>();
            auto frames = entry.at("frames").get<Eigen::Index>();
            if (channels != static_cast<Eigen::Index>(channel_names.size())) {
                throw ValidationError("stimulus '" + id + "' declares " +
                                      std::to_string(channels) + " channels but manifest names " +
                                      std::to_string(channel_names.size()));
            }
            if (freq_channels != static_cast<Eigen::Index>(center_freqs.size())) {
                throw ValidationError("stimulus '" + id + "' declares " +
                                      std::to_string(freq_channels) +
                                      " frequency channels but manifest lists " +
                                      std::to_string(center_freqs.size()));
            }

            Recording rec;
            rec.stimulus_id = id;
            rec.data = read_blob(dir / rec_blob, channels, samples);
            require_finite(rec.data, rec_blob, id);
            rec.sample_period_ms = sample_period;
            rec.t0_offset_ms = t0_offset;
            rec.channel_names = channel_names;

            Spectrogram spec;
            spec.stimulus_id = id;
            spec.data = read_blob(dir / spec_blob, freq_channels, frames);
            require_finite(spec.data, spec_blob, id);
            spec.frame_period_ms = frame_period;
            spec.center_freqs_hz = center_freqs;

            ds.recordings.push_back(std::move(rec));
            ds.spectrograms.push_back(std::move(spec));
        }
        ds.validate_pairing();
        return ds;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("invalid manifest '" + manifest.string() + "': " + e.what());
    }
}

std::filesystem::path save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    ds.validate_pairing();
    std::filesystem::create_directories(dir);

    // The manifest carries one set of sampling metadata, so it must be
    // uniform across stimuli.
    double sample_period = 1.0;
    double frame_period = 1.0;
    double t0_offset = 0.0;
    std::vector<std::string> channel_names;
    std::vector<double> center_freqs;
    if (!ds.recordings.empty()) {
        sample_period = ds.recordings.front().sample_period_ms;
        t0_offset = ds.recordings.front().t0_offset_ms;
        channel_names = ds.recordings.front().channel_names;
        frame_period = ds.spectrograms.front().frame_period_ms;
        center_freqs = ds.spectrograms.front().center_freqs_hz;
        for (const auto& r : ds.recordings) {
            if (r.sample_period_ms != sample_period || r.t0_offset_ms != t0_offset ||
                r.channel_names != channel_names) {
                throw ValidationError("cannot save dataset: recording metadata differs across "
                                      "stimuli (offender '" + r.stimulus_id + "')");
            }
        }
        for (const auto& s : ds.spectrograms) {
            if (s.frame_period_ms != frame_period || s.center_freqs_hz != center_freqs) {
                throw ValidationError("cannot save dataset: spectrogram metadata differs across "
                                      "stimuli (offender '" + s.stimulus_id + "')");
            }
        }
    }

    nlohmann::json stimuli = nlohmann::json::array();
    char name[32];
    for (std::size_t i = 0; i < ds.recordings.size(); ++i) {
        const Recording& rec = ds.recordings[i];
        const Spectrogram& spec = ds.spectrogram(rec.stimulus_id);
        std::snprintf(name, sizeof(name), "rec_%04zu.f64", i);
        std::string rec_blob = name;
        std::snprintf(name, sizeof(name), "spec_%04zu.f64", i);
        std::string spec_blob = name;
        write_blob(dir / rec_blob, rec.data);
        write_blob(dir / spec_blob, spec.data);
        stimuli.push_back({{"id", rec.stimulus_id},
                           {"recording_blob", rec_blob},
                           {"spectrogram_blob", spec_blob},
                           {"channels", rec.channels()},
                           {"samples", rec.samples()},
                           {"freq_channels", spec.freq_channels()},
                           {"frames", spec.frames()}});
    }

    nlohmann::json manifest = {{"format_version", 1},
                               {"sample_period_ms", sample_period},
                               {"frame_period_ms", frame_period},
                               {"t0_offset_ms", t0_offset},
                               {"channel_names", channel_names},
                               {"center_freqs_hz", center_freqs},
                               {"stimuli", stimuli}};
    std::filesystem::path manifest_path = dir / "manifest.json";
    std::ofstream out(manifest_path, std::ios::trunc);
    if (!out) throw ValidationError("cannot create '" + manifest_path.string() + "'");
    out << manifest.dump(2) << "\n";
    if (!out) throw ValidationError("short write on '" + manifest_path.string() + "'");
    return manifest_path;
}

Recording baseline_correct(const Recording& rec, double window_start_ms, double window_end_ms) {
    if (!(window_start_ms < window_end_ms)) {
        throw ValidationError("baseline window is empty: [" + std::to_string(window_start_ms) +
                              ", " + std::to_string(window_end_ms) + ")");
    }
    Eigen::Index first = -1;
    Eigen::Index count = 0;
    for (Eigen::Index i = 0; i < rec.samples(); ++i) {
        double t = rec.time_of_sample(i);
        if (t >= window_start_ms && t < window_end_ms) {
            if (first < 0) first = i;
            ++count;
        }
    }
    if (count == 0) {
        throw ValidationError("baseline window [" + std::to_string(window_start_ms) + ", " +
                              std::to_string(window_end_ms) + ") contains no samples of stimulus '" +
                              rec.stimulus_id + "'");
    }
    Recording out = rec;
    Vector means = rec.data.middleCols(first, count).rowwise().mean();
    out.data = rec.data.colwise() - means;
    return out;
}

Recording downsample(const Recording& rec, double target_period_ms) {
    require_positive(target_period_ms, "target period");
    double ratio = target_period_ms / rec.sample_period_ms;
    auto k = static_cast<Eigen::Index>(std::llround(ratio));
    if (k < 1 || std::abs(ratio - static_cast<double>(k)) > 1e-9 * static_cast<double>(k)) {
        throw ValidationError("downsample ratio " + std::to_string(ratio) +
                              " is not a positive integer (period " +
                              std::to_string(rec.sample_period_ms) + " ms to " +
                              std::to_string(target_period_ms) + " ms)");
    }
    Recording out = rec;
    out.sample_period_ms = target_period_ms;
    if (k == 1) return out;
    Eigen::Index blocks = rec.samples() / k;  // trailing partial block dropped
    out.data.resize(rec.channels(), blocks);
    for (Eigen::Index b = 0; b < blocks; ++b) {
        out.data.col(b) = rec.data.middleCols(b * k, k).rowwise().mean();
    }
    return out;
}

Recording select_channels(const Recording& rec, const std::vector<std::string>& names) {
    Recording out = rec;
    out.channel_names = names;
    out.data.resize(static_cast<Eigen::Index>(names.size()), rec.samples());
    for (std::size_t i = 0; i < names.size(); ++i) {
        auto it = std::find(rec.channel_names.begin(), rec.channel_names.end(), names[i]);
        if (it == rec.channel_names.end()) {
            throw ValidationError("unknown channel '" + names[i] + "' in stimulus '" +
                                  rec.stimulus_id + "'");
        }
        out.data.row(static_cast<Eigen::Index>(i)) =
            rec.data.row(std::distance(rec.channel_names.begin(), it));
    }
    return out;
}

StandardizationStats fit_standardizer(const Matrix& rows) {
    if (rows.rows() < 1) throw ValidationError("standardizer needs at least one row");
    StandardizationStats stats;
    stats.means = rows.colwise().mean();
    Matrix centered = rows.rowwise() - stats.means.transpose();
    stats.stds = (centered.array().square().colwise().mean()).sqrt();
    for (Eigen::Index c = 0; c < stats.stds.size(); ++c) {
        if (stats.stds(c) < stats.epsilon) stats.stds(c) = 0.0;
    }
    return stats;
}

Matrix apply_standardizer(const Matrix& rows, const StandardizationStats& stats) {
    if (rows.cols() != stats.size()) {
        throw ValidationError("standardizer fitted on " + std::to_string(stats.size()) +
                              " columns, applied to " + std::to_string(rows.cols()));
    }
    Matrix out(rows.rows(), rows.cols());
    for (Eigen::Index c = 0; c < rows.cols(); ++c) {
        if (stats.stds(c) == 0.0) {
            out.col(c).setZero();
        } else {
            out.col(c) = (rows.col(c).array() - stats.means(c)) / stats.stds(c);
        }
    }
    return out;
}

Dataset align_timebase(Dataset ds) {
    for (auto& rec : ds.recordings) {
        double frame_period = ds.spectrogram(rec.stimulus_id).frame_period_ms;
        if (rec.sample_period_ms != frame_period) {
            rec = downsample(rec, frame_period);
        }
    }
    return ds;
}

}  // namespace neurodec
