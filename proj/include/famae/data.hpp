#pragma once

// Datasets: in-memory bundle, on-disk directory format, standardization and
// a synthetic multichannel generator whose classes differ by spectral bands.
//
// On disk a dataset is a directory holding manifest.json and, per split,
// <split>_signals.bin (float64 [num, C, L]) and <split>_labels.bin
// (int32 [num]) in the FAMAE-TENSOR blob layout (see blob.hpp).

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "famae/blob.hpp"
#include "famae/rng.hpp"
#include "famae/spectral_ops.hpp"
#include "famae/tensor.hpp"

namespace famae {

class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline const std::vector<std::string>& split_names() {
    static const std::vector<std::string> names = {"train", "val", "test"};
    return names;
}

struct SplitData {
    TensorF signals{Shape{0, 0, 0}}; // [num, C, L]
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
};

struct DatasetBundle {
    std::string name;
    double sampling_rate_hz = 100.0;
    std::size_t length = 0;
    std::vector<std::string> channels;
    std::size_t n_classes = 0;
    std::map<std::string, SplitData> splits;
    /// Manifest keys this library does not interpret; preserved on save.
    nlohmann::json extra = nlohmann::json::object();

    const SplitData& split(const std::string& which) const {
        auto it = splits.find(which);
        if (it == splits.end()) throw DatasetError("dataset '" + name + "' has no split '" + which + "'");
        return it->second;
    }

    std::size_t channel_index(const std::string& channel) const {
        for (std::size_t i = 0; i < channels.size(); ++i)
            if (channels[i] == channel) return i;
        throw DatasetError("dataset '" + name + "' has no channel '" + channel + "'");
    }

    void validate() const {
        if (channels.empty()) throw DatasetError("dataset '" + name + "': no channels");
        if (length == 0) throw DatasetError("dataset '" + name + "': zero length");
        for (const auto& [split_name, s] : splits) {
            const Shape expected{s.labels.size(), channels.size(), length};
            if (s.signals.shape() != expected) {
                throw DatasetError("split '" + split_name + "': signals " + shape_str(s.signals.shape()) +
                                   " do not match " + shape_str(expected));
            }
            for (int y : s.labels) {
                if (y < 0 || static_cast<std::size_t>(y) >= n_classes) {
                    throw DatasetError("split '" + split_name + "': label " + std::to_string(y) + " outside [0, " +
                                       std::to_string(n_classes) + ")");
                }
            }
        }
    }
};

/// Per sample and channel: subtract the mean and divide by the standard
/// deviation over the window (floored at 1e-8). Works on [..., L].
inline TensorF standardize(const TensorF& signals, double std_floor = 1e-8) {
    if (signals.rank() == 0) return signals.detach();
    const std::size_t len = signals.shape().back();
    std::vector<double> out(signals.values());
    if (len == 0) return TensorF(signals.shape(), std::move(out));
    for (std::size_t r = 0; r < out.size() / len; ++r) {
        double* row = out.data() + r * len;
        double mu = 0.0;
        for (std::size_t i = 0; i < len; ++i) mu += row[i];
        mu /= static_cast<double>(len);
        double var = 0.0;
        for (std::size_t i = 0; i < len; ++i) var += (row[i] - mu) * (row[i] - mu);
        const double sd = std::max(std::sqrt(var / static_cast<double>(len)), std_floor);
        for (std::size_t i = 0; i < len; ++i) row[i] = (row[i] - mu) / sd;
    }
    return TensorF(signals.shape(), std::move(out));
}

inline DatasetBundle standardized(DatasetBundle bundle) {
    for (auto& [_, s] : bundle.splits) s.signals = standardize(s.signals);
    return bundle;
}

/// Selects samples and channels: [num, C, L] -> [idx.size(), channels.size(), L].
inline TensorF select_samples(const SplitData& split, const std::vector<std::size_t>& samples,
                              const std::vector<std::size_t>& channels) {
    const std::size_t c_all = split.signals.dim(1), len = split.signals.dim(2);
    std::vector<double> out(samples.size() * channels.size() * len);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        for (std::size_t c = 0; c < channels.size(); ++c) {
            std::copy_n(split.signals.data().data() + (samples[i] * c_all + channels[c]) * len, len,
                        out.data() + (i * channels.size() + c) * len);
        }
    }
    return TensorF({samples.size(), channels.size(), len}, std::move(out));
}

// ---------------------------------------------------------------------------
// Synthetic generator

struct SynthChannel {
    std::string name;
    /// Band centers per class; an empty list makes a noise-only channel.
    std::vector<std::vector<double>> band_centers_hz;
    double band_width_hz = 1.0;
    /// Ratio of sinusoid rms to noise rms; infinity disables noise.
    double snr = 5.0;
    /// Copy another channel's samples verbatim.
    std::string duplicate_of;
};

struct SplitSizes {
    std::size_t train = 60;
    std::size_t val = 20;
    std::size_t test = 500;

    std::size_t of(const std::string& which) const {
        if (which == "train") return train;
        if (which == "val") return val;
        return test;
    }
};

struct SynthConfig {
    std::string name = "synthetic";
    std::size_t n_classes = 2;
    std::size_t length = 200;
    double sampling_rate_hz = 100.0;
    double noise_exponent = 1.0;
    /// When false only the first channel follows the label; the others follow
    /// an independently drawn class.
    bool shared_latent = true;
    std::vector<SynthChannel> channels;
    SplitSizes sizes;

    void validate() const {
        if (n_classes == 0) throw DatasetError("synth: n_classes must be >= 1");
        if (length == 0) throw DatasetError("synth: length must be >= 1");
        if (channels.empty()) throw DatasetError("synth: at least one channel is required");
        const double nyquist = sampling_rate_hz / 2.0;
        for (const auto& ch : channels) {
            if (!ch.duplicate_of.empty()) {
                bool found = false;
                for (const auto& other : channels) found = found || (other.name == ch.duplicate_of && other.duplicate_of.empty());
                if (!found) throw DatasetError("synth: channel '" + ch.name + "' duplicates unknown channel '" + ch.duplicate_of + "'");
                continue;
            }
            if (!ch.band_centers_hz.empty() && ch.band_centers_hz.size() != n_classes) {
                throw DatasetError("synth: channel '" + ch.name + "' lists bands for " +
                                   std::to_string(ch.band_centers_hz.size()) + " classes, expected " +
                                   std::to_string(n_classes));
            }
            for (const auto& bands : ch.band_centers_hz) {
                for (double f : bands) {
                    if (f <= 0.0 || f + ch.band_width_hz / 2.0 >= nyquist) {
                        throw DatasetError("synth: channel '" + ch.name + "' band at " + std::to_string(f) +
                                           " Hz is outside (0, Nyquist=" + std::to_string(nyquist) + " Hz)");
                    }
                }
            }
            if (!(ch.snr > 0.0)) throw DatasetError("synth: channel '" + ch.name + "' snr must be > 0");
        }
    }
};

namespace detail {

/// Unit-variance Gaussian noise with power spectrum ~ 1/f^alpha.
inline std::vector<double> power_law_noise(std::size_t len, double alpha, Rng& rng) {
    const std::size_t bins = len / 2 + 1;
    std::vector<cdouble> spec(bins, cdouble{});
    for (std::size_t k = 1; k < bins; ++k) {
        const double amp = std::pow(static_cast<double>(k), -alpha / 2.0);
        const double re = rng.normal();
        const double im = rng.normal();
        spec[k] = amp * cdouble(re, im);
    }
    if (len == 1) return {rng.normal()};
    NoGradGuard guard;
    const TensorF x = irdft(TensorC({bins}, std::move(spec)), 0, len);
    std::vector<double> out(x.values());
    double mu = 0.0, var = 0.0;
    for (double v : out) mu += v;
    mu /= static_cast<double>(len);
    for (double v : out) var += (v - mu) * (v - mu);
    const double sd = std::sqrt(var / static_cast<double>(len));
    for (double& v : out) v = sd > 0.0 ? (v - mu) / sd : 0.0;
    return out;
}

} // namespace detail

/// Draws every split. Labels are balanced (class k appears floor or ceil of
/// num/n_classes times) and shuffled.
inline DatasetBundle synth_generate(const SynthConfig& cfg, Rng& rng) {
    cfg.validate();
    DatasetBundle bundle;
    bundle.name = cfg.name;
    bundle.sampling_rate_hz = cfg.sampling_rate_hz;
    bundle.length = cfg.length;
    bundle.n_classes = cfg.n_classes;
    for (const auto& ch : cfg.channels) bundle.channels.push_back(ch.name);

    const std::size_t n_ch = cfg.channels.size(), len = cfg.length;
    for (const auto& split_name : split_names()) {
        Rng split_rng = rng.substream(split_name);
        const std::size_t num = cfg.sizes.of(split_name);
        std::vector<int> labels(num);
        for (std::size_t i = 0; i < num; ++i) labels[i] = static_cast<int>(i % cfg.n_classes);
        split_rng.shuffle(std::span<int>(labels));

        std::vector<double> signals(num * n_ch * len, 0.0);
        for (std::size_t i = 0; i < num; ++i) {
            for (std::size_t c = 0; c < n_ch; ++c) {
                const auto& ch = cfg.channels[c];
                double* out = signals.data() + (i * n_ch + c) * len;
                if (!ch.duplicate_of.empty()) continue; // filled below
                const int cls = (cfg.shared_latent || c == 0)
                                    ? labels[i]
                                    : static_cast<int>(split_rng.index(cfg.n_classes));
                double signal_rms = 0.0;
                if (!ch.band_centers_hz.empty()) {
                    const auto& bands = ch.band_centers_hz[static_cast<std::size_t>(cls)];
                    for (double center : bands) {
                        const double f = center + split_rng.uniform(-ch.band_width_hz / 2.0, ch.band_width_hz / 2.0);
                        const double phase = split_rng.uniform(0.0, 2.0 * std::numbers::pi);
                        for (std::size_t t = 0; t < len; ++t) {
                            out[t] += std::sin(2.0 * std::numbers::pi * f * static_cast<double>(t) / cfg.sampling_rate_hz + phase);
                        }
                    }
                    signal_rms = std::sqrt(static_cast<double>(bands.size()) / 2.0);
                }
                if (std::isfinite(ch.snr)) {
                    const double noise_rms = signal_rms > 0.0 ? signal_rms / ch.snr : 1.0;
                    const auto noise = detail::power_law_noise(len, cfg.noise_exponent, split_rng);
                    for (std::size_t t = 0; t < len; ++t) out[t] += noise_rms * noise[t];
                }
            }
            for (std::size_t c = 0; c < n_ch; ++c) {
                const auto& ch = cfg.channels[c];
                if (ch.duplicate_of.empty()) continue;
                std::size_t src = 0;
                while (cfg.channels[src].name != ch.duplicate_of) ++src;
                std::copy_n(signals.data() + (i * n_ch + src) * len, len, signals.data() + (i * n_ch + c) * len);
            }
        }
        SplitData split;
        split.signals = TensorF({num, n_ch, len}, std::move(signals));
        split.labels = std::move(labels);
        bundle.splits[split_name] = std::move(split);
    }
    bundle.validate();
    return bundle;
}

// ---------------------------------------------------------------------------
// Directory format

inline nlohmann::json manifest_of(const DatasetBundle& b) {
    nlohmann::json m = b.extra.is_object() ? b.extra : nlohmann::json::object();
    m["name"] = b.name;
    m["sampling_rate_hz"] = b.sampling_rate_hz;
    m["length"] = b.length;
    m["channels"] = b.channels;
    m["n_classes"] = b.n_classes;
    nlohmann::json splits = nlohmann::json::object();
    for (const auto& [name, s] : b.splits) splits[name] = s.size();
    m["splits"] = splits;
    m["format"] = "FAMAE-TENSOR";
    return m;
}

inline void save_dataset(const DatasetBundle& b, const std::filesystem::path& dir) {
    b.validate();
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "manifest.json", std::ios::binary);
        if (!out) throw DatasetError("cannot write " + (dir / "manifest.json").string());
        out << manifest_of(b).dump(2) << '\n';
    }
    for (const auto& [name, s] : b.splits) {
        write_blob(dir / (name + "_signals.bin"), s.signals.shape(), std::span<const double>(s.signals.data()));
        write_blob(dir / (name + "_labels.bin"), Shape{s.labels.size()}, std::span<const int>(s.labels));
    }
}

inline DatasetBundle load_dataset(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path, std::ios::binary);
    if (!in) throw DatasetError("cannot read " + manifest_path.string());
    nlohmann::json m;
    try {
        in >> m;
    } catch (const nlohmann::json::exception& e) {
        throw DatasetError("malformed manifest " + manifest_path.string() + ": " + e.what());
    }
    DatasetBundle b;
    try {
        b.name = m.at("name").get<std::string>();
        b.sampling_rate_hz = m.at("sampling_rate_hz").get<double>();
        b.length = m.at("length").get<std::size_t>();
        b.channels = m.at("channels").get<std::vector<std::string>>();
        b.n_classes = m.at("n_classes").get<std::size_t>();
        for (const auto& [name, count] : m.at("splits").items()) {
            SplitData s;
            const auto signals = read_blob<double>(dir / (name + "_signals.bin"), "split '" + name + "' signals");
            const auto labels = read_blob<int>(dir / (name + "_labels.bin"), "split '" + name + "' labels");
            const std::size_t num = count.get<std::size_t>();
            if (signals.shape != Shape{num, b.channels.size(), b.length} || labels.shape != Shape{num}) {
                throw DatasetError("size mismatch in split '" + name + "': manifest declares " + std::to_string(num) +
                                   " samples, blobs hold " + shape_str(signals.shape) + " and " + shape_str(labels.shape));
            }
            s.signals = TensorF(signals.shape, signals.values);
            s.labels = labels.values;
            b.splits[name] = std::move(s);
        }
    } catch (const nlohmann::json::exception& e) {
        throw DatasetError("malformed manifest " + manifest_path.string() + ": " + e.what());
    } catch (const BlobError& e) {
        throw DatasetError(e.what());
    }
    static const std::vector<std::string> known = {"name", "sampling_rate_hz", "length", "channels", "n_classes", "splits", "format"};
    for (const auto& [key, value] : m.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) b.extra[key] = value;
    }
    b.validate();
    return b;
}

} // namespace famae
