#pragma once

// Checkpoint archive: 16-byte magic, u64 header length, UTF-8 JSON header,
// then raw little-endian float64 parameter data. The header's "parameters"
// manifest lists every tensor in order with its offset (in float64 values)
// into the data section; complex tensors are stored as interleaved (re, im).

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "famae/blob.hpp"
#include "famae/config.hpp"
#include "famae/pretrainer.hpp"

namespace famae {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[16] = {'F', 'A', 'M', 'A', 'E', '-', 'C', 'K', 'P', 'T', 0, 0, 0, 0, 0, 1};

inline void save_checkpoint(const std::filesystem::path& path, const ParamList& params, nlohmann::json header) {
    nlohmann::json manifest = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& p : params) {
        const std::size_t count = p.scalar_count();
        manifest.push_back({{"name", p.name},
                            {"shape", p.shape()},
                            {"dtype", p.is_complex() ? "c128" : "f64"},
                            {"offset", offset},
                            {"count", count}});
        offset += count;
    }
    header["parameters"] = manifest;
    const std::string text = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : params) {
        std::visit(
            [&](const auto& t) {
                out.write(reinterpret_cast<const char*>(t.data().data()),
                          static_cast<std::streamsize>(t.numel() * sizeof(t.data()[0])));
            },
            p.tensor);
    }
    if (!out) throw CheckpointError("write failed for checkpoint " + path.string());
}

struct CheckpointFile {
    nlohmann::json header;
    std::vector<double> data;
};

inline CheckpointFile read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    char magic[16];
    std::uint64_t len = 0;
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
        throw CheckpointError(path.string() + " is not a checkpoint (bad magic)");
    }
    if (!in.read(reinterpret_cast<char*>(&len), sizeof len)) throw CheckpointError("truncated checkpoint " + path.string());
    const auto total = std::filesystem::file_size(path);
    if (len > total) throw CheckpointError("corrupt checkpoint header length in " + path.string());
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    CheckpointFile f;
    f.header = nlohmann::json::parse(text, nullptr, false);
    if (f.header.is_discarded() || !f.header.contains("parameters")) {
        throw CheckpointError("corrupt checkpoint header in " + path.string());
    }
    const std::size_t data_bytes = total - sizeof magic - sizeof len - len;
    if (data_bytes % sizeof(double) != 0) throw CheckpointError("checkpoint data is not a whole number of float64 values");
    f.data.resize(data_bytes / sizeof(double));
    in.read(reinterpret_cast<char*>(f.data.data()), static_cast<std::streamsize>(data_bytes));
    if (!in) throw CheckpointError("truncated checkpoint " + path.string());
    return f;
}

/// Fills `params` (same names, shapes and order as saved) from a checkpoint.
inline void load_parameters(const CheckpointFile& f, ParamList& params) {
    const auto& manifest = f.header.at("parameters");
    if (manifest.size() != params.size()) {
        throw CheckpointError("checkpoint holds " + std::to_string(manifest.size()) + " tensors, model expects " +
                              std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& m = manifest[i];
        auto& p = params[i];
        const auto shape = m.at("shape").get<Shape>();
        const std::string dtype = m.at("dtype").get<std::string>();
        if (m.at("name") != p.name || shape != p.shape() || (dtype == "c128") != p.is_complex()) {
            throw CheckpointError("checkpoint tensor '" + m.at("name").get<std::string>() + "' " + shape_str(shape) +
                                  " does not match model tensor '" + p.name + "' " + shape_str(p.shape()));
        }
        const std::size_t offset = m.at("offset").get<std::size_t>(), count = m.at("count").get<std::size_t>();
        if (count != p.scalar_count() || offset + count > f.data.size()) {
            throw CheckpointError("checkpoint tensor '" + p.name + "' lies outside the data section");
        }
        std::visit(
            [&](auto& t) {
                std::memcpy(static_cast<void*>(t.mutable_data().data()), f.data.data() + offset, count * sizeof(double));
            },
            p.tensor);
    }
}

struct ModelCheckpoint {
    MaeModel model;
    std::size_t epoch = 0;
    std::uint64_t seed = 0;
    nlohmann::json header;
};

inline void save_model(const std::filesystem::path& path, const MaeModel& model, std::size_t epoch, std::uint64_t seed,
                       nlohmann::json extra = nlohmann::json::object()) {
    nlohmann::json header = std::move(extra);
    header["config"] = {{"model", to_json(model.encoder.config)}, {"mae", to_json(model.mae.config)}};
    header["channel_slots"] = model.mae.mixer.channel_slots;
    header["epoch"] = epoch;
    header["seed"] = seed;
    save_checkpoint(path, model.parameters(), std::move(header));
}

inline ModelCheckpoint load_model(const std::filesystem::path& path) {
    const CheckpointFile f = read_checkpoint(path);
    ModelCheckpoint out;
    try {
        const auto& cfg = f.header.at("config");
        const EncoderConfig enc = encoder_config_from(cfg.at("model"), "config.model");
        const MaeConfig mae = mae_config_from(cfg.at("mae"), "config.mae");
        Rng scratch(0);
        out.model = MaeModel(enc, mae, scratch);
        out.model.mae.mixer.channel_slots = f.header.at("channel_slots").get<std::vector<std::string>>();
        out.epoch = f.header.at("epoch").get<std::size_t>();
        out.seed = f.header.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("checkpoint " + path.string() + " has an invalid header: " + e.what());
    } catch (const ConfigError& e) {
        throw CheckpointError("checkpoint " + path.string() + " has an invalid config: " + e.what());
    }
    auto params = out.model.parameters();
    load_parameters(f, params);
    out.header = f.header;
    return out;
}

} // namespace famae
