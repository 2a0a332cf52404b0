#pragma once

// Run configuration: one JSON document with defaults for every field. Unknown
// keys are errors that name the offending key. Overrides of the form
// section.key=value are applied before validation.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "famae/harness.hpp"

namespace famae {

using nlohmann::json;

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Strict field reading

namespace detail {

using FieldReaders = std::map<std::string, std::function<void(const json&, const std::string&)>>;

inline void read_object(const json& j, const std::string& where, const FieldReaders& fields) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        const std::string path = where.empty() ? key : where + "." + key;
        auto it = fields.find(key);
        if (it == fields.end()) throw ConfigError("unknown config key '" + path + "'");
        try {
            it->second(value, path);
        } catch (const json::exception& e) {
            throw ConfigError("invalid value for '" + path + "': " + e.what());
        }
    }
}

template <class T>
std::function<void(const json&, const std::string&)> field(T& target) {
    return [&target](const json& v, const std::string& path) {
        if constexpr (std::is_same_v<T, std::size_t>) {
            if (!v.is_number_unsigned()) throw ConfigError("'" + path + "' must be a non-negative integer");
        } else if constexpr (std::is_same_v<T, double>) {
            if (!v.is_number()) throw ConfigError("'" + path + "' must be a number");
        } else if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError("'" + path + "' must be true or false");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError("'" + path + "' must be a string");
        }
        target = v.get<T>();
    };
}

/// Numbers, or the strings "inf" / "infinity" for an unbounded value.
inline double number_or_inf(const json& v, const std::string& path) {
    if (v.is_number()) return v.get<double>();
    if (v.is_string() && (v == "inf" || v == "infinity")) return std::numeric_limits<double>::infinity();
    throw ConfigError("'" + path + "' must be a number or \"inf\"");
}

inline json inf_or_number(double x) {
    if (std::isinf(x)) return "inf";
    return x;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Sections

inline json to_json(const EncoderConfig& c) {
    return {{"depth", c.depth},
            {"width", c.width},
            {"heads", c.heads},
            {"patch", c.patch},
            {"mlp_dim", c.mlp_dim},
            {"dropout", c.dropout},
            {"operator", to_string(c.op)},
            {"mixer", c.mixer == TokenMixer::Frequency ? "frequency" : "attention"},
            {"attn_head_dim", c.attn_head_dim}};
}

inline EncoderConfig encoder_config_from(const json& j, const std::string& where, EncoderConfig c = {}) {
    std::string op(to_string(c.op));
    std::string mixer = c.mixer == TokenMixer::Frequency ? "frequency" : "attention";
    detail::read_object(j, where,
                        {{"depth", detail::field(c.depth)},
                         {"width", detail::field(c.width)},
                         {"heads", detail::field(c.heads)},
                         {"patch", detail::field(c.patch)},
                         {"mlp_dim", detail::field(c.mlp_dim)},
                         {"dropout", detail::field(c.dropout)},
                         {"operator", detail::field(op)},
                         {"mixer", detail::field(mixer)},
                         {"attn_head_dim", detail::field(c.attn_head_dim)}});
    try {
        c.op = parse_filter_operator(op);
    } catch (const std::exception&) {
        throw ConfigError("'" + where + ".operator' must be \"query\" or \"maxpool\", got \"" + op + "\"");
    }
    if (mixer == "frequency") {
        c.mixer = TokenMixer::Frequency;
    } else if (mixer == "attention") {
        c.mixer = TokenMixer::SelfAttention;
    } else {
        throw ConfigError("'" + where + ".mixer' must be \"frequency\" or \"attention\", got \"" + mixer + "\"");
    }
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(where + ": " + e.what());
    }
    return c;
}

inline json to_json(const MaeConfig& c) {
    return {{"enc2_depth", c.enc2_depth}, {"dec_depth", c.dec_depth},       {"heads", c.heads},
            {"mlp_dim", c.mlp_dim},       {"max_channels", c.max_channels}, {"dropout", c.dropout},
            {"chan_embed_std", c.chan_embed_std}};
}

inline MaeConfig mae_config_from(const json& j, const std::string& where, MaeConfig c = {}) {
    detail::read_object(j, where,
                        {{"enc2_depth", detail::field(c.enc2_depth)},
                         {"dec_depth", detail::field(c.dec_depth)},
                         {"heads", detail::field(c.heads)},
                         {"mlp_dim", detail::field(c.mlp_dim)},
                         {"max_channels", detail::field(c.max_channels)},
                         {"dropout", detail::field(c.dropout)},
                         {"chan_embed_std", detail::field(c.chan_embed_std)}});
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(where + ": " + e.what());
    }
    return c;
}

inline json to_json(const SynthConfig& c) {
    json channels = json::array();
    for (const auto& ch : c.channels) {
        channels.push_back({{"name", ch.name},
                            {"band_centers_hz", ch.band_centers_hz},
                            {"band_width_hz", ch.band_width_hz},
                            {"snr", detail::inf_or_number(ch.snr)},
                            {"duplicate_of", ch.duplicate_of}});
    }
    return {{"name", c.name},
            {"n_classes", c.n_classes},
            {"length", c.length},
            {"sampling_rate_hz", c.sampling_rate_hz},
            {"noise_exponent", c.noise_exponent},
            {"shared_latent", c.shared_latent},
            {"channels", channels},
            {"sizes", {{"train", c.sizes.train}, {"val", c.sizes.val}, {"test", c.sizes.test}}}};
}

inline SynthConfig synth_config_from(const json& j, const std::string& where, SynthConfig c = {}) {
    detail::read_object(
        j, where,
        {{"name", detail::field(c.name)},
         {"n_classes", detail::field(c.n_classes)},
         {"length", detail::field(c.length)},
         {"sampling_rate_hz", detail::field(c.sampling_rate_hz)},
         {"noise_exponent", detail::field(c.noise_exponent)},
         {"shared_latent", detail::field(c.shared_latent)},
         {"sizes",
          [&](const json& v, const std::string& path) {
              detail::read_object(v, path,
                                  {{"train", detail::field(c.sizes.train)},
                                   {"val", detail::field(c.sizes.val)},
                                   {"test", detail::field(c.sizes.test)}});
          }},
         {"channels", [&](const json& v, const std::string& path) {
              if (!v.is_array()) throw ConfigError("'" + path + "' must be an array");
              c.channels.clear();
              for (std::size_t i = 0; i < v.size(); ++i) {
                  SynthChannel ch;
                  const std::string p = path + "[" + std::to_string(i) + "]";
                  detail::read_object(v[i], p,
                                      {{"name", detail::field(ch.name)},
                                       {"band_centers_hz",
                                        [&](const json& b, const std::string&) {
                                            ch.band_centers_hz = b.get<std::vector<std::vector<double>>>();
                                        }},
                                       {"band_width_hz", detail::field(ch.band_width_hz)},
                                       {"snr", [&](const json& s, const std::string& sp) { ch.snr = detail::number_or_inf(s, sp); }},
                                       {"duplicate_of", detail::field(ch.duplicate_of)}});
                  if (ch.name.empty()) throw ConfigError("'" + p + ".name' is required");
                  c.channels.push_back(std::move(ch));
              }
          }}});
    try {
        c.validate();
    } catch (const DatasetError& e) {
        throw ConfigError(where + ": " + e.what());
    }
    return c;
}

// ---------------------------------------------------------------------------
// Default desk-scale experiment

/// A multichannel source corpus whose classes are defined by spectral bands.
inline SynthConfig default_source_synth() {
    SynthConfig c;
    c.name = "source";
    c.n_classes = 4;
    c.length = 200;
    c.sampling_rate_hz = 100.0;
    c.channels = {{"eeg", {{4.0}, {8.0}, {13.0}, {20.0}}, 1.0, 3.0, ""},
                  {"eog", {{6.0}, {11.0}, {17.0}, {25.0}}, 1.0, 3.0, ""},
                  {"emg", {{9.0}, {15.0}, {22.0}, {30.0}}, 1.0, 3.0, ""}};
    c.sizes = {600, 60, 60};
    return c;
}

/// A few-shot single-channel target. Its class bands belong to the source's
/// eog and emg vocabularies, not to the eeg channel it is recorded on.
inline SynthConfig default_target_synth() {
    SynthConfig c;
    c.name = "target";
    c.n_classes = 4;
    c.length = 200;
    c.sampling_rate_hz = 100.0;
    c.channels = {{"eeg", {{6.0}, {11.0}, {15.0}, {25.0}}, 1.0, 0.3, ""}};
    c.sizes = {60, 20, 500};
    return c;
}

struct DataSection {
    /// Dataset directory for pretraining; empty means generate `synth`.
    std::string path;
    SynthConfig synth = default_source_synth();
    /// Dataset directory for fine-tuning; empty means generate `target_synth`.
    std::string target_path;
    SynthConfig target_synth = default_target_synth();
};

struct AblateSection {
    std::vector<AblationToggles> grid = {{true, true, {}}, {true, false, {}}, {false, true, {}}, {false, false, {}}};
    /// Empty means the run seed alone.
    std::vector<std::uint64_t> seeds;
};

struct MismatchSection {
    std::string mode = "dropout"; // or "substitution"
    /// Empty means every target channel.
    std::vector<std::string> base_channels;
    std::vector<std::pair<std::string, std::string>> substitutions;
    /// Empty means drop channels from the end until one is left.
    std::vector<std::vector<std::string>> subsets;
};

struct AttnSection {
    std::string split = "test";
    std::size_t samples = 32;
};

struct RunConfig {
    EncoderConfig model;
    MaeConfig mae;
    PretrainConfig pretrain;
    FinetuneConfig finetune;
    DataSection data;
    AblateSection ablate;
    MismatchSection mismatch;
    AttnSection attn;
    std::uint64_t seed = 0;
    std::string output_dir = "runs";
};

inline json to_json(const RunConfig& c) {
    json grid = json::array();
    for (const auto& t : c.ablate.grid) {
        json cell = {{"fa_on", t.fa_on}, {"fm_on", t.fm_on}};
        cell["keep_enc2"] = t.keep_enc2_at_test ? json(*t.keep_enc2_at_test) : json(nullptr);
        grid.push_back(cell);
    }
    json subs = json::array();
    for (const auto& [a, b] : c.mismatch.substitutions) subs.push_back({a, b});
    return {{"model", to_json(c.model)},
            {"mae", to_json(c.mae)},
            {"pretrain",
             {{"epochs", c.pretrain.epochs},
              {"batch", c.pretrain.batch},
              {"lr", c.pretrain.lr},
              {"mask_ratio", c.pretrain.mask_ratio},
              {"channels", c.pretrain.channels},
              {"fm_on", c.pretrain.fm_on}}},
            {"finetune",
             {{"epochs", c.finetune.epochs},
              {"batch", c.finetune.batch},
              {"lr", c.finetune.lr},
              {"keep_enc2", c.finetune.keep_enc2 ? json(*c.finetune.keep_enc2) : json(nullptr)},
              {"channels", c.finetune.channels}}},
            {"data",
             {{"path", c.data.path},
              {"synth", to_json(c.data.synth)},
              {"target_path", c.data.target_path},
              {"target_synth", to_json(c.data.target_synth)}}},
            {"ablate", {{"grid", grid}, {"seeds", c.ablate.seeds}}},
            {"mismatch",
             {{"mode", c.mismatch.mode},
              {"base_channels", c.mismatch.base_channels},
              {"substitutions", subs},
              {"subsets", c.mismatch.subsets}}},
            {"attn", {{"split", c.attn.split}, {"samples", c.attn.samples}}},
            {"seed", c.seed},
            {"output_dir", c.output_dir}};
}

inline RunConfig run_config_from(const json& j) {
    RunConfig c;
    auto strings = [](std::vector<std::string>& target) {
        return [&target](const json& v, const std::string& path) {
            if (!v.is_array()) throw ConfigError("'" + path + "' must be a list of strings");
            target = v.get<std::vector<std::string>>();
        };
    };
    auto optional_bool = [](std::optional<bool>& target) {
        return [&target](const json& v, const std::string& path) {
            if (v.is_null()) {
                target.reset();
            } else if (v.is_boolean()) {
                target = v.get<bool>();
            } else {
                throw ConfigError("'" + path + "' must be true, false or null");
            }
        };
    };
    detail::read_object(
        j, "",
        {{"model", [&](const json& v, const std::string& p) { c.model = encoder_config_from(v, p); }},
         {"mae", [&](const json& v, const std::string& p) { c.mae = mae_config_from(v, p); }},
         {"pretrain",
          [&](const json& v, const std::string& p) {
              detail::read_object(v, p,
                                  {{"epochs", detail::field(c.pretrain.epochs)},
                                   {"batch", detail::field(c.pretrain.batch)},
                                   {"lr", detail::field(c.pretrain.lr)},
                                   {"mask_ratio", detail::field(c.pretrain.mask_ratio)},
                                   {"channels", strings(c.pretrain.channels)},
                                   {"fm_on", detail::field(c.pretrain.fm_on)}});
          }},
         {"finetune",
          [&](const json& v, const std::string& p) {
              detail::read_object(v, p,
                                  {{"epochs", detail::field(c.finetune.epochs)},
                                   {"batch", detail::field(c.finetune.batch)},
                                   {"lr", detail::field(c.finetune.lr)},
                                   {"keep_enc2", optional_bool(c.finetune.keep_enc2)},
                                   {"channels", strings(c.finetune.channels)}});
          }},
         {"data",
          [&](const json& v, const std::string& p) {
              detail::read_object(
                  v, p,
                  {{"path", detail::field(c.data.path)},
                   {"synth", [&](const json& s, const std::string& sp) { c.data.synth = synth_config_from(s, sp, c.data.synth); }},
                   {"target_path", detail::field(c.data.target_path)},
                   {"target_synth",
                    [&](const json& s, const std::string& sp) { c.data.target_synth = synth_config_from(s, sp, c.data.target_synth); }}});
          }},
         {"ablate",
          [&](const json& v, const std::string& p) {
              detail::read_object(
                  v, p,
                  {{"grid",
                    [&](const json& g, const std::string& gp) {
                        if (!g.is_array()) throw ConfigError("'" + gp + "' must be a list");
                        c.ablate.grid.clear();
                        for (std::size_t i = 0; i < g.size(); ++i) {
                            AblationToggles t;
                            detail::read_object(g[i], gp + "[" + std::to_string(i) + "]",
                                                {{"fa_on", detail::field(t.fa_on)},
                                                 {"fm_on", detail::field(t.fm_on)},
                                                 {"keep_enc2", optional_bool(t.keep_enc2_at_test)}});
                            c.ablate.grid.push_back(t);
                        }
                    }},
                   {"seeds", [&](const json& s, const std::string&) { c.ablate.seeds = s.get<std::vector<std::uint64_t>>(); }}});
          }},
         {"mismatch",
          [&](const json& v, const std::string& p) {
              detail::read_object(
                  v, p,
                  {{"mode", detail::field(c.mismatch.mode)},
                   {"base_channels", strings(c.mismatch.base_channels)},
                   {"substitutions",
                    [&](const json& s, const std::string&) {
                        c.mismatch.substitutions = s.get<std::vector<std::pair<std::string, std::string>>>();
                    }},
                   {"subsets",
                    [&](const json& s, const std::string&) {
                        c.mismatch.subsets = s.get<std::vector<std::vector<std::string>>>();
                    }}});
              if (c.mismatch.mode != "dropout" && c.mismatch.mode != "substitution") {
                  throw ConfigError("'mismatch.mode' must be \"dropout\" or \"substitution\", got \"" + c.mismatch.mode + "\"");
              }
          }},
         {"attn",
          [&](const json& v, const std::string& p) {
              detail::read_object(v, p, {{"split", detail::field(c.attn.split)}, {"samples", detail::field(c.attn.samples)}});
          }},
         {"seed",
          [&](const json& v, const std::string& p) {
              if (!v.is_number_unsigned()) throw ConfigError("'" + p + "' must be a non-negative integer");
              c.seed = v.get<std::uint64_t>();
          }},
         {"output_dir", detail::field(c.output_dir)}});
    if (c.pretrain.batch == 0 || c.finetune.batch == 0) throw ConfigError("batch sizes must be >= 1");
    if (!(c.pretrain.mask_ratio >= 0.0 && c.pretrain.mask_ratio < 1.0)) throw ConfigError("'pretrain.mask_ratio' must be in [0, 1)");
    if (!(c.pretrain.lr > 0.0) || !(c.finetune.lr > 0.0)) throw ConfigError("learning rates must be > 0");
    return c;
}

/// Applies one "a.b.c=value" override to a JSON document. The value is read
/// as JSON when it parses, otherwise as a plain string.
inline void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not of the form key=value");
    const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
        if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            break;
        }
        if (!node->contains(part)) (*node)[part] = json::object();
        node = &(*node)[part];
        start = dot + 1;
    }
}

inline json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config " + path.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config " + path.string() + " is not valid JSON");
    return j;
}

inline RunConfig load_run_config(const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides) {
    json doc = path ? read_json_file(*path) : json::object();
    for (const auto& o : overrides) apply_override(doc, o);
    return run_config_from(doc);
}

/// Hash of the experiment settings; the output location does not enter it.
inline std::string config_hash(const RunConfig& c) {
    json j = to_json(c);
    j.erase("output_dir");
    const std::string text = j.dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace famae
