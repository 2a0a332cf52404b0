#pragma once

// Masked autoencoding in latent space. Every channel goes through the
// frequency-aware encoder unmasked; masking happens on the resulting tokens,
// the kept tokens of all channels are mixed by a small transformer (enc2),
// the grid is refilled with a learned mask token and decoded back to patches.

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "famae/attention.hpp"
#include "famae/data.hpp"
#include "famae/encoder.hpp"
#include "famae/optim.hpp"

namespace famae {

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct MaskSpec {
    double ratio = 0.5;

    void validate() const {
        if (!(ratio >= 0.0 && ratio < 1.0)) throw std::invalid_argument("MaskSpec: ratio must be in [0, 1)");
    }
    std::size_t masked_count(std::size_t n_tokens) const {
        return static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n_tokens)));
    }
};

/// Sorted masked token indices, drawn without replacement.
inline std::vector<std::size_t> sample_mask(std::size_t n_tokens, const MaskSpec& spec, Rng& rng) {
    spec.validate();
    if (n_tokens == 0) throw std::invalid_argument("sample_mask: n_tokens must be >= 1");
    const std::size_t count = spec.masked_count(n_tokens);
    if (count >= n_tokens) {
        throw std::invalid_argument("sample_mask: ratio " + std::to_string(spec.ratio) + " masks all " +
                                    std::to_string(n_tokens) + " tokens");
    }
    auto idx = rng.sample_without_replacement(n_tokens, count);
    std::sort(idx.begin(), idx.end());
    return idx;
}

inline std::vector<std::size_t> complement(const std::vector<std::size_t>& sorted, std::size_t n) {
    std::vector<std::size_t> out;
    out.reserve(n - sorted.size());
    std::size_t j = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (j < sorted.size() && sorted[j] == i) {
            ++j;
        } else {
            out.push_back(i);
        }
    }
    return out;
}

/// Fixed sinusoidal table [n, d].
inline std::vector<double> sinusoidal_positions(std::size_t n, std::size_t d) {
    std::vector<double> pe(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            const double freq = std::pow(10000.0, -static_cast<double>(j - j % 2) / static_cast<double>(d));
            const double a = static_cast<double>(i) * freq;
            pe[i * d + j] = j % 2 == 0 ? std::sin(a) : std::cos(a);
        }
    }
    return pe;
}

struct MaeConfig {
    std::size_t enc2_depth = 2;
    std::size_t dec_depth = 2;
    std::size_t heads = 4;
    std::size_t mlp_dim = 128;
    std::size_t max_channels = 8;
    double dropout = 0.0;
    double chan_embed_std = 1.0; // init scale, comparable to the sinusoidal positions

    void validate() const {
        if (!(chan_embed_std >= 0.0)) throw std::invalid_argument("MaeConfig: chan_embed_std must be >= 0");
        if (enc2_depth == 0 || heads == 0 || mlp_dim == 0 || max_channels == 0) {
            throw std::invalid_argument("MaeConfig: enc2_depth, heads, mlp_dim and max_channels must be >= 1");
        }
        if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("MaeConfig: dropout must be in [0, 1)");
    }
};

/// The second encoder together with the embeddings that locate tokens in
/// (channel, position) before it. Channel names map to embedding slots.
struct ChannelMixer {
    TransformerStack enc2;
    TensorF chan_embed; // [slots, D]
    std::vector<std::string> channel_slots;

    ChannelMixer() = default;
    ChannelMixer(std::size_t width, const MaeConfig& cfg, Rng& rng)
        : enc2(cfg.enc2_depth, width, cfg.heads, cfg.mlp_dim, cfg.dropout, rng),
          chan_embed({cfg.max_channels, width}, normal_values(cfg.max_channels * width, cfg.chan_embed_std, rng), true) {}

    std::size_t width() const { return chan_embed.dim(1); }
    std::size_t max_channels() const { return chan_embed.dim(0); }

    /// Slots of the named channels, assigning free slots to unseen names.
    std::vector<std::size_t> assign_slots(const std::vector<std::string>& names) {
        std::vector<std::size_t> out;
        for (const auto& n : names) {
            auto it = std::find(channel_slots.begin(), channel_slots.end(), n);
            if (it == channel_slots.end()) {
                if (channel_slots.size() >= max_channels()) {
                    throw std::invalid_argument("channel '" + n + "' exceeds the " + std::to_string(max_channels()) +
                                                " configured channel slots");
                }
                channel_slots.push_back(n);
                it = channel_slots.end() - 1;
            }
            out.push_back(static_cast<std::size_t>(it - channel_slots.begin()));
        }
        return out;
    }

    std::vector<std::size_t> slots_of(const std::vector<std::string>& names) const {
        std::vector<std::size_t> out;
        for (const auto& n : names) {
            auto it = std::find(channel_slots.begin(), channel_slots.end(), n);
            if (it == channel_slots.end()) throw std::invalid_argument("unknown channel '" + n + "'");
            out.push_back(static_cast<std::size_t>(it - channel_slots.begin()));
        }
        return out;
    }

    /// pos + chan embedding for C channels of n tokens each: [C*n, D].
    TensorF embedding(const std::vector<std::size_t>& slots, std::size_t n) const {
        const TensorF pe({n, width()}, sinusoidal_positions(n, width()));
        std::vector<TensorF> parts;
        for (std::size_t s : slots) parts.push_back(add_broadcast(pe, reshape(index_rows(chan_embed, {s}), {width()})));
        return concat(parts, 0);
    }

    void collect(ParamList& out, const std::string& prefix) const {
        enc2.collect(out, prefix + ".enc2");
        out.push_back({prefix + ".chan_embed", chan_embed});
    }
};

struct MaskedAutoencoder {
    MaeConfig config;
    ChannelMixer mixer;
    Linear decoder_embed; // D -> D
    TensorF mask_token;   // [D]
    TransformerStack dec;
    Linear recon_head; // D -> P

    MaskedAutoencoder() = default;
    MaskedAutoencoder(std::size_t width, std::size_t patch, const MaeConfig& cfg, Rng& rng)
        : config(cfg), mixer(width, cfg, rng), decoder_embed(width, width, rng),
          mask_token({width}, normal_values(width, 0.02, rng), true),
          dec(cfg.dec_depth, width, cfg.heads, cfg.mlp_dim, cfg.dropout, rng), recon_head(width, patch, rng) {
        cfg.validate();
    }

    std::size_t width() const { return mask_token.numel(); }
    std::size_t patch() const { return recon_head.out_features(); }

    void collect(ParamList& out, const std::string& prefix) const {
        mixer.collect(out, prefix);
        decoder_embed.collect(out, prefix + ".decoder_embed");
        out.push_back({prefix + ".mask_token", mask_token});
        dec.collect(out, prefix + ".dec");
        recon_head.collect(out, prefix + ".recon_head");
    }
};

/// Copies values between two parameter lists with matching names and shapes.
inline void copy_parameters(const ParamList& from, ParamList& to) {
    if (from.size() != to.size()) {
        throw std::invalid_argument("copy_parameters: " + std::to_string(from.size()) + " vs " + std::to_string(to.size()) +
                                    " parameters");
    }
    for (std::size_t i = 0; i < from.size(); ++i) {
        if (from[i].name != to[i].name || from[i].shape() != to[i].shape() || from[i].is_complex() != to[i].is_complex()) {
            throw std::invalid_argument("copy_parameters: mismatch at '" + from[i].name + "' vs '" + to[i].name + "'");
        }
        std::visit(
            [&](auto& dst) {
                using T = std::decay_t<decltype(dst)>;
                const auto& src = std::get<T>(from[i].tensor);
                std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
            },
            to[i].tensor);
    }
}

struct MaeModel {
    FAEncoder encoder;
    MaskedAutoencoder mae;

    MaeModel() = default;
    MaeModel(const EncoderConfig& enc_cfg, const MaeConfig& mae_cfg, Rng& rng)
        : encoder(enc_cfg, rng), mae(enc_cfg.width, enc_cfg.patch, mae_cfg, rng) {}

    ParamList parameters() const {
        ParamList out;
        encoder.collect(out, "fa");
        mae.collect(out, "mae");
        return out;
    }

    /// Independent copy; the original's tensors are not shared.
    MaeModel clone() const {
        Rng scratch(0);
        MaeModel copy(encoder.config, mae.config, scratch);
        copy.mae.mixer.channel_slots = mae.mixer.channel_slots;
        auto dst = copy.parameters();
        copy_parameters(parameters(), dst);
        return copy;
    }
};

struct PretrainBatch {
    TensorF signals{Shape{0, 0, 0}}; // [B, C, L], standardized
    std::vector<std::string> channel_names;
};

struct MaeOptions {
    /// Mask in latent space after the encoder; false masks patches before it.
    bool fm_on = true;
    ForwardContext ctx;
    AttentionTrace* trace = nullptr;
};

struct MaeOutput {
    TensorF recon{Shape{0}};   // [B, C, N, P]
    TensorF targets{Shape{0}}; // [B, C, N, P]
    /// masked[b][c]: sorted masked token indices of channel c in sample b.
    std::vector<std::vector<std::vector<std::size_t>>> masked;
    /// Token count entering enc2 and the decoder, per sample.
    std::size_t enc2_tokens = 0;
    std::size_t dec_tokens = 0;
};

inline MaeOutput mae_forward(const PretrainBatch& batch, const FAEncoder& fa, const MaskedAutoencoder& mae,
                             const MaskSpec& spec, Rng& rng, const MaeOptions& opt = {}) {
    const TensorF& s = batch.signals;
    if (s.rank() != 3 || s.dim(1) != batch.channel_names.size()) {
        throw ShapeError("mae_forward: expected [B, C, L] with C channel names, got " + shape_str(s.shape()));
    }
    if (s.dim(1) > mae.mixer.max_channels()) {
        throw std::invalid_argument("mae_forward: " + std::to_string(s.dim(1)) + " channels exceed the " +
                                    std::to_string(mae.mixer.max_channels()) + " configured slots");
    }
    if (fa.config.width != mae.width() || fa.config.patch != mae.patch()) {
        throw std::invalid_argument("mae_forward: encoder and autoencoder widths disagree");
    }
    const std::size_t b_n = s.dim(0), c_n = s.dim(1), d = mae.width(), p = mae.patch();
    const auto slots = mae.mixer.slots_of(batch.channel_names);

    MaeOutput out;
    out.targets = patchify(s.detach(), fa.patch_config()); // [B, C, N, P]
    const std::size_t n = out.targets.dim(2), t = c_n * n;

    out.masked.assign(b_n, std::vector<std::vector<std::size_t>>(c_n));
    std::vector<std::vector<std::size_t>> keep(b_n);
    for (std::size_t c = 0; c < c_n; ++c) {
        Rng channel_rng = rng.substream(static_cast<std::uint64_t>(c));
        for (std::size_t b = 0; b < b_n; ++b) out.masked[b][c] = sample_mask(n, spec, channel_rng);
    }
    for (std::size_t b = 0; b < b_n; ++b) {
        for (std::size_t c = 0; c < c_n; ++c) {
            for (std::size_t i : complement(out.masked[b][c], n)) keep[b].push_back(c * n + i);
        }
    }

    const TensorF embedding = mae.mixer.embedding(slots, n); // [C*N, D]
    TensorF kept_tokens;
    if (opt.fm_on) {
        // the encoder sees every patch of every channel
        const TensorF tokens = encode_patches(reshape(out.targets, {b_n * c_n, n, p}), fa, opt.ctx);
        kept_tokens = gather_tokens(add_broadcast(reshape(tokens, {b_n, t, d}), embedding), keep);
    } else {
        // only kept patches reach the encoder, each channel separately
        const std::size_t n_keep = n - spec.masked_count(n);
        std::vector<std::vector<std::size_t>> per_row(b_n * c_n);
        for (std::size_t b = 0; b < b_n; ++b)
            for (std::size_t c = 0; c < c_n; ++c) per_row[b * c_n + c] = complement(out.masked[b][c], n);
        const TensorF kept_patches = gather_tokens(reshape(out.targets, {b_n * c_n, n, p}), per_row);
        const TensorF tokens = reshape(encode_patches(kept_patches, fa, opt.ctx), {b_n, c_n * n_keep, d});
        const TensorF grid = add_broadcast(TensorF::zeros({b_n, t, d}), embedding);
        kept_tokens = add(tokens, gather_tokens(grid, keep));
    }
    out.enc2_tokens = kept_tokens.dim(1);

    const TensorF latent = mae.decoder_embed(mae.mixer.enc2(kept_tokens, opt.ctx, opt.trace));
    const TensorF full = add_broadcast(scatter_tokens(latent, keep, t, mae.mask_token), embedding);
    out.dec_tokens = full.dim(1);
    out.recon = reshape(mae.recon_head(mae.dec(full, opt.ctx)), {b_n, c_n, n, p});
    return out;
}

/// Mean over masked tokens (all channels pooled) of the per-patch MSE.
/// Unmasked predictions are never read.
inline TensorF mae_loss(const TensorF& recon, const TensorF& targets,
                        const std::vector<std::vector<std::vector<std::size_t>>>& masked) {
    if (recon.shape() != targets.shape() || recon.rank() != 4) {
        throw ShapeError("mae_loss: recon " + shape_str(recon.shape()) + " vs targets " + shape_str(targets.shape()));
    }
    const std::size_t b_n = recon.dim(0), c_n = recon.dim(1), n = recon.dim(2), p = recon.dim(3);
    if (masked.size() != b_n) throw ShapeError("mae_loss: mask list does not match batch size");
    std::size_t total = 0;
    for (const auto& per_sample : masked) {
        if (per_sample.size() != c_n) throw ShapeError("mae_loss: mask list does not match channel count");
        for (const auto& idx : per_sample) {
            for (std::size_t i : idx)
                if (i >= n) throw std::out_of_range("mae_loss: masked index out of range");
            total += idx.size();
        }
    }
    if (total == 0) {
        std::clog << "warning: mae_loss called with an empty mask set; loss is 0\n";
        return TensorF::scalar(0.0);
    }
    std::vector<double> w(recon.numel(), 0.0);
    const double weight = 1.0 / (static_cast<double>(total) * static_cast<double>(p));
    for (std::size_t b = 0; b < b_n; ++b)
        for (std::size_t c = 0; c < c_n; ++c)
            for (std::size_t i : masked[b][c])
                std::fill_n(w.begin() + static_cast<std::ptrdiff_t>(((b * c_n + c) * n + i) * p), p, weight);
    const TensorF diff = sub(recon, targets.detach());
    return weighted_sum(mul(diff, diff), std::move(w));
}

struct PretrainConfig {
    std::size_t epochs = 200;
    std::size_t batch = 128;
    double lr = 1e-3;
    double mask_ratio = 0.5;
    /// Channels to pretrain on; empty means all dataset channels.
    std::vector<std::string> channels;
    bool fm_on = true;
};

struct PretrainResult {
    MaeModel model;
    std::vector<double> loss_curve;
};

inline std::vector<std::size_t> resolve_channels(const DatasetBundle& data, const std::vector<std::string>& names) {
    std::vector<std::size_t> idx;
    if (names.empty()) {
        idx.resize(data.channels.size());
        std::iota(idx.begin(), idx.end(), 0);
    } else {
        for (const auto& n : names) idx.push_back(data.channel_index(n));
    }
    return idx;
}

inline std::vector<std::string> channel_names(const DatasetBundle& data, const std::vector<std::size_t>& idx) {
    std::vector<std::string> out;
    for (std::size_t i : idx) out.push_back(data.channels[i]);
    return out;
}

/// Continues training `model` on the train split. Randomness comes from named
/// substreams of `rng` (shuffle, mask, dropout).
inline std::vector<double> pretrain_model(MaeModel& model, const DatasetBundle& data, const PretrainConfig& cfg, Rng& rng,
                                          const std::function<void(std::size_t, double)>& on_epoch = {}) {
    if (data.channels.empty()) throw std::invalid_argument("pretrain: dataset has no channels");
    if (cfg.batch == 0) throw std::invalid_argument("pretrain: batch must be >= 1");
    const MaskSpec spec{cfg.mask_ratio};
    spec.validate();
    const auto ch_idx = resolve_channels(data, cfg.channels);
    PretrainBatch batch;
    batch.channel_names = channel_names(data, ch_idx);
    model.mae.mixer.assign_slots(batch.channel_names);

    const SplitData& train = data.split("train");
    if (train.size() == 0) throw std::invalid_argument("pretrain: empty train split");
    std::vector<std::size_t> all(train.size());
    std::iota(all.begin(), all.end(), 0);
    const TensorF signals = standardize(select_samples(train, all, ch_idx));
    const SplitData prepared{signals, train.labels};
    std::vector<std::size_t> identity_channels(ch_idx.size());
    std::iota(identity_channels.begin(), identity_channels.end(), 0);

    Rng shuffle_rng = rng.substream("shuffle");
    Rng mask_rng = rng.substream("mask");
    Rng dropout_rng = rng.substream("dropout");
    Adam opt(model.parameters(), AdamConfig{cfg.lr, 0.9, 0.99, 1e-8});
    MaeOptions mopt;
    mopt.fm_on = cfg.fm_on;
    mopt.ctx = ForwardContext{true, &dropout_rng};

    std::vector<double> curve;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order = all;
        shuffle_rng.shuffle(std::span<std::size_t>(order));
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::vector<std::size_t> ids(order.begin() + static_cast<std::ptrdiff_t>(start),
                                               order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch)));
            batch.signals = select_samples(prepared, ids, identity_channels);
            Rng batch_rng = mask_rng.substream(static_cast<std::uint64_t>(step++));
            const MaeOutput fwd = mae_forward(batch, model.encoder, model.mae, spec, batch_rng, mopt);
            const TensorF loss = mae_loss(fwd.recon, fwd.targets, fwd.masked);
            const double value = loss.item();
            if (!std::isfinite(value)) {
                throw TrainingDiverged("pretraining diverged: loss " + std::to_string(value) + " at epoch " +
                                       std::to_string(epoch) + ", step " + std::to_string(step - 1));
            }
            if (loss.requires_grad()) {
                opt.zero_grad();
                backward(loss);
                opt.step();
            }
            total += value;
            ++batches;
        }
        curve.push_back(total / static_cast<double>(batches));
        if (on_epoch) on_epoch(epoch, curve.back());
    }
    return curve;
}

inline PretrainResult pretrain(const DatasetBundle& data, const EncoderConfig& enc_cfg, const MaeConfig& mae_cfg,
                               const PretrainConfig& cfg, Rng& rng,
                               const std::function<void(std::size_t, double)>& on_epoch = {}) {
    Rng init_rng = rng.substream("init");
    PretrainResult result{MaeModel(enc_cfg, mae_cfg, init_rng), {}};
    result.loss_curve = pretrain_model(result.model, data, cfg, rng, on_epoch);
    return result;
}

} // namespace famae
