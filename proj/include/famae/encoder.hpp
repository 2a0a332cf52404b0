#pragma once

// Frequency-aware encoder: patchify a single-channel signal, embed each patch
// with an MLP, then run a stack of residual blocks
//
//     Y   = X + FreqL(norm1(X))
//     out = Y + FF(norm2(Y))
//
// No positional embedding is added; the token-axis transform is position
// sensitive on its own. One encoder instance serves every channel and every
// input length.

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "famae/attention.hpp"
#include "famae/nn.hpp"
#include "famae/spectral.hpp"

namespace famae {

enum class TokenMixer { Frequency, SelfAttention };

struct PatchConfig {
    std::size_t patch_size = 20;
};

struct EncoderConfig {
    std::size_t depth = 4;
    std::size_t width = 64;
    std::size_t heads = 8;
    std::size_t patch = 20;
    std::size_t mlp_dim = 128;
    double dropout = 0.2;
    FilterOperator op = FilterOperator::Query;
    TokenMixer mixer = TokenMixer::Frequency;
    /// Head width for the self-attention mixer ablation.
    std::size_t attn_head_dim = 16;

    void validate() const {
        if (depth == 0 || width == 0 || heads == 0 || patch == 0 || mlp_dim == 0) {
            throw std::invalid_argument("EncoderConfig: depth, width, heads, patch and mlp_dim must be >= 1");
        }
        if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("EncoderConfig: dropout must be in [0, 1)");
        if (mixer == TokenMixer::SelfAttention && width % attention_heads() != 0) {
            throw std::invalid_argument("EncoderConfig: width not divisible by attention heads");
        }
    }

    std::size_t attention_heads() const { return std::max<std::size_t>(1, width / std::max<std::size_t>(1, attn_head_dim)); }
};

/// [..., L] -> [..., ceil(L/P), P], zero padded on the right.
inline TensorF patchify(const TensorF& signal, const PatchConfig& cfg) {
    if (cfg.patch_size == 0) throw std::invalid_argument("patchify: patch size must be >= 1");
    if (signal.rank() == 0 || signal.shape().back() == 0) throw std::invalid_argument("patchify: empty signal");
    const std::size_t len = signal.shape().back();
    const std::size_t p = cfg.patch_size;
    const std::size_t n = (len + p - 1) / p;
    const std::size_t rows = signal.numel() / len;
    Shape out_shape(signal.shape().begin(), signal.shape().end() - 1);
    out_shape.push_back(n);
    out_shape.push_back(p);
    std::vector<double> out(rows * n * p, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(signal.data().data() + r * len, len, out.data() + r * n * p);
    }
    auto ns = signal.node();
    return detail::make_result<double>(out_shape, std::move(out), {ns}, [ns, rows, len, n, p](detail::Node<double>& self) {
        ns->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < len; ++i) ns->grad[r * len + i] += self.grad[r * n * p + i];
    });
}

struct FABlock {
    TokenMixer mixer = TokenMixer::Frequency;
    LayerNorm norm1;
    FrequencyFilterBank bank;
    SelfAttention attn;
    LayerNorm norm2;
    Mlp ff;
    double dropout_rate = 0.0;

    FABlock() = default;
    FABlock(const EncoderConfig& cfg, Rng& rng)
        : mixer(cfg.mixer), norm1(cfg.width), norm2(cfg.width), dropout_rate(cfg.dropout) {
        if (mixer == TokenMixer::Frequency) {
            bank = FrequencyFilterBank(cfg.heads, cfg.width, cfg.op, rng);
        } else {
            attn = SelfAttention(cfg.width, cfg.attention_heads(), rng);
        }
        ff = Mlp(cfg.width, cfg.mlp_dim, cfg.width, rng);
    }

    std::size_t width() const { return norm1.gamma.numel(); }

    /// Token mixing on [..., N, D].
    TensorF mix(const TensorF& x) const {
        if (mixer == TokenMixer::Frequency) return freq_layer_forward(x, bank);
        if (x.rank() == 2) return reshape(attn(reshape(x, {1, x.dim(0), x.dim(1)})), x.shape());
        return attn(x);
    }

    TensorF operator()(const TensorF& x, const ForwardContext& ctx = {}) const {
        if (x.rank() < 2 || x.shape().back() != width()) {
            throw ShapeError("FABlock: expected [..., N, " + std::to_string(width()) + "], got " + shape_str(x.shape()));
        }
        const TensorF y = add(x, ctx.maybe_dropout(mix(norm1(x)), dropout_rate));
        return add(y, ctx.maybe_dropout(ff(norm2(y), ctx, dropout_rate), dropout_rate));
    }

    void collect(ParamList& out, const std::string& prefix) const {
        norm1.collect(out, prefix + ".norm1");
        if (mixer == TokenMixer::Frequency) {
            bank.collect(out, prefix + ".bank");
        } else {
            attn.collect(out, prefix + ".attn");
        }
        norm2.collect(out, prefix + ".norm2");
        ff.collect(out, prefix + ".ff");
    }
};

inline TensorF block_forward(const TensorF& x, const FABlock& block, const ForwardContext& ctx = {}) { return block(x, ctx); }

struct FAEncoder {
    EncoderConfig config;
    Mlp embedder; // P -> D -> D
    std::vector<FABlock> blocks;
    LayerNorm norm_out;

    FAEncoder() = default;
    FAEncoder(const EncoderConfig& cfg, Rng& rng) : config(cfg), norm_out(cfg.width) {
        cfg.validate();
        embedder = Mlp(cfg.patch, cfg.width, cfg.width, rng);
        for (std::size_t i = 0; i < cfg.depth; ++i) blocks.emplace_back(cfg, rng);
    }

    PatchConfig patch_config() const { return {config.patch}; }

    void collect(ParamList& out, const std::string& prefix) const {
        embedder.collect(out, prefix + ".embed");
        for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(out, prefix + ".blocks." + std::to_string(i));
        norm_out.collect(out, prefix + ".norm_out");
    }

    ParamList parameters() const {
        ParamList out;
        collect(out, "fa");
        return out;
    }
};

/// Row-wise patch embedding: [..., N, P] -> [..., N, D].
inline TensorF embed(const TensorF& patches, const FAEncoder& enc) {
    if (patches.rank() < 2 || patches.shape().back() != enc.config.patch) {
        throw ShapeError("embed: patch width " + (patches.rank() ? std::to_string(patches.shape().back()) : std::string("?")) +
                         " does not match encoder patch size " + std::to_string(enc.config.patch));
    }
    return enc.embedder(patches);
}

/// Patches [..., N, P] through embedding and every block.
inline TensorF encode_patches(const TensorF& patches, const FAEncoder& enc, const ForwardContext& ctx = {}) {
    TensorF x = embed(patches, enc);
    for (const auto& b : enc.blocks) x = b(x, ctx);
    return enc.norm_out(x);
}

/// Signal [..., L] -> tokens [..., ceil(L/P), D].
inline TensorF encode(const TensorF& signal, const FAEncoder& enc, const ForwardContext& ctx = {}) {
    return encode_patches(patchify(signal, enc.patch_config()), enc, ctx);
}

} // namespace famae
