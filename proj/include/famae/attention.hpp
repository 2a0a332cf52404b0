#pragma once

// Standard multi-head self-attention and pre-norm transformer stacks, used by
// the lightweight second encoder and decoder of the masked autoencoder and
// by the self-attention ablation of the token mixer.

#include <cmath>
#include <string>
#include <vector>

#include "famae/nn.hpp"

namespace famae {

/// Attention probabilities captured during a forward pass, one [B, H, T, T]
/// tensor per layer.
struct AttentionTrace {
    std::vector<TensorF> layers;
};

struct SelfAttention {
    std::size_t heads = 1;
    Linear qkv; // D -> 3D
    Linear proj;

    SelfAttention() = default;
    SelfAttention(std::size_t width, std::size_t n_heads, Rng& rng)
        : heads(n_heads), qkv(width, 3 * width, rng), proj(width, width, rng) {
        if (n_heads == 0 || width % n_heads != 0) {
            throw std::invalid_argument("SelfAttention: width " + std::to_string(width) + " not divisible by " +
                                        std::to_string(n_heads) + " heads");
        }
    }

    std::size_t width() const { return proj.out_features(); }

    /// x [B, T, D] -> [B, T, D]
    TensorF operator()(const TensorF& x, AttentionTrace* trace = nullptr) const {
        if (x.rank() != 3 || x.dim(2) != width()) {
            throw ShapeError("SelfAttention: expected [B, T, " + std::to_string(width()) + "], got " + shape_str(x.shape()));
        }
        const std::size_t batch = x.dim(0), t = x.dim(1), d = width(), dh = d / heads;
        const TensorF packed = qkv(x);
        const TensorF q = split_heads(slice(packed, 2, 0, d), heads);
        const TensorF k = split_heads(slice(packed, 2, d, 2 * d), heads);
        const TensorF v = split_heads(slice(packed, 2, 2 * d, 3 * d), heads);
        const TensorF scores = scale(bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(dh)));
        const TensorF probs = softmax(scores); // [B*H, T, T]
        if (trace) trace->layers.push_back(TensorF({batch, heads, t, t}, probs.values()));
        return proj(merge_heads(bmm(probs, v), heads));
    }

    void collect(ParamList& out, const std::string& prefix) const {
        qkv.collect(out, prefix + ".qkv");
        proj.collect(out, prefix + ".proj");
    }
};

struct TransformerBlock {
    LayerNorm norm1;
    SelfAttention attn;
    LayerNorm norm2;
    Mlp ff;
    double dropout_rate = 0.0;

    TransformerBlock() = default;
    TransformerBlock(std::size_t width, std::size_t heads, std::size_t mlp_dim, double rate, Rng& rng)
        : norm1(width), attn(width, heads, rng), norm2(width), ff(width, mlp_dim, width, rng), dropout_rate(rate) {}

    TensorF operator()(const TensorF& x, const ForwardContext& ctx, AttentionTrace* trace = nullptr) const {
        const TensorF h = add(x, ctx.maybe_dropout(attn(norm1(x), trace), dropout_rate));
        return add(h, ctx.maybe_dropout(ff(norm2(h), ctx, dropout_rate), dropout_rate));
    }

    void collect(ParamList& out, const std::string& prefix) const {
        norm1.collect(out, prefix + ".norm1");
        attn.collect(out, prefix + ".attn");
        norm2.collect(out, prefix + ".norm2");
        ff.collect(out, prefix + ".ff");
    }
};

struct TransformerStack {
    std::vector<TransformerBlock> blocks;
    LayerNorm norm_out;

    TransformerStack() = default;
    TransformerStack(std::size_t depth, std::size_t width, std::size_t heads, std::size_t mlp_dim, double rate, Rng& rng)
        : norm_out(width) {
        for (std::size_t i = 0; i < depth; ++i) blocks.emplace_back(width, heads, mlp_dim, rate, rng);
    }

    TensorF operator()(TensorF x, const ForwardContext& ctx, AttentionTrace* trace = nullptr) const {
        for (const auto& b : blocks) x = b(x, ctx, trace);
        return norm_out(x);
    }

    void collect(ParamList& out, const std::string& prefix) const {
        for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(out, prefix + ".blocks." + std::to_string(i));
        norm_out.collect(out, prefix + ".norm_out");
    }
};

} // namespace famae
