#include <catch_amalgamated.hpp>

#include "famae/encoder.hpp"
#include "support/oracles.hpp"

using namespace famae;

namespace {

EncoderConfig small_config(std::size_t depth = 1) {
    EncoderConfig cfg;
    cfg.depth = depth;
    cfg.width = 8;
    cfg.heads = 2;
    cfg.patch = 4;
    cfg.mlp_dim = 12;
    cfg.dropout = 0.0;
    return cfg;
}

} // namespace

TEST_CASE("patchify splits and zero pads on the right", "[encoder][patchify]") {
    const PatchConfig p20{20};
    CHECK(patchify(TensorF({100}), p20).shape() == Shape{5, 20});
    CHECK(patchify(TensorF({178}), p20).shape() == Shape{9, 20});
    CHECK(patchify(TensorF({3000}), p20).shape() == Shape{150, 20});

    std::vector<double> x(5);
    std::iota(x.begin(), x.end(), 1.0);
    const auto out = patchify(TensorF({5}, x), PatchConfig{4});
    CHECK(out.shape() == Shape{2, 4});
    CHECK(out.values() == std::vector<double>{1, 2, 3, 4, 5, 0, 0, 0});

    const auto rows = patchify(TensorF({2, 3, 6}, std::vector<double>(36, 1.0)), PatchConfig{4});
    CHECK(rows.shape() == Shape{2, 3, 2, 4});
    CHECK_THROWS(patchify(TensorF(Shape{0}), p20));
    CHECK_THROWS(patchify(TensorF({5}), PatchConfig{0}));
}

TEST_CASE("embedding acts on each patch independently", "[encoder][embed]") {
    Rng rng(1);
    const FAEncoder enc(small_config(), rng);
    const TensorF patches({3, 4}, famae::testing::random_vec(12, rng));
    const auto all = embed(patches, enc);
    for (std::size_t i = 0; i < 3; ++i) {
        const auto one = embed(slice(patches, 0, i, i + 1), enc);
        for (std::size_t j = 0; j < 8; ++j) CHECK(one[j] == all[i * 8 + j]);
    }
    CHECK_THROWS_AS(embed(TensorF({3, 5}), enc), ShapeError);
}

TEST_CASE("block with zeroed mixer and feed-forward is the identity", "[encoder][block]") {
    Rng rng(2);
    FAEncoder enc(small_config(), rng);
    FABlock block = enc.blocks[0];
    std::fill(block.bank.query.mutable_data().begin(), block.bank.query.mutable_data().end(), 0.0);
    for (auto* t : {&block.ff.fc2.weight, &block.ff.fc2.bias}) std::fill(t->mutable_data().begin(), t->mutable_data().end(), 0.0);
    const TensorF x({5, 8}, famae::testing::random_vec(40, rng));
    CHECK(block_forward(x, block).values() == x.values());
}

TEST_CASE("block equals its residual composition", "[encoder][block]") {
    Rng rng(3);
    const FAEncoder enc(small_config(), rng);
    const FABlock& block = enc.blocks[0];
    const TensorF x({6, 8}, famae::testing::random_vec(48, rng));
    const TensorF y = add(x, freq_layer_forward(block.norm1(x), block.bank));
    const TensorF expected = add(y, block.ff(block.norm2(y)));
    CHECK(famae::testing::max_rel_error(block_forward(x, block).values(), expected.values()) < 1e-12);
}

TEST_CASE("encoder handles any input length with one set of weights", "[encoder]") {
    Rng rng(4);
    EncoderConfig cfg; // defaults: D=64, P=20
    cfg.depth = 2;
    const FAEncoder enc(cfg, rng);
    for (auto [len, n] : {std::pair<std::size_t, std::size_t>{60, 3}, {178, 9}, {3000, 150}}) {
        const TensorF s({len}, famae::testing::random_vec(len, rng));
        const auto out = encode(s, enc);
        CHECK(out.shape() == Shape{n, 64});
        for (double v : out.data()) REQUIRE(std::isfinite(v));
    }
    const auto zero = encode(TensorF({178}), enc);
    for (double v : zero.data()) CHECK(std::isfinite(v));
}

TEST_CASE("channels are encoded independently with shared weights", "[encoder]") {
    Rng rng(5);
    const FAEncoder enc(small_config(2), rng);
    const auto signals = famae::testing::random_vec(3 * 18, rng);
    const auto joint = encode(TensorF({3, 18}, signals), enc); // [3, 5, 8]
    const std::vector<std::size_t> perm = {2, 0, 1};
    std::vector<double> permuted;
    for (std::size_t c : perm) permuted.insert(permuted.end(), signals.begin() + c * 18, signals.begin() + (c + 1) * 18);
    const auto swapped = encode(TensorF({3, 18}, permuted), enc);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 40; ++j) CHECK(swapped[i * 40 + j] == joint[perm[i] * 40 + j]);
    }
}

TEST_CASE("encoder gradients match finite differences", "[encoder][autograd]") {
    Rng rng(6);
    for (auto mixer : {TokenMixer::Frequency, TokenMixer::SelfAttention}) {
        EncoderConfig cfg = small_config();
        cfg.mixer = mixer;
        cfg.attn_head_dim = 4;
        const FAEncoder enc(cfg, rng);
        TensorF patches({2, 5, 4}, famae::testing::random_vec(40, rng), true);
        const TensorF w({2, 5, 8}, famae::testing::random_vec(80, rng));
        auto params = enc.parameters();
        params.push_back({"patches", patches});
        auto r = famae::testing::grad_check([&] { return sum(mul(encode_patches(patches, enc), w)); }, params);
        INFO(r.worst);
        CHECK(r.max_rel_error < 1e-4);
    }
}

TEST_CASE("self-attention ablation swaps only the token mixer", "[encoder]") {
    Rng rng(7);
    EncoderConfig cfg = small_config();
    const FAEncoder freq(cfg, rng);
    cfg.mixer = TokenMixer::SelfAttention;
    cfg.attn_head_dim = 4;
    const FAEncoder attn(cfg, rng);
    auto names = [](const ParamList& ps) {
        std::vector<std::string> out;
        for (const auto& p : ps)
            if (p.name.find(".bank") == std::string::npos && p.name.find(".attn") == std::string::npos) out.push_back(p.name);
        return out;
    };
    CHECK(names(freq.parameters()) == names(attn.parameters()));
    CHECK(encode(TensorF({19}), attn).shape() == Shape{5, 8});
}

TEST_CASE("encoder config validation", "[encoder]") {
    EncoderConfig cfg;
    cfg.depth = 0;
    CHECK_THROWS(cfg.validate());
    cfg = {};
    cfg.dropout = 1.0;
    CHECK_THROWS(cfg.validate());
}
