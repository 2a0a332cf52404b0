#include <catch_amalgamated.hpp>

#include "famae/harness.hpp"
#include "support/oracles.hpp"

using namespace famae;

namespace {

EncoderConfig tiny_encoder() {
    EncoderConfig cfg;
    cfg.depth = 1;
    cfg.width = 8;
    cfg.heads = 2;
    cfg.patch = 4;
    cfg.mlp_dim = 12;
    cfg.dropout = 0.0;
    return cfg;
}

MaeConfig tiny_mae() {
    MaeConfig cfg;
    cfg.enc2_depth = 1;
    cfg.dec_depth = 1;
    cfg.heads = 2;
    cfg.mlp_dim = 12;
    cfg.max_channels = 6;
    return cfg;
}

DatasetBundle tiny_target(std::uint64_t seed) {
    SynthConfig cfg;
    cfg.n_classes = 2;
    cfg.length = 32;
    cfg.sampling_rate_hz = 32.0;
    cfg.channels = {{"sig", {{3.0}, {10.0}}, 1.0, 4.0, ""},
                    {"dup", {}, 1.0, 4.0, "sig"},
                    {"noise", {}, 1.0, 4.0, ""},
                    {"other", {{5.0}, {12.0}}, 1.0, 4.0, ""}};
    cfg.sizes = {24, 8, 40};
    Rng rng(seed);
    return synth_generate(cfg, rng);
}

double f1_of(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

} // namespace

TEST_CASE("metrics from hand-computed confusion matrices", "[harness][metrics]") {
    SECTION("perfect predictions") {
        const auto m = compute_metrics({0, 1, 2, 1}, {0, 1, 2, 1}, 3);
        CHECK(m.accuracy == 1.0);
        CHECK(m.precision == 1.0);
        CHECK(m.recall == 1.0);
        CHECK(m.f1 == 1.0);
    }
    SECTION("constant prediction on balanced binary data") {
        const auto m = compute_metrics({0, 0, 0, 0}, {0, 1, 0, 1}, 2);
        CHECK(m.accuracy == 0.5);
        CHECK(m.f1 == Catch::Approx(1.0 / 3.0).epsilon(1e-15));
        CHECK(m.precision == 0.25);
        CHECK(m.recall == 0.5);
    }
    SECTION("three-class matrix") {
        const std::vector<std::vector<std::size_t>> cm = {{5, 0, 0}, {1, 4, 0}, {0, 2, 3}};
        const auto m = metrics_from_confusion(cm);
        CHECK(m.accuracy == Catch::Approx(12.0 / 15.0));
        const double p[3] = {5.0 / 6.0, 4.0 / 6.0, 1.0};
        const double r[3] = {1.0, 4.0 / 5.0, 3.0 / 5.0};
        double f = 0.0, best = 0.0;
        for (int i = 0; i < 3; ++i) {
            f += f1_of(p[i], r[i]) / 3.0;
            best = std::max(best, f1_of(p[i], r[i]));
        }
        CHECK(m.precision == Catch::Approx((p[0] + p[1] + p[2]) / 3.0));
        CHECK(m.recall == Catch::Approx((r[0] + r[1] + r[2]) / 3.0));
        CHECK(m.f1 == Catch::Approx(f));
        CHECK(m.f1 <= best);
    }
    SECTION("random predictions stay within bounds") {
        Rng rng(1);
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<int> p(30), t(30);
            for (auto& v : p) v = static_cast<int>(rng.index(4));
            for (auto& v : t) v = static_cast<int>(rng.index(4));
            const auto m = compute_metrics(p, t, 4);
            for (double v : {m.accuracy, m.precision, m.recall, m.f1}) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
        }
    }
    CHECK_THROWS(compute_metrics({0, 3}, {0, 1}, 3));
}

TEST_CASE("predicted labels are invariant to positive logit scaling", "[harness][metrics]") {
    Rng rng(2);
    const TensorF logits({20, 5}, famae::testing::random_vec(100, rng));
    CHECK(argmax_rows(logits) == argmax_rows(scale(logits, 3.7)));
    CHECK(argmax_rows(TensorF({1, 3}, {1.0, 1.0, 0.0})) == std::vector<int>{0});
}

TEST_CASE("classifier heads pool per the channel count", "[harness][classifier]") {
    Rng rng(3);
    const MaeModel base(tiny_encoder(), tiny_mae(), rng);
    Rng head_rng(4);
    const auto uni = make_classifier(base, {"sig"}, 3, false, head_rng);
    CHECK(uni.head.combine == HeadCombine::Average);
    CHECK(uni.head.fc.in_features() == 8);
    CHECK(!uni.mixer);
    CHECK(uni.logits(TensorF({2, 1, 16}), {"sig"}).shape() == Shape{2, 3});

    const auto multi = make_classifier(base, {"sig", "noise"}, 3, true, head_rng);
    CHECK(multi.head.combine == HeadCombine::Concat);
    CHECK(multi.head.fc.in_features() == 16);
    CHECK(multi.mixer);
    CHECK(multi.logits(TensorF({2, 2, 16}), {"sig", "noise"}).shape() == Shape{2, 3});
    // absent modality is zero-filled, unseen modality is rejected
    CHECK(multi.logits(TensorF({2, 1, 16}), {"noise"}).shape() == Shape{2, 3});
    CHECK_THROWS(multi.logits(TensorF({2, 1, 16}), {"other"}));
    // the base model is untouched
    CHECK(base.mae.mixer.channel_slots.empty());
}

TEST_CASE("multimodal prediction follows channels, not their order", "[harness][classifier]") {
    Rng rng(5);
    const MaeModel base(tiny_encoder(), tiny_mae(), rng);
    Rng head_rng(6);
    const auto model = make_classifier(base, {"a", "b"}, 2, true, head_rng);
    const auto x = famae::testing::random_vec(3 * 2 * 16, rng);
    std::vector<double> swapped(x.size());
    for (std::size_t i = 0; i < 3; ++i) {
        std::copy_n(x.begin() + (i * 2) * 16, 16, swapped.begin() + (i * 2 + 1) * 16);
        std::copy_n(x.begin() + (i * 2 + 1) * 16, 16, swapped.begin() + (i * 2) * 16);
    }
    const auto a = model.logits(TensorF({3, 2, 16}, x), {"a", "b"});
    const auto b = model.logits(TensorF({3, 2, 16}, swapped), {"b", "a"});
    CHECK(famae::testing::max_rel_error(a.values(), b.values()) < 1e-12);
}

TEST_CASE("fine-tuning with zero epochs reports the initial model", "[harness][finetune]") {
    const auto target = tiny_target(7);
    Rng rng(8);
    const auto base = scratch_model(tiny_encoder(), tiny_mae(), rng);
    FinetuneConfig cfg;
    cfg.epochs = 0;
    cfg.channels = {"sig"};
    Rng r1(9);
    const auto res = finetune(base, target, cfg, r1);
    CHECK(res.loss_curve.empty());
    Rng r2(9);
    Rng head_rng = r2.substream("head");
    const auto initial = make_classifier(base, {"sig"}, 2, false, head_rng);
    const auto m = evaluate(initial, target, "test", {"sig"});
    CHECK(res.test.accuracy == m.accuracy);
    CHECK(res.test.f1 == m.f1);
}

TEST_CASE("fine-tuning learns an easy task and is deterministic", "[harness][finetune]") {
    const auto target = tiny_target(10);
    Rng rng(11);
    const auto base = scratch_model(tiny_encoder(), tiny_mae(), rng);
    FinetuneConfig cfg;
    cfg.epochs = 30;
    cfg.batch = 8;
    cfg.lr = 3e-3;
    cfg.channels = {"sig"};
    Rng r1(12), r2(12);
    const auto a = finetune(base, target, cfg, r1);
    const auto b = finetune(base, target, cfg, r2);
    CHECK(a.loss_curve == b.loss_curve);
    CHECK(a.test.accuracy == b.test.accuracy);
    CHECK(a.loss_curve.back() < a.loss_curve.front());
    CHECK(a.test.accuracy > 0.8);

    // a target of a different length needs no reconfiguration
    auto longer = tiny_target(13);
    SynthConfig sc;
    sc.n_classes = 2;
    sc.length = 50;
    sc.sampling_rate_hz = 32.0;
    sc.channels = {{"sig", {{3.0}, {10.0}}, 1.0, 4.0, ""}};
    sc.sizes = {8, 2, 8};
    Rng dr(14);
    cfg.epochs = 1;
    Rng r3(15);
    CHECK_NOTHROW(finetune(base, synth_generate(sc, dr), cfg, r3));
}

TEST_CASE("evaluation rejects class-count mismatches and empty channel sets", "[harness][finetune]") {
    const auto target = tiny_target(16);
    Rng rng(17);
    const auto base = scratch_model(tiny_encoder(), tiny_mae(), rng);
    Rng head_rng(18);
    const auto three = make_classifier(base, {"sig"}, 3, false, head_rng);
    CHECK_THROWS(evaluate(three, target, "test", {"sig"}));
    const auto two = make_classifier(base, {"sig"}, 2, false, head_rng);
    CHECK_THROWS(evaluate(two, target, "test", {}));
    CHECK_THROWS(evaluate(two, target, "test", {"missing"}));
}

TEST_CASE("modality substitution", "[harness][mismatch]") {
    const auto target = tiny_target(19);
    Rng rng(20);
    const auto base = scratch_model(tiny_encoder(), tiny_mae(), rng);
    FinetuneConfig cfg;
    cfg.epochs = 15;
    cfg.batch = 8;
    cfg.lr = 3e-3;
    const Rng run(21);
    const auto rep = modality_substitution(base, target, {"sig", "other"},
                                           {{"sig", "sig"}, {"sig", "noise"}, {"other", "dup"}}, cfg, run);
    REQUIRE(rep.rows.size() == 3);
    CHECK(rep.rows[0].delta_accuracy == 0.0);
    CHECK(rep.rows[0].delta_f1 == 0.0);
    CHECK(rep.rows[1].channels == std::vector<std::string>{"noise", "other"});
    CHECK(rep.rows[1].delta_accuracy <= 0.0);
    CHECK_THROWS(modality_substitution(base, target, {"sig"}, {{"sig", "missing"}}, cfg, run));
    CHECK_THROWS(modality_substitution(base, target, {"sig"}, {{"noise", "dup"}}, cfg, run));
}

TEST_CASE("modality dropout", "[harness][mismatch]") {
    const auto target = tiny_target(22);
    Rng rng(23);
    const auto base = scratch_model(tiny_encoder(), tiny_mae(), rng);
    FinetuneConfig cfg;
    cfg.epochs = 5;
    cfg.batch = 8;
    const Rng run(24);
    const std::vector<std::string> full = {"sig", "dup", "noise", "other"};
    const auto rep = modality_dropout(base, target, full,
                                      {full, {"sig", "dup", "noise"}, {"sig", "dup"}, {"sig"}}, cfg, run);
    REQUIRE(rep.rows.size() == 4);
    CHECK(rep.rows[0].metrics.accuracy == rep.baseline.accuracy);
    CHECK(rep.rows[0].delta_accuracy == 0.0);
    CHECK_THROWS(modality_dropout(base, target, full, {{}}, cfg, run));
    CHECK_THROWS(modality_dropout(base, target, full, {{"missing"}}, cfg, run));
}

TEST_CASE("attention export is row-stochastic", "[harness][attention]") {
    Rng rng(25);
    MaeModel model(tiny_encoder(), tiny_mae(), rng);
    model.mae.mixer.assign_slots({"a", "b", "c"});
    const TensorF x({4, 3, 20}, famae::testing::random_vec(240, rng));
    const auto out = export_attention(model, x, {"a", "b", "c"});
    CHECK(out.matrix.shape() == Shape{3, 3});
    CHECK(out.per_head.shape() == Shape{2, 3, 3});
    for (std::size_t r = 0; r < 3; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < 3; ++c) s += out.matrix[r * 3 + c];
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
    for (std::size_t r = 0; r < 6; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < 3; ++c) s += out.per_head[r * 3 + c];
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
    const auto single = export_attention(model, TensorF({2, 1, 20}, famae::testing::random_vec(40, rng)), {"b"});
    CHECK(single.matrix.values() == std::vector<double>{1.0});

    Rng head_rng(26);
    const auto no_enc2 = make_classifier(model, {"a"}, 2, false, head_rng);
    CHECK_THROWS(export_attention(no_enc2, TensorF({1, 1, 20}), {"a"}));
}

TEST_CASE("channel attention block-averages a known token matrix", "[harness][attention]") {
    // two channels of two tokens each, one head, one layer, one sample
    const std::vector<double> p = {0.1, 0.2, 0.3, 0.4,  //
                                   0.4, 0.4, 0.1, 0.1,  //
                                   0.0, 0.5, 0.5, 0.0,  //
                                   0.25, 0.25, 0.25, 0.25};
    AttentionTrace trace;
    trace.layers.push_back(TensorF({1, 1, 4, 4}, p));
    const auto out = channel_attention(trace, {"x", "y"}, 2);
    CHECK(out.matrix[0] == Catch::Approx((0.3 + 0.8) / 2));
    CHECK(out.matrix[1] == Catch::Approx((0.7 + 0.2) / 2));
    CHECK(out.matrix[2] == Catch::Approx((0.5 + 0.5) / 2));
    CHECK(out.matrix[3] == Catch::Approx((0.5 + 0.5) / 2));
}

TEST_CASE("a duplicated channel draws more attention than independent noise", "[harness][attention]") {
    SynthConfig cfg;
    cfg.n_classes = 2;
    cfg.length = 32;
    cfg.sampling_rate_hz = 32.0;
    cfg.channels = {{"a", {{3.0}, {10.0}}, 1.0, 4.0, ""}, {"b", {}, 1.0, 4.0, "a"}, {"noise", {}, 1.0, 1.0, ""}};
    cfg.sizes = {32, 4, 16};
    Rng data_rng(28), rng(29);
    const auto data = synth_generate(cfg, data_rng);
    PretrainConfig pre;
    pre.epochs = 3;
    pre.batch = 8;
    const auto model = pretrain(data, tiny_encoder(), tiny_mae(), pre, rng).model;
    const auto out = export_attention(model, prepared_signals(data, "test", data.channels), data.channels);
    CHECK(out.matrix[0] + out.matrix[1] > out.matrix[2]);
    CHECK(out.matrix[3] + out.matrix[4] > out.matrix[5]);
}

TEST_CASE("parameter counting", "[harness][cost]") {
    Rng rng(27);
    ParamList ps;
    Linear(3, 2, rng).collect(ps, "fc");
    CHECK(count_params(ps) == 8);
    const FrequencyFilterBank bank(4, 6, FilterOperator::Query, rng);
    ParamList bp;
    bank.collect(bp, "bank");
    CHECK(count_params(bp) == 4 * 6 * 2 + 6 * 4);

    const MaeModel model(EncoderConfig{}, MaeConfig{}, rng);
    const std::size_t n = count_params(model);
    CHECK(n >= 206550);
    CHECK(n <= 279450);
}

TEST_CASE("flop estimates follow the closed form", "[harness][cost]") {
    for (auto op : {FilterOperator::Query, FilterOperator::MaxPool}) {
        for (std::size_t n : {8u, 16u, 64u, 150u}) {
            const double one = frequency_layer_flops(n, 64, 8, op);
            const double two = frequency_layer_flops(2 * n, 64, 8, op);
            CHECK(two / one > 2.0);
            CHECK(two / one < 2.5);
        }
    }
    // closed form for the transform part
    CHECK(fft_flops(8) == 5.0 * 8 * 3);
    CHECK(fft_flops(1) == 0.0);
    const double bins = 5.0; // n = 8
    CHECK(frequency_layer_flops(8, 4, 2, FilterOperator::Query) ==
          Catch::Approx(2 * 4 * fft_flops(8) + 2 * bins * 4 * 2 + 4 * bins * 2 * 4 + 6 * bins * 4));
    EncoderConfig enc;
    const auto base = count_flops(enc, MaeConfig{}, 2, 3000);
    CHECK(base > count_flops(enc, MaeConfig{}, 1, 3000));
    CHECK(base > 0);
}

TEST_CASE("ablation toggles change exactly one code path each", "[harness][ablation]") {
    SynthConfig sc;
    sc.n_classes = 2;
    sc.length = 24;
    sc.sampling_rate_hz = 24.0;
    sc.channels = {{"a", {{3.0}, {8.0}}, 1.0, 4.0, ""}, {"b", {{5.0}, {9.0}}, 1.0, 4.0, ""}};
    sc.sizes = {8, 4, 8};
    Rng dr(28);
    const auto source = synth_generate(sc, dr);
    const auto target = synth_generate(sc, dr);
    PretrainConfig pre;
    pre.epochs = 1;
    pre.batch = 8;
    FinetuneConfig fine;
    fine.epochs = 1;
    fine.batch = 8;
    const Rng run(29);
    const auto on = run_ablation(source, target, tiny_encoder(), tiny_mae(), pre, fine, {true, true, {}}, run);
    const auto fa_off = run_ablation(source, target, tiny_encoder(), tiny_mae(), pre, fine, {false, true, {}}, run);
    const auto fm_off = run_ablation(source, target, tiny_encoder(), tiny_mae(), pre, fine, {true, false, {}}, run);
    const auto drop = run_ablation(source, target, tiny_encoder(), tiny_mae(), pre, fine, {true, true, false}, run);
    CHECK(on.finetuned.model.encoder.config.mixer == TokenMixer::Frequency);
    CHECK(fa_off.finetuned.model.encoder.config.mixer == TokenMixer::SelfAttention);
    CHECK(fm_off.finetuned.model.encoder.config.mixer == TokenMixer::Frequency);
    CHECK(fm_off.pretrain_loss != on.pretrain_loss);
    CHECK(on.finetuned.model.mixer.has_value());
    CHECK(!drop.finetuned.model.mixer.has_value());
    CHECK(drop.pretrain_loss == on.pretrain_loss);
    CHECK(ablation_label({true, false, {}}) == "fa=on fm=off");
}
