// Acceptance driver: runs every criterion and prints one PASS/FAIL line each.
// Exit status is the number of failed criteria (0 when all pass).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "famae/pipeline.hpp"
#include "famae/spectral_ops.hpp"
#include "support/oracles.hpp"

using namespace famae;
using famae::testing::cvec;
using famae::testing::max_rel_error;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// 1. DFT correctness

Outcome dft_correctness() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(101);
    double worst = 0.0, worst_parseval = 0.0;
    for (std::size_t n = 1; n <= 64; ++n) {
        for (int trial = 0; trial < 100; ++trial) {
            const cvec x = famae::testing::random_cvec(n, rng);
            const TensorC xt({n}, x);
            const auto z = dft(xt, 0);
            worst = std::max(worst, max_rel_error(z.values(), famae::testing::brute_dft(x)));
            worst = std::max(worst, max_rel_error(idft(xt, 0).values(), famae::testing::brute_idft(x)));
            worst = std::max(worst, max_rel_error(idft(z, 0).values(), x));

            const auto r = famae::testing::random_vec(n, rng);
            const auto half = rdft(TensorF({n}, r), 0);
            const cvec full = famae::testing::brute_dft(cvec(r.begin(), r.end()));
            worst = std::max(worst, max_rel_error(half.values(), cvec(full.begin(), full.begin() + static_cast<long>(n / 2 + 1))));
            worst = std::max(worst, max_rel_error(irdft(half, 0, n).values(), r));

            cvec h = famae::testing::random_cvec(n / 2 + 1, rng);
            h[0] = h[0].real();
            if (n % 2 == 0) h.back() = h.back().real();
            const cvec ref = famae::testing::brute_idft(famae::testing::conjugate_extend(h, n));
            std::vector<double> ref_re(n);
            for (std::size_t i = 0; i < n; ++i) ref_re[i] = ref[i].real();
            worst = std::max(worst, max_rel_error(irdft(TensorC({h.size()}, h), 0, n).values(), ref_re));

            double et = 0.0, ef = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                et += std::norm(x[i]);
                ef += std::norm(z[i]);
            }
            worst_parseval = std::max(worst_parseval, std::abs(et - ef / static_cast<double>(n)) / et);
        }
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-9 && worst_parseval < 1e-9 && secs < 5.0,
            "max rel err " + fmt("%.2e", worst) + ", Parseval " + fmt("%.2e", worst_parseval) + ", " + fmt("%.2f s", secs)};
}

// ---------------------------------------------------------------------------
// 2. Gradient suite

Outcome gradient_suite() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(202);
    std::vector<std::pair<std::string, double>> results;
    auto check = [&](const std::string& name, const std::function<TensorF()>& loss, const ParamList& params) {
        results.emplace_back(name, famae::testing::grad_check(loss, params, 1e-5).max_rel_error);
    };
    const std::size_t n = 6, d = 8;
    {
        FrequencyFilterBank bank(3, d, FilterOperator::Query, rng, 0.5);
        bank.query = TensorF({d, 3}, famae::testing::random_vec(d * 3, rng), true);
        TensorF x({n, d}, famae::testing::random_vec(n * d, rng), true);
        const TensorF w({n, d}, famae::testing::random_vec(n * d, rng));
        check("query filter", [&] { return sum(mul(freq_layer_forward(x, bank), w)); },
              {{"K", bank.filters}, {"W", bank.query}, {"X", x}});
    }
    {
        // well separated moduli keep every argmax unique under perturbation
        std::vector<cdouble> k(3 * d);
        for (std::size_t h = 0; h < 3; ++h)
            for (std::size_t j = 0; j < d; ++j) k[h * d + j] = std::polar(1.0 + static_cast<double>((h + j) % 3), rng.uniform(0, 6.28));
        FrequencyFilterBank bank(TensorC({3, d}, k, true), TensorF({d, 3}), FilterOperator::MaxPool);
        TensorF x({n, d}, famae::testing::random_vec(n * d, rng), true);
        const TensorF w({n, d}, famae::testing::random_vec(n * d, rng));
        check("maxpool filter", [&] { return sum(mul(freq_layer_forward(x, bank), w)); }, {{"K", bank.filters}, {"X", x}});
    }
    {
        EncoderConfig cfg;
        cfg.depth = 1;
        cfg.width = d;
        cfg.heads = 2;
        cfg.patch = 4;
        cfg.mlp_dim = 12;
        cfg.dropout = 0.0;
        const FAEncoder enc(cfg, rng);
        TensorF x({n, d}, famae::testing::random_vec(n * d, rng), true);
        const TensorF w({n, d}, famae::testing::random_vec(n * d, rng));
        auto params = enc.parameters();
        params.push_back({"X", x});
        check("FA block", [&] { return sum(mul(enc.blocks[0](x), w)); }, params);
    }
    EncoderConfig enc_cfg;
    enc_cfg.depth = 1;
    enc_cfg.width = d;
    enc_cfg.heads = 2;
    enc_cfg.patch = 4;
    enc_cfg.mlp_dim = 12;
    enc_cfg.dropout = 0.0;
    MaeConfig mae_cfg;
    mae_cfg.enc2_depth = 1;
    mae_cfg.dec_depth = 1;
    mae_cfg.heads = 2;
    mae_cfg.mlp_dim = 12;
    MaeModel model(enc_cfg, mae_cfg, rng);
    {
        TensorF x({1, n, d}, famae::testing::random_vec(n * d, rng), true);
        const TensorF w({1, n, d}, famae::testing::random_vec(n * d, rng));
        ParamList params;
        model.mae.mixer.enc2.collect(params, "enc2");
        params.push_back({"X", x});
        check("enc2 attention", [&] { return sum(mul(model.mae.mixer.enc2(x, {}), w)); }, params);
    }
    {
        PretrainBatch batch;
        batch.signals = TensorF({1, 2, 12}, famae::testing::random_vec(24, rng));
        batch.channel_names = {"a", "b"};
        model.mae.mixer.assign_slots(batch.channel_names);
        ParamList params;
        model.mae.recon_head.collect(params, "recon_head");
        params.push_back({"mask_token", model.mae.mask_token});
        check("recon head", [&] {
            Rng r(3);
            const auto out = mae_forward(batch, model.encoder, model.mae, MaskSpec{0.5}, r);
            return mae_loss(out.recon, out.targets, out.masked);
        }, params);
    }
    const double secs = seconds_since(t0);
    bool pass = secs < 60.0;
    std::string detail;
    for (const auto& [name, err] : results) {
        pass = pass && err < 1e-4;
        detail += name + " " + fmt("%.1e", err) + ", ";
    }
    return {pass, detail + fmt("%.1f s", secs)};
}

// ---------------------------------------------------------------------------
// 3. Operator oracles

Outcome operator_oracles() {
    Rng rng(303);
    double worst_query = 0.0;
    std::size_t maxpool_mismatch = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t h = 1 + rng.index(4), d = 1 + rng.index(8), rows = 1 + rng.index(6);
        const FrequencyFilterBank bank(TensorC({h, d}, famae::testing::random_cvec(h * d, rng)),
                                       TensorF({d, h}, famae::testing::random_vec(d * h, rng)), FilterOperator::Query);
        const cvec z = famae::testing::random_cvec(rows * d, rng);
        cvec ref(rows * d, cdouble{});
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t k = 0; k < h; ++k) {
                double w = 0.0;
                for (std::size_t j = 0; j < d; ++j) w += z[i * d + j].real() * bank.query[j * h + k];
                for (std::size_t j = 0; j < d; ++j) ref[i * d + j] += w * (z[i * d + j] * bank.filters[k * d + j]);
            }
        worst_query = std::max(worst_query, max_rel_error(apply_query_filter(TensorC({rows, d}, z), bank).values(), ref));
    }
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t h = 1 + rng.index(4), d = 1 + rng.index(8), rows = 1 + rng.index(6);
        const FrequencyFilterBank bank(TensorC({h, d}, famae::testing::random_cvec(h * d, rng)), TensorF({d, h}),
                                       FilterOperator::MaxPool);
        const cvec z = famae::testing::random_cvec(rows * d, rng);
        const auto out = apply_maxpool_filter(TensorC({rows, d}, z), bank);
        for (std::size_t i = 0; i < rows * d; ++i) {
            cdouble best{};
            double best_mod = -1.0;
            for (std::size_t k = 0; k < h; ++k) {
                const cdouble v = z[i] * bank.filters[k * d + i % d];
                if (std::abs(v) > best_mod) {
                    best_mod = std::abs(v);
                    best = v;
                }
            }
            if (out[i] != best) ++maxpool_mismatch;
        }
    }
    return {worst_query < 1e-9 && maxpool_mismatch == 0,
            "query max rel err " + fmt("%.2e", worst_query) + ", maxpool mismatches " + std::to_string(maxpool_mismatch)};
}

// ---------------------------------------------------------------------------
// Desk-scale experiment shared by criteria 4, 7 and 8

struct Desk {
    EncoderConfig enc;
    MaeConfig mae;
    PretrainConfig pre;
    FinetuneConfig fine;
    SynthConfig source;
    SynthConfig target;
    std::vector<std::uint64_t> seeds = {0, 1, 2};
    std::string target_channel = "eeg";
};

Desk desk() {
    Desk d;
    d.enc.depth = 2;
    d.enc.width = 32;
    d.enc.heads = 4;
    d.enc.patch = 20;
    d.enc.mlp_dim = 64;
    d.enc.dropout = 0.1;
    d.enc.attn_head_dim = 8;
    d.mae.enc2_depth = 1;
    d.mae.dec_depth = 1;
    d.mae.heads = 2;
    d.mae.mlp_dim = 64;
    d.pre.epochs = 30;
    d.pre.batch = 16;
    d.fine.epochs = 20;
    d.fine.batch = 16;
    d.source = default_source_synth();
    d.target = default_target_synth();
    return d;
}

struct SeedRun {
    double multi = 0, uni = 0, scratch = 0, fa_off_fm_off = 0;
};

std::vector<SeedRun> transfer_runs(const Desk& d) {
    std::vector<SeedRun> runs;
    for (const auto seed : d.seeds) {
        const auto t0 = std::chrono::steady_clock::now();
        Rng data_rng = Rng(seed).substream("data");
        Rng src_rng = data_rng.substream("source"), tgt_rng = data_rng.substream("target");
        const DatasetBundle source = synth_generate(d.source, src_rng), target = synth_generate(d.target, tgt_rng);
        const Rng run = Rng(seed).substream("transfer");
        SeedRun r;
        r.multi = run_ablation(source, target, d.enc, d.mae, d.pre, d.fine, {true, true, {}}, run).finetuned.test.accuracy;
        PretrainConfig uni = d.pre;
        uni.channels = {d.target_channel};
        r.uni = run_ablation(source, target, d.enc, d.mae, uni, d.fine, {true, true, {}}, run).finetuned.test.accuracy;
        Rng init = Rng(seed).substream("scratch");
        Rng fine_rng = run.substream("finetune");
        r.scratch = finetune(scratch_model(d.enc, d.mae, init), target, d.fine, fine_rng).test.accuracy;
        r.fa_off_fm_off = run_ablation(source, target, d.enc, d.mae, d.pre, d.fine, {false, false, {}}, run).finetuned.test.accuracy;
        std::printf("  seed %llu: multimodal %.3f  unimodal %.3f  scratch %.3f  fa=off fm=off %.3f  (%.0f s)\n",
                    static_cast<unsigned long long>(seed), r.multi, r.uni, r.scratch, r.fa_off_fm_off, seconds_since(t0));
        std::fflush(stdout);
        runs.push_back(r);
    }
    return runs;
}

// ---------------------------------------------------------------------------
// 4. Length transferability

Outcome length_transfer(const Desk& d) {
    Rng data_rng(404);
    const DatasetBundle target = synth_generate(d.target, data_rng);
    Rng init(405), fine_rng(406);
    FinetuneConfig fine = d.fine;
    fine.epochs = 3;
    const auto tuned = finetune(scratch_model(d.enc, d.mae, init), target, fine, fine_rng);
    std::string detail = "trained at L=" + std::to_string(d.target.length) + ";";
    bool pass = true;
    Rng x_rng(407);
    for (std::size_t len : {60u, 178u, 3000u}) {
        const TensorF x({4, 1, len}, famae::testing::random_vec(4 * len, x_rng));
        NoGradGuard guard;
        const TensorF tokens = encode(reshape(x, {4, len}), tuned.model.encoder);
        const TensorF logits = tuned.model.logits(x, tuned.channels);
        bool finite = true;
        for (double v : logits.data()) finite = finite && std::isfinite(v);
        for (double v : tokens.data()) finite = finite && std::isfinite(v);
        const std::size_t expect_n = (len + d.enc.patch - 1) / d.enc.patch;
        pass = pass && finite && tokens.dim(1) == expect_n && logits.shape() == Shape{4, target.n_classes};
        detail += " L=" + std::to_string(len) + " N=" + std::to_string(tokens.dim(1)) + (finite ? " finite" : " NON-FINITE");
    }
    return {pass, detail};
}

// ---------------------------------------------------------------------------
// 5. Parameter budget

Outcome parameter_budget() {
    Rng rng(505);
    const MaeModel model(EncoderConfig{}, MaeConfig{}, rng);
    const std::size_t n = count_params(model);
    const double rel = (static_cast<double>(n) - 243000.0) / 243000.0;
    std::string detail = std::to_string(n) + " parameters (" + fmt("%+.1f%%", 100.0 * rel) + " vs 243,000); ";
    const auto groups = parameter_breakdown(model.parameters());
    for (const auto& [k, v] : groups.items()) detail += k + "=" + std::to_string(v.get<std::size_t>()) + " ";
    return {std::abs(rel) <= 0.15, detail};
}

// ---------------------------------------------------------------------------
// 6. Masking semantics

Outcome masking_semantics() {
    Rng rng(606);
    const std::size_t b = 3, c = 3, n = 10, p = 5;
    bool invariant = true, union_ok = true, zero_ok = true;
    for (int trial = 0; trial < 20; ++trial) {
        const MaskSpec spec{0.1 * static_cast<double>(1 + rng.index(8))};
        std::vector<std::vector<std::vector<std::size_t>>> masked(b, std::vector<std::vector<std::size_t>>(c));
        std::size_t union_size = 0;
        for (auto& row : masked)
            for (auto& m : row) {
                m = sample_mask(n, spec, rng);
                union_size += m.size();
            }
        const auto t = famae::testing::random_vec(b * c * n * p, rng);
        auto r = famae::testing::random_vec(t.size(), rng);
        const double base = mae_loss(TensorF({b, c, n, p}, r), TensorF({b, c, n, p}, t), masked).item();
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < c; ++j)
                for (std::size_t k : complement(masked[i][j], n))
                    for (std::size_t q = 0; q < p; ++q) r[((i * c + j) * n + k) * p + q] = rng.normal(0, 1e6);
        invariant = invariant && mae_loss(TensorF({b, c, n, p}, r), TensorF({b, c, n, p}, t), masked).item() == base;

        // unit error on exactly one masked patch -> loss 1/|union|
        std::vector<double> zeros(t.size(), 0.0), one(t.size(), 0.0);
        const std::size_t k0 = masked[0][0][0];
        for (std::size_t q = 0; q < p; ++q) one[k0 * p + q] = 1.0;
        const double single = mae_loss(TensorF({b, c, n, p}, one), TensorF({b, c, n, p}, zeros), masked).item();
        union_ok = union_ok && std::abs(single - 1.0 / static_cast<double>(union_size)) < 1e-15;
    }
    {
        PretrainBatch batch;
        batch.signals = TensorF({2, 2, 40}, famae::testing::random_vec(160, rng));
        batch.channel_names = {"a", "b"};
        EncoderConfig enc;
        enc.depth = 1;
        enc.width = 8;
        enc.heads = 2;
        enc.patch = 4;
        enc.mlp_dim = 8;
        MaeConfig mae;
        mae.enc2_depth = mae.dec_depth = 1;
        mae.heads = 2;
        mae.mlp_dim = 8;
        MaeModel model(enc, mae, rng);
        model.mae.mixer.assign_slots(batch.channel_names);
        std::ostringstream sink;
        auto* old = std::clog.rdbuf(sink.rdbuf());
        const auto out = mae_forward(batch, model.encoder, model.mae, MaskSpec{0.0}, rng);
        zero_ok = mae_loss(out.recon, out.targets, out.masked).item() == 0.0;
        std::clog.rdbuf(old);
    }
    return {invariant && union_ok && zero_ok, std::string("corruption-invariant ") + (invariant ? "yes" : "NO") +
                                                  ", weight 1/|union| " + (union_ok ? "yes" : "NO") + ", ratio 0 -> 0 " +
                                                  (zero_ok ? "yes" : "NO")};
}

// ---------------------------------------------------------------------------
// 7 and 8. Transfer ordering and ablation isolation

double mean_of(const std::vector<SeedRun>& runs, double SeedRun::*field) {
    double s = 0.0;
    for (const auto& r : runs) s += r.*field;
    return s / static_cast<double>(runs.size());
}

Outcome transfer_ordering(const std::vector<SeedRun>& runs, double secs) {
    const double m = mean_of(runs, &SeedRun::multi), u = mean_of(runs, &SeedRun::uni), s = mean_of(runs, &SeedRun::scratch);
    const bool pass = m - u >= -0.01 && u - s >= -0.01 && m - s >= 0.03 && secs < 900.0;
    return {pass, "mean acc multimodal " + fmt("%.3f", m) + ", unimodal " + fmt("%.3f", u) + ", scratch " + fmt("%.3f", s) +
                      "; gaps m-u " + fmt("%+.1f", 100 * (m - u)) + ", u-s " + fmt("%+.1f", 100 * (u - s)) + ", m-s " +
                      fmt("%+.1f", 100 * (m - s)) + " points; " + fmt("%.0f s", secs)};
}

Outcome ablation_isolation(const std::vector<SeedRun>& runs) {
    const double on = mean_of(runs, &SeedRun::multi), off = mean_of(runs, &SeedRun::fa_off_fm_off);
    return {on - off >= 0.02, "FA+FM " + fmt("%.3f", on) + " vs neither " + fmt("%.3f", off) + " (" +
                                  fmt("%+.1f", 100 * (on - off)) + " points)"};
}

// ---------------------------------------------------------------------------
// 9. Mismatch robustness

Outcome mismatch_robustness(const Desk& d) {
    SynthConfig dup_cfg;
    dup_cfg.name = "redundant";
    dup_cfg.n_classes = 4;
    dup_cfg.length = 200;
    dup_cfg.sampling_rate_hz = 100.0;
    dup_cfg.channels = {{"sig", {{6.0}, {11.0}, {15.0}, {25.0}}, 1.0, 1.0, ""},
                        {"dup", {}, 1.0, 1.0, "sig"},
                        {"noise", {}, 1.0, 1.0, ""}};
    dup_cfg.sizes = {120, 20, 400};
    SynthConfig only_cfg = dup_cfg;
    only_cfg.name = "single-informative";
    only_cfg.channels = {dup_cfg.channels[0], {"noise1", {}, 1.0, 1.0, ""}, {"noise2", {}, 1.0, 1.0, ""}};

    Rng r1(901), r2(902);
    const DatasetBundle redundant = synth_generate(dup_cfg, r1), single = synth_generate(only_cfg, r2);
    PretrainConfig pre = d.pre;
    pre.epochs = 10;
    Rng pre_rng(903);
    const auto base = pretrain(redundant, d.enc, d.mae, pre, pre_rng).model;
    const Rng run(904);
    const auto a = modality_dropout(base, redundant, redundant.channels, {{"sig", "noise"}}, d.fine, run);
    const auto b = modality_dropout(base, single, single.channels, {{"noise1", "noise2"}}, d.fine, run);
    const double drop_dup = -a.rows[0].delta_accuracy, drop_sig = -b.rows[0].delta_accuracy;
    return {drop_dup < 0.02 && drop_sig > 0.10,
            "drop duplicate: " + fmt("%.3f", a.baseline.accuracy) + " -> " + fmt("%.3f", a.rows[0].metrics.accuracy) + " (" +
                fmt("%+.1f", -100 * drop_dup) + " points); drop informative: " + fmt("%.3f", b.baseline.accuracy) + " -> " +
                fmt("%.3f", b.rows[0].metrics.accuracy) + " (" + fmt("%+.1f", -100 * drop_sig) + " points)"};
}

// ---------------------------------------------------------------------------
// 10. Attention export

Outcome attention_export(const Desk& d) {
    SynthConfig cfg;
    cfg.name = "attention";
    cfg.n_classes = 4;
    cfg.length = 200;
    cfg.sampling_rate_hz = 100.0;
    cfg.channels = {{"a", {{6.0}, {11.0}, {15.0}, {25.0}}, 1.0, 3.0, ""}, {"b", {}, 1.0, 3.0, "a"}, {"noise", {}, 1.0, 1.0, ""}};
    cfg.sizes = {120, 10, 40};
    Rng data_rng(1001), pre_rng(1002);
    const DatasetBundle data = synth_generate(cfg, data_rng);
    PretrainConfig pre = d.pre;
    pre.epochs = 10;
    const auto model = pretrain(data, d.enc, d.mae, pre, pre_rng).model;
    const TensorF x = prepared_signals(data, "test", data.channels);
    const auto exp = export_attention(model, x, data.channels);
    double worst_row = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 3; ++j) s += exp.matrix[i * 3 + j];
        worst_row = std::max(worst_row, std::abs(s - 1.0));
    }
    const double to_pair = exp.matrix[0] + exp.matrix[1], to_noise = exp.matrix[2];
    return {worst_row < 1e-6 && to_pair > to_noise,
            "max |row sum - 1| " + fmt("%.1e", worst_row) + "; row a: {a,b} " + fmt("%.3f", to_pair) + " vs noise " +
                fmt("%.3f", to_noise)};
}

// ---------------------------------------------------------------------------
// 11. Reproducibility

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome reproducibility() {
    const fs::path root = fs::temp_directory_path() / "famae_acceptance_repro";
    fs::remove_all(root);
    RunConfig cfg;
    cfg.seed = 11;
    cfg.model.depth = 1;
    cfg.model.width = 16;
    cfg.model.heads = 2;
    cfg.model.mlp_dim = 32;
    cfg.mae.enc2_depth = cfg.mae.dec_depth = 1;
    cfg.mae.heads = 2;
    cfg.mae.mlp_dim = 32;
    cfg.pretrain.epochs = 2;
    cfg.pretrain.batch = 32;
    cfg.finetune.epochs = 3;
    cfg.finetune.batch = 16;
    cfg.data.synth.sizes = {64, 8, 16};
    cfg.data.target_synth.sizes = {32, 8, 64};
    cfg.attn.samples = 8;
    std::vector<std::string> csvs;
    for (const char* run : {"a", "b"}) {
        const fs::path dir = root / run;
        cmd_synth(cfg, dir / "synth");
        cmd_pretrain(cfg, dir / "pretrain");
        const fs::path ckpt = dir / "pretrain" / "checkpoint.bin";
        cmd_finetune(cfg, dir / "finetune", ckpt);
        cmd_finetune(cfg, dir / "scratch", std::nullopt);
        cmd_ablate(cfg, dir / "ablate");
        cmd_mismatch(cfg, dir / "mismatch", ckpt);
        cmd_attn(cfg, dir / "attn", ckpt);
    }
    std::size_t compared = 0, differing = 0;
    for (const auto& entry : fs::recursive_directory_iterator(root / "a")) {
        if (entry.path().extension() != ".csv") continue;
        ++compared;
        const auto other = root / "b" / fs::relative(entry.path(), root / "a");
        if (slurp(entry.path()) != slurp(other)) ++differing;
    }
    // checkpoint round trip: metrics from the reloaded model equal the in-memory ones
    Rng data_rng(1101), pre_rng(1102), f1(1103);
    const DatasetBundle source = synth_generate(cfg.data.synth, data_rng), target = synth_generate(cfg.data.target_synth, data_rng);
    const auto model = pretrain(source, cfg.model, cfg.mae, cfg.pretrain, pre_rng).model;
    save_model(root / "roundtrip.bin", model, cfg.pretrain.epochs, cfg.seed);
    const auto loaded = load_model(root / "roundtrip.bin").model;
    Rng f2 = f1;
    const auto m1 = finetune(model, target, cfg.finetune, f1).test, m2 = finetune(loaded, target, cfg.finetune, f2).test;
    const bool same = m1.accuracy == m2.accuracy && m1.precision == m2.precision && m1.recall == m2.recall && m1.f1 == m2.f1;
    return {compared >= 7 && differing == 0 && same, std::to_string(compared) + " CSV files compared, " +
                                                         std::to_string(differing) + " differ; round-trip metrics " +
                                                         (same ? "identical" : "DIFFER")};
}

} // namespace

int main() {
    int failures = 0;
    auto report = [&](int id, const std::string& name, const std::function<Outcome()>& run) {
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("%s [%d] %s: %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str());
        std::fflush(stdout);
        if (!o.pass) ++failures;
    };
    const Desk d = desk();
    report(1, "DFT correctness", dft_correctness);
    report(2, "gradient suite", gradient_suite);
    report(3, "operator oracles", operator_oracles);
    report(4, "length transferability", [&] { return length_transfer(d); });
    report(5, "parameter budget", parameter_budget);
    report(6, "masking semantics", masking_semantics);
    std::printf("  desk-scale transfer runs (%zu seeds)\n", d.seeds.size());
    std::vector<SeedRun> runs;
    double secs = 0.0;
    std::string transfer_error;
    try {
        const auto t0 = std::chrono::steady_clock::now();
        runs = transfer_runs(d);
        secs = seconds_since(t0);
    } catch (const std::exception& e) {
        transfer_error = e.what();
    }
    auto needs_runs = [&](const std::function<Outcome()>& f) {
        return [&, f] { return transfer_error.empty() ? f() : Outcome{false, "exception: " + transfer_error}; };
    };
    report(7, "desk-scale transfer ordering", needs_runs([&] { return transfer_ordering(runs, secs); }));
    report(8, "ablation isolation", needs_runs([&] { return ablation_isolation(runs); }));
    report(9, "mismatch robustness", [&] { return mismatch_robustness(d); });
    report(10, "attention export", [&] { return attention_export(d); });
    report(11, "reproducibility", [] {
        std::ostringstream sink; // pipeline progress lines
        auto* old = std::clog.rdbuf(sink.rdbuf());
        try {
            auto o = reproducibility();
            std::clog.rdbuf(old);
            return o;
        } catch (...) {
            std::clog.rdbuf(old);
            throw;
        }
    });
    std::printf("%d of 11 criteria failed\n", failures);
    return failures;
}
