#pragma once

// Downstream side: classifiers on top of a (pre)trained encoder, fine-tuning,
// metrics, modality mismatch experiments, attention export and cost
// accounting.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "famae/pretrainer.hpp"

namespace famae {

// ---------------------------------------------------------------------------
// Metrics

struct Metrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

inline std::vector<std::vector<std::size_t>> confusion_matrix(const std::vector<int>& pred, const std::vector<int>& truth,
                                                              std::size_t n_classes) {
    if (pred.size() != truth.size()) throw std::invalid_argument("confusion_matrix: size mismatch");
    std::vector<std::vector<std::size_t>> m(n_classes, std::vector<std::size_t>(n_classes, 0));
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] < 0 || truth[i] < 0 || static_cast<std::size_t>(pred[i]) >= n_classes ||
            static_cast<std::size_t>(truth[i]) >= n_classes) {
            throw std::out_of_range("confusion_matrix: label outside [0, " + std::to_string(n_classes) + ")");
        }
        ++m[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(pred[i])];
    }
    return m;
}

/// Rows are true classes, columns predictions. Macro averages with 0/0 := 0.
inline Metrics metrics_from_confusion(const std::vector<std::vector<std::size_t>>& m) {
    const std::size_t k = m.size();
    Metrics out;
    if (k == 0) return out;
    std::size_t total = 0, correct = 0;
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t tp = m[i][i], row = 0, col = 0;
        for (std::size_t j = 0; j < k; ++j) {
            row += m[i][j];
            col += m[j][i];
        }
        total += row;
        correct += tp;
        const double p = col ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
        const double r = row ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
        out.precision += p;
        out.recall += r;
        out.f1 += (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    }
    out.precision /= static_cast<double>(k);
    out.recall /= static_cast<double>(k);
    out.f1 /= static_cast<double>(k);
    out.accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    return out;
}

inline Metrics compute_metrics(const std::vector<int>& pred, const std::vector<int>& truth, std::size_t n_classes) {
    return metrics_from_confusion(confusion_matrix(pred, truth, n_classes));
}

/// Row-wise argmax of [B, K] logits; ties go to the lower class.
inline std::vector<int> argmax_rows(const TensorF& logits) {
    const std::size_t b = logits.dim(0), k = logits.dim(1);
    std::vector<int> out(b);
    for (std::size_t i = 0; i < b; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j)
            if (logits[i * k + j] > logits[i * k + best]) best = j;
        out[i] = static_cast<int>(best);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Classifier

enum class HeadCombine { Average, Concat };

struct ClassifierHead {
    HeadCombine combine = HeadCombine::Average;
    /// Channel order of the concatenated representation (Concat only).
    std::vector<std::string> channels;
    Linear fc;

    ClassifierHead() = default;
    ClassifierHead(HeadCombine how, std::vector<std::string> names, std::size_t width, std::size_t n_classes, Rng& rng)
        : combine(how), channels(std::move(names)),
          fc(how == HeadCombine::Concat ? width * channels.size() : width, n_classes, rng) {}

    std::size_t n_classes() const { return fc.out_features(); }
};

struct Classifier {
    FAEncoder encoder;
    std::optional<ChannelMixer> mixer; // second encoder, when kept
    ClassifierHead head;

    ParamList parameters() const {
        ParamList out;
        encoder.collect(out, "fa");
        if (mixer) mixer->collect(out, "mae");
        head.fc.collect(out, "head");
        return out;
    }

    std::size_t n_classes() const { return head.n_classes(); }

    /// signals [B, C, L] (standardized) -> logits [B, n_classes].
    TensorF logits(const TensorF& signals, const std::vector<std::string>& names, const ForwardContext& ctx = {},
                   AttentionTrace* trace = nullptr) const {
        if (signals.rank() != 3 || signals.dim(1) != names.size() || names.empty()) {
            throw ShapeError("Classifier: expected [B, C, L] with C >= 1 channel names, got " + shape_str(signals.shape()));
        }
        const std::size_t b = signals.dim(0), c = signals.dim(1), d = encoder.config.width;
        const TensorF patches = patchify(signals, encoder.patch_config());
        const std::size_t n = patches.dim(2);
        TensorF x = reshape(encode_patches(reshape(patches, {b * c, n, encoder.config.patch}), encoder, ctx), {b, c * n, d});
        if (mixer) x = mixer->enc2(add_broadcast(x, mixer->embedding(mixer->slots_of(names), n)), ctx, trace);
        TensorF pooled;
        if (head.combine == HeadCombine::Average) {
            pooled = mean_axis(x, 1);
        } else {
            std::vector<TensorF> parts;
            for (const auto& want : head.channels) {
                auto it = std::find(names.begin(), names.end(), want);
                if (it == names.end()) {
                    parts.push_back(TensorF::zeros({b, d})); // absent modality
                } else {
                    const std::size_t k = static_cast<std::size_t>(it - names.begin());
                    parts.push_back(mean_axis(slice(x, 1, k * n, (k + 1) * n), 1));
                }
            }
            for (const auto& name : names) {
                if (std::find(head.channels.begin(), head.channels.end(), name) == head.channels.end()) {
                    throw std::invalid_argument("Classifier: channel '" + name + "' was not seen during fine-tuning");
                }
            }
            pooled = concat(parts, 1);
        }
        return head.fc(pooled);
    }
};

// ---------------------------------------------------------------------------
// Fine-tuning and evaluation

struct FinetuneConfig {
    std::size_t epochs = 80;
    std::size_t batch = 64;
    double lr = 1e-3;
    /// Unset: keep the second encoder only for multichannel targets.
    std::optional<bool> keep_enc2;
    /// Target channels to use; empty means all.
    std::vector<std::string> channels;
};

struct FinetuneResult {
    Classifier model;
    std::vector<std::string> channels;
    std::vector<double> loss_curve;
    Metrics val;
    Metrics test;
};

/// Standardized signals of the chosen channels of one split.
inline TensorF prepared_signals(const DatasetBundle& data, const std::string& split, const std::vector<std::string>& names) {
    const auto& s = data.split(split);
    std::vector<std::size_t> all(s.size());
    std::iota(all.begin(), all.end(), 0);
    std::vector<std::size_t> ch;
    for (const auto& n : names) ch.push_back(data.channel_index(n));
    return standardize(select_samples(s, all, ch));
}

inline std::vector<int> predict(const Classifier& model, const TensorF& signals, const std::vector<std::string>& names,
                                std::size_t batch = 256) {
    NoGradGuard guard;
    std::vector<int> out;
    const std::size_t num = signals.dim(0);
    const std::size_t per = signals.numel() / std::max<std::size_t>(num, 1);
    for (std::size_t start = 0; start < num; start += batch) {
        const std::size_t stop = std::min(num, start + batch);
        const TensorF chunk({stop - start, signals.dim(1), signals.dim(2)},
                            std::vector<double>(signals.data().begin() + static_cast<std::ptrdiff_t>(start * per),
                                                signals.data().begin() + static_cast<std::ptrdiff_t>(stop * per)));
        const auto pred = argmax_rows(model.logits(chunk, names));
        out.insert(out.end(), pred.begin(), pred.end());
    }
    return out;
}

/// Metrics on one split using the given channels (any subset or order of the
/// channels the model was fine-tuned on).
inline Metrics evaluate(const Classifier& model, const DatasetBundle& data, const std::string& split,
                        const std::vector<std::string>& names) {
    if (names.empty()) throw std::invalid_argument("evaluate: empty channel set");
    if (data.n_classes != model.n_classes()) {
        throw std::invalid_argument("evaluate: dataset has " + std::to_string(data.n_classes) + " classes, head has " +
                                    std::to_string(model.n_classes()));
    }
    const auto& s = data.split(split);
    if (s.size() == 0) throw std::invalid_argument("evaluate: split '" + split + "' is empty");
    return compute_metrics(predict(model, prepared_signals(data, split, names), names), s.labels, data.n_classes);
}

/// Builds a classifier from a copy of `base` for the target's channels.
inline Classifier make_classifier(const MaeModel& base, const std::vector<std::string>& names, std::size_t n_classes,
                                  bool keep_enc2, Rng& head_rng) {
    MaeModel copy = base.clone();
    Classifier model;
    model.encoder = copy.encoder;
    if (keep_enc2) {
        model.mixer = copy.mae.mixer;
        model.mixer->assign_slots(names);
    }
    const HeadCombine how = names.size() > 1 ? HeadCombine::Concat : HeadCombine::Average;
    model.head = ClassifierHead(how, names, base.encoder.config.width, n_classes, head_rng);
    return model;
}

/// Full fine-tuning of every weight on the train split, then evaluation on
/// val and test. `base` is copied, never modified.
inline FinetuneResult finetune(const MaeModel& base, const DatasetBundle& target, const FinetuneConfig& cfg, Rng& rng,
                               const std::function<void(std::size_t, double)>& on_epoch = {}) {
    if (cfg.batch == 0) throw std::invalid_argument("finetune: batch must be >= 1");
    if (target.n_classes < 2) throw std::invalid_argument("finetune: target needs at least 2 classes");
    FinetuneResult res;
    res.channels = cfg.channels.empty() ? target.channels : cfg.channels;
    const bool keep = cfg.keep_enc2.value_or(res.channels.size() > 1);
    Rng head_rng = rng.substream("head");
    res.model = make_classifier(base, res.channels, target.n_classes, keep, head_rng);

    const TensorF signals = prepared_signals(target, "train", res.channels);
    const auto& labels = target.split("train").labels;
    const std::size_t num = labels.size();
    if (num == 0) throw std::invalid_argument("finetune: empty train split");
    const std::size_t c = res.channels.size(), len = target.length;

    Rng shuffle_rng = rng.substream("shuffle");
    Rng dropout_rng = rng.substream("dropout");
    const ForwardContext ctx{true, &dropout_rng};
    Adam opt(res.model.parameters(), AdamConfig{cfg.lr, 0.9, 0.99, 1e-8});
    std::vector<std::size_t> order(num);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(std::span<std::size_t>(order));
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < num; start += cfg.batch) {
            const std::size_t stop = std::min(num, start + cfg.batch);
            std::vector<double> x((stop - start) * c * len);
            std::vector<int> y;
            for (std::size_t i = start; i < stop; ++i) {
                std::copy_n(signals.data().data() + order[i] * c * len, c * len, x.data() + (i - start) * c * len);
                y.push_back(labels[order[i]]);
            }
            const TensorF loss = cross_entropy(res.model.logits(TensorF({stop - start, c, len}, std::move(x)), res.channels, ctx), y);
            if (!std::isfinite(loss.item())) {
                throw TrainingDiverged("fine-tuning diverged at epoch " + std::to_string(epoch));
            }
            opt.zero_grad();
            backward(loss);
            opt.step();
            total += loss.item();
            ++batches;
        }
        res.loss_curve.push_back(total / static_cast<double>(batches));
        if (on_epoch) on_epoch(epoch, res.loss_curve.back());
    }
    if (target.splits.count("val") && target.split("val").size() > 0) res.val = evaluate(res.model, target, "val", res.channels);
    res.test = evaluate(res.model, target, "test", res.channels);
    return res;
}

/// Random-init model with the given shapes: the "scratch" baseline.
inline MaeModel scratch_model(const EncoderConfig& enc, const MaeConfig& mae, Rng& rng) {
    Rng init = rng.substream("init");
    return MaeModel(enc, mae, init);
}

// ---------------------------------------------------------------------------
// Modality mismatch

struct MismatchRow {
    std::string label;
    std::vector<std::string> channels;
    Metrics metrics;
    double delta_accuracy = 0.0;
    double delta_f1 = 0.0;
};

struct MismatchReport {
    std::vector<std::string> base_channels;
    Metrics baseline;
    std::vector<MismatchRow> rows;
};

inline std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
    return out;
}

/// Each substitution replaces channel `from` by `to` in the base set and
/// re-fine-tunes from `base` with the same randomness as the baseline.
inline MismatchReport modality_substitution(const MaeModel& base, const DatasetBundle& target,
                                            const std::vector<std::string>& base_channels,
                                            const std::vector<std::pair<std::string, std::string>>& substitutions,
                                            FinetuneConfig cfg, const Rng& rng) {
    for (const auto& n : base_channels) target.channel_index(n);
    for (const auto& [from, to] : substitutions) {
        target.channel_index(to);
        if (std::find(base_channels.begin(), base_channels.end(), from) == base_channels.end()) {
            throw std::invalid_argument("modality_substitution: '" + from + "' is not a base channel");
        }
    }
    MismatchReport rep;
    rep.base_channels = base_channels;
    cfg.channels = base_channels;
    Rng r0 = rng;
    rep.baseline = finetune(base, target, cfg, r0).test;
    for (const auto& [from, to] : substitutions) {
        MismatchRow row;
        row.label = from + "->" + to;
        row.channels = base_channels;
        std::replace(row.channels.begin(), row.channels.end(), from, to);
        cfg.channels = row.channels;
        Rng r = rng;
        row.metrics = finetune(base, target, cfg, r).test;
        row.delta_accuracy = row.metrics.accuracy - rep.baseline.accuracy;
        row.delta_f1 = row.metrics.f1 - rep.baseline.f1;
        rep.rows.push_back(std::move(row));
    }
    return rep;
}

/// Fine-tunes once on `full_channels`, then evaluates every subset.
inline MismatchReport modality_dropout(const MaeModel& base, const DatasetBundle& target,
                                       const std::vector<std::string>& full_channels,
                                       const std::vector<std::vector<std::string>>& subsets, FinetuneConfig cfg,
                                       const Rng& rng) {
    for (const auto& s : subsets) {
        if (s.empty()) throw std::invalid_argument("modality_dropout: empty channel subset");
        for (const auto& n : s) {
            if (std::find(full_channels.begin(), full_channels.end(), n) == full_channels.end()) {
                throw std::invalid_argument("modality_dropout: unknown channel '" + n + "'");
            }
        }
    }
    MismatchReport rep;
    rep.base_channels = full_channels;
    cfg.channels = full_channels;
    Rng r = rng;
    const auto tuned = finetune(base, target, cfg, r);
    rep.baseline = tuned.test;
    for (const auto& s : subsets) {
        MismatchRow row;
        row.label = join(s, "+");
        row.channels = s;
        row.metrics = evaluate(tuned.model, target, "test", s);
        row.delta_accuracy = row.metrics.accuracy - rep.baseline.accuracy;
        row.delta_f1 = row.metrics.f1 - rep.baseline.f1;
        rep.rows.push_back(std::move(row));
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Attention export

struct AttentionExport {
    std::vector<std::string> channels;
    TensorF matrix{Shape{0}}; // [C, C], rows sum to 1
    TensorF per_head{Shape{0}}; // [H, C, C], averaged over layers and batch
};

/// Block-averages token attention: entry (r, c) is the mean over query tokens
/// of channel r of the attention mass they put on channel c.
inline AttentionExport channel_attention(const AttentionTrace& trace, const std::vector<std::string>& names, std::size_t n) {
    if (trace.layers.empty()) throw std::invalid_argument("export_attention: no attention was recorded");
    const std::size_t c = names.size(), heads = trace.layers[0].dim(1);
    std::vector<double> per_head(heads * c * c, 0.0);
    double count = 0.0;
    for (const auto& p : trace.layers) {
        const std::size_t b = p.dim(0), t = p.dim(2);
        if (t != c * n) throw ShapeError("export_attention: token count does not match channels");
        for (std::size_t bi = 0; bi < b; ++bi) {
            for (std::size_t h = 0; h < heads; ++h) {
                const double* a = p.data().data() + ((bi * heads + h) * t) * t;
                for (std::size_t q = 0; q < t; ++q) {
                    for (std::size_t k = 0; k < t; ++k) per_head[(h * c + q / n) * c + k / n] += a[q * t + k];
                }
            }
        }
        count += static_cast<double>(b);
    }
    if (count == 0.0) throw std::invalid_argument("export_attention: empty batch");
    // each query row sums to 1, so dividing by (samples x layers x n) keeps rows stochastic
    const double norm = count * static_cast<double>(n);
    for (double& v : per_head) v /= norm;
    AttentionExport out;
    out.channels = names;
    std::vector<double> matrix(c * c, 0.0);
    for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < c * c; ++i) matrix[i] += per_head[h * c * c + i] / static_cast<double>(heads);
    out.matrix = TensorF({c, c}, std::move(matrix));
    out.per_head = TensorF({heads, c, c}, std::move(per_head));
    return out;
}

/// Runs the encoder and enc2 on unmasked signals [B, C, L] and exports the
/// channel-by-channel attention of enc2.
inline AttentionExport export_attention(const FAEncoder& encoder, const std::optional<ChannelMixer>& mixer,
                                        const TensorF& signals, const std::vector<std::string>& names) {
    if (!mixer) throw std::invalid_argument("export_attention: the model has no second encoder");
    NoGradGuard guard;
    const std::size_t b = signals.dim(0), c = signals.dim(1), d = encoder.config.width;
    const TensorF patches = patchify(signals, encoder.patch_config());
    const std::size_t n = patches.dim(2);
    const TensorF x = reshape(encode_patches(reshape(patches, {b * c, n, encoder.config.patch}), encoder), {b, c * n, d});
    AttentionTrace trace;
    mixer->enc2(add_broadcast(x, mixer->embedding(mixer->slots_of(names), n)), {}, &trace);
    return channel_attention(trace, names, n);
}

inline AttentionExport export_attention(const Classifier& model, const TensorF& signals, const std::vector<std::string>& names) {
    return export_attention(model.encoder, model.mixer, signals, names);
}

inline AttentionExport export_attention(const MaeModel& model, const TensorF& signals, const std::vector<std::string>& names) {
    return export_attention(model.encoder, std::optional<ChannelMixer>(model.mae.mixer), signals, names);
}

// ---------------------------------------------------------------------------
// Cost accounting

inline std::size_t count_params(const ParamList& params) { return count_scalars(params); }
inline std::size_t count_params(const MaeModel& m) { return count_scalars(m.parameters()); }
inline std::size_t count_params(const Classifier& m) { return count_scalars(m.parameters()); }

inline double fft_flops(std::size_t n) {
    return n <= 1 ? 0.0 : 5.0 * static_cast<double>(n) * std::log2(static_cast<double>(n));
}

/// One frequency layer on an [n, d] token sequence: forward and inverse real
/// transforms per feature column plus the filter arithmetic on n/2+1 bins.
inline double frequency_layer_flops(std::size_t n, std::size_t d, std::size_t heads, FilterOperator op) {
    const double bins = static_cast<double>(n / 2 + 1), dd = static_cast<double>(d), h = static_cast<double>(heads);
    double filter = 0.0;
    if (op == FilterOperator::Query) {
        filter = 2.0 * bins * dd * h  // Re(Z) W
                 + 4.0 * bins * h * dd // (.) K, real x complex
                 + 6.0 * bins * dd;    // Z (.) filter
    } else {
        filter = 6.0 * bins * dd * h; // every head product, then a max
    }
    return 2.0 * dd * fft_flops(n) + filter;
}

inline double attention_flops(std::size_t n, std::size_t d) {
    const double nn = static_cast<double>(n), dd = static_cast<double>(d);
    return 2.0 * nn * dd * 3.0 * dd + 4.0 * nn * nn * dd + 2.0 * nn * dd * dd;
}

inline double mlp_flops(std::size_t n, std::size_t in, std::size_t hidden, std::size_t out) {
    return 2.0 * static_cast<double>(n) * (static_cast<double>(in * hidden) + static_cast<double>(hidden * out));
}

/// Forward FLOPs of the encoder on one channel of length `length`.
inline double encoder_flops(const EncoderConfig& cfg, std::size_t length) {
    const std::size_t n = (length + cfg.patch - 1) / cfg.patch;
    double total = mlp_flops(n, cfg.patch, cfg.width, cfg.width);
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        total += cfg.mixer == TokenMixer::Frequency ? frequency_layer_flops(n, cfg.width, cfg.heads, cfg.op)
                                                    : attention_flops(n, cfg.width);
        total += mlp_flops(n, cfg.width, cfg.mlp_dim, cfg.width);
    }
    return total;
}

/// Forward FLOPs of a transformer stack on t tokens.
inline double stack_flops(std::size_t depth, std::size_t t, std::size_t d, std::size_t mlp_dim) {
    return static_cast<double>(depth) * (attention_flops(t, d) + mlp_flops(t, d, mlp_dim, d));
}

/// Forward FLOPs of one masked-autoencoding pass over [C, L] with the given
/// mask ratio (encoder on every channel, enc2 on kept tokens, decoder on all).
inline std::size_t count_flops(const EncoderConfig& enc, const MaeConfig& mae, std::size_t channels, std::size_t length,
                               double mask_ratio = 0.5) {
    const std::size_t n = (length + enc.patch - 1) / enc.patch;
    const std::size_t kept = channels * (n - MaskSpec{mask_ratio}.masked_count(n));
    const std::size_t t = channels * n;
    double total = static_cast<double>(channels) * encoder_flops(enc, length);
    total += stack_flops(mae.enc2_depth, kept, enc.width, mae.mlp_dim);
    total += 2.0 * static_cast<double>(kept * enc.width * enc.width); // decoder embedding
    total += stack_flops(mae.dec_depth, t, enc.width, mae.mlp_dim);
    total += 2.0 * static_cast<double>(t * enc.width * enc.patch); // reconstruction head
    return static_cast<std::size_t>(std::llround(total));
}

// ---------------------------------------------------------------------------
// Ablations

struct AblationToggles {
    bool fa_on = true;
    bool fm_on = true;
    std::optional<bool> keep_enc2_at_test;
};

inline std::string ablation_label(const AblationToggles& t) {
    std::string s = std::string("fa=") + (t.fa_on ? "on" : "off") + " fm=" + (t.fm_on ? "on" : "off");
    if (t.keep_enc2_at_test) s += std::string(" enc2=") + (*t.keep_enc2_at_test ? "kept" : "dropped");
    return s;
}

struct AblationResult {
    AblationToggles toggles;
    std::vector<double> pretrain_loss;
    FinetuneResult finetuned;
};

/// Pretrain on `source` and fine-tune on `target` with one toggle setting.
/// fa_off swaps only the token mixer; fm_off moves masking before the encoder;
/// keep_enc2_at_test only affects fine-tuning.
inline AblationResult run_ablation(const DatasetBundle& source, const DatasetBundle& target, EncoderConfig enc,
                                   const MaeConfig& mae, PretrainConfig pre, FinetuneConfig fine,
                                   const AblationToggles& toggles, const Rng& rng) {
    enc.mixer = toggles.fa_on ? TokenMixer::Frequency : TokenMixer::SelfAttention;
    pre.fm_on = toggles.fm_on;
    fine.keep_enc2 = toggles.keep_enc2_at_test;
    AblationResult out;
    out.toggles = toggles;
    Rng pre_rng = rng.substream("pretrain");
    auto pretrained = pretrain(source, enc, mae, pre, pre_rng);
    out.pretrain_loss = pretrained.loss_curve;
    Rng fine_rng = rng.substream("finetune");
    out.finetuned = finetune(pretrained.model, target, fine, fine_rng);
    return out;
}

} // namespace famae
