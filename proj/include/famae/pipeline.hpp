#pragma once

// Command-level runs shared by the CLI and the acceptance driver. Each run
// writes config.json (resolved), results.csv / results.json, and runlog.json.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "famae/blob.hpp"
#include "famae/checkpoint.hpp"
#include "famae/config.hpp"
#include "famae/harness.hpp"

namespace famae {

namespace fs = std::filesystem;

/// A referenced input (checkpoint, dataset directory) does not exist.
class MissingArtifact : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::string fmt_number(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", x);
    return buf;
}

/// Minimal CSV writer; fields containing separators are quoted.
class CsvWriter {
public:
    CsvWriter(const fs::path& path, const std::vector<std::string>& header) : out_(path, std::ios::binary) {
        if (!out_) throw std::runtime_error("cannot write " + path.string());
        row(header);
    }

    void row(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) out_ << ',';
            const auto& f = fields[i];
            if (f.find_first_of(",\"\n") == std::string::npos) {
                out_ << f;
            } else {
                out_ << '"';
                for (char ch : f) out_ << (ch == '"' ? "\"\"" : std::string(1, ch));
                out_ << '"';
            }
        }
        out_ << '\n';
    }

private:
    std::ofstream out_;
};

inline void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

inline std::vector<std::string> metric_fields(const Metrics& m) {
    return {fmt_number(m.accuracy), fmt_number(m.precision), fmt_number(m.recall), fmt_number(m.f1)};
}

inline nlohmann::json to_json(const Metrics& m) {
    return {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
}

/// Scalar count per top-level module ("fa.blocks", "mae.enc2", ...).
inline nlohmann::json parameter_breakdown(const ParamList& params) {
    std::map<std::string, std::size_t> groups;
    for (const auto& p : params) {
        const auto first = p.name.find('.');
        const auto second = first == std::string::npos ? first : p.name.find('.', first + 1);
        groups[p.name.substr(0, second)] += p.scalar_count();
    }
    return groups;
}

/// Owns one run's output directory and its runlog.
class RunRecorder {
public:
    RunRecorder(std::string command, const RunConfig& cfg, fs::path dir)
        : command_(std::move(command)), dir_(std::move(dir)), start_(std::chrono::steady_clock::now()) {
        fs::create_directories(dir_);
        write_json(dir_ / "config.json", to_json(cfg));
        log_ = {{"command", command_}, {"seed", cfg.seed}, {"config_hash", config_hash(cfg)}};
    }

    const fs::path& dir() const { return dir_; }
    nlohmann::json& log() { return log_; }

    void set_parameters(const ParamList& params) {
        log_["parameter_count"] = count_scalars(params);
        log_["parameter_breakdown"] = parameter_breakdown(params);
    }

    void finish() {
        log_["wall_clock_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        if (!log_.contains("parameter_count")) log_["parameter_count"] = 0;
        write_json(dir_ / "runlog.json", log_);
    }

private:
    std::string command_;
    fs::path dir_;
    std::chrono::steady_clock::time_point start_;
    nlohmann::json log_;
};

// ---------------------------------------------------------------------------
// Inputs

inline void require_exists(const fs::path& path, const std::string& what) {
    if (!fs::exists(path)) throw MissingArtifact(what + " not found: " + path.string());
}

inline DatasetBundle dataset_for(const std::string& path, const SynthConfig& synth, const Rng& data_rng,
                                 const std::string& role) {
    if (!path.empty()) {
        require_exists(fs::path(path) / "manifest.json", role + " dataset");
        return load_dataset(path);
    }
    Rng r = data_rng.substream(role);
    return synth_generate(synth, r);
}

inline DatasetBundle source_data(const RunConfig& c, std::uint64_t seed) {
    return dataset_for(c.data.path, c.data.synth, Rng(seed).substream("data"), "source");
}

inline DatasetBundle target_data(const RunConfig& c, std::uint64_t seed) {
    return dataset_for(c.data.target_path, c.data.target_synth, Rng(seed).substream("data"), "target");
}

inline ModelCheckpoint load_checkpoint_artifact(const fs::path& path) {
    require_exists(path, "checkpoint");
    return load_model(path);
}

inline std::function<void(std::size_t, double)> epoch_printer(const std::string& tag, std::size_t epochs) {
    const std::size_t every = std::max<std::size_t>(1, epochs / 10);
    return [tag, epochs, every](std::size_t epoch, double loss) {
        if ((epoch + 1) % every == 0 || epoch + 1 == epochs) {
            std::clog << tag << " epoch " << epoch + 1 << "/" << epochs << " loss " << fmt_number(loss) << '\n';
        }
    };
}

inline void write_loss_csv(const fs::path& path, const std::string& hash, std::uint64_t seed, const std::vector<double>& curve) {
    CsvWriter csv(path, {"config_hash", "seed", "epoch", "loss"});
    for (std::size_t e = 0; e < curve.size(); ++e) csv.row({hash, std::to_string(seed), std::to_string(e + 1), fmt_number(curve[e])});
}

// ---------------------------------------------------------------------------
// Commands

/// Writes the source dataset to `dir` and the target dataset to `dir/target`.
inline nlohmann::json cmd_synth(const RunConfig& cfg, const fs::path& dir) {
    RunRecorder rec("synth", cfg, dir);
    const DatasetBundle source = source_data(cfg, cfg.seed), target = target_data(cfg, cfg.seed);
    save_dataset(source, dir);
    save_dataset(target, dir / "target");
    nlohmann::json results = {{"source", manifest_of(source)}, {"target", manifest_of(target)}};
    write_json(dir / "results.json", results);
    CsvWriter csv(dir / "results.csv", {"config_hash", "seed", "dataset", "channels", "split", "samples", "classes"});
    for (const auto* b : {&source, &target}) {
        for (const auto& s : split_names()) {
            csv.row({config_hash(cfg), std::to_string(cfg.seed), b->name, join(b->channels, "+"), s,
                     std::to_string(b->split(s).size()), std::to_string(b->n_classes)});
        }
    }
    rec.finish();
    return results;
}

inline nlohmann::json cmd_pretrain(const RunConfig& cfg, const fs::path& dir) {
    RunRecorder rec("pretrain", cfg, dir);
    const DatasetBundle source = source_data(cfg, cfg.seed);
    Rng rng = Rng(cfg.seed).substream("pretrain");
    const auto res = pretrain(source, cfg.model, cfg.mae, cfg.pretrain, rng, epoch_printer("pretrain", cfg.pretrain.epochs));
    rec.set_parameters(res.model.parameters());
    const std::string hash = config_hash(cfg);
    save_model(dir / "checkpoint.bin", res.model, cfg.pretrain.epochs, cfg.seed, {{"config_hash", hash}});
    write_loss_csv(dir / "loss.csv", hash, cfg.seed, res.loss_curve);
    const double final_loss = res.loss_curve.empty() ? 0.0 : res.loss_curve.back();
    CsvWriter csv(dir / "results.csv", {"config_hash", "seed", "channels", "epochs", "final_loss"});
    csv.row({hash, std::to_string(cfg.seed), join(res.model.mae.mixer.channel_slots, "+"), std::to_string(cfg.pretrain.epochs),
             fmt_number(final_loss)});
    nlohmann::json results = {{"config", to_json(cfg)},
                              {"channels", res.model.mae.mixer.channel_slots},
                              {"loss_curve", res.loss_curve},
                              {"checkpoint", "checkpoint.bin"}};
    write_json(dir / "results.json", results);
    rec.finish();
    return results;
}

/// Fine-tunes from `checkpoint`, or from a fresh initialization without one.
inline nlohmann::json cmd_finetune(const RunConfig& cfg, const fs::path& dir, const std::optional<fs::path>& checkpoint) {
    RunRecorder rec("finetune", cfg, dir);
    const MaeModel base = checkpoint ? load_checkpoint_artifact(*checkpoint).model : [&] {
        Rng r = Rng(cfg.seed).substream("scratch");
        return scratch_model(cfg.model, cfg.mae, r);
    }();
    const std::string init = checkpoint ? "pretrained" : "scratch";
    const DatasetBundle target = target_data(cfg, cfg.seed);
    Rng rng = Rng(cfg.seed).substream("finetune");
    const auto res = finetune(base, target, cfg.finetune, rng, epoch_printer("finetune", cfg.finetune.epochs));
    rec.set_parameters(res.model.parameters());
    rec.log()["init"] = init;
    if (checkpoint) rec.log()["checkpoint"] = checkpoint->string();
    const std::string hash = config_hash(cfg);
    write_loss_csv(dir / "loss.csv", hash, cfg.seed, res.loss_curve);
    CsvWriter csv(dir / "results.csv",
                  {"config_hash", "seed", "init", "channels", "split", "accuracy", "precision", "recall", "f1"});
    for (const auto& [split, m] : {std::pair{"val", res.val}, std::pair{"test", res.test}}) {
        std::vector<std::string> row = {hash, std::to_string(cfg.seed), init, join(res.channels, "+"), split};
        for (auto& f : metric_fields(m)) row.push_back(f);
        csv.row(row);
    }
    nlohmann::json results = {{"config", to_json(cfg)},
                              {"init", init},
                              {"channels", res.channels},
                              {"loss_curve", res.loss_curve},
                              {"val", to_json(res.val)},
                              {"test", to_json(res.test)}};
    write_json(dir / "results.json", results);
    rec.finish();
    return results;
}

inline nlohmann::json cmd_ablate(const RunConfig& cfg, const fs::path& dir) {
    RunRecorder rec("ablate", cfg, dir);
    const std::string hash = config_hash(cfg);
    const auto seeds = cfg.ablate.seeds.empty() ? std::vector<std::uint64_t>{cfg.seed} : cfg.ablate.seeds;
    CsvWriter csv(dir / "results.csv", {"config_hash", "seed", "fa", "fm", "keep_enc2", "final_pretrain_loss", "accuracy",
                                        "precision", "recall", "f1"});
    nlohmann::json runs = nlohmann::json::array();
    for (const auto seed : seeds) {
        const DatasetBundle source = source_data(cfg, seed), target = target_data(cfg, seed);
        for (const auto& t : cfg.ablate.grid) {
            std::clog << "ablate seed " << seed << " " << ablation_label(t) << '\n';
            const auto r = run_ablation(source, target, cfg.model, cfg.mae, cfg.pretrain, cfg.finetune, t,
                                        Rng(seed).substream("ablate"));
            if (!rec.log().contains("parameter_count")) rec.set_parameters(r.finetuned.model.parameters());
            const double final_loss = r.pretrain_loss.empty() ? 0.0 : r.pretrain_loss.back();
            const std::string keep = t.keep_enc2_at_test ? (*t.keep_enc2_at_test ? "kept" : "dropped") : "default";
            std::vector<std::string> row = {hash, std::to_string(seed), t.fa_on ? "on" : "off", t.fm_on ? "on" : "off",
                                            keep, fmt_number(final_loss)};
            for (auto& f : metric_fields(r.finetuned.test)) row.push_back(f);
            csv.row(row);
            runs.push_back({{"seed", seed},
                            {"label", ablation_label(t)},
                            {"pretrain_loss", r.pretrain_loss},
                            {"finetune_loss", r.finetuned.loss_curve},
                            {"test", to_json(r.finetuned.test)}});
        }
    }
    nlohmann::json results = {{"config", to_json(cfg)}, {"runs", runs}};
    write_json(dir / "results.json", results);
    rec.finish();
    return results;
}

/// Dropout: fine-tune on the full set, evaluate shrinking subsets.
/// Substitution: re-fine-tune with each channel swap.
inline nlohmann::json cmd_mismatch(const RunConfig& cfg, const fs::path& dir, const std::optional<fs::path>& checkpoint) {
    RunRecorder rec("mismatch", cfg, dir);
    const MaeModel base = checkpoint ? load_checkpoint_artifact(*checkpoint).model : [&] {
        Rng r = Rng(cfg.seed).substream("pretrain");
        return pretrain(source_data(cfg, cfg.seed), cfg.model, cfg.mae, cfg.pretrain, r,
                        epoch_printer("pretrain", cfg.pretrain.epochs))
            .model;
    }();
    const DatasetBundle target = target_data(cfg, cfg.seed);
    const auto full = cfg.mismatch.base_channels.empty() ? target.channels : cfg.mismatch.base_channels;
    const Rng rng = Rng(cfg.seed).substream("finetune");
    MismatchReport rep;
    if (cfg.mismatch.mode == "dropout") {
        auto subsets = cfg.mismatch.subsets;
        if (subsets.empty()) {
            for (std::size_t k = full.size(); k >= 1; --k) subsets.emplace_back(full.begin(), full.begin() + k);
        }
        rep = modality_dropout(base, target, full, subsets, cfg.finetune, rng);
    } else {
        rep = modality_substitution(base, target, full, cfg.mismatch.substitutions, cfg.finetune, rng);
    }
    rec.set_parameters(base.parameters());
    const std::string hash = config_hash(cfg);
    CsvWriter csv(dir / "results.csv", {"config_hash", "seed", "mode", "label", "channels", "accuracy", "precision",
                                        "recall", "f1", "delta_accuracy", "delta_f1"});
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : rep.rows) {
        std::vector<std::string> row = {hash, std::to_string(cfg.seed), cfg.mismatch.mode, r.label, join(r.channels, "+")};
        for (auto& f : metric_fields(r.metrics)) row.push_back(f);
        row.push_back(fmt_number(r.delta_accuracy));
        row.push_back(fmt_number(r.delta_f1));
        csv.row(row);
        rows.push_back({{"label", r.label}, {"channels", r.channels}, {"test", to_json(r.metrics)},
                        {"delta_accuracy", r.delta_accuracy}, {"delta_f1", r.delta_f1}});
    }
    nlohmann::json results = {{"config", to_json(cfg)},
                              {"mode", cfg.mismatch.mode},
                              {"base_channels", rep.base_channels},
                              {"baseline", to_json(rep.baseline)},
                              {"rows", rows}};
    write_json(dir / "results.json", results);
    rec.finish();
    return results;
}

/// Channel-by-channel attention of a pretrained model on the source data.
inline nlohmann::json cmd_attn(const RunConfig& cfg, const fs::path& dir, const fs::path& checkpoint) {
    const auto ckpt = load_checkpoint_artifact(checkpoint);
    RunRecorder rec("attn", cfg, dir);
    rec.set_parameters(ckpt.model.parameters());
    rec.log()["checkpoint"] = checkpoint.string();
    const DatasetBundle data = source_data(cfg, cfg.seed);
    const SplitData& split = data.split(cfg.attn.split);
    std::vector<std::size_t> samples(std::min(cfg.attn.samples, split.size()));
    std::iota(samples.begin(), samples.end(), 0);
    if (samples.empty()) throw std::invalid_argument("attn: split '" + cfg.attn.split + "' is empty");
    std::vector<std::size_t> all_channels(data.channels.size());
    std::iota(all_channels.begin(), all_channels.end(), 0);
    const TensorF signals = standardize(select_samples(split, samples, all_channels));
    const auto exp = export_attention(ckpt.model, signals, data.channels);
    write_blob<double>(dir / "attention.bin", exp.matrix.shape(), exp.matrix.data());
    write_blob<double>(dir / "attention_per_head.bin", exp.per_head.shape(), exp.per_head.data());
    std::vector<std::string> header = {"config_hash", "seed", "query"};
    for (const auto& n : exp.channels) header.push_back(n);
    CsvWriter csv(dir / "results.csv", header);
    const std::size_t c = exp.channels.size();
    nlohmann::json matrix = nlohmann::json::array();
    for (std::size_t i = 0; i < c; ++i) {
        std::vector<std::string> row = {config_hash(cfg), std::to_string(cfg.seed), exp.channels[i]};
        std::vector<double> values;
        for (std::size_t j = 0; j < c; ++j) {
            row.push_back(fmt_number(exp.matrix.data()[i * c + j]));
            values.push_back(exp.matrix.data()[i * c + j]);
        }
        csv.row(row);
        matrix.push_back(values);
    }
    nlohmann::json results = {{"config", to_json(cfg)},
                              {"channels", exp.channels},
                              {"samples", samples.size()},
                              {"matrix", matrix}};
    write_json(dir / "results.json", results);
    rec.finish();
    return results;
}

} // namespace famae
