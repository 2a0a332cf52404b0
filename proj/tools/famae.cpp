// famae: synth | pretrain | finetune | ablate | mismatch | attn
//
// Exit codes: 0 ok, 1 runtime failure, 2 invalid config or usage, 3 missing artifact.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "famae/pipeline.hpp"

namespace {

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string checkpoint;
    std::vector<std::string> sets;
};

void add_flags(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "JSON run config");
    cmd->add_option("--seed", f.seed, "top-level seed (overrides config)");
    cmd->add_option("--out", f.out, "output directory (default: <output_dir>/<command>)");
    cmd->add_option("--checkpoint", f.checkpoint, "pretrained checkpoint");
    cmd->add_option("--set", f.sets, "override, e.g. --set model.depth=2 (repeatable)")->take_all();
}

int run(const std::string& command, const Flags& f) {
    using namespace famae;
    std::optional<fs::path> config_path;
    if (!f.config.empty()) {
        if (!fs::exists(f.config)) throw ConfigError("config file not found: " + f.config);
        config_path = f.config;
    }
    RunConfig cfg = load_run_config(config_path, f.sets);
    if (f.seed) cfg.seed = *f.seed;
    const fs::path out = f.out.empty() ? fs::path(cfg.output_dir) / command : fs::path(f.out);
    if (!f.out.empty()) cfg.output_dir = f.out;
    const std::optional<fs::path> ckpt = f.checkpoint.empty() ? std::nullopt : std::optional<fs::path>(f.checkpoint);
    if (ckpt) require_exists(*ckpt, "checkpoint");

    nlohmann::json results;
    if (command == "synth") {
        results = cmd_synth(cfg, out);
        for (const auto& role : {"source", "target"}) {
            const auto& m = results[role];
            std::cout << role << ": " << m["name"].get<std::string>() << ", " << m["channels"].size() << " channels, "
                      << m["length"] << " samples/record at " << m["sampling_rate_hz"] << " Hz, " << m["n_classes"]
                      << " classes, splits";
            for (const auto& [k, v] : m["splits"].items()) std::cout << " " << k << "=" << v;
            std::cout << '\n';
        }
    } else if (command == "pretrain") {
        results = cmd_pretrain(cfg, out);
        std::cout << "final loss " << fmt_number(results["loss_curve"].empty() ? 0.0 : results["loss_curve"].back().get<double>())
                  << ", checkpoint " << (out / "checkpoint.bin").string() << '\n';
    } else if (command == "finetune") {
        results = cmd_finetune(cfg, out, ckpt);
        std::cout << results["init"].get<std::string>() << " test accuracy "
                  << fmt_number(results["test"]["accuracy"].get<double>()) << " f1 "
                  << fmt_number(results["test"]["f1"].get<double>()) << '\n';
    } else if (command == "ablate") {
        results = cmd_ablate(cfg, out);
        for (const auto& r : results["runs"]) {
            std::cout << "seed " << r["seed"] << " " << r["label"].get<std::string>() << " accuracy "
                      << fmt_number(r["test"]["accuracy"].get<double>()) << '\n';
        }
    } else if (command == "mismatch") {
        results = cmd_mismatch(cfg, out, ckpt);
        for (const auto& r : results["rows"]) {
            std::cout << r["label"].get<std::string>() << " accuracy " << fmt_number(r["test"]["accuracy"].get<double>())
                      << " (" << fmt_number(r["delta_accuracy"].get<double>()) << ")\n";
        }
    } else if (command == "attn") {
        if (!ckpt) throw MissingArtifact("attn needs --checkpoint");
        results = cmd_attn(cfg, out, *ckpt);
        const auto& names = results["channels"];
        for (std::size_t i = 0; i < names.size(); ++i) {
            std::cout << names[i].get<std::string>();
            for (const auto& v : results["matrix"][i]) std::cout << " " << fmt_number(v.get<double>());
            std::cout << '\n';
        }
    }
    std::cout << "wrote " << out.string() << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"frequency-aware masked autoencoder for multimodal biosignals"};
    app.require_subcommand(1);
    Flags flags;
    std::string command;
    for (const char* name : {"synth", "pretrain", "finetune", "ablate", "mismatch", "attn"}) {
        auto* cmd = app.add_subcommand(name);
        add_flags(cmd, flags);
        cmd->callback([&command, name] { command = name; });
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    try {
        return run(command, flags);
    } catch (const famae::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const famae::MissingArtifact& e) {
        std::cerr << "missing artifact: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
