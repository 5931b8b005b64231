#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "lpad/commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"VAE anomaly-detection toolkit (Gaussian / Bernoulli / RBM priors)"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_override;
    std::int64_t repeats_override = -1;

    const std::pair<lpad::cli::Command, const char*> cmds[] = {
        {lpad::cli::Command::synth, "synth"},
        {lpad::cli::Command::train, "train"},
        {lpad::cli::Command::eval, "eval"},
        {lpad::cli::Command::transfer, "transfer"},
        {lpad::cli::Command::sweep, "sweep"},
    };
    const char* descriptions[] = {
        "generate a synthetic dataset CSV",
        "train model repeats and write checkpoints",
        "evaluate trained checkpoints into an EvalReport",
        "evaluate (optionally post-train) source checkpoints on a new dataset",
        "run the latent x beta grid and write the mean-F1 table",
    };

    lpad::cli::Command selected = lpad::cli::Command::synth;
    for (std::size_t i = 0; i < std::size(cmds); ++i) {
        CLI::App* sub = app.add_subcommand(cmds[i].second, descriptions[i]);
        sub->add_option("--config", config_path, "run configuration file")->required();
        sub->add_option("--repeats", repeats_override, "override the config's repeat count");
        sub->add_option("--out", out_override, "override the config's output directory");
        const lpad::cli::Command c = cmds[i].first;
        sub->callback([&, c] { selected = c; });
    }

    CLI11_PARSE(app, argc, argv);

    try {
        lpad::cli::RunConfig cfg = lpad::cli::parse_config(config_path);
        if (repeats_override > 0) cfg.repeats = repeats_override;
        if (!out_override.empty()) cfg.out_dir = out_override;
        lpad::cli::run(cfg, selected);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "lpad: error: %s\n", e.what());
        return 1;
    }
    return 0;
}
