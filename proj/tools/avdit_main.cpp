// avdit command-line interface. Talks to the library exclusively through the
// public C API; exit codes mirror avdit_status (0 ok, 1 runtime failure,
// 2 config error, 3 invariant/gradcheck failure).

#include <CLI11.hpp>
#include <cstdint>
#include <cstdio>
#include <string>

#include "avdit/avdit.h"

namespace {

int finish(avdit_status st) {
    if (st != AVDIT_OK) std::fprintf(stderr, "error: %s\n", avdit_last_error());
    return static_cast<int>(st);
}

struct ConfigGuard {
    avdit_config* cfg = nullptr;
    ~ConfigGuard() { avdit_config_close(cfg); }
};

avdit_status open_config(const std::string& path, uint64_t seed_override, ConfigGuard& guard) {
    avdit_status st = path.empty() ? avdit_config_create(&guard.cfg)
                                   : avdit_config_open(path.c_str(), &guard.cfg);
    if (st != AVDIT_OK) return st;
    if (seed_override != 0)
        return avdit_config_set(guard.cfg, "seed.master", std::to_string(seed_override).c_str());
    return AVDIT_OK;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"avdit: joint audio-video latent diffusion at desk scale"};
    app.require_subcommand(1);

    std::string config_path, out_path, checkpoint_path;
    uint64_t seed = 0;
    int64_t n = 2048;
    int steps = 250;
    bool quiet = false;

    auto* train = app.add_subcommand("train", "train a model and write checkpoint + metrics");
    train->add_option("--config", config_path, "run configuration file")->required();
    train->add_option("--out", out_path, "output directory")->default_val("run");
    train->add_option("--seed", seed, "override seed.master");
    train->add_flag("--quiet", quiet, "suppress progress output");

    auto* sample = app.add_subcommand("sample", "draw joint samples from a checkpoint");
    sample->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    sample->add_option("--out", out_path, "output directory")->default_val("samples");
    sample->add_option("--n", n, "number of joint samples");
    sample->add_option("--steps", steps, "reverse-process steps (respaced)");
    sample->add_option("--seed", seed, "sampling seed (0: from checkpoint config)");
    sample->add_flag("--quiet", quiet, "suppress progress output");

    auto* params = app.add_subcommand("params", "parameter count report");
    params->add_option("--config", config_path, "run configuration file");

    auto* gradcheck = app.add_subcommand("gradcheck",
                                         "finite-difference check of every trainable submodule");
    gradcheck->add_option("--config", config_path, "run configuration file");

    auto* ablate = app.add_subcommand("ablate", "train all ablation variants, compare to oracle");
    ablate->add_option("--config", config_path, "run configuration file")->required();
    ablate->add_option("--out", out_path, "comparison CSV path")->default_val("ablate.csv");
    ablate->add_option("--seed", seed, "override seed.master");
    ablate->add_flag("--quiet", quiet, "suppress progress output");

    app.add_flag_callback("--version", [] {
        std::printf("%s\n", avdit_version());
        std::exit(0);
    });

    CLI11_PARSE(app, argc, argv);

    if (train->parsed()) {
        ConfigGuard g;
        avdit_status st = open_config(config_path, seed, g);
        if (st != AVDIT_OK) return finish(st);
        return finish(avdit_train(g.cfg, out_path.c_str(), quiet ? 0 : 1));
    }
    if (sample->parsed()) {
        return finish(avdit_sample(checkpoint_path.c_str(), out_path.c_str(), n, steps, seed,
                                   quiet ? 0 : 1));
    }
    if (params->parsed()) {
        ConfigGuard g;
        avdit_status st = open_config(config_path, 0, g);
        if (st != AVDIT_OK) return finish(st);
        const char* text = nullptr;
        st = avdit_params_report(g.cfg, &text);
        if (st == AVDIT_OK) std::printf("%s", text);
        return finish(st);
    }
    if (gradcheck->parsed()) {
        ConfigGuard g;
        avdit_status st = open_config(config_path, 0, g);
        if (st != AVDIT_OK) return finish(st);
        const char* report = nullptr;
        st = avdit_gradcheck(g.cfg, &report);
        if (report) std::printf("%s", report);
        return finish(st);
    }
    if (ablate->parsed()) {
        ConfigGuard g;
        avdit_status st = open_config(config_path, seed, g);
        if (st != AVDIT_OK) return finish(st);
        const char* report = nullptr;
        st = avdit_ablate(g.cfg, out_path.c_str(), quiet ? 0 : 1, &report);
        if (report) std::printf("%s", report);
        return finish(st);
    }
    return 0;
}
