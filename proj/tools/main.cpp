// morpmamba command-line front end. All functionality lives behind the C API
// in libmorpmamba; this binary only translates flags into configuration keys
// and prints the JSON each command returns.

#include <cstdio>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "morpmamba.h"

namespace {

struct ConfigDeleter {
    void operator()(mm_config* c) const { mm_config_free(c); }
};
using ConfigPtr = std::unique_ptr<mm_config, ConfigDeleter>;

// flag values staged as key=value pairs; the config file (if any) is applied
// first so explicit flags win
struct PendingConfig {
    std::string config_file;
    std::vector<std::pair<std::string, std::string>> pairs;

    void set(const std::string& key, const std::string& value) { pairs.emplace_back(key, value); }

    ConfigPtr build() {
        ConfigPtr cfg(mm_config_new());
        if (!cfg) {
            std::fprintf(stderr, "error: out of memory\n");
            std::exit(int(MM_ERR_INTERNAL));
        }
        if (!config_file.empty()) {
            check(mm_config_load_file(cfg.get(), config_file.c_str()));
        }
        for (const auto& [key, value] : pairs) {
            check(mm_config_set(cfg.get(), key.c_str(), value.c_str()));
        }
        return cfg;
    }

    static void check(mm_status st) {
        if (st != MM_OK) {
            std::fprintf(stderr, "error: %s\n", mm_last_error());
            std::exit(int(st));
        }
    }
};

int run(mm_status (*command)(const mm_config*, char**), PendingConfig& pending) {
    ConfigPtr cfg = pending.build();
    char* json = nullptr;
    const mm_status st = command(cfg.get(), &json);
    if (st != MM_OK) {
        std::fprintf(stderr, "error: %s\n", mm_last_error());
        return int(st);
    }
    std::printf("%s\n", json);
    mm_string_free(json);
    return 0;
}

void add_global_flags(CLI::App* cmd, PendingConfig& pending) {
    cmd->set_help_flag("--help", "print this help message and exit");
    cmd->add_option_function<std::string>(
           "--config", [&pending](const std::string& v) { pending.config_file = v; },
           "key=value configuration file (flags override it)")
        ->option_text("PATH");
    for (const char* key : {"seed", "precision", "threads"}) {
        const std::string name = std::string("--") + key;
        cmd->add_option_function<std::string>(
            name, [&pending, key](const std::string& v) { pending.set(key, v); },
            std::string("config key '") + key + "'");
    }
}

void add_keys(CLI::App* cmd, PendingConfig& pending,
              const std::vector<std::pair<const char*, const char*>>& keys) {
    for (const auto& [flag, key] : keys) {
        const std::string name = std::string("--") + flag;
        cmd->add_option_function<std::string>(
            name, [&pending, key](const std::string& v) { pending.set(key, v); },
            std::string("config key '") + key + "'");
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"morphological spatial-spectral state-space classifier for hyperspectral cubes"};
    app.require_subcommand(1);
    app.set_help_flag("--help", "print this help message and exit");
    app.set_version_flag("--version", std::string(mm_version()));

    PendingConfig pending;

    auto* gen = app.add_subcommand("gen-data", "synthesize a labeled cube (.hsic + .labels)");
    add_global_flags(gen, pending);
    add_keys(gen, pending,
             {{"out", "out"}, {"h", "h"}, {"w", "w"}, {"c", "c"}, {"classes", "classes"},
              {"noise", "noise"}});

    auto* train = app.add_subcommand("train", "train a model and write checkpoint, log and metrics");
    add_global_flags(train, pending);
    add_keys(train, pending,
             {{"data", "data"},     {"out", "out"},     {"variant", "variant"}, {"patch", "patch"},
              {"bands", "bands"},   {"dim", "dim"},     {"heads", "heads"},     {"kernel", "kernel"},
              {"ssm-dim", "ssm_dim"}, {"lambda", "lambda"}, {"epochs", "epochs"}, {"batch", "batch"},
              {"lr", "lr"},         {"shuffle", "shuffle"}, {"ratios", "ratios"}, {"mode", "mode"}});

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a stored split");
    add_global_flags(eval, pending);
    add_keys(eval, pending,
             {{"checkpoint", "checkpoint"}, {"data", "data"}, {"split", "split"}, {"out", "out"}});

    auto* pmap = app.add_subcommand("predict-map", "classify labeled pixels into a P6 PPM map");
    add_global_flags(pmap, pending);
    add_keys(pmap, pending, {{"checkpoint", "checkpoint"}, {"data", "data"}, {"out", "out"}});

    auto* ablate = app.add_subcommand("ablate", "train/evaluate a settings grid into a CSV");
    add_global_flags(ablate, pending);
    add_keys(ablate, pending,
             {{"data", "data"},         {"out", "out"},       {"variant", "variant"},
              {"variants", "sweep_variants"}, {"train-ratios", "sweep_train_ratios"},
              {"patches", "sweep_patches"},   {"heads-list", "sweep_heads"},
              {"kernels", "sweep_kernels"},   {"epochs", "epochs"}, {"batch", "batch"},
              {"lr", "lr"},             {"ratios", "ratios"}, {"dim", "dim"},
              {"bands", "bands"},       {"mode", "mode"}});

    CLI11_PARSE(app, argc, argv);

    if (gen->parsed()) {
        return run(mm_run_gen_data, pending);
    }
    if (train->parsed()) {
        return run(mm_run_train, pending);
    }
    if (eval->parsed()) {
        return run(mm_run_eval, pending);
    }
    if (pmap->parsed()) {
        return run(mm_run_predict_map, pending);
    }
    if (ablate->parsed()) {
        return run(mm_run_ablate, pending);
    }
    return 0;
}
