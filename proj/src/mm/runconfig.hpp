#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mm/model.hpp"
#include "mm/patches.hpp"

namespace mm {

// Everything a command needs, merged from defaults, an optional key=value
// config file, and flag overrides (flags win). Unknown keys are rejected.
struct RunConfig {
    // model
    std::string variant = "SSMM";
    int patch = 4;
    int bands = 0;      // band count to keep; 0 = all
    int dim = 64;
    int heads = 4;
    int kernel = 5;
    int ssm_dim = 0;    // 0 = dim
    double lambda = 1e-4;
    // training
    int epochs = 50;
    int batch = 256;
    double lr = 1e-3;
    bool shuffle = true;
    // split
    std::vector<double> ratios = {0.2, 0.3, 0.5};
    // run
    std::uint64_t seed = 0;
    std::string precision = "f32"; // f32 | f64
    int threads = 1;
    std::string mode = "per_pixel"; // per_pixel | tile
    // io
    std::string data;
    std::string out;
    std::string checkpoint;
    std::string split = "test"; // eval split: train | val | test
    // synthesis (gen-data)
    int height = 32;
    int width = 32;
    int channels = 16;
    int classes = 4;
    double noise = 0.05;
    // ablation sweep axes
    std::vector<std::string> sweep_variants;
    std::vector<double> sweep_train_ratios;
    std::vector<int> sweep_patches;
    std::vector<int> sweep_heads;
    std::vector<int> sweep_kernels;
};

// Assign one key=value pair; throws a config error on unknown keys or
// malformed values.
void set_key(RunConfig& cfg, const std::string& key, const std::string& value);

// Flat key=value file, '#' comments, blank lines ignored.
void load_config_file(RunConfig& cfg, const std::string& path);

// Settings shared by every command; throws on invalid combinations.
void validate_common(const RunConfig& cfg);

// Resolve the model part against a concrete cube (class count, actual bands).
ModelConfig to_model_config(const RunConfig& cfg, std::size_t classes, std::size_t bands_actual);

// Checkpoint context: the resolved settings needed to rebuild the model and
// re-derive the split.
nlohmann::json run_context_json(const RunConfig& cfg, const ModelConfig& model);
RunConfig run_context_from_json(const nlohmann::json& j);

SplitSpec split_spec(const RunConfig& cfg);
PatchMode patch_mode(const RunConfig& cfg);

} // namespace mm
