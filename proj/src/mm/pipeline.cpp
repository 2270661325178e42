#include "mm/pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mm/checkpoint.hpp"
#include "mm/cube.hpp"
#include "mm/error.hpp"
#include "mm/train.hpp"

namespace mm {

namespace fs = std::filesystem;

const unsigned char kClassPalette[16][3] = {
    {230, 25, 75},   {60, 180, 75},   {255, 225, 25}, {0, 130, 200},
    {245, 130, 48},  {145, 30, 180},  {70, 240, 240}, {240, 50, 230},
    {210, 245, 60},  {250, 190, 212}, {0, 128, 128},  {220, 190, 255},
    {170, 110, 40},  {255, 250, 200}, {128, 0, 0},    {170, 255, 195},
};

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <typename Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const MmError& e) {
        throw MmError(e.code(), std::string(name) + ": " + e.what());
    }
}

std::string require_key(const std::string& value, const char* key, const char* command) {
    if (value.empty()) {
        fail(ErrCode::config, std::string(command) + ": required setting '" + key + "' is missing");
    }
    return value;
}

std::string hsic_path(const std::string& out) {
    const std::string ext = ".hsic";
    if (out.size() > ext.size() && out.compare(out.size() - ext.size(), ext.size(), ext) == 0) {
        return out;
    }
    return out + ext;
}

HsiCube load_input_cube(const RunConfig& cfg, const char* command) {
    const std::string path = require_key(cfg.data, "data", command);
    return stage("load_cube", [&] { return load_cube(path); });
}

// cube -> bands -> normalize -> patches -> split
struct Prepared {
    HsiCube cube;
    SplitResult split;
    std::size_t bands_actual = 0;
};

Prepared prepare_dataset(const HsiCube& raw, const RunConfig& cfg) {
    Prepared prep;
    prep.cube = raw;
    if (cfg.bands != 0 && std::size_t(cfg.bands) != raw.bands) {
        prep.cube = stage("select_bands", [&] { return select_bands(prep.cube, std::size_t(cfg.bands)); });
    }
    prep.bands_actual = prep.cube.bands;
    prep.cube = stage("normalize", [&] { return normalize(prep.cube); });
    auto samples = stage("extract_patches", [&] {
        return extract_patches(prep.cube, std::size_t(cfg.patch), patch_mode(cfg));
    });
    prep.split = stage("stratified_split", [&] {
        return stratified_split(samples, prep.cube.class_count, split_spec(cfg));
    });
    return prep;
}

nlohmann::json metrics_json(const Metrics& m, std::size_t params, const std::string& variant,
                            std::uint64_t seed, double wall_seconds) {
    nlohmann::json j;
    j["oa"] = m.oa;
    j["aa"] = m.aa;
    j["kappa"] = m.kappa;
    j["params"] = params;
    j["variant"] = variant;
    j["seed"] = seed;
    j["wall_seconds"] = wall_seconds;
    return j;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        fail(ErrCode::io, "cannot open " + path + " for writing");
    }
    os << content;
    if (!os) {
        fail(ErrCode::io, "write failed for " + path);
    }
}

std::string format_log_csv(const std::vector<EpochRow>& log) {
    std::ostringstream os;
    os << "epoch,train_loss,train_acc,val_loss,val_acc\n";
    os << std::fixed << std::setprecision(6);
    for (const auto& row : log) {
        os << row.epoch << ',' << row.train_loss << ',' << row.train_acc << ',' << row.val_loss << ','
           << row.val_acc << '\n';
    }
    return os.str();
}

struct TrainSummary {
    Metrics val_metrics;
    Metrics test_metrics;
    std::vector<EpochRow> log;
    std::size_t params_total = 0;
    double wall_seconds = 0;
    ModelConfig model;
    // f32 copies of the selected and final parameters, ready for checkpointing
    std::map<std::string, std::vector<float>> best_raw;
    std::map<std::string, std::vector<float>> final_raw;
};

template <typename S>
std::map<std::string, std::vector<float>> to_raw(const ModelParams<S>& params) {
    std::map<std::string, std::vector<float>> raw;
    for (const auto& [key, t] : params.tensors) {
        std::vector<float> v(t->numel());
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = float(t->data[i]);
        }
        raw.emplace(key, std::move(v));
    }
    return raw;
}

template <typename S>
TrainSummary train_impl(const HsiCube& raw, const RunConfig& cfg) {
    const auto t0 = Clock::now();
    Prepared prep = prepare_dataset(raw, cfg);
    const ModelConfig model =
        to_model_config(cfg, std::size_t(prep.cube.class_count), prep.bands_actual);
    auto params = make_params<S>(model);

    TrainConfig tcfg;
    tcfg.epochs = cfg.epochs;
    tcfg.batch_size = std::size_t(cfg.batch);
    tcfg.lr = cfg.lr;
    tcfg.seed = cfg.seed;
    tcfg.shuffle = cfg.shuffle;
    tcfg.threads = cfg.threads;

    auto fitres = stage("fit", [&] { return fit(params, model, prep.split.train, prep.split.val, tcfg); });
    const double wall = seconds_since(t0);

    TrainSummary out;
    out.model = model;
    out.log = std::move(fitres.log);
    out.params_total = param_count(fitres.best);
    out.val_metrics =
        stage("evaluate", [&] { return evaluate(fitres.best, model, prep.split.val, cfg.threads); });
    out.test_metrics =
        stage("evaluate", [&] { return evaluate(fitres.best, model, prep.split.test, cfg.threads); });
    out.wall_seconds = wall;
    out.best_raw = to_raw(fitres.best);
    out.final_raw = to_raw(params);
    return out;
}

TrainSummary train_dispatch(const HsiCube& raw, const RunConfig& cfg) {
    if (cfg.precision == "f64") {
        return train_impl<double>(raw, cfg);
    }
    return train_impl<float>(raw, cfg);
}

std::vector<Sample>& pick_split(SplitResult& split, const std::string& name) {
    if (name == "train") {
        return split.train;
    }
    if (name == "val") {
        return split.val;
    }
    return split.test;
}

} // namespace

std::string run_gen_data(const RunConfig& cfg) {
    validate_common(cfg);
    const std::string out = hsic_path(require_key(cfg.out, "out", "gen-data"));
    SynthSpec spec;
    spec.height = std::size_t(cfg.height);
    spec.width = std::size_t(cfg.width);
    spec.bands = std::size_t(cfg.channels);
    spec.classes = cfg.classes;
    spec.noise_sigma = cfg.noise;
    spec.seed = cfg.seed;
    HsiCube cube = stage("synth_cube", [&] { return synth_cube(spec); });
    stage("save_cube", [&] {
        save_cube(cube, out);
        return 0;
    });
    nlohmann::json j;
    j["path"] = out;
    j["h"] = cube.height;
    j["w"] = cube.width;
    j["c"] = cube.bands;
    j["classes"] = cube.class_count;
    j["labeled"] = cube.labeled_count();
    j["seed"] = cfg.seed;
    return j.dump();
}

std::string run_train(const RunConfig& cfg) {
    validate_common(cfg);
    const std::string out_dir = require_key(cfg.out, "out", "train");
    HsiCube raw = load_input_cube(cfg, "train");
    TrainSummary sum = train_dispatch(raw, cfg);

    fs::create_directories(out_dir);
    const std::string ck_path = (fs::path(out_dir) / "checkpoint.mmck").string();
    save_checkpoint_raw(ck_path, run_context_json(cfg, sum.model), sum.best_raw);
    save_checkpoint_raw((fs::path(out_dir) / "checkpoint_final.mmck").string(),
                        run_context_json(cfg, sum.model), sum.final_raw);
    write_text((fs::path(out_dir) / "train_log.csv").string(), format_log_csv(sum.log));

    const auto val_json =
        metrics_json(sum.val_metrics, sum.params_total, cfg.variant, cfg.seed, sum.wall_seconds);
    const auto test_json =
        metrics_json(sum.test_metrics, sum.params_total, cfg.variant, cfg.seed, sum.wall_seconds);
    write_text((fs::path(out_dir) / "metrics_val.json").string(), val_json.dump() + "\n");
    write_text((fs::path(out_dir) / "metrics_test.json").string(), test_json.dump() + "\n");
    return test_json.dump();
}

std::string run_eval(const RunConfig& cfg) {
    const std::string ck_path = require_key(cfg.checkpoint, "checkpoint", "eval");
    LoadedCheckpoint ck = stage("load_checkpoint", [&] { return load_checkpoint(ck_path); });
    HsiCube raw = load_input_cube(cfg, "eval");

    if (raw.class_count != ck.run.classes) {
        fail(ErrCode::config, "eval: checkpoint expects " + std::to_string(ck.run.classes) +
                                  " classes but cube declares " + std::to_string(raw.class_count));
    }
    if (raw.bands < std::size_t(ck.run.bands)) {
        fail(ErrCode::config, "eval: checkpoint expects " + std::to_string(ck.run.bands) +
                                  " bands but cube has only " + std::to_string(raw.bands));
    }
    const auto t0 = Clock::now();
    RunConfig derived = ck.run; // split re-derived from the stored seed/ratios
    derived.threads = cfg.threads;
    Prepared prep = prepare_dataset(raw, derived);
    auto& samples = pick_split(prep.split, cfg.split);
    if (samples.empty()) {
        fail(ErrCode::invalid, "eval: split '" + cfg.split + "' is empty");
    }
    Metrics m = stage("evaluate",
                      [&] { return evaluate(ck.params, ck.model, samples, cfg.threads); });
    const auto j = metrics_json(m, param_count(ck.params), variant_name(ck.model.variant),
                                ck.model.seed, seconds_since(t0));
    if (!cfg.out.empty()) {
        write_text(cfg.out, j.dump() + "\n");
    }
    return j.dump();
}

std::string run_predict_map(const RunConfig& cfg) {
    const std::string ck_path = require_key(cfg.checkpoint, "checkpoint", "predict-map");
    const std::string out = require_key(cfg.out, "out", "predict-map");
    LoadedCheckpoint ck = stage("load_checkpoint", [&] { return load_checkpoint(ck_path); });
    HsiCube raw = load_input_cube(cfg, "predict-map");
    if (raw.class_count != ck.run.classes) {
        fail(ErrCode::config, "predict-map: checkpoint expects " + std::to_string(ck.run.classes) +
                                  " classes but cube declares " + std::to_string(raw.class_count));
    }
    if (raw.bands < std::size_t(ck.run.bands)) {
        fail(ErrCode::config, "predict-map: checkpoint expects " + std::to_string(ck.run.bands) +
                                  " bands but cube has only " + std::to_string(raw.bands));
    }

    HsiCube cube = raw;
    if (std::size_t(ck.run.bands) != raw.bands) {
        cube = stage("select_bands", [&] { return select_bands(cube, std::size_t(ck.run.bands)); });
    }
    cube = stage("normalize", [&] { return normalize(cube); });
    auto samples = stage("extract_patches", [&] {
        return extract_patches(cube, std::size_t(ck.run.patch), PatchMode::per_pixel);
    });
    const auto pred = stage("predict", [&] {
        return predict_labels(ck.params, ck.model, samples, cfg.threads);
    });

    std::vector<unsigned char> rgb(cube.height * cube.width * 3, 0);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const std::size_t p = samples[i].row * cube.width + samples[i].col;
        const unsigned char* color = kClassPalette[std::size_t(pred[i] - 1) % 16];
        rgb[p * 3] = color[0];
        rgb[p * 3 + 1] = color[1];
        rgb[p * 3 + 2] = color[2];
    }
    {
        std::ofstream os(out, std::ios::binary);
        if (!os) {
            fail(ErrCode::io, "predict-map: cannot open " + out);
        }
        os << "P6\n" << cube.width << ' ' << cube.height << "\n255\n";
        os.write(reinterpret_cast<const char*>(rgb.data()), std::streamsize(rgb.size()));
        if (!os) {
            fail(ErrCode::io, "predict-map: write failed for " + out);
        }
    }
    nlohmann::json j;
    j["out"] = out;
    j["width"] = cube.width;
    j["height"] = cube.height;
    j["labeled"] = samples.size();
    return j.dump();
}

std::string run_ablate(const RunConfig& cfg) {
    validate_common(cfg);
    const std::string out = require_key(cfg.out, "out", "ablate");
    HsiCube raw = load_input_cube(cfg, "ablate");

    auto variants = cfg.sweep_variants.empty() ? std::vector<std::string>{cfg.variant}
                                               : cfg.sweep_variants;
    auto train_ratios = cfg.sweep_train_ratios.empty() ? std::vector<double>{cfg.ratios[0]}
                                                       : cfg.sweep_train_ratios;
    auto patches = cfg.sweep_patches.empty() ? std::vector<int>{cfg.patch} : cfg.sweep_patches;
    auto heads = cfg.sweep_heads.empty() ? std::vector<int>{cfg.heads} : cfg.sweep_heads;
    auto kernels = cfg.sweep_kernels.empty() ? std::vector<int>{cfg.kernel} : cfg.sweep_kernels;

    // validate the whole grid before any training
    for (double r : train_ratios) {
        if (!(r > 0) || !(r + cfg.ratios[1] < 1.0)) {
            fail(ErrCode::config, "ablate: train ratio " + std::to_string(r) +
                                      " leaves no room for val/test");
        }
    }
    for (int p : patches) {
        if (p < 2) {
            fail(ErrCode::config, "ablate: patch sizes must be >= 2");
        }
    }
    for (int h : heads) {
        if (h < 1 || cfg.dim % h != 0) {
            fail(ErrCode::config, "ablate: head count " + std::to_string(h) +
                                      " does not divide dim " + std::to_string(cfg.dim));
        }
    }
    for (int k : kernels) {
        if (k < 1 || k % 2 == 0) {
            fail(ErrCode::config, "ablate: kernel sizes must be odd, got " + std::to_string(k));
        }
    }

    std::ofstream os(out, std::ios::binary);
    if (!os) {
        fail(ErrCode::io, "ablate: cannot open " + out);
    }
    os << "variant,train_ratio,patch,heads,kernel,oa,aa,kappa,params,wall_seconds\n" << std::flush;

    std::size_t cells = 0;
    for (const auto& variant : variants) {
        for (double ratio : train_ratios) {
            for (int patch : patches) {
                for (int head : heads) {
                    for (int kernel : kernels) {
                        RunConfig cell = cfg;
                        cell.variant = variant;
                        cell.patch = patch;
                        cell.heads = head;
                        cell.kernel = kernel;
                        cell.ratios = {ratio, cfg.ratios[1], 1.0 - ratio - cfg.ratios[1]};
                        validate_common(cell);
                        TrainSummary sum = train_dispatch(raw, cell);
                        os << variant << ',' << ratio << ',' << patch << ',' << head << ',' << kernel
                           << ',' << std::fixed << std::setprecision(6) << sum.test_metrics.oa << ','
                           << sum.test_metrics.aa << ',' << sum.test_metrics.kappa << ','
                           << sum.params_total << ',' << sum.wall_seconds << '\n'
                           << std::defaultfloat << std::flush;
                        ++cells;
                    }
                }
            }
        }
    }
    if (!os) {
        fail(ErrCode::io, "ablate: write failed for " + out);
    }
    nlohmann::json j;
    j["cells"] = cells;
    j["csv"] = out;
    return j.dump();
}

} // namespace mm
