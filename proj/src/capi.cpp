#include "morpmamba.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include "mm/checkpoint.hpp"
#include "mm/cube.hpp"
#include "mm/error.hpp"
#include "mm/pipeline.hpp"
#include "mm/train.hpp"

struct mm_config {
    mm::RunConfig cfg;
};

struct mm_cube {
    mm::HsiCube cube;
};

struct mm_model {
    mm::LoadedCheckpoint ck;
};

namespace {

thread_local std::string g_last_error = "";

mm_status to_status(mm::ErrCode code) {
    switch (code) {
        case mm::ErrCode::invalid: return MM_ERR_INVALID;
        case mm::ErrCode::io: return MM_ERR_IO;
        case mm::ErrCode::format: return MM_ERR_FORMAT;
        case mm::ErrCode::shape: return MM_ERR_SHAPE;
        case mm::ErrCode::config: return MM_ERR_CONFIG;
        case mm::ErrCode::numeric: return MM_ERR_NUMERIC;
        default: return MM_ERR_INTERNAL;
    }
}

template <typename Fn>
mm_status guarded(Fn&& fn) {
    try {
        fn();
        g_last_error.clear();
        return MM_OK;
    } catch (const mm::MmError& e) {
        g_last_error = e.what();
        return to_status(e.code());
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return MM_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return MM_ERR_INTERNAL;
    }
}

mm_status require_arg(bool ok, const char* what) {
    if (!ok) {
        g_last_error = std::string("invalid argument: ") + what;
        return MM_ERR_INVALID;
    }
    return MM_OK;
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out != nullptr) {
        std::memcpy(out, s.c_str(), s.size() + 1);
    }
    return out;
}

mm_status run_command(const mm_config* cfg, char** result_json,
                      std::string (*command)(const mm::RunConfig&)) {
    if (auto st = require_arg(cfg != nullptr && result_json != nullptr, "null config or result");
        st != MM_OK) {
        return st;
    }
    *result_json = nullptr;
    return guarded([&] {
        const std::string json = command(cfg->cfg);
        *result_json = dup_string(json);
        if (*result_json == nullptr) {
            mm::fail(mm::ErrCode::internal, "out of memory");
        }
    });
}

} // namespace

extern "C" {

const char* mm_version(void) {
    return "0.1.0";
}

const char* mm_last_error(void) {
    return g_last_error.c_str();
}

mm_config* mm_config_new(void) {
    return new (std::nothrow) mm_config();
}

void mm_config_free(mm_config* cfg) {
    delete cfg;
}

mm_status mm_config_set(mm_config* cfg, const char* key, const char* value) {
    if (auto st = require_arg(cfg != nullptr && key != nullptr && value != nullptr,
                              "null config, key or value");
        st != MM_OK) {
        return st;
    }
    return guarded([&] { mm::set_key(cfg->cfg, key, value); });
}

mm_status mm_config_load_file(mm_config* cfg, const char* path) {
    if (auto st = require_arg(cfg != nullptr && path != nullptr, "null config or path"); st != MM_OK) {
        return st;
    }
    return guarded([&] { mm::load_config_file(cfg->cfg, path); });
}

mm_status mm_cube_synth(uint32_t h, uint32_t w, uint32_t c, uint32_t classes, double noise_sigma,
                        uint64_t seed, mm_cube** out) {
    if (auto st = require_arg(out != nullptr, "null output handle"); st != MM_OK) {
        return st;
    }
    *out = nullptr;
    return guarded([&] {
        mm::SynthSpec spec;
        spec.height = h;
        spec.width = w;
        spec.bands = c;
        spec.classes = int(classes);
        spec.noise_sigma = noise_sigma;
        spec.seed = seed;
        *out = new mm_cube{mm::synth_cube(spec)};
    });
}

mm_status mm_cube_load(const char* path, mm_cube** out) {
    if (auto st = require_arg(path != nullptr && out != nullptr, "null path or output handle");
        st != MM_OK) {
        return st;
    }
    *out = nullptr;
    return guarded([&] { *out = new mm_cube{mm::load_cube(path)}; });
}

mm_status mm_cube_save(const mm_cube* cube, const char* path) {
    if (auto st = require_arg(cube != nullptr && path != nullptr, "null cube or path"); st != MM_OK) {
        return st;
    }
    return guarded([&] { mm::save_cube(cube->cube, path); });
}

mm_status mm_cube_dims(const mm_cube* cube, uint32_t* h, uint32_t* w, uint32_t* c,
                       uint32_t* classes) {
    if (auto st = require_arg(cube != nullptr, "null cube"); st != MM_OK) {
        return st;
    }
    if (h != nullptr) {
        *h = uint32_t(cube->cube.height);
    }
    if (w != nullptr) {
        *w = uint32_t(cube->cube.width);
    }
    if (c != nullptr) {
        *c = uint32_t(cube->cube.bands);
    }
    if (classes != nullptr) {
        *classes = uint32_t(cube->cube.class_count);
    }
    return MM_OK;
}

mm_status mm_cube_select_bands(const mm_cube* cube, uint32_t count, mm_cube** out) {
    if (auto st = require_arg(cube != nullptr && out != nullptr, "null cube or output handle");
        st != MM_OK) {
        return st;
    }
    *out = nullptr;
    return guarded([&] { *out = new mm_cube{mm::select_bands(cube->cube, count)}; });
}

mm_status mm_cube_normalize(const mm_cube* cube, mm_cube** out) {
    if (auto st = require_arg(cube != nullptr && out != nullptr, "null cube or output handle");
        st != MM_OK) {
        return st;
    }
    *out = nullptr;
    return guarded([&] { *out = new mm_cube{mm::normalize(cube->cube)}; });
}

void mm_cube_free(mm_cube* cube) {
    delete cube;
}

mm_status mm_model_load(const char* checkpoint_path, mm_model** out) {
    if (auto st = require_arg(checkpoint_path != nullptr && out != nullptr,
                              "null path or output handle");
        st != MM_OK) {
        return st;
    }
    *out = nullptr;
    return guarded([&] { *out = new mm_model{mm::load_checkpoint(checkpoint_path)}; });
}

mm_status mm_model_param_count(const mm_model* model, uint64_t* out) {
    if (auto st = require_arg(model != nullptr && out != nullptr, "null model or output");
        st != MM_OK) {
        return st;
    }
    *out = mm::param_count(model->ck.params);
    return MM_OK;
}

mm_status mm_model_predict(const mm_model* model, const float* patch, size_t patch_len,
                           float* logits, size_t logits_len) {
    if (auto st = require_arg(model != nullptr && patch != nullptr && logits != nullptr,
                              "null model, patch or logits");
        st != MM_OK) {
        return st;
    }
    const mm::ModelConfig& mc = model->ck.model;
    const size_t want_patch = mc.patch * mc.patch * mc.bands;
    if (auto st = require_arg(patch_len == want_patch, "patch length does not match checkpoint");
        st != MM_OK) {
        return st;
    }
    if (auto st = require_arg(logits_len == mc.classes, "logits length does not match class count");
        st != MM_OK) {
        return st;
    }
    return guarded([&] {
        mm::Tape<float> tape;
        tape.set_recording(false);
        auto out = mm::forward(tape, model->ck.params, mc, patch);
        for (size_t i = 0; i < logits_len; ++i) {
            logits[i] = out->data[i];
        }
    });
}

void mm_model_free(mm_model* model) {
    delete model;
}

mm_status mm_run_gen_data(const mm_config* cfg, char** result_json) {
    return run_command(cfg, result_json, mm::run_gen_data);
}

mm_status mm_run_train(const mm_config* cfg, char** result_json) {
    return run_command(cfg, result_json, mm::run_train);
}

mm_status mm_run_eval(const mm_config* cfg, char** result_json) {
    return run_command(cfg, result_json, mm::run_eval);
}

mm_status mm_run_predict_map(const mm_config* cfg, char** result_json) {
    return run_command(cfg, result_json, mm::run_predict_map);
}

mm_status mm_run_ablate(const mm_config* cfg, char** result_json) {
    return run_command(cfg, result_json, mm::run_ablate);
}

void mm_string_free(char* s) {
    std::free(s);
}

} // extern "C"
