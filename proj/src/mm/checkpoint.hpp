#pragma once

#include <map>
#include <string>
#include <vector>

#include "mm/model.hpp"
#include "mm/runconfig.hpp"

namespace mm {

// MMCK1 layout: one line of JSON ({"magic":"MMCK1","config":{...}}, '\n'
// terminated), then per parameter in lexicographic key order: key length
// (u16 LE), key bytes, element count (u64 LE), elements as f32 LE.
void save_checkpoint_raw(const std::string& path, const nlohmann::json& config,
                         const std::map<std::string, std::vector<float>>& params);

struct RawCheckpoint {
    nlohmann::json config;
    std::map<std::string, std::vector<float>> params;
};

RawCheckpoint load_checkpoint_raw(const std::string& path);

template <typename S>
void save_checkpoint(const std::string& path, const RunConfig& run, const ModelConfig& model,
                     const ModelParams<S>& params) {
    std::map<std::string, std::vector<float>> raw;
    for (const auto& [key, t] : params.tensors) {
        std::vector<float> v(t->numel());
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = float(t->data[i]);
        }
        raw.emplace(key, std::move(v));
    }
    save_checkpoint_raw(path, run_context_json(run, model), raw);
}

// Rebuilds typed parameters, validating keys and element counts against the
// shapes the config implies.
template <typename S>
ModelParams<S> params_from_raw(const ModelConfig& cfg,
                               const std::map<std::string, std::vector<float>>& raw) {
    const auto specs = param_specs(cfg);
    if (raw.size() != specs.size()) {
        fail(ErrCode::format, "checkpoint: expected " + std::to_string(specs.size()) +
                                  " parameters, found " + std::to_string(raw.size()));
    }
    ModelParams<S> params;
    for (const auto& [key, spec] : specs) {
        auto it = raw.find(key);
        if (it == raw.end()) {
            fail(ErrCode::format, "checkpoint: missing parameter " + key);
        }
        if (it->second.size() != shape_numel(spec.shape)) {
            fail(ErrCode::format, "checkpoint: parameter " + key + " holds " +
                                      std::to_string(it->second.size()) + " elements, expected " +
                                      std::to_string(shape_numel(spec.shape)));
        }
        auto t = make_tensor<S>(spec.shape, true);
        for (std::size_t i = 0; i < t->numel(); ++i) {
            t->data[i] = S(it->second[i]);
        }
        params.tensors.emplace(key, std::move(t));
    }
    return params;
}

struct LoadedCheckpoint {
    RunConfig run;       // resolved context (bands/classes are concrete)
    ModelConfig model;
    ModelParams<float> params;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

} // namespace mm
