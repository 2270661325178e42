#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mm/morphology.hpp"
#include "mm/rng.hpp"
#include "mm/tensor.hpp"

namespace mm {

enum class Variant { NM, SMM, SSMM };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::NM: return "NM";
        case Variant::SMM: return "SMM";
        default: return "SSMM";
    }
}

inline Variant variant_from_name(const std::string& s) {
    if (s == "NM") {
        return Variant::NM;
    }
    if (s == "SMM") {
        return Variant::SMM;
    }
    if (s == "SSMM") {
        return Variant::SSMM;
    }
    fail(ErrCode::config, "unknown variant '" + s + "' (expected NM, SMM or SSMM)");
}

struct ModelConfig {
    Variant variant = Variant::SSMM;
    std::size_t patch = 4;    // P
    std::size_t bands = 15;   // C'
    std::size_t dim = 64;     // token dim D
    std::size_t heads = 4;
    std::size_t kernel = 5;   // morphology / depthwise kernel
    std::size_t ssm_dim = 0;  // 0 -> dim
    std::size_t classes = 2;  // K
    double lambda = 1e-4;
    std::uint64_t seed = 0;

    std::size_t state_dim() const { return ssm_dim == 0 ? dim : ssm_dim; }

    void validate() const {
        if (patch < 2) {
            fail(ErrCode::config, "model: patch size must be >= 2");
        }
        if (bands < 1 || dim < 1 || heads < 1) {
            fail(ErrCode::config, "model: bands, dim and heads must be positive");
        }
        if (dim % heads != 0) {
            fail(ErrCode::config, "model: dim " + std::to_string(dim) + " not divisible by heads " +
                                      std::to_string(heads));
        }
        if (kernel % 2 == 0) {
            fail(ErrCode::config, "model: kernel must be odd, got " + std::to_string(kernel));
        }
        if (classes < 2) {
            fail(ErrCode::config, "model: at least 2 classes required");
        }
        if (lambda < 0) {
            fail(ErrCode::config, "model: lambda must be nonnegative");
        }
    }
};

// How one parameter tensor is created.
struct ParamSpec {
    Shape shape;
    enum class Init { ones, zeros, uniform_fan } init = Init::uniform_fan;
    std::size_t fan = 1; // uniform bound sqrt(6/fan)
};

// Single source of truth for parameter names and shapes; checkpoints and the
// initializer both derive from it. Map order (lexicographic) fixes both the
// init draw order and the checkpoint record order.
inline std::map<std::string, ParamSpec> param_specs(const ModelConfig& cfg) {
    cfg.validate();
    using Init = ParamSpec::Init;
    std::map<std::string, ParamSpec> specs;
    const std::size_t p = cfg.patch, c = cfg.bands, d = cfg.dim, k = cfg.kernel;
    const std::size_t p2 = p * p, dk = d / cfg.heads, sd = cfg.state_dim();

    auto branch = [&](const std::string& prefix, std::size_t ch, bool morph, std::size_t kh,
                      std::size_t kw) {
        const std::size_t mixed = morph ? 2 * ch : ch;
        if (morph) {
            specs[prefix + ".se"] = {{ch, kh, kw}, Init::ones, 1};
        }
        specs[prefix + ".dw.w"] = {{mixed, kh, kw}, Init::uniform_fan, kh * kw};
        specs[prefix + ".dw.b"] = {{mixed}, Init::zeros, 1};
        specs[prefix + ".pw.w"] = {{d, mixed}, Init::uniform_fan, mixed};
        specs[prefix + ".pw.b"] = {{d}, Init::zeros, 1};
    };
    const bool morph_spatial = cfg.variant != Variant::NM;
    const bool morph_spectral = cfg.variant == Variant::SSMM;
    branch("tok.spatial", c, morph_spatial, k, k);
    branch("tok.spectral", p2, morph_spectral, k, 1);

    specs["gate.spatial.w"] = {{d, d}, Init::uniform_fan, d};
    specs["gate.spatial.b"] = {{std::size_t(1), d}, Init::zeros, 1};
    specs["gate.spectral.w"] = {{d, d}, Init::uniform_fan, d};
    specs["gate.spectral.b"] = {{std::size_t(1), d}, Init::zeros, 1};

    for (std::size_t hidx = 0; hidx < cfg.heads; ++hidx) {
        const std::string hp = "attn.h" + std::to_string(hidx);
        specs[hp + ".wq"] = {{d, dk}, Init::uniform_fan, d};
        specs[hp + ".wk"] = {{d, dk}, Init::uniform_fan, d};
        specs[hp + ".wv"] = {{d, dk}, Init::uniform_fan, d};
    }
    specs["attn.out.w"] = {{d, d}, Init::uniform_fan, d};

    specs["ssm.w_trans"] = {{sd, sd}, Init::uniform_fan, sd};
    specs["ssm.w_update"] = {{sd, d}, Init::uniform_fan, d};

    specs["cls.w"] = {{cfg.classes, sd}, Init::uniform_fan, sd};
    specs["cls.b"] = {{std::size_t(1), cfg.classes}, Init::zeros, 1};
    return specs;
}

template <typename S>
struct ModelParams {
    std::map<std::string, TensorPtr<S>> tensors;

    TensorPtr<S>& at(const std::string& key) {
        auto it = tensors.find(key);
        if (it == tensors.end()) {
            fail(ErrCode::internal, "model: missing parameter " + key);
        }
        return it->second;
    }
    const TensorPtr<S>& at(const std::string& key) const {
        auto it = tensors.find(key);
        if (it == tensors.end()) {
            fail(ErrCode::internal, "model: missing parameter " + key);
        }
        return it->second;
    }
    bool has(const std::string& key) const { return tensors.count(key) != 0; }

    void zero_grad() {
        for (auto& [k, t] : tensors) {
            t->ensure_grad();
            t->zero_grad();
        }
    }

    ModelParams clone() const {
        ModelParams out;
        for (const auto& [k, t] : tensors) {
            auto copy = make_tensor<S>(t->shape, t->data, true);
            out.tensors.emplace(k, std::move(copy));
        }
        return out;
    }
};

inline std::size_t param_count(const std::map<std::string, ParamSpec>& specs) {
    std::size_t n = 0;
    for (const auto& [k, s] : specs) {
        n += shape_numel(s.shape);
    }
    return n;
}

template <typename S>
std::size_t param_count(const ModelParams<S>& params) {
    std::size_t n = 0;
    for (const auto& [k, t] : params.tensors) {
        n += t->numel();
    }
    return n;
}

// Seeded initialization; the draw order is the lexicographic key order.
template <typename S>
ModelParams<S> make_params(const ModelConfig& cfg) {
    const auto specs = param_specs(cfg);
    Rng rng(cfg.seed);
    ModelParams<S> params;
    for (const auto& [key, spec] : specs) {
        auto t = make_tensor<S>(spec.shape, true);
        switch (spec.init) {
            case ParamSpec::Init::ones:
                std::fill(t->data.begin(), t->data.end(), S(1));
                break;
            case ParamSpec::Init::zeros:
                break;
            case ParamSpec::Init::uniform_fan: {
                const double bound = std::sqrt(6.0 / double(spec.fan));
                for (auto& v : t->data) {
                    v = S(rng.uniform(-bound, bound));
                }
                break;
            }
        }
        params.tensors.emplace(key, std::move(t));
    }
    return params;
}

// Flat row indices of the central pixel block of a P x P token grid: the
// single center for odd P, the central 2x2 block for even P.
inline std::vector<std::size_t> center_token_indices(std::size_t patch) {
    std::vector<std::size_t> idx;
    if (patch % 2 == 1) {
        const std::size_t c = (patch - 1) / 2;
        idx.push_back(c * patch + c);
    } else {
        const std::size_t c = patch / 2 - 1;
        for (std::size_t dr = 0; dr < 2; ++dr) {
            for (std::size_t dc = 0; dc < 2; ++dc) {
                idx.push_back((c + dr) * patch + (c + dc));
            }
        }
    }
    return idx;
}

// Mean token of the central pixel block.
template <typename S>
TensorPtr<S> center_vector(Tape<S>& tape, const TensorPtr<S>& spatial, std::size_t patch) {
    return mean_rows(tape, spatial, center_token_indices(patch));
}

// tokens [L x D] scaled by the gate sigmoid(W c + b) in (0,1)^D.
template <typename S>
TensorPtr<S> enhance(Tape<S>& tape, const TensorPtr<S>& tokens, const TensorPtr<S>& c,
                     const TensorPtr<S>& w, const TensorPtr<S>& b) {
    auto gate = sigmoid(tape, add(tape, matmul_nt(tape, c, w), b));
    return mul_rowvec(tape, tokens, gate);
}

// Multi-head cross attention: queries from q_tokens, keys/values from
// kv_tokens, concatenated heads projected back to D.
template <typename S>
TensorPtr<S> mhsa(Tape<S>& tape, const TensorPtr<S>& q_tokens, const TensorPtr<S>& kv_tokens,
                  const ModelParams<S>& params, std::size_t heads) {
    const std::size_t d = q_tokens->dim(1);
    const std::size_t dk = d / heads;
    const S inv_sqrt_dk = S(1) / std::sqrt(S(dk));
    std::vector<TensorPtr<S>> outs;
    outs.reserve(heads);
    for (std::size_t hidx = 0; hidx < heads; ++hidx) {
        const std::string hp = "attn.h" + std::to_string(hidx);
        auto q = matmul(tape, q_tokens, params.at(hp + ".wq"));
        auto k = matmul(tape, kv_tokens, params.at(hp + ".wk"));
        auto v = matmul(tape, kv_tokens, params.at(hp + ".wv"));
        auto attn = softmax_rows(tape, scale(tape, matmul_nt(tape, q, k), inv_sqrt_dk));
        outs.push_back(matmul(tape, attn, v));
    }
    return matmul(tape, concat_cols(tape, outs), params.at("attn.out.w"));
}

// Sequential recurrence h_t = ReLU(h_{t-1} W_trans^T + E_t W_update^T) over the
// rows of E, h_0 = 0; returns the final state as [1 x state_dim].
template <typename S>
TensorPtr<S> ssm_scan(Tape<S>& tape, const TensorPtr<S>& tokens, const TensorPtr<S>& w_trans,
                      const TensorPtr<S>& w_update) {
    if (tokens->dim(0) == 0) {
        fail(ErrCode::shape, "ssm_scan: empty token sequence");
    }
    auto h = make_tensor<S>({std::size_t(1), w_trans->dim(0)}, false);
    TensorPtr<S> state = h;
    for (std::size_t t = 0; t < tokens->dim(0); ++t) {
        auto e = slice_row(tape, tokens, t);
        auto pre = add(tape, matmul_nt(tape, state, w_trans), matmul_nt(tape, e, w_update));
        state = relu(tape, pre);
    }
    return state;
}

// Raw class logits [1 x K]; the l2 penalty on the classifier weights is part
// of the training loss, not of the logits.
template <typename S>
TensorPtr<S> classify(Tape<S>& tape, const TensorPtr<S>& h, const TensorPtr<S>& w,
                      const TensorPtr<S>& b) {
    return add(tape, matmul_nt(tape, h, w), b);
}

template <typename S>
TokenBranch<S> token_branch(const ModelParams<S>& params, const std::string& prefix) {
    TokenBranch<S> br;
    if (params.has(prefix + ".se")) {
        br.se = params.at(prefix + ".se");
    }
    br.dw_w = params.at(prefix + ".dw.w");
    br.dw_b = params.at(prefix + ".dw.b");
    br.pw_w = params.at(prefix + ".pw.w");
    br.pw_b = params.at(prefix + ".pw.b");
    return br;
}

// patch data is P x P x C' pixel-major band-minor (Sample layout).
template <typename S>
TensorPtr<S> patch_to_chw(const float* patch, std::size_t p, std::size_t c) {
    auto x = make_tensor<S>({c, p, p}, false);
    for (std::size_t pos = 0; pos < p * p; ++pos) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            x->data[ch * p * p + pos] = S(patch[pos * c + ch]);
        }
    }
    return x;
}

// Full forward pass for one patch: tokens -> center-gated enhancement ->
// cross attention -> SSM scan -> standardized state -> logits [1 x K].
template <typename S>
TensorPtr<S> forward(Tape<S>& tape, const ModelParams<S>& params, const ModelConfig& cfg,
                     const float* patch_data) {
    auto patch = patch_to_chw<S>(patch_data, cfg.patch, cfg.bands);
    auto t_spatial = spatial_tokens(tape, patch, token_branch(params, "tok.spatial"));
    auto t_spectral = spectral_tokens(tape, patch, token_branch(params, "tok.spectral"));

    auto c = center_vector(tape, t_spatial, cfg.patch);
    auto e_spatial =
        enhance(tape, t_spatial, c, params.at("gate.spatial.w"), params.at("gate.spatial.b"));
    auto e_spectral =
        enhance(tape, t_spectral, c, params.at("gate.spectral.w"), params.at("gate.spectral.b"));

    auto fused = mhsa(tape, e_spectral, e_spatial, params, cfg.heads);
    auto h = ssm_scan(tape, fused, params.at("ssm.w_trans"), params.at("ssm.w_update"));
    auto h_norm = standardize_row(tape, h, S(1e-5));
    return classify(tape, h_norm, params.at("cls.w"), params.at("cls.b"));
}

} // namespace mm
