#include <doctest.h>

#include "mm/model.hpp"
#include "mm/morphology.hpp"
#include "oracles.hpp"

using namespace mm;

TEST_SUITE_BEGIN("morphology");

TEST_CASE("dilate and erode on constant patches with unit SE") {
    Tape<double> tape;
    auto x = make_tensor<double>({1, 4, 4}, std::vector<double>(16, 3.25));
    auto se = make_tensor<double>({1, 3, 3}, std::vector<double>(9, 1.0));
    auto d = dilate(tape, x, se);
    auto e = erode(tape, x, se);
    for (std::size_t i = 0; i < 16; ++i) {
        CHECK(d->data[i] == 4.25);
        CHECK(e->data[i] == 2.25);
    }
}

TEST_CASE("1..9 grid against the equation oracle") {
    Tape<double> tape;
    auto x = make_tensor<double>({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto se = make_tensor<double>({1, 3, 3}, std::vector<double>(9, 1.0));
    auto d = dilate(tape, x, se);
    CHECK(d->data[4] == 10.0);
    CHECK(d->data[0] == 6.0);
    CHECK(d->data[8] == 10.0);
    auto e = erode(tape, x, se);
    CHECK(e->data[4] == 0.0);
    CHECK(e->data[0] == 0.0);
    CHECK(e->data[8] == 4.0);
}

TEST_CASE("flat zero SE reduces dilation to a sliding max") {
    Rng rng(13);
    auto xv = oracle::random_vec(rng, 5 * 5);
    Tape<double> tape;
    auto d = dilate(tape, make_tensor<double>({1, 5, 5}, xv), make_tensor<double>({1, 3, 3}));
    const auto expect = oracle::dilate(xv, 1, 5, 5, std::vector<double>(9, 0.0), 3, 3);
    CHECK(d->data == expect);
}

TEST_CASE("erosion matches the min-equation oracle and the duality holds bit-exactly") {
    Rng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t c = 1 + rng.index(3), h = 2 + rng.index(6), w = 2 + rng.index(6);
        const std::size_t k = rng.index(2) == 0 ? 3 : 5;
        auto xv = oracle::random_vec(rng, c * h * w);
        auto sev = oracle::random_vec(rng, c * k * k, -1, 1);
        auto x = make_tensor<double>({c, h, w}, xv);
        auto se = make_tensor<double>({c, k, k}, sev);
        Tape<double> tape;
        auto e = erode(tape, x, se);
        const auto expect = oracle::erode(xv, c, h, w, sev, k, k);
        CHECK(e->data == expect); // exact in f64

        auto neg_x = make_tensor<double>({c, h, w}, xv);
        for (auto& v : neg_x->data) {
            v = -v;
        }
        auto dual = dilate(tape, neg_x, se);
        for (std::size_t i = 0; i < e->numel(); ++i) {
            CHECK(e->data[i] == -dual->data[i]); // bit-exact duality
        }
    }
}

TEST_CASE("pointwise order for flat nonnegative SE") {
    Rng rng(33);
    for (int trial = 0; trial < 20; ++trial) {
        auto xv = oracle::random_vec(rng, 2 * 4 * 4);
        const double level = rng.uniform(0, 1.5);
        auto x = make_tensor<double>({2, 4, 4}, xv);
        auto se = make_tensor<double>({2, 3, 3}, std::vector<double>(18, level));
        Tape<double> tape;
        auto lo = erode(tape, x, se);
        auto hi = dilate(tape, x, se);
        for (std::size_t i = 0; i < x->numel(); ++i) {
            CHECK(lo->data[i] <= xv[i]);
            CHECK(hi->data[i] >= xv[i]);
        }
    }
}

TEST_CASE("monotonicity in the input") {
    Rng rng(35);
    for (int trial = 0; trial < 20; ++trial) {
        auto xv = oracle::random_vec(rng, 3 * 3);
        auto yv = xv;
        for (auto& v : yv) {
            v += rng.uniform(0, 1);
        }
        auto sev = oracle::random_vec(rng, 9, -1, 1);
        Tape<double> tape;
        auto dx = dilate(tape, make_tensor<double>({1, 3, 3}, xv), make_tensor<double>({1, 3, 3}, sev));
        auto dy = dilate(tape, make_tensor<double>({1, 3, 3}, yv), make_tensor<double>({1, 3, 3}, sev));
        auto ex = erode(tape, make_tensor<double>({1, 3, 3}, xv), make_tensor<double>({1, 3, 3}, sev));
        auto ey = erode(tape, make_tensor<double>({1, 3, 3}, yv), make_tensor<double>({1, 3, 3}, sev));
        for (std::size_t i = 0; i < 9; ++i) {
            CHECK(dx->data[i] <= dy->data[i]);
            CHECK(ex->data[i] <= ey->data[i]);
        }
    }
}

TEST_CASE("translation equivariance away from borders") {
    Rng rng(37);
    const std::size_t h = 8, w = 8;
    auto xv = oracle::random_vec(rng, h * w);
    auto shifted = xv;
    // shift down-right by one
    for (std::size_t y = h; y-- > 1;) {
        for (std::size_t x0 = w; x0-- > 1;) {
            shifted[y * w + x0] = xv[(y - 1) * w + (x0 - 1)];
        }
    }
    auto sev = oracle::random_vec(rng, 9, -1, 1);
    Tape<double> tape;
    auto base = dilate(tape, make_tensor<double>({1, h, w}, xv), make_tensor<double>({1, 3, 3}, sev));
    auto moved =
        dilate(tape, make_tensor<double>({1, h, w}, shifted), make_tensor<double>({1, 3, 3}, sev));
    for (std::size_t y = 2; y < h - 2; ++y) {
        for (std::size_t x0 = 2; x0 < w - 2; ++x0) {
            CHECK(moved->data[y * w + x0] == base->data[(y - 1) * w + (x0 - 1)]);
        }
    }
}

TEST_CASE("dilate gradient matches finite differences off ties") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed + 600);
        auto x = make_tensor<double>({1, 4, 4}, oracle::random_vec(rng, 16), true);
        auto se = make_tensor<double>({1, 3, 3}, oracle::random_vec(rng, 9, -1, 1), true);
        auto res = oracle::grad_check({x, se}, [&](Tape<double>& tape) {
            return oracle::weighted_sum(tape, dilate(tape, x, se), seed);
        });
        CHECK(res.max_rel_err <= 1e-4);
    }
}

namespace {

ModelConfig small_cfg(Variant v) {
    ModelConfig cfg;
    cfg.variant = v;
    cfg.patch = 3;
    cfg.bands = 4;
    cfg.dim = 6;
    cfg.heads = 2;
    cfg.kernel = 3;
    cfg.classes = 2;
    cfg.seed = 19;
    return cfg;
}

std::vector<double> chw_from_patch(const std::vector<float>& patch, std::size_t p, std::size_t c) {
    std::vector<double> out(c * p * p);
    for (std::size_t pos = 0; pos < p * p; ++pos) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            out[ch * p * p + pos] = patch[pos * c + ch];
        }
    }
    return out;
}

} // namespace

TEST_CASE("spatial tokens: shape contract and oracle-composed pipeline") {
    auto cfg = small_cfg(Variant::SSMM);
    auto params = make_params<double>(cfg);
    Rng rng(71);
    std::vector<float> patch(cfg.patch * cfg.patch * cfg.bands);
    for (auto& v : patch) {
        v = float(rng.uniform(-1, 1));
    }
    Tape<double> tape;
    auto x = patch_to_chw<double>(patch.data(), cfg.patch, cfg.bands);
    auto tokens = spatial_tokens(tape, x, token_branch(params, "tok.spatial"));
    REQUIRE(tokens->shape == Shape{9, 6});

    // recompute through the test-side oracles: erode/dilate, concat,
    // depthwise, pointwise, then the channel-to-row transpose
    const std::size_t p = cfg.patch, c = cfg.bands, d = cfg.dim, k = cfg.kernel;
    const auto xv = chw_from_patch(patch, p, c);
    const auto& se = params.at("tok.spatial.se")->data;
    auto er = oracle::erode(xv, c, p, p, se, k, k);
    auto di = oracle::dilate(xv, c, p, p, se, k, k);
    std::vector<double> cat;
    cat.insert(cat.end(), er.begin(), er.end());
    cat.insert(cat.end(), di.begin(), di.end());
    auto dw = oracle::depthwise_conv(cat, 2 * c, p, p, params.at("tok.spatial.dw.w")->data, k, k,
                                     params.at("tok.spatial.dw.b")->data);
    auto pw = oracle::pointwise_conv(dw, 2 * c, p * p, params.at("tok.spatial.pw.w")->data, d,
                                     params.at("tok.spatial.pw.b")->data);
    for (std::size_t pos = 0; pos < p * p; ++pos) {
        for (std::size_t od = 0; od < d; ++od) {
            CHECK(tokens->data[pos * d + od] == doctest::Approx(pw[od * p * p + pos]).epsilon(1e-12));
        }
    }
}

TEST_CASE("spatial tokens are equivariant to channel permutation") {
    auto cfg = small_cfg(Variant::SSMM);
    auto params = make_params<double>(cfg);
    Rng rng(73);
    std::vector<float> patch(cfg.patch * cfg.patch * cfg.bands);
    for (auto& v : patch) {
        v = float(rng.uniform(-1, 1));
    }
    Tape<double> tape;
    auto base = spatial_tokens(tape, patch_to_chw<double>(patch.data(), cfg.patch, cfg.bands),
                               token_branch(params, "tok.spatial"));

    // permute input channels and the per-channel parameters consistently;
    // the pointwise weights swap columns (per mixed channel, erode+dilate halves)
    const std::size_t c = cfg.bands, p = cfg.patch, k = cfg.kernel, d = cfg.dim;
    std::vector<std::size_t> perm = {2, 0, 3, 1};
    std::vector<float> patch_p(patch.size());
    for (std::size_t pos = 0; pos < p * p; ++pos) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            patch_p[pos * c + ch] = patch[pos * c + perm[ch]];
        }
    }
    auto permuted = params.clone();
    auto permute_channels = [&](const std::string& key, std::size_t block, bool two_half) {
        auto& src = params.at(key)->data;
        auto& dst = permuted.at(key)->data;
        const std::size_t groups = two_half ? 2 : 1;
        const std::size_t stride = c * block;
        for (std::size_t g = 0; g < groups; ++g) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                for (std::size_t i = 0; i < block; ++i) {
                    dst[g * stride + ch * block + i] = src[g * stride + perm[ch] * block + i];
                }
            }
        }
    };
    permute_channels("tok.spatial.se", k * k, false);
    permute_channels("tok.spatial.dw.w", k * k, true);
    permute_channels("tok.spatial.dw.b", 1, true);
    // pw.w is d x 2c, column-permuted within each half
    {
        auto& src = params.at("tok.spatial.pw.w")->data;
        auto& dst = permuted.at("tok.spatial.pw.w")->data;
        for (std::size_t od = 0; od < d; ++od) {
            for (std::size_t g = 0; g < 2; ++g) {
                for (std::size_t ch = 0; ch < c; ++ch) {
                    dst[od * 2 * c + g * c + ch] = src[od * 2 * c + g * c + perm[ch]];
                }
            }
        }
    }
    auto moved = spatial_tokens(tape, patch_to_chw<double>(patch_p.data(), cfg.patch, cfg.bands),
                                token_branch(permuted, "tok.spatial"));
    for (std::size_t i = 0; i < base->numel(); ++i) {
        CHECK(moved->data[i] == doctest::Approx(base->data[i]).epsilon(1e-12));
    }
}

TEST_CASE("spectral tokens: shape and band-axis morphology against the 1-D oracle") {
    auto cfg = small_cfg(Variant::SSMM);
    cfg.patch = 2; // keep the band-axis check small
    cfg.bands = 5;
    auto params = make_params<double>(cfg);
    Rng rng(79);
    std::vector<float> patch(cfg.patch * cfg.patch * cfg.bands);
    for (auto& v : patch) {
        v = float(rng.uniform(-1, 1));
    }
    Tape<double> tape;
    auto x = patch_to_chw<double>(patch.data(), cfg.patch, cfg.bands);
    auto tokens = spectral_tokens(tape, x, token_branch(params, "tok.spectral"));
    REQUIRE(tokens->shape == Shape{5, 6});

    // oracle: arrange as P^2 channels x C' x 1, then the same pipeline with
    // k x 1 windows along the band axis
    const std::size_t p2 = cfg.patch * cfg.patch, c = cfg.bands, d = cfg.dim, k = cfg.kernel;
    std::vector<double> banded(p2 * c);
    for (std::size_t pos = 0; pos < p2; ++pos) {
        for (std::size_t b = 0; b < c; ++b) {
            banded[pos * c + b] = patch[pos * c + b];
        }
    }
    const auto& se = params.at("tok.spectral.se")->data;
    auto er = oracle::erode(banded, p2, c, 1, se, k, 1);
    auto di = oracle::dilate(banded, p2, c, 1, se, k, 1);
    std::vector<double> cat;
    cat.insert(cat.end(), er.begin(), er.end());
    cat.insert(cat.end(), di.begin(), di.end());
    auto dw = oracle::depthwise_conv(cat, 2 * p2, c, 1, params.at("tok.spectral.dw.w")->data, k, 1,
                                     params.at("tok.spectral.dw.b")->data);
    auto pw = oracle::pointwise_conv(dw, 2 * p2, c, params.at("tok.spectral.pw.w")->data, d,
                                     params.at("tok.spectral.pw.b")->data);
    for (std::size_t b = 0; b < c; ++b) {
        for (std::size_t od = 0; od < d; ++od) {
            CHECK(tokens->data[b * d + od] == doctest::Approx(pw[od * c + b]).epsilon(1e-12));
        }
    }
}

TEST_CASE("spectral tokens of a band-constant patch are identical per band") {
    auto cfg = small_cfg(Variant::SSMM);
    auto params = make_params<double>(cfg);
    std::vector<float> patch(cfg.patch * cfg.patch * cfg.bands);
    Rng rng(83);
    for (std::size_t pos = 0; pos < std::size_t(cfg.patch * cfg.patch); ++pos) {
        const float v = float(rng.uniform(-1, 1));
        for (std::size_t b = 0; b < cfg.bands; ++b) {
            patch[pos * cfg.bands + b] = v; // constant along bands
        }
    }
    Tape<double> tape;
    auto tokens = spectral_tokens(tape, patch_to_chw<double>(patch.data(), cfg.patch, cfg.bands),
                                  token_branch(params, "tok.spectral"));
    // interior bands see full windows; the SE is constant per channel only at
    // init, so compare bands away from the boundary
    const std::size_t d = cfg.dim;
    for (std::size_t b = 2; b + 2 < cfg.bands; ++b) {
        for (std::size_t od = 0; od < d; ++od) {
            CHECK(tokens->data[b * d + od] == doctest::Approx(tokens->data[1 * d + od]));
        }
    }
}

TEST_CASE("plain token path matches shapes and drops the SE") {
    for (Variant v : {Variant::NM, Variant::SMM, Variant::SSMM}) {
        auto cfg = small_cfg(v);
        auto params = make_params<double>(cfg);
        Rng rng(89);
        std::vector<float> patch(cfg.patch * cfg.patch * cfg.bands);
        for (auto& x : patch) {
            x = float(rng.uniform(-1, 1));
        }
        Tape<double> tape;
        auto x = patch_to_chw<double>(patch.data(), cfg.patch, cfg.bands);
        auto spa = spatial_tokens(tape, x, token_branch(params, "tok.spatial"));
        auto spe = spectral_tokens(tape, x, token_branch(params, "tok.spectral"));
        CHECK(spa->shape == Shape{9, 6});
        CHECK(spe->shape == Shape{4, 6});
        CHECK(params.has("tok.spatial.se") == (v != Variant::NM));
        CHECK(params.has("tok.spectral.se") == (v == Variant::SSMM));
    }
}

TEST_CASE("NM spatial path with delta depthwise and identity pointwise is a projection") {
    ModelConfig cfg = small_cfg(Variant::NM);
    cfg.bands = 4;
    cfg.dim = 4; // identity pointwise needs D == C'
    auto params = make_params<double>(cfg);
    // delta depthwise kernel, zero biases, identity pointwise
    auto& dw = params.at("tok.spatial.dw.w");
    std::fill(dw->data.begin(), dw->data.end(), 0.0);
    for (std::size_t ch = 0; ch < cfg.bands; ++ch) {
        dw->data[ch * 9 + 4] = 1.0;
    }
    std::fill(params.at("tok.spatial.dw.b")->data.begin(),
              params.at("tok.spatial.dw.b")->data.end(), 0.0);
    auto& pw = params.at("tok.spatial.pw.w");
    std::fill(pw->data.begin(), pw->data.end(), 0.0);
    for (std::size_t i = 0; i < cfg.dim; ++i) {
        pw->data[i * cfg.bands + i] = 1.0;
    }
    std::fill(params.at("tok.spatial.pw.b")->data.begin(),
              params.at("tok.spatial.pw.b")->data.end(), 0.0);

    Rng rng(91);
    std::vector<float> patch(cfg.patch * cfg.patch * cfg.bands);
    for (auto& v : patch) {
        v = float(rng.uniform(-1, 1));
    }
    Tape<double> tape;
    auto tokens = spatial_tokens(tape, patch_to_chw<double>(patch.data(), cfg.patch, cfg.bands),
                                 token_branch(params, "tok.spatial"));
    // tokens are the raw per-pixel spectra
    for (std::size_t pos = 0; pos < std::size_t(cfg.patch * cfg.patch); ++pos) {
        for (std::size_t b = 0; b < cfg.bands; ++b) {
            CHECK(tokens->data[pos * cfg.dim + b] ==
                  doctest::Approx(double(patch[pos * cfg.bands + b])));
        }
    }
}

TEST_CASE("token generators: NM has fewer trainables than SSMM") {
    auto nm = small_cfg(Variant::NM);
    auto ssmm = small_cfg(Variant::SSMM);
    auto count_tok = [](const ModelConfig& cfg) {
        std::size_t n = 0;
        for (const auto& [key, spec] : param_specs(cfg)) {
            if (key.rfind("tok.", 0) == 0) {
                n += shape_numel(spec.shape);
            }
        }
        return n;
    };
    CHECK(count_tok(nm) < count_tok(ssmm));
}

TEST_SUITE_END();
