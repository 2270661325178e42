#include <doctest.h>

#include "mm/model.hpp"
#include "mm/train.hpp"
#include "oracles.hpp"

using namespace mm;

// Finite-difference validation of every differentiable primitive, 64-bit,
// over seeded random small shapes. Non-smooth coordinates (arg-max ties,
// ReLU boundaries) are detected and skipped by the harness.

namespace {

constexpr double kTol = 1e-4;

TensorPtr<double> leaf(Rng& rng, Shape shape, double lo = -2, double hi = 2) {
    auto t = make_tensor<double>(std::move(shape), true);
    for (auto& v : t->data) {
        v = rng.uniform(lo, hi);
    }
    return t;
}

} // namespace

TEST_SUITE_BEGIN("gradcheck");

TEST_CASE("elementwise and structural ops") {
    std::size_t total_checked = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        const std::size_t m = 1 + rng.index(3), n = 1 + rng.index(4);
        auto a = leaf(rng, {m, n});
        auto b = leaf(rng, {m, n});
        auto v = leaf(rng, {1, n});

        auto check = [&](const char* what,
                         std::function<TensorPtr<double>(Tape<double>&)> build,
                         std::vector<TensorPtr<double>> leaves) {
            auto res = oracle::grad_check(leaves, [&](Tape<double>& tape) {
                return oracle::weighted_sum(tape, build(tape), seed + 1);
            });
            INFO(std::string(what) << " seed " << seed);
            CHECK(res.max_rel_err <= kTol);
            total_checked += res.checked;
        };

        check("add", [&](Tape<double>& t) { return add(t, a, b); }, {a, b});
        check("mul", [&](Tape<double>& t) { return mul(t, a, b); }, {a, b});
        check("neg", [&](Tape<double>& t) { return neg(t, a); }, {a});
        check("scale", [&](Tape<double>& t) { return scale(t, a, 1.7); }, {a});
        check("relu", [&](Tape<double>& t) { return relu(t, a); }, {a});
        check("sigmoid", [&](Tape<double>& t) { return sigmoid(t, a); }, {a});
        check("softmax_rows", [&](Tape<double>& t) { return softmax_rows(t, a); }, {a});
        check("reshape", [&](Tape<double>& t) { return reshape(t, a, {n, m}); }, {a});
        check("add_rowvec", [&](Tape<double>& t) { return add_rowvec(t, a, v); }, {a, v});
        check("mul_rowvec", [&](Tape<double>& t) { return mul_rowvec(t, a, v); }, {a, v});
        check("slice_row", [&](Tape<double>& t) { return slice_row(t, a, m - 1); }, {a});
        check("standardize_row",
              [&](Tape<double>& t) { return standardize_row(t, v, 1e-5); }, {v});
        check("sum_squares", [&](Tape<double>& t) { return sum_squares(t, a); }, {a});
        check("mean_rows",
              [&](Tape<double>& t) { return mean_rows(t, a, {0, m - 1}); }, {a});
    }
    CHECK(total_checked > 5000);
}

TEST_CASE("matrix products") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed + 1000);
        const std::size_t m = 1 + rng.index(3), k = 1 + rng.index(3), n = 1 + rng.index(3);
        auto a = leaf(rng, {m, k});
        auto b = leaf(rng, {k, n});
        auto bt = leaf(rng, {n, k});

        auto res = oracle::grad_check({a, b}, [&](Tape<double>& tape) {
            return oracle::weighted_sum(tape, matmul(tape, a, b), seed);
        });
        CHECK(res.max_rel_err <= kTol);

        auto res_nt = oracle::grad_check({a, bt}, [&](Tape<double>& tape) {
            return oracle::weighted_sum(tape, matmul_nt(tape, a, bt), seed);
        });
        CHECK(res_nt.max_rel_err <= kTol);
    }
}

TEST_CASE("concat ops") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        Rng rng(seed + 2000);
        const std::size_t rows = 1 + rng.index(3);
        auto a = leaf(rng, {rows, 1 + rng.index(3)});
        auto b = leaf(rng, {rows, 1 + rng.index(3)});
        auto res = oracle::grad_check({a, b}, [&](Tape<double>& tape) {
            return oracle::weighted_sum(tape, concat_cols(tape, {a, b}), seed);
        });
        CHECK(res.max_rel_err <= kTol);

        auto r1 = leaf(rng, {1, 4});
        auto r2 = leaf(rng, {1, 4});
        auto res_rows = oracle::grad_check({r1, r2}, [&](Tape<double>& tape) {
            return oracle::weighted_sum(tape, concat_rows(tape, {r1, r2}), seed);
        });
        CHECK(res_rows.max_rel_err <= kTol);

        auto c1 = leaf(rng, {1 + rng.index(2), 2, 3});
        auto c2 = leaf(rng, {1 + rng.index(2), 2, 3});
        auto res_ch = oracle::grad_check({c1, c2}, [&](Tape<double>& tape) {
            return oracle::weighted_sum(tape, concat_channels(tape, c1, c2), seed);
        });
        CHECK(res_ch.max_rel_err <= kTol);

        auto res_rows_chw = oracle::grad_check({c1}, [&](Tape<double>& tape) {
            return oracle::weighted_sum(tape, rows_from_chw(tape, c1), seed);
        });
        CHECK(res_rows_chw.max_rel_err <= kTol);
    }
}

TEST_CASE("convolutions") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed + 3000);
        const std::size_t c = 1 + rng.index(2), h = 2 + rng.index(3), w = 2 + rng.index(3);
        const std::size_t k = 3;
        auto x = leaf(rng, {c, h, w});
        auto kw = leaf(rng, {c, k, k}, -1, 1);
        auto kb = leaf(rng, {c}, -0.5, 0.5);
        auto res = oracle::grad_check({x, kw, kb}, [&](Tape<double>& tape) {
            return oracle::weighted_sum(tape, depthwise_conv2d(tape, x, kw, kb), seed);
        });
        CHECK(res.max_rel_err <= kTol);

        const std::size_t d = 1 + rng.index(3);
        auto pw = leaf(rng, {d, c});
        auto pb = leaf(rng, {d}, -0.5, 0.5);
        auto res_pw = oracle::grad_check({x, pw, pb}, [&](Tape<double>& tape) {
            return oracle::weighted_sum(tape, pointwise_conv(tape, x, pw, pb), seed);
        });
        CHECK(res_pw.max_rel_err <= kTol);
    }
}

TEST_CASE("windowed max at unique arg-max points") {
    std::size_t total_checked = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed + 4000);
        const std::size_t c = 1 + rng.index(2), h = 2 + rng.index(3), w = 2 + rng.index(3);
        auto x = leaf(rng, {c, h, w}, -3, 3);
        auto se = leaf(rng, {c, 3, 3}, -1, 1);
        auto res = oracle::grad_check({x, se}, [&](Tape<double>& tape) {
            return oracle::weighted_sum(tape, windowed_max(tape, x, se), seed);
        });
        CHECK(res.max_rel_err <= kTol);
        total_checked += res.checked;
    }
    CHECK(total_checked > 1000); // the skip rule must not eat the suite
}

TEST_CASE("softmax cross entropy and composite loss") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed + 5000);
        const std::size_t b = 1 + rng.index(3), k = 2 + rng.index(3);
        auto logits = leaf(rng, {b, k});
        std::vector<int> labels(b);
        for (auto& l : labels) {
            l = int(rng.index(k));
        }
        auto res = oracle::grad_check({logits}, [&](Tape<double>& tape) {
            return softmax_cross_entropy(tape, logits, labels);
        });
        CHECK(res.max_rel_err <= kTol);

        auto w = leaf(rng, {k, 4});
        std::vector<int> one_based(labels);
        for (auto& l : one_based) {
            ++l;
        }
        auto res_loss = oracle::grad_check({logits, w}, [&](Tape<double>& tape) {
            return loss(tape, logits, one_based, w, 0.01);
        });
        CHECK(res_loss.max_rel_err <= kTol);
    }
}

TEST_CASE("full forward gradient, all variants, small config") {
    ModelConfig cfg;
    cfg.patch = 2;
    cfg.bands = 3;
    cfg.dim = 4;
    cfg.heads = 2;
    cfg.kernel = 3;
    cfg.classes = 3;
    cfg.lambda = 1e-3;
    for (Variant variant : {Variant::NM, Variant::SMM, Variant::SSMM}) {
        cfg.variant = variant;
        cfg.seed = 11 + std::uint64_t(variant);
        auto params = make_params<double>(cfg);
        Rng rng(cfg.seed);
        std::vector<float> patch(cfg.patch * cfg.patch * cfg.bands);
        for (auto& v : patch) {
            v = float(rng.uniform(-1, 1));
        }
        std::vector<TensorPtr<double>> leaves;
        for (auto& [key, t] : params.tensors) {
            leaves.push_back(t);
        }
        auto res = oracle::grad_check(leaves, [&](Tape<double>& tape) {
            auto logits = forward(tape, params, cfg, patch.data());
            return loss(tape, logits, {2}, params.at("cls.w"), cfg.lambda);
        });
        INFO("variant " << variant_name(variant));
        CHECK(res.checked > 100);
        CHECK(res.max_rel_err <= kTol);
    }
}

TEST_SUITE_END();
