#include <doctest.h>

#include <cmath>

#include "mm/cube.hpp"
#include "mm/train.hpp"
#include "oracles.hpp"

using namespace mm;

namespace {

// small, cleanly separable two-class setup for the optimizer tests
struct EasySet {
    ModelConfig model;
    std::vector<Sample> train;
    std::vector<Sample> val;
    std::vector<Sample> test;
};

EasySet make_easy_set(std::uint64_t seed) {
    auto cube = normalize(synth_cube({16, 16, 8, 2, 0.02, seed}));
    auto samples = extract_patches(cube, 4, PatchMode::per_pixel);
    auto split = stratified_split(samples, cube.class_count, {0.4, 0.2, 0.4, seed});
    EasySet set;
    set.model.variant = Variant::SSMM;
    set.model.patch = 4;
    set.model.bands = 8;
    set.model.dim = 16;
    set.model.heads = 2;
    set.model.kernel = 3;
    set.model.classes = 2;
    set.model.lambda = 1e-4;
    set.model.seed = seed;
    set.train = std::move(split.train);
    set.val = std::move(split.val);
    set.test = std::move(split.test);
    return set;
}

} // namespace

TEST_SUITE_BEGIN("train");

TEST_CASE("loss: uniform logits cost ln K plus the penalty") {
    Tape<double> tape;
    auto logits = make_tensor<double>({2, 4});
    auto w = make_tensor<double>({4, 3}, std::vector<double>(12, 0.5));
    auto l = loss(tape, logits, {1, 3}, w, 0.01);
    const double penalty = 0.01 * 12 * 0.25;
    CHECK(l->data[0] == doctest::Approx(std::log(4.0) + penalty).epsilon(1e-12));
}

TEST_CASE("loss: saturated correct logits vanish") {
    Tape<double> tape;
    auto logits = make_tensor<double>({2, 3}, {100, 0, 0, 0, 100, 0});
    auto w = make_tensor<double>({3, 2});
    auto l = loss(tape, logits, {1, 2}, w, 0.0);
    CHECK(l->data[0] <= 1e-6);
}

TEST_CASE("loss: single sample closed form") {
    Tape<double> tape;
    auto logits = make_tensor<double>({1, 2}, {1.0, 0.0});
    auto w = make_tensor<double>({2, 2});
    auto l = loss(tape, logits, {1}, w, 0.0);
    CHECK(l->data[0] == doctest::Approx(0.31326168751822286).epsilon(1e-9));
}

TEST_CASE("loss rejects out-of-range labels") {
    Tape<double> tape;
    auto logits = make_tensor<double>({1, 2});
    auto w = make_tensor<double>({2, 2});
    CHECK_THROWS_AS(loss(tape, logits, {0}, w, 0.0), MmError);
    CHECK_THROWS_AS(loss(tape, logits, {3}, w, 0.0), MmError);
}

namespace {

ModelParams<double> two_scalars(double a, double b) {
    ModelParams<double> params;
    params.tensors.emplace("a", make_tensor<double>({std::size_t(1)}, std::vector<double>{a}, true));
    params.tensors.emplace("b", make_tensor<double>({std::size_t(1)}, std::vector<double>{b}, true));
    for (auto& [k, t] : params.tensors) {
        t->ensure_grad();
    }
    return params;
}

} // namespace

TEST_CASE("adam: zero gradient leaves the parameter alone") {
    auto params = two_scalars(1.25, -0.5);
    Adam<double> adam(params);
    params.at("a")->grad[0] = 0.0;
    params.at("b")->grad[0] = 0.0;
    adam.step(params, 0.1);
    CHECK(params.at("a")->data[0] == 1.25);
    CHECK(params.at("b")->data[0] == -0.5);
}

TEST_CASE("adam: first step moves by about lr") {
    for (double g : {0.01, 1.0, -3.0, 250.0}) {
        auto params = two_scalars(0.0, 0.0);
        Adam<double> adam(params);
        params.at("a")->grad[0] = g;
        params.at("b")->grad[0] = g;
        adam.step(params, 1e-3);
        // bias-corrected m/sqrt(v) is sign(g) up to eps
        CHECK(std::abs(params.at("a")->data[0] + std::copysign(1e-3, g)) <= 1e-6);
    }
}

TEST_CASE("adam: identical gradients give identical updates") {
    auto params = two_scalars(0.7, 0.7);
    Adam<double> adam(params);
    for (int step = 0; step < 5; ++step) {
        params.at("a")->grad[0] = 0.3 * (step + 1);
        params.at("b")->grad[0] = 0.3 * (step + 1);
        adam.step(params, 0.01);
        CHECK(params.at("a")->data[0] == params.at("b")->data[0]);
    }
}

TEST_CASE("adam: lr zero is a bit-identical no-op") {
    auto params = two_scalars(0.123456, -9.75);
    Adam<double> adam(params);
    params.at("a")->grad[0] = 4.2;
    params.at("b")->grad[0] = -1.1;
    adam.step(params, 0.0);
    CHECK(params.at("a")->data[0] == 0.123456);
    CHECK(params.at("b")->data[0] == -9.75);
}

TEST_CASE("evaluate: perfect predictions give unit metrics") {
    auto m = compute_metrics({1, 2, 3, 1, 2, 3}, {1, 2, 3, 1, 2, 3}, 3);
    CHECK(m.oa == 1.0);
    CHECK(m.aa == 1.0);
    CHECK(m.kappa == 1.0);
}

TEST_CASE("metrics reproduce the fixed confusion oracle") {
    auto m = metrics_from_confusion({50, 10, 5, 35}, 2);
    CHECK(m.oa == doctest::Approx(0.85).epsilon(1e-12));
    CHECK(m.kappa == doctest::Approx(0.34 / 0.49).epsilon(1e-6));
    CHECK(m.aa == doctest::Approx((50.0 / 60.0 + 35.0 / 40.0) / 2.0).epsilon(1e-6));
}

TEST_CASE("metrics are invariant under class relabeling") {
    Rng rng(101);
    std::vector<int> truth(500), pred(500);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        truth[i] = 1 + int(rng.index(4));
        pred[i] = rng.uniform() < 0.7 ? truth[i] : 1 + int(rng.index(4));
    }
    auto base = compute_metrics(truth, pred, 4);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<int> perm = {1, 2, 3, 4};
        rng.shuffle(perm);
        std::vector<int> t2(truth.size()), p2(pred.size());
        for (std::size_t i = 0; i < truth.size(); ++i) {
            t2[i] = perm[std::size_t(truth[i] - 1)];
            p2[i] = perm[std::size_t(pred[i] - 1)];
        }
        auto m = compute_metrics(t2, p2, 4);
        CHECK(m.oa == doctest::Approx(base.oa).epsilon(1e-12));
        CHECK(m.aa == doctest::Approx(base.aa).epsilon(1e-9));
        CHECK(m.kappa == doctest::Approx(base.kappa).epsilon(1e-9));
    }
}

TEST_CASE("uniform random predictions drive kappa to zero") {
    Rng rng(202);
    const std::size_t n = 10000;
    std::vector<int> truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
        truth[i] = 1 + int(i % 4); // balanced truth
        pred[i] = 1 + int(rng.index(4));
    }
    auto m = compute_metrics(truth, pred, 4);
    CHECK(std::abs(m.kappa) <= 0.1);
}

TEST_CASE("kappa never exceeds overall accuracy") {
    Rng rng(303);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::uint64_t> confusion(9);
        for (auto& v : confusion) {
            v = rng.index(30);
        }
        confusion[0] += 1; // nonempty
        auto m = metrics_from_confusion(confusion, 3);
        CHECK(m.kappa <= m.oa + 1e-12);
    }
    // equality requires zero expected agreement (or perfect predictions)
    auto off_diag = metrics_from_confusion({0, 5, 0, 0}, 2); // p_e = 0
    CHECK(off_diag.kappa == doctest::Approx(off_diag.oa));
    auto mixed = metrics_from_confusion({5, 3, 2, 6}, 2); // p_e > 0, imperfect
    CHECK(mixed.kappa < mixed.oa);
}

TEST_CASE("degenerate expected agreement is flagged") {
    // single class predicted and true: p_e = 1
    auto m = metrics_from_confusion({12, 0, 0, 0}, 2);
    CHECK(m.kappa_degenerate);
    CHECK(m.kappa == 1.0);
    auto wrong = metrics_from_confusion({0, 12, 0, 0}, 2);
    // all of one true class predicted as the other: p_e = 0, kappa defined
    CHECK(!wrong.kappa_degenerate);
    CHECK(wrong.oa == 0.0);
}

TEST_CASE("evaluate is pure and aa excludes absent classes") {
    auto set = make_easy_set(11);
    auto params = make_params<float>(set.model);
    auto m1 = evaluate(params, set.model, set.test);
    auto m2 = evaluate(params, set.model, set.test);
    CHECK(m1.confusion == m2.confusion);
    CHECK(m1.oa == m2.oa);

    // a class absent from the truth is flagged out of aa
    auto m = compute_metrics({1, 2, 1}, {1, 2, 2}, 3);
    CHECK(m.aa_excluded == std::vector<int>{3});
}

TEST_CASE("fit reaches near-perfect training accuracy on a separable set") {
    auto set = make_easy_set(21);
    // the construction itself must be separable by a nearest-mean probe
    auto cube = normalize(synth_cube({16, 16, 8, 2, 0.02, 21}));
    CHECK(oracle::nearest_mean_oa(cube) >= 0.99);

    auto params = make_params<float>(set.model);
    TrainConfig tcfg;
    tcfg.epochs = 50;
    tcfg.batch_size = 32;
    tcfg.lr = 1e-3;
    tcfg.seed = 21;
    auto res = fit(params, set.model, set.train, set.val, tcfg);
    double best_train_acc = 0;
    for (const auto& row : res.log) {
        best_train_acc = std::max(best_train_acc, row.train_acc);
    }
    CHECK(best_train_acc >= 0.99);
    CHECK(res.best_epoch >= 1);

    // loss trend over the first five epochs, one reversal allowed
    int drops = 0;
    for (int e = 1; e < 5; ++e) {
        drops += res.log[std::size_t(e)].train_loss < res.log[std::size_t(e - 1)].train_loss;
    }
    CHECK(drops >= 3);
}

TEST_CASE("fit is deterministic and thread-count independent") {
    auto set = make_easy_set(31);
    TrainConfig tcfg;
    tcfg.epochs = 3;
    tcfg.batch_size = 48;
    tcfg.lr = 1e-3;
    tcfg.seed = 31;

    auto run = [&](int threads) {
        auto params = make_params<float>(set.model);
        TrainConfig t = tcfg;
        t.threads = threads;
        auto res = fit(params, set.model, set.train, set.val, t);
        return std::make_pair(res.log, params.at("cls.w")->data);
    };
    auto a = run(1);
    auto b = run(1);
    auto c = run(2);
    REQUIRE(a.first.size() == b.first.size());
    for (std::size_t i = 0; i < a.first.size(); ++i) {
        CHECK(a.first[i].train_loss == b.first[i].train_loss);
        CHECK(a.first[i].val_acc == b.first[i].val_acc);
        CHECK(a.first[i].train_loss == c.first[i].train_loss);
        CHECK(a.first[i].val_acc == c.first[i].val_acc);
    }
    CHECK(a.second == b.second);
    CHECK(a.second == c.second);
}

TEST_CASE("fit aborts with context on non-finite loss") {
    auto set = make_easy_set(41);
    auto params = make_params<float>(set.model);
    // poison one parameter so the first forward produces NaN
    params.at("cls.w")->data[0] = std::numeric_limits<float>::quiet_NaN();
    TrainConfig tcfg;
    tcfg.epochs = 1;
    tcfg.batch_size = 16;
    tcfg.seed = 41;
    CHECK_THROWS_WITH_AS(fit(params, set.model, set.train, set.val, tcfg),
                         doctest::Contains("epoch 1"), MmError);
}

TEST_CASE("chunked batch gradients equal the monolithic loss gradient") {
    auto set = make_easy_set(51);
    auto params = make_params<double>(set.model);
    const std::size_t b = 40; // > one chunk
    std::vector<const Sample*> batch;
    for (std::size_t i = 0; i < b; ++i) {
        batch.push_back(&set.train[i % set.train.size()]);
    }
    // monolithic: one tape over the whole batch
    params.zero_grad();
    {
        Tape<double> tape;
        std::vector<TensorPtr<double>> rows;
        std::vector<int> labels;
        for (auto* s : batch) {
            rows.push_back(forward(tape, params, set.model, s->patch.data()));
            labels.push_back(s->label);
        }
        auto logits = concat_rows(tape, rows);
        auto l = loss(tape, logits, labels, params.at("cls.w"), set.model.lambda);
        tape.backward(l);
    }
    std::map<std::string, std::vector<double>> mono;
    for (auto& [k, t] : params.tensors) {
        mono[k] = t->grad;
    }
    // chunked: same batch through per-chunk clones in fixed order
    params.zero_grad();
    const std::size_t chunk = kGradChunk;
    for (std::size_t start = 0; start < b; start += chunk) {
        const std::size_t end = std::min(b, start + chunk);
        auto local = params.clone();
        Tape<double> tape;
        std::vector<TensorPtr<double>> rows;
        std::vector<int> labels;
        for (std::size_t i = start; i < end; ++i) {
            rows.push_back(forward(tape, local, set.model, batch[i]->patch.data()));
            labels.push_back(batch[i]->label - 1);
        }
        auto logits = concat_rows(tape, rows);
        auto ce = softmax_cross_entropy(tape, logits, labels);
        auto scaled = scale(tape, ce, double(end - start) / double(b));
        tape.backward(scaled);
        for (auto& [k, t] : params.tensors) {
            for (std::size_t i = 0; i < t->numel(); ++i) {
                t->grad[i] += local.at(k)->grad[i];
            }
        }
    }
    {
        auto& w = params.at("cls.w");
        for (std::size_t i = 0; i < w->numel(); ++i) {
            w->grad[i] += 2.0 * set.model.lambda * w->data[i];
        }
    }
    for (auto& [k, t] : params.tensors) {
        for (std::size_t i = 0; i < t->numel(); ++i) {
            CHECK(t->grad[i] == doctest::Approx(mono.at(k)[i]).epsilon(1e-9));
        }
    }
}

TEST_SUITE_END();
