#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "mm/metrics.hpp"
#include "mm/model.hpp"
#include "mm/parallel.hpp"
#include "mm/patches.hpp"

namespace mm {

struct TrainConfig {
    int epochs = 50;
    std::size_t batch_size = 256;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    bool shuffle = true;
    int threads = 1;

    void validate() const {
        if (epochs < 1) {
            fail(ErrCode::config, "train: epochs must be >= 1");
        }
        if (batch_size < 1) {
            fail(ErrCode::config, "train: batch size must be >= 1");
        }
        if (!(lr > 0)) {
            fail(ErrCode::config, "train: learning rate must be positive");
        }
    }
};

// Samples within a batch are processed in fixed chunks so that gradient
// reduction order is independent of the worker count.
inline constexpr std::size_t kGradChunk = 32;

// Mean softmax cross-entropy plus the l2 penalty on the classifier weights.
// Labels are 1-based class indices.
template <typename S>
TensorPtr<S> loss(Tape<S>& tape, const TensorPtr<S>& logits, const std::vector<int>& labels,
                  const TensorPtr<S>& cls_w, double lambda) {
    std::vector<int> zero_based(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 1 || std::size_t(labels[i]) > logits->dim(1)) {
            fail(ErrCode::invalid, "loss: label " + std::to_string(labels[i]) + " out of range [1," +
                                       std::to_string(logits->dim(1)) + "]");
        }
        zero_based[i] = labels[i] - 1;
    }
    auto ce = softmax_cross_entropy(tape, logits, zero_based);
    if (lambda == 0.0) {
        return ce;
    }
    auto penalty = scale(tape, sum_squares(tape, cls_w), S(lambda));
    return add(tape, ce, penalty);
}

// Bias-corrected Adam (beta1 0.9, beta2 0.999, eps 1e-8), applied in place.
template <typename S>
class Adam {
public:
    explicit Adam(const ModelParams<S>& params) {
        for (const auto& [key, t] : params.tensors) {
            m_[key].assign(t->numel(), S(0));
            v_[key].assign(t->numel(), S(0));
        }
    }

    void step(ModelParams<S>& params, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(kBeta1, double(t_));
        const double bc2 = 1.0 - std::pow(kBeta2, double(t_));
        for (auto& [key, p] : params.tensors) {
            auto& m = m_.at(key);
            auto& v = v_.at(key);
            if (p->grad.size() != p->data.size()) {
                fail(ErrCode::shape, "adam: parameter " + key + " has no gradient");
            }
            for (std::size_t i = 0; i < p->numel(); ++i) {
                const double g = double(p->grad[i]);
                m[i] = S(kBeta1 * double(m[i]) + (1.0 - kBeta1) * g);
                v[i] = S(kBeta2 * double(v[i]) + (1.0 - kBeta2) * g * g);
                const double mhat = double(m[i]) / bc1;
                const double vhat = double(v[i]) / bc2;
                p->data[i] = S(double(p->data[i]) - lr * mhat / (std::sqrt(vhat) + kEps));
            }
        }
    }

    std::uint64_t steps() const { return t_; }

    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

private:
    std::map<std::string, std::vector<S>> m_;
    std::map<std::string, std::vector<S>> v_;
    std::uint64_t t_ = 0;
};

namespace detail {

template <typename S>
int argmax_class(const TensorPtr<S>& logits_row) {
    // ties resolve to the lowest class index
    int best = 0;
    S best_v = logits_row->data[0];
    for (std::size_t j = 1; j < logits_row->numel(); ++j) {
        if (logits_row->data[j] > best_v) {
            best_v = logits_row->data[j];
            best = int(j);
        }
    }
    return best + 1;
}

} // namespace detail

// 1-based predicted labels, one per sample; forward-only and thread-safe.
template <typename S>
std::vector<int> predict_labels(const ModelParams<S>& params, const ModelConfig& cfg,
                                const std::vector<Sample>& samples, int threads = 1) {
    std::vector<int> pred(samples.size());
    parallel_chunks(samples.size(), kGradChunk, threads, [&](std::size_t, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            Tape<S> tape;
            tape.set_recording(false);
            auto logits = forward(tape, params, cfg, samples[i].patch.data());
            if (!all_finite(logits)) {
                fail(ErrCode::numeric, "predict: non-finite logits for sample " + std::to_string(i));
            }
            pred[i] = detail::argmax_class(logits);
        }
    });
    return pred;
}

template <typename S>
Metrics evaluate(const ModelParams<S>& params, const ModelConfig& cfg,
                 const std::vector<Sample>& samples, int threads = 1) {
    if (samples.empty()) {
        fail(ErrCode::invalid, "evaluate: empty sample list");
    }
    const auto pred = predict_labels(params, cfg, samples, threads);
    std::vector<int> truth(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        truth[i] = samples[i].label;
    }
    return compute_metrics(truth, pred, cfg.classes);
}

// Mean cross-entropy over the samples plus the classifier penalty.
template <typename S>
double eval_loss(const ModelParams<S>& params, const ModelConfig& cfg,
                 const std::vector<Sample>& samples, int threads = 1) {
    if (samples.empty()) {
        fail(ErrCode::invalid, "eval_loss: empty sample list");
    }
    const std::size_t n_chunks = chunk_count(samples.size(), kGradChunk);
    std::vector<double> partial(n_chunks, 0.0);
    parallel_chunks(samples.size(), kGradChunk, threads,
                    [&](std::size_t ci, std::size_t b, std::size_t e) {
                        Tape<S> tape;
                        tape.set_recording(false);
                        std::vector<TensorPtr<S>> rows;
                        std::vector<int> labels;
                        for (std::size_t i = b; i < e; ++i) {
                            rows.push_back(forward(tape, params, cfg, samples[i].patch.data()));
                            labels.push_back(samples[i].label - 1);
                        }
                        auto logits = concat_rows(tape, rows);
                        auto ce = softmax_cross_entropy(tape, logits, labels);
                        partial[ci] = double(ce->data[0]) * double(e - b);
                    });
    double total = 0;
    for (double p : partial) {
        total += p;
    }
    double penalty = 0;
    for (const S w : params.at("cls.w")->data) {
        penalty += double(w) * double(w);
    }
    return total / double(samples.size()) + cfg.lambda * penalty;
}

struct EpochRow {
    int epoch = 0;
    double train_loss = 0, train_acc = 0, val_loss = 0, val_acc = 0;
};

template <typename S>
struct FitResult {
    std::vector<EpochRow> log;
    ModelParams<S> best;  // parameters from the epoch with best val accuracy
    int best_epoch = 0;   // 1-based; ties keep the earlier epoch
};

// One epoch: seeded shuffle, fixed-size batches, chunked forward/backward,
// one Adam step per batch. Parameters end at the final epoch state; the best
// validation-accuracy snapshot is returned separately.
template <typename S>
FitResult<S> fit(ModelParams<S>& params, const ModelConfig& cfg,
                 const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                 const TrainConfig& tcfg) {
    tcfg.validate();
    if (train_set.empty() || val_set.empty()) {
        fail(ErrCode::invalid, "fit: train and validation sets must be nonempty");
    }
    Rng shuffle_rng(tcfg.seed);
    Adam<S> adam(params);

    std::vector<std::string> keys;
    for (const auto& [k, t] : params.tensors) {
        keys.push_back(k);
    }

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t(0));

    FitResult<S> res;
    double best_acc = -1.0;
    for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
        if (tcfg.shuffle) {
            shuffle_rng.shuffle(order);
        }
        double loss_sum = 0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < train_set.size(); start += tcfg.batch_size) {
            const std::size_t bsz = std::min(tcfg.batch_size, train_set.size() - start);
            const std::size_t n_chunks = chunk_count(bsz, kGradChunk);
            // per-chunk gradient buffers keyed by parameter order
            std::vector<std::vector<std::vector<S>>> cgrads(n_chunks);
            std::vector<double> closs(n_chunks, 0.0);
            std::vector<std::size_t> ccorrect(n_chunks, 0);
            parallel_chunks(bsz, kGradChunk, tcfg.threads,
                            [&](std::size_t ci, std::size_t b, std::size_t e) {
                                auto local = params.clone();
                                Tape<S> tape;
                                std::vector<TensorPtr<S>> rows;
                                std::vector<int> labels;
                                for (std::size_t i = b; i < e; ++i) {
                                    const Sample& s = train_set[order[start + i]];
                                    rows.push_back(forward(tape, local, cfg, s.patch.data()));
                                    labels.push_back(s.label);
                                }
                                auto logits = concat_rows(tape, rows);
                                std::vector<int> zero_based(labels.size());
                                for (std::size_t i = 0; i < labels.size(); ++i) {
                                    zero_based[i] = labels[i] - 1;
                                }
                                auto ce = softmax_cross_entropy(tape, logits, zero_based);
                                auto scaled = scale(tape, ce, S(double(e - b) / double(bsz)));
                                tape.backward(scaled);
                                closs[ci] = double(scaled->data[0]);
                                const std::size_t k = logits->dim(1);
                                for (std::size_t i = 0; i < labels.size(); ++i) {
                                    std::size_t best = 0;
                                    for (std::size_t j = 1; j < k; ++j) {
                                        if (logits->data[i * k + j] > logits->data[i * k + best]) {
                                            best = j;
                                        }
                                    }
                                    if (int(best) + 1 == labels[i]) {
                                        ++ccorrect[ci];
                                    }
                                }
                                auto& buf = cgrads[ci];
                                buf.reserve(keys.size());
                                for (const auto& k : keys) {
                                    buf.push_back(std::move(local.at(k)->grad));
                                }
                            });
            // merge gradients in chunk order, then the analytic penalty term
            params.zero_grad();
            for (std::size_t ci = 0; ci < n_chunks; ++ci) {
                for (std::size_t pi = 0; pi < keys.size(); ++pi) {
                    auto& dst = params.at(keys[pi])->grad;
                    const auto& src = cgrads[ci][pi];
                    for (std::size_t i = 0; i < dst.size(); ++i) {
                        dst[i] += src[i];
                    }
                }
            }
            double batch_loss = 0;
            for (std::size_t ci = 0; ci < n_chunks; ++ci) {
                batch_loss += closs[ci];
                correct += ccorrect[ci];
            }
            if (cfg.lambda != 0.0) {
                auto& w = params.at("cls.w");
                double penalty = 0;
                for (std::size_t i = 0; i < w->numel(); ++i) {
                    penalty += double(w->data[i]) * double(w->data[i]);
                    w->grad[i] += S(2.0 * cfg.lambda * double(w->data[i]));
                }
                batch_loss += cfg.lambda * penalty;
            }
            if (!std::isfinite(batch_loss)) {
                fail(ErrCode::numeric, "fit: non-finite loss at epoch " + std::to_string(epoch) +
                                           ", batch " + std::to_string(start / tcfg.batch_size));
            }
            loss_sum += batch_loss * double(bsz);
            adam.step(params, tcfg.lr);
        }

        EpochRow row;
        row.epoch = epoch;
        row.train_loss = loss_sum / double(train_set.size());
        row.train_acc = double(correct) / double(train_set.size());
        row.val_loss = eval_loss(params, cfg, val_set, tcfg.threads);
        row.val_acc = evaluate(params, cfg, val_set, tcfg.threads).oa;
        res.log.push_back(row);
        if (row.val_acc > best_acc) {
            best_acc = row.val_acc;
            res.best = params.clone();
            res.best_epoch = epoch;
        }
    }
    return res;
}

} // namespace mm
