#include "mm/metrics.hpp"

#include <cmath>

#include "mm/error.hpp"

namespace mm {

std::uint64_t Metrics::total() const {
    std::uint64_t n = 0;
    for (auto v : confusion) {
        n += v;
    }
    return n;
}

Metrics metrics_from_confusion(std::vector<std::uint64_t> confusion, std::size_t classes) {
    if (classes == 0 || confusion.size() != classes * classes) {
        fail(ErrCode::shape, "metrics: confusion matrix must be KxK");
    }
    Metrics m;
    m.classes = classes;
    m.confusion = std::move(confusion);
    const std::uint64_t n = m.total();
    if (n == 0) {
        fail(ErrCode::invalid, "metrics: empty confusion matrix");
    }

    std::uint64_t diag = 0;
    std::vector<std::uint64_t> row(classes, 0), col(classes, 0);
    for (std::size_t i = 0; i < classes; ++i) {
        diag += m.confusion[i * classes + i];
        for (std::size_t j = 0; j < classes; ++j) {
            row[i] += m.confusion[i * classes + j];
            col[j] += m.confusion[i * classes + j];
        }
    }
    m.oa = double(diag) / double(n);

    double recall_sum = 0;
    std::size_t defined = 0;
    for (std::size_t i = 0; i < classes; ++i) {
        if (row[i] == 0) {
            m.aa_excluded.push_back(int(i) + 1);
            continue;
        }
        recall_sum += double(m.confusion[i * classes + i]) / double(row[i]);
        ++defined;
    }
    m.aa = defined > 0 ? recall_sum / double(defined) : 0.0;

    double pe = 0;
    for (std::size_t i = 0; i < classes; ++i) {
        pe += double(row[i]) * double(col[i]);
    }
    pe /= double(n) * double(n);
    if (1.0 - pe < 1e-12) {
        m.kappa_degenerate = true;
        m.kappa = std::abs(m.oa - 1.0) < 1e-12 ? 1.0 : 0.0;
    } else {
        m.kappa = (m.oa - pe) / (1.0 - pe);
    }
    return m;
}

Metrics compute_metrics(const std::vector<int>& truth, const std::vector<int>& pred,
                        std::size_t classes) {
    if (truth.empty() || truth.size() != pred.size()) {
        fail(ErrCode::invalid, "metrics: need equally sized, nonempty truth and prediction lists");
    }
    std::vector<std::uint64_t> confusion(classes * classes, 0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const int t = truth[i], p = pred[i];
        if (t < 1 || std::size_t(t) > classes || p < 1 || std::size_t(p) > classes) {
            fail(ErrCode::invalid, "metrics: class index out of range [1," + std::to_string(classes) +
                                       "]");
        }
        ++confusion[std::size_t(t - 1) * classes + std::size_t(p - 1)];
    }
    return metrics_from_confusion(std::move(confusion), classes);
}

} // namespace mm
