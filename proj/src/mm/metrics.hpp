#pragma once

#include <cstdint>
#include <vector>

namespace mm {

// Confusion-matrix derived scores. Rows index the true class, columns the
// predicted class, both 0-based internally for classes 1..K.
struct Metrics {
    std::size_t classes = 0;
    std::vector<std::uint64_t> confusion; // classes x classes
    double oa = 0.0;
    double aa = 0.0;
    double kappa = 0.0;
    bool kappa_degenerate = false;        // expected agreement was 1
    std::vector<int> aa_excluded;         // classes with no true samples (1-based)

    std::uint64_t total() const;
};

Metrics metrics_from_confusion(std::vector<std::uint64_t> confusion, std::size_t classes);

// truth/pred carry 1-based class indices.
Metrics compute_metrics(const std::vector<int>& truth, const std::vector<int>& pred,
                        std::size_t classes);

} // namespace mm
