#include "mm/patches.hpp"

#include <algorithm>
#include <cmath>

#include "mm/error.hpp"
#include "mm/rng.hpp"

namespace mm {

namespace {

// symmetric (edge-inclusive) reflection: -1 -> 0, n -> n-1
std::size_t mirror_index(std::ptrdiff_t i, std::size_t n) {
    const std::ptrdiff_t sn = std::ptrdiff_t(n);
    while (i < 0 || i >= sn) {
        if (i < 0) {
            i = -i - 1;
        }
        if (i >= sn) {
            i = 2 * sn - 1 - i;
        }
    }
    return std::size_t(i);
}

// patch-local index of the center pixel: (P-1)/2 for odd P, P/2-1 for even P
std::size_t center_offset(std::size_t patch) {
    return patch % 2 == 1 ? (patch - 1) / 2 : patch / 2 - 1;
}

Sample cut_patch(const HsiCube& cube, std::size_t r, std::size_t c, std::size_t patch, int label) {
    const std::size_t off = center_offset(patch);
    Sample s;
    s.label = label;
    s.row = r;
    s.col = c;
    s.patch.resize(patch * patch * cube.bands);
    for (std::size_t pr = 0; pr < patch; ++pr) {
        const std::size_t sr = mirror_index(std::ptrdiff_t(r) + std::ptrdiff_t(pr) - std::ptrdiff_t(off),
                                            cube.height);
        for (std::size_t pc = 0; pc < patch; ++pc) {
            const std::size_t sc =
                mirror_index(std::ptrdiff_t(c) + std::ptrdiff_t(pc) - std::ptrdiff_t(off), cube.width);
            const float* src = &cube.reflectance[(sr * cube.width + sc) * cube.bands];
            std::copy_n(src, cube.bands, &s.patch[(pr * patch + pc) * cube.bands]);
        }
    }
    return s;
}

} // namespace

void SplitSpec::validate() const {
    if (train <= 0 || val <= 0 || test <= 0) {
        fail(ErrCode::config, "split: ratios must be positive");
    }
    if (std::abs(train + val + test - 1.0) > 1e-9) {
        fail(ErrCode::config, "split: ratios must sum to 1");
    }
}

std::vector<Sample> extract_patches(const HsiCube& cube, std::size_t patch, PatchMode mode) {
    if (patch < 2) {
        fail(ErrCode::config, "extract_patches: patch size must be >= 2");
    }
    if (patch > std::min(cube.height, cube.width)) {
        fail(ErrCode::config, "extract_patches: patch " + std::to_string(patch) +
                                  " exceeds cube extent " + std::to_string(cube.height) + "x" +
                                  std::to_string(cube.width));
    }
    std::vector<Sample> out;
    if (mode == PatchMode::per_pixel) {
        out.reserve(cube.labeled_count());
        for (std::size_t r = 0; r < cube.height; ++r) {
            for (std::size_t c = 0; c < cube.width; ++c) {
                const int label = cube.label_at(r, c);
                if (label != 0) {
                    out.push_back(cut_patch(cube, r, c, patch, label));
                }
            }
        }
        return out;
    }
    // tile mode: majority label per tile, ties to the lowest class index
    const std::size_t tr = cube.height / patch, tc = cube.width / patch;
    const std::size_t off = center_offset(patch);
    for (std::size_t ty = 0; ty < tr; ++ty) {
        for (std::size_t tx = 0; tx < tc; ++tx) {
            std::vector<std::size_t> counts(std::size_t(cube.class_count) + 1, 0);
            for (std::size_t pr = 0; pr < patch; ++pr) {
                for (std::size_t pc = 0; pc < patch; ++pc) {
                    ++counts[cube.label_at(ty * patch + pr, tx * patch + pc)];
                }
            }
            int best = 0;
            std::size_t best_n = 0;
            for (int k = 1; k <= cube.class_count; ++k) {
                if (counts[std::size_t(k)] > best_n) {
                    best_n = counts[std::size_t(k)];
                    best = k;
                }
            }
            if (best == 0) {
                continue; // no labeled pixel in this tile
            }
            out.push_back(cut_patch(cube, ty * patch + off, tx * patch + off, patch, best));
        }
    }
    return out;
}

SplitResult stratified_split(const std::vector<Sample>& samples, int class_count,
                             const SplitSpec& spec) {
    spec.validate();
    std::vector<std::vector<std::size_t>> by_class(std::size_t(class_count) + 1);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const int label = samples[i].label;
        if (label < 1 || label > class_count) {
            fail(ErrCode::invalid, "split: sample label " + std::to_string(label) + " out of range");
        }
        by_class[std::size_t(label)].push_back(i);
    }
    for (int k = 1; k <= class_count; ++k) {
        if (by_class[std::size_t(k)].size() < 10) {
            fail(ErrCode::config, "split: class " + std::to_string(k) + " has only " +
                                      std::to_string(by_class[std::size_t(k)].size()) +
                                      " samples (need >= 10)");
        }
    }
    Rng rng(spec.seed);
    SplitResult res;
    for (int k = 1; k <= class_count; ++k) {
        auto& idx = by_class[std::size_t(k)];
        rng.shuffle(idx);
        const std::size_t n = idx.size();
        const std::size_t n_train = std::size_t(std::ceil(double(n) * spec.train - 1e-12));
        const std::size_t rest = n - n_train;
        const std::size_t n_val =
            std::size_t(std::ceil(double(rest) * spec.val / (spec.val + spec.test) - 1e-12));
        for (std::size_t i = 0; i < n; ++i) {
            const Sample& s = samples[idx[i]];
            if (i < n_train) {
                res.train.push_back(s);
            } else if (i < n_train + n_val) {
                res.val.push_back(s);
            } else {
                res.test.push_back(s);
            }
        }
    }
    return res;
}

} // namespace mm
