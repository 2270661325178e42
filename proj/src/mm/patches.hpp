#pragma once

#include <cstdint>
#include <vector>

#include "mm/cube.hpp"

namespace mm {

// One P x P x C' patch (pixel-major, band-minor) with its class label and the
// source pixel of its center.
struct Sample {
    std::vector<float> patch;
    int label = 0; // 1-based class index
    std::size_t row = 0;
    std::size_t col = 0;
};

enum class PatchMode { per_pixel, tile };

struct SplitSpec {
    double train = 0.2;
    double val = 0.3;
    double test = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
};

// per_pixel: one sample centered on every labeled pixel, mirror padding at the
// borders; even P centers the pixel at patch index (P/2-1, P/2-1).
// tile: non-overlapping P x P tiles labeled by majority vote, unlabeled tiles
// dropped.
std::vector<Sample> extract_patches(const HsiCube& cube, std::size_t patch, PatchMode mode);

struct SplitResult {
    std::vector<Sample> train;
    std::vector<Sample> val;
    std::vector<Sample> test;
};

// Per class: seeded shuffle, ceil(n*train) to train, then the remainder split
// by the renormalized val:test ratio (ceiling on val).
SplitResult stratified_split(const std::vector<Sample>& samples, int class_count,
                             const SplitSpec& spec);

} // namespace mm
