#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mm {

// H x W x C reflectance volume with an H x W label map (0 = unlabeled).
// Reflectance is stored pixel-major, band-minor, matching the on-disk layout.
struct HsiCube {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t bands = 0;
    int class_count = 0;
    std::vector<float> reflectance;       // height*width*bands
    std::vector<std::uint16_t> labels;    // height*width, row-major
    std::vector<float> wavelengths;       // empty or size == bands

    float at(std::size_t r, std::size_t c, std::size_t b) const {
        return reflectance[(r * width + c) * bands + b];
    }
    float& at(std::size_t r, std::size_t c, std::size_t b) {
        return reflectance[(r * width + c) * bands + b];
    }
    std::uint16_t label_at(std::size_t r, std::size_t c) const { return labels[r * width + c]; }

    std::size_t labeled_count() const;
    void validate() const; // label range, finiteness, class coverage
};

struct SynthSpec {
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t bands = 16;
    int classes = 4;
    double noise_sigma = 0.05;
    std::uint64_t seed = 0;
};

// Deterministic synthetic cube: each class has a smooth two-Gaussian spectral
// signature and occupies a contiguous spatial block; block seams are left
// unlabeled.
HsiCube synth_cube(const SynthSpec& spec);

// Keep `count` bands at evenly spaced indices round(i*(C-1)/(count-1)).
HsiCube select_bands(const HsiCube& cube, std::size_t count);

// Per-band z-score over all pixels (population sd); constant bands map to 0.
HsiCube normalize(const HsiCube& cube);

// .hsic + sidecar .labels files (see README for the byte layout).
void save_cube(const HsiCube& cube, const std::string& path);
HsiCube load_cube(const std::string& path);

// data.hsic -> data.labels
std::string labels_path_for(const std::string& cube_path);

} // namespace mm
