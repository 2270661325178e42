#pragma once

#include <string>

#include "mm/runconfig.hpp"

namespace mm {

// Command drivers shared by the C API and the CLI. Each returns the
// single-line JSON the command prints; file artifacts are written as
// side effects. Errors carry the failing stage in their message.
std::string run_gen_data(const RunConfig& cfg);
std::string run_train(const RunConfig& cfg);
std::string run_eval(const RunConfig& cfg);
std::string run_predict_map(const RunConfig& cfg);
std::string run_ablate(const RunConfig& cfg);

// Fixed 16-color class palette used by predict-map (class 1 = entry 0,
// wrapping for class counts above 16); unlabeled pixels are black.
extern const unsigned char kClassPalette[16][3];

} // namespace mm
