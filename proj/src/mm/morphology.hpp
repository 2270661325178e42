#pragma once

#include "mm/tensor.hpp"

namespace mm {

// Grayscale dilation with an additive structuring element; out-of-bounds
// window positions are excluded from the max.
template <typename S>
TensorPtr<S> dilate(Tape<S>& tape, const TensorPtr<S>& x, const TensorPtr<S>& se) {
    return windowed_max(tape, x, se);
}

// Erosion via the sign-inversion identity: min(x(i) - se) == -max(-x(i) + se).
template <typename S>
TensorPtr<S> erode(Tape<S>& tape, const TensorPtr<S>& x, const TensorPtr<S>& se) {
    return neg(tape, windowed_max(tape, neg(tape, x), se));
}

// Parameters of one token generator branch. se is null for the plain
// (no-morphology) variant, which convolves the raw arrangement directly.
template <typename S>
struct TokenBranch {
    TensorPtr<S> se;     // C x kh x kw, or null
    TensorPtr<S> dw_w;   // (2C or C) x kh x kw
    TensorPtr<S> dw_b;
    TensorPtr<S> pw_w;   // D x (2C or C)
    TensorPtr<S> pw_b;   // D
};

namespace detail {

template <typename S>
TensorPtr<S> token_pipeline(Tape<S>& tape, const TensorPtr<S>& x, const TokenBranch<S>& br) {
    TensorPtr<S> mixed = x;
    if (br.se) {
        auto eroded = erode(tape, x, br.se);
        auto dilated = dilate(tape, x, br.se);
        mixed = concat_channels(tape, eroded, dilated);
    }
    auto dw = depthwise_conv2d(tape, mixed, br.dw_w, br.dw_b);
    auto pw = pointwise_conv(tape, dw, br.pw_w, br.pw_b);
    return rows_from_chw(tape, pw); // one token per spatial position
}

} // namespace detail

// patch [C' x P x P] -> [P^2 x D] tokens, row-major pixel order.
template <typename S>
TensorPtr<S> spatial_tokens(Tape<S>& tape, const TensorPtr<S>& patch, const TokenBranch<S>& br) {
    return detail::token_pipeline(tape, patch, br);
}

// patch [C' x P x P] -> [C' x D] tokens in band order. Each spatial position
// becomes a channel and the band axis becomes the 1-D "spatial" axis, so the
// branch kernels are k x 1.
template <typename S>
TensorPtr<S> spectral_tokens(Tape<S>& tape, const TensorPtr<S>& patch, const TokenBranch<S>& br) {
    const std::size_t c = patch->dim(0), p2 = patch->dim(1) * patch->dim(2);
    auto transposed = rows_from_chw(tape, patch);             // [P^2 x C']
    auto banded = reshape(tape, transposed, {p2, c, std::size_t(1)});
    return detail::token_pipeline(tape, banded, br);          // [C' x D]
}

} // namespace mm
