#pragma once

#include <cmath>

#include "hsnn/tensor.hpp"

namespace hsnn {

inline void validate_quant_bits(int bits) {
    if (bits < 2 || bits > 6)
        throw DimensionError("quantize: bits must be in [2, 6]");
}

// Symmetric uniform quantization on a per-layer max-abs grid:
//   s = max|w|, L = 2^(bits-1) - 1, w_q = round(w/s * L)/L * s.
// The grid has at most 2^bits - 1 distinct values and 0 maps to 0.
// An all-zero tensor passes through with scale 0.
template <class T>
std::pair<Tensor<T>, T> quantize_weights(const Tensor<T>& w, int bits) {
    validate_quant_bits(bits);
    T s = 0;
    for (std::size_t i = 0; i < w.size(); ++i) s = std::max(s, std::abs(w[i]));
    if (s == T(0)) return {w, T(0)};
    const T levels = static_cast<T>((1 << (bits - 1)) - 1);
    Tensor<T> wq(w.shape());
    for (std::size_t i = 0; i < w.size(); ++i)
        wq[i] = std::round(w[i] / s * levels) / levels * s;
    return {std::move(wq), s};
}

}  // namespace hsnn
