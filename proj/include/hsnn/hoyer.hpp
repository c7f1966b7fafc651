#pragma once

#include <cmath>

#include "hsnn/tensor.hpp"

namespace hsnn {

enum class ExtremumMode { tensor_wise, channel_wise };

// Sentinel returned for an all-zero reduction group, where the extremum
// is undefined. Callers map it to their fallback threshold.
inline constexpr double kUndefinedExtremum = -1.0;

template <class T>
bool extremum_defined(T v) {
    return v >= T(0);
}

// H(u) = (|u|_1 / |u|_2)^2, with H(0) := 0.
// Scale-invariant; for u != 0 it lies in [1, N].
template <class T>
T hoyer_square(const Tensor<T>& u) {
    T l1 = 0, l2sq = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        l1 += std::abs(u[i]);
        l2sq += u[i] * u[i];
    }
    if (l2sq == T(0)) return T(0);
    return l1 * l1 / l2sq;
}

// Elementwise gradient of hoyer_square:
//   g_i = 2 sign(u_i) (|u|_1 / |u|_2^4) (|u|_2^2 - |u|_1 |u_i|)
// with sign(0) = 0 and gradient 0 at the zero tensor.
template <class T>
Tensor<T> hoyer_grad(const Tensor<T>& u) {
    T l1 = 0, l2sq = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        l1 += std::abs(u[i]);
        l2sq += u[i] * u[i];
    }
    Tensor<T> g(u.shape());
    if (l2sq == T(0)) return g;
    const T coeff = T(2) * l1 / (l2sq * l2sq);
    for (std::size_t i = 0; i < u.size(); ++i) {
        const T s = (u[i] > T(0)) ? T(1) : (u[i] < T(0) ? T(-1) : T(0));
        g[i] = coeff * s * (l2sq - l1 * std::abs(u[i]));
    }
    return g;
}

// Ext(u) = |u|_2^2 / |u|_1, the stationary point of H.
// tensor_wise: one value over all elements (vector of size 1).
// channel_wise: one value per dim-1 channel, pooling batch and spatial axes.
// All-zero groups yield the undefined sentinel.
template <class T>
std::vector<T> hoyer_extremum(const Tensor<T>& u, ExtremumMode mode) {
    if (mode == ExtremumMode::tensor_wise) {
        T l1 = 0, l2sq = 0;
        for (std::size_t i = 0; i < u.size(); ++i) {
            l1 += std::abs(u[i]);
            l2sq += u[i] * u[i];
        }
        return {l1 == T(0) ? static_cast<T>(kUndefinedExtremum) : l2sq / l1};
    }
    if (u.ndim() < 2)
        throw DimensionError("hoyer_extremum: channel_wise requires a channel axis");
    const std::size_t B = u.dim(0), C = u.dim(1);
    std::size_t inner = 1;
    for (std::size_t d = 2; d < u.ndim(); ++d) inner *= u.dim(d);
    std::vector<T> l1(C, T(0)), l2sq(C, T(0));
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            const T* p = u.data() + (b * C + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
                l1[c] += std::abs(p[i]);
                l2sq[c] += p[i] * p[i];
            }
        }
    std::vector<T> ext(C);
    for (std::size_t c = 0; c < C; ++c)
        ext[c] = (l1[c] == T(0)) ? static_cast<T>(kUndefinedExtremum) : l2sq[c] / l1[c];
    return ext;
}

// Elementwise clamp to [0, 1].
template <class T>
Tensor<T> clip_unit(const Tensor<T>& z) {
    Tensor<T> out(z.shape());
    for (std::size_t i = 0; i < z.size(); ++i)
        out[i] = z[i] > T(1) ? T(1) : (z[i] < T(0) ? T(0) : z[i]);
    return out;
}

}  // namespace hsnn
