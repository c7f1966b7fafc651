#pragma once

#include <cmath>
#include <limits>
#include <tuple>

#include "hsnn/tensor.hpp"

namespace hsnn {

enum class Phase { train, infer };

struct ConvGeometry {
    std::size_t batch, in_ch, in_h, in_w;
    std::size_t out_ch, kernel, out_h, out_w;
    std::size_t stride, pad;
};

template <class T>
ConvGeometry conv_geometry(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
    if (x.ndim() != 4) throw DimensionError("conv2d: input must be B x C x H x W");
    if (w.ndim() != 4) throw DimensionError("conv2d: weight must be O x C x k x k");
    if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
    if (pad < 0) throw DimensionError("conv2d: negative padding");
    if (w.dim(2) != w.dim(3)) throw DimensionError("conv2d: kernel must be square");
    if (w.dim(1) != x.dim(1)) throw DimensionError("conv2d: channel mismatch");
    ConvGeometry g;
    g.batch = x.dim(0);
    g.in_ch = x.dim(1);
    g.in_h = x.dim(2);
    g.in_w = x.dim(3);
    g.out_ch = w.dim(0);
    g.kernel = w.dim(2);
    g.stride = static_cast<std::size_t>(stride);
    g.pad = static_cast<std::size_t>(pad);
    if (g.kernel > g.in_h + 2 * g.pad || g.kernel > g.in_w + 2 * g.pad)
        throw DimensionError("conv2d: kernel larger than padded input");
    g.out_h = (g.in_h + 2 * g.pad - g.kernel) / g.stride + 1;
    g.out_w = (g.in_w + 2 * g.pad - g.kernel) / g.stride + 1;
    return g;
}

// Unpacks one sample into [C*k*k, outH*outW] patch columns (zero padding).
template <class T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
    const std::size_t ohw = g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.in_ch; ++c) {
        const T* xc = x + c * g.in_h * g.in_w;
        for (std::size_t kh = 0; kh < g.kernel; ++kh) {
            for (std::size_t kw = 0; kw < g.kernel; ++kw) {
                T* row = cols + ((c * g.kernel + kh) * g.kernel + kw) * ohw;
                for (std::size_t oh = 0; oh < g.out_h; ++oh) {
                    const std::ptrdiff_t ih =
                        static_cast<std::ptrdiff_t>(oh * g.stride + kh) - static_cast<std::ptrdiff_t>(g.pad);
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) {
                        for (std::size_t ow = 0; ow < g.out_w; ++ow) row[oh * g.out_w + ow] = 0;
                        continue;
                    }
                    for (std::size_t ow = 0; ow < g.out_w; ++ow) {
                        const std::ptrdiff_t iw =
                            static_cast<std::ptrdiff_t>(ow * g.stride + kw) - static_cast<std::ptrdiff_t>(g.pad);
                        row[oh * g.out_w + ow] =
                            (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in_w)) ? T(0) : xc[ih * g.in_w + iw];
                    }
                }
            }
        }
    }
}

// Scatter-adds patch columns back onto the input plane.
template <class T>
void col2im(const T* cols, const ConvGeometry& g, T* x) {
    const std::size_t ohw = g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.in_ch; ++c) {
        T* xc = x + c * g.in_h * g.in_w;
        for (std::size_t kh = 0; kh < g.kernel; ++kh) {
            for (std::size_t kw = 0; kw < g.kernel; ++kw) {
                const T* row = cols + ((c * g.kernel + kh) * g.kernel + kw) * ohw;
                for (std::size_t oh = 0; oh < g.out_h; ++oh) {
                    const std::ptrdiff_t ih =
                        static_cast<std::ptrdiff_t>(oh * g.stride + kh) - static_cast<std::ptrdiff_t>(g.pad);
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
                    for (std::size_t ow = 0; ow < g.out_w; ++ow) {
                        const std::ptrdiff_t iw =
                            static_cast<std::ptrdiff_t>(ow * g.stride + kw) - static_cast<std::ptrdiff_t>(g.pad);
                        if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
                        xc[ih * g.in_w + iw] += row[oh * g.out_w + ow];
                    }
                }
            }
        }
    }
}

// Cross-correlation, zero padding, floor geometry:
// out = (in + 2*pad - k) / stride + 1.
template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                         int stride, int pad) {
    ConvGeometry g = conv_geometry(x, w, stride, pad);
    if (bias.size() != g.out_ch) throw DimensionError("conv2d: bias size != out channels");
    const std::size_t ohw = g.out_h * g.out_w;
    const std::size_t patch = g.in_ch * g.kernel * g.kernel;
    Tensor<T> y({g.batch, g.out_ch, g.out_h, g.out_w});
    const Tensor<T> wmat = w.reshaped({g.out_ch, patch});
    parallel_for(g.batch, [&](std::size_t b) {
        Tensor<T> cols({patch, ohw});
        im2col(x.data() + b * g.in_ch * g.in_h * g.in_w, g, cols.data());
        Tensor<T> yb = matmul(wmat, cols);
        T* dst = y.data() + b * g.out_ch * ohw;
        for (std::size_t o = 0; o < g.out_ch; ++o)
            for (std::size_t i = 0; i < ohw; ++i) dst[o * ohw + i] = yb[o * ohw + i] + bias[o];
    });
    return y;
}

// Gradients of conv2d_forward w.r.t. input, weights and bias.
template <class T>
std::tuple<Tensor<T>, Tensor<T>, Tensor<T>> conv2d_backward(const Tensor<T>& grad_y,
                                                            const Tensor<T>& x,
                                                            const Tensor<T>& w,
                                                            int stride, int pad) {
    ConvGeometry g = conv_geometry(x, w, stride, pad);
    if (grad_y.ndim() != 4 || grad_y.dim(0) != g.batch || grad_y.dim(1) != g.out_ch ||
        grad_y.dim(2) != g.out_h || grad_y.dim(3) != g.out_w)
        throw DimensionError("conv2d_backward: grad shape inconsistent with forward");
    const std::size_t ohw = g.out_h * g.out_w;
    const std::size_t patch = g.in_ch * g.kernel * g.kernel;
    const Tensor<T> wmat = w.reshaped({g.out_ch, patch});

    Tensor<T> grad_x({g.batch, g.in_ch, g.in_h, g.in_w});
    Tensor<T> grad_w({g.out_ch, g.in_ch, g.kernel, g.kernel});
    Tensor<T> grad_b({g.out_ch});

    // batch-serial accumulation keeps grad_w/grad_b summation order fixed
    for (std::size_t b = 0; b < g.batch; ++b) {
        Tensor<T> cols({patch, ohw});
        im2col(x.data() + b * g.in_ch * g.in_h * g.in_w, g, cols.data());
        Tensor<T> gy({g.out_ch, ohw});
        std::copy_n(grad_y.data() + b * g.out_ch * ohw, g.out_ch * ohw, gy.data());

        Tensor<T> gw = matmul_nt(gy, cols);  // [O, patch]
        for (std::size_t i = 0; i < gw.size(); ++i) grad_w[i] += gw[i];
        for (std::size_t o = 0; o < g.out_ch; ++o) {
            T acc = 0;
            for (std::size_t i = 0; i < ohw; ++i) acc += gy[o * ohw + i];
            grad_b[o] += acc;
        }
        Tensor<T> gcols = matmul_tn(wmat, gy);  // [patch, ohw]
        col2im(gcols.data(), g, grad_x.data() + b * g.in_ch * g.in_h * g.in_w);
    }
    return {std::move(grad_x), std::move(grad_w), std::move(grad_b)};
}

// Window maxima plus the flat argmax map the backward pass routes into.
// Ties resolve to the first position in row-major scan order.
template <class T>
std::pair<Tensor<T>, std::vector<std::size_t>> maxpool2d(const Tensor<T>& x, int k, int s) {
    if (x.ndim() != 4) throw DimensionError("maxpool2d: input must be B x C x H x W");
    if (k < 1 || s < 1) throw DimensionError("maxpool2d: window and stride must be >= 1");
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t kk = static_cast<std::size_t>(k), ss = static_cast<std::size_t>(s);
    if (kk > H || kk > W) throw DimensionError("maxpool2d: window larger than input");
    const std::size_t OH = (H - kk) / ss + 1, OW = (W - kk) / ss + 1;
    Tensor<T> y({B, C, OH, OW});
    std::vector<std::size_t> argmax(y.size());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            const T* plane = x.data() + (b * C + c) * H * W;
            const std::size_t plane_off = (b * C + c) * H * W;
            for (std::size_t oh = 0; oh < OH; ++oh)
                for (std::size_t ow = 0; ow < OW; ++ow) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::size_t best_idx = 0;
                    for (std::size_t ih = oh * ss; ih < oh * ss + kk; ++ih)
                        for (std::size_t iw = ow * ss; iw < ow * ss + kk; ++iw) {
                            const T v = plane[ih * W + iw];
                            if (v > best) {
                                best = v;
                                best_idx = ih * W + iw;
                            }
                        }
                    const std::size_t oi = ((b * C + c) * OH + oh) * OW + ow;
                    y[oi] = best;
                    argmax[oi] = plane_off + best_idx;
                }
        }
    return {std::move(y), std::move(argmax)};
}

template <class T>
Tensor<T> maxpool2d_backward(const Tensor<T>& grad_y, const std::vector<std::size_t>& argmax,
                             const std::vector<std::size_t>& input_shape) {
    if (grad_y.size() != argmax.size())
        throw DimensionError("maxpool2d_backward: grad/argmax size mismatch");
    Tensor<T> grad_x(input_shape);
    for (std::size_t i = 0; i < argmax.size(); ++i) grad_x[argmax[i]] += grad_y[i];
    return grad_x;
}

template <class T>
struct BatchNormCache {
    Tensor<T> xhat;
    std::vector<T> mean, inv_std;
    bool train_phase = false;
};

// Channel axis is dim 1; 2-D inputs normalize per feature.
template <class T>
inline std::pair<std::size_t, std::size_t> bn_layout(const Tensor<T>& x) {
    if (x.ndim() < 2) throw DimensionError("batchnorm: input needs a channel axis");
    const std::size_t C = x.dim(1);
    std::size_t inner = 1;
    for (std::size_t d = 2; d < x.ndim(); ++d) inner *= x.dim(d);
    return {C, inner};
}

// Training phase normalizes with batch statistics (biased variance) and
// folds them into the running stats: run = momentum*batch + (1-m)*run.
template <class T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                            Tensor<T>& running_mean, Tensor<T>& running_var, Phase phase,
                            T momentum, T eps, BatchNormCache<T>* cache = nullptr,
                            bool update_running = true) {
    auto [C, inner] = bn_layout(x);
    const std::size_t B = x.dim(0);
    if (B == 0) throw DimensionError("batchnorm: zero batch size");
    if (eps <= T(0)) throw DimensionError("batchnorm: eps must be positive");
    if (gamma.size() != C || beta.size() != C || running_mean.size() != C || running_var.size() != C)
        throw DimensionError("batchnorm: parameter size != channels");

    const std::size_t n_per_ch = B * inner;
    Tensor<T> y(x.shape());
    std::vector<T> mean(C), inv_std(C);

    for (std::size_t c = 0; c < C; ++c) {
        T m, v;
        if (phase == Phase::train) {
            T sum = 0, sq = 0;
            for (std::size_t b = 0; b < B; ++b) {
                const T* p = x.data() + (b * C + c) * inner;
                for (std::size_t i = 0; i < inner; ++i) {
                    sum += p[i];
                    sq += p[i] * p[i];
                }
            }
            m = sum / static_cast<T>(n_per_ch);
            v = sq / static_cast<T>(n_per_ch) - m * m;
            if (v < T(0)) v = T(0);
            if (update_running) {
                running_mean[c] = momentum * m + (T(1) - momentum) * running_mean[c];
                running_var[c] = momentum * v + (T(1) - momentum) * running_var[c];
            }
        } else {
            m = running_mean[c];
            v = running_var[c];
        }
        mean[c] = m;
        inv_std[c] = T(1) / std::sqrt(v + eps);
    }

    Tensor<T> xhat(x.shape());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            const T* p = x.data() + (b * C + c) * inner;
            T* ph = xhat.data() + (b * C + c) * inner;
            T* py = y.data() + (b * C + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
                ph[i] = (p[i] - mean[c]) * inv_std[c];
                py[i] = gamma[c] * ph[i] + beta[c];
            }
        }

    if (cache) {
        cache->xhat = std::move(xhat);
        cache->mean = std::move(mean);
        cache->inv_std = std::move(inv_std);
        cache->train_phase = (phase == Phase::train);
    }
    return y;
}

// Exact gradients of the training-phase forward map.
template <class T>
std::tuple<Tensor<T>, Tensor<T>, Tensor<T>> batchnorm_backward(const Tensor<T>& grad_y,
                                                               const Tensor<T>& gamma,
                                                               const BatchNormCache<T>& cache) {
    if (!cache.train_phase)
        throw DimensionError("batchnorm_backward: cache is not from a training-phase forward");
    auto [C, inner] = bn_layout(grad_y);
    const std::size_t B = grad_y.dim(0);
    const T n = static_cast<T>(B * inner);

    Tensor<T> grad_x(grad_y.shape());
    Tensor<T> grad_gamma({C});
    Tensor<T> grad_beta({C});

    for (std::size_t c = 0; c < C; ++c) {
        T sum_dy = 0, sum_dy_xhat = 0;
        for (std::size_t b = 0; b < B; ++b) {
            const T* dy = grad_y.data() + (b * C + c) * inner;
            const T* xh = cache.xhat.data() + (b * C + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
                sum_dy += dy[i];
                sum_dy_xhat += dy[i] * xh[i];
            }
        }
        grad_beta[c] = sum_dy;
        grad_gamma[c] = sum_dy_xhat;
        const T k1 = gamma[c] * cache.inv_std[c];
        for (std::size_t b = 0; b < B; ++b) {
            const T* dy = grad_y.data() + (b * C + c) * inner;
            const T* xh = cache.xhat.data() + (b * C + c) * inner;
            T* dx = grad_x.data() + (b * C + c) * inner;
            for (std::size_t i = 0; i < inner; ++i)
                dx[i] = k1 * (dy[i] - sum_dy / n - xh[i] * sum_dy_xhat / n);
        }
    }
    return {std::move(grad_x), std::move(grad_gamma), std::move(grad_beta)};
}

// i.i.d. uniform samples in [-sqrt(6/fan_in), +sqrt(6/fan_in)].
template <class T>
Tensor<T> kaiming_uniform_init(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
    if (fan_in == 0) throw DimensionError("kaiming_uniform_init: fan_in must be >= 1");
    Tensor<T> out(std::move(shape));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<T>(rng.uniform(-bound, bound));
    return out;
}

}  // namespace hsnn
